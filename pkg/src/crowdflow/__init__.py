"""crowdflow: run controlled crowdsourcing experiments and measure the
biases you get without the controls.

Workflow DAGs of crowd tasks execute over a pluggable platform adapter
(seeded marketplace simulator included) with eligibility, quota, and
schedule admission gates; every run is an append-only, replayable event
log that the analytics turn into a bias report.
"""
from .analytics import BiasReport, bias_report, crossover_rate, concentration, returning_rate
from .eligibility import (
    Design,
    EligibilityDecision,
    EligibilityPolicy,
    ParticipationLedger,
    Reason,
    ReturningRule,
    WorkerRegistry,
    check_eligibility,
)
from .engine import Engine
from .events import EventKind, RunEvent, decode_log, encode_log
from .lambdas import apply_lambda, majority_vote
from .model import (
    SINK,
    SOURCE,
    UNRESOLVED,
    DataUnit,
    Edge,
    ExperimentGroup,
    JudgedUnit,
    LabeledCollection,
    LambdaSpec,
    PopulationFilter,
    Question,
    TaskNode,
    Workflow,
)
from .orchestrator import Run
from .population import QuotaLedger, QuotaSpec
from .scheduling import (
    Action,
    Cause,
    RecurringTemplate,
    RunLifecycle,
    RunState,
    Schedule,
    Window,
    is_open,
    next_transition,
    transition,
)
from .workflows import (
    Violation,
    parse_workflow,
    serialize,
    topological_stages,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BiasReport",
    "Cause",
    "DataUnit",
    "Design",
    "Edge",
    "EligibilityDecision",
    "EligibilityPolicy",
    "Engine",
    "EventKind",
    "ExperimentGroup",
    "JudgedUnit",
    "LabeledCollection",
    "LambdaSpec",
    "ParticipationLedger",
    "PopulationFilter",
    "Question",
    "QuotaLedger",
    "QuotaSpec",
    "Reason",
    "RecurringTemplate",
    "ReturningRule",
    "Run",
    "RunEvent",
    "RunLifecycle",
    "RunState",
    "SINK",
    "SOURCE",
    "Schedule",
    "TaskNode",
    "UNRESOLVED",
    "Violation",
    "Window",
    "WorkerRegistry",
    "Workflow",
    "apply_lambda",
    "bias_report",
    "check_eligibility",
    "concentration",
    "crossover_rate",
    "decode_log",
    "encode_log",
    "is_open",
    "majority_vote",
    "next_transition",
    "parse_workflow",
    "returning_rate",
    "serialize",
    "topological_stages",
    "transition",
    "validate",
]
