"""
Admission controls: eligibility, quotas, time windows
=====================================================

The three gates that separate a controlled experiment from an open call:
who may enter (per experimental design), how much any demographic may
contribute, and when work may happen.
"""
from datetime import date, datetime, timedelta, timezone

from crowdflow import (
    Design,
    EligibilityPolicy,
    ParticipationLedger,
    QuotaLedger,
    QuotaSpec,
    RecurringTemplate,
    ReturningRule,
    Schedule,
    check_eligibility,
    is_open,
    next_transition,
)
from crowdflow.eligibility import WorkerRecord
from crowdflow.scenarios import chain_workflow

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)
wf = chain_workflow(n_tasks=4, n_groups=2, n_units=10)
node_g1, node_g2 = wf.nodes[0], wf.nodes[2]  # first node of each condition

worker = WorkerRecord("c1", {("sim", "w1")}, set(), "VE", 0.9, T0)
ledger = ParticipationLedger()
policy = EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.ALLOW_SAME_GROUP)
groups = frozenset(n.group_id for n in wf.nodes)

# Fresh worker: welcome.
d = check_eligibility(worker, node_g1, policy, ledger, "demo", groups)
print("fresh worker:", d.verdict, d.reason.value)

# After judging in condition g1, a g2 task is a condition crossover.
ledger.grant("c1", node_g1.node_id, "demo")
ledger.record_participation("c1", node_g1.node_id, "g1", "demo", T0)
d = check_eligibility(worker, node_g2, policy, ledger, "demo", groups)
print("crossover attempt:", d.verdict, d.reason.value)

# Same-group return is fine under ALLOW_SAME_GROUP.
d = check_eligibility(worker, wf.nodes[1], policy, ledger, "demo", groups)
print("same-group return:", d.verdict, d.reason.value)

# Quotas: hard per-country caps against the fixed run target.
quota = QuotaLedger(QuotaSpec("country", cap_fraction=0.15, scope="demo"), target_total=100)
granted = 0
while True:
    res = quota.admit("VE", T0)
    if res is None:
        break
    quota.commit(res.reservation_id)
    granted += 1
print(f"VE granted {granted} of 100 judgments at cap 0.15")

# Reservations expire: an admitted worker who never submits hands the
# slot back after the TTL. Cap 0.02 of 50 leaves exactly one slot.
quota2 = QuotaLedger(QuotaSpec("country", 0.02, "demo", ttl_minutes=30), target_total=50)
res = quota2.admit("EG", T0)
print("slot held:", quota2.admit("EG", T0) is None)
released = quota2.release_expired(T0 + timedelta(minutes=31))
print("released after TTL:", released, "-> next admit:", quota2.admit("EG", T0 + timedelta(minutes=32)) is not None)

# Schedules: half-open windows, or a recurring weekly template.
sched = Schedule(recurring=RecurringTemplate(
    days=(0, 2, 4), start_hour=9, end_hour=13,
    from_date=date(2021, 3, 1), to_date=date(2021, 3, 28),
))
probe = T0 + timedelta(days=1, hours=10)  # Tuesday 10:00
print("open Tuesday 10:00?", is_open(sched, probe))
print("next transition:", next_transition(sched, probe))
