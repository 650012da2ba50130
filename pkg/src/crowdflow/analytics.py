"""Bias metrics over run event logs: returning-worker rate, condition
crossover, demographic concentration, time-of-day balance, and
per-condition performance normalized to the new-worker baseline.

A "log set" is one or more run logs analyzed together; worker identity is
re-resolved across the whole set from the arrival records (platform ids +
fingerprints), so a worker seen in run 1 and run 2 counts as returning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import timezone

from .eligibility import WorkerRegistry
from .events import EventKind, RunEvent
from .geo import local_hour
from .workflows import parse_workflow

WORKER_CLASSES = ("new", "returning_same", "returning_crossed")


class EmptyLogError(ValueError):
    """EMPTY_LOG: no judgments to analyze."""


@dataclass
class JudgmentRow:
    worker: str
    node_id: str
    group_id: str
    run_id: str
    country: str
    answer: str
    correct: bool | None  # None when the unit carries no gold answer
    decision_time: float
    utc_hour: float
    worker_class: str = "new"


@dataclass
class ConditionStats:
    count: int
    mean_time: float
    median_time: float
    accuracy: float | None
    time_z: float | None
    accuracy_z: float | None


@dataclass
class BiasReport:
    returning_rate: float
    crossover_rate: float
    shares: dict[str, float]
    top_k_share: float
    hhi: float
    per_condition: dict[str, dict[str, ConditionStats]]
    timezone_mean_hour: dict[str, float]
    timezone_variance: dict[str, float]
    max_mean_hour_gap: float
    unresolved_units: int
    cross_group_merges: list[str]
    degenerate_baselines: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "returning_rate": self.returning_rate,
            "crossover_rate": self.crossover_rate,
            "concentration": {
                "shares": self.shares,
                "top_3_share": self.top_k_share,
                "hhi": self.hhi,
            },
            "per_condition": {
                g: {
                    cls: {
                        "count": s.count,
                        "mean_decision_time": s.mean_time,
                        "median_decision_time": s.median_time,
                        "gold_accuracy": s.accuracy,
                        "decision_time_z": s.time_z,
                        "accuracy_z": s.accuracy_z,
                    }
                    for cls, s in classes.items()
                }
                for g, classes in self.per_condition.items()
            },
            "timezone_balance": {
                "mean_local_hour": self.timezone_mean_hour,
                "circular_variance": self.timezone_variance,
                "max_pairwise_mean_gap_hours": self.max_mean_hour_gap,
            },
            "unresolved_units": self.unresolved_units,
            "cross_group_merges": self.cross_group_merges,
            "degenerate_baselines": self.degenerate_baselines,
        }

    def flat_table(self) -> list[dict]:
        """One row per group x worker class, ready for plotting."""
        rows = []
        for g, classes in sorted(self.per_condition.items()):
            for cls in WORKER_CLASSES:
                s = classes.get(cls)
                if s is None:
                    continue
                rows.append(
                    {
                        "group": g,
                        "worker_class": cls,
                        "count": s.count,
                        "mean_decision_time": round(s.mean_time, 3),
                        "median_decision_time": round(s.median_time, 3),
                        "gold_accuracy": None if s.accuracy is None else round(s.accuracy, 4),
                        "decision_time_z": None if s.time_z is None else round(s.time_z, 4),
                        "accuracy_z": None if s.accuracy_z is None else round(s.accuracy_z, 4),
                    }
                )
        return rows


def extract_judgments(logs: list[list[RunEvent]]) -> list[JudgmentRow]:
    """Flatten a log set into judgment rows with set-wide canonical worker
    ids and per-judgment worker classes (new / returning_same /
    returning_crossed, judged against the worker's earlier entries)."""
    registry = WorkerRegistry()
    rows: list[JudgmentRow] = []
    ordered: list[tuple] = []
    for log in logs:
        run_id = ""
        gold: dict[str, str] = {}
        groups: dict[str, str] = {}
        session_worker: dict[str, str] = {}
        for ev in log:
            if ev.kind is EventKind.DEPLOYED:
                run_id = ev.payload["run_id"]
                wf = parse_workflow(ev.payload["workflow"])
                gold = {u.unit_id: u.gold_answer for u in wf.input_units if u.gold_answer}
                groups = {n.node_id: n.group_id for n in wf.nodes}
            elif ev.kind is EventKind.WORKER_ARRIVAL:
                p = ev.payload
                cid, _ = registry.resolve_worker(
                    p["adapter"], p["platform_worker_id"], p.get("fingerprint"),
                    p["country"], p["trust"], ev.time,
                )
                session_worker[p["session_id"]] = cid
            elif ev.kind is EventKind.JUDGMENT:
                p = ev.payload
                worker = session_worker.get(p["session_id"], p["worker"])
                t = ev.time.astimezone(timezone.utc)
                ordered.append((
                    ev.time,
                    JudgmentRow(
                        worker=worker,
                        node_id=p["node_id"],
                        group_id=groups.get(p["node_id"], p.get("group_id", "")),
                        run_id=run_id,
                        country=p["country"],
                        answer=p["answer"],
                        correct=(p["answer"] == gold[p["unit_id"]]) if p["unit_id"] in gold else None,
                        decision_time=float(p["decision_time_seconds"]),
                        utc_hour=t.hour + t.minute / 60 + t.second / 3600,
                    ),
                ))
    ordered.sort(key=lambda pair: pair[0])
    rows = [r for _, r in ordered]

    seen_entries: dict[str, set[tuple[str, str]]] = {}
    seen_groups: dict[str, set[str]] = {}
    for r in rows:
        entries = seen_entries.setdefault(r.worker, set())
        groups_seen = seen_groups.setdefault(r.worker, set())
        entry = (r.run_id, r.node_id)
        prior_other = entries - {entry}
        if not prior_other:
            r.worker_class = "new"
        elif groups_seen - {r.group_id}:
            r.worker_class = "returning_crossed"
        else:
            r.worker_class = "returning_same"
        entries.add(entry)
        groups_seen.add(r.group_id)
    return rows


def _entries_by_worker(rows: list[JudgmentRow]) -> dict[str, set[tuple[str, str]]]:
    out: dict[str, set[tuple[str, str]]] = {}
    for r in rows:
        out.setdefault(r.worker, set()).add((r.run_id, r.node_id))
    return out


def returning_rate(logs: list[list[RunEvent]]) -> float:
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    entries = _entries_by_worker(rows)
    return sum(1 for e in entries.values() if len(e) >= 2) / len(entries)


def crossover_rate(logs: list[list[RunEvent]]) -> float:
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    groups: dict[str, set[str]] = {}
    for r in rows:
        groups.setdefault(r.worker, set()).add(r.group_id)
    return sum(1 for g in groups.values() if len(g) >= 2) / len(groups)


def concentration(logs: list[list[RunEvent]], attribute: str = "country") -> tuple[dict[str, float], float, float]:
    """Judgment shares by attribute value (descending), top-3 share, HHI."""
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    counts: dict[str, int] = {}
    for r in rows:
        value = r.country if attribute == "country" else getattr(r, attribute)
        counts[value] = counts.get(value, 0) + 1
    total = sum(counts.values())
    shares = {
        v: c / total
        for v, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    }
    ordered = list(shares.values())
    top3 = sum(ordered[:3])
    hhi = sum(s * s for s in ordered)
    return shares, top3, hhi


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs)


def _median(xs: list[float]) -> float:
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def _std(xs: list[float]) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def normalized_condition_stats(
    logs: list[list[RunEvent]],
) -> tuple[dict[str, dict[str, ConditionStats]], list[str]]:
    """Per (group, worker class): decision time and gold accuracy, z-scored
    against the group's new-worker distribution. The new-worker class maps
    to z = 0 by construction; degenerate baselines (n < 2 or zero variance)
    are flagged and their z values omitted."""
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    by_group: dict[str, list[JudgmentRow]] = {}
    for r in rows:
        by_group.setdefault(r.group_id, []).append(r)

    out: dict[str, dict[str, ConditionStats]] = {}
    degenerate: list[str] = []
    for g, grows in sorted(by_group.items()):
        new_times = [r.decision_time for r in grows if r.worker_class == "new"]
        new_correct = [float(r.correct) for r in grows if r.worker_class == "new" and r.correct is not None]
        time_ok = len(new_times) >= 2 and _std(new_times) > 0
        acc_ok = len(new_correct) >= 2 and _std(new_correct) > 0
        if not time_ok:
            degenerate.append(g)
        out[g] = {}
        for cls in WORKER_CLASSES:
            crows = [r for r in grows if r.worker_class == cls]
            if not crows:
                continue
            times = [r.decision_time for r in crows]
            correct = [float(r.correct) for r in crows if r.correct is not None]
            acc = _mean(correct) if correct else None
            time_z = None
            acc_z = None
            if time_ok:
                time_z = 0.0 if cls == "new" else (_mean(times) - _mean(new_times)) / _std(new_times)
            if acc_ok and acc is not None:
                acc_z = 0.0 if cls == "new" else (acc - _mean(new_correct)) / _std(new_correct)
            out[g][cls] = ConditionStats(
                count=len(crows),
                mean_time=_mean(times),
                median_time=_median(times),
                accuracy=acc,
                time_z=time_z,
                accuracy_z=acc_z,
            )
    return out, degenerate


def _circular(hours: list[float]) -> tuple[float, float]:
    """Circular mean (in hours) and circular variance of hour-of-day data."""
    angles = [h / 24 * 2 * math.pi for h in hours]
    c = _mean([math.cos(a) for a in angles])
    s = _mean([math.sin(a) for a in angles])
    r = math.hypot(c, s)
    mean = (math.atan2(s, c) % (2 * math.pi)) / (2 * math.pi) * 24
    return mean, 1.0 - r


def hour_gap(a: float, b: float) -> float:
    d = abs(a - b) % 24
    return min(d, 24 - d)


def timezone_balance(logs: list[list[RunEvent]]) -> tuple[dict[str, float], dict[str, float], float]:
    """Per-group circular mean/variance of judgment local hour plus the max
    pairwise gap between group means."""
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    by_group: dict[str, list[float]] = {}
    for r in rows:
        by_group.setdefault(r.group_id, []).append(local_hour(r.utc_hour, r.country))
    means: dict[str, float] = {}
    variances: dict[str, float] = {}
    for g, hours in sorted(by_group.items()):
        m, v = _circular(hours)
        means[g] = m
        variances[g] = v
    labels = list(means)
    gap = max(
        (hour_gap(means[a], means[b]) for i, a in enumerate(labels) for b in labels[i + 1:]),
        default=0.0,
    )
    return means, variances, gap


def bias_report(logs: list[list[RunEvent]]) -> BiasReport:
    rows = extract_judgments(logs)
    if not rows:
        raise EmptyLogError("EMPTY_LOG")
    shares, top3, hhi = concentration(logs)
    per_condition, degenerate = normalized_condition_stats(logs)
    means, variances, gap = timezone_balance(logs)

    unresolved = 0
    merges: list[str] = []
    for log in logs:
        for ev in log:
            if ev.kind is EventKind.LAMBDA_APPLIED:
                unresolved += ev.payload.get("unresolved", 0)
            elif ev.kind is EventKind.STAGE_ADVANCED:
                pass
            elif ev.kind is EventKind.DEPLOYED:
                pass
        # cross-group merge flags are derivable from the workflow document
        for ev in log:
            if ev.kind is EventKind.DEPLOYED:
                wf = parse_workflow(ev.payload["workflow"])
                node_group = {n.node_id: n.group_id for n in wf.nodes}
                incoming: dict[str, set[str]] = {}
                for e in wf.edges:
                    if e.source in node_group and e.target in node_group:
                        incoming.setdefault(e.target, set()).add(node_group[e.source])
                merges.extend(
                    sorted(t for t, gs in incoming.items() if len(gs) > 1)
                )

    return BiasReport(
        returning_rate=returning_rate(logs),
        crossover_rate=crossover_rate(logs),
        shares=shares,
        top_k_share=top3,
        hhi=hhi,
        per_condition=per_condition,
        timezone_mean_hour=means,
        timezone_variance=variances,
        max_mean_hour_gap=gap,
        unresolved_units=unresolved,
        cross_group_merges=merges,
        degenerate_baselines=degenerate,
    )
