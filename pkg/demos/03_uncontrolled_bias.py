"""
Reproducing the biases of an uncontrolled evaluation
====================================================

Sixteen task variants run back to back on the simulated marketplace with
no admission control. The run log then quantifies what that costs:
returning workers, condition crossover, demographic concentration, and a
time-of-day confound between conditions.

Takes a couple of seconds; everything is seeded and reproducible.
"""
from crowdflow import bias_report
from crowdflow.analytics import extract_judgments
from crowdflow.events import EventKind
from crowdflow.scenarios import uncontrolled_run

run, log = uncontrolled_run()

judgments = sum(1 for e in log if e.kind is EventKind.JUDGMENT)
workers = len(run.registry.records)
print(f"run {run.run_id}: {judgments} judgments from {workers} workers, {len(log)} events")

rep = bias_report([log])
print(f"returning-worker rate:  {rep.returning_rate:.1%}")
print(f"condition crossover:    {rep.crossover_rate:.1%}")
top3 = list(rep.shares.items())[:3]
print(f"top-3 country share:    {rep.top_k_share:.1%}  {[(c, round(s, 3)) for c, s in top3]}")
print(f"concentration (HHI):    {rep.hhi:.3f}")
print(f"max condition local-hour gap: {rep.max_mean_hour_gap:.1f}h")

# The returning-worker effect: faster, but not more accurate.
rows = extract_judgments([log])
new = [r for r in rows if r.worker_class == "new"]
ret = [r for r in rows if r.worker_class != "new"]
med = lambda xs: sorted(xs)[len(xs) // 2]
print(f"median decision time: new {med([r.decision_time for r in new]):.1f}s, "
      f"returning {med([r.decision_time for r in ret]):.1f}s")
acc = lambda rs: sum(r.correct for r in rs if r.correct is not None) / max(
    sum(1 for r in rs if r.correct is not None), 1)
print(f"gold accuracy: new {acc(new):.3f}, returning {acc(ret):.3f}")

# Per-condition breakdown normalized to each condition's new workers,
# one row per condition x worker class (ready for plotting).
print("\ngroup  class               n     time_z")
for row in rep.flat_table():
    z = "" if row["decision_time_z"] is None else f"{row['decision_time_z']:+.2f}"
    print(f"{row['group']:<6} {row['worker_class']:<18} {row['count']:<5} {z}")
