"""Latency accounting for Morse schedules.

Cost is counted in LSD units (one Dash evaluation).  A Dot evaluation costs
``1/N``.  Given a budget of ``L`` LSD, trading ``k`` Dash steps for ``N*k``
Dot steps keeps the cost at ``L`` while taking ``L - k + N*k`` steps.

    python demos/02_cost_model.py
"""

from morse.engine import lsd_cost, recommended_exchanges, schedule_for_budget, upper_bound_speedup
from morse.samplers import Executor

N = 4
print(f"speed ratio N={N}")
print(" budget  exchanged  steps  schedule")
for L in (4, 6, 8):
    for k in range(0, L):
        s = schedule_for_budget(1000, L, k, N)
        marks = "".join("#" if e is Executor.DASH else "." for e in s.executors)
        print(f"  {L:5d}  {k:9d}  {s.grid.n_steps:5d}  {marks}  (LSD {lsd_cost(s):g},"
              f" upper bound {upper_bound_speedup(L, k, N):.2f}x)")
    print()

for n in (4, 6, 10):
    print(f"n={n}: exchanges with an upper-bound speedup in [2, 3]: {recommended_exchanges(n, N)}")
