"""Both selection heuristics on the worked three-worker pool.

Workers need 1, 2 and 10 seconds per local epoch. The epoch-window rule picks
whoever can finish its minimum before the fastest finishes its maximum; the
time-budget rule admits workers one by one as accuracy stalls.
"""

from fedloom import RMinMaxState, TimeBasedState, WorkerProfile
from fedloom.selection import (
    TimeBasedSelector,
    select_rminmax,
    select_timebased,
    update_rminmax,
)

pool = [WorkerProfile(f"w{i+1}", t_one, 0.5, 1.0, 1.0, 100)
        for i, t_one in enumerate((1.0, 2.0, 10.0))]

print("epoch-window selection (rmin=2, rmax=5):")
state = RMinMaxState(rmin=2, rmax=5)
print(f"  selected: {sorted(select_rminmax(pool, state))}")
print("  after accuracy 0.10 -> 0.32 the window widens:")
state = update_rminmax(state, 0.10, 0.32)
print(f"  rmin={state.rmin:.4f} rmax={state.rmax:.4f} "
      f"-> selected {sorted(select_rminmax(pool, state))}")

print("\ntime-budget selection (r=3), budget grows only on stalls:")
print(f"  budget 7.0 -> {sorted(select_timebased(pool, TimeBasedState(r=3, t_budget=7.0)))}")
selector = TimeBasedSelector(r=3, t_budget=0.0, threshold_a=0.01)
for step in range(4):
    selected = selector.select(pool)
    print(f"  budget {selector.state.t_budget:6.2f} -> {sorted(selected) or '(nobody)'}")
    selector.update(0.3, 0.3, pool, selected)  # flat accuracy: admit the next worker

print("\nthe failure mode: rmin = rmax on a pool with a huge speed gap")
# accuracies live in [0, 1], so repeated updates can widen rmax/rmin by at
# most 4x; a 9x gap between the fastest and everyone else can never close
gapped = [WorkerProfile("fast", 1.0, 0.5, 1.0, 1.0, 100),
          WorkerProfile("slow1", 9.0, 0.5, 1.0, 1.0, 100),
          WorkerProfile("slow2", 10.0, 0.5, 1.0, 1.0, 100)]
state = RMinMaxState(rmin=5, rmax=5)
frozen = select_rminmax(gapped, state)
acc = 0.1
for _ in range(50):
    state = update_rminmax(state, acc, min(acc + 0.02, 1.0))
    acc = min(acc + 0.02, 1.0)
assert select_rminmax(gapped, state) == frozen
print(f"  selected stays {sorted(frozen)} for 50 rounds even with rising accuracy")
