"""Time-to-accuracy on the heterogeneous reference pool.

Runs the built-in sequential / sync / async / random scenarios on the virtual
clock and prints when each first reaches 80% test accuracy. Training is real
SGD; only durations are simulated.
"""

from fedloom import compare_runs
from fedloom.scenarios import builtin

SEEDS = (1, 2, 3)

comparison = compare_runs(
    {
        "sequential": builtin("reference_sequential"),
        "sync": builtin("reference_sync"),
        "async": builtin("reference_async"),
        "random-3": builtin("reference_random"),
    },
    seeds=SEEDS,
)

print(f"{'scenario':12} {'seed':>4} {'t@0.80':>10} {'final':>7} {'rounds':>7}")
for row in comparison.rows:
    reached = "unreached" if row.time_to_target is None else f"{row.time_to_target:.2f}"
    print(f"{row.scenario:12} {row.seed:>4} {reached:>10} "
          f"{row.final_accuracy:>7.3f} {row.rounds:>7}")

print("\nspeedup ratios (row / column, < 1 means the row is faster):")
names = ["async", "sync", "sequential"]
print(" " * 12 + "".join(f"{n:>12}" for n in names))
for a in names:
    cells = "".join(f"{comparison.speedups[(a, b)]:>12.3f}" for b in names)
    print(f"{a:12}{cells}")
