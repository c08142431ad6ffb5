"""The generalization bound for empirical 0-1 minimizers.

The bound relates training loss to population loss through the weight
boxes, the dimension, the sample size, and the human's error rate. It is
vacuous for small samples and tightens at the 1/sqrt(n) rate.
"""

from deferlab import generalization_bound

print("bound = train_loss + [(K_m + K_r) d sqrt(2 ln d) + 10 sqrt(ln(2/delta))]"
      " / sqrt(n P(h != y))\n")

print("the worked example: K=1, d=2, n=100, delta=0.1, human error 0.5")
print(f"  bound = {generalization_bound(0.0, 1.0, 1.0, 2, 100, 0.5, 0.1):.4f}\n")

print("sample-size sweep (train loss 0.05, K=1, d=30, human error 0.3):")
for n in (100, 1000, 10_000, 100_000, 1_000_000):
    b = generalization_bound(0.05, 1.0, 1.0, 30, n, 0.3, 0.05)
    print(f"  n={n:>9,}: {b:8.3f}")

print("\nat d=1 the dimension term vanishes (ln 1 = 0):")
for n in (1000, 100_000):
    b = generalization_bound(0.0, 1.0, 1.0, 1, n, 0.5, 0.1)
    print(f"  n={n:>9,}: {b:8.4f}")

# The bound needs a human who errs sometimes; a perfect human makes the
# deferral-side concentration degenerate.
try:
    generalization_bound(0.0, 1.0, 1.0, 2, 100, 0.0, 0.1)
except ValueError as exc:
    print(f"\nperfect human rejected: {exc}")
