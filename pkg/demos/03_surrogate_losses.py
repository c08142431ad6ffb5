"""The surrogate loss family and its analytic gradients.

Each loss consumes C class scores plus one deferral score. The realizable
surrogate rewards either predicting the label or deferring when the human
is right; the baselines encode different tradeoffs. All gradients are
analytic and match finite differences.
"""

import numpy as np

from deferlab import loss_ce_alpha, loss_moe, loss_ova, loss_rs, loss_rs2, loss_rs_alpha

g = np.array([0.0, 0.0, 0.0])  # two class scores and a deferral score, all zero

print("all-zero scores, y=1:")
print(f"  realizable surrogate, human right: {loss_rs(g, 1, True).value:.5f}")
print(f"  realizable surrogate, human wrong: {loss_rs(g, 1, False).value:.5f}")
print(f"  alpha=0.5 blend, human right:      {loss_rs_alpha(g, 1, True, 0.5).value:.5f}")
print(f"  halfspace-rejector variant:        {loss_rs2(g, 0, True).value:.5f}")
print(f"  cross-entropy surrogate (a=1):     {loss_ce_alpha(g, 0, True, 1.0).value:.5f}")
print(f"  one-vs-all:                        {loss_ova(g, 0, False).value:.5f}")
print(f"  mixture-of-experts gate:           {loss_moe(g, 0, True).value:.5f}")

# When the human is right, the realizable surrogate lets the learner choose
# freely between fitting the label and deferring: crank the deferral score
# and the loss vanishes without the classifier ever fitting y.
print("\nhuman right, deferral score grows:")
for gb in (0.0, 2.0, 5.0, 10.0):
    v = loss_rs(np.array([0.0, 0.0, gb]), 1, True).value
    print(f"  g_defer={gb:5.1f}: loss={v:.6f}")

# The cross-entropy surrogate keeps charging for the unfit label: this is
# the mechanism behind its failure on realizable instances.
print("\nsame sweep for the cross-entropy surrogate (alpha=1):")
for gb in (0.0, 2.0, 5.0, 10.0):
    v = loss_ce_alpha(np.array([0.0, 0.0, gb]), 1, True, 1.0).value
    print(f"  g_defer={gb:5.1f}: loss={v:.6f}")

# The realizable surrogate upper-bounds the 0-1 system loss pointwise.
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(2000):
    scores = rng.normal(scale=4.0, size=4)
    y = int(rng.integers(0, 3))
    hc = bool(rng.integers(0, 2))
    label = int(np.argmax(scores[:3]))
    defer = scores[3] >= scores[:3].max()
    zero_one = (0.0 if hc else 1.0) if defer else (0.0 if label == y else 1.0)
    slack = loss_rs(scores, y, hc).value - zero_one
    worst = min(worst, slack) if slack < worst else worst
    assert zero_one <= loss_rs(scores, y, hc).value + 1e-12
print("\n0-1 system loss <= surrogate value held on 2000 random draws")

# Gradients are analytic; spot-check one coordinate by central differences.
g = rng.normal(size=4)
step = 1e-5
up, dn = g.copy(), g.copy()
up[0] += step
dn[0] -= step
fd = (loss_rs(up, 1, True).value - loss_rs(dn, 1, True).value) / (2 * step)
print(f"gradient check: analytic={loss_rs(g, 1, True).grad[0]:+.8f}  central-diff={fd:+.8f}")
