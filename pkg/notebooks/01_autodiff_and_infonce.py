"""
Reverse-mode gradients and the contrastive loss
===============================================

A walk through the two pieces every training step rests on: the small
autodiff tensor library and the symmetric InfoNCE objective.
"""

# %%
# A tape records each operation; ``backward`` replays it in reverse.
import numpy as np

from naln import tensor as tc
from naln import trainer

x = tc.Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
y = tc.tanh(tc.mul(x, x)).sum()
tc.backward(y)
print("d/dx sum(tanh(x^2)):", x.grad)
print("closed form:         ", 2 * x.data * (1 - np.tanh(x.data ** 2) ** 2))

# %%
# ``gradcheck`` compares every analytic gradient with central differences.
W = tc.Tensor(np.random.default_rng(0).uniform(-1, 1, (4, 3)), requires_grad=True)
V = tc.Tensor(np.random.default_rng(1).uniform(-1, 1, (4, 3)), requires_grad=True)
errs = tc.gradcheck(lambda: trainer.infonce_loss(W, V, 0.5), {"W": W, "V": V})
print("max relative gradient error:", {k: f"{v:.1e}" for k, v in errs.items()})

# %%
# Two orthonormal pairs at temperature 1: each row softmax puts e / (e + 1)
# on the match, and both directions contribute.
loss = trainer.infonce_loss(np.eye(2), np.eye(2), 1.0).item()
print(f"N=2 orthonormal loss {loss:.5f} vs 2 log(1 + 1/e) = {2 * np.log1p(np.exp(-1)):.5f}")

# %%
# The loss only sees directions, so rescaling rows changes nothing, and it
# shrinks as the temperature sharpens a perfect match.
rng = np.random.default_rng(2)
W, V = rng.standard_normal((8, 5)), rng.standard_normal((8, 5))
print("rescaled rows:", trainer.infonce_loss(W * 7.0, V, 0.1).item() - trainer.infonce_loss(W, V, 0.1).item())
for tau in (1.0, 0.3, 0.04):
    print(f"tau {tau:<5} perfect-match loss {trainer.infonce_loss(np.eye(4), np.eye(4), tau).item():.3e}")
