"""A short tour of the tensor engine and spectral normalization.

Builds a tiny graph, checks its gradient against central differences, then
watches power iteration converge on matrices with small and large spectral gaps.
"""

import numpy as np

from projcgan import tensor as T
from projcgan.layers import Linear, power_iteration
from projcgan.tensor import Rng, Tensor

rng = np.random.default_rng(0)

with T.default_dtype(np.float64):
    x0 = rng.normal(size=(4, 3))
    x = Tensor(x0, requires_grad=True)
    loss = T.tsum(T.tanh(x) * T.exp(x * 0.5))
    loss.backward()

    def f(a):
        return float(np.sum(np.tanh(a) * np.exp(a * 0.5)))

    eps = 1e-5
    fd = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        d = np.zeros_like(x0)
        d[idx] = eps
        fd[idx] = (f(x0 + d) - f(x0 - d)) / (2 * eps)
    print(f"max |autodiff - finite difference| = {np.abs(x.grad - fd).max():.2e}")

# power iteration: error shrinks like (sigma2/sigma1)^(2k)
print("\npower iteration, relative error of sigma after k steps")
print(" gap s2/s1    k=1       k=10      k=50      k=200")
for gap in (0.5, 0.9, 0.99):
    u, _, vt = np.linalg.svd(rng.normal(size=(64, 64)))
    s = np.linspace(gap, 0.01, 64)
    s[0] = 1.0
    w = (u * s) @ vt
    u0 = rng.normal(size=64)
    errs = [abs(power_iteration(w, u0, k)[2] - 1.0) for k in (1, 10, 50, 200)]
    print(f"  {gap:<8}" + "".join(f"{e:10.1e}" for e in errs))

# a spectrally normalized layer refines its persistent u once per training forward
layer = Linear(Rng(1), 32, 16, spectral_norm=True)
layer.train()
for step in range(1, 31):
    layer(Tensor(np.zeros((1, 32), np.float32)))
    if step in (1, 5, 30):
        top = np.linalg.svd(layer.effective_weight().data, compute_uv=False)[0]
        print(f"after {step:2d} forward calls the effective weight has top singular value {top:.5f}")
