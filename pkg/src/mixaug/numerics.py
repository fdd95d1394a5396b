"""Dense float64 arithmetic, seeded sampling and a finite-difference oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, NumericError

DTYPE = np.float64


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.size == 0 or any(s <= 0 for s in arr.shape):
        raise DimensionError(f"{name}: extents must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: contains non-finite values")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul: product overflowed")
    return out


class Rng:
    """Seeded deterministic generator (PCG64 underneath).

    Single owner: give every worker its own instance.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def gamma(self, shape: float, size=None):
        return sample_gamma(shape, self, size)

    def beta(self, alpha: float, size=None):
        return sample_beta(alpha, self, size)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream keyed by ``key``."""
        state = np.random.SeedSequence([self.seed, int(key)]).generate_state(1, np.uint64)
        return Rng(int(state[0]))


def _log_gamma_draws(shape: float, n: int, rng: Rng) -> np.ndarray:
    # Marsaglia-Tsang squeeze on shape >= 1; shape < 1 uses
    # Gamma(a) = Gamma(a + 1) * U**(1/a), kept in log space so tiny draws survive.
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, int((n - filled) * 1.1))
        x = rng.normal(m)
        u = rng.uniform(m)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
            x2 = x * x
            accept = ok & ((u < 1.0 - 0.0331 * x2 * x2) | (np.log(u) < 0.5 * x2 + d * (1.0 - v + logv)))
        got = np.log(d) + logv[accept]
        take = min(got.size, n - filled)
        out[filled:filled + take] = got[:take]
        filled += take
    if boost:
        out += np.log(rng.uniform(n) + np.finfo(float).tiny) / shape
    return out


def sample_gamma(shape_param: float, rng: Rng, size=None):
    """Draw from Gamma(shape_param, scale=1).

    Returns a float when ``size`` is None, else an array of that size.
    """
    if not (shape_param > 0) or not math.isfinite(shape_param):
        raise DomainError(f"gamma shape must be positive and finite, got {shape_param}")
    n = 1 if size is None else int(np.prod(size))
    draws = np.exp(_log_gamma_draws(float(shape_param), n, rng))
    return float(draws[0]) if size is None else draws.reshape(size)


def sample_beta(alpha: float, rng: Rng, size=None):
    """Symmetric Beta(alpha, alpha) draw built from two Gamma draws, clamped to [0, 1]."""
    if not (alpha > 0) or not math.isfinite(alpha):
        raise DomainError(f"beta alpha must be positive and finite, got {alpha}")
    n = 1 if size is None else int(np.prod(size))
    g1 = _log_gamma_draws(float(alpha), n, rng)
    g2 = _log_gamma_draws(float(alpha), n, rng)
    # G1 / (G1 + G2) == 1 / (1 + exp(log G2 - log G1))
    with np.errstate(over="ignore"):
        lam = 1.0 / (1.0 + np.exp(g2 - g1))
    lam = np.clip(lam, 0.0, 1.0)
    return float(lam[0]) if size is None else lam.reshape(size)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"finite_diff_grad: f is not finite near element {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad
