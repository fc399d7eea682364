"""Statistical-side calculators: covering numbers, architecture sizing, rate balancing."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .exceptions import PreconditionError


@dataclass(frozen=True)
class ArchSpec:
    L: int
    p: int
    K: int
    R: float
    kappa: float

    def __post_init__(self):
        if self.L < 1 or self.p < 1 or self.K < 0:
            raise PreconditionError(f"need L, p >= 1 and K >= 0, got L={self.L}, p={self.p}, K={self.K}")
        if not (self.R > 0 and self.kappa > 0):
            raise PreconditionError("R and kappa must be positive")
        if self.K > self.L * self.p * (self.p + 1):
            raise PreconditionError(f"K={self.K} exceeds L*p*(p+1)={self.L * self.p * (self.p + 1)}")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RateReport:
    n: int
    eps_star: float
    mse_bound_shape: float


def covering_log_bound(delta, arch, B):
    """``K * ln(2 L^2 (pB + 2) kappa^L p^(L+1) / delta)``, summed in log space."""
    if not delta > 0:
        raise PreconditionError(f"delta must be positive, got {delta}")
    if arch.K == 0:
        return 0.0
    L, p, kappa = arch.L, arch.p, arch.kappa
    inner = (math.log(2.0) + 2.0 * math.log(L) + math.log(p * B + 2.0) + L * math.log(kappa)
             + (L + 1) * math.log(p) - math.log(delta))
    return arch.K * inner


def covering_delta(h, L, p, kappa, B):
    """Sup-norm resolution reached by a weight grid of step ``h``."""
    return h * L * (p * B + 2.0) * (kappa * p) ** (L - 1)


def toy_grid_count(L, p, K, kappa, h, enumerate_all=False):
    """Number of networks with exactly ``K`` nonzero weights among ``L p^2`` slots on the grid ``h Z`` in ``[-kappa, kappa]``.

    With ``enumerate_all`` the networks are listed one by one (small cases only).
    """
    slots = L * p * p
    steps = int(round(kappa / h))
    values = [k * h for k in range(-steps, steps + 1) if k != 0]
    if not enumerate_all:
        return math.comb(slots, K) * len(values) ** K
    seen = set()
    for pos in itertools.combinations(range(slots), K):
        for vals in itertools.product(values, repeat=K):
            seen.add((pos, vals))
    return len(seen)


def theorem_arch(n, s, alpha, d, R=1.0, consts=(1.0, 1.0, 1.0, 1.0), B=1.0, tau=1.0):
    """Architecture ``(L, p, K, R, kappa)`` for sample size ``n`` with explicit constants."""
    if n < 2:
        raise PreconditionError(f"n must be at least 2, got {n}")
    c_L, c_p, c_K, c_kappa = consts
    beta = s + alpha
    ratio = beta / (2.0 * beta + d)
    expo = d / (2.0 * beta + d)
    ln = math.log(n)
    L = max(1, math.ceil(c_L * ratio * ln))
    p = max(1, math.ceil(c_p * n ** expo))
    K = max(1, math.ceil(c_K * ratio * n ** expo * ln))
    K = min(K, L * p * (p + 1))
    kappa = c_kappa * max(1.0, B, math.sqrt(d), tau * tau)
    return ArchSpec(L, p, K, float(R), kappa)


def rate_balance(n, s, alpha, d):
    """Accuracy balancing squared bias against ``eps^(-d/(s+alpha)) / n``."""
    if n < 2:
        raise PreconditionError(f"n must be at least 2, got {n}")
    beta = s + alpha
    eps = float(n) ** (-beta / (2.0 * beta + d))
    shape = float(n) ** (-2.0 * beta / (2.0 * beta + d)) * math.log(n) ** 3
    return RateReport(int(n), eps, shape)


def fit_loglog(xs, ys):
    """Least-squares line through ``(ln x, ln y)``."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise PreconditionError("xs and ys differ in length")
    if x.size < 3:
        raise PreconditionError("need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise PreconditionError("log-log fit needs positive values")
    return fit_line(np.log(x), np.log(y))


def fit_line(x, y):
    """Ordinary least squares ``y ~ a x + b`` with ``r_squared`` (1 when ``y`` is constant)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(y) == 0.0:
        return {"slope": 0.0, "intercept": float(y[0]), "r_squared": 1.0}
    res = stats.linregress(x, y)
    return {"slope": float(res.slope), "intercept": float(res.intercept), "r_squared": float(res.rvalue ** 2)}
