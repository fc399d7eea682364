"""Closed-form ReLU gadgets: squaring, multiplication, |x|, trapezoid,
ramped chart indicator, squared distance and clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetInfeasibleError, PreconditionError
from .network import IDENTITY, RELU, ReluNetwork, SparseLayer


def _layer(entries, bias, shape, activation=RELU):
    if entries:
        r, c, v = (np.asarray(a) for a in zip(*entries))
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    return SparseLayer(r, c, v, bias, shape, activation)


def square_order(delta):
    """Smallest ``N`` whose squaring gadget error ``2**(-2N-2)`` is at most ``delta``."""
    if not delta > 0:
        raise PreconditionError(f"delta must be positive, got {delta}")
    N = max(1, math.ceil((math.log2(1.0 / delta) - 2.0) / 2.0))
    while 2.0 ** (-2 * N - 2) > delta:
        N += 1
    while N > 1 and 2.0 ** (-2 * N) <= delta:
        N -= 1
    return N


def _square_tail(nb, N, first, out_weights):
    """Sawtooth layers for ``nb`` interleaved squaring branches.

    ``first`` must emit ``3 * nb`` lanes ordered ``[acc..., a..., b...]``
    (lane ``j * nb + branch``) holding ``(x, x, x - 1/2)``.  The returned
    output layer computes ``sum_br out_weights[br] * f_N(x_br)``.
    """
    layers = [first]
    acc, a, b = 0, nb, 2 * nb
    for k in range(2, N + 1):
        scale = 4.0 ** -(k - 1)
        ent = []
        for br in range(nb):
            ent += [(acc + br, acc + br, 1.0), (acc + br, a + br, -2.0 * scale), (acc + br, b + br, 4.0 * scale)]
        for br in range(nb):
            ent += [(a + br, a + br, 2.0), (a + br, b + br, -4.0)]
        for br in range(nb):
            ent += [(b + br, a + br, 2.0), (b + br, b + br, -4.0)]
        bias = np.zeros(3 * nb)
        bias[b:] = -0.5
        layers.append(_layer(ent, bias, (3 * nb, 3 * nb)))
    scale = 4.0 ** -N
    ent = []
    for j, coef in ((acc, 1.0), (a, -2.0 * scale), (b, 4.0 * scale)):
        for br in range(nb):
            ent.append((0, j + br, out_weights[br] * coef))
    layers.append(_layer(ent, [0.0], (1, 3 * nb), IDENTITY))
    return layers


def build_square(N):
    """Network on ``[0, 1]`` equal to the piecewise-linear interpolant of ``x**2`` on ``2**N`` cells."""
    if int(N) != N or N < 1:
        raise PreconditionError(f"N must be a positive integer, got {N}")
    N = int(N)
    first = _layer([(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)], [0.0, 0.0, -0.5], (3, 1))
    return ReluNetwork(_square_tail(1, N, first, [1.0]))


def build_mult(C, eps):
    """Approximate product ``x * y`` with error at most ``eps`` on ``[-C, C]**2``.

    Computes ``C**2 * (f(|x + y| / 2C) - f(|x - y| / 2C))`` with the two
    squaring branches interleaved lane by lane, so the result is exactly
    symmetric and exactly zero whenever ``|x + y| == |x - y|``.
    """
    C = float(C)
    eps = float(eps)
    if not C > 0:
        raise PreconditionError(f"C must be positive, got {C}")
    if not 0 < eps < C * C:
        raise PreconditionError(f"need 0 < eps < C**2, got eps={eps}, C={C}")
    N = square_order(eps / (2.0 * C * C))
    w = 1.0 / (2.0 * C)
    # lanes: u+ = ReLU(w(x+y)), u- = ReLU(-w(x+y)), v+ = ReLU(w(x-y)), v- = ReLU(-w(x-y))
    abs_layer = _layer(
        [(0, 0, w), (0, 1, w), (1, 0, -w), (1, 1, -w), (2, 0, w), (2, 1, -w), (3, 0, -w), (3, 1, w)],
        np.zeros(4), (4, 2),
    )
    ent = []
    for j in range(3):
        ent += [(2 * j, 0, 1.0), (2 * j, 1, 1.0), (2 * j + 1, 2, 1.0), (2 * j + 1, 3, 1.0)]
    first = _layer(ent, [0.0, 0.0, 0.0, 0.0, -0.5, -0.5], (6, 4))
    c2 = C * C
    return ReluNetwork([abs_layer] + _square_tail(2, N, first, [c2, -c2]))


def build_abs():
    """Exact ``|x| = ReLU(x) + ReLU(-x)``."""
    return ReluNetwork([
        _layer([(0, 0, 1.0), (1, 0, -1.0)], [0.0, 0.0], (2, 1)),
        _layer([(0, 0, 1.0), (0, 1, 1.0)], [0.0], (1, 2), IDENTITY),
    ])


def trapezoid(x):
    """Reference trapezoid: 1 on ``|x| <= 1``, 0 on ``|x| >= 2``, linear between."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(2.0 - np.abs(x), 0.0, 1.0)


def build_trapezoid():
    """``ReLU(x+2) - ReLU(x+1) - ReLU(x-1) + ReLU(x-2)``."""
    return ReluNetwork([
        _layer([(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0), (3, 0, 1.0)], [2.0, 1.0, -1.0, -2.0], (4, 1)),
        _layer([(0, 0, 1.0), (0, 1, -1.0), (0, 2, -1.0), (0, 3, 1.0)], [0.0], (1, 4), IDENTITY),
    ])


def build_clip(R):
    """Clamp to ``[-R, R]`` via ``ReLU(a + R) - ReLU(a - R) - R``."""
    R = float(R)
    if not R > 0:
        raise PreconditionError(f"R must be positive, got {R}")
    return ReluNetwork([
        _layer([(0, 0, 1.0), (1, 0, 1.0)], [R, -R], (2, 1)),
        _layer([(0, 0, 1.0), (0, 1, -1.0)], [-R], (1, 2), IDENTITY),
    ], output_bound=R)


@dataclass(frozen=True)
class IndicatorSpec:
    """Parameters of the ramped chart indicator applied to a squared distance ``a``.

    ``h = r**2 - 4 B**2 D nu`` is the cut-off above which the output is 0.
    The ramp of the built network starts at ``(1 - 2**-k) h``, which lies
    at or above ``r**2 - Delta + 4 B**2 D nu``.
    """

    r: float
    Delta: float
    B: float
    D: int
    nu: float

    def __post_init__(self):
        if not self.r > 0:
            raise PreconditionError(f"r must be positive, got {self.r}")
        if not (self.Delta > 0 and self.B > 0 and self.D >= 1 and self.nu >= 0):
            raise PreconditionError("Delta, B must be positive, D >= 1, nu >= 0")
        if not self.Delta > self.slack:
            raise BudgetInfeasibleError(
                f"Delta={self.Delta:g} must exceed 8 B^2 D nu={self.slack:g}")
        if not self.h > 0:
            raise BudgetInfeasibleError("r**2 <= 4 B**2 D nu leaves no room for the indicator")

    @property
    def slack(self):
        return 8.0 * self.B ** 2 * self.D * self.nu

    @property
    def h(self):
        return self.r ** 2 - 4.0 * self.B ** 2 * self.D * self.nu

    @property
    def one_until(self):
        """Largest ``a`` at which the output is guaranteed to be exactly 1."""
        return self.r ** 2 - self.Delta + 4.0 * self.B ** 2 * self.D * self.nu

    @property
    def zero_after(self):
        return self.h

    @property
    def k(self):
        width = (self.Delta - self.slack) * (1.0 - 1e-9)
        k = max(1, math.ceil(math.log2(self.h / width)))
        while self.h * 2.0 ** -k > width:
            k += 1
        return k

    @property
    def ramp(self):
        """Interval on which the built indicator decreases linearly from 1 to 0."""
        return ((1.0 - 2.0 ** -self.k) * self.h, self.h)


def _reciprocal_up(h):
    s = 1.0 / h
    while s * h < 1.0:
        s = np.nextafter(s, np.inf)
    return float(s)


def build_step_indicator(spec):
    """Ramped indicator ``1 - g_k(a) / h`` with ``g`` the tent map on ``[0, h]``.

    Returns exactly 1 for ``a`` up to the start of the ramp and exactly 0
    for ``a >= h``; it is nonincreasing and stays in ``[0, 1]``.
    """
    h = spec.h
    k = spec.k
    s = _reciprocal_up(h)
    layers = [
        _layer([(0, 0, -1.0)], [h], (1, 1)),           # v = ReLU(h - a)
        _layer([(0, 0, -1.0)], [h / 2.0], (1, 1)),     # p = ReLU(h/2 - v), g_1 = 2p
    ]
    width = 1
    for _ in range(2, k + 1):
        if width == 1:
            ent = [(0, 0, 2.0), (1, 0, 2.0)]
        else:
            ent = [(0, 0, 2.0), (0, 1, -2.0), (1, 0, 2.0), (1, 1, -2.0)]
        layers.append(_layer(ent, [-h / 2.0, -h], (2, width)))
        width = 2
    if width == 1:
        ent = [(0, 0, -2.0 * s)]
    else:
        ent = [(0, 0, -2.0 * s), (0, 1, 2.0 * s)]
    layers.append(_layer(ent, [1.0], (1, width)))
    layers.append(_layer([(0, 0, 1.0)], [0.0], (1, 1), IDENTITY))
    return ReluNetwork(layers, output_bound=1.0)


def build_sq_dist(center, B, nu):
    """Approximate ``||x - center||**2`` with error at most ``4 B**2 D nu`` on ``||x||_inf <= B``."""
    c = np.asarray(center, dtype=np.float64).ravel()
    B = float(B)
    if not B > 0:
        raise PreconditionError(f"B must be positive, got {B}")
    if not 0 < nu < 1:
        raise PreconditionError(f"nu must lie in (0, 1), got {nu}")
    if np.abs(c).max() > B:
        raise PreconditionError("center lies outside the coordinate box")
    D = c.size
    N = square_order(nu)
    w = 1.0 / (2.0 * B)
    j = np.arange(D)
    head = SparseLayer(
        np.concatenate([2 * j, 2 * j + 1]), np.concatenate([j, j]),
        np.concatenate([np.full(D, w), np.full(D, -w)]),
        np.ravel(np.column_stack([-w * c, w * c])), (2 * D, D),
    )
    ent = []
    for lane in range(3):
        for br in range(D):
            ent += [(lane * D + br, 2 * br, 1.0), (lane * D + br, 2 * br + 1, 1.0)]
    bias = np.zeros(3 * D)
    bias[2 * D:] = -0.5
    first = _layer(ent, bias, (3 * D, 2 * D))
    return ReluNetwork([head] + _square_tail(D, N, first, [4.0 * B * B] * D))
