"""Full manifold approximation network and its error budget.

The network computes ``sum_i mult_eta(clip(T_i(phi_i(x))), ind_i(dist_i(x)))``:
a Taylor branch and a chart-indicator branch per chart, paired by an
approximate product and summed by one affine layer.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .atlas import partition_weights
from .exceptions import PreconditionError, ResourceError
from .gadgets import IndicatorSpec, build_clip, build_mult, build_sq_dist, build_step_indicator
from .network import compose_serial, from_affine, stack_parallel
from .taylor import (MAX_NONZEROS, build_taylor_net, estimate_holder_scale, grid_resolution,
                     taylor_coefficients)

# Indicator ramps wider than r^2 / 4 would reach into the covered core of a chart.
_MAX_RAMP_FRACTION = 0.25


@dataclass(frozen=True)
class ErrorBudget:
    eps: float
    eta: float
    delta: float
    Delta: float
    nu: float
    c_shell: float
    C_M: int
    r: float
    tau: float
    B: float
    D: int

    def indicator_spec(self):
        return IndicatorSpec(self.r, self.Delta, self.B, self.D, self.nu)

    def as_dict(self):
        d = asdict(self)
        if math.isinf(d["tau"]):
            d["tau"] = "inf"
        return d


def _reach_factor(r, tau):
    return r if math.isinf(tau) else r * (1.0 - r / tau)


def error_budget(eps, a, c_shell):
    """Split ``eps`` into pairing, Taylor and indicator tolerances."""
    if not 0 < eps < 1:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    if not c_shell > 0:
        raise PreconditionError(f"c_shell must be positive, got {c_shell}")
    m = a.manifold
    C_M = a.C_M
    tau = m.reach
    eta = delta = eps / (3.0 * C_M)
    Delta = _reach_factor(a.r, tau) * eps / (3.0 * c_shell * (math.pi + 1.0) * C_M)
    B = m.coord_bound
    D = m.ambient_dim
    nu = Delta / (16.0 * B * B * D)
    budget = ErrorBudget(eps, eta, delta, Delta, nu, float(c_shell), C_M, a.r, tau, B, D)
    budget.indicator_spec()
    return budget


def _shell_table(f, a, n_probe, seed):
    X = a.manifold.sample(n_probe, seed)
    rho = partition_weights(a, X)
    F = np.abs(f(X))[:, None] * rho
    C = a.centers
    d2 = np.empty_like(rho)
    for i in range(C.shape[0]):
        diff = X - C[i]
        d2[:, i] = np.einsum("ij,ij->i", diff, diff)
    return d2, F


def shell_ratio(d2, F, a, Delta):
    """``max |f_i| * r(1 - r/tau) / ((pi + 1) Delta)`` over samples in the shells."""
    r2 = a.r * a.r
    mask = (d2 >= r2 - Delta) & (d2 <= r2)
    peak = float(F[mask].max()) if mask.any() else 0.0
    return peak * _reach_factor(a.r, a.manifold.reach) / ((math.pi + 1.0) * Delta)


def estimate_shell_constant(f, a, eps, n_probe=None, seed=0):
    """Smallest ``c`` (within a bisection tolerance) with ``c >= 2 * shell_ratio(Delta(c))``.

    ``Delta`` shrinks like ``1/c`` while the sampled shell ratio grows as
    ``Delta`` widens, so the admissible set is an interval ``[c*, inf)``.
    ``c`` is also kept large enough that the ramp stays below ``r^2 / 4``.
    """
    if not 0 < eps < 1:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    if n_probe is None:
        n_probe = 50000 if a.manifold.intrinsic_dim == 1 else 100000
    A = _reach_factor(a.r, a.manifold.reach) * eps / (3.0 * (math.pi + 1.0) * a.C_M)
    c_lo = A / (_MAX_RAMP_FRACTION * a.r * a.r)
    d2, F = _shell_table(f, a, n_probe, seed)

    def ok(c):
        return 2.0 * shell_ratio(d2, F, a, A / c) <= c

    if ok(c_lo):
        return c_lo
    lo, hi = math.log(c_lo), math.log(c_lo) + 1.0
    while not ok(math.exp(hi)):
        lo, hi = hi, hi + 2.0
        if hi > 60:
            raise PreconditionError("could not bound the shell constant")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if ok(math.exp(mid)):
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


@dataclass(frozen=True)
class Assembly:
    """Assembled network plus the pieces needed to audit it."""

    network: object
    budget: ErrorBudget
    atlas: object
    target: object
    taylor_models: tuple
    taylor_branches: tuple
    indicator_branches: tuple
    pair_gadget: object
    chart_nets: tuple
    holder_scales: tuple
    clip: bool
    info: dict = field(default_factory=dict, compare=False)

    @property
    def meta(self):
        return self.network.meta

    def lanes(self, X):
        """Last hidden layer of :attr:`network`, evaluated chart by chart.

        A chart whose radius excludes ``x`` has an indicator of exactly 0 and
        so a paired output of exactly 0; only nearby charts are evaluated.
        The result is bit-identical to ``network.forward(X, stop=-1)``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros((X.shape[0], 2 * len(self.chart_nets)))
        r2 = self.atlas.r ** 2
        for i, (ch, net) in enumerate(zip(self.atlas.charts, self.chart_nets)):
            diff = X - ch.center
            near = np.flatnonzero(np.einsum("ij,ij->i", diff, diff) < r2 * (1.0 + 1e-9))
            if near.size:
                v = net(X[near])[:, 0]
                out[near, 2 * i] = np.maximum(v, 0.0)
                out[near, 2 * i + 1] = np.maximum(-v, 0.0)
        return out

    def predict(self, X):
        """Network output via :meth:`lanes`, summed in the same order as the output layer."""
        return self.combine(self.lanes(X))

    def combine(self, L):
        """Output layer (and optional clip) applied to precomputed :meth:`lanes`."""
        acc = np.zeros(L.shape[0])
        for j in range(L.shape[1]):
            acc += L[:, j] if j % 2 == 0 else -L[:, j]
        if self.clip:
            R = self.target.sup_norm_R
            acc = (np.maximum(acc + R, 0.0) - np.maximum(acc - R, 0.0)) - R
        return acc


def _check_inputs(f, a):
    if f.s + f.alpha <= 0:
        raise PreconditionError("target smoothness must be positive")
    for ch in a.charts[:1]:
        if ch.center.size != a.manifold.ambient_dim:
            raise PreconditionError("atlas and manifold dimensions disagree")


def assemble(f, a, eps, clip=False, c_shell=None, max_nonzeros=MAX_NONZEROS, seed=0):
    """Build the full approximation network for ``f`` on the atlas ``a`` at accuracy ``eps``.

    ``holder_scale`` is taken from ``f`` when set, otherwise estimated per
    chart; ``c_shell`` defaults to :func:`estimate_shell_constant`.
    """
    if not 0 < eps < 1:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    _check_inputs(f, a)
    if c_shell is None:
        c_shell = estimate_shell_constant(f, a, eps, seed=seed)
    budget = error_budget(eps, a, c_shell)
    spec = budget.indicator_spec()
    d = a.manifold.intrinsic_dim
    R = f.sup_norm_R
    # rough guard before the expensive coefficient pass; checked chart by chart so hopeless builds stop early
    per_node = (d + f.s) * 70 * (2 ** d)
    scales, grids, guess = [], [], 0.0
    for ch in a.charts:
        hs = f.holder_scale if f.holder_scale is not None else estimate_holder_scale(f, a, ch)
        N = grid_resolution(budget.delta, f.s, f.alpha, d, hs, a.r)
        guess += float(N + 1) ** d * per_node
        if guess > 4 * max_nonzeros:
            raise ResourceError(f"estimated {guess:.3g} nonzeros exceeds the cap {max_nonzeros}",
                                required=int(guess))
        scales.append(hs)
        grids.append(N)
    models, tay, ind = [], [], []
    used = 0
    clip_f = build_clip(R + budget.delta)
    for ch, hs, N in zip(a.charts, scales, grids):
        tm = taylor_coefficients(f, ch, a, N, hs)
        T = build_taylor_net(tm, budget.delta, max_nonzeros=max(1, max_nonzeros - used))
        used += T.meta.nonzeros_K
        if used > max_nonzeros:
            raise ResourceError(f"Taylor networks exceed {max_nonzeros} nonzeros", required=used)
        W, c = ch.affine()
        branch = compose_serial(compose_serial(from_affine(W, c), T), clip_f)
        models.append(tm)
        tay.append(branch)
        ind.append(compose_serial(build_sq_dist(ch.center, budget.B, budget.nu), build_step_indicator(spec)))
    C = max(R + budget.delta, 1.0)
    pair = build_mult(C, budget.eta)
    lanes = []
    for t, i in zip(tay, ind):
        lanes += [t, i]
    chart_nets = tuple(compose_serial(stack_parallel([t, i], share_input=True), pair) for t, i in zip(tay, ind))
    branches = stack_parallel(lanes, share_input=True)
    pairing = stack_parallel([pair] * a.C_M, share_input=False)
    net = compose_serial(compose_serial(branches, pairing), from_affine(np.ones((1, a.C_M)), [0.0]))
    if clip:
        net = compose_serial(net, build_clip(R))
    info = {"grid_N": grids, "indicator_k": spec.k, "pair_C": C}
    return Assembly(net, budget, a, f, tuple(models), tuple(tay), tuple(ind), pair, chart_nets, tuple(scales), bool(clip), info)


def error_decomposition(asm, X):
    """Per-chart audit of the three error sources on the points ``X``.

    Returns a list of dicts with ``A1`` (max pairing error), ``A2`` (max
    Taylor error where the indicator is exactly 1), ``shell_max`` (max
    ``|f_i|`` on the shell) and ``shell_bound``.
    """
    a, b, f = asm.atlas, asm.budget, asm.target
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rho = partition_weights(a, X)
    fx = f(X)
    r2 = a.r * a.r
    bound = b.c_shell * (math.pi + 1.0) * b.Delta / _reach_factor(a.r, a.manifold.reach)
    rows = []
    for i, ch in enumerate(a.charts):
        fi = fx * rho[:, i]
        th = asm.taylor_branches[i](X)[:, 0]
        ih = asm.indicator_branches[i](X)[:, 0]
        pr = asm.pair_gadget(np.column_stack([th, ih]))[:, 0]
        one = ih == 1.0
        d2 = ((X - ch.center) ** 2).sum(1)
        shell = (d2 >= r2 - b.Delta) & (d2 <= r2)
        rows.append({
            "chart": i,
            "A1": float(np.abs(pr - th * ih).max()),
            "A2": float(np.abs(th[one] - fi[one]).max()) if one.any() else 0.0,
            "shell_max": float(np.abs(fi[shell]).max()) if shell.any() else 0.0,
            "shell_bound": bound,
            "n_one": int(one.sum()),
            "n_shell": int(shell.sum()),
        })
    return rows


def theoretical_size(eps, d, s, alpha, D, consts=(1.0, 1.0, 1.0), c4=1.0, B=1.0, tau=1.0):
    """Depth, width, nonzero and weight bounds with explicit constants."""
    if not 0 < eps < 1:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    c1, c2, c3 = consts
    le = math.log(1.0 / eps)
    lD = math.log(D)
    core = eps ** (-d / (s + alpha))
    tau2 = 0.0 if math.isinf(tau) else tau * tau
    return {
        "L_bound": c1 * (le + lD),
        "p_bound": c2 * (core + D),
        "K_bound": c3 * (core * le + D * le + D * lD),
        "kappa_bound": c4 * max(1.0, B, tau2, math.sqrt(d)),
    }


def verify_size(net, bound):
    """Compare measured size against ``bound``; one pass flag per quantity."""
    m = net.meta if hasattr(net, "meta") else net
    measured = {"L_bound": m.depth_L, "p_bound": m.width_p, "K_bound": m.nonzeros_K,
                "kappa_bound": m.weight_bound_kappa}
    report = {}
    for key, val in measured.items():
        if key in bound:
            report[key] = {"measured": val, "bound": bound[key], "ok": val <= bound[key]}
    report["ok"] = all(v["ok"] for v in report.values())
    return report


def calibrate_constants(metas, eps_list, d, s, alpha, D, B=1.0, tau=1.0):
    """Smallest ``(c1, c2, c3, c4)`` making every measured size fit the bound formulas."""
    unit = [theoretical_size(e, d, s, alpha, D, (1.0, 1.0, 1.0), 1.0, B, tau) for e in eps_list]
    c1 = max(m.depth_L / u["L_bound"] for m, u in zip(metas, unit))
    c2 = max(m.width_p / u["p_bound"] for m, u in zip(metas, unit))
    c3 = max(m.nonzeros_K / u["K_bound"] for m, u in zip(metas, unit))
    c4 = max(m.weight_bound_kappa / u["kappa_bound"] for m, u in zip(metas, unit))
    return (c1, c2, c3), c4


def kappa_constant(a, f, holder_scales):
    """``c4`` from an eps-independent inventory of every weight and bias the builders emit."""
    m = a.manifold
    B, r, R = m.coord_bound, a.r, f.sup_norm_R
    b = 1.0 / (2.0 * r)
    centre = max(float(np.linalg.norm(ch.center)) for ch in a.charts)
    items = [
        4.0,                                   # square-gadget and doubling weights
        b * (1.0 + r + centre),                # chart map weights and bias
        4.0 * B * B, 1.0 / (2.0 * B), 1.0,     # squared-distance head and output
        32.0 / (15.0 * r * r),                 # indicator output slope (ramp <= r^2/4)
        (R + 1.0) ** 2,                        # pairing gadget output, clip bias
        max(holder_scales) if holder_scales else 1.0,  # Taylor coefficients
    ]
    tau = m.reach
    tau2 = 0.0 if math.isinf(tau) else tau * tau
    return max(items) / max(1.0, B, tau2, math.sqrt(m.intrinsic_dim))


def build_manifest(asm, target_id, calibrated=None):
    """Reproducibility record for an assembled network."""
    meta = asm.network.meta.as_dict()
    if math.isinf(meta["output_bound_R"]):
        meta["output_bound_R"] = "inf"
    return {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "manifold": asm.atlas.manifold.to_dict(),
        "atlas_sha256": asm.atlas.digest(),
        "atlas_charts": asm.atlas.C_M,
        "target": target_id,
        "eps": asm.budget.eps,
        "budget": asm.budget.as_dict(),
        "meta": meta,
        "holder_scales": list(asm.holder_scales),
        "grid_N": list(asm.info.get("grid_N", [])),
        "calibrated": calibrated or {},
    }


def write_manifest(asm, target_id, path, calibrated=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(build_manifest(asm, target_id, calibrated), fh, indent=2, sort_keys=True)
