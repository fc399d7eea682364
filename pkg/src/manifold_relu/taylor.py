"""Per-chart Taylor models on a uniform grid and their ReLU realisation.

On chart ``i`` the pulled-back function ``g(z) = f(x) rho_i(x)`` with
``x = phi_i^{-1}(z)`` is approximated by ``sum_m zeta_m(z) P_m(z)`` where
``zeta_m`` is a product of trapezoids centred at ``m / N`` and ``P_m`` is
the degree-``s`` Taylor polynomial of ``g`` at ``m / N``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .atlas import chart_inverse, partition_weights
from .exceptions import (DomainError, GeometryError, NumericOverflowError, PreconditionError,
                         ResourceError)
from .gadgets import build_mult, trapezoid
from .network import (IDENTITY, RELU, ReluNetwork, SparseLayer, _fuse, _raw_layer, identity_network,
                      pad_to_depth, stack_parallel)

MAX_GRID_POINTS = 2_000_000
MAX_NONZEROS = 30_000_000


def multi_indices(d, order):
    """All ``s`` in ``N^d`` with ``|s| <= order``, sorted by degree then lexicographically."""
    out = [s for s in itertools.product(range(order + 1), repeat=d) if sum(s) <= order]
    return sorted(out, key=lambda s: (sum(s), tuple(-x for x in s)))


def _factorial(s):
    return float(np.prod([math.factorial(k) for k in s]))


def pullback(f, a, ch):
    """``g(Z) = f(x) * rho_i(x)`` with ``x = phi_i^{-1}(Z)``; zero outside the chart ball.

    A one-chart atlas has ``rho = 1`` and the pullback is ``f`` on the whole
    affine hull of the chart.
    """
    def g(Z):
        X = chart_inverse(a, ch, Z)
        if a.C_M == 1:
            return f(X)
        out = np.zeros(X.shape[0])
        near = np.flatnonzero(((X - ch.center) ** 2).sum(1) < ch.r * ch.r)
        if near.size:
            rho = partition_weights(a, X[near], strict=False)[:, ch.index]
            out[near] = f(X[near]) * rho
        return out
    return g


def _stencil(order, h):
    """Offsets and weights of the central difference of ``order`` with step ``h``."""
    if order == 0:
        return np.zeros(1), np.ones(1)
    i = np.arange(order + 1)
    offs = (order / 2.0 - i) * h
    w = np.array([(-1) ** k * math.comb(order, k) for k in i], dtype=np.float64) / h ** order
    return offs, w


def fd_derivative(g, Z, s):
    """Central finite-difference ``D^s g`` at the rows of ``Z``.

    The step for a derivative of total order ``k`` is ``1e-16 ** (1 / (k + 2))``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    k = sum(s)
    h = 1e-16 ** (1.0 / (k + 2))
    stencils = [_stencil(o, h) for o in s]
    total = np.zeros(Z.shape[0])
    for combo in itertools.product(*[range(len(st[0])) for st in stencils]):
        shift = np.array([stencils[j][0][c] for j, c in enumerate(combo)])
        weight = float(np.prod([stencils[j][1][c] for j, c in enumerate(combo)]))
        total += weight * g(Z + shift)
    return total


def _pilot_grid(d, n_per_dim):
    axes = [np.linspace(0.0, 1.0, n_per_dim)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def estimate_holder_scale(f, a, ch, n_pilot=None):
    """Twice the largest sampled derivative magnitude of the pullback on a pilot grid.

    Covers every derivative of order at most ``s`` and the ``alpha``-Hölder
    quotient of the order-``s`` derivatives between neighbouring grid nodes.
    """
    d = ch.d
    if n_pilot is None:
        n_pilot = 2001 if d == 1 else max(11, int(round(10000 ** (1.0 / d))))
    g = pullback(f, a, ch)
    Z = _pilot_grid(d, n_pilot)
    step = 1.0 / (n_pilot - 1)
    best = 0.0
    for s in multi_indices(d, f.s):
        D = fd_derivative(g, Z, s)
        if not np.isfinite(D).all():
            raise NumericOverflowError(f"non-finite derivative {s} on chart {ch.index}")
        best = max(best, float(np.abs(D).max()))
        if sum(s) == f.s:
            grid = D.reshape((n_pilot,) * d)
            for ax in range(d):
                q = np.abs(np.diff(grid, axis=ax)) / step ** f.alpha
                best = max(best, float(q.max()) if q.size else 0.0)
    return 2.0 * best


def grid_resolution(delta, s, alpha, d, holder_scale, r, max_points=MAX_GRID_POINTS):
    """Grid size ``N`` keeping the trapezoid-Taylor approximation error at ``delta / 2``."""
    if not 0 < delta < 1:
        raise PreconditionError(f"delta must lie in (0, 1), got {delta}")
    if not holder_scale >= 0:
        raise PreconditionError("holder_scale must be nonnegative")
    num = holder_scale * (2.0 * r) ** (1.0 - alpha) * 2.0 ** (d + s + 2) * d ** (s + alpha / 2.0)
    N = max(1, math.ceil((num / (delta * math.factorial(s))) ** (1.0 / (s + alpha))))
    if float(N + 1) ** d > max_points:
        raise ResourceError(f"grid of {N + 1}^{d} nodes exceeds the cap of {max_points}", required=N)
    return N


@dataclass(frozen=True)
class TaylorModel:
    """Sparse table of Taylor coefficients ``a[m, s]`` on the grid ``{0..N}^d``.

    ``nodes`` lists the grid points (rows of ``m``) that carry at least one
    nonzero coefficient; ``values[i, j]`` is the coefficient of
    ``multi[j]`` at ``nodes[i]``.
    """

    chart_index: int
    N: int
    d: int
    s_max: int
    multi: tuple
    nodes: np.ndarray
    values: np.ndarray
    holder_scale: float = 1.0
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def coeffs(self):
        out = {}
        for m, row in zip(map(tuple, self.nodes.tolist()), self.values):
            for s, v in zip(self.multi, row):
                if v != 0.0:
                    out[(m, s)] = float(v)
        return out

    @property
    def lam_mu(self):
        amax = float(np.abs(self.values).max()) if self.values.size else 0.0
        return max(self.holder_scale, amax)

    def to_dict(self):
        return {"chart_index": self.chart_index, "N": self.N, "d": self.d, "s_max": self.s_max,
                "holder_scale": self.holder_scale,
                "coefficients": [[list(m), list(s), v] for (m, s), v in sorted(self.coeffs.items())]}

    @classmethod
    def from_dict(cls, doc):
        d, s_max = int(doc["d"]), int(doc["s_max"])
        multi = tuple(multi_indices(d, s_max))
        col = {s: j for j, s in enumerate(multi)}
        rows = {}
        for m, s, v in doc["coefficients"]:
            rows.setdefault(tuple(m), np.zeros(len(multi)))[col[tuple(s)]] = v
        keys = sorted(rows)
        nodes = np.array(keys, dtype=np.int64).reshape(-1, d)
        values = np.array([rows[k] for k in keys]).reshape(-1, len(multi))
        return cls(int(doc["chart_index"]), int(doc["N"]), d, s_max, multi, nodes, values,
                   float(doc.get("holder_scale", 1.0)))

    def scaled(self, factor):
        return TaylorModel(self.chart_index, self.N, self.d, self.s_max, self.multi, self.nodes,
                           self.values * factor, self.holder_scale, dict(self.extras))


def constant_model(c, N, d=1, s_max=1, chart_index=0):
    """Model whose pullback is the constant ``c`` (useful as a test fixture)."""
    multi = tuple(multi_indices(d, s_max))
    nodes = np.array(list(itertools.product(range(N + 1), repeat=d)), dtype=np.int64)
    values = np.zeros((nodes.shape[0], len(multi)))
    values[:, 0] = c
    if c == 0:
        nodes, values = nodes[:0], values[:0]
    return TaylorModel(chart_index, N, d, s_max, multi, nodes, values, abs(c))


def taylor_coefficients(f, ch, a, N, holder_scale=None):
    """Finite-difference Taylor coefficients of the chart pullback on the ``N``-grid."""
    N = int(N)
    if N < 1:
        raise PreconditionError(f"N must be at least 1, got {N}")
    d = ch.d
    if float(N + 1) ** d > MAX_GRID_POINTS:
        raise ResourceError(f"grid of {N + 1}^{d} nodes exceeds the cap", required=N)
    multi = tuple(multi_indices(d, f.s))
    g = pullback(f, a, ch)
    grid = np.array(list(itertools.product(range(N + 1), repeat=d)), dtype=np.int64)
    Z = grid / N
    try:
        X = chart_inverse(a, ch, Z)
    except GeometryError:
        raise
    inside = np.linalg.norm(X - ch.center, axis=1) < ch.r
    if a.C_M == 1:
        inside[:] = True
    grid, Z = grid[inside], Z[inside]
    values = np.zeros((grid.shape[0], len(multi)))
    for j, s in enumerate(multi):
        D = fd_derivative(g, Z, s)
        bad = ~np.isfinite(D)
        if bad.any():
            raise NumericOverflowError(f"non-finite difference quotient for {s} at grid point {grid[bad][0].tolist()}")
        values[:, j] = D / _factorial(s)
    keep = np.any(values != 0.0, axis=1)
    if holder_scale is None:
        holder_scale = f.holder_scale if f.holder_scale is not None else estimate_holder_scale(f, a, ch)
    return TaylorModel(ch.index, N, d, f.s, multi, grid[keep], values[keep], float(holder_scale))


def _node_keys(nodes, N):
    w = (N + 1) ** np.arange(nodes.shape[1], dtype=np.int64)
    return nodes.astype(np.int64) @ w


def eval_taylor_model(tm, z):
    """Exact reference ``sum_m zeta_m(z) P_m(z)``; ``z`` is one point or an ``(n, d)`` batch in the unit cube."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != tm.d:
        raise DomainError(f"expected points of dimension {tm.d}")
    if np.any(Z < -1e-12) or np.any(Z > 1 + 1e-12):
        raise DomainError("evaluation point outside the unit cube")
    N = tm.N
    keys = _node_keys(tm.nodes, N)
    order = np.argsort(keys)
    keys = keys[order]
    vals = tm.values[order]
    expo = np.array(tm.multi, dtype=np.float64)
    out = np.zeros(Z.shape[0])
    base = np.rint(Z * N).astype(np.int64)
    for off in itertools.product((-1, 0, 1), repeat=tm.d):
        m = base + np.array(off)
        ok = np.all((m >= 0) & (m <= N), axis=1)
        zeta = np.prod(trapezoid(3.0 * N * (Z - m / N)), axis=1) * ok
        if keys.size == 0:
            continue
        k = _node_keys(np.clip(m, 0, N), N)
        pos = np.clip(np.searchsorted(keys, k), 0, keys.size - 1)
        hit = ok & (keys[pos] == k) & (zeta > 0)
        if not hit.any():
            continue
        y = Z[hit] - m[hit] / N
        mono = np.prod(y[:, None, :] ** expo[None, :, :], axis=2)
        out[hit] += zeta[hit] * (mono * vals[pos[hit]]).sum(1)
    return out[0] if single else out


def chain_error(delta, lam_mu, d, s_max):
    """Per-gadget multiplication error of the Taylor chain."""
    e = delta / (max(lam_mu, 1e-300) * 2.0 ** (d + s_max + 2) * d ** s_max * (d + s_max))
    return min(e, 0.5)


def _front(factors, N, d):
    """Lane network mapping ``z`` to the chain factors (state order) for node ``m = 0``.

    ``factors`` is a list of ``(coord, is_trapezoid)``.  Returns the network
    and the per-lane ``(coord, sign)`` used to shift layer-0 biases by ``m``.
    """
    n = len(factors)
    J = max(1, math.ceil(math.log2(1.5 * N)))
    lam = 3.0 * N / 2.0 ** J
    lanes = np.arange(2 * n)
    coords = np.repeat([c for c, _ in factors], 2)
    signs = np.tile([1.0, -1.0], n)
    psi = np.repeat([t for _, t in factors], 2)
    layers = [SparseLayer(lanes, coords, signs, np.zeros(2 * n), (2 * n, d))]
    diag = np.where(psi, 2.0, 1.0)
    for _ in range(J):
        layers.append(SparseLayer(lanes, lanes, diag, np.zeros(2 * n), (2 * n, 2 * n)))
    rows, cols, vals, bias = [], [], [], np.zeros(2 * n)
    for f, (_, is_psi) in enumerate(factors):
        p, q = 2 * f, 2 * f + 1
        if is_psi:
            rows += [p, p, q, q]
            cols += [p, q, p, q]
            vals += [-lam, -lam, -lam, -lam]
            bias[p], bias[q] = 2.0, 1.0
        else:
            rows += [p, q]
            cols += [p, q]
            vals += [1.0, 1.0]
    layers.append(SparseLayer(rows, cols, vals, bias, (2 * n, 2 * n)))
    layers.append(SparseLayer(np.repeat(np.arange(n), 2), lanes, signs, np.zeros(n), (n, 2 * n), IDENTITY))
    return ReluNetwork(layers), coords, signs


def _chain_core(n, mult):
    S = identity_network(n)
    for j in range(n - 1):
        rest = n - j - 2
        step = mult if rest == 0 else stack_parallel([mult, identity_network(rest)], share_input=False)
        S = _fuse(S, step)
    return S


def _tile(mat, count, offset_cols):
    nnz = mat.nnz
    k = np.arange(count, dtype=np.int64)
    indptr = np.concatenate([[0], (mat.indptr[1:].astype(np.int64)[None, :] + nnz * k[:, None]).ravel()])
    indices = np.tile(mat.indices.astype(np.int64), (count, 1))
    if offset_cols:
        indices += mat.shape[1] * k[:, None]
    return indptr, indices.ravel(), np.tile(mat.data, count)


def _csr(indptr, indices, data, shape):
    big = max(shape[1], data.size) >= 2**31 - 1
    idx = np.int64 if big else np.int32
    return sp.csr_matrix((data, indices.astype(idx), indptr.astype(idx)), shape=shape)


def _term_templates(tm, eps_chain):
    mult = build_mult(1.0, eps_chain)
    cores = {}
    templates = []
    for s in tm.multi:
        factors = [(k, True) for k in range(tm.d)] + [(k, False) for k in range(tm.d) for _ in range(s[k])]
        factors = factors[::-1]
        n = len(factors)
        if n not in cores:
            cores[n] = _chain_core(n, mult)
        front, coords, signs = _front(factors, tm.N, tm.d)
        templates.append((_fuse(front, cores[n]), coords, signs))
    return templates


def build_taylor_net(tm, delta, max_nonzeros=MAX_NONZEROS):
    """ReLU network on ``[0, 1]^d`` within ``delta / 2`` of :func:`eval_taylor_model`.

    Each nonzero ``a[m, s]`` contributes a chain of approximate products of
    ``d`` trapezoid factors and ``|s|`` monomial factors; terms whose
    trapezoid support misses ``z`` contribute exactly zero.
    """
    if not 0 < delta < 1:
        raise PreconditionError(f"delta must lie in (0, 1), got {delta}")
    eps_chain = chain_error(delta, tm.lam_mu, tm.d, tm.s_max)
    templates = _term_templates(tm, eps_chain)
    groups = []
    for j, (tpl, coords, signs) in enumerate(templates):
        live = np.flatnonzero(tm.values[:, j] != 0.0)
        if live.size:
            groups.append((tpl, coords, signs, live, tm.values[live, j]))
    if not groups:
        return ReluNetwork([SparseLayer([], [], [], [0.0], (1, tm.d), IDENTITY)])
    L = max(g[0].depth for g in groups)
    groups = [(pad_to_depth(t, L), c, s, live, a) for t, c, s, live, a in groups]
    need = sum(t.meta.nonzeros_K * live.size for t, _, _, live, _ in groups)
    if need > max_nonzeros:
        raise ResourceError(f"Taylor network needs about {need} nonzeros (cap {max_nonzeros})", required=need)
    layers = []
    for k in range(L):
        parts_ptr, parts_idx, parts_dat, biases = [], [], [], []
        nnz_off = col_off = rows = 0
        for tpl, coords, signs, live, coef in groups:
            mat, b = tpl.layers[k].matrix, tpl.layers[k].bias
            c = live.size
            if k == L - 1:
                idx = (mat.indices.astype(np.int64)[None, :] + mat.shape[1] * np.arange(c)[:, None]).ravel()
                parts_idx.append(idx + col_off)
                parts_dat.append((coef[:, None] * mat.data[None, :]).ravel())
                biases.append(float(coef.sum() * b[0]) if b[0] != 0.0 else 0.0)
                col_off += c * mat.shape[1]
                continue
            ptr, idx, dat = _tile(mat, c, offset_cols=(k > 0))
            parts_ptr.append(ptr[1:] + nnz_off)
            parts_idx.append(idx + (col_off if k > 0 else 0))
            parts_dat.append(dat)
            if k == 0:
                shift = tm.nodes[live][:, coords] / tm.N
                biases.append((b[None, :] - signs[None, :] * shift).ravel())
            else:
                biases.append(np.tile(b, c))
            nnz_off += dat.size
            col_off += c * mat.shape[1]
            rows += c * mat.shape[0]
        if k == L - 1:
            data = np.concatenate(parts_dat)
            mat = _csr(np.array([0, data.size]), np.concatenate(parts_idx), data, (1, col_off))
            layers.append(_raw_layer(mat, [sum(biases)], IDENTITY))
        else:
            n_in = tm.d if k == 0 else col_off
            data = np.concatenate(parts_dat)
            mat = _csr(np.concatenate([[0]] + parts_ptr), np.concatenate(parts_idx), data, (rows, n_in))
            layers.append(_raw_layer(mat, np.concatenate(biases), RELU))
    return ReluNetwork(layers)
