"""Chart atlases with tangent-plane projections and a bump partition of unity."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .exceptions import CoverageError, GeometryError, PreconditionError, ReachViolationError

DEFAULT_MARGIN = 0.3


@dataclass(frozen=True)
class Chart:
    """Tangent-plane chart ``phi(x) = b * (V.T @ (x - c) + u)``."""

    index: int
    center: np.ndarray
    basis: np.ndarray
    b: float
    u: np.ndarray
    r: float
    center_native: np.ndarray
    basis_native: np.ndarray

    @property
    def d(self):
        return self.basis.shape[1]

    def affine(self):
        """``(W, c)`` with ``phi(x) = W @ x + c``."""
        W = self.b * self.basis.T
        return W, self.b * (self.u - self.basis.T @ self.center)

    def to_dict(self):
        return {"index": self.index, "center": self.center.tolist(), "basis": self.basis.T.tolist(),
                "b": self.b, "u": self.u.tolist(), "r": self.r}


@dataclass(frozen=True)
class Atlas:
    """Charts covering a manifold plus the partition-of-unity bump."""

    manifold: object
    charts: tuple
    r: float
    margin: float
    seed: int
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def C_M(self):
        return len(self.charts)

    @property
    def centers(self):
        return np.array([ch.center for ch in self.charts])

    def to_dict(self):
        return {"manifold": self.manifold.to_dict(), "r": self.r, "margin": self.margin, "seed": self.seed,
                "charts": [ch.to_dict() for ch in self.charts]}

    def digest(self):
        """SHA-256 of the canonical JSON export."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def default_radius(m, margin=DEFAULT_MARGIN):
    if math.isinf(m.reach):
        return math.sqrt(m.intrinsic_dim) / (2.0 * (1.0 - margin))
    return 0.45 * m.reach


def _make_chart(m, index, p, r):
    Vn = m.tangent_native(p)
    d = Vn.shape[1]
    return Chart(
        index=index,
        center=m.embed(p[None, :])[0],
        basis=m.embedding @ Vn,
        b=1.0 / (2.0 * r),
        u=np.full(d, r),
        r=float(r),
        center_native=np.asarray(p, dtype=np.float64),
        basis_native=Vn,
    )


def _thin(P, radius):
    """Farthest-point subsample of ``P`` with covering radius at most ``radius``."""
    chosen = [0]
    dist = np.linalg.norm(P - P[0], axis=1)
    while dist.max() > radius:
        j = int(np.argmax(dist))
        chosen.append(j)
        np.minimum(dist, np.linalg.norm(P - P[j], axis=1), out=dist)
    return np.array(chosen)


def _greedy_cover(P, cand, radius):
    """Greedy set cover of the rows of ``P`` by balls around rows of ``P[cand]``.

    While a candidate still gains at least 90% of a typical ball, the one
    closest to the previously chosen center wins, so the cover sweeps
    outward in one front instead of leaving fragmented gaps; the leftovers
    are then covered by plain greedy.
    """
    lists = cKDTree(P).query_ball_point(P[cand], radius)
    lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    indptr = np.concatenate([[0], np.cumsum(lens)])
    A = sp.csr_matrix((np.ones(indptr[-1]), np.concatenate(lists).astype(np.int64), indptr),
                      shape=(len(cand), P.shape[0]))
    AT = A.T.tocsr()
    counts = lens.astype(np.float64)
    full = float(np.median(lens))
    uncovered = np.ones(P.shape[0], dtype=bool)
    C = P[cand]
    chosen = []
    extra = []
    tree = cKDTree(P)
    while uncovered.any():
        top = counts.max()
        if top <= 0:
            j = int(np.argmax(uncovered))
            extra.append(j)
            uncovered[tree.query_ball_point(P[j], radius)] = False
            continue
        ok = np.flatnonzero(counts >= min(top, 0.9 * full))
        if chosen:
            best = int(ok[np.argmin(np.linalg.norm(C[ok] - C[chosen[-1]], axis=1))])
        else:
            best = int(ok[0])
        chosen.append(best)
        pts = A.indices[A.indptr[best]:A.indptr[best + 1]]
        pts = pts[uncovered[pts]]
        uncovered[pts] = False
        hit = AT[pts]
        np.subtract.at(counts, hit.indices, 1.0)
    return [cand[j] for j in chosen] + extra


def build_atlas(m, r=None, seed=0, margin=DEFAULT_MARGIN, n_dense=None, n_check=20000, max_iter=50):
    """Cover ``m`` with charts of radius ``r``.

    Centers are picked by greedy set cover over a farthest-point candidate
    set drawn from a dense sample, so that every sample lies within
    ``r * (1 - margin)`` of a center.  A fresh sample is then checked and
    any uncovered point is promoted to a center.
    """
    if not 0 <= margin < 1:
        raise PreconditionError(f"margin must lie in [0, 1), got {margin}")
    if r is None:
        r = default_radius(m, margin)
    r = float(r)
    if not r > 0:
        raise PreconditionError(f"r must be positive, got {r}")
    if math.isfinite(m.reach) and not r < m.reach / 2.0:
        raise ReachViolationError(f"chart radius {r} must be below reach/2 = {m.reach / 2}")
    cover = r * (1.0 - margin)
    if m.kind == "flat_cube":
        if math.sqrt(m.dim) / 2.0 > cover:
            raise CoverageError(f"a single chart of radius {r} cannot cover the unit cube with margin {margin}")
        p = np.full(m.dim, 0.5)
        chart = _make_chart(m, 0, p, r)
        return Atlas(m, (chart,), r, float(margin), int(seed), {"multiplicity": 1.0})
    d = m.intrinsic_dim
    if n_dense is None:
        n_dense = int(min(30000, max(20000, 200 * m.surface_area / cover ** d)))
    P = m.native(m.sample(n_dense, seed))
    target = cover * 0.97
    spacing = float(cKDTree(P).query(P, k=2)[0][:, 1].max())
    cand = np.arange(0, P.shape[0], max(1, P.shape[0] // 4000))
    picked = _greedy_cover(P, cand, target - min(spacing, 0.1 * target))
    centers = [P[j] for j in picked]
    rounds = 0
    for it in range(max_iter):
        Q = m.native(m.sample(n_check, np.random.SeedSequence([int(seed), 1, it]).generate_state(1)[0]))
        C = np.array(centers)
        dmin, _ = cKDTree(C).query(Q)
        miss = Q[dmin > target]
        if miss.shape[0] == 0:
            break
        rounds += 1
        while miss.shape[0]:
            centers.append(miss[0])
            miss = miss[np.linalg.norm(miss - miss[0], axis=1) > target]
    else:
        raise CoverageError(f"cover not achieved after {max_iter} refinement rounds")
    charts = tuple(_make_chart(m, i, p, r) for i, p in enumerate(centers))
    C = np.array(centers)
    d2 = (P * P).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * P @ C.T
    mult = (d2 < r * r).sum(1).mean()
    return Atlas(m, charts, r, float(margin), int(seed), {"multiplicity": float(mult), "refinement_rounds": rounds})


def project_chart(ch, x):
    """``phi(x) = b * (V.T @ (x - c) + u)`` for one point or a batch."""
    x = np.asarray(x, dtype=np.float64)
    return ch.b * ((x - ch.center) @ ch.basis + ch.u)


def chart_inverse(a, ch, Z):
    """Manifold points whose chart coordinates are ``Z`` (shape ``(n, d)``)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    T = Z / ch.b - ch.u
    try:
        P = a.manifold.lift(ch.center_native, ch.basis_native, T)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"chart {ch.index} inverse failed: {exc}") from exc
    return a.manifold.embed(P)


def bump(t):
    """``exp(1 - 1/(1 - t))`` on ``t < 1``, zero elsewhere."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    inside = t < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside]))
    return out


def partition_weights(a, x, strict=True):
    """Partition-of-unity weights ``rho_i(x)``; shape ``(C_M,)`` or ``(n, C_M)``.

    A point where every bump vanishes raises :class:`CoverageError`, or gets
    all-zero weights when ``strict`` is false.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    C = a.centers
    d2 = np.empty((X.shape[0], C.shape[0]))
    for i in range(C.shape[0]):
        diff = X - C[i]
        d2[:, i] = np.einsum("ij,ij->i", diff, diff)
    w = bump(d2 / a.r ** 2)
    tot = w.sum(1, keepdims=True)
    empty = tot[:, 0] == 0.0
    if empty.any():
        if strict:
            raise CoverageError(f"point {int(np.argmax(empty))} is not inside any chart")
        tot[empty] = 1.0
    rho = w / tot
    return rho[0] if single else rho


def thickness_bound(d):
    """``d log d + d log log d + 5d`` with the log-log term clamped at 0 for ``d < 3``."""
    ll = math.log(math.log(d)) if d >= 3 else 0.0
    lg = math.log(d) if d > 1 else 0.0
    return d * lg + d * ll + 5.0 * d


def chart_count_bound(a):
    """``ceil(SA / r**d * T_d)`` (reported for comparison, not enforced)."""
    m = a.manifold
    d = m.intrinsic_dim
    return float(math.ceil(m.surface_area / a.r ** d * thickness_bound(d)))


def arc_cover_count(radius, cover):
    """Minimum number of chord-radius ``cover`` balls covering a circle of ``radius``."""
    return math.ceil(2.0 * math.pi / (4.0 * math.asin(min(1.0, cover / (2.0 * radius)))))
