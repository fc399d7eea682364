"""Benchmark manifolds with analytic reach, uniform samplers and local chart inverses.

Every manifold lives in a small native space (``R^2`` for the circle,
``R^3`` for the sphere and torus, ``R^d`` for the flat cube) and is
embedded isometrically into ``R^D`` as ``x = offset + E @ p``.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .exceptions import GeometryError, PreconditionError

_BLOCK = 4096
KINDS = ("circle", "sphere2", "torus", "flat_cube")


def _block_rng(seed, block):
    # ``seed`` may be an int or a sequence of ints (a derived stream key)
    key = [int(s) for s in np.atleast_1d(seed)] + [int(block)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


class Manifold:
    """Embedded benchmark manifold.

    Parameters
    ----------
    kind : {"circle", "sphere2", "torus", "flat_cube"}
    ambient_dim : int
        ``D``; must be at least the native dimension.
    radius : float
        Radius of the circle or sphere.
    major, minor : float
        Torus radii (``major > minor``).
    dim : int
        Intrinsic dimension of ``flat_cube``.
    rotation_seed : int or None
        ``None`` embeds into the leading coordinates; an integer draws a
        random orthonormal frame.
    offset : array_like or None
        Translation added after embedding.
    """

    def __init__(self, kind, ambient_dim, radius=1.0, major=2.0, minor=0.5, dim=1,
                 rotation_seed=None, offset=None):
        if kind not in KINDS:
            raise PreconditionError(f"unknown manifold kind {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.radius = float(radius)
        self.major = float(major)
        self.minor = float(minor)
        self.dim = int(dim)
        self.rotation_seed = rotation_seed
        if kind == "circle":
            native, d = 2, 1
        elif kind == "flat_cube":
            native, d = self.dim, self.dim
        else:
            native, d = 3, 2
        if kind in ("circle", "sphere2") and not self.radius > 0:
            raise PreconditionError("radius must be positive")
        if kind == "torus" and not (self.major > self.minor > 0):
            raise PreconditionError("torus needs major > minor > 0")
        if d < 1:
            raise PreconditionError("intrinsic dimension must be at least 1")
        D = int(ambient_dim)
        if D < native:
            raise PreconditionError(f"{kind} needs ambient_dim >= {native}, got {D}")
        self.native_dim = native
        self.intrinsic_dim = d
        self.ambient_dim = D
        if rotation_seed is None:
            E = np.eye(D)[:, :native]
        else:
            g = np.random.default_rng(int(rotation_seed))
            Q, R = np.linalg.qr(g.standard_normal((D, native)))
            E = Q * np.sign(np.diag(R))
        self.embedding = E
        self.offset = np.zeros(D) if offset is None else np.asarray(offset, dtype=np.float64).ravel()
        if self.offset.size != D:
            raise PreconditionError("offset length must equal ambient_dim")

    # -- scalar geometry -------------------------------------------------
    @property
    def reach(self):
        if self.kind in ("circle", "sphere2"):
            return self.radius
        if self.kind == "torus":
            return min(self.minor, self.major - self.minor)
        return math.inf

    @property
    def surface_area(self):
        if self.kind == "circle":
            return 2.0 * math.pi * self.radius
        if self.kind == "sphere2":
            return 4.0 * math.pi * self.radius ** 2
        if self.kind == "torus":
            return 4.0 * math.pi ** 2 * self.major * self.minor
        return 1.0

    @property
    def coord_bound(self):
        """``B`` with ``|x_j| <= B`` for every point and coordinate."""
        E, o = self.embedding, self.offset
        if self.kind in ("circle", "sphere2"):
            per = np.abs(o) + self.radius * np.linalg.norm(E, axis=1)
        elif self.kind == "torus":
            ext = self.major + self.minor
            per = np.abs(o) + ext * np.linalg.norm(E[:, :2], axis=1) + self.minor * np.abs(E[:, 2])
        else:
            per = np.abs(o + E.sum(axis=1) / 2.0) + np.abs(E).sum(axis=1) / 2.0
        return float(per.max())

    # -- embedding -------------------------------------------------------
    def embed(self, P):
        return self.offset + np.asarray(P) @ self.embedding.T

    def native(self, X):
        return (np.asarray(X, dtype=np.float64) - self.offset) @ self.embedding

    def constraint_residual(self, X):
        """Distance-like residual of ``X`` from the manifold (0 on it)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        P = self.native(X)
        off = np.linalg.norm(X - self.embed(P), axis=1)
        if self.kind in ("circle", "sphere2"):
            res = np.abs(np.linalg.norm(P, axis=1) - self.radius)
        elif self.kind == "torus":
            rho = np.hypot(P[:, 0], P[:, 1])
            res = np.abs(np.hypot(rho - self.major, P[:, 2]) - self.minor)
        else:
            res = np.linalg.norm(P - np.clip(P, 0.0, 1.0), axis=1)
        return off + res

    # -- sampling --------------------------------------------------------
    def _native_block(self, rng, n):
        if self.kind == "circle":
            t = rng.uniform(0.0, 2.0 * math.pi, n)
            return self.radius * np.column_stack([np.cos(t), np.sin(t)])
        if self.kind == "sphere2":
            g = rng.standard_normal((n, 3))
            return self.radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        if self.kind == "flat_cube":
            return rng.uniform(0.0, 1.0, (n, self.dim))
        R, r = self.major, self.minor
        out = np.empty((0, 3))
        while out.shape[0] < n:
            th = rng.uniform(0.0, 2.0 * math.pi, n)
            ph = rng.uniform(0.0, 2.0 * math.pi, n)
            keep = rng.uniform(0.0, R + r, n) < R + r * np.cos(ph)
            th, ph = th[keep], ph[keep]
            ring = R + r * np.cos(ph)
            out = np.vstack([out, np.column_stack([ring * np.cos(th), ring * np.sin(th), r * np.sin(ph)])])
        return out[:n]

    def sample(self, n, seed):
        """``n`` points uniform on the manifold; prefixes agree across ``n`` for a fixed seed."""
        n = int(n)
        if n < 1:
            raise PreconditionError(f"n must be positive, got {n}")
        blocks = []
        for b in range(-(-n // _BLOCK)):
            blocks.append(self._native_block(_block_rng(seed, b), _BLOCK))
        return self.embed(np.vstack(blocks)[:n])

    # -- tangent frames and chart inverses ------------------------------
    def _torus_angles(self, P):
        th = np.arctan2(P[..., 1], P[..., 0])
        rho = np.hypot(P[..., 0], P[..., 1])
        ph = np.arctan2(P[..., 2], rho - self.major)
        return th, ph

    def _torus_point(self, th, ph):
        ring = self.major + self.minor * np.cos(ph)
        return np.stack([ring * np.cos(th), ring * np.sin(th), self.minor * np.sin(ph)], axis=-1)

    def tangent_native(self, p):
        """Orthonormal native tangent basis (native_dim x d) at native point ``p``."""
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "circle":
            return np.array([[-p[1]], [p[0]]]) / self.radius
        if self.kind == "flat_cube":
            return np.eye(self.dim)
        if self.kind == "sphere2":
            n = p / np.linalg.norm(p)
            e = np.eye(3)[np.argmin(np.abs(n))]
            t1 = e - (e @ n) * n
            t1 /= np.linalg.norm(t1)
            t2 = np.cross(n, t1)
            return np.column_stack([t1, t2])
        th, ph = self._torus_angles(p)
        e_th = np.array([-math.sin(th), math.cos(th), 0.0])
        e_ph = np.array([-math.sin(ph) * math.cos(th), -math.sin(ph) * math.sin(th), math.cos(ph)])
        return np.column_stack([e_th, e_ph])

    def normal_native(self, p):
        """Native normal directions at ``p`` (columns); empty for the flat cube."""
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "circle":
            return (p / np.linalg.norm(p))[:, None]
        if self.kind == "sphere2":
            return (p / np.linalg.norm(p))[:, None]
        if self.kind == "torus":
            th, ph = self._torus_angles(p)
            return np.array([[math.cos(ph) * math.cos(th)], [math.cos(ph) * math.sin(th)], [math.sin(ph)]])
        return np.zeros((self.dim, 0))

    def lift(self, center_native, basis_native, T):
        """Native points ``p`` on the manifold with ``basis.T @ (p - center) = t`` near ``center``.

        ``T`` has shape ``(n, d)``.  Raises :class:`GeometryError` when the
        tangent offset is too large for the local graph.
        """
        T = np.atleast_2d(np.asarray(T, dtype=np.float64))
        c, V = center_native, basis_native
        if self.kind == "flat_cube":
            return c + T @ V.T
        if self.kind == "circle":
            s = T[:, 0] / self.radius
            if np.any(np.abs(s) > 1.0):
                raise GeometryError("tangent offset exceeds the circle radius")
            th = math.atan2(c[1], c[0]) + np.arcsin(s)
            return self.radius * np.column_stack([np.cos(th), np.sin(th)])
        if self.kind == "sphere2":
            q = (T * T).sum(1)
            if np.any(q > self.radius ** 2):
                raise GeometryError("tangent offset exceeds the sphere radius")
            n = c / np.linalg.norm(c)
            return T @ V.T + np.sqrt(self.radius ** 2 - q)[:, None] * n
        return self._torus_lift(c, V, T)

    def _torus_lift(self, c, V, T):
        if T.shape[0] == 0:
            return np.zeros((0, 3))
        th0, ph0 = self._torus_angles(c)
        ang = np.tile([th0, ph0], (T.shape[0], 1)).astype(np.float64)
        for _ in range(60):
            th, ph = ang[:, 0], ang[:, 1]
            P = self._torus_point(th, ph)
            F = (P - c) @ V - T
            ring = self.major + self.minor * np.cos(ph)
            dth = np.stack([-ring * np.sin(th), ring * np.cos(th), np.zeros_like(th)], axis=-1)
            dph = np.stack([-self.minor * np.sin(ph) * np.cos(th), -self.minor * np.sin(ph) * np.sin(th),
                            self.minor * np.cos(ph)], axis=-1)
            J = np.stack([dth @ V, dph @ V], axis=-1)
            step = np.linalg.solve(J, F[..., None])[..., 0]
            ang -= step
            if np.abs(step).max() < 1e-15:
                break
        P = self._torus_point(ang[:, 0], ang[:, 1])
        if np.abs((P - c) @ V - T).max() > 1e-10:
            raise GeometryError("torus chart inverse did not converge")
        return P

    def intrinsic_angle(self, X):
        """Angle parameter of circle points."""
        if self.kind != "circle":
            raise PreconditionError("intrinsic_angle is only defined for the circle")
        P = self.native(X)
        return np.arctan2(P[:, 1], P[:, 0])

    # -- serialisation ---------------------------------------------------
    def to_dict(self):
        doc = {"kind": self.kind, "ambient_dim": self.ambient_dim}
        if self.kind in ("circle", "sphere2"):
            doc["radius"] = self.radius
        elif self.kind == "torus":
            doc["major"], doc["minor"] = self.major, self.minor
        else:
            doc["dim"] = self.dim
        if self.rotation_seed is not None:
            doc["rotation_seed"] = int(self.rotation_seed)
        if np.any(self.offset):
            doc["offset"] = self.offset.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        kind = doc.pop("kind")
        known = {"ambient_dim", "radius", "major", "minor", "dim", "rotation_seed", "offset"}
        extra = set(doc) - known - {"atlas"}
        if extra:
            raise PreconditionError(f"unknown manifold fields: {sorted(extra)}")
        doc.pop("atlas", None)
        return cls(kind, **doc)

    def __repr__(self):
        return f"Manifold({self.to_dict()})"


def sample_points(m, n, seed):
    """``n`` uniform samples of ``m`` as an ``(n, D)`` array."""
    return m.sample(n, seed)


def load_manifold_spec(path):
    """Read a manifold spec file; returns ``(Manifold, atlas options dict)``."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    opts = dict(doc.get("atlas", {}))
    return Manifold.from_dict(doc), opts
