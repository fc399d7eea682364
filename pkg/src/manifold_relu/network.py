"""Sparse feed-forward ReLU networks with exact composition primitives.

Layers hold a canonical CSR matrix (sorted column indices, no duplicates,
no stored zeros) plus a dense bias.  A network is an immutable tuple of
layers; only the final layer may be affine without a ReLU.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import InputShapeError, NumericOverflowError, PreconditionError

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)

# Working-set cap for one evaluation chunk (width x batch x 8 bytes).
_EVAL_BYTES = 256 * 2**20


def _index_dtype(n):
    return np.int32 if n < 2**31 - 1 else np.int64


class SparseLayer:
    """One affine map ``W @ x + b`` followed by ``activation``.

    Parameters
    ----------
    rows, cols, vals : array_like
        Coordinate triplets of ``W``.  Duplicated ``(row, col)`` pairs are
        rejected; explicit zeros are dropped.
    bias : array_like
        Dense bias of length ``shape[0]``.
    shape : tuple of int
        ``(output_dim, input_dim)``.
    activation : {"relu", "identity"}
    """

    __slots__ = ("matrix", "bias", "activation")

    def __init__(self, rows, cols, vals, bias, shape, activation=RELU):
        n_out, n_in = int(shape[0]), int(shape[1])
        if n_out < 1 or n_in < 1:
            raise InputShapeError(f"layer shape must be positive, got {shape}")
        if activation not in _ACTIVATIONS:
            raise PreconditionError(f"unknown activation {activation!r}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        bias = np.array(bias, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise InputShapeError("triplet arrays differ in length")
        if bias.size != n_out:
            raise InputShapeError(f"bias has length {bias.size}, expected {n_out}")
        if rows.size and (rows.min() < 0 or rows.max() >= n_out or cols.min() < 0 or cols.max() >= n_in):
            raise InputShapeError("triplet index out of range")
        if not (np.isfinite(vals).all() and np.isfinite(bias).all()):
            raise NumericOverflowError("non-finite weight or bias")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.argmax(dup))
                raise PreconditionError(f"duplicate triplet at ({rows[i]}, {cols[i]})")
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        indptr = np.zeros(n_out + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_out), out=indptr[1:])
        idx = _index_dtype(max(n_in, vals.size))
        mat = sp.csr_matrix((vals, cols.astype(idx), indptr.astype(idx)), shape=(n_out, n_in))
        self._set(mat, bias, activation)

    def _set(self, mat, bias, activation):
        mat.data.flags.writeable = False
        mat.indices.flags.writeable = False
        mat.indptr.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", activation)

    def __setattr__(self, name, value):
        raise AttributeError("SparseLayer is immutable")

    @classmethod
    def from_csr(cls, mat, bias, activation=RELU):
        """Wrap a CSR matrix, canonicalising it (sorted, summed, zero-free)."""
        mat = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        mat.sum_duplicates()
        mat.eliminate_zeros()
        mat.sort_indices()
        bias = np.array(bias, dtype=np.float64).ravel()
        if bias.size != mat.shape[0]:
            raise InputShapeError(f"bias has length {bias.size}, expected {mat.shape[0]}")
        if not (np.isfinite(mat.data).all() and np.isfinite(bias).all()):
            raise NumericOverflowError("non-finite weight or bias")
        if activation not in _ACTIVATIONS:
            raise PreconditionError(f"unknown activation {activation!r}")
        obj = cls.__new__(cls)
        obj._set(mat, bias, activation)
        return obj

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_out(self):
        return self.matrix.shape[0]

    @property
    def n_in(self):
        return self.matrix.shape[1]

    def triplets(self):
        """Return ``(rows, cols, vals)`` sorted by row then column."""
        m = self.matrix
        rows = np.repeat(np.arange(m.shape[0], dtype=np.int64), np.diff(m.indptr))
        return rows, m.indices.astype(np.int64), m.data.copy()

    def with_activation(self, activation):
        return SparseLayer.from_csr(self.matrix, self.bias, activation)

    def nonzeros(self):
        return int(self.matrix.nnz + np.count_nonzero(self.bias))

    def max_abs(self):
        w = float(np.abs(self.matrix.data).max()) if self.matrix.nnz else 0.0
        b = float(np.abs(self.bias).max()) if self.bias.size else 0.0
        return max(w, b)

    def apply(self, H):
        """Apply to a column-batch ``H`` of shape ``(n_in, batch)``."""
        out = self.matrix @ H
        out += self.bias[:, None]
        if self.activation == RELU:
            np.maximum(out, 0.0, out=out)
        return out

    def __eq__(self, other):
        if not isinstance(other, SparseLayer):
            return NotImplemented
        a, b = self.matrix, other.matrix
        return (
            self.activation == other.activation
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.bias, other.bias)
        )

    __hash__ = None

    def __repr__(self):
        return f"SparseLayer(shape={self.shape}, nnz={self.matrix.nnz}, activation={self.activation!r})"


@dataclass(frozen=True)
class NetworkMeta:
    """Size summary: depth ``L``, width ``p``, nonzeros ``K``, weight bound ``kappa``, output bound ``R``."""

    depth_L: int
    width_p: int
    nonzeros_K: int
    weight_bound_kappa: float
    output_bound_R: float = math.inf

    def as_dict(self):
        return {
            "depth_L": self.depth_L,
            "width_p": self.width_p,
            "nonzeros_K": self.nonzeros_K,
            "weight_bound_kappa": self.weight_bound_kappa,
            "output_bound_R": self.output_bound_R,
        }


class ReluNetwork:
    """Immutable chain of :class:`SparseLayer` objects.

    Calling the network on an array of shape ``(n, input_dim)`` returns
    ``(n, output_dim)``; a 1-d input is treated as a single point.
    """

    __slots__ = ("layers", "input_dim", "output_dim", "output_bound")

    def __init__(self, layers, output_bound=math.inf):
        layers = tuple(layers)
        if not layers:
            raise PreconditionError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if not isinstance(a, SparseLayer):
                raise PreconditionError(f"layer {k} is not a SparseLayer")
            if a.n_out != b.n_in:
                raise InputShapeError(f"layer {k} outputs {a.n_out} but layer {k + 1} takes {b.n_in}")
            if a.activation != RELU:
                raise PreconditionError(f"only the final layer may be affine (layer {k} is {a.activation})")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_dim", layers[0].n_in)
        object.__setattr__(self, "output_dim", layers[-1].n_out)
        object.__setattr__(self, "output_bound", float(output_bound))

    def __setattr__(self, name, value):
        raise AttributeError("ReluNetwork is immutable")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def meta(self):
        return measure_meta(self)

    def __call__(self, X):
        return eval_network(self, X)

    def forward(self, X, stop=None):
        """Evaluate the first ``stop`` layers (all when ``None``); returns ``(n, width)``."""
        X, single = _as_batch(X, self.input_dim)
        layers = self.layers if stop is None else self.layers[:stop]
        if not layers:
            return X[0] if single else X.copy()
        width = max(max(l.n_out for l in layers), self.input_dim)
        chunk = max(1, min(4096, _EVAL_BYTES // (8 * width)))
        out = np.empty((X.shape[0], layers[-1].n_out))
        for start in range(0, X.shape[0], chunk):
            H = np.ascontiguousarray(X[start:start + chunk].T)
            for k, layer in enumerate(layers):
                H = layer.apply(H)
                if not np.isfinite(H).all():
                    raise NumericOverflowError(f"non-finite activation after layer {k}")
            out[start:start + chunk] = H.T
        return out[0] if single else out

    def __eq__(self, other):
        if not isinstance(other, ReluNetwork):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(a == b for a, b in zip(self.layers, other.layers))

    __hash__ = None

    def __repr__(self):
        m = measure_meta(self)
        return (f"ReluNetwork({self.input_dim}->{self.output_dim}, L={m.depth_L}, "
                f"p={m.width_p}, K={m.nonzeros_K})")

    def to_dict(self):
        out = {"input_dim": self.input_dim, "output_dim": self.output_dim, "layers": []}
        for layer in self.layers:
            r, c, v = layer.triplets()
            out["layers"].append({
                "rows": layer.n_out,
                "cols": layer.n_in,
                "triplets": [[int(a), int(b), float(x)] for a, b, x in zip(r, c, v)],
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            })
        if math.isfinite(self.output_bound):
            out["output_bound"] = self.output_bound
        return out

    @classmethod
    def from_dict(cls, doc):
        layers = []
        for ld in doc["layers"]:
            t = np.asarray(ld["triplets"], dtype=np.float64).reshape(-1, 3)
            rows = t[:, 0].astype(np.int64)
            cols = t[:, 1].astype(np.int64)
            layers.append(SparseLayer(rows, cols, t[:, 2], ld["bias"], (ld["rows"], ld["cols"]), ld["activation"]))
        net = cls(layers, doc.get("output_bound", math.inf))
        if net.input_dim != doc["input_dim"] or net.output_dim != doc["output_dim"]:
            raise InputShapeError("declared dimensions disagree with the layers")
        return net


def _as_batch(X, dim):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise InputShapeError(f"expected input of dimension {dim}, got shape {np.shape(X)}")
    return X, single


def eval_network(net, x):
    """Forward pass of ``net`` on one point or a batch of points."""
    return net.forward(x)


def measure_meta(net):
    """Exact depth, width, nonzero count and weight bound of ``net``."""
    return NetworkMeta(
        depth_L=net.depth,
        width_p=max(l.n_out for l in net.layers),
        nonzeros_K=sum(l.nonzeros() for l in net.layers),
        weight_bound_kappa=max(l.max_abs() for l in net.layers),
        output_bound_R=net.output_bound,
    )


def from_affine(W, b):
    """Single affine layer computing ``W @ x + b``."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).ravel()
    if not (np.isfinite(W).all() and np.isfinite(b).all()):
        raise NumericOverflowError("affine map has non-finite entries")
    r, c = np.nonzero(W)
    return ReluNetwork([SparseLayer(r, c, W[r, c], b, W.shape, IDENTITY)])


def identity_network(n):
    """Affine identity on ``R^n``."""
    return from_affine(np.eye(n), np.zeros(n))


def _lane_rows(layer):
    """Turn an affine layer into interleaved ReLU lanes ``(+row, -row)``."""
    m = layer.matrix.tocoo()
    n = layer.n_out
    rows = np.concatenate([2 * m.row.astype(np.int64), 2 * m.row.astype(np.int64) + 1])
    cols = np.concatenate([m.col, m.col]).astype(np.int64)
    vals = np.concatenate([m.data, -m.data])
    bias = np.empty(2 * n)
    bias[0::2] = layer.bias
    bias[1::2] = -layer.bias
    return SparseLayer(rows, cols, vals, bias, (2 * n, layer.n_in), RELU)


def _lane_cols(layer):
    """Expand each input column ``j`` of ``layer`` into ``(2j, 2j+1)`` with weights ``(w, -w)``."""
    m = layer.matrix.tocoo()
    rows = np.concatenate([m.row, m.row]).astype(np.int64)
    cols = np.concatenate([2 * m.col.astype(np.int64), 2 * m.col.astype(np.int64) + 1])
    vals = np.concatenate([m.data, -m.data])
    return SparseLayer(rows, cols, vals, layer.bias, (layer.n_out, 2 * layer.n_in), layer.activation)


def _passthrough(n, activation):
    eye = np.arange(n)
    return SparseLayer(eye, eye, np.ones(n), np.zeros(n), (n, n), activation)


def compose_serial(first, second):
    """Network computing ``second(first(x))`` without arithmetic across the seam.

    When ``first`` ends affinely its last layer is split into ReLU lanes
    ``(v, -v)`` and ``second`` reads them with weights ``(+w, -w)``.  The
    result is therefore bitwise the composition of the two evaluations
    except for the order of the two-term lane sums.
    """
    if first.output_dim != second.input_dim:
        raise InputShapeError(f"cannot feed {first.output_dim} outputs into {second.input_dim} inputs")
    last = first.layers[-1]
    if last.activation == RELU:
        layers = first.layers + second.layers
    else:
        layers = first.layers[:-1] + (_lane_rows(last), _lane_cols(second.layers[0])) + second.layers[1:]
    return ReluNetwork(layers, second.output_bound)


def pad_to_depth(net, L):
    """Equivalent network with exactly ``L`` layers.

    The affine output is carried as lane pairs ``p = ReLU(v), q = ReLU(-v)``
    re-paired each added layer as ``(ReLU(p - q), ReLU(q - p))`` and
    recombined as ``p - q`` at the end.
    """
    extra = int(L) - net.depth
    if extra < 0:
        raise PreconditionError(f"cannot pad depth {net.depth} down to {L}")
    if extra == 0:
        return net
    last = net.layers[-1]
    n = last.n_out
    if last.activation == RELU:
        mid = [_passthrough(n, RELU) for _ in range(extra - 1)]
        return ReluNetwork(net.layers + tuple(mid) + (_passthrough(n, IDENTITY),), net.output_bound)
    even = 2 * np.arange(n)
    repair = SparseLayer(
        np.concatenate([even, even, even + 1, even + 1]),
        np.concatenate([even, even + 1, even, even + 1]),
        np.concatenate([np.ones(n), -np.ones(n), -np.ones(n), np.ones(n)]),
        np.zeros(2 * n), (2 * n, 2 * n), RELU,
    )
    out = SparseLayer(
        np.concatenate([np.arange(n), np.arange(n)]),
        np.concatenate([even, even + 1]),
        np.concatenate([np.ones(n), -np.ones(n)]),
        np.zeros(n), (n, 2 * n), IDENTITY,
    )
    layers = net.layers[:-1] + (_lane_rows(last),) + (repair,) * (extra - 1) + (out,)
    return ReluNetwork(layers, net.output_bound)


def _affine_output(net):
    if net.layers[-1].activation == IDENTITY:
        return net
    return ReluNetwork(net.layers + (_passthrough(net.output_dim, IDENTITY),), net.output_bound)


def _block_diag(layers, activation):
    """Block-diagonal layer from a list of layers (disjoint inputs and outputs)."""
    mats = [l.matrix for l in layers]
    n_out = sum(m.shape[0] for m in mats)
    n_in = sum(m.shape[1] for m in mats)
    nnz = sum(m.nnz for m in mats)
    idx = _index_dtype(max(n_in, nnz))
    indptr = [np.zeros(1, dtype=np.int64)]
    indices, data = [], []
    off_nnz = off_in = 0
    for m in mats:
        indptr.append(m.indptr[1:].astype(np.int64) + off_nnz)
        indices.append(m.indices.astype(np.int64) + off_in)
        data.append(m.data)
        off_nnz += m.nnz
        off_in += m.shape[1]
    mat = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices).astype(idx), np.concatenate(indptr).astype(idx)),
        shape=(n_out, n_in),
    )
    obj = SparseLayer.__new__(SparseLayer)
    obj._set(mat, np.concatenate([l.bias for l in layers]), activation)
    return obj


def _vstack(layers, activation):
    """Stack layers sharing the same input."""
    mats = [l.matrix for l in layers]
    n_out = sum(m.shape[0] for m in mats)
    n_in = mats[0].shape[1]
    nnz = sum(m.nnz for m in mats)
    idx = _index_dtype(max(n_in, nnz))
    indptr = [np.zeros(1, dtype=np.int64)]
    off = 0
    for m in mats:
        indptr.append(m.indptr[1:].astype(np.int64) + off)
        off += m.nnz
    mat = sp.csr_matrix(
        (np.concatenate([m.data for m in mats]),
         np.concatenate([m.indices for m in mats]).astype(idx),
         np.concatenate(indptr).astype(idx)),
        shape=(n_out, n_in),
    )
    obj = SparseLayer.__new__(SparseLayer)
    obj._set(mat, np.concatenate([l.bias for l in layers]), activation)
    return obj


def stack_parallel(nets, share_input=True):
    """Run several networks side by side; outputs are concatenated in order.

    With ``share_input`` every network reads the same input vector;
    otherwise the input is the concatenation of the individual inputs.
    Shallower networks are padded with :func:`pad_to_depth` first.
    """
    nets = list(nets)
    if not nets:
        raise PreconditionError("stack_parallel needs at least one network")
    if len(nets) == 1:
        return nets[0]
    if share_input and len({n.input_dim for n in nets}) != 1:
        raise InputShapeError("networks stacked on a shared input must have equal input_dim")
    nets = [_affine_output(n) for n in nets]
    L = max(n.depth for n in nets)
    nets = [pad_to_depth(n, L) for n in nets]
    layers = []
    for k in range(L):
        act = IDENTITY if k == L - 1 else RELU
        parts = [n.layers[k] for n in nets]
        layers.append(_vstack(parts, act) if (k == 0 and share_input) else _block_diag(parts, act))
    bound = max(n.output_bound for n in nets)
    return ReluNetwork(layers, bound)


def _fuse(first, second):
    """Merge ``first``'s affine output into ``second``'s first layer algebraically.

    Saves one layer and the seam lanes at the price of rounding across the
    seam, so it is only used inside builders whose error budgets absorb it.
    """
    if first.output_dim != second.input_dim:
        raise InputShapeError(f"cannot feed {first.output_dim} outputs into {second.input_dim} inputs")
    last = first.layers[-1]
    if last.activation == RELU:
        return compose_serial(first, second)
    head = second.layers[0]
    mat = head.matrix @ last.matrix
    bias = head.matrix @ last.bias + head.bias
    merged = SparseLayer.from_csr(mat, bias, head.activation)
    return ReluNetwork(first.layers[:-1] + (merged,) + second.layers[1:], second.output_bound)


def _replicate(net, count, share_input=True):
    """``count`` block copies of ``net`` (all copies identical)."""
    return stack_parallel([net] * count, share_input=share_input)


def save_network(net, path):
    """Write ``net`` as a JSON document; floats use shortest round-trip form."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('{"input_dim": %d, "output_dim": %d, ' % (net.input_dim, net.output_dim))
        if math.isfinite(net.output_bound):
            fh.write('"output_bound": %s, ' % repr(float(net.output_bound)))
        fh.write('"layers": [')
        for k, layer in enumerate(net.layers):
            if k:
                fh.write(", ")
            fh.write('{"rows": %d, "cols": %d, "activation": "%s", "bias": %s, "triplets": ['
                     % (layer.n_out, layer.n_in, layer.activation, json.dumps(layer.bias.tolist())))
            r, c, v = layer.triplets()
            step = 65536
            for s in range(0, r.size, step):
                if s:
                    fh.write(", ")
                fh.write(", ".join(
                    f"[{a}, {b}, {x!r}]"
                    for a, b, x in zip(r[s:s + step].tolist(), c[s:s + step].tolist(), v[s:s + step].tolist())
                ))
            fh.write("]}")
        fh.write("]}\n")


def load_network(path):
    """Read a network written by :func:`save_network`."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ReluNetwork.from_dict(doc)


def _raw_layer(mat, bias, activation):
    """Wrap an already canonical CSR matrix without re-checking it."""
    obj = SparseLayer.__new__(SparseLayer)
    obj._set(mat, np.ascontiguousarray(bias, dtype=np.float64), activation)
    return obj
