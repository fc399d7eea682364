"""Measurement harness: error reports, eps sweeps, the regression experiment, CSV output."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .analysis import fit_line, fit_loglog, rate_balance
from .assembler import Assembly, assemble
from .atlas import build_atlas
from .exceptions import InputShapeError, ManifoldReluError, PreconditionError
from .network import ReluNetwork


@dataclass(frozen=True)
class ErrorReport:
    sup_error: float
    l2_error: float
    n_samples: int
    eps_requested: float
    seed: int


@dataclass(frozen=True)
class RegressRow:
    n: int
    sigma: float
    mse_constructed: float
    mse_refit: float
    eps_star: float
    seed: int = 0
    ridge: bool = False


def _predict(model, X):
    if isinstance(model, Assembly):
        return model.predict(X)
    if isinstance(model, ReluNetwork):
        if model.output_dim != 1:
            raise InputShapeError(f"network has {model.output_dim} outputs, expected 1")
        return model(X)[:, 0]
    return np.asarray(model(X), dtype=np.float64).ravel()


def sup_error(net, f, m, n, seed, eps_requested=math.nan):
    """Max and RMS of ``|net(x) - f(x)|`` over ``n`` fresh samples of ``m``.

    ``net`` is a :class:`ReluNetwork` or an :class:`Assembly`; the latter is
    evaluated through its chart-routed path, which matches the network bit
    for bit.
    """
    if n < 100:
        raise PreconditionError(f"n must be at least 100, got {n}")
    in_dim = net.network.input_dim if isinstance(net, Assembly) else getattr(net, "input_dim", m.ambient_dim)
    if in_dim != m.ambient_dim:
        raise InputShapeError(f"network takes {in_dim} inputs but the manifold lives in R^{m.ambient_dim}")
    X = m.sample(n, seed)
    err = np.abs(_predict(net, X) - f(X))
    return ErrorReport(float(err.max()), float(np.sqrt(np.mean(err * err))), int(n), float(eps_requested), int(seed))


def _atlas_for(m, atlas, seed):
    return atlas if atlas is not None else build_atlas(m, seed=seed)


def scaling_study(f, m, eps_list, seed=0, atlas=None, n_eval=10000):
    """Assemble at each eps, record size and error, and fit the size exponents.

    A row whose build fails keeps its eps with ``status`` set to the error
    and the study moves on.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or not all(0 < e < 1 for e in eps_list):
        raise PreconditionError("need at least 3 eps values in (0, 1)")
    a = _atlas_for(m, atlas, seed)
    rows = []
    for k, eps in enumerate(eps_list):
        try:
            asm = assemble(f, a, eps, seed=seed)
            meta = asm.meta
            rep = sup_error(asm, f, m, n_eval, seed=int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0]))
            rows.append({"eps": eps, "L": meta.depth_L, "p": meta.width_p, "K": meta.nonzeros_K,
                         "kappa": meta.weight_bound_kappa, "sup_error": rep.sup_error,
                         "l2_error": rep.l2_error, "status": "ok"})
        except ManifoldReluError as exc:
            rows.append({"eps": eps, "L": "", "p": "", "K": "", "kappa": "", "sup_error": "",
                         "l2_error": "", "status": type(exc).__name__})
    good = [r for r in rows if r["status"] == "ok"]
    fit = {}
    if len(good) >= 3:
        inv = [1.0 / r["eps"] for r in good]
        fit["K"] = fit_loglog(inv, [r["K"] for r in good])
        fit["depth"] = fit_line(np.log(inv), [r["L"] for r in good])
    return rows, fit


def refit_output_layer(features, y, ridge=1e-8):
    """Least-squares weights and intercept for the output layer; last entry is the intercept.

    Lanes that are identically zero on the sample get weight 0.  A
    rank-deficient remainder is solved with a small ridge and flagged.
    """
    features = np.asarray(features, dtype=np.float64)
    live = np.flatnonzero(np.any(features != 0.0, axis=0))
    A = np.column_stack([features[:, live], np.ones(features.shape[0])])
    flagged = np.linalg.matrix_rank(A) < A.shape[1]
    if flagged:
        warnings.warn("singular least-squares system; using ridge 1e-8", RuntimeWarning, stacklevel=2)
        sol = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)
    else:
        sol = np.linalg.lstsq(A, y, rcond=None)[0]
    coef = np.zeros(features.shape[1] + 1)
    coef[live] = sol[:-1]
    coef[-1] = sol[-1]
    return coef, bool(flagged)


def regression_experiment(f, m, n_list, sigma, seed=0, n_seeds=5, atlas=None, n_test=10000):
    """Noisy regression at each ``n``: constructed approximator versus last-layer refit.

    For each ``n`` the network is assembled at ``eps*(n)``; every seed draws
    ``n`` samples with Gaussian noise of level ``sigma`` and refits the
    output layer by least squares.  Test MSE is measured against the
    noiseless target on ``n_test`` fresh points.
    """
    if sigma < 0:
        raise PreconditionError(f"sigma must be nonnegative, got {sigma}")
    if any(n < 50 for n in n_list):
        raise PreconditionError("each n must be at least 50")
    a = _atlas_for(m, atlas, seed)
    d = m.intrinsic_dim
    rows = []
    for i, n in enumerate(n_list):
        eps = rate_balance(n, f.s, f.alpha, d).eps_star
        asm = assemble(f, a, min(eps, 0.99), seed=seed)
        X_test = m.sample(n_test, [int(seed), 7, i])
        f_test = f(X_test)
        lanes_test = asm.lanes(X_test)
        mse_c = float(np.mean((asm.combine(lanes_test) - f_test) ** 2))
        for k in range(n_seeds):
            ss = np.random.SeedSequence([int(seed), i, k])
            X = m.sample(n, ss.generate_state(1)[0])
            noise = np.random.Generator(np.random.Philox(ss.spawn(1)[0])).standard_normal(n)
            y = f(X) + sigma * noise
            coef, flagged = refit_output_layer(asm.lanes(X), y)
            pred = lanes_test @ coef[:-1] + coef[-1]
            mse_r = float(np.mean((pred - f_test) ** 2))
            rows.append(RegressRow(int(n), float(sigma), mse_c, mse_r, float(eps), k, flagged))
    return rows


def summarize_regression(rows):
    """Median refit MSE per ``n`` and the log-log slope across ``n``."""
    ns = sorted({r.n for r in rows})
    med = [float(np.median([r.mse_refit for r in rows if r.n == n])) for n in ns]
    out = {"n": ns, "median_mse_refit": med}
    if len(ns) >= 3 and all(v > 0 for v in med):
        out["fit"] = fit_loglog(ns, med)
    return out


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _as_table(table):
    if isinstance(table, tuple) and len(table) == 2 and isinstance(table[0], (list, tuple)) \
            and all(isinstance(h, str) for h in table[0]):
        return list(table[0]), [list(r) for r in table[1]]
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in table]
    header = list(rows[0]) if rows else []
    return header, [[r[h] for h in header] for r in rows]


def emit_csv(table, path, plot=None, columns=None):
    """Write ``table`` as CSV (header row, CRLF, shortest round-trip floats).

    ``table`` is a list of dicts or dataclasses, or ``(header, rows)``;
    ``columns`` supplies the header of an empty table.  When
    ``plot=(xcol, ycol)`` is given, ``<path stem>.plot.csv`` gets the
    natural logs of those two columns for rows where both are positive.
    """
    header, rows = _as_table(table)
    if not header and columns:
        header = list(columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if header:
            w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    if plot is not None:
        xi, yi = header.index(plot[0]), header.index(plot[1])
        stem, _ = os.path.splitext(path)
        with open(stem + ".plot.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow([f"log_{plot[0]}", f"log_{plot[1]}"])
            for r in rows:
                x, y = r[xi], r[yi]
                if isinstance(x, (int, float)) and isinstance(y, (int, float)) and x > 0 and y > 0:
                    w.writerow([repr(math.log(x)), repr(math.log(y))])


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))
