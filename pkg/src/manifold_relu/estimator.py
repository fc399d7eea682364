"""scikit-learn style wrapper: constructive network plus an output-layer refit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import rate_balance
from .assembler import assemble
from .atlas import build_atlas
from .harness import refit_output_layer
from .targets import TargetFunction, make_target


class ManifoldReLURegressor(RegressorMixin, BaseEstimator):
    """Regressor on an embedded manifold.

    ``fit`` assembles the approximation network of ``target`` at accuracy
    ``eps`` (balanced against ``len(X)`` when ``None``) and, when ``refit``
    is set, re-estimates only the output layer by least squares on
    ``(X, y)``.  ``target`` is a :class:`TargetFunction` or a target id.
    """

    def __init__(self, manifold=None, target="x1", eps=None, s=1, alpha=1.0, refit=True, seed=0):
        self.manifold = manifold
        self.target = target
        self.eps = eps
        self.s = s
        self.alpha = alpha
        self.refit = refit
        self.seed = seed

    def _target(self):
        if isinstance(self.target, TargetFunction):
            return self.target
        return make_target(self.target, self.manifold, s=self.s, alpha=self.alpha)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError("X must be 2-d with one row per target value")
        f = self._target()
        eps = self.eps
        if eps is None:
            eps = min(rate_balance(max(2, X.shape[0]), f.s, f.alpha, self.manifold.intrinsic_dim).eps_star, 0.99)
        atlas = build_atlas(self.manifold, seed=self.seed)
        self.assembly_ = assemble(f, atlas, eps, seed=self.seed)
        self.eps_ = eps
        if self.refit:
            self.coef_, self.ridge_ = refit_output_layer(self.assembly_.lanes(X), y)
        else:
            n = 2 * atlas.C_M
            self.coef_ = np.append(np.tile([1.0, -1.0], n // 2), 0.0)
            self.ridge_ = False
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        return self.assembly_.lanes(X) @ self.coef_[:-1] + self.coef_[-1]
