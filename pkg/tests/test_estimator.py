import numpy as np
from sklearn.base import clone

from manifold_relu import Manifold
from manifold_relu.estimator import ManifoldReLURegressor


def test_fit_predict_and_refit():
    m = Manifold("circle", 2)
    rng = np.random.default_rng(0)
    X = m.sample(400, 1)
    y = X[:, 0] + 0.05 * rng.standard_normal(400)
    est = ManifoldReLURegressor(manifold=m, target="x1", eps=0.4).fit(X, y)
    Xt = m.sample(2000, 2)
    assert np.mean((est.predict(Xt) - Xt[:, 0]) ** 2) < 0.01
    raw = ManifoldReLURegressor(manifold=m, target="x1", eps=0.4, refit=False).fit(X, y)
    assert np.allclose(raw.predict(Xt), raw.assembly_.predict(Xt), atol=1e-12)
    assert est.score(Xt, Xt[:, 0]) > 0.9


def test_clone_params():
    est = ManifoldReLURegressor(manifold=Manifold("circle", 2), eps=0.3)
    assert clone(est).get_params()["eps"] == 0.3
