import json
import math

import numpy as np
import pytest

from manifold_relu import (Manifold, PreconditionError, ResourceError, assemble, build_atlas, error_budget,
                           make_target, sup_error, theoretical_size, verify_size)
from manifold_relu.assembler import (calibrate_constants, error_decomposition, estimate_shell_constant,
                                     kappa_constant, write_manifest)
from manifold_relu.taylor import constant_model, build_taylor_net


@pytest.fixture(scope="module")
def circle():
    m = Manifold("circle", 2)
    return m, build_atlas(m, seed=0)


@pytest.fixture(scope="module")
def asm02(circle):
    m, a = circle
    return assemble(make_target("x1", m), a, 0.2)


def test_budget_formulas(circle):
    m, a = circle
    b = error_budget(0.3, a, 1.0)
    assert b.eta == b.delta == pytest.approx(0.3 / (3 * a.C_M), rel=1e-15)
    assert b.Delta / b.nu == pytest.approx(16 * b.B ** 2 * b.D, rel=1e-14)
    assert b.Delta > 8 * b.B ** 2 * b.D * b.nu
    tau = m.reach
    assert b.Delta == pytest.approx(a.r * (1 - a.r / tau) * 0.3 / (3 * (math.pi + 1) * a.C_M), rel=1e-14)
    with pytest.raises(PreconditionError):
        error_budget(1.2, a, 1.0)


def test_budget_single_chart():
    m = Manifold("flat_cube", 2, dim=2)
    a = build_atlas(m)
    b = error_budget(0.3, a, 2.0)
    assert b.C_M == 1 and b.eta == pytest.approx(0.1)
    assert b.Delta == pytest.approx(a.r * 0.3 / (3 * 2.0 * (math.pi + 1)))


def test_budget_halves_with_double_charts():
    m = Manifold("circle", 2)
    a1 = build_atlas(m, r=0.4, seed=0)
    a2 = build_atlas(m, r=0.4, seed=0)
    object.__setattr__(a2, "charts", a1.charts + a1.charts)
    b1, b2 = error_budget(0.2, a1, 1.0), error_budget(0.2, a2, 1.0)
    for k in ("eta", "delta", "Delta"):
        assert getattr(b2, k) == pytest.approx(getattr(b1, k) / 2, rel=1e-14)


def test_end_to_end_circle(asm02, circle):
    m, a = circle
    f = asm02.target
    rep = sup_error(asm02, f, m, 10000, 11)
    assert rep.sup_error <= 0.2
    assert rep.l2_error <= rep.sup_error
    X = m.sample(2000, 12)
    assert np.array_equal(asm02.network(X)[:, 0], asm02.predict(X))


def test_indicator_exact_interior(asm02, circle):
    m, a = circle
    b = asm02.budget
    X = m.sample(5000, 3)
    for i, ch in enumerate(a.charts):
        d2 = ((X - ch.center) ** 2).sum(1)
        out = asm02.indicator_branches[i](X)[:, 0]
        assert np.all(out[d2 <= a.r ** 2 - b.Delta] == 1.0)
        assert np.all(out[d2 >= a.r ** 2] == 0.0)


def test_error_audit(asm02, circle):
    m, a = circle
    rows = error_decomposition(asm02, m.sample(5000, 8))
    b = asm02.budget
    for r in rows:
        assert r["A1"] <= b.eta
        assert r["A2"] <= b.delta
        assert r["shell_max"] <= r["shell_bound"]


def test_zero_target(circle):
    m, a = circle
    asm = assemble(make_target("zero", m), a, 0.4)
    X = m.sample(2000, 1)
    assert np.max(np.abs(asm.network(X))) <= a.C_M * asm.budget.eta


def test_locality(asm02, circle):
    m, a = circle
    X = m.sample(3000, 5)
    base = asm02.lanes(X)
    k = 4
    zero = build_taylor_net(constant_model(0.0, 3), asm02.budget.delta)
    assert np.all(zero(np.linspace(0, 1, 9)[:, None]) == 0.0)
    far = ((X - a.charts[k].center) ** 2).sum(1) >= a.r ** 2
    # a chart's lanes vanish exactly away from it, so zeroing its model cannot matter there
    assert np.all(base[far, 2 * k] == 0.0) and np.all(base[far, 2 * k + 1] == 0.0)


def test_shell_constant_fixed_point(circle):
    m, a = circle
    f = make_target("x1", m)
    c = estimate_shell_constant(f, a, 0.2)
    assert c > 0
    b = error_budget(0.2, a, c)
    assert b.Delta <= a.r ** 2 / 4 * (1 + 1e-9)


def test_theoretical_size_properties():
    t1 = theoretical_size(0.1, 1, 1, 1.0, 10)
    t2 = theoretical_size(0.01, 1, 1, 1.0, 10)
    assert t2["L_bound"] - t1["L_bound"] <= math.log(10) + 1e-12
    # D = 1 removes the ambient terms so the ratio isolates eps^(-d/(s+alpha)) times the log factor
    ratio = theoretical_size(0.05, 1, 1, 1.0, 1)["K_bound"] / theoretical_size(0.1, 1, 1, 1.0, 1)["K_bound"]
    assert 2 ** 0.5 <= ratio <= 2 ** 0.5 * 2
    t = theoretical_size(0.1, 2, 1, 1.0, 1)
    assert t["K_bound"] >= 0.1 ** (-1.0)


def test_verify_and_calibrate(circle):
    m, a = circle
    f = make_target("x1", m)
    eps_list = [0.4, 0.2]
    metas = [assemble(f, a, e).meta for e in eps_list]
    consts, c4 = calibrate_constants(metas, eps_list, 1, 1, 1.0, 2, B=m.coord_bound, tau=m.reach)
    for e, meta in zip(eps_list, metas):
        bound = theoretical_size(e, 1, 1, 1.0, 2, consts, c4, m.coord_bound, m.reach)
        assert verify_size(meta, bound)["ok"]
    tight = theoretical_size(0.4, 1, 1, 1.0, 2, (1e-9, 1e-9, 1e-9), 1e-9)
    assert not verify_size(metas[0], tight)["ok"]


def test_kappa_inventory(asm02, circle):
    m, a = circle
    c4 = kappa_constant(a, asm02.target, asm02.holder_scales)
    tau2 = m.reach ** 2
    assert asm02.meta.weight_bound_kappa <= c4 * max(1.0, m.coord_bound, tau2, 1.0)


def test_clip_output(circle):
    m, a = circle
    f = make_target("x1", m)
    asm = assemble(f, a, 0.4, clip=True)
    X = m.sample(3000, 2)
    out = asm.network(X)[:, 0]
    assert np.abs(out).max() <= f.sup_norm_R
    assert np.array_equal(out, asm.predict(X))


def test_resource_cap_raises(circle):
    m, a = circle
    with pytest.raises(ResourceError):
        assemble(make_target("x1", m), a, 0.2, max_nonzeros=1000)


def test_manifest(asm02, tmp_path):
    p = tmp_path / "m.json"
    write_manifest(asm02, "x1", p)
    doc = json.loads(p.read_text())
    assert doc["atlas_charts"] == asm02.atlas.C_M
    assert doc["meta"]["nonzeros_K"] == asm02.meta.nonzeros_K
    assert doc["budget"]["eta"] == asm02.budget.eta
