"""Per-unit IV, mean-group aggregation, and the two-way fixed-effects
baseline."""

import numpy as np
import pytest

from netpanel import (
    DegenerateGroupError,
    DimensionError,
    InsufficientUnitsError,
    SingularDesignError,
    UnderidentifiedError,
    defactor_panel,
    estimate_all_units,
    estimate_factors,
    mgiv,
    twfe,
    unit_iv,
)
from netpanel.estimation import UnitEstimates
from netpanel.factors import DefactoredPanel
from netpanel.networks import NetworkMatrix

from conftest import make_meta, make_panel


def make_data(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    y = y - y.mean(axis=0, keepdims=True)
    x = x - x.mean(axis=1, keepdims=True)
    n = y.shape[1]
    k = x.shape[2]
    return DefactoredPanel(
        y=y,
        x=x,
        var_names=tuple(f"x{j + 1}" for j in range(k)),
        unit_ids=tuple(f"u{i:03d}" for i in range(n)),
        r=0,
    )


def single_link_net(n, i, j, weight=1.0):
    w = np.zeros((n, n))
    w[i, j] = weight
    return NetworkMatrix(w, provenance="file", normalized=(weight == 1.0))


def spatial_dgp(seed, n=10, t=150, k=2, psi=0.6, beta=1.5):
    """Unit 0 loads on unit 1's outcome; everyone else exogenous."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, t, k))
    eps = rng.standard_normal((n, t))
    y = beta * x.sum(axis=2) + eps
    y[0] = psi * y[1] + beta * x[0].sum(axis=1) + eps[0]
    return make_data(y.T, x)


# --- unit-level IV ----------------------------------------------------------


def test_exactly_identified_reduces_to_plain_iv():
    # K=1 with one link: two instruments, two regressors
    rng = np.random.default_rng(7)
    n, t = 6, 120
    x = rng.standard_normal((n, t, 1))
    eps = rng.standard_normal((n, t))
    y = 2.0 * x[:, :, 0] + eps
    y[0] = 0.5 * y[1] + 2.0 * x[0, :, 0] + eps[0]
    data = make_data(y.T, x)
    net = single_link_net(n, 0, 1)

    est = unit_iv(data, net, 0)

    z = np.column_stack([data.x[0], data.x[1]])
    c = np.column_stack([data.y[:, 1], data.x[0]])
    direct = np.linalg.solve(z.T @ c, z.T @ data.y[:, 0])
    np.testing.assert_allclose(est.theta, direct, atol=1e-10)
    assert est.psi_identified
    assert est.n_instruments == 2


def test_unit_iv_estimates_near_truth():
    data = spatial_dgp(11, t=400)
    net = single_link_net(10, 0, 1)
    est = unit_iv(data, net, 0)
    assert est.theta[0] == pytest.approx(0.6, abs=0.1)
    assert est.theta[1] == pytest.approx(1.5, abs=0.1)
    assert est.theta[2] == pytest.approx(1.5, abs=0.1)
    assert est.sigma == pytest.approx(1.0, abs=0.15)
    assert est.condition_number >= 1.0


def test_empty_support_falls_back_to_ols():
    data = spatial_dgp(12)
    net = NetworkMatrix(np.zeros((10, 10)), provenance="file", normalized=False)
    est = unit_iv(data, net, 3)
    assert np.isnan(est.theta[0])
    assert not est.psi_identified
    assert est.n_instruments == data.k
    beta_ols = np.linalg.lstsq(data.x[3], data.y[:, 3], rcond=None)[0]
    np.testing.assert_allclose(est.theta[1:], beta_ols, atol=1e-10)


def test_unit_iv_no_links_no_covariates_raises():
    rng = np.random.default_rng(13)
    y = rng.standard_normal((30, 5))
    data = make_data(y, np.zeros((5, 30, 0)))
    net = NetworkMatrix(np.zeros((5, 5)), provenance="file", normalized=False)
    with pytest.raises(UnderidentifiedError):
        unit_iv(data, net, 0)


def test_unit_iv_too_many_instruments_for_t():
    data = spatial_dgp(14, n=5, t=6, k=2)
    w = np.zeros((5, 5))
    w[0, 1] = w[0, 2] = 0.5
    net = NetworkMatrix(w, provenance="file", normalized=True)
    # 3 units x 2 covariates = 6 instruments, T = 6
    with pytest.raises(SingularDesignError):
        unit_iv(data, net, 0)


def test_unit_iv_dimension_mismatch():
    data = spatial_dgp(15)
    with pytest.raises(DimensionError):
        unit_iv(data, single_link_net(4, 0, 1), 0)


def test_estimate_all_units_order():
    data = spatial_dgp(16, n=6)
    net = single_link_net(6, 0, 1)
    units = estimate_all_units(data, net)
    assert [u.unit for u in units] == list(range(6))
    assert units[0].psi_identified
    assert all(not u.psi_identified for u in units[1:])


# --- mean group -------------------------------------------------------------


def stub(unit, theta):
    return UnitEstimates(
        unit=unit,
        theta=np.asarray(theta, dtype=float),
        sigma=1.0,
        psi_identified=not np.isnan(theta[0]),
        n_instruments=2,
        condition_number=1.0,
    )


def test_mgiv_two_point_hand_check():
    res = mgiv((stub(0, [0.2]), stub(1, [0.4])))
    assert res.theta[0] == pytest.approx(0.3, abs=1e-15)
    assert res.cov[0, 0] == pytest.approx(0.01, abs=1e-15)
    assert res.se[0] == pytest.approx(0.1, abs=1e-15)
    assert res.n_units[0] == 2


def test_mgiv_pairwise_complete_with_nan_psi():
    res = mgiv((stub(0, [np.nan, 1.0]), stub(1, [0.2, 2.0]), stub(2, [0.4, 3.0])))
    assert res.theta[0] == pytest.approx(0.3, abs=1e-15)
    assert res.theta[1] == pytest.approx(2.0, abs=1e-15)
    assert list(res.n_units) == [2, 3]
    assert res.cov[0, 0] == pytest.approx(0.01, abs=1e-15)
    assert res.cov[1, 1] == pytest.approx(1.0 / 3.0, abs=1e-15)
    # cross moment over the two units where both parameters are present
    assert res.cov[0, 1] == pytest.approx(0.05, abs=1e-15)
    assert res.cov[0, 1] == res.cov[1, 0]


def test_mgiv_insufficient_units():
    with pytest.raises(InsufficientUnitsError):
        mgiv(())
    with pytest.raises(InsufficientUnitsError):
        mgiv((stub(0, [0.2, 1.0]),))
    with pytest.raises(InsufficientUnitsError):
        mgiv((stub(0, [np.nan, 1.0]), stub(1, [0.2, 2.0])))


def test_mgiv_recovers_dgp_means(sim_small):
    fac = estimate_factors(sim_small.panel, 2)
    data = defactor_panel(sim_small.panel, fac)
    units = estimate_all_units(data, sim_small.w_true)
    res = mgiv(units)
    psi_bar = sim_small.psi.mean()
    beta_bar = sim_small.betas.mean(axis=0)
    assert abs(res.theta[0] - psi_bar) < 4 * res.se[0]
    assert abs(res.theta[1] - beta_bar[0]) < 4 * res.se[1]
    assert abs(res.theta[2] - beta_bar[1]) < 4 * res.se[2]


# --- two-way fixed effects ----------------------------------------------------


def twfe_oracle(y, x, labels, k):
    """Independent double-demeaning and cluster sandwich on the long form."""
    n, t = y.shape
    rows = []
    for i in range(n):
        for s in range(t):
            rows.append((labels[i], s, y[i, s], x[i, s]))
    groups = sorted(set(labels))
    y_dd = np.empty((n, t))
    x_dd = np.empty((n, t, k))
    gy = {g: np.mean([y[i] for i in range(n) if labels[i] == g]) for g in groups}
    gx = {g: np.mean([x[i] for i in range(n) if labels[i] == g], axis=(0, 1)) for g in groups}
    ty = y.mean(axis=0)
    tx = x.mean(axis=0)
    ay = y.mean()
    ax = x.mean(axis=(0, 1))
    for i in range(n):
        y_dd[i] = y[i] - gy[labels[i]] - ty + ay
        x_dd[i] = x[i] - gx[labels[i]] - tx + ax
    xx = x_dd.reshape(n * t, k)
    yy = y_dd.reshape(n * t)
    beta = np.linalg.lstsq(xx, yy, rcond=None)[0]
    resid = yy - xx @ beta
    resid_mat = resid.reshape(n, t)
    meat = np.zeros((k, k))
    for g in groups:
        members = [i for i in range(n) if labels[i] == g]
        score = np.zeros(k)
        for i in members:
            score += x_dd[i].T @ resid_mat[i]
        meat += np.outer(score, score)
    m_obs = n * t
    bread = np.linalg.inv(xx.T @ xx)
    factor = (len(groups) / (len(groups) - 1)) * ((m_obs - 1) / (m_obs - k))
    cov = factor * bread @ meat @ bread
    return beta, np.sqrt(np.diag(cov))


@pytest.fixture
def fe_panel():
    rng = np.random.default_rng(41)
    n, t, k = 12, 30, 2
    meta = make_meta(n, firms=3)
    unit_fe = rng.standard_normal(n)
    time_fe = rng.standard_normal(t)
    x = rng.standard_normal((n, t, k)) + unit_fe[:, None, None] + time_fe[None, :, None]
    y = (
        x @ np.array([1.0, -0.5])
        + unit_fe[:, None]
        + time_fe[None, :]
        + rng.standard_normal((n, t))
    )
    return make_panel(y, x, meta)


def test_twfe_matches_oracle_facility(fe_panel):
    res = twfe(fe_panel, group="facility")
    beta, se = twfe_oracle(
        fe_panel.y, fe_panel.x, [m.unit_id for m in fe_panel.meta], fe_panel.k
    )
    np.testing.assert_allclose(res.beta, beta, atol=1e-10)
    np.testing.assert_allclose(res.se, se, atol=1e-10)
    assert res.group_dimension == "facility"
    assert res.n_groups == fe_panel.n
    assert res.beta[0] == pytest.approx(1.0, abs=0.1)
    assert res.beta[1] == pytest.approx(-0.5, abs=0.1)


def test_twfe_matches_oracle_firm(fe_panel):
    res = twfe(fe_panel, group="firm")
    beta, se = twfe_oracle(
        fe_panel.y, fe_panel.x, [m.firm_id for m in fe_panel.meta], fe_panel.k
    )
    np.testing.assert_allclose(res.beta, beta, atol=1e-10)
    np.testing.assert_allclose(res.se, se, atol=1e-10)
    # 12 units in firms of three
    assert res.n_groups == 4


def test_twfe_absorbs_unit_and_time_effects(fe_panel):
    # adding arbitrary unit and period shifts leaves the slopes unchanged
    rng = np.random.default_rng(42)
    base = twfe(fe_panel, group="facility")
    shifted_y = fe_panel.y + 5.0 * rng.standard_normal(fe_panel.n)[:, None]
    shifted_y = shifted_y + 3.0 * rng.standard_normal(fe_panel.t)[None, :]
    shifted = make_panel(shifted_y, fe_panel.x, fe_panel.meta)
    res = twfe(shifted, group="facility")
    np.testing.assert_allclose(res.beta, base.beta, atol=1e-10)


def test_twfe_degenerate_group():
    rng = np.random.default_rng(43)
    n, t, k = 6, 20, 2
    meta = make_meta(n, firms=n)  # every unit in one firm
    x = rng.standard_normal((n, t, k))
    y = x.sum(axis=2) + rng.standard_normal((n, t))
    panel = make_panel(y, x, meta)
    with pytest.raises(DegenerateGroupError):
        twfe(panel, group="firm")


def test_twfe_invalid_group(fe_panel):
    with pytest.raises(DimensionError):
        twfe(fe_panel, group="industry")
