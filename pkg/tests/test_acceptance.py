"""Acceptance suite: one test per headline guarantee, at stated tolerance.

The heavy Monte Carlo fixtures (200-replication recovery, 100-replication
null) are module-scoped and shared; every other criterion runs in seconds.
"""

import itertools
import json

import mpmath as mp
import numpy as np
import pytest
from scipy.special import expit

from netpanel import (
    DGPConfig,
    RunConfig,
    category_homophily,
    critical_value,
    defactor_panel,
    effects,
    estimate_factors,
    generate,
    impact_matrices,
    link_formation_logit,
    recovery_experiment,
    run_pipeline,
    select_num_factors,
    spillins,
)
from netpanel.networks import NetworkMatrix
from netpanel.panel import FacilityMeta, PanelDataset

mp.mp.dps = 40

RECOVERY_CFG = DGPConfig(
    n=50,
    t=200,
    k=2,
    r_y=1,
    r_x=1,
    k_links=(1, 2),
    psi_range=(0.8, 0.95),
    beta_means=(1.0, 1.0),
    beta_sd=0.2,
    seed=20260814,
)

NULL_CFG = DGPConfig(
    n=50,
    t=200,
    k=2,
    r_y=1,
    r_x=1,
    k_links=(0,),
    psi_range=(0.0, 0.0),
    beta_means=(1.0, 1.0),
    beta_sd=0.2,
    seed=915,
)


@pytest.fixture(scope="module")
def recovery_200():
    return recovery_experiment(RECOVERY_CFG, replications=200)


@pytest.fixture(scope="module")
def null_100():
    return recovery_experiment(NULL_CFG, replications=100)


def simple_meta(n):
    return tuple(
        FacilityMeta(
            unit_id=f"u{i:03d}",
            firm_id=f"f{i // 4:03d}",
            industry=f"ind{i % 3}",
            state=f"S{i % 5:02d}",
            latitude=30.0 + 0.1 * i,
            longitude=-100.0 + 0.1 * i,
        )
        for i in range(n)
    )


def random_row_normalized(seed, n, density=0.3):
    rng = np.random.default_rng(seed)
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(w, 0.0)
    sums = w.sum(axis=1)
    w[sums > 0] /= sums[sums > 0, None]
    return NetworkMatrix(w, provenance="file", normalized=False)


def test_criterion_01_selection_quality(recovery_200):
    """Known-sparsity recovery: TPR >= 0.95 and <= 0.10 false links per unit
    over 100 replications, finishing within the ten-minute budget."""
    res = recovery_200
    tpr_100 = float(np.mean(res.per_rep_tpr[:100]))
    fp_100 = float(np.mean(res.per_rep_fp_per_unit[:100]))
    per_100_runtime = res.elapsed_seconds * (100.0 / res.replications)
    assert tpr_100 >= 0.95, f"TPR over first 100 reps: {tpr_100:.4f}"
    assert fp_100 <= 0.10, f"false positives per unit: {fp_100:.4f}"
    assert per_100_runtime <= 600.0, f"runtime per 100 reps: {per_100_runtime:.1f}s"
    # false-link rate per candidate pair stays below one percent
    assert fp_100 / (RECOVERY_CFG.n - 1) <= 0.01


def test_criterion_02_null_panel_stays_empty(null_100):
    """With no spatial dependence at all, at most 8% of units acquire any link."""
    share = null_100.share_units_with_links
    assert share <= 0.08, f"share of units with spurious links: {share:.4f}"


def test_criterion_03_coefficients_within_mc_error(recovery_200):
    """Mean-group estimates match the generating coefficients within Monte
    Carlo error: 2 SE under the true network, 3 SE under the estimated one."""
    res = recovery_200
    reps = res.replications
    target = res.theta_target
    for rows, budget, label in ((res.mg_true_w, 2.0, "true"), (res.mg_est_w, 3.0, "estimated")):
        assert np.all(np.isfinite(rows))
        mean = rows.mean(axis=0)
        mc_se = rows.std(axis=0, ddof=1) / np.sqrt(reps)
        z = np.abs(mean - target) / mc_se
        assert np.all(z <= budget), f"{label} network z-scores: {z}"


def test_criterion_04_impact_identities():
    """Direct + indirect = total at 1e-12; the inverse matches a 60-term
    expansion below 1e-8; no spatial coefficient means exactly zero
    indirect effects; and the symmetric pair has its closed form."""
    # closure on a heterogeneous system
    net = random_row_normalized(4, 30)
    rng = np.random.default_rng(5)
    psi = rng.uniform(-0.4, 0.85, size=30)
    betas = rng.normal(1.0, 1.0, size=(30, 2))
    tab = effects(impact_matrices(net, psi, betas))
    assert np.max(np.abs(tab.direct + tab.indirect - tab.total)) <= 1e-12

    # truncated power series agreement (spectral radius below 0.9)
    net50 = random_row_normalized(6, 50)
    im = impact_matrices(net50, 0.7, np.array([1.0, -0.5]))
    assert im.spectral_radius < 0.9
    p_mat = 0.7 * net50.to_dense()
    series = np.eye(50)
    term = np.eye(50)
    for _ in range(60):
        term = term @ p_mat
        series += term
    assert np.max(np.abs(im.s_inv - series)) <= 1e-8

    # psi = 0: indirect effects vanish identically
    tab0 = effects(impact_matrices(net, 0.0, betas))
    assert np.all(tab0.indirect == 0.0)

    # two units, symmetric full weights, psi = 1/2, beta = 1
    pair = NetworkMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), provenance="file", normalized=True)
    tab2 = effects(impact_matrices(pair, 0.5, np.array([1.0])))
    assert abs(tab2.direct[0] - 4.0 / 3.0) <= 1e-12
    assert abs(tab2.indirect[0] - 2.0 / 3.0) <= 1e-12
    assert abs(tab2.total[0] - 2.0) <= 1e-12


def test_criterion_05_threshold_matches_inverse_normal():
    """Selection thresholds agree with a high-precision inverse-normal
    oracle at 1e-8 and increase strictly with the candidate count."""
    for p in (0.01, 0.05, 0.10):
        for n in (1, 10, 100, 1000):
            for delta in (0.5, 1.0, 2.0):
                tail = mp.mpf(p) / (2 * mp.mpf(n) ** mp.mpf(delta))
                oracle = float(mp.sqrt(2) * mp.erfinv(1 - 2 * tail))
                assert abs(critical_value(p, n, 1.0, delta) - oracle) <= 1e-8
    grid = [critical_value(0.05, n) for n in range(1, 2001)]
    assert all(b > a for a, b in zip(grid, grid[1:]))


def test_criterion_06_defactoring_geometry_and_count():
    """The annihilator is symmetric and idempotent at 1e-10, removes a
    noiseless factor structure below 1e-8, and the selected factor count
    is right in at least 95% of strong-signal draws."""
    ds = generate(DGPConfig(n=20, t=100, k=2, r_y=1, r_x=1, seed=606))
    fm = estimate_factors(ds.panel, 2)
    m = fm.m
    assert np.max(np.abs(m - m.T)) <= 1e-10
    assert np.max(np.abs(m @ m - m)) <= 1e-10

    # pure factor panel: defactoring annihilates it
    rng = np.random.default_rng(607)
    t_obs, n, r = 80, 12, 2
    factors = rng.standard_normal((t_obs, r))
    y = (factors @ rng.standard_normal((r, n))).T
    x = np.einsum("tr,nrk->ntk", factors, rng.standard_normal((n, r, 3)))
    panel = PanelDataset(
        y=y,
        x=x,
        meta=simple_meta(n),
        var_names=("x1", "x2", "x3"),
        periods=tuple(str(s) for s in range(t_obs)),
    )
    fm_pure = estimate_factors(panel, r)
    data = defactor_panel(panel, fm_pure)
    assert np.max(np.abs(data.y)) <= 1e-8
    assert np.max(np.abs(data.x)) <= 1e-8

    correct = 0
    total = 0
    for r_true in (1, 2, 3):
        for d in range(30):
            ds = generate(
                DGPConfig(
                    n=30,
                    t=120,
                    k=2,
                    r_y=r_true,
                    r_x=0,
                    k_links=0,
                    psi_range=(0.0, 0.0),
                    loading_sd=1.0,
                    noise_sd=0.5,
                    seed=1000 * r_true + d,
                )
            )
            choice = select_num_factors(ds.panel, r_max=6)
            total += 1
            correct += int(choice.r == r_true)
    assert correct / total >= 0.95, f"factor count correct in {correct}/{total} draws"


def test_criterion_07_homophily_calibration():
    """Null permutation p-values are near-uniform (KS < 0.08 over 500
    simulations), match exhaustive enumeration on a small network, and a
    perfectly assortative network scores h = 1 exactly."""
    rng = np.random.default_rng(99)
    pvals = np.empty(500)
    for s in range(500):
        w = (rng.random((40, 40)) < 0.15).astype(float)
        np.fill_diagonal(w, 0.0)
        labels = [str(v) for v in rng.integers(0, 5, size=40)]
        net = NetworkMatrix(w, provenance="file", normalized=False)
        pvals[s] = category_homophily(net, labels, n_permutations=400, seed=s).p_value
    p = np.sort(pvals)
    n = p.size
    ks = max(float(np.max(np.arange(1, n + 1) / n - p)), float(np.max(p - np.arange(0, n) / n)))
    assert ks < 0.08, f"KS distance from uniform: {ks:.4f}"

    # exhaustive check at N = 7 (5040 label orderings)
    labels7 = ["a", "a", "b", "b", "c", "c", "c"]
    codes = np.unique(labels7, return_inverse=True)[1]
    w7 = np.zeros((7, 7))
    for i, j in [(0, 1), (2, 3), (4, 5), (5, 6), (0, 4), (3, 2), (6, 4)]:
        w7[i, j] = 1.0
    ii, jj = np.nonzero(w7)
    obs = int(np.sum(codes[ii] == codes[jj]))
    stats = [
        int(np.sum(np.asarray(perm)[ii] == np.asarray(perm)[jj]))
        for perm in itertools.permutations(codes)
    ]
    exact_p = float(np.mean(np.asarray(stats) >= obs))
    net7 = NetworkMatrix(w7, provenance="file", normalized=False)
    rep = category_homophily(net7, labels7, n_permutations=20000, seed=3)
    assert abs(rep.p_value - exact_p) <= 0.02  # four binomial SEs at B = 20000

    # all links inside label groups: the share is exactly one
    w_self = np.zeros((6, 6))
    for i, j in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]:
        w_self[i, j] = 1.0
    rep_self = category_homophily(
        NetworkMatrix(w_self, provenance="file", normalized=False),
        ["a", "a", "a", "b", "b", "b"],
        n_permutations=100,
        seed=4,
    )
    assert rep_self.h_observed == 1.0


def test_criterion_08_spillin_closure_and_pure_within():
    """Within + between spill-ins equal the indirect effect at 1e-12, and a
    network confined to its groups attributes 100% of spill-ins within."""
    net = random_row_normalized(8, 24)
    rng = np.random.default_rng(9)
    psi = rng.uniform(0.1, 0.8, size=24)
    betas = rng.normal(1.0, 0.5, size=(24, 2))
    im = impact_matrices(net, psi, betas)
    tab = spillins(im, [f"g{i % 5}" for i in range(24)])
    ref = effects(im)
    assert np.max(np.abs(tab.within + tab.between - tab.indirect)) <= 1e-12
    assert np.max(np.abs(tab.indirect - ref.indirect)) <= 1e-12

    w = np.zeros((6, 6))
    for block in (range(0, 3), range(3, 6)):
        for i in block:
            for j in block:
                if i != j:
                    w[i, j] = 0.5
    im_blocks = impact_matrices(
        NetworkMatrix(w, provenance="file", normalized=True), 0.6, np.array([1.0, -1.0])
    )
    tab_blocks = spillins(im_blocks, ["a", "a", "a", "b", "b", "b"])
    assert np.all(tab_blocks.between == 0.0)
    assert np.all(tab_blocks.within_share == 1.0)


def test_criterion_09_link_logit_bias_and_separation():
    """The bias-reduced link logit recovers a planted distance coefficient
    within 0.15 on average over 100 replications and never diverges."""
    n, t, k = 100, 20, 2
    meta = simple_meta(n)
    biases = np.empty(100)
    for rep in range(100):
        rng = np.random.default_rng(np.random.SeedSequence((777, rep)))
        mu = rng.normal(0.0, 2.0, size=(n, k))
        x = mu[:, None, :] + 0.3 * rng.standard_normal((n, t, k))
        y = rng.standard_normal((n, t))
        xbar = x.mean(axis=1)
        d1 = np.abs(xbar[:, None, 0] - xbar[None, :, 0])
        w = (rng.random((n, n)) < expit(-3.0 - 0.5 * d1)).astype(float)
        np.fill_diagonal(w, 0.0)
        panel = PanelDataset(
            y=y,
            x=x,
            meta=meta,
            var_names=("x1", "x2"),
            periods=tuple(str(s) for s in range(t)),
        )
        fit = link_formation_logit(NetworkMatrix(w, provenance="file", normalized=False), panel)
        assert fit.converged and np.all(np.isfinite(fit.coef))
        biases[rep] = fit.coef[1] - (-0.5)
    mean_bias = float(biases.mean())
    assert abs(mean_bias) <= 0.15, f"mean bias of planted coefficient: {mean_bias:.4f}"

    # deterministic threshold links: complete separation, still finite
    rng = np.random.default_rng(778)
    mu = rng.normal(0.0, 2.0, size=(30, 1))
    x_sep = np.repeat(mu[:, None, :], 12, axis=1)
    sep_w = (np.abs(mu[:, None, 0] - mu[None, :, 0]) < 1.0).astype(float)
    np.fill_diagonal(sep_w, 0.0)
    sep_panel = PanelDataset(
        y=rng.standard_normal((30, 12)),
        x=x_sep,
        meta=simple_meta(30),
        var_names=("x1",),
        periods=tuple(str(s) for s in range(12)),
    )
    sep_fit = link_formation_logit(
        NetworkMatrix(sep_w, provenance="file", normalized=False), sep_panel
    )
    assert sep_fit.converged and np.all(np.isfinite(sep_fit.coef))


def test_criterion_10_byte_identical_runs(tmp_path, sim_panel_csv):
    """The same configuration reproduces every artifact byte for byte, and
    the thread count changes nothing but the manifest's own echo of it."""
    def cfg(out, threads=1):
        return RunConfig(
            panel_path=str(sim_panel_csv),
            network="estimate",
            out_dir=str(out),
            factor_count=2,
            draws=50,
            permutations=100,
            seed=5,
            threads=threads,
        )

    out = tmp_path / "repeat"
    run_pipeline(cfg(out))
    first = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}
    run_pipeline(cfg(out))
    second = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}
    assert first.keys() == second.keys()
    for name, blob in first.items():
        assert second[name] == blob, f"rerun changed {name}"

    seq_dir = tmp_path / "seq"
    par_dir = tmp_path / "par"
    run_pipeline(cfg(seq_dir, threads=1))
    run_pipeline(cfg(par_dir, threads=2))
    seq = {p.name: p.read_bytes() for p in sorted(seq_dir.iterdir()) if p.is_file()}
    par = {p.name: p.read_bytes() for p in sorted(par_dir.iterdir()) if p.is_file()}
    assert seq.keys() == par.keys()
    for name, blob in seq.items():
        if name == "manifest.json":
            manifest_seq = json.loads(blob.decode("utf8"))
            manifest_par = json.loads(par[name].decode("utf8"))
            manifest_seq["config"].pop("threads")
            manifest_seq["config"].pop("out_dir")
            manifest_par["config"].pop("threads")
            manifest_par["config"].pop("out_dir")
            assert manifest_seq == manifest_par
            continue
        assert par[name] == blob, f"thread count changed {name}"
