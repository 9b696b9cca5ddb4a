"""Report rendering: stars, p-values, and exact-round-trip CSV cells."""

import csv
import json

import numpy as np
import pytest
from scipy.stats import norm

from netpanel import (
    effects,
    impact_matrices,
    quintile_spillins,
    rank_sum_test,
    stars,
    normal_p_value,
    write_coefficient_csv,
    write_effects_csv,
    write_homophily_csv,
    write_json,
    write_quintile_spillin_csv,
    write_spillin_csv,
    spillins,
)
from netpanel.estimation import MGResult
from netpanel.homophily import HomophilyReport
from netpanel.networks import NetworkMatrix


def test_stars_boundaries_are_strict():
    assert stars(0.009) == "***"
    assert stars(0.01) == "**"
    assert stars(0.049) == "**"
    assert stars(0.05) == "*"
    assert stars(0.099) == "*"
    assert stars(0.10) == ""
    assert stars(0.5) == ""


def test_normal_p_value_matches_reference():
    assert normal_p_value(1.96, 1.0) == pytest.approx(2 * norm.sf(1.96), abs=1e-12)
    assert normal_p_value(-2.5, 0.5) == pytest.approx(2 * norm.sf(5.0), abs=1e-12)
    assert normal_p_value(1.0, 0.0) == 1.0
    assert normal_p_value(1.0, np.inf) == 1.0
    assert normal_p_value(1.0, np.nan) == 1.0


def mg_fixture():
    theta = np.array([np.pi / 6, 1.0 / 3.0, -0.125])
    cov = np.diag([0.01, 0.04, 0.0009])
    return MGResult(theta=theta, se=np.sqrt(np.diag(cov)), cov=cov, n_units=np.array([9, 10, 10]))


def read_rows(path):
    with open(path, newline="", encoding="utf8") as fh:
        return list(csv.reader(fh))


def test_coefficient_csv_cells_round_trip_exactly(tmp_path):
    mg = mg_fixture()
    path = tmp_path / "coef.csv"
    write_coefficient_csv(mg, ("x1", "x2"), path)
    rows = read_rows(path)
    assert rows[0] == ["parameter", "estimate", "se", "z", "p_value", "stars", "n_units"]
    assert [r[0] for r in rows[1:]] == ["spatial_lag", "x1", "x2"]
    for idx, row in enumerate(rows[1:]):
        assert float(row[1]) == mg.theta[idx]  # repr round-trips bit-exactly
        assert float(row[2]) == mg.se[idx]
        z = mg.theta[idx] / mg.se[idx]
        assert float(row[3]) == z
        assert float(row[4]) == normal_p_value(mg.theta[idx], mg.se[idx])
        assert row[5] == stars(float(row[4]))
        assert int(row[6]) == mg.n_units[idx]


def impact_fixture():
    rng = np.random.default_rng(5)
    n = 15
    w = rng.random((n, n)) * (rng.random((n, n)) < 0.3)
    np.fill_diagonal(w, 0.0)
    sums = w.sum(axis=1)
    w[sums > 0] /= sums[sums > 0, None]
    net = NetworkMatrix(w, provenance="file", normalized=False)
    return impact_matrices(net, 0.5, rng.normal(1.0, 0.2, size=(n, 2)))


def test_effects_csv_round_trip(tmp_path):
    im = impact_fixture()
    tab = effects(im)
    path = tmp_path / "effects.csv"
    write_effects_csv(tab, ("x1", "x2"), path)
    rows = read_rows(path)
    assert rows[0] == ["variable", "direct", "indirect", "total"]
    for idx, row in enumerate(rows[1:]):
        assert float(row[1]) == tab.direct[idx]
        assert float(row[2]) == tab.indirect[idx]
        assert float(row[3]) == tab.total[idx]


def test_spillin_csv_round_trip(tmp_path):
    im = impact_fixture()
    tab = spillins(im, [f"g{i % 3}" for i in range(15)])
    path = tmp_path / "spill.csv"
    write_spillin_csv(tab, ("x1", "x2"), "state", path)
    rows = read_rows(path)
    assert rows[0] == ["dimension", "variable", "within", "between", "indirect", "within_share"]
    for idx, row in enumerate(rows[1:]):
        assert row[0] == "state"
        assert float(row[2]) == tab.within[idx]
        assert float(row[3]) == tab.between[idx]
        assert float(row[2]) + float(row[3]) == float(row[4])


def test_quintile_csv_all_row_closes(tmp_path):
    im = impact_fixture()
    sizes = np.arange(15, dtype=float)
    tab = quintile_spillins(im, sizes)
    path = tmp_path / "quintiles.csv"
    write_quintile_spillin_csv(tab, ("x1", "x2"), path)
    rows = read_rows(path)
    by_var = {}
    for row in rows[1:]:
        by_var.setdefault(row[1], []).append(row)
    for idx, name in enumerate(("x1", "x2")):
        q_rows = [r for r in by_var[name] if r[0] != "all"]
        all_row = [r for r in by_var[name] if r[0] == "all"][0]
        assert len(q_rows) == 5
        assert int(all_row[2]) == 15
        total = float(all_row[3]) + float(all_row[4])
        assert total == pytest.approx(tab.overall_indirect[idx], abs=1e-12)


def test_homophily_csv_and_payload(tmp_path):
    rep = HomophilyReport(
        h_observed=0.625,
        h_null=0.25,
        p_value=0.004,
        l_same=5.0,
        l_total=8.0,
        n_permutations=1000,
        weighted=False,
    )
    path = tmp_path / "hom.csv"
    write_homophily_csv({"firm": rep}, path)
    rows = read_rows(path)
    assert rows[1][0] == "firm"
    assert float(rows[1][3]) == 0.625
    assert rows[1][6] == "***"

    from netpanel import homophily_payload

    ranksum = rank_sum_test([1.0, 2.0], [3.0, 4.0, 5.0])
    payload = homophily_payload({"firm": rep}, logit=None, ranksum=ranksum)
    assert payload["categories"]["firm"]["h_observed"] == 0.625
    assert payload["distance_rank_sum"]["n_linked"] == 2
    assert "link_formation_logit" not in payload


def test_write_json_deterministic_and_sorted(tmp_path):
    payload = {"b": 2.0, "a": {"z": [1.5, np.pi], "y": "text"}}
    p1 = tmp_path / "one.json"
    p2 = tmp_path / "two.json"
    write_json(payload, p1)
    write_json(payload, p2)
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text(encoding="utf8")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text)["a"]["z"][1] == np.pi
    assert text.endswith("\n")
