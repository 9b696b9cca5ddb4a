"""CSV/JSON rendering of estimation results.

All numeric cells are written with ``repr`` (shortest exact round-trip),
so report files are deterministic and machine-recoverable. Significance
stars follow the usual 0.10 / 0.05 / 0.01 convention.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .estimation import MGResult, TWFEResult
from .homophily import HomophilyReport, LinkFormationFit, RankSumResult
from .impacts import EffectsTable, QuintileSpillinTable, SpillinTable


def stars(p_value: float) -> str:
    """Significance stars: *** below 0.01, ** below 0.05, * below 0.10."""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.10:
        return "*"
    return ""


def normal_p_value(coef: float, se: float) -> float:
    """Two-sided p-value from a normal z-ratio; 1.0 when the se is not usable."""
    if not np.isfinite(se) or se <= 0.0:
        return 1.0
    z = coef / se
    return float(2.0 * ndtr(-abs(z)))


def _write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf8")


def write_coefficient_csv(mg: MGResult, var_names: tuple[str, ...], path: str | Path) -> None:
    """Mean-group coefficient table: parameter, estimate, se, z, p, stars, units."""
    names = ("spatial_lag",) + tuple(var_names)
    rows = []
    for idx, name in enumerate(names):
        coef = float(mg.theta[idx])
        se = float(mg.se[idx])
        p = normal_p_value(coef, se)
        z = coef / se if se > 0 else float("nan")
        rows.append([name, coef, se, z, p, stars(p), int(mg.n_units[idx])])
    _write_csv(path, ["parameter", "estimate", "se", "z", "p_value", "stars", "n_units"], rows)


def write_twfe_csv(res: TWFEResult, var_names: tuple[str, ...], path: str | Path) -> None:
    rows = []
    for idx, name in enumerate(var_names):
        coef = float(res.beta[idx])
        se = float(res.se[idx])
        p = normal_p_value(coef, se)
        rows.append([name, coef, se, coef / se if se > 0 else float("nan"), p, stars(p)])
    _write_csv(path, ["parameter", "estimate", "se", "z", "p_value", "stars"], rows)


def write_effects_csv(eff: EffectsTable, var_names: tuple[str, ...], path: str | Path) -> None:
    """Direct / indirect / total averages (one row per covariate)."""
    has_se = eff.direct_se is not None
    header = ["variable", "direct", "indirect", "total"]
    if has_se:
        header += ["direct_se", "indirect_se", "total_se", "draws_used", "draws_discarded"]
    rows = []
    for idx, name in enumerate(var_names):
        row = [name, float(eff.direct[idx]), float(eff.indirect[idx]), float(eff.total[idx])]
        if has_se:
            row += [
                float(eff.direct_se[idx]),
                float(eff.indirect_se[idx]),
                float(eff.total_se[idx]),
                eff.draws_used,
                eff.draws_discarded,
            ]
        rows.append(row)
    _write_csv(path, header, rows)


def write_spillin_csv(
    spill: SpillinTable, var_names: tuple[str, ...], dimension: str, path: str | Path
) -> None:
    rows = []
    for idx, name in enumerate(var_names):
        rows.append(
            [
                dimension,
                name,
                float(spill.within[idx]),
                float(spill.between[idx]),
                float(spill.indirect[idx]),
                float(spill.within_share[idx]),
            ]
        )
    _write_csv(
        path, ["dimension", "variable", "within", "between", "indirect", "within_share"], rows
    )


def write_quintile_spillin_csv(
    qs: QuintileSpillinTable, var_names: tuple[str, ...], path: str | Path
) -> None:
    """Per-quintile spill-in split; the final ``all`` row is the size-weighted
    network-wide average (its within + between equals the overall indirect
    effect)."""
    rows = []
    n_total = int(qs.quintile_sizes.sum())
    for q in range(qs.within.shape[0]):
        for idx, name in enumerate(var_names):
            rows.append(
                [
                    f"Q{q + 1}",
                    name,
                    int(qs.quintile_sizes[q]),
                    float(qs.within[q, idx]),
                    float(qs.between[q, idx]),
                    float(qs.within_share[q, idx]),
                ]
            )
    weights = qs.quintile_sizes.astype(float) / n_total
    for idx, name in enumerate(var_names):
        all_within = float(weights @ qs.within[:, idx])
        all_between = float(weights @ qs.between[:, idx])
        total = all_within + all_between
        share = all_within / total if total != 0.0 else float("nan")
        rows.append(["all", name, n_total, all_within, all_between, share])
    _write_csv(
        path,
        ["quintile", "variable", "n_units", "within", "between", "within_share"],
        rows,
    )


def homophily_payload(
    reports: dict[str, HomophilyReport],
    logit: LinkFormationFit | None = None,
    ranksum: RankSumResult | None = None,
) -> dict:
    """JSON-ready block collecting all homophily diagnostics."""
    payload: dict = {
        "categories": {
            dim: {
                "h_observed": rep.h_observed,
                "h_null": rep.h_null,
                "p_value": rep.p_value,
                "l_same": rep.l_same,
                "l_total": rep.l_total,
                "n_permutations": rep.n_permutations,
                "weighted": rep.weighted,
            }
            for dim, rep in reports.items()
        }
    }
    if logit is not None:
        payload["link_formation_logit"] = {
            "names": list(logit.names),
            "coef": [float(v) for v in logit.coef],
            "se": [float(v) if np.isfinite(v) else None for v in logit.se],
            "odds_ratio": [float(v) for v in logit.odds_ratio],
            "converged": logit.converged,
            "n_iter": logit.n_iter,
            "n_pairs": logit.n_pairs,
            "n_links": logit.n_links,
            "dropped": list(logit.dropped),
        }
    if ranksum is not None:
        payload["distance_rank_sum"] = {
            "z": ranksum.z,
            "p_value": ranksum.p_value,
            "rank_sum": ranksum.rank_sum,
            "n_linked": ranksum.n_first,
            "n_unlinked": ranksum.n_second,
            "alternative": ranksum.alternative,
        }
    return payload


def write_homophily_csv(reports: dict[str, HomophilyReport], path: str | Path) -> None:
    rows = []
    for dim, rep in reports.items():
        rows.append(
            [
                dim,
                float(rep.l_same),
                float(rep.l_total),
                float(rep.h_observed),
                float(rep.h_null),
                float(rep.p_value),
                stars(rep.p_value),
            ]
        )
    _write_csv(
        path,
        ["dimension", "l_same", "l_total", "h_observed", "h_null", "p_value", "stars"],
        rows,
    )


def write_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf8")
