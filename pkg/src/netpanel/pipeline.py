"""End-to-end workflows shared by the CLI and library users.

A run writes every artifact into its output directory through a tracking
writer: if any stage fails, the files produced so far move into a
``quarantine/`` subdirectory so partial output is never mistaken for a
completed run. The run manifest records configuration, seed, and library
versions, which is enough to reproduce the run byte for byte.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, NetpanelError
from .estimation import estimate_all_units, mgiv
from .factors import (
    FactorModel,
    defactor_panel,
    estimate_factors,
    select_num_factors,
    write_factors_csv,
)
from .homophily import category_homophily, distance_rank_sum, link_formation_logit
from .impacts import effects_se, impact_matrices, quintile_spillins, spillins
from .networks import (
    category_network,
    gaussian_network,
    knn_network,
    network_stats,
    read_edge_list,
    row_normalize,
    threshold_distance_network,
    write_edge_list,
)
from .panel import LoadOptions, PanelDataset, load_panel, summarize
from .reports import (
    homophily_payload,
    write_coefficient_csv,
    write_effects_csv,
    write_homophily_csv,
    write_json,
    write_quintile_spillin_csv,
    write_spillin_csv,
)
from .selection import estimate_network, write_trace_json

HOMOPHILY_DIMENSIONS = ("firm", "industry", "state")


@dataclass
class RunWriter:
    """Tracks files written during a run; quarantines them on failure."""

    outdir: Path
    written: list[Path] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.outdir = Path(self.outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.outdir / name
        self.written.append(p)
        return p

    def quarantine(self) -> Path:
        qdir = self.outdir / "quarantine"
        qdir.mkdir(parents=True, exist_ok=True)
        for p in self.written:
            if p.exists():
                shutil.move(str(p), str(qdir / p.name))
        return qdir


def parse_network_spec(spec: str):
    """Parse a network source string into (kind, parameter).

    Accepted forms: ``estimate``, ``file:PATH``, ``category:DIM``,
    ``knn:K``, ``threshold:P``, ``gaussian:auto`` or ``gaussian:SIGMA``.
    """
    if spec == "estimate":
        return ("estimate", None)
    kind, sep, arg = spec.partition(":")
    if not sep or not arg:
        raise ConfigError(f"network spec {spec!r} is not of the form kind:arg (or 'estimate')")
    if kind == "file":
        return ("file", arg)
    if kind == "category":
        if arg not in HOMOPHILY_DIMENSIONS:
            raise ConfigError(f"category dimension must be one of {HOMOPHILY_DIMENSIONS}, got {arg!r}")
        return ("category", arg)
    if kind == "knn":
        try:
            return ("knn", int(arg))
        except ValueError:
            raise ConfigError(f"knn spec needs an integer, got {arg!r}") from None
    if kind == "threshold":
        try:
            return ("threshold", float(arg))
        except ValueError:
            raise ConfigError(f"threshold spec needs a float percentile, got {arg!r}") from None
    if kind == "gaussian":
        if arg == "auto":
            return ("gaussian", "auto")
        try:
            return ("gaussian", float(arg))
        except ValueError:
            raise ConfigError(f"gaussian spec needs 'auto' or a float, got {arg!r}") from None
    raise ConfigError(f"unknown network spec kind {kind!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; validated at construction."""

    panel_path: str
    network: str = "estimate"
    out_dir: str = "netpanel_out"
    config_path: str | None = None
    difference: bool = False
    factor_count: int | str = "auto"
    r_max: int = 8
    p: float = 0.05
    c: float = 1.0
    delta: float = 1.0
    draws: int = 2000
    permutations: int = 10000
    seed: int = 0
    threads: int = 1
    size_var: str | None = None
    homophily_dims: tuple[str, ...] = HOMOPHILY_DIMENSIONS
    weighted_homophily: bool = False

    def __post_init__(self) -> None:
        parse_network_spec(self.network)
        if isinstance(self.factor_count, str):
            if self.factor_count != "auto":
                raise ConfigError(f"factor_count must be an int or 'auto', got {self.factor_count!r}")
        elif self.factor_count < 0:
            raise ConfigError(f"factor_count must be nonnegative, got {self.factor_count}")
        if not (0.0 < self.p < 1.0):
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if self.c <= 0 or self.delta < 0:
            raise ConfigError("need c > 0 and delta >= 0")
        if self.draws < 2:
            raise ConfigError(f"draws must be >= 2, got {self.draws}")
        if self.permutations < 1:
            raise ConfigError(f"permutations must be >= 1, got {self.permutations}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        for dim in self.homophily_dims:
            if dim not in HOMOPHILY_DIMENSIONS:
                raise ConfigError(f"unknown homophily dimension {dim!r}")


def load_run_panel(cfg: RunConfig) -> PanelDataset:
    options = LoadOptions(difference=cfg.difference)
    if cfg.config_path:
        options = LoadOptions.from_json(cfg.config_path)
        if cfg.difference and not options.difference:
            options = LoadOptions(difference=True, var_names=options.var_names)
    return load_panel(cfg.panel_path, options)


def resolve_factors(
    panel: PanelDataset, factor_count: int | str, r_max: int
) -> tuple[FactorModel | None, dict]:
    """Estimate the factor model per config; returns (model, diagnostics)."""
    info: dict = {"requested": factor_count}
    if factor_count == "auto":
        r_cap = max(1, min(r_max, (panel.t - 1) // 2))
        choice = select_num_factors(panel, r_max=r_cap)
        info["selected_r"] = choice.r
        info["low_signal"] = bool(choice.low_signal)
        info["eigenvalue_ratios"] = [float(v) for v in np.nan_to_num(choice.ratios, posinf=1e300)]
        r = choice.r
    else:
        r = int(factor_count)
        info["selected_r"] = r
    if r == 0:
        return None, info
    fm = estimate_factors(panel, r)
    info["explained_shares"] = [float(v) for v in fm.explained]
    return fm, info


def build_network(
    kind: str, arg, panel: PanelDataset, data, cfg: RunConfig, writer: RunWriter | None
):
    """Materialize the network per spec; returns (NetworkMatrix, extra_info)."""
    if kind == "estimate":
        adj = estimate_network(data, p=cfg.p, c=cfg.c, delta=cfg.delta, threads=cfg.threads)
        if writer is not None:
            write_trace_json(adj, writer.path("selection_trace.json"))
        return adj.w, {
            "abs_fallback_units": list(adj.abs_fallback_units),
            "p": cfg.p,
            "c": cfg.c,
            "delta": cfg.delta,
        }
    if kind == "file":
        return read_edge_list(arg, n=panel.n), {"source": str(arg)}
    if kind == "category":
        return category_network(panel.meta, arg), {"dimension": arg}
    if kind == "knn":
        return knn_network(panel.meta, arg), {"k": arg}
    if kind == "threshold":
        return threshold_distance_network(panel.meta, arg), {"percentile": arg}
    if kind == "gaussian":
        return gaussian_network(panel.meta, arg), {"sigma": str(arg)}
    raise ConfigError(f"unknown network kind {kind!r}")  # pragma: no cover


def _manifest(cfg: RunConfig, extra: dict) -> dict:
    payload = {
        "config": {
            "panel_path": cfg.panel_path,
            "network": cfg.network,
            "out_dir": cfg.out_dir,
            "config_path": cfg.config_path,
            "difference": cfg.difference,
            "factor_count": cfg.factor_count,
            "r_max": cfg.r_max,
            "p": cfg.p,
            "c": cfg.c,
            "delta": cfg.delta,
            "draws": cfg.draws,
            "permutations": cfg.permutations,
            "seed": cfg.seed,
            "threads": cfg.threads,
            "size_var": cfg.size_var,
            "homophily_dims": list(cfg.homophily_dims),
            "weighted_homophily": cfg.weighted_homophily,
        },
        "versions": {
            "netpanel": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    payload.update(extra)
    return payload


def run_pipeline(cfg: RunConfig) -> dict:
    """Full workflow: load, defactor, network, fit, impacts, spill-ins,
    homophily. Returns the manifest dict; writes all artifacts."""
    writer = RunWriter(Path(cfg.out_dir))
    try:
        manifest_extra: dict = {}
        panel = load_run_panel(cfg)
        summarize(panel).to_csv(writer.path("summary.csv"))

        fm, factor_info = resolve_factors(panel, cfg.factor_count, cfg.r_max)
        manifest_extra["factors"] = factor_info
        if fm is not None:
            write_factors_csv(fm, writer.path("factors.csv"))
        data = defactor_panel(panel, fm)

        kind, arg = parse_network_spec(cfg.network)
        net, net_info = build_network(kind, arg, panel, data, cfg, writer)
        if kind == "file" and not net.normalized:
            # imported raw weights get the standard row convention; estimated
            # networks keep their (possibly abs-normalized) rows untouched
            net = row_normalize(net)
        write_edge_list(net, writer.path("network_edges.csv"))
        stats = network_stats(net)
        manifest_extra["network"] = {
            "kind": kind,
            "info": net_info,
            "n_links": stats.n_links,
            "density": stats.density,
            "mean_out_degree": stats.mean_out_degree,
            "max_out_degree": stats.max_out_degree,
        }

        units = estimate_all_units(data, net)
        mg = mgiv(units)
        write_coefficient_csv(mg, panel.var_names, writer.path("coefficients.csv"))

        eff = effects_se(net, mg, n_draws=cfg.draws, seed=cfg.seed)
        write_effects_csv(eff, panel.var_names, writer.path("effects.csv"))

        im = impact_matrices(net, float(mg.theta[0]), mg.theta[1:])
        for dim in cfg.homophily_dims:
            labels = [getattr(m, {"firm": "firm_id"}.get(dim, dim)) for m in panel.meta]
            spill = spillins(im, labels)
            write_spillin_csv(spill, panel.var_names, dim, writer.path(f"spillins_{dim}.csv"))
        size_name = cfg.size_var or panel.var_names[0]
        if size_name not in panel.var_names:
            raise ConfigError(f"size_var {size_name!r} is not a covariate: {panel.var_names}")
        sizes = panel.x[:, :, panel.var_names.index(size_name)].mean(axis=1)
        write_quintile_spillin_csv(
            quintile_spillins(im, sizes), panel.var_names, writer.path("spillins_quintiles.csv")
        )

        homos = {
            dim: category_homophily(
                net,
                [getattr(m, {"firm": "firm_id"}.get(dim, dim)) for m in panel.meta],
                n_permutations=cfg.permutations,
                seed=cfg.seed,
                weighted=cfg.weighted_homophily,
            )
            for dim in cfg.homophily_dims
        }
        write_homophily_csv(homos, writer.path("homophily.csv"))
        logit = link_formation_logit(net, panel)
        ranksum = distance_rank_sum(net, panel.meta)
        write_json(homophily_payload(homos, logit, ranksum), writer.path("homophily.json"))

        manifest = _manifest(cfg, manifest_extra)
        write_json(manifest, writer.path("manifest.json"))
        return manifest
    except NetpanelError:
        writer.quarantine()
        raise
