"""Command-line interface.

Subcommands mirror the library workflow: ``simulate``, ``select-network``,
``fit``, ``impacts``, ``spillins``, ``homophily``, ``pipeline``, and
``report``. Every command takes one ``--seed`` and is deterministic: the
same invocation produces byte-identical artifacts, for any ``--threads``.

Exit codes: 0 success, 1 data or numerical failure, 2 configuration error.
The default output directory honours the ``NETPANEL_OUT`` environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, NetpanelError
from .estimation import estimate_all_units, mgiv, twfe
from .factors import defactor_panel
from .homophily import category_homophily, distance_rank_sum, link_formation_logit
from .impacts import effects_se, impact_matrices, quintile_spillins, spillins
from .networks import network_stats, write_dot, write_edge_list
from .pipeline import (
    HOMOPHILY_DIMENSIONS,
    RunConfig,
    RunWriter,
    build_network,
    load_run_panel,
    parse_network_spec,
    resolve_factors,
    run_pipeline,
    _manifest,
)
from .reports import (
    homophily_payload,
    write_coefficient_csv,
    write_effects_csv,
    write_homophily_csv,
    write_json,
    write_quintile_spillin_csv,
    write_spillin_csv,
    write_twfe_csv,
)
from .simulate import DGPConfig, generate, write_truth


def _default_out() -> str:
    return os.environ.get("NETPANEL_OUT", "netpanel_out")


def _add_common(parser: argparse.ArgumentParser, panel: bool = True) -> None:
    if panel:
        parser.add_argument("--panel", required=True, help="panel CSV path")
        parser.add_argument("--config", default=None, help="JSON load options (difference, var_names)")
        parser.add_argument(
            "--difference", action="store_true", help="first-difference the outcome on load"
        )
        parser.add_argument(
            "--factors",
            default="auto",
            help="factor count: integer, 0 to skip defactoring, or 'auto' (default)",
        )
        parser.add_argument("--r-max", type=int, default=8, help="search cap for auto factor count")
    parser.add_argument("--out", default=None, help=f"output directory (default: $NETPANEL_OUT or {_default_out()!r})")
    parser.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for per-unit selection")


def _network_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--network",
        default="estimate",
        help="network source: estimate | file:PATH | category:DIM | knn:K | "
        "threshold:P | gaussian:auto|SIGMA",
    )


def _run_config(args, network: str | None = None) -> RunConfig:
    factors = args.factors
    if factors != "auto":
        try:
            factors = int(factors)
        except ValueError:
            raise ConfigError(f"--factors must be an integer or 'auto', got {factors!r}") from None
    return RunConfig(
        panel_path=args.panel,
        network=network if network is not None else getattr(args, "network", "estimate"),
        out_dir=args.out or _default_out(),
        config_path=args.config,
        difference=args.difference,
        factor_count=factors,
        r_max=args.r_max,
        p=getattr(args, "p", 0.05),
        c=getattr(args, "c", 1.0),
        delta=getattr(args, "delta", 1.0),
        draws=getattr(args, "draws", 2000),
        permutations=getattr(args, "permutations", 10000),
        seed=args.seed,
        threads=args.threads,
        size_var=getattr(args, "size_var", None),
        homophily_dims=tuple(getattr(args, "dims", None) or HOMOPHILY_DIMENSIONS),
        weighted_homophily=getattr(args, "weighted", False),
    )


def _prepare(cfg: RunConfig, writer: RunWriter):
    """Load, defactor, and build the network; shared by several commands."""
    panel = load_run_panel(cfg)
    fm, factor_info = resolve_factors(panel, cfg.factor_count, cfg.r_max)
    data = defactor_panel(panel, fm)
    kind, arg = parse_network_spec(cfg.network)
    net, net_info = build_network(kind, arg, panel, data, cfg, writer)
    if kind == "file" and not net.normalized:
        from .networks import row_normalize

        net = row_normalize(net)
    return panel, data, net, {"factors": factor_info, "network": {"kind": kind, "info": net_info}}


def cmd_simulate(args) -> int:
    k = args.k
    beta_means = tuple(args.beta_mean) if args.beta_mean else None
    if beta_means is not None and len(beta_means) not in (1, k):
        raise ConfigError(f"--beta-mean takes 1 or {k} values, got {len(beta_means)}")
    if beta_means is not None and len(beta_means) == 1:
        beta_means = beta_means * k
    config = DGPConfig(
        n=args.n,
        t=args.t,
        k=k,
        r_y=args.r_y,
        r_x=args.r_x,
        k_links=tuple(args.k_links) if len(args.k_links) > 1 else args.k_links[0],
        psi_range=(args.psi_min, args.psi_max),
        beta_means=beta_means,
        beta_sd=args.beta_sd,
        loading_sd=args.loading_sd,
        noise_sd=args.noise_sd,
        weight_mode=args.weight_mode,
        proxy_fraction=args.proxy_fraction,
        proxy_corr=args.proxy_corr,
        seed=args.seed,
    )
    outdir = Path(args.out or _default_out())
    ds = generate(config)
    write_truth(ds, outdir)
    stats = network_stats(ds.w_true)
    manifest = {
        "command": "simulate",
        "config": {**{f: getattr(config, f) for f in config.__dataclass_fields__}},
        "network": {"n_links": stats.n_links, "density": stats.density},
    }
    manifest["config"]["k_links"] = (
        list(config.k_links) if isinstance(config.k_links, tuple) else config.k_links
    )
    manifest["config"]["psi_range"] = list(config.psi_range)
    if config.beta_means is not None:
        manifest["config"]["beta_means"] = list(config.beta_means)
    write_json(manifest, outdir / "manifest.json")
    print(f"wrote panel and truth sidecars to {outdir}")
    return 0


def cmd_select_network(args) -> int:
    cfg = _run_config(args, network="estimate")
    writer = RunWriter(Path(cfg.out_dir))
    try:
        panel, data, net, extra = _prepare(cfg, writer)
        write_edge_list(net, writer.path("network_edges.csv"))
        write_dot(net, writer.path("network.dot"), panel.unit_ids)
        stats = network_stats(net)
        extra["network"]["n_links"] = stats.n_links
        extra["network"]["density"] = stats.density
        extra["network"]["max_out_degree"] = stats.max_out_degree
        extra["command"] = "select-network"
        write_json(_manifest(cfg, extra), writer.path("manifest.json"))
    except NetpanelError:
        writer.quarantine()
        raise
    print(f"selected {net.n_links} links across {net.n} units -> {cfg.out_dir}")
    return 0


def cmd_fit(args) -> int:
    if args.twfe:
        cfg = _run_config(args, network="estimate")  # network unused
        writer = RunWriter(Path(cfg.out_dir))
        try:
            panel = load_run_panel(cfg)
            res = twfe(panel, group=args.twfe)
            write_twfe_csv(res, panel.var_names, writer.path("twfe.csv"))
            write_json(
                _manifest(cfg, {"command": "fit", "estimator": f"twfe:{args.twfe}"}),
                writer.path("manifest.json"),
            )
        except NetpanelError:
            writer.quarantine()
            raise
        print(f"two-way FE ({args.twfe}) estimates -> {cfg.out_dir}")
        return 0
    cfg = _run_config(args)
    writer = RunWriter(Path(cfg.out_dir))
    try:
        panel, data, net, extra = _prepare(cfg, writer)
        mg = mgiv(estimate_all_units(data, net))
        write_coefficient_csv(mg, panel.var_names, writer.path("coefficients.csv"))
        write_edge_list(net, writer.path("network_edges.csv"))
        extra["command"] = "fit"
        write_json(_manifest(cfg, extra), writer.path("manifest.json"))
    except NetpanelError:
        writer.quarantine()
        raise
    print(f"mean-group estimates over {net.n} units -> {cfg.out_dir}")
    return 0


def cmd_impacts(args) -> int:
    cfg = _run_config(args)
    writer = RunWriter(Path(cfg.out_dir))
    try:
        panel, data, net, extra = _prepare(cfg, writer)
        mg = mgiv(estimate_all_units(data, net))
        eff = effects_se(net, mg, n_draws=cfg.draws, seed=cfg.seed)
        write_effects_csv(eff, panel.var_names, writer.path("effects.csv"))
        extra["command"] = "impacts"
        write_json(_manifest(cfg, extra), writer.path("manifest.json"))
    except NetpanelError:
        writer.quarantine()
        raise
    print(f"effect decomposition with {cfg.draws} simulation draws -> {cfg.out_dir}")
    return 0


def cmd_spillins(args) -> int:
    cfg = _run_config(args)
    writer = RunWriter(Path(cfg.out_dir))
    try:
        panel, data, net, extra = _prepare(cfg, writer)
        mg = mgiv(estimate_all_units(data, net))
        im = impact_matrices(net, float(mg.theta[0]), mg.theta[1:])
        for dim in cfg.homophily_dims:
            labels = [getattr(m, {"firm": "firm_id"}.get(dim, dim)) for m in panel.meta]
            write_spillin_csv(
                spillins(im, labels), panel.var_names, dim, writer.path(f"spillins_{dim}.csv")
            )
        size_name = cfg.size_var or panel.var_names[0]
        if size_name not in panel.var_names:
            raise ConfigError(f"size_var {size_name!r} is not a covariate: {panel.var_names}")
        sizes = panel.x[:, :, panel.var_names.index(size_name)].mean(axis=1)
        write_quintile_spillin_csv(
            quintile_spillins(im, sizes), panel.var_names, writer.path("spillins_quintiles.csv")
        )
        extra["command"] = "spillins"
        write_json(_manifest(cfg, extra), writer.path("manifest.json"))
    except NetpanelError:
        writer.quarantine()
        raise
    print(f"spill-in decompositions -> {cfg.out_dir}")
    return 0


def cmd_homophily(args) -> int:
    cfg = _run_config(args)
    writer = RunWriter(Path(cfg.out_dir))
    try:
        panel, data, net, extra = _prepare(cfg, writer)
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
        extra["command"] = "homophily"
        write_json(_manifest(cfg, extra), writer.path("manifest.json"))
    except NetpanelError:
        writer.quarantine()
        raise
    print(f"homophily diagnostics -> {cfg.out_dir}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _run_config(args)
    run_pipeline(cfg)
    print(f"pipeline complete -> {cfg.out_dir}")
    return 0


def cmd_report(args) -> int:
    rundir = Path(args.run)
    manifest_path = rundir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{rundir} has no manifest.json; not a completed run")
    manifest = json.loads(manifest_path.read_text(encoding="utf8"))
    lines = ["# Run report", ""]
    cfg = manifest.get("config", {})
    lines.append(f"- panel: `{cfg.get('panel_path', '?')}`")
    lines.append(f"- network source: `{cfg.get('network', '?')}`")
    lines.append(f"- seed: {cfg.get('seed', '?')}")
    if "factors" in manifest:
        lines.append(f"- factors: {manifest['factors'].get('selected_r', '?')} selected")
    if "network" in manifest:
        netinfo = manifest["network"]
        lines.append(
            f"- links: {netinfo.get('n_links', '?')} "
            f"(density {netinfo.get('density', float('nan')):.4%}, "
            f"max out-degree {netinfo.get('max_out_degree', '?')})"
        )
    lines.append("")
    for name in sorted(p.name for p in rundir.glob("*.csv")):
        lines.append(f"## {name}")
        lines.append("")
        lines.append("```")
        lines.extend(Path(rundir / name).read_text(encoding="utf8").strip().splitlines())
        lines.append("```")
        lines.append("")
    out_path = Path(args.out) if args.out else rundir / "report.md"
    out_path.write_text("\n".join(lines) + "\n", encoding="utf8")
    print(f"report -> {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netpanel",
        description="Spatial panel estimation with data-driven network recovery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic panel with known truth")
    p_sim.add_argument("--n", type=int, default=50)
    p_sim.add_argument("--t", type=int, default=200)
    p_sim.add_argument("--k", type=int, default=2)
    p_sim.add_argument("--r-y", type=int, default=1)
    p_sim.add_argument("--r-x", type=int, default=1)
    p_sim.add_argument("--k-links", type=int, nargs="+", default=[2])
    p_sim.add_argument("--psi-min", type=float, default=0.4)
    p_sim.add_argument("--psi-max", type=float, default=0.8)
    p_sim.add_argument("--beta-mean", type=float, nargs="+", default=None)
    p_sim.add_argument("--beta-sd", type=float, default=0.1)
    p_sim.add_argument("--loading-sd", type=float, default=1.0)
    p_sim.add_argument("--noise-sd", type=float, default=1.0)
    p_sim.add_argument("--weight-mode", choices=["uniform", "heterogeneous"], default="uniform")
    p_sim.add_argument("--proxy-fraction", type=float, default=0.0)
    p_sim.add_argument("--proxy-corr", type=float, default=0.5)
    _add_common(p_sim, panel=False)
    p_sim.set_defaults(func=cmd_simulate)

    p_sel = sub.add_parser("select-network", help="recover the network from the panel")
    _add_common(p_sel)
    p_sel.add_argument("--p", type=float, default=0.05, help="familywise level of the scan")
    p_sel.add_argument("--c", type=float, default=1.0, help="threshold scale constant")
    p_sel.add_argument("--delta", type=float, default=1.0, help="threshold exponent on n")
    p_sel.set_defaults(func=cmd_select_network)

    p_fit = sub.add_parser("fit", help="per-unit IV + mean-group estimates (or TWFE baseline)")
    _add_common(p_fit)
    _network_arg(p_fit)
    p_fit.add_argument("--p", type=float, default=0.05)
    p_fit.add_argument("--c", type=float, default=1.0)
    p_fit.add_argument("--delta", type=float, default=1.0)
    p_fit.add_argument("--twfe", choices=["facility", "firm"], default=None, help="fit the two-way FE baseline instead")
    p_fit.set_defaults(func=cmd_fit)

    p_imp = sub.add_parser("impacts", help="direct/indirect/total effects with simulation SEs")
    _add_common(p_imp)
    _network_arg(p_imp)
    p_imp.add_argument("--p", type=float, default=0.05)
    p_imp.add_argument("--c", type=float, default=1.0)
    p_imp.add_argument("--delta", type=float, default=1.0)
    p_imp.add_argument("--draws", type=int, default=2000)
    p_imp.set_defaults(func=cmd_impacts)

    p_spill = sub.add_parser("spillins", help="within/between-group spill-in decomposition")
    _add_common(p_spill)
    _network_arg(p_spill)
    p_spill.add_argument("--p", type=float, default=0.05)
    p_spill.add_argument("--c", type=float, default=1.0)
    p_spill.add_argument("--delta", type=float, default=1.0)
    p_spill.add_argument("--dims", nargs="+", choices=list(HOMOPHILY_DIMENSIONS), default=None)
    p_spill.add_argument("--size-var", default=None, help="covariate for size quintiles (default: first)")
    p_spill.set_defaults(func=cmd_spillins)

    p_homo = sub.add_parser("homophily", help="label mixing, link-formation logit, rank-sum test")
    _add_common(p_homo)
    _network_arg(p_homo)
    p_homo.add_argument("--p", type=float, default=0.05)
    p_homo.add_argument("--c", type=float, default=1.0)
    p_homo.add_argument("--delta", type=float, default=1.0)
    p_homo.add_argument("--dims", nargs="+", choices=list(HOMOPHILY_DIMENSIONS), default=None)
    p_homo.add_argument("--permutations", type=int, default=10000)
    p_homo.add_argument("--weighted", action="store_true", help="weight links by |w| in the mixing share")
    p_homo.set_defaults(func=cmd_homophily)

    p_pipe = sub.add_parser("pipeline", help="full workflow with manifest")
    _add_common(p_pipe)
    _network_arg(p_pipe)
    p_pipe.add_argument("--p", type=float, default=0.05)
    p_pipe.add_argument("--c", type=float, default=1.0)
    p_pipe.add_argument("--delta", type=float, default=1.0)
    p_pipe.add_argument("--draws", type=int, default=2000)
    p_pipe.add_argument("--permutations", type=int, default=10000)
    p_pipe.add_argument("--dims", nargs="+", choices=list(HOMOPHILY_DIMENSIONS), default=None)
    p_pipe.add_argument("--size-var", default=None)
    p_pipe.add_argument("--weighted", action="store_true")
    p_pipe.set_defaults(func=cmd_pipeline)

    p_rep = sub.add_parser("report", help="render a completed run directory as markdown")
    p_rep.add_argument("--run", required=True, help="run output directory")
    p_rep.add_argument("--out", default=None, help="report path (default: RUN/report.md)")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NetpanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
