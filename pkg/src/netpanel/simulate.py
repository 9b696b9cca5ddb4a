"""Synthetic data generation with a known network, and recovery experiments.

The generating process draws a sparse row-normalized weight matrix, unit
spatial coefficients and covariate slopes, latent factors driving both
the covariates and the outcome disturbances, and solves the simultaneous
system period by period:

    y_(t) = (I - Psi W)^{-1} (sum_l B_l x_{l,(t)} + u_(t)).

Covariates load on all factors; disturbances load on the first ``r_y``
factors only, so defactoring on covariate-extracted factors removes the
outcome's common component. Optional proxy planting correlates a
non-neighbour's covariate innovations with a true neighbour's, creating
spurious-link bait for selection procedures.

All randomness flows from one seed through named substreams, so every
artifact is reproducible byte for byte.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InsufficientUnitsError
from .estimation import estimate_all_units, mgiv
from .factors import defactor_panel, estimate_factors
from .networks import NetworkMatrix, write_edge_list
from .panel import FacilityMeta, PanelDataset, write_panel_csv
from .selection import estimate_network

_SUBSTREAMS = ("network", "coefficients", "factors", "loadings", "x_noise", "y_noise", "meta")


@dataclass(frozen=True)
class DGPConfig:
    """Parameters of the synthetic generating process.

    ``k_links`` is an int (same out-degree for every unit) or a tuple of
    choices sampled uniformly per unit; 0 gives isolated units.
    ``weight_mode`` is ``"uniform"`` (1/k each) or ``"heterogeneous"``
    (random positive weights, row-normalized). ``proxy_fraction`` of the
    units get covariate innovations correlated (at ``proxy_corr``) with
    those of some other unit's true neighbour.
    """

    n: int = 50
    t: int = 200
    k: int = 2
    r_y: int = 1
    r_x: int = 1
    k_links: int | tuple[int, ...] = 2
    psi_range: tuple[float, float] = (0.4, 0.8)
    beta_means: tuple[float, ...] | None = None
    beta_sd: float = 0.1
    loading_sd: float = 1.0
    noise_sd: float = 1.0
    weight_mode: str = "uniform"
    proxy_fraction: float = 0.0
    proxy_corr: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"need at least one covariate, got k={self.k}")
        if self.n < self.k + 2 or self.t < self.k + 2:
            raise ConfigError(f"need n, t >= k+2={self.k + 2}, got n={self.n}, t={self.t}")
        if self.r_y < 0 or self.r_x < 0:
            raise ConfigError("factor counts must be nonnegative")
        if self.r_y + self.r_x >= self.t:
            raise ConfigError("total factor count must be below t")
        choices = self.k_links if isinstance(self.k_links, tuple) else (self.k_links,)
        if not choices or any((not isinstance(v, int)) or v < 0 or v > self.n - 1 for v in choices):
            raise ConfigError(f"k_links values must be ints in [0, n-1], got {self.k_links}")
        lo, hi = self.psi_range
        if not (lo <= hi):
            raise ConfigError(f"psi_range must be (low, high) with low <= high, got {self.psi_range}")
        if max(abs(lo), abs(hi)) >= 1.0:
            raise ConfigError("|psi| must stay below 1 for a stable row-normalized system")
        if self.beta_means is not None and len(self.beta_means) != self.k:
            raise ConfigError(f"beta_means has {len(self.beta_means)} entries for k={self.k}")
        if self.beta_sd < 0 or self.loading_sd < 0:
            raise ConfigError("beta_sd and loading_sd must be nonnegative")
        if self.noise_sd <= 0:
            raise ConfigError("noise_sd must be positive")
        if self.weight_mode not in ("uniform", "heterogeneous"):
            raise ConfigError(f"weight_mode must be 'uniform' or 'heterogeneous', got {self.weight_mode!r}")
        if not (0.0 <= self.proxy_fraction <= 1.0):
            raise ConfigError(f"proxy_fraction must lie in [0, 1], got {self.proxy_fraction}")
        if not (-1.0 <= self.proxy_corr <= 1.0):
            raise ConfigError(f"proxy_corr must lie in [-1, 1], got {self.proxy_corr}")


@dataclass(frozen=True)
class SyntheticDataset:
    """A generated panel together with every latent truth."""

    panel: PanelDataset
    w_true: NetworkMatrix
    psi: np.ndarray
    betas: np.ndarray
    factors: np.ndarray
    y_loadings: np.ndarray
    x_loadings: np.ndarray
    proxy_pairs: tuple[tuple[int, int], ...]
    config: DGPConfig


def _substream_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_SUBSTREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(_SUBSTREAMS, children)}


_STATE_POOL = tuple(f"S{i:02d}" for i in range(1, 50))
_INDUSTRY_POOL = tuple(f"ind{i}" for i in range(1, 10))


def _disjoint_derangements(
    rng: np.random.Generator, n: int, m: int
) -> list[np.ndarray]:
    """Draw ``m`` permutations of range(n), fixed-point free and pairwise
    disjoint at every position.

    Unit ``i``'s links are the images of ``i`` under the first ``k_i``
    permutations, which bounds every in-degree by ``m``. Unbounded
    in-degrees would let chance hubs aggregate so many units' signals
    that they mimic common factors, which no selection procedure that
    conditions only on covariates can distinguish from real links.

    Rejection-samples each permutation; if that fails (likely only when
    ``m`` nears ``n``), falls back to relabeled cyclic shifts, which
    satisfy both constraints for any ``m < n``.
    """
    if m == 0:
        return []
    idx = np.arange(n)
    perms: list[np.ndarray] = []
    for _ in range(m):
        for _ in range(1000):
            cand = rng.permutation(n)
            if (cand == idx).any():
                continue
            if any((cand == p).any() for p in perms):
                continue
            perms.append(cand)
            break
        else:
            relabel = rng.permutation(n)
            inverse = np.empty(n, dtype=int)
            inverse[relabel] = idx
            return [relabel[(inverse + s + 1) % n] for s in range(m)]
    return perms


def _draw_meta(n: int, rng: np.random.Generator) -> tuple[FacilityMeta, ...]:
    width = max(3, len(str(n - 1)))
    firms = [f"f{i // 4:03d}" for i in range(n)]
    industries = rng.choice(_INDUSTRY_POOL, size=n)
    states = rng.choice(_STATE_POOL, size=n)
    lats = rng.uniform(25.0, 49.0, size=n)
    lons = rng.uniform(-124.0, -67.0, size=n)
    return tuple(
        FacilityMeta(
            unit_id=f"u{i:0{width}d}",
            firm_id=firms[i],
            industry=str(industries[i]),
            state=str(states[i]),
            latitude=float(lats[i]),
            longitude=float(lons[i]),
        )
        for i in range(n)
    )


def generate(config: DGPConfig) -> SyntheticDataset:
    """Draw one synthetic dataset from the configured process."""
    rngs = _substream_rngs(config.seed)
    n, t, k = config.n, config.t, config.k
    r = config.r_y + config.r_x

    # --- network ------------------------------------------------------
    rng_w = rngs["network"]
    choices = config.k_links if isinstance(config.k_links, tuple) else (config.k_links,)
    ks = rng_w.choice(np.asarray(choices), size=n)
    perms = _disjoint_derangements(rng_w, n, int(ks.max()))
    rows, cols, vals = [], [], []
    for i in range(n):
        k_i = int(ks[i])
        if k_i == 0:
            continue
        support = [int(perms[m][i]) for m in range(k_i)]
        if config.weight_mode == "uniform":
            w_row = np.full(k_i, 1.0 / k_i)
        else:
            raw = rng_w.uniform(0.5, 1.5, size=k_i)
            w_row = raw / raw.sum()
        for j, wv in zip(support, w_row):
            rows.append(i)
            cols.append(j)
            vals.append(float(wv))
    w = NetworkMatrix(
        sp.csr_matrix((vals, (rows, cols)), shape=(n, n)), provenance="simulated", normalized=True
    )

    # --- coefficients ---------------------------------------------------
    rng_c = rngs["coefficients"]
    psi = rng_c.uniform(config.psi_range[0], config.psi_range[1], size=n)
    means = np.array(config.beta_means if config.beta_means is not None else np.ones(k))
    betas = means[None, :] + config.beta_sd * rng_c.standard_normal((n, k))

    # --- factors and loadings -------------------------------------------
    factors = rngs["factors"].standard_normal((t, r)) if r else np.zeros((t, 0))
    rng_l = rngs["loadings"]
    y_loadings = config.loading_sd * rng_l.standard_normal((n, config.r_y))
    x_loadings = config.loading_sd * rng_l.standard_normal((n, r, k))

    # --- innovations ------------------------------------------------------
    v = config.noise_sd * rngs["x_noise"].standard_normal((n, t, k))
    eps = config.noise_sd * rngs["y_noise"].standard_normal((n, t))

    # --- proxy planting ---------------------------------------------------
    proxy_pairs: list[tuple[int, int]] = []
    n_proxy = int(round(config.proxy_fraction * n))
    if n_proxy > 0:
        rng_p = rngs["network"]  # continue the network stream deterministically
        linked_units = [i for i in range(n) if w.support(i).size > 0]
        if linked_units:
            rho = config.proxy_corr
            taken: set[int] = set()
            attempts = 0
            while len(proxy_pairs) < n_proxy and attempts < 50 * n:
                attempts += 1
                i = int(rng_p.choice(linked_units))
                j_star = int(rng_p.choice(w.support(i)))
                q = int(rng_p.integers(n))
                if q in taken or q == i or q == j_star or q in set(w.support(i)):
                    continue
                v[q] = rho * v[j_star] + np.sqrt(1.0 - rho**2) * v[q]
                taken.add(q)
                proxy_pairs.append((q, j_star))

    # --- assemble panel --------------------------------------------------
    x = np.einsum("tr,nrk->ntk", factors, x_loadings) + v if r else v
    g = factors[:, : config.r_y]
    u = (g @ y_loadings.T).T + eps if config.r_y else eps
    rhs = np.einsum("nk,ntk->nt", betas, x) + u
    s_mat = np.eye(n) - psi[:, None] * w.to_dense()
    y = np.linalg.solve(s_mat, rhs)

    meta = _draw_meta(n, rngs["meta"])
    panel = PanelDataset(
        y=y,
        x=x,
        meta=meta,
        var_names=tuple(f"x{j + 1}" for j in range(k)),
        periods=tuple(str(s) for s in range(t)),
    )
    return SyntheticDataset(
        panel=panel,
        w_true=w,
        psi=psi,
        betas=betas,
        factors=factors,
        y_loadings=y_loadings,
        x_loadings=x_loadings,
        proxy_pairs=tuple(proxy_pairs),
        config=config,
    )


def write_truth(ds: SyntheticDataset, outdir: str | Path) -> None:
    """Write the generated panel plus truth sidecars (edge list, parameters)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_panel_csv(ds.panel, outdir / "panel.csv")
    write_edge_list(ds.w_true, outdir / "truth_edges.csv")
    cfg = asdict(ds.config)
    cfg["k_links"] = list(cfg["k_links"]) if isinstance(cfg["k_links"], tuple) else cfg["k_links"]
    payload = {
        "config": cfg,
        "psi": [float(v) for v in ds.psi],
        "betas": [[float(v) for v in row] for row in ds.betas],
        "r_y": ds.config.r_y,
        "r_x": ds.config.r_x,
        "proxy_pairs": [list(p) for p in ds.proxy_pairs],
    }
    (outdir / "truth_params.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf8"
    )


@dataclass(frozen=True)
class RecoveryResult:
    """Aggregate metrics of a selection + estimation recovery experiment."""

    replications: int
    true_positive_rate: float
    false_positives_per_unit: float
    exact_recovery_share: float
    share_units_with_links: float
    mg_true_w: np.ndarray
    mg_est_w: np.ndarray
    theta_target: np.ndarray
    per_rep_tpr: np.ndarray
    per_rep_fp_per_unit: np.ndarray
    elapsed_seconds: float


def _rep_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence((base_seed, rep)).generate_state(1)[0])


def _mg_theta_or_nan(data, net, n_params: int) -> np.ndarray:
    """Mean-group theta, or NaNs when too few units identify a parameter
    (e.g. an empty network under the null)."""
    try:
        return mgiv(estimate_all_units(data, net)).theta
    except InsufficientUnitsError:
        return np.full(n_params, np.nan)


def recovery_experiment(
    config: DGPConfig,
    replications: int,
    p: float = 0.05,
    c: float = 1.0,
    delta: float = 1.0,
    use_true_factor_count: bool = True,
) -> RecoveryResult:
    """Monte Carlo of the full pipeline against the known truth.

    Each replication generates a dataset, defactors (using the true factor
    count by default), recovers the network, and estimates mean-group
    coefficients under both the true and the recovered weight matrix.
    """
    if replications < 1:
        raise ConfigError(f"replications must be >= 1, got {replications}")
    t0 = time.perf_counter()
    n = config.n
    r = config.r_y + config.r_x
    tp = fn = fp = 0
    exact = 0
    units_with_links = 0
    mg_true_rows = []
    mg_est_rows = []
    rep_tpr = np.empty(replications)
    rep_fp = np.empty(replications)
    for rep in range(replications):
        ds = generate(replace(config, seed=_rep_seed(config.seed, rep)))
        fm = estimate_factors(ds.panel, r) if (use_true_factor_count and r) else None
        data = defactor_panel(ds.panel, fm)
        adj = estimate_network(data, p=p, c=c, delta=delta)

        rep_tp = rep_fn = rep_fp_count = 0
        all_match = True
        for i in range(n):
            truth = set(int(j) for j in ds.w_true.support(i))
            found = set(adj.selection[i].selected)
            rep_tp += len(truth & found)
            rep_fn += len(truth - found)
            rep_fp_count += len(found - truth)
            if truth != found:
                all_match = False
            if found:
                units_with_links += 1
        tp += rep_tp
        fn += rep_fn
        fp += rep_fp_count
        exact += int(all_match)
        denom_links = rep_tp + rep_fn
        rep_tpr[rep] = rep_tp / denom_links if denom_links else np.nan
        rep_fp[rep] = rep_fp_count / n

        mg_true_rows.append(_mg_theta_or_nan(data, ds.w_true, config.k + 1))
        mg_est_rows.append(_mg_theta_or_nan(data, adj.w, config.k + 1))

    target = np.concatenate(
        (
            [0.5 * (config.psi_range[0] + config.psi_range[1])],
            np.array(config.beta_means if config.beta_means is not None else np.ones(config.k)),
        )
    )
    total_links = tp + fn
    return RecoveryResult(
        replications=replications,
        true_positive_rate=tp / total_links if total_links else float("nan"),
        false_positives_per_unit=fp / (replications * n),
        exact_recovery_share=exact / replications,
        share_units_with_links=units_with_links / (replications * n),
        mg_true_w=np.vstack(mg_true_rows),
        mg_est_w=np.vstack(mg_est_rows),
        theta_target=target,
        per_rep_tpr=rep_tpr,
        per_rep_fp_per_unit=rep_fp,
        elapsed_seconds=time.perf_counter() - t0,
    )
