"""Network homophily diagnostics: label mixing, link-formation logit, and
rank-sum distance comparison.

Three complementary views of whether links favour similar units:

* share of links connecting same-label units, benchmarked against the
  label-permutation null;
* a logistic model of link presence on pairwise attribute distances,
  estimated with a Jeffreys-prior penalty (bias reduction that stays
  finite under complete separation, important at low link densities);
* a nonparametric rank-sum comparison of an attribute (typically
  geographic distance) between linked and unlinked pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import rankdata

from .errors import (
    ConvergenceError,
    DegenerateLabelsError,
    DimensionError,
    DomainError,
    SingularDesignError,
)
from .networks import NetworkMatrix, pairwise_distances
from .panel import PanelDataset


@dataclass(frozen=True)
class HomophilyReport:
    """Observed same-label link share against the permutation null."""

    h_observed: float
    h_null: float
    p_value: float
    l_same: float
    l_total: float
    n_permutations: int
    weighted: bool


def category_homophily(
    net: NetworkMatrix,
    labels,
    n_permutations: int = 10000,
    seed: int = 0,
    weighted: bool = False,
) -> HomophilyReport:
    """Same-label link share with a label-permutation test.

    The p-value is the fraction of permuted label assignments whose
    same-label statistic is at least the observed one. ``weighted=True``
    sums link weights instead of counting links.

    Raises
    ------
    DegenerateLabelsError
        Fewer than two distinct labels.
    DomainError
        The network has no links.
    """
    n = net.n
    labels = [str(lab) for lab in labels]
    if len(labels) != n:
        raise DimensionError(f"{len(labels)} labels for {n} units")
    codes = np.unique(labels, return_inverse=True)[1]
    if codes.max() == 0:
        raise DegenerateLabelsError("all units share one label; homophily undefined")
    coo = net.w.tocoo()
    if coo.nnz == 0:
        raise DomainError("network has no links")
    ii, jj = coo.row, coo.col
    wts = np.abs(coo.data) if weighted else np.ones(coo.nnz)
    l_total = float(wts.sum())
    l_same = float(wts[codes[ii] == codes[jj]].sum())
    h_obs = l_same / l_total

    rng = np.random.default_rng(seed)
    stats = np.empty(n_permutations)
    for b in range(n_permutations):
        perm = rng.permutation(codes)
        stats[b] = wts[perm[ii] == perm[jj]].sum()
    p_value = float(np.count_nonzero(stats >= l_same) / n_permutations)
    return HomophilyReport(
        h_observed=h_obs,
        h_null=float(stats.mean() / l_total),
        p_value=p_value,
        l_same=l_same,
        l_total=l_total,
        n_permutations=n_permutations,
        weighted=weighted,
    )


@dataclass(frozen=True)
class LinkFormationFit:
    """Bias-reduced logistic fit of link presence on attribute distances."""

    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    odds_ratio: np.ndarray
    converged: bool
    n_iter: int
    n_pairs: int
    n_links: int
    penalized_loglik: float
    dropped: tuple[str, ...]


def _firth_fit(
    x: np.ndarray, y: np.ndarray, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Newton iterations for the Jeffreys-penalized logistic likelihood."""

    def penalized_ll(beta: np.ndarray) -> float:
        eta = x @ beta
        # log p and log(1-p) written to stay finite for large |eta|
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        w_sqrt = np.sqrt(expit(eta) * expit(-eta))
        r = np.linalg.qr(x * w_sqrt[:, None], mode="r")
        diag = np.abs(np.diag(r))
        if np.any(diag <= 0.0):
            return -np.inf
        return ll + float(np.sum(np.log(diag)))

    n_params = x.shape[1]
    beta = np.zeros(n_params)
    ll = penalized_ll(beta)
    for it in range(1, max_iter + 1):
        p = expit(x @ beta)
        w = p * (1.0 - p)
        xw = x * np.sqrt(w)[:, None]
        q, r = np.linalg.qr(xw, mode="reduced")
        rdiag = np.abs(np.diag(r))
        if np.any(rdiag < 1e-12 * max(rdiag.max(), 1.0)):
            raise SingularDesignError("Fisher information is numerically singular")
        hat = np.einsum("ij,ij->i", q, q)
        score = x.T @ (y - p + hat * (0.5 - p))
        if np.max(np.abs(score)) < tol:
            fisher_inv = np.linalg.inv(r.T @ r)
            return beta, np.sqrt(np.diag(fisher_inv)), it - 1, ll
        step = np.linalg.solve(r.T @ r, score)
        # step halving keeps the penalized likelihood monotone
        for _ in range(30):
            candidate = beta + step
            cand_ll = penalized_ll(candidate)
            if cand_ll >= ll - 1e-12:
                break
            step = step / 2.0
        beta = beta + step
        ll = cand_ll
    p = expit(x @ beta)
    score = x.T @ (y - p)
    raise ConvergenceError(
        f"bias-reduced logit did not converge in {max_iter} iterations "
        f"(score inf-norm {np.max(np.abs(score)):.3e})"
    )


def link_formation_logit(
    net: NetworkMatrix,
    panel: PanelDataset,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> LinkFormationFit:
    """Model link presence on absolute differences of time-averaged covariates.

    Observations are all ordered pairs (i, j), i != j; the outcome is
    whether ``w[i, j]`` is nonzero; feature ``l`` is
    ``|mean_t x_{l,i} - mean_t x_{l,j}|``. Zero-variance features are
    dropped from the fit and reported with coefficient 0 and infinite
    standard error.

    Raises
    ------
    DimensionError
        Fewer than ``10 * (K + 1)`` pairs.
    DegenerateLabelsError
        All pairs linked or none linked.
    """
    n = net.n
    if panel.n != n:
        raise DimensionError(f"network has {n} units, panel has {panel.n}")
    k = panel.k
    xbar = panel.x.mean(axis=1)  # N x K
    iu = ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(iu)
    feats = np.abs(xbar[src] - xbar[dst])  # M x K
    y = (net.to_dense() != 0.0)[src, dst].astype(float)
    m = y.shape[0]
    if m < 10 * (k + 1):
        raise DimensionError(f"{m} pairs is too few for {k + 1} parameters (need >= {10 * (k + 1)})")
    n_links = int(y.sum())
    if n_links == 0 or n_links == m:
        raise DegenerateLabelsError("link outcome has a single class across all pairs")

    keep = [j for j in range(k) if np.ptp(feats[:, j]) > 0.0]
    dropped = tuple(panel.var_names[j] for j in range(k) if j not in keep)
    design = np.column_stack([np.ones(m), feats[:, keep]])
    beta_fit, se_fit, n_iter, ll = _firth_fit(design, y, max_iter=max_iter, tol=tol)

    names = ("intercept",) + tuple(panel.var_names)
    coef = np.zeros(k + 1)
    se = np.full(k + 1, np.inf)
    coef[0], se[0] = beta_fit[0], se_fit[0]
    for pos, j in enumerate(keep):
        coef[j + 1] = beta_fit[pos + 1]
        se[j + 1] = se_fit[pos + 1]
    return LinkFormationFit(
        names=names,
        coef=coef,
        se=se,
        odds_ratio=np.exp(coef),
        converged=True,
        n_iter=n_iter,
        n_pairs=m,
        n_links=n_links,
        penalized_loglik=ll,
        dropped=dropped,
    )


@dataclass(frozen=True)
class RankSumResult:
    """Tie-corrected normal approximation of the two-sample rank-sum test."""

    z: float
    p_value: float
    rank_sum: float
    n_first: int
    n_second: int
    alternative: str


def rank_sum_test(first, second, alternative: str = "less") -> RankSumResult:
    """Rank-sum comparison of two samples (first vs second).

    ``z`` standardizes the rank sum of the first sample with tie
    correction; ``alternative`` is ``"less"`` (first stochastically
    smaller), ``"greater"``, or ``"two-sided"``. A fully tied pooled
    sample yields z=0 and the null p-value.
    """
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DimensionError("both samples must be non-empty")
    if alternative not in ("less", "greater", "two-sided"):
        raise DomainError(f"unknown alternative {alternative!r}")
    n1, n2 = a.size, b.size
    n = n1 + n2
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    w_stat = float(ranks[:n1].sum())
    mu = n1 * (n + 1) / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        z = 0.0
        p = 0.5 if alternative in ("less", "greater") else 1.0
        return RankSumResult(
            z=z, p_value=p, rank_sum=w_stat, n_first=n1, n_second=n2, alternative=alternative
        )
    z = (w_stat - mu) / np.sqrt(var)
    if alternative == "less":
        p = float(ndtr(z))
    elif alternative == "greater":
        p = float(ndtr(-z))
    else:
        p = float(2.0 * ndtr(-abs(z)))
    return RankSumResult(
        z=float(z), p_value=p, rank_sum=w_stat, n_first=n1, n_second=n2, alternative=alternative
    )


def distance_rank_sum(
    net: NetworkMatrix, meta, alternative: str = "less"
) -> RankSumResult:
    """Rank-sum test comparing great-circle distances of linked vs unlinked
    ordered pairs (linked first sample)."""
    d = pairwise_distances(tuple(meta))
    n = d.shape[0]
    if net.n != n:
        raise DimensionError(f"network has {net.n} units, meta has {n}")
    linked = net.to_dense() != 0.0
    off = ~np.eye(n, dtype=bool)
    linked_vals = d[linked & off]
    unlinked_vals = d[~linked & off]
    if linked_vals.size == 0:
        raise DomainError("network has no links")
    return rank_sum_test(linked_vals, unlinked_vals, alternative=alternative)
