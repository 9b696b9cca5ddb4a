"""Direct, indirect, and total effect decomposition through the network.

With spatial coefficients Psi = diag(psi) and weight matrix W, a change in
covariate ``l`` propagates through S^{-1} = (I - Psi W)^{-1}: the effect
matrix is ``A_l = S^{-1} B_l`` with ``B_l = diag(beta_l)``. Averages of
its diagonal (direct), off-diagonal (indirect), and all entries (total)
summarize the decomposition; by construction direct + indirect = total.

Standard errors come from parametric simulation: parameter vectors are
drawn from the mean-group asymptotic normal, the decomposition is
re-evaluated per draw (explosive draws discarded), and empirical standard
deviations are reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    MetadataError,
    QuantileError,
    SingularityError,
    StabilityError,
    UnreliableSEError,
)
from .estimation import MGResult
from .networks import NetworkMatrix

_STABILITY_MARGIN = 1e-6
_MAX_DISCARD_SHARE = 0.20


@dataclass(frozen=True)
class ImpactMatrices:
    """Propagation matrices for each covariate.

    ``a`` has shape (K, N, N); ``a[l] = S^{-1} diag(beta[:, l])``.
    """

    s_inv: np.ndarray
    a: np.ndarray
    psi: np.ndarray
    betas: np.ndarray
    spectral_radius: float


@dataclass(frozen=True)
class EffectsTable:
    """Average direct/indirect/total effects per covariate, with optional
    simulation standard errors."""

    direct: np.ndarray
    indirect: np.ndarray
    total: np.ndarray
    direct_se: np.ndarray | None = None
    indirect_se: np.ndarray | None = None
    total_se: np.ndarray | None = None
    draws_used: int = 0
    draws_discarded: int = 0


def impact_matrices(net: NetworkMatrix, psi, betas) -> ImpactMatrices:
    """Build ``S^{-1}`` and the per-covariate effect matrices.

    Parameters
    ----------
    psi : float or ndarray (N,)
        Spatial coefficients; a scalar is broadcast (homogeneous case).
    betas : ndarray (K,) or (N, K)
        Covariate coefficients; a vector is broadcast across units.

    Raises
    ------
    StabilityError
        Spectral radius of Psi W at or above ``1 - 1e-6``.
    """
    n = net.n
    psi_vec = np.broadcast_to(np.asarray(psi, dtype=float), (n,)).copy()
    betas_arr = np.asarray(betas, dtype=float)
    if betas_arr.ndim == 1:
        betas_arr = np.broadcast_to(betas_arr, (n, betas_arr.shape[0])).copy()
    if betas_arr.shape[0] != n:
        raise DimensionError(f"betas has {betas_arr.shape[0]} rows for {n} units")
    w = net.to_dense()
    p_mat = psi_vec[:, None] * w
    eigvals = np.linalg.eigvals(p_mat)
    rho = float(np.max(np.abs(eigvals))) if n else 0.0
    if rho >= 1.0 - _STABILITY_MARGIN:
        raise StabilityError(
            f"spectral radius of Psi*W is {rho:.8f}; system is explosive or on the margin"
        )
    s_mat = np.eye(n) - p_mat
    try:
        s_inv = np.linalg.solve(s_mat, np.eye(n))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rho check should preclude
        raise SingularityError(f"I - Psi*W is singular: {exc}") from exc
    k = betas_arr.shape[1]
    a = np.empty((k, n, n))
    for ell in range(k):
        a[ell] = s_inv * betas_arr[:, ell][None, :]
    return ImpactMatrices(s_inv=s_inv, a=a, psi=psi_vec, betas=betas_arr, spectral_radius=rho)


def effects(im: ImpactMatrices) -> EffectsTable:
    """Average direct (diagonal), indirect (off-diagonal), and total
    effects for each covariate.

    The indirect part sums the off-diagonal entries directly, so a zero
    spatial coefficient yields an exact zero, and the total closes as
    direct + indirect by construction.
    """
    n = im.s_inv.shape[0]
    k = im.a.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    direct = np.empty(k)
    indirect = np.empty(k)
    for ell in range(k):
        direct[ell] = np.trace(im.a[ell]) / n
        indirect[ell] = im.a[ell][off_diag].sum() / n
    total = direct + indirect
    return EffectsTable(direct=direct, indirect=indirect, total=total)


class _HomogeneousEvaluator:
    """Fast direct/total evaluation for homogeneous psi via eigendecomposition.

    tr(S^{-1}) = sum_k 1/(1 - psi lambda_k) and
    1'S^{-1}1 = sum_k (1'v_k)(v_k^{-1}1)/(1 - psi lambda_k); falls back to
    dense solves when W is too far from diagonalizable.
    """

    def __init__(self, w: np.ndarray):
        self.w = w
        self.n = w.shape[0]
        self.rho = float(np.max(np.abs(np.linalg.eigvals(w)))) if self.n else 0.0
        self.ok = False
        try:
            lam, vec = np.linalg.eig(w)
            vinv = np.linalg.inv(vec)
            recon = (vec * lam) @ vinv
            if np.max(np.abs(recon - w)) < 1e-8 * max(1.0, np.max(np.abs(w))):
                self.lam = lam
                self.left = np.ones(self.n) @ vec
                self.right = vinv @ np.ones(self.n)
                self.ok = True
        except np.linalg.LinAlgError:
            pass

    def trace_and_total(self, psi: float) -> tuple[float, float]:
        if self.ok:
            denom = 1.0 - psi * self.lam
            tr = float(np.sum(1.0 / denom).real)
            tot = float(np.sum(self.left * self.right / denom).real)
            return tr, tot
        s_inv = np.linalg.solve(np.eye(self.n) - psi * self.w, np.eye(self.n))
        return float(np.trace(s_inv)), float(s_inv.sum())


def effects_se(
    net: NetworkMatrix,
    mg: MGResult,
    n_draws: int = 2000,
    seed: int = 0,
) -> EffectsTable:
    """Effects at the mean-group estimates with simulation standard errors.

    Draws parameter vectors from N(theta_mg, cov_mg), re-evaluates the
    decomposition per draw with homogeneous coefficients, discards
    explosive draws, and reports empirical standard deviations.

    Raises
    ------
    UnreliableSEError
        More than 20% of draws discarded for instability.
    """
    if n_draws < 2:
        raise DimensionError(f"need at least 2 draws, got {n_draws}")
    theta = mg.theta
    k = theta.shape[0] - 1
    if k < 1:
        raise DimensionError("mean-group result carries no covariate coefficients")
    cov = np.array(mg.cov)
    if np.any(np.isnan(cov)):
        raise SingularityError("mean-group covariance has missing entries")
    n = net.n
    w = net.to_dense()
    evaluator = _HomogeneousEvaluator(w)

    point_psi = float(theta[0])
    if abs(point_psi) * evaluator.rho >= 1.0 - _STABILITY_MARGIN:
        raise StabilityError(
            f"spectral radius at the point estimate is {abs(point_psi) * evaluator.rho:.8f}"
        )
    tr, tot = evaluator.trace_and_total(point_psi)
    betas_point = theta[1:]
    direct = betas_point * (tr / n)
    total = betas_point * (tot / n)
    indirect = total - direct

    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(theta, cov, size=n_draws, method="svd")
    de_draws = np.empty((n_draws, k))
    te_draws = np.empty((n_draws, k))
    keep = np.zeros(n_draws, dtype=bool)
    for d in range(n_draws):
        psi_d = float(draws[d, 0])
        if abs(psi_d) * evaluator.rho >= 1.0 - _STABILITY_MARGIN:
            continue
        tr_d, tot_d = evaluator.trace_and_total(psi_d)
        de_draws[d] = draws[d, 1:] * (tr_d / n)
        te_draws[d] = draws[d, 1:] * (tot_d / n)
        keep[d] = True
    used = int(keep.sum())
    discarded = n_draws - used
    if discarded > _MAX_DISCARD_SHARE * n_draws:
        raise UnreliableSEError(
            f"{discarded}/{n_draws} draws discarded as explosive; "
            "standard errors would be unreliable"
        )
    de_k = de_draws[keep]
    te_k = te_draws[keep]
    ie_k = te_k - de_k
    return EffectsTable(
        direct=direct,
        indirect=indirect,
        total=total,
        direct_se=np.std(de_k, axis=0, ddof=1),
        indirect_se=np.std(ie_k, axis=0, ddof=1),
        total_se=np.std(te_k, axis=0, ddof=1),
        draws_used=used,
        draws_discarded=discarded,
    )


@dataclass(frozen=True)
class SpillinTable:
    """Within-group vs between-group split of the average indirect effect."""

    within: np.ndarray
    between: np.ndarray
    indirect: np.ndarray
    within_share: np.ndarray
    n_groups: int


def spillins(im: ImpactMatrices, labels) -> SpillinTable:
    """Split the indirect effect by whether source and receiver share a label.

    ``indirect`` is defined as ``within + between``, so the split closes
    exactly.
    """
    n = im.s_inv.shape[0]
    labels = [str(lab) for lab in labels]
    if len(labels) != n:
        raise DimensionError(f"{len(labels)} labels for {n} units")
    if any(lab.strip() == "" for lab in labels):
        raise MetadataError("empty group label")
    codes = np.unique(labels, return_inverse=True)[1]
    same = codes[:, None] == codes[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    k = im.a.shape[0]
    within = np.empty(k)
    between = np.empty(k)
    for ell in range(k):
        a = im.a[ell]
        within[ell] = a[same & off_diag].sum() / n
        between[ell] = a[~same & off_diag].sum() / n
    indirect = within + between
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(indirect != 0.0, within / indirect, np.nan)
    return SpillinTable(
        within=within,
        between=between,
        indirect=indirect,
        within_share=share,
        n_groups=int(codes.max()) + 1,
    )


@dataclass(frozen=True)
class QuintileSpillinTable:
    """Per-quintile split of spill-ins received, by size of the receiver.

    ``within[q, l]`` averages, over receivers in quintile ``q``, the
    indirect effects arriving from source units in the same quintile.
    """

    within: np.ndarray
    between: np.ndarray
    within_share: np.ndarray
    quintile_sizes: np.ndarray
    overall_indirect: np.ndarray


def quintile_spillins(im: ImpactMatrices, sizes) -> QuintileSpillinTable:
    """Split spill-ins received by size quintile of the receiving unit.

    Units are ranked by ``sizes`` (ties broken by unit index) and split
    into five contiguous blocks, the first blocks taking any remainder.

    Raises
    ------
    QuantileError
        Fewer than 5 units.
    """
    n = im.s_inv.shape[0]
    sizes = np.asarray(sizes, dtype=float)
    if sizes.shape != (n,):
        raise DimensionError(f"sizes has shape {sizes.shape} for {n} units")
    if n < 5:
        raise QuantileError(f"need at least 5 units for quintiles, got {n}")
    if not np.all(np.isfinite(sizes)):
        raise QuantileError("non-finite size measure")
    order = np.lexsort((np.arange(n), sizes))
    blocks = np.array_split(order, 5)
    member = np.empty(n, dtype=int)
    for q, block in enumerate(blocks):
        member[block] = q
    k = im.a.shape[0]
    within = np.zeros((5, k))
    between = np.zeros((5, k))
    off_diag = ~np.eye(n, dtype=bool)
    same_q = member[:, None] == member[None, :]
    for ell in range(k):
        a = im.a[ell]
        for q, block in enumerate(blocks):
            rows = np.zeros(n, dtype=bool)
            rows[block] = True
            w_mask = rows[:, None] & same_q & off_diag
            b_mask = rows[:, None] & ~same_q
            within[q, ell] = a[w_mask].sum() / block.size
            between[q, ell] = a[b_mask].sum() / block.size
    totals = within + between
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(totals != 0.0, within / totals, np.nan)
    overall = np.array([im.a[ell][off_diag].sum() / n for ell in range(k)])
    return QuintileSpillinTable(
        within=within,
        between=between,
        within_share=share,
        quintile_sizes=np.array([b.size for b in blocks]),
        overall_indirect=overall,
    )
