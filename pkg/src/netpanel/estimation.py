"""Per-unit IV estimation given a network, mean-group aggregation, and a
two-way fixed-effects baseline.

With a (known or estimated) weight row for unit ``i``, the structural
regressors are the spatial lag ``sum_j w_ij y_j`` and the unit's own
covariates; instruments stack the unit's own defactored covariates with
those of every support unit. The estimator is the optimally weighted
moment solution

    theta_i = (A' B^{-1} A)^{-1} A' B^{-1} c,

with A = Z'C/T, B = Z'Z/T, c = Z'y/T, which reduces to plain 2SLS in the
exactly identified case. Mean-group estimates average the per-unit
coefficient vectors; their covariance is the dispersion of the unit
estimates around the average, divided by m(m-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGroupError,
    DimensionError,
    InsufficientUnitsError,
    SingularDesignError,
    UnderidentifiedError,
)
from .factors import DefactoredPanel
from .networks import NetworkMatrix
from .panel import PanelDataset

_COND_TOL = 1e-12


@dataclass(frozen=True)
class UnitEstimates:
    """IV estimates for one unit.

    ``theta`` is ``(psi, beta_1..beta_K)``; ``psi`` is NaN when the unit
    has no links (``psi_identified`` False) and the betas come from OLS
    on own covariates.
    """

    unit: int
    theta: np.ndarray
    sigma: float
    psi_identified: bool
    n_instruments: int
    condition_number: float


@dataclass(frozen=True)
class MGResult:
    """Mean-group estimates across units.

    ``theta`` stacks ``(psi, beta_1..beta_K)``. ``n_units`` counts the
    contributors per parameter (units without links contribute betas but
    not psi). ``cov`` uses pairwise-complete contributors.
    """

    theta: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    n_units: np.ndarray


def _inv_via_svd(mat: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    u, s, vt = np.linalg.svd(mat)
    if s.size == 0 or s[0] == 0.0 or s[-1] / s[0] < _COND_TOL:
        cond = s[0] / max(s[-1], 1e-300) if s.size else np.inf
        raise SingularDesignError(f"{what} is numerically singular (condition ~{cond:.2e})")
    return (vt.T / s) @ u.T, float(s[0] / s[-1])


def unit_iv(data: DefactoredPanel, net: NetworkMatrix, i: int) -> UnitEstimates:
    """Estimate ``(psi_i, beta_i)`` for unit ``i`` given its weight row.

    Units with empty rows are estimated by OLS of the defactored outcome
    on own covariates (no spatial coefficient).

    Raises
    ------
    UnderidentifiedError
        Fewer instruments than regressors.
    SingularDesignError
        Singular instrument second-moment or identification matrix
        (condition number reported).
    """
    if net.n != data.n:
        raise DimensionError(f"network has {net.n} units, panel has {data.n}")
    t_obs = data.t
    k = data.k
    y_i = data.y[:, i]
    x_i = data.x[i]
    support = net.support(i)

    if support.size == 0:
        if k == 0:
            raise UnderidentifiedError(f"unit {i}: no links and no covariates")
        xtx_inv, cond = _inv_via_svd(x_i.T @ x_i / t_obs, f"unit {i} covariate moment matrix")
        beta = xtx_inv @ (x_i.T @ y_i / t_obs)
        resid = y_i - x_i @ beta
        sigma = float(np.sqrt(resid @ resid / t_obs))
        theta = np.concatenate(([np.nan], beta))
        return UnitEstimates(
            unit=i,
            theta=theta,
            sigma=sigma,
            psi_identified=False,
            n_instruments=k,
            condition_number=cond,
        )

    weights = net.row_weights(i)
    lag = data.y[:, support] @ weights
    c_mat = np.column_stack([lag, x_i])
    z_mat = np.column_stack([x_i] + [data.x[j] for j in support])
    n_instr = z_mat.shape[1]
    if n_instr < k + 1:
        raise UnderidentifiedError(
            f"unit {i}: {n_instr} instruments for {k + 1} regressors"
        )
    if n_instr >= t_obs:
        raise SingularDesignError(
            f"unit {i}: {n_instr} instruments with only T={t_obs} periods; "
            "instrument moment matrix cannot have full rank"
        )
    a_mat = z_mat.T @ c_mat / t_obs
    b_mat = z_mat.T @ z_mat / t_obs
    c_vec = z_mat.T @ y_i / t_obs
    b_inv, cond_b = _inv_via_svd(b_mat, f"unit {i} instrument moment matrix")
    core = a_mat.T @ b_inv @ a_mat
    core_inv, cond_core = _inv_via_svd(core, f"unit {i} identification matrix")
    theta = core_inv @ (a_mat.T @ b_inv @ c_vec)
    resid = y_i - c_mat @ theta
    sigma = float(np.sqrt(resid @ resid / t_obs))
    return UnitEstimates(
        unit=i,
        theta=theta.copy(),
        sigma=sigma,
        psi_identified=True,
        n_instruments=n_instr,
        condition_number=max(cond_b, cond_core),
    )


def estimate_all_units(data: DefactoredPanel, net: NetworkMatrix) -> tuple[UnitEstimates, ...]:
    """Run :func:`unit_iv` for every unit, in cross-section order."""
    return tuple(unit_iv(data, net, i) for i in range(data.n))


def mgiv(units: tuple[UnitEstimates, ...]) -> MGResult:
    """Mean-group average of per-unit IV estimates.

    Parameters with fewer than two contributing units raise
    :class:`InsufficientUnitsError`. The covariance entry for parameters
    (a, b) averages cross products over units where both are observed.
    """
    if not units:
        raise InsufficientUnitsError("no unit estimates supplied")
    thetas = np.vstack([u.theta for u in units])
    n_params = thetas.shape[1]
    present = ~np.isnan(thetas)
    counts = present.sum(axis=0)
    if np.any(counts < 2):
        bad = int(np.argmin(counts))
        raise InsufficientUnitsError(
            f"parameter {bad} has {counts[bad]} contributing units; need at least 2"
        )
    means = np.nansum(np.where(present, thetas, 0.0), axis=0) / counts
    dev = np.where(present, thetas - means, 0.0)
    cov = np.empty((n_params, n_params))
    for a in range(n_params):
        for b in range(n_params):
            both = present[:, a] & present[:, b]
            m = int(both.sum())
            if m < 2:
                cov[a, b] = np.nan
                continue
            cov[a, b] = float(dev[both, a] @ dev[both, b]) / (m * (m - 1))
    se = np.sqrt(np.diag(cov))
    return MGResult(theta=means, se=se, cov=cov, n_units=counts)


@dataclass(frozen=True)
class TWFEResult:
    """Pooled two-way fixed-effects slope estimates with clustered errors."""

    beta: np.ndarray
    se: np.ndarray
    group_dimension: str
    n_groups: int
    sigma: float


def twfe(panel: PanelDataset, group: str = "facility") -> TWFEResult:
    """Two-way fixed-effects baseline: group and period effects absorbed.

    ``group`` is ``"facility"`` (unit effects) or ``"firm"``. The balanced
    panel makes one pass of double demeaning exact. Standard errors
    cluster on the group with the usual finite-sample factor
    ``G/(G-1) * (M-1)/(M-K)``.
    """
    if group == "facility":
        labels = [m.unit_id for m in panel.meta]
    elif group == "firm":
        labels = [m.firm_id for m in panel.meta]
    else:
        raise DimensionError(f"group must be 'facility' or 'firm', got {group!r}")
    if panel.k == 0:
        raise DimensionError("two-way fixed effects need at least one covariate")

    codes, inverse = np.unique(labels, return_inverse=True)
    n_groups = codes.size
    if n_groups < 2:
        raise DegenerateGroupError(f"only {n_groups} distinct {group} group(s)")
    group_sizes = np.bincount(inverse) * panel.t
    if np.any(group_sizes < 2):
        g = int(np.argmin(group_sizes))
        raise DegenerateGroupError(f"{group} group {codes[g]!r} has {group_sizes[g]} observation(s)")

    y = panel.y  # N x T
    x = panel.x  # N x T x K
    gsum_y = np.zeros((n_groups, panel.t))
    np.add.at(gsum_y, inverse, y)
    gmean_y = gsum_y.mean(axis=1) / np.bincount(inverse)  # per-group mean over all cells
    tmean_y = y.mean(axis=0)
    allmean_y = float(y.mean())
    y_dd = y - gmean_y[inverse][:, None] - tmean_y[None, :] + allmean_y

    gsum_x = np.zeros((n_groups, panel.t, panel.k))
    np.add.at(gsum_x, inverse, x)
    gmean_x = gsum_x.mean(axis=1) / np.bincount(inverse)[:, None]
    tmean_x = x.mean(axis=0)
    allmean_x = x.mean(axis=(0, 1))
    x_dd = x - gmean_x[inverse][:, None, :] - tmean_x[None, :, :] + allmean_x[None, None, :]

    m_obs = panel.n * panel.t
    xx = x_dd.reshape(m_obs, panel.k)
    yy = y_dd.reshape(m_obs)
    xtx_inv, _ = _inv_via_svd(xx.T @ xx, "demeaned covariate moment matrix")
    beta = xtx_inv @ (xx.T @ yy)
    resid = yy - xx @ beta

    # cluster-robust sandwich over groups
    meat = np.zeros((panel.k, panel.k))
    resid_mat = resid.reshape(panel.n, panel.t)
    for g in range(n_groups):
        members = inverse == g
        score = x_dd[members].reshape(-1, panel.k).T @ resid_mat[members].ravel()
        meat += np.outer(score, score)
    factor = (n_groups / (n_groups - 1)) * ((m_obs - 1) / (m_obs - panel.k))
    cov = factor * xtx_inv @ meat @ xtx_inv
    se = np.sqrt(np.diag(cov))
    sigma = float(np.sqrt(resid @ resid / m_obs))
    return TWFEResult(
        beta=beta, se=se, group_dimension=group, n_groups=n_groups, sigma=sigma
    )
