"""Common-factor estimation and defactoring (interactive effects removal).

Latent factors are extracted from the covariates only: every covariate
series is demeaned over time within its unit (level offsets are not
factors of interest), the N*K demeaned series are pooled into a T x (N*K)
matrix, and the top principal components of its T x T second-moment matrix
give the factor estimates, scaled so that ``f_hat' f_hat / T = I``.

Projecting each unit's series on the orthogonal complement of the factor
space removes strong cross-section dependence before any network link is
estimated; remaining dependence is then attributable to the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .panel import PanelDataset

_DEGENERATE_SPECTRUM_TOL = 1e-14


@dataclass(frozen=True)
class FactorModel:
    """Estimated factor space and its annihilator projection.

    Attributes
    ----------
    f_hat : ndarray, shape (T, r)
        Factor estimates with ``f_hat' f_hat / T = I_r``.
    explained : ndarray, shape (r,)
        Share of total pooled variance carried by each factor.
    m : ndarray, shape (T, T)
        Annihilator ``I - f_hat (f_hat' f_hat)^{-1} f_hat'``; symmetric,
        idempotent, rank T - r.
    """

    f_hat: np.ndarray
    explained: np.ndarray
    m: np.ndarray

    @property
    def r(self) -> int:
        return self.f_hat.shape[1]

    @property
    def t(self) -> int:
        return self.f_hat.shape[0]


@dataclass(frozen=True)
class FactorCountSelection:
    """Result of the eigenvalue-ratio factor-count search.

    ``low_signal`` marks spectra with no dominant component (flat spectrum
    or best ratio under the separation threshold); the count then falls
    back to 1.
    """

    r: int
    ratios: np.ndarray
    eigenvalues: np.ndarray
    low_signal: bool


@dataclass(frozen=True)
class DefactoredPanel:
    """Per-unit series after demeaning and factor-space annihilation.

    ``y`` is T x N (time in rows); ``x`` is N x T x K. ``r`` records how
    many factors were removed (0 means demeaning only).
    """

    y: np.ndarray
    x: np.ndarray
    var_names: tuple[str, ...]
    unit_ids: tuple[str, ...]
    r: int

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def t(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[2]


def _pooled_demeaned_series(panel: PanelDataset) -> np.ndarray:
    """Stack all per-unit demeaned covariate series into a T x (N*K) matrix."""
    if panel.k == 0:
        raise DimensionError("panel has no covariates to extract factors from")
    x = panel.x - panel.x.mean(axis=1, keepdims=True)
    return x.transpose(1, 0, 2).reshape(panel.t, panel.n * panel.k)


def _spectrum(panel: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors of the pooled second moment."""
    z = _pooled_demeaned_series(panel)
    t = z.shape[0]
    s = (z @ z.T) / (z.shape[1] * t)
    vals, vecs = np.linalg.eigh(s)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    return vals, vecs


def estimate_factors(panel: PanelDataset, r: int) -> FactorModel:
    """Estimate ``r`` common factors by principal components.

    Raises
    ------
    DimensionError
        ``r`` outside [1, T-1] or a panel without covariates.
    """
    if not (1 <= r <= panel.t - 1):
        raise DimensionError(f"r must lie in [1, T-1]=[1, {panel.t - 1}], got {r}")
    vals, vecs = _spectrum(panel)
    top = vecs[:, :r].copy()
    # canonical sign: largest-magnitude entry of each factor positive
    for j in range(r):
        col = top[:, j]
        lead = col[np.argmax(np.abs(col))]
        if lead < 0:
            top[:, j] = -col
    f_hat = np.sqrt(panel.t) * top
    total = float(vals.sum())
    explained = vals[:r] / total if total > 0 else np.zeros(r)
    m = np.eye(panel.t) - (f_hat @ f_hat.T) / panel.t
    m = (m + m.T) / 2.0
    return FactorModel(f_hat=f_hat, explained=explained, m=m)


def select_num_factors(
    panel: PanelDataset, r_max: int = 8, separation_threshold: float = 1.8
) -> FactorCountSelection:
    """Choose the factor count by the largest adjacent eigenvalue ratio.

    Searches ``k = 1..r_max`` for the maximizer of ``lambda_k / lambda_{k+1}``
    over the pooled covariate spectrum. A spectrum with no ratio above
    ``separation_threshold`` (or a flat spectrum) carries no usable factor
    signal: the count falls back to 1 and ``low_signal`` is set.

    Requires ``1 <= r_max < T/2``.
    """
    if not (1 <= r_max < panel.t / 2):
        raise DimensionError(f"r_max must lie in [1, T/2)=(0, {panel.t / 2}), got {r_max}")
    vals, _ = _spectrum(panel)
    lead = vals[0]
    if lead <= _DEGENERATE_SPECTRUM_TOL or vals[0] - vals[r_max] <= _DEGENERATE_SPECTRUM_TOL * max(
        lead, 1.0
    ):
        return FactorCountSelection(
            r=1, ratios=np.ones(r_max), eigenvalues=vals, low_signal=True
        )
    floor = _DEGENERATE_SPECTRUM_TOL * lead
    ratios = np.empty(r_max)
    for k in range(r_max):
        num, den = vals[k], vals[k + 1]
        if den > floor:
            ratios[k] = num / den
        else:
            ratios[k] = np.inf if num > floor else 1.0
    best = int(np.argmax(ratios))
    if not np.isinf(ratios[best]) and ratios[best] < separation_threshold:
        return FactorCountSelection(r=1, ratios=ratios, eigenvalues=vals, low_signal=True)
    return FactorCountSelection(r=best + 1, ratios=ratios, eigenvalues=vals, low_signal=False)


def defactor(series: np.ndarray, fm: FactorModel) -> np.ndarray:
    """Apply the annihilator to a T-vector or T x m matrix of series."""
    series = np.asarray(series, dtype=float)
    if series.shape[0] != fm.t:
        raise DimensionError(f"series has {series.shape[0]} rows for T={fm.t}")
    return fm.m @ series

def defactor_panel(panel: PanelDataset, fm: FactorModel | None) -> DefactoredPanel:
    """Demean every series within its unit, then project out the factor space.

    With ``fm=None`` only the demeaning is applied (no-factor pipelines).
    The output is mean-free by construction, so downstream regressions
    carry no intercept.
    """
    y_dm = (panel.y - panel.y.mean(axis=1, keepdims=True)).T  # T x N
    x_dm = panel.x - panel.x.mean(axis=1, keepdims=True)  # N x T x K
    if fm is None:
        return DefactoredPanel(
            y=y_dm,
            x=x_dm,
            var_names=panel.var_names,
            unit_ids=panel.unit_ids,
            r=0,
        )
    if fm.t != panel.t:
        raise DimensionError(f"factor model has T={fm.t}, panel has T={panel.t}")
    y_tilde = fm.m @ y_dm
    flat = x_dm.transpose(1, 0, 2).reshape(panel.t, panel.n * panel.k)
    x_tilde = (fm.m @ flat).reshape(panel.t, panel.n, panel.k).transpose(1, 0, 2)
    return DefactoredPanel(
        y=y_tilde,
        x=x_tilde,
        var_names=panel.var_names,
        unit_ids=panel.unit_ids,
        r=fm.r,
    )


def write_factors_csv(fm: FactorModel, path: str | Path) -> None:
    """Export factor estimates for diagnostics: columns ``t,f1..fr``."""
    header = "t," + ",".join(f"f{j + 1}" for j in range(fm.r))
    lines = [header]
    for t in range(fm.t):
        lines.append(str(t) + "," + ",".join(f"{v:.17g}" for v in fm.f_hat[t]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf8")
