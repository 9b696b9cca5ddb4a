"""Data-driven recovery of the spatial weight matrix, one link at a time.

For each receiving unit, candidate neighbours' defactored outcomes are
tested one stage at a time: the stage's best candidate (largest absolute
IV t-ratio, conditional on covariates and links already admitted) enters
only if it clears a threshold that grows with the number of candidates
under scrutiny,

    c_p(n, delta) = Phi^{-1}(1 - p / (2 c n^delta)),

which controls the family-wise error of scanning n candidates. The
forward pass stops at the first stage whose best candidate fails the
threshold. A backward pass then re-tests every admitted link given the
others and drops, one at a time, any whose t-ratio no longer clears the
threshold; links admitted early on the strength of indirect chains lose
their significance once the links that mediate those chains are in. The
surviving links are re-estimated jointly and each row is normalized to
sum to one.

Instrumenting: the candidate's outcome always enters the design as its
own-unit first-stage fit ``P_{X_j} y_j``, so the opening stage reduces
to the closed-form single-candidate t-ratio. Already-included outcomes
are projected on the union of all involved units' covariates
``Z = [X_i, X_included..., X_j]``; this leaves the candidate's score
orthogonal, by construction, to the part of an included outcome the
instruments cannot explain, which is what keeps higher-order neighbours
from registering as links. Coefficient t-ratios use the instrumented
design for the covariance and the actual regressors for the residual
variance (denominator T).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtri

from .errors import DomainError, SingularDesignError, WeakInstrumentError
from .factors import DefactoredPanel
from .networks import NetworkMatrix

_RANK_TOL = 1e-10
_WEAK_TOL = 1e-12
_ZERO_SUM_TOL = 1e-8


def critical_value(p: float, n: int, c: float = 1.0, delta: float = 1.0) -> float:
    """Multiple-testing threshold for scanning ``n`` candidates at level ``p``.

    Evaluates ``Phi^{-1}(1 - p / (2 c n^delta))``. Strictly increasing in
    ``n`` for ``delta > 0``.

    Raises
    ------
    DomainError
        ``p`` outside (0, 1), ``n < 1``, ``c <= 0``, ``delta < 0``, or a
        tail mass ``p / (2 c n^delta) >= 1`` (no quantile exists).
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if c <= 0.0:
        raise DomainError(f"c must be positive, got {c}")
    if delta < 0.0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    tail = p / (2.0 * c * float(n) ** delta)
    if tail >= 1.0:
        raise DomainError(f"tail mass p/(2 c n^delta) = {tail} >= 1; threshold undefined")
    # -ndtri(tail) = ndtri(1 - tail) without cancellation for small tails
    return float(-ndtri(tail))


@dataclass(frozen=True)
class StageRecord:
    """Audit record of one selection stage for one unit.

    ``action`` is ``"scan"`` for forward stages (``accepted`` means the
    best candidate was admitted) and ``"retest"`` for backward stages
    (``best_candidate`` is the weakest admitted link; ``accepted`` means
    it survived, otherwise it was dropped).
    """

    stage: int
    n_candidates: int
    threshold: float
    best_candidate: int | None
    best_t: float | None
    accepted: bool
    skipped: tuple[tuple[int, str], ...]
    action: str = "scan"


@dataclass(frozen=True)
class SelectionState:
    """Selected links and the stage-by-stage trace for one unit."""

    unit: int
    selected: tuple[int, ...]
    trace: tuple[StageRecord, ...]


@dataclass(frozen=True)
class AdjacencyEstimate:
    """Estimated spatial weight matrix with its full selection audit."""

    w: NetworkMatrix
    selection: tuple[SelectionState, ...]
    abs_fallback_units: tuple[int, ...]
    p: float
    c: float
    delta: float


class _Workspace:
    """Per-dataset precomputations shared across units and stages."""

    def __init__(self, data: DefactoredPanel):
        self.data = data
        t, n = data.y.shape
        self.qx: list[np.ndarray] = []
        yhat = np.empty((t, n))
        self.weak = np.zeros(n, dtype=bool)
        for m in range(n):
            q = _orthonormal_basis(data.x[m])
            self.qx.append(q)
            fit = q @ (q.T @ data.y[:, m]) if q.shape[1] else np.zeros(t)
            yhat[:, m] = fit
            scale = max(1.0, float(np.linalg.norm(data.y[:, m])))
            if np.linalg.norm(fit) <= _WEAK_TOL * scale:
                self.weak[m] = True
        self.yhat = yhat


def _orthonormal_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space, rank-adaptive."""
    if x.size == 0:
        return np.zeros((x.shape[0], 0))
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((x.shape[0], 0))
    keep = s > _RANK_TOL * s[0]
    return u[:, keep]


def _second_stage_fit(
    d_actual: np.ndarray, d_instr: np.ndarray, y: np.ndarray, t_obs: int
) -> tuple[np.ndarray, np.ndarray, float]:
    """OLS on the instrumented design; residuals from the actual regressors.

    Returns (theta, cov, sigma). ``cov`` is sigma^2 (D'D)^{-1} on the
    instrumented design.
    """
    u, s, vt = np.linalg.svd(d_instr, full_matrices=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] / s[0] < _RANK_TOL:
        cond = s[0] / max(s[-1], 1e-300) if s.size else np.inf
        raise SingularDesignError(f"instrumented design rank deficient (condition ~{cond:.2e})")
    theta = vt.T @ ((u.T @ y) / s)
    resid = y - d_actual @ theta
    sigma2 = float(resid @ resid) / t_obs
    gram_inv = (vt.T / s**2) @ vt
    cov = sigma2 * gram_inv
    return theta, cov, max(np.sqrt(sigma2), 1e-300)


def iv_t_ratio(
    data: DefactoredPanel, i: int, j: int, included: tuple[int, ...] = ()
) -> float:
    """t-ratio of candidate ``j``'s outcome in unit ``i``'s stage regression.

    The design regresses unit ``i``'s defactored outcome on the already
    included units' outcomes, unit ``i``'s covariates, and candidate
    ``j``'s outcome; the candidate is instrumented by its own-unit
    first-stage fit, included outcomes by their projection on the union
    of the involved units' covariates. With no included links this is
    the closed-form single-candidate statistic.

    Raises
    ------
    WeakInstrumentError
        Candidate ``j``'s first-stage fit is identically zero.
    SingularDesignError
        The instrumented design is numerically rank deficient.
    """
    ws = _Workspace(data)
    return _reference_t_ratio(ws, i, j, included)


def _reference_t_ratio(ws: _Workspace, i: int, j: int, included: tuple[int, ...]) -> float:
    data = ws.data
    if ws.weak[j]:
        raise WeakInstrumentError(f"first-stage fit for unit {j} is identically zero")
    y_i = data.y[:, i]
    cols = list(included)
    if cols:
        z = np.column_stack([data.x[i]] + [data.x[m] for m in cols] + [data.x[j]])
        q_z = _orthonormal_basis(z)
        incl_instr = q_z @ (q_z.T @ data.y[:, cols])
        d_instr = np.column_stack([incl_instr, ws.yhat[:, j], data.x[i]])
    else:
        d_instr = np.column_stack([ws.yhat[:, j], data.x[i]])
    d_actual = np.column_stack([data.y[:, cols + [j]], data.x[i]])
    # candidate coefficient sits at position len(included) in the outcome block
    theta, cov, _ = _second_stage_fit(d_actual, d_instr, y_i, data.t)
    pos = len(included)
    se = np.sqrt(cov[pos, pos])
    if se == 0.0:
        raise SingularDesignError(f"zero variance for candidate {j}'s coefficient")
    return float(theta[pos] / se)


def _stage_scan(
    ws: _Workspace, i: int, included: tuple[int, ...], candidates: np.ndarray
) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """t-ratios for all candidates at one stage.

    Returns (t_values aligned with candidates, skipped list); skipped
    candidates carry NaN.
    """
    if included:
        return _scan_conditional(ws, i, included, candidates)
    return _scan_opening(ws, i, candidates)


def _scan_opening(
    ws: _Workspace, i: int, candidates: np.ndarray
) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """Vectorized opening stage: no links admitted yet, closed form applies."""
    data = ws.data
    t_obs = data.t
    y_i = data.y[:, i]
    base_actual = data.x[i]

    # orthonormal basis and pseudo-inverse of the covariate block
    if base_actual.shape[1]:
        u, s, vt = np.linalg.svd(base_actual, full_matrices=False)
        keep = s > _RANK_TOL * s[0] if s[0] > 0 else np.zeros(s.size, dtype=bool)
        q = u[:, keep]
        pinv = (vt[keep].T * (1.0 / s[keep])) @ q.T
    else:
        q = np.zeros((t_obs, 0))
        pinv = np.zeros((0, t_obs))

    y_cand = data.y[:, candidates]
    yhat_cand = ws.yhat[:, candidates]

    m_yhat = yhat_cand - q @ (q.T @ yhat_cand)
    den = np.einsum("tj,tj->j", m_yhat, m_yhat)
    num = m_yhat.T @ y_i

    # residual pieces: e_j = u_res - omega_j * b_j with actual regressors
    g_y = pinv @ y_i
    u_res = y_i - base_actual @ g_y
    b = y_cand - base_actual @ (pinv @ yhat_cand)

    t_vals = np.full(candidates.shape[0], np.nan)
    skipped: list[tuple[int, str]] = []
    u_res_sq = float(u_res @ u_res)
    ub = u_res @ b
    bb = np.einsum("tj,tj->j", b, b)

    cand_scale = np.maximum(1.0, np.linalg.norm(y_cand, axis=0))
    for idx, j in enumerate(candidates):
        if ws.weak[j]:
            skipped.append((int(j), "weak_instrument"))
            continue
        if den[idx] <= (_WEAK_TOL * cand_scale[idx]) ** 2:
            skipped.append((int(j), "collinear_instrument"))
            continue
        omega = num[idx] / den[idx]
        sigma2 = (u_res_sq - 2.0 * omega * ub[idx] + omega**2 * bb[idx]) / t_obs
        sigma = max(np.sqrt(max(sigma2, 0.0)), 1e-300)
        t_vals[idx] = num[idx] / (sigma * np.sqrt(den[idx]))
    return t_vals, skipped


def _scan_conditional(
    ws: _Workspace, i: int, included: tuple[int, ...], candidates: np.ndarray
) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """Later stages: included outcomes re-projected per candidate.

    The union instrument space grows with the candidate, so the included
    outcomes' fitted values change across candidates; only the shared
    block ``[X_i, X_included...]`` is factored once.
    """
    data = ws.data
    cols = list(included)
    y_i = data.y[:, i]
    y_incl = data.y[:, cols]
    base_z = np.column_stack([data.x[i]] + [data.x[m] for m in cols])
    q_base = _orthonormal_basis(base_z)
    incl_base_fit = q_base @ (q_base.T @ y_incl)
    pos = len(cols)

    t_vals = np.full(candidates.shape[0], np.nan)
    skipped: list[tuple[int, str]] = []
    for idx, j in enumerate(candidates):
        if ws.weak[j]:
            skipped.append((int(j), "weak_instrument"))
            continue
        # extend the instrument basis by the candidate's covariates
        extra = data.x[j] - q_base @ (q_base.T @ data.x[j])
        q_extra = _orthonormal_basis(extra)
        incl_instr = incl_base_fit + q_extra @ (q_extra.T @ y_incl)
        d_instr = np.column_stack([incl_instr, ws.yhat[:, j], data.x[i]])
        d_actual = np.column_stack([y_incl, data.y[:, j], data.x[i]])
        try:
            theta, cov, _ = _second_stage_fit(d_actual, d_instr, y_i, data.t)
        except SingularDesignError:
            skipped.append((int(j), "collinear_instrument"))
            continue
        se = np.sqrt(cov[pos, pos])
        if se == 0.0 or not np.isfinite(se):
            skipped.append((int(j), "collinear_instrument"))
            continue
        t_vals[idx] = theta[pos] / se
    return t_vals, skipped


def select_links_for_unit(
    data: DefactoredPanel,
    i: int,
    p: float = 0.05,
    c: float = 1.0,
    delta: float = 1.0,
    max_links: int | None = None,
    _ws: _Workspace | None = None,
) -> SelectionState:
    """Stagewise link selection for receiving unit ``i``.

    Forward pass: at each stage the remaining candidates are scanned; the
    candidate with the largest absolute t-ratio (exact ties resolve to
    the lowest index) is admitted if it clears ``critical_value(p, n)``
    where ``n`` is the current candidate count. Stops at the first
    failing stage. Backward pass: each admitted link is re-tested as a
    candidate given the others; while the weakest fails the threshold it
    is dropped and the rest re-tested.
    """
    ws = _ws if _ws is not None else _Workspace(data)
    n_units = data.n
    if not (0 <= i < n_units):
        raise DomainError(f"unit index {i} out of range for N={n_units}")
    # each admitted link consumes a regressor; keep the design estimable
    cap = data.t - data.r - data.k - 2
    hard_cap = max(0, min(n_units - 1, cap))
    if max_links is not None:
        hard_cap = min(hard_cap, max_links)

    included: list[int] = []
    records: list[StageRecord] = []
    stage = 0
    while len(included) < hard_cap:
        stage += 1
        candidates = np.array([m for m in range(n_units) if m != i and m not in included])
        if candidates.size == 0:
            break
        threshold = critical_value(p, candidates.size, c, delta)
        t_vals, skipped = _stage_scan(ws, i, tuple(included), candidates)
        valid = ~np.isnan(t_vals)
        if not np.any(valid):
            records.append(
                StageRecord(
                    stage=stage,
                    n_candidates=int(candidates.size),
                    threshold=threshold,
                    best_candidate=None,
                    best_t=None,
                    accepted=False,
                    skipped=tuple(skipped),
                )
            )
            break
        abs_t = np.where(valid, np.abs(t_vals), -np.inf)
        # ties resolve to the lowest unit index
        order = np.lexsort((candidates, -abs_t))
        best_idx = order[0]
        best_j = int(candidates[best_idx])
        best_t = float(t_vals[best_idx])
        accepted = bool(abs(best_t) > threshold)
        records.append(
            StageRecord(
                stage=stage,
                n_candidates=int(candidates.size),
                threshold=threshold,
                best_candidate=best_j,
                best_t=best_t,
                accepted=accepted,
                skipped=tuple(skipped),
            )
        )
        if not accepted:
            break
        included.append(best_j)

    # Backward pass: a link admitted on the strength of indirect chains
    # loses significance once the links mediating those chains are in.
    while included:
        stage += 1
        # pool the link competes in: the untouched candidates plus itself
        n_pool = n_units - len(included)
        threshold = critical_value(p, n_pool, c, delta)
        members = np.array(sorted(included))
        t_vals = np.full(members.size, np.nan)
        skipped: list[tuple[int, str]] = []
        for idx, m in enumerate(members):
            others = tuple(s for s in included if s != m)
            vals, skips = _stage_scan(ws, i, others, np.array([m]))
            skipped.extend(skips)
            t_vals[idx] = vals[0]
        valid = ~np.isnan(t_vals)
        if not np.any(valid):
            break
        abs_t = np.where(valid, np.abs(t_vals), np.inf)
        order = np.lexsort((members, abs_t))
        worst_idx = order[0]
        worst_m = int(members[worst_idx])
        worst_t = float(t_vals[worst_idx])
        survives = bool(abs(worst_t) > threshold)
        records.append(
            StageRecord(
                stage=stage,
                n_candidates=int(n_pool),
                threshold=threshold,
                best_candidate=worst_m,
                best_t=worst_t,
                accepted=survives,
                skipped=tuple(skipped),
                action="retest",
            )
        )
        if survives:
            break
        included.remove(worst_m)
    return SelectionState(unit=i, selected=tuple(included), trace=tuple(records))


def _reestimate_row(
    ws: _Workspace, i: int, selected: tuple[int, ...]
) -> tuple[np.ndarray, bool]:
    """Joint IV re-estimation of the selected links; returns (weights, abs_fallback).

    All selected outcomes are projected on the union instrument space
    ``[X_i, X_selected...]``, the same information set the final per-unit
    estimator uses.
    """
    data = ws.data
    sel = list(selected)
    z = np.column_stack([data.x[i]] + [data.x[m] for m in sel])
    q_z = _orthonormal_basis(z)
    y_sel = data.y[:, sel]
    d_actual = np.column_stack([y_sel, data.x[i]])
    d_instr = np.column_stack([q_z @ (q_z.T @ y_sel), data.x[i]])
    theta, _, _ = _second_stage_fit(d_actual, d_instr, data.y[:, i], data.t)
    omega = theta[: len(sel)]
    total = float(omega.sum())
    if abs(total) >= _ZERO_SUM_TOL:
        return omega / total, False
    abs_total = float(np.abs(omega).sum())
    if abs_total <= 0.0:
        raise SingularDesignError(f"unit {i}: selected link weights are all zero")
    return omega / abs_total, True


def estimate_network(
    data: DefactoredPanel,
    p: float = 0.05,
    c: float = 1.0,
    delta: float = 1.0,
    max_links: int | None = None,
    threads: int = 1,
) -> AdjacencyEstimate:
    """Run link selection for every unit and assemble the weight matrix.

    Each unit's selected links are re-estimated jointly and normalized to
    sum to one. Rows whose raw weights sum to (numerically) zero fall back
    to absolute-sum normalization and are flagged in
    ``abs_fallback_units``. Units are independent, so ``threads > 1``
    changes the wall clock but never the result.
    """
    ws = _Workspace(data)
    n = data.n
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    fallback: list[int] = []

    def _one(i: int) -> SelectionState:
        return select_links_for_unit(data, i, p=p, c=c, delta=delta, max_links=max_links, _ws=ws)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            states = list(pool.map(_one, range(n)))
    else:
        states = [_one(i) for i in range(n)]
    for i in range(n):
        state = states[i]
        if state.selected:
            weights, used_abs = _reestimate_row(ws, i, state.selected)
            if used_abs:
                fallback.append(i)
            for j, wgt in zip(state.selected, weights):
                rows.append(i)
                cols.append(j)
                vals.append(float(wgt))
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    net = NetworkMatrix(w, provenance="estimated", normalized=not fallback)
    return AdjacencyEstimate(
        w=net,
        selection=tuple(states),
        abs_fallback_units=tuple(fallback),
        p=p,
        c=c,
        delta=delta,
    )


def validate_selection(state: SelectionState) -> bool:
    """Replay a selection trace.

    Every admission must clear its threshold, every drop must have failed
    its re-test threshold, and the admissions minus the drops (in
    admission order) must equal the selected set.
    """
    admitted: list[int] = []
    for rec in state.trace:
        if rec.action == "scan" and rec.accepted:
            if rec.best_t is None or abs(rec.best_t) <= rec.threshold:
                return False
            admitted.append(rec.best_candidate)
        elif rec.action == "retest":
            if rec.best_t is None:
                return False
            cleared = abs(rec.best_t) > rec.threshold
            if cleared != rec.accepted:
                return False
            if not rec.accepted:
                if rec.best_candidate not in admitted:
                    return False
                admitted.remove(rec.best_candidate)
    return tuple(admitted) == state.selected


def write_trace_json(adj: AdjacencyEstimate, path: str | Path) -> None:
    """Serialize the full selection audit to JSON (deterministic layout)."""
    payload = {
        "p": adj.p,
        "c": adj.c,
        "delta": adj.delta,
        "abs_fallback_units": list(adj.abs_fallback_units),
        "units": [
            {
                "unit": st.unit,
                "selected": list(st.selected),
                "stages": [
                    {
                        "stage": rec.stage,
                        "action": rec.action,
                        "n_candidates": rec.n_candidates,
                        "threshold": rec.threshold,
                        "best_candidate": rec.best_candidate,
                        "best_t": rec.best_t,
                        "accepted": rec.accepted,
                        "skipped": [list(sk) for sk in rec.skipped],
                    }
                    for rec in st.trace
                ],
            }
            for st in adj.selection
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf8")
