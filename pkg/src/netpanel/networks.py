"""Spatial weight matrix construction, normalization, stats, and export.

All builders return row-normalized :class:`NetworkMatrix` objects whose
rows index *receiving* units: ``w[i, j]`` is the weight unit ``i`` places
on unit ``j``. Diagonals are identically zero and zero rows (isolated
units) are preserved by normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateDistanceError,
    DimensionError,
    DomainError,
    MetadataError,
    NormalizationError,
)
from .panel import FacilityMeta

EARTH_RADIUS_MILES = 3958.7613

_NORM_TOL = 1e-12
_GAUSSIAN_STORAGE_TOL = 1e-12


class NetworkMatrix:
    """Sparse N x N spatial weight matrix with provenance.

    Parameters
    ----------
    weights : array_like or sparse matrix, shape (N, N)
        Link weights; the diagonal must be zero.
    provenance : str
        How the network was built, e.g. ``"estimated"``, ``"threshold_distance"``,
        ``"knn"``, ``"gaussian"``, ``"category"``, ``"file"``.
    normalized : bool
        Declare the rows already normalized; validated at construction.
    """

    def __init__(self, weights, provenance: str, normalized: bool = False):
        w = sp.csr_matrix(weights, dtype=float)
        if w.shape[0] != w.shape[1]:
            raise DimensionError(f"weight matrix must be square, got {w.shape}")
        w.eliminate_zeros()
        w.sort_indices()
        if w.nnz and not np.all(np.isfinite(w.data)):
            raise DomainError("network weights must be finite")
        if np.any(w.diagonal() != 0.0):
            raise DomainError("network diagonal must be zero (no self-links)")
        if normalized:
            sums = np.asarray(w.sum(axis=1)).ravel()
            abs_sums = np.asarray(abs(w).sum(axis=1)).ravel()
            links = np.diff(w.indptr) > 0
            # tolerance scales with the row's absolute weight mass so that
            # heavy sign cancellation does not fail the check spuriously
            tol = _NORM_TOL * np.maximum(1.0, abs_sums[links])
            if np.any(np.abs(sums[links] - 1.0) > tol):
                worst = np.max(np.abs(sums[links] - 1.0))
                raise NormalizationError(
                    f"declared-normalized rows deviate from unit sum by up to {worst:.3e}"
                )
        self.w = w
        self.provenance = provenance
        self.normalized = normalized

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def n_links(self) -> int:
        return self.w.nnz

    def to_dense(self) -> np.ndarray:
        return self.w.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.w.sum(axis=1)).ravel()

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.w.indptr)

    def support(self, i: int) -> np.ndarray:
        """Column indices of unit i's links, ascending."""
        return self.w.indices[self.w.indptr[i] : self.w.indptr[i + 1]].copy()

    def row_weights(self, i: int) -> np.ndarray:
        return self.w.data[self.w.indptr[i] : self.w.indptr[i + 1]].copy()

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"NetworkMatrix(n={self.n}, links={self.n_links}, "
            f"provenance={self.provenance!r}, normalized={self.normalized})"
        )


@dataclass(frozen=True)
class NetworkStats:
    """Degree and density summary of a network."""

    n: int
    n_links: int
    density: float
    mean_out_degree: float
    max_out_degree: int
    degree_histogram: dict[int, int]


def haversine_miles(point_a, point_b) -> float:
    """Great-circle distance in miles between two (lat, lon) points in degrees.

    Uses a fixed spherical Earth radius of 3958.7613 miles.

    Raises
    ------
    DomainError
        Latitude outside [-90, 90], longitude outside [-180, 180], or
        non-finite coordinates.
    """
    lat1, lon1 = point_a
    lat2, lon2 = point_b
    for lat, lon in ((lat1, lon1), (lat2, lon2)):
        if not (np.isfinite(lat) and np.isfinite(lon)):
            raise DomainError("coordinates must be finite")
        if abs(lat) > 90.0:
            raise DomainError(f"latitude {lat} outside [-90, 90]")
        if abs(lon) > 180.0:
            raise DomainError(f"longitude {lon} outside [-180, 180]")
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return float(2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.minimum(a, 1.0))))


def pairwise_distances(meta: tuple[FacilityMeta, ...]) -> np.ndarray:
    """Symmetric N x N great-circle distance matrix (miles), zero diagonal."""
    lats = np.array([m.latitude for m in meta], dtype=float)
    lons = np.array([m.longitude for m in meta], dtype=float)
    if not (np.all(np.isfinite(lats)) and np.all(np.isfinite(lons))):
        raise DomainError("coordinates must be finite")
    if np.any(np.abs(lats) > 90.0):
        raise DomainError("latitude outside [-90, 90]")
    if np.any(np.abs(lons) > 180.0):
        raise DomainError("longitude outside [-180, 180]")
    phi = np.radians(lats)
    lam = np.radians(lons)
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def _unique_pair_values(d: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(d.shape[0], k=1)
    return d[iu]


def _require_units(meta, minimum: int = 2) -> None:
    if len(meta) < minimum:
        raise DimensionError(f"need at least {minimum} units, got {len(meta)}")


def threshold_distance_network(meta: tuple[FacilityMeta, ...], percentile: float) -> NetworkMatrix:
    """Inverse-distance network over pairs closer than a distance percentile.

    The cutoff is the empirical ``percentile`` quantile of the unordered
    pairwise distances; pairs at or below it receive weight ``1/d`` before
    row normalization. ``percentile=1.0`` yields the complete graph.

    Raises
    ------
    DegenerateDistanceError
        Two distinct units with identical coordinates fall inside the
        cutoff, where ``1/d`` is undefined.
    """
    _require_units(meta)
    if not (0.0 < percentile <= 1.0):
        raise DomainError(f"percentile must lie in (0, 1], got {percentile}")
    d = pairwise_distances(meta)
    cutoff = float(np.quantile(_unique_pair_values(d), percentile))
    n = len(meta)
    w = np.zeros((n, n))
    mask = (d <= cutoff) & ~np.eye(n, dtype=bool)
    if np.any(d[mask] == 0.0):
        i, j = np.argwhere(mask & (d == 0.0))[0]
        raise DegenerateDistanceError(
            f"units {meta[i].unit_id!r} and {meta[j].unit_id!r} share coordinates; "
            "inverse distance undefined"
        )
    w[mask] = 1.0 / d[mask]
    return row_normalize(NetworkMatrix(w, provenance="threshold_distance"))


def knn_network(meta: tuple[FacilityMeta, ...], k: int) -> NetworkMatrix:
    """k-nearest-neighbour network with equal weights 1/k.

    Distance ties at the k-th neighbour resolve to the smaller unit index,
    so the result is deterministic.
    """
    _require_units(meta)
    n = len(meta)
    if not (1 <= k <= n - 1):
        raise DimensionError(f"k must lie in [1, N-1]=[1, {n - 1}], got {k}")
    d = pairwise_distances(meta)
    w = np.zeros((n, n))
    cols = np.arange(n)
    for i in range(n):
        others = cols[cols != i]
        order = others[np.lexsort((others, d[i, others]))]
        w[i, order[:k]] = 1.0 / k
    return NetworkMatrix(w, provenance="knn", normalized=True)


def gaussian_network(meta: tuple[FacilityMeta, ...], sigma: float | str = "auto") -> NetworkMatrix:
    """Gaussian distance-decay network, ``w = exp(-d^2 / (2 sigma^2))``.

    ``sigma="auto"`` sets the bandwidth to one third of the sample standard
    deviation of the unordered pairwise distances. Weights below 1e-12 are
    dropped before storage; rows are then normalized.
    """
    _require_units(meta)
    d = pairwise_distances(meta)
    if sigma == "auto":
        pair_vals = _unique_pair_values(d)
        if pair_vals.size < 2:
            raise DimensionError("auto bandwidth needs at least 3 units")
        spread = float(np.std(pair_vals, ddof=1))
        if spread == 0.0:
            raise DegenerateDistanceError(
                "all pairwise distances identical; auto bandwidth undefined"
            )
        sigma_val = spread / 3.0
    else:
        sigma_val = float(sigma)
        if not np.isfinite(sigma_val) or sigma_val <= 0.0:
            raise DomainError(f"sigma must be positive, got {sigma}")
    w = np.exp(-(d**2) / (2.0 * sigma_val**2))
    np.fill_diagonal(w, 0.0)
    w[w < _GAUSSIAN_STORAGE_TOL] = 0.0
    return row_normalize(NetworkMatrix(w, provenance="gaussian"))


_CATEGORY_ATTRS = {"firm": "firm_id", "industry": "industry", "state": "state"}


def category_network(meta: tuple[FacilityMeta, ...], dimension: str) -> NetworkMatrix:
    """Equal-weight clique network among units sharing a categorical label.

    ``dimension`` is one of ``"firm"``, ``"industry"``, ``"state"``.
    Singleton categories yield zero rows.
    """
    _require_units(meta)
    attr = _CATEGORY_ATTRS.get(dimension)
    if attr is None:
        raise DomainError(f"dimension must be one of {sorted(_CATEGORY_ATTRS)}, got {dimension!r}")
    labels = []
    for m in meta:
        lab = getattr(m, attr)
        if lab is None or str(lab).strip() == "":
            raise MetadataError(f"unit {m.unit_id!r} has no {dimension} label")
        labels.append(str(lab))
    labels = np.array(labels)
    n = len(meta)
    w = (labels[:, None] == labels[None, :]).astype(float)
    np.fill_diagonal(w, 0.0)
    return row_normalize(NetworkMatrix(w, provenance="category"))


def row_normalize(net: NetworkMatrix) -> NetworkMatrix:
    """Scale each nonzero row to sum to one; zero rows pass through.

    Idempotent. Raises :class:`NormalizationError` for a row whose links
    sum to (numerically) zero, where normalization is undefined.
    """
    w = net.w.tocsr(copy=True)
    sums = np.asarray(w.sum(axis=1)).ravel()
    degrees = np.diff(w.indptr)
    bad = (degrees > 0) & (np.abs(sums) < _NORM_TOL)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NormalizationError(f"row {i} has {degrees[i]} links summing to ~0; cannot normalize")
    scale = np.ones_like(sums)
    rows_with_links = degrees > 0
    scale[rows_with_links] = 1.0 / sums[rows_with_links]
    w = sp.diags(scale) @ w
    return NetworkMatrix(w, provenance=net.provenance, normalized=True)


def network_stats(net: NetworkMatrix, weight_cutoff: float = 0.0) -> NetworkStats:
    """Density and out-degree summary.

    ``weight_cutoff > 0`` counts only links with weight strictly above the
    cutoff (a reporting convention for dense kernel networks); the default
    counts every stored link.
    """
    n = net.n
    if weight_cutoff == 0.0:
        keep = np.ones(net.w.nnz, dtype=bool)
    else:
        keep = net.w.data > weight_cutoff
    counts = np.zeros(n, dtype=int)
    rows = np.repeat(np.arange(n), np.diff(net.w.indptr))
    np.add.at(counts, rows[keep], 1)
    n_links = int(counts.sum())
    hist: dict[int, int] = {}
    for c in counts:
        hist[int(c)] = hist.get(int(c), 0) + 1
    return NetworkStats(
        n=n,
        n_links=n_links,
        density=n_links / (n * (n - 1)) if n > 1 else 0.0,
        mean_out_degree=float(counts.mean()) if n else 0.0,
        max_out_degree=int(counts.max()) if n else 0,
        degree_histogram=dict(sorted(hist.items())),
    )


def write_edge_list(net: NetworkMatrix, path: str | Path) -> None:
    """Write links as CSV ``i,j,weight`` (0-based indices, 17 significant digits)."""
    lines = ["i,j,weight"]
    coo = net.w.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        lines.append(f"{r},{c},{v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf8")


def read_edge_list(path: str | Path, n: int, provenance: str = "file") -> NetworkMatrix:
    """Read an ``i,j,weight`` CSV into an N x N network.

    Rows already summing to one (within 1e-12) mark the result normalized,
    so exported networks round-trip with their normalization status.
    """
    path = Path(path)
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="utf8") as fh:
        header = fh.readline().strip()
        if header != "i,j,weight":
            raise DomainError(f"{path}: expected header 'i,j,weight', got {header!r}")
        for line_num, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DomainError(f"{path}:{line_num}: expected 3 fields")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise DomainError(f"{path}:{line_num}: malformed edge {line!r}") from None
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionError(f"{path}:{line_num}: index out of range for n={n}")
            rows.append(i)
            cols.append(j)
            vals.append(v)
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    net = NetworkMatrix(w, provenance=provenance)
    sums = net.row_sums()
    abs_sums = np.asarray(abs(net.w).sum(axis=1)).ravel()
    degrees = net.out_degrees()
    has = degrees > 0
    tol = _NORM_TOL * np.maximum(1.0, abs_sums[has])
    if np.all(np.abs(sums[has] - 1.0) <= tol):
        return NetworkMatrix(net.w, provenance=provenance, normalized=True)
    return net


def write_dot(net: NetworkMatrix, path: str | Path, unit_ids: tuple[str, ...] | None = None) -> None:
    """Write the network as a Graphviz digraph for visual inspection."""
    names = unit_ids if unit_ids is not None else tuple(str(i) for i in range(net.n))
    if len(names) != net.n:
        raise DimensionError(f"{len(names)} names for {net.n} units")
    lines = ["digraph network {"]
    coo = net.w.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        lines.append(f'  "{names[r]}" -> "{names[c]}" [weight={v:.6g}];')
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf8")
