"""Shared test fixtures and small builders."""

from __future__ import annotations

import numpy as np
import pytest

from netpanel import DGPConfig, FacilityMeta, PanelDataset, generate


def make_meta(n, firms=4, states=None, industries=None, coords=None):
    """Metadata tuple with deterministic labels and coordinates."""
    metas = []
    for i in range(n):
        lat, lon = coords[i] if coords is not None else (30.0 + i * 0.5, -100.0 + i * 0.7)
        metas.append(
            FacilityMeta(
                unit_id=f"u{i:03d}",
                firm_id=f"f{i // firms:03d}",
                industry=industries[i] if industries is not None else f"ind{i % 3}",
                state=states[i] if states is not None else f"S{i % 5:02d}",
                latitude=float(lat),
                longitude=float(lon),
            )
        )
    return tuple(metas)


def make_panel(y, x, meta=None, var_names=None, periods=None):
    n, t = np.asarray(y).shape
    k = np.asarray(x).shape[2]
    return PanelDataset(
        y=y,
        x=x,
        meta=meta if meta is not None else make_meta(n),
        var_names=var_names if var_names is not None else tuple(f"x{j + 1}" for j in range(k)),
        periods=periods if periods is not None else tuple(str(s) for s in range(t)),
    )


def random_panel(seed, n=8, t=40, k=2, scale=1.0):
    rng = np.random.default_rng(seed)
    return make_panel(scale * rng.standard_normal((n, t)), scale * rng.standard_normal((n, t, k)))


@pytest.fixture(scope="session")
def sim_small():
    """One moderately sized synthetic dataset reused across read-only tests."""
    return generate(
        DGPConfig(n=12, t=120, k=2, r_y=1, r_x=1, k_links=(1, 2), psi_range=(0.5, 0.7), seed=11)
    )


@pytest.fixture(scope="session")
def sim_panel_csv(tmp_path_factory, sim_small):
    """The sim_small panel written to disk for CLI and loader tests."""
    from netpanel import write_panel_csv

    path = tmp_path_factory.mktemp("simpanel") / "panel.csv"
    write_panel_csv(sim_small.panel, path)
    return path
