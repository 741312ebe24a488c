import numpy as np
import pytest

from podmpc.field import Grid3, VectorField3
from podmpc.pod import SnapshotSet, pod_decompose


def analytic_snapshots(grid, m, seed=0):
    """Snapshots mixing a few smooth 3-D vector patterns with random amplitudes."""
    X, Y, Z = grid.mesh()
    patterns = [
        (np.sin(np.pi * X) * np.cos(np.pi * Y), -np.cos(np.pi * X) * np.sin(np.pi * Y), 0 * Z),
        (0 * X, np.sin(np.pi * Z) * np.cos(2 * X), np.cos(np.pi * Y) * Z),
        (Y * Z, X**2 - Z, np.sin(X + Y)),
        (np.cos(2 * Z), np.sin(Y) * X, -X * Y),
        (np.exp(-X) * Y, np.cos(Z + X), np.sin(2 * Y)),
        (X * Y * Z, np.sin(X * Z), np.cos(Y - Z)),
    ]
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal((m, len(patterns)))
    base = np.stack(patterns[0], axis=-1) * 0.5 + 1.0
    snaps = []
    for k in range(m):
        v = base + sum(amps[k, p] * np.stack(patterns[p], axis=-1) for p in range(len(patterns)))
        snaps.append(VectorField3(grid, v))
    return SnapshotSet(grid, tuple(snaps), np.arange(m, dtype=float))


@pytest.fixture(scope="session")
def small_grid():
    return Grid3.from_bounds((0.0, 0.0, 0.0), (1.0, 1.2, 0.8), (9, 10, 7))


@pytest.fixture(scope="session")
def flow_basis(small_grid):
    return pod_decompose(analytic_snapshots(small_grid, 10, seed=1), 1.0)
