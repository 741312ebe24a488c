"""
Snapshot proper orthogonal decomposition of vector fields.

The snapshots are mean-subtracted, the ``m x m`` correlation matrix
``U_ij = <u_i, u_j> / m`` is diagonalized, and each mode is assembled as a
linear combination of the fluctuation snapshots weighted by an eigenvector.
Inner products are the trapezoidal volume integrals of :mod:`podmpc.field`.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DegenerateBasisError, DimensionError
from .field import Grid3, VectorField3, _fmt, format_vf3, inner_product, parse_vf3

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "compute_mean",
    "correlation_matrix",
    "pod_decompose",
    "project",
    "reconstruct",
    "reconstruction_error",
    "write_podb",
    "read_podb",
]

# eigenvalues below this fraction of the largest are treated as zero
EIG_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Ensemble of ``m`` fields on a common grid with increasing timestamps (hours)."""

    grid: Grid3
    snapshots: tuple
    timestamps: np.ndarray = None

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValueError("a snapshot set needs at least one snapshot")
        for s in snaps:
            if s.grid != self.grid:
                raise DimensionError("all snapshots must share the set's grid")
        ts = np.arange(len(snaps), dtype=float) if self.timestamps is None else np.asarray(self.timestamps, float)
        if ts.shape != (len(snaps),):
            raise DimensionError(f"{len(snaps)} snapshots but {ts.size} timestamps")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("snapshot timestamps must be strictly increasing")
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "timestamps", ts)

    @property
    def m(self) -> int:
        return len(self.snapshots)

    def stacked(self) -> np.ndarray:
        """Sample array of shape ``(m,) + dims + (3,)``."""
        return np.stack([s.values for s in self.snapshots])


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Mean field, orthonormal modes and their energies.

    ``eigenvalues`` are sorted in descending order and ``total_energy`` is the
    sum of every correlation eigenvalue before truncation.
    """

    grid: Grid3
    mean: VectorField3
    modes: tuple
    eigenvalues: np.ndarray
    total_energy: float
    energy_fraction: float = 1.0
    m: int = 0
    all_eigenvalues: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        modes = tuple(self.modes)
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.shape != (len(modes),):
            raise DimensionError(f"{len(modes)} modes but {lam.size} eigenvalues")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "total_energy", float(self.total_energy))
        if self.all_eigenvalues is None:
            object.__setattr__(self, "all_eigenvalues", lam.copy())

    @property
    def n(self) -> int:
        return len(self.modes)

    @property
    def mode_array(self) -> np.ndarray:
        """Modes stacked along the last-but-one axis: shape ``dims + (n, 3)``."""
        if not hasattr(self, "_mode_array"):
            arr = np.stack([phi.values for phi in self.modes], axis=-2)
            arr.setflags(write=False)
            object.__setattr__(self, "_mode_array", arr)
        return self._mode_array

    def captured_energy(self) -> np.ndarray:
        """Cumulative energy fraction captured by the first 1..n modes."""
        if self.total_energy <= 0.0:
            return np.ones(self.n)
        return np.cumsum(self.eigenvalues) / self.total_energy


def compute_mean(snapshots: SnapshotSet) -> VectorField3:
    return VectorField3(snapshots.grid, np.mean(snapshots.stacked(), axis=0))


def _fluctuations(snapshots: SnapshotSet, mean: VectorField3) -> np.ndarray:
    if mean.grid != snapshots.grid:
        raise DimensionError("mean field and snapshots live on different grids")
    return snapshots.stacked() - mean.values[None]


def _gram(fluct: np.ndarray, weights: np.ndarray) -> np.ndarray:
    m = fluct.shape[0]
    X = fluct.reshape(m, -1, 3)
    w = weights.reshape(-1)
    WX = X * w[None, :, None]
    G = WX.reshape(m, -1) @ X.reshape(m, -1).T
    return 0.5 * (G + G.T)


def correlation_matrix(snapshots: SnapshotSet, mean: VectorField3) -> np.ndarray:
    """``U_ij = <u_i, u_j> / m`` over the mean-subtracted snapshots."""
    fluct = _fluctuations(snapshots, mean)
    return _gram(fluct, snapshots.grid.weights) / snapshots.m


def _fix_sign(values: np.ndarray) -> np.ndarray:
    flat = values.reshape(-1)
    k = int(np.argmax(np.abs(flat)))
    return -values if flat[k] < 0 else values


def pod_decompose(snapshots: SnapshotSet, energy_fraction: float = 0.99, max_modes: int | None = None,
                  mean: VectorField3 | None = None) -> PodBasis:
    """Compute a truncated POD basis from a snapshot set.

    Parameters
    ----------
    snapshots : SnapshotSet
        Training ensemble; the mean is removed before decomposition.
    energy_fraction : float
        Keep the fewest modes whose eigenvalues sum to at least this fraction
        of the total. Must lie in ``(0, 1]``.
    max_modes : int, optional
        Hard cap on the number of modes. Both limits apply.
    mean : VectorField3, optional
        Reference field subtracted from every snapshot. Defaults to the
        ensemble mean; pass a zero field to decompose raw snapshots.

    Returns
    -------
    PodBasis
        Modes are unit-norm, mutually orthogonal, and signed so that their
        largest-magnitude sample is positive. Modes whose eigenvalue is below
        ``1e-12`` times the leading one are discarded.

    Raises
    ------
    DegenerateBasisError
        If the snapshots carry no fluctuation energy (e.g. a constant wind).
    """
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError(f"energy_fraction must lie in (0, 1], got {energy_fraction}")
    if max_modes is not None and max_modes < 1:
        raise ValueError("max_modes must be at least 1")
    grid = snapshots.grid
    m = snapshots.m
    if mean is None:
        mean = compute_mean(snapshots)
    fluct = _fluctuations(snapshots, mean)

    raw = snapshots.stacked()
    scale = float(np.max(np.abs(raw))) if raw.size else 0.0
    if float(np.max(np.abs(fluct))) <= 1e-12 * max(scale, np.finfo(float).tiny):
        raise DegenerateBasisError(
            "snapshot fluctuations are identically zero (constant field); "
            "sample a time-varying field or add snapshots at different times")

    U = _gram(fluct, grid.weights) / m
    lam, vecs = np.linalg.eigh(U)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vecs = vecs[:, order]
    total = float(np.sum(lam))

    keep = int(np.sum(lam >= EIG_RTOL * lam[0]))
    cumulative = np.cumsum(lam) / total
    n = int(np.searchsorted(cumulative, energy_fraction - 1e-12) + 1)
    n = min(n, keep, m)
    if max_modes is not None:
        n = min(n, int(max_modes))

    modes = []
    for ell in range(n):
        phi = np.tensordot(vecs[:, ell], fluct, axes=1)
        norm2 = float(np.sum(grid.weights * np.sum(phi * phi, axis=-1)))
        phi = _fix_sign(phi / np.sqrt(norm2))
        modes.append(VectorField3(grid, phi))
    return PodBasis(grid, mean, tuple(modes), lam[:n].copy(), total,
                    energy_fraction=float(energy_fraction), m=m, all_eigenvalues=lam)


def project(basis: PodBasis, f: VectorField3) -> np.ndarray:
    """Modal coefficients ``a_i = <f - mean, phi_i>``."""
    if f.grid != basis.grid:
        raise DimensionError("field and basis live on different grids")
    d = (f.values - basis.mean.values) * basis.grid.weights[..., None]
    return np.einsum("xyzc,xyznc->n", d, basis.mode_array)


def reconstruct(basis: PodBasis, a) -> VectorField3:
    """``mean + sum_i a_i phi_i``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (basis.n,):
        raise DimensionError(f"expected {basis.n} coefficients, got shape {a.shape}")
    return VectorField3(basis.grid, basis.mean.values + np.einsum("n,...nc->...c", a, basis.mode_array))


def reconstruction_error(basis: PodBasis, snapshots: SnapshotSet, n: int | None = None) -> float:
    """Mean squared residual ``(1/m) sum_k ||u_k - P_n u_k||^2`` of the fluctuations.

    Uses the first ``n`` modes (all of them by default). At the POD optimum
    this equals the sum of the discarded eigenvalues.
    """
    n = basis.n if n is None else n
    total = 0.0
    for snap in snapshots.snapshots:
        u = snap - basis.mean
        r = u.values.copy()
        for phi in basis.modes[:n]:
            r -= inner_product(u, phi) * phi.values
        total += float(np.sum(basis.grid.weights * np.sum(r * r, axis=-1)))
    return total / snapshots.m


# -- PODB v1 archive ------------------------------------------------------------


def write_podb(path, basis: PodBasis) -> None:
    parts = [f"PODB 1 {basis.n} {basis.m} {_fmt(basis.energy_fraction)}\n", format_vf3(basis.mean)]
    parts.extend(format_vf3(phi) for phi in basis.modes)
    parts.append(" ".join(_fmt(v) for v in basis.eigenvalues) + "\n")
    Path(path).write_text("".join(parts), encoding="utf-8", newline="\n")


def read_podb(path) -> PodBasis:
    """Load a basis archive.

    The archive stores only the kept eigenvalues, so ``total_energy`` of the
    loaded basis is their sum.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["PODB", "1"]:
        raise ValueError(f"{path}: not a PODB v1 archive")
    n, m, ef = int(head[2]), int(head[3]), float(head[4])
    mean, pos = parse_vf3(lines, 1)
    modes = []
    for _ in range(n):
        phi, pos = parse_vf3(lines, pos)
        modes.append(phi)
    lam = np.array([float(v) for v in lines[pos].split()]) if n else np.zeros(0)
    if lam.shape != (n,):
        raise ValueError(f"{path}: expected {n} eigenvalues on line {pos + 1}")
    return PodBasis(mean.grid, mean, tuple(modes), lam, float(np.sum(lam)), energy_fraction=ef, m=m)
