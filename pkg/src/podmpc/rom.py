"""
Galerkin reduced-order model on a POD basis.

Substituting ``v = mean + sum_i a_i phi_i`` into the incompressible momentum
equation (without the pressure term) and projecting onto each mode gives the
quadratic system

    da_k/dt = c_k + sum_i L[k, i] a_i + sum_ij Q[k, i, j] a_i a_j

with

    c_k       = <-(mean.grad)mean + nu lap(mean), phi_k>
    L[k, i]   = <nu lap(phi_i) - (mean.grad)phi_i - (phi_i.grad)mean, phi_k>
    Q[k, i, j] = -<(phi_j.grad)phi_i, phi_k>

The viscosity and the minus sign of the advection term are stored inside the
tensors, so :func:`rom_rhs` evaluates the full right-hand side directly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BlowUpError, DimensionError
from .field import _fmt, advect, gradient_op, inner_product, laplacian_op
from .pod import PodBasis

__all__ = [
    "RomModel",
    "RomState",
    "assemble_rom",
    "rom_rhs",
    "rom_jacobian",
    "integrate_rom",
    "write_rom",
    "read_rom",
]


@dataclass(frozen=True, eq=False)
class RomModel:
    """Constant, linear and quadratic tensors of the modal ODE.

    ``Q[k]`` need not be symmetric; only its symmetric part contributes to
    ``a @ Q[k] @ a``.
    """

    nu: float
    c: np.ndarray
    L: np.ndarray
    Q: np.ndarray
    basis_id: str = ""

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        n = c.size
        L = np.array(self.L, dtype=float).reshape(n, n)
        Q = np.array(self.Q, dtype=float).reshape(n, n, n)
        for name, arr in (("c", c), ("L", L), ("Q", Q)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"ROM tensor {name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def n(self) -> int:
        return self.c.size

    @classmethod
    def linear(cls, L, c=None, nu=0.0) -> RomModel:
        """Model without quadratic terms (mostly for tests and toy problems)."""
        L = np.atleast_2d(np.asarray(L, dtype=float))
        n = L.shape[0]
        c = np.zeros(n) if c is None else c
        return cls(nu, c, L, np.zeros((n, n, n)))


@dataclass(frozen=True, eq=False)
class RomState:
    a: np.ndarray
    t: float


def assemble_rom(basis: PodBasis, nu: float, length_unit: float = 1.0) -> RomModel:
    """Project the momentum equation onto ``basis``.

    Parameters
    ----------
    basis : PodBasis
    nu : float
        Kinematic viscosity (the inverse Reynolds number in scaled units).
    length_unit : float
        Size of one grid coordinate unit in the length unit implied by the
        velocity and ``nu``. For a grid in km with velocities in m/s pass
        1000, so that the model time unit is the second. With the default of
        1 the tensors are the plain projections in grid units.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    n = basis.n
    s_adv = 1.0 / length_unit
    s_lap = 1.0 / length_unit**2
    mean = basis.mean
    phis = basis.modes
    w = basis.grid.weights
    modes = basis.mode_array  # dims + (n, 3)
    mean_forcing = (-s_adv) * advect(mean, mean) + (nu * s_lap) * laplacian_op(mean)

    c = np.array([inner_product(mean_forcing, phi) for phi in phis])
    L = np.empty((n, n))
    Q = np.empty((n, n, n))
    for i in range(n):
        lin_i = (nu * s_lap) * laplacian_op(phis[i]) - s_adv * (advect(mean, phis[i]) + advect(phis[i], mean))
        L[:, i] = np.einsum("xyzc,xyzkc->k", w[..., None] * lin_i.values, modes)
        # conv[..., j, c] = ((phi_j . grad) phi_i)_c
        conv = np.einsum("...jd,...cd->...jc", modes, gradient_op(phis[i]))
        Q[:, i, :] = -s_adv * np.einsum("xyzjc,xyzkc->kj", w[..., None, None] * conv, modes)
    return RomModel(nu, c, L, Q, basis_id=_basis_id(basis))


def _basis_id(basis: PodBasis) -> str:
    h = hashlib.sha256()
    h.update(basis.mean.values.tobytes())
    for phi in basis.modes:
        h.update(phi.values.tobytes())
    return h.hexdigest()[:16]


def _check_len(model: RomModel, a: np.ndarray):
    if a.shape[-1:] != (model.n,):
        raise DimensionError(f"state has shape {a.shape}, model order is {model.n}")


def _rhs(model: RomModel, a: np.ndarray) -> np.ndarray:
    # supports leading batch dimensions
    return model.c + a @ model.L.T + np.einsum("kij,...i,...j->...k", model.Q, a, a)


def rom_rhs(model: RomModel, a) -> np.ndarray:
    """Time derivative ``c + L a + [a^T Q_k a]_k``."""
    a = np.asarray(a, dtype=float)
    _check_len(model, a)
    return _rhs(model, a)


def rom_jacobian(model: RomModel, a) -> np.ndarray:
    """Analytic Jacobian; row ``k`` is ``L_k + a^T (Q_k + Q_k^T)``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (model.n,):
        raise DimensionError(f"state has shape {a.shape}, model order is {model.n}")
    return model.L + np.einsum("kij,i->kj", model.Q, a) + np.einsum("kij,j->ki", model.Q, a)


def _rk4(model: RomModel, a0: np.ndarray, t0: float, t1: float, dt_max: float) -> np.ndarray:
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    if t1 < t0:
        raise ValueError("integration end time precedes start time")
    span = t1 - t0
    n_full = int(math.floor(span / dt_max))
    rem = span - n_full * dt_max
    steps = [dt_max] * n_full
    if rem > 1e-12 * max(dt_max, abs(span)):
        steps.append(rem)
    a = np.array(a0, dtype=float)
    t = t0
    with np.errstate(over="ignore", invalid="ignore"):
        for h in steps:
            k1 = _rhs(model, a)
            k2 = _rhs(model, a + 0.5 * h * k1)
            k3 = _rhs(model, a + 0.5 * h * k2)
            k4 = _rhs(model, a + h * k3)
            a = a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(a)):
                raise BlowUpError(t)
    return a


def integrate_rom(model: RomModel, a0, t0: float, t1: float, dt_max: float = 60.0) -> RomState:
    """Classical fourth-order Runge-Kutta from ``t0`` to ``t1``.

    Steps of exactly ``dt_max`` are taken, with a shorter final step landing
    on ``t1``. Raises :class:`BlowUpError` if the state stops being finite.
    """
    a0 = np.asarray(a0, dtype=float)
    _check_len(model, a0)
    return RomState(_rk4(model, a0, t0, t1, dt_max), float(t1))


# -- ROM v1 archive -------------------------------------------------------------


def write_rom(path, model: RomModel) -> None:
    n = model.n
    lines = [f"ROM 1 {n} {_fmt(model.nu)}", " ".join(_fmt(v) for v in model.c)]
    lines.extend(" ".join(_fmt(v) for v in row) for row in model.L)
    for k in range(n):
        lines.extend(" ".join(_fmt(v) for v in row) for row in model.Q[k])
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_rom(path) -> RomModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 4 or head[:2] != ["ROM", "1"]:
        raise ValueError(f"{path}: not a ROM v1 archive")
    n, nu = int(head[2]), float(head[3])
    rows = [[float(v) for v in line.split()] for line in lines[1:]]
    if len(rows) != 1 + n + n * n:
        raise ValueError(f"{path}: expected {1 + n + n * n} data lines, found {len(rows)}")
    c = np.array(rows[0])
    L = np.array(rows[1:1 + n])
    Q = np.array(rows[1 + n:]).reshape(n, n, n)
    return RomModel(nu, c, L, Q)
