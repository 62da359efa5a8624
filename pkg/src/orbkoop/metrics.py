"""Accuracy metrics: circular-orbit invariants, rollout errors, Jacobi constant."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Cr3bpParams, Trajectory
from .errors import ShapeError, SingularityError
from .koopman import KoopmanModel, lift, predict


def orbit_average(series) -> float:
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("orbit average of an empty series")
    # offset by the first sample so a constant series averages to itself exactly
    avg = s[0] + (s - s[0]).mean(axis=0)
    return float(avg) if s.ndim == 1 else avg


def relative_variation(series) -> np.ndarray:
    """``chi / <chi> - 1``; undefined when the orbit average is zero."""
    s = np.asarray(series, dtype=float)
    avg = orbit_average(s)
    if avg == 0.0:
        raise ZeroDivisionError("relative variation needs a nonzero orbit average")
    return (s - avg) / avg


@dataclass
class InvariantReport:
    xi_r: np.ndarray
    xi_v: np.ndarray
    r_dot_v: np.ndarray
    xi_lz: np.ndarray
    mean_r: float
    mean_v: float
    mean_lz: float

    @property
    def max_abs(self) -> dict[str, float]:
        return {
            "xi_r": float(np.max(np.abs(self.xi_r))),
            "xi_v": float(np.max(np.abs(self.xi_v))),
            "r_dot_v": float(np.max(np.abs(self.r_dot_v))),
            "xi_lz": float(np.max(np.abs(self.xi_lz))),
        }

    def rows(self):
        return zip(self.xi_r, self.xi_v, self.r_dot_v, self.xi_lz)


def circular_invariants(traj: Trajectory | np.ndarray) -> InvariantReport:
    """Radius, speed, ``r . v`` and ``L_z`` along a planar two-body trajectory.

    ``r . v`` is returned raw: its orbit average is near zero, so a relative
    variation would be meaningless.
    """
    s = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if s.ndim != 2 or s.shape[1] != 4:
        raise ShapeError("circular invariants need planar two-body states (M, 4)")
    x, y, vx, vy = s.T
    r = np.hypot(x, y)
    v = np.hypot(vx, vy)
    lz = x * vy - y * vx
    return InvariantReport(
        xi_r=relative_variation(r),
        xi_v=relative_variation(v),
        r_dot_v=x * vx + y * vy,
        xi_lz=relative_variation(lz),
        mean_r=orbit_average(r),
        mean_v=orbit_average(v),
        mean_lz=orbit_average(lz),
    )


@dataclass
class ErrorSeries:
    """Local and global lifted-space errors for steps 1..M-1.

    ``local[k]`` and ``global_[k]`` belong to step ``k + 1``.
    """

    local: np.ndarray
    global_: np.ndarray
    local_pos: np.ndarray
    global_pos: np.ndarray
    mean_radius: float
    prediction: Trajectory = field(repr=False)

    @property
    def max_global_pos_percent(self) -> float:
        return 100.0 * float(self.global_pos.max()) / self.mean_radius

    @property
    def max_local_pos_percent(self) -> float:
        return 100.0 * float(self.local_pos.max()) / self.mean_radius


def _position_dims(n: int) -> int:
    return 2 if n == 4 else 3


def rollout_errors(model: KoopmanModel, reference: Trajectory) -> ErrorSeries:
    """Errors of the corrected rollout started at ``reference.states[0]``.

    Local: ``Phi(x_n) - K Phi(x_{n-1})`` with the true previous state.
    Global: ``Phi(x_n) - K Phi(xhat_{n-1})`` with the rolled-out previous state.
    """
    ref = reference.states
    if ref.ndim != 2 or ref.shape[1] != model.n:
        raise ShapeError(f"reference states {ref.shape} do not match model n = {model.n}")
    if len(reference) < 2:
        raise ShapeError("reference needs at least two states")
    if len(reference) > 2 and not np.isclose(reference.dt, model.dt_scaled, rtol=1e-9):
        raise ShapeError(f"reference dt {reference.dt} != model dt {model.dt_scaled}")
    pred = predict(model, ref[0], len(reference) - 1)
    phi_true = lift(model, ref.T)
    phi_hat = lift(model, pred.states.T)
    local = (phi_true[:, 1:] - model.K @ phi_true[:, :-1]).T
    global_ = (phi_true[:, 1:] - model.K @ phi_hat[:, :-1]).T
    p = _position_dims(model.n)
    mean_r = orbit_average(np.linalg.norm(ref[:, :p], axis=1))
    return ErrorSeries(
        local=local,
        global_=global_,
        local_pos=np.linalg.norm(local[:, :p], axis=1),
        global_pos=np.linalg.norm(global_[:, :p], axis=1),
        mean_radius=mean_r,
        prediction=pred,
    )


def _mu_frac(params) -> float:
    return params.mu_frac if isinstance(params, Cr3bpParams) else float(params)


def jacobi_constant(state, params) -> float | np.ndarray:
    """``C = (x^2 + y^2) + 2 mu1 / r1 + 2 mu2 / r2 - v^2`` with unit rotation rate.

    Accepts one state ``(6,)`` or a stack ``(M, 6)``; ``params`` is a
    :class:`Cr3bpParams` or the mass fraction itself.
    """
    mu = _mu_frac(params)
    s = np.asarray(state, dtype=float)
    x, y, z, vx, vy, vz = s.T
    r1 = np.sqrt((x + mu) ** 2 + y**2 + z**2)
    r2 = np.sqrt((x - 1.0 + mu) ** 2 + y**2 + z**2)
    if np.any(r1 == 0) or np.any(r2 == 0):
        raise SingularityError("Jacobi constant undefined at a primary")
    c = x**2 + y**2 + 2.0 * (1.0 - mu) / r1 + 2.0 * mu / r2 - (vx**2 + vy**2 + vz**2)
    return float(c) if s.ndim == 1 else c


@dataclass
class JacobiReport:
    series: np.ndarray
    reference: np.ndarray | None = None

    @property
    def relative_error(self) -> np.ndarray | None:
        if self.reference is None:
            return None
        return np.abs(self.series - self.reference) / np.abs(self.reference)

    @property
    def max_relative_error(self) -> float:
        rel = self.relative_error
        return 0.0 if rel is None else float(rel.max())

    @property
    def drift(self) -> float:
        """Largest relative departure from the first value of ``series``."""
        return float(np.max(np.abs(self.series / self.series[0] - 1.0)))


def jacobi_series(traj: Trajectory, params, reference: Trajectory | None = None) -> JacobiReport:
    c = jacobi_constant(traj.states, params)
    ref = None
    if reference is not None:
        if len(reference) != len(traj):
            raise ShapeError("reference and trajectory lengths differ")
        ref = jacobi_constant(reference.states, params)
    return JacobiReport(np.atleast_1d(c), None if ref is None else np.atleast_1d(ref))


def write_metric_csv(path, header: list[str], columns) -> Path:
    """One row per timestep; ``columns`` are equal-length sequences."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    if len({c.size for c in cols}) > 1:
        raise ShapeError("metric columns differ in length")
    out = Path(path)
    with open(out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return out
