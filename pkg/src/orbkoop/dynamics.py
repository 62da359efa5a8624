"""Nonlinear orbital dynamics: planar two-body (optionally J2 + SRP) and CR3BP.

Physical two-body work is in km, s, km/s. CR3BP states are nondimensional in
the rotating frame (length unit L*, time unit T*, mass unit M*).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    InvalidOrbitError,
    PropagationError,
    SingularityError,
    SolverError,
)

# km^3 / (kg s^2)
G_KM = 6.674e-20

MU_EARTH = 398600.4418
R_EARTH = 6378.14
J2_EARTH = 1.08263e-3
M_EARTH = 5.972e24
M_MOON = 7.342e22
EARTH_MOON_DISTANCE = 384400.0

UNITS_PHYSICAL = "physical-km-s"
UNITS_CANONICAL = "canonical-2bp"
UNITS_CR3BP = "nondim-cr3bp"
UNIT_TAGS = (UNITS_PHYSICAL, UNITS_CANONICAL, UNITS_CR3BP)

Derivative = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StateVector:
    """Orbital state with a unit-system tag.

    Planar two-body states are ``[x, y, vx, vy]``; CR3BP states are
    ``[x, y, z, vx, vy, vz]``.
    """

    components: np.ndarray
    units: str = UNITS_PHYSICAL

    def __post_init__(self):
        comps = np.array(self.components, dtype=float).reshape(-1)
        if self.units not in UNIT_TAGS:
            raise ValueError(f"unknown unit tag {self.units!r}")
        expected = 6 if self.units == UNITS_CR3BP else 4
        if comps.size != expected:
            raise ValueError(
                f"{self.units} state needs {expected} components, got {comps.size}"
            )
        if not np.all(np.isfinite(comps)):
            raise ValueError("state components must be finite")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    def __array__(self, dtype=None, copy=None):
        out = self.components if dtype is None else self.components.astype(dtype)
        return out.copy() if copy else out

    def __len__(self):
        return self.components.size


@dataclass(frozen=True)
class SRPParams:
    """Cannonball solar radiation pressure.

    ``pressure`` is in N/m^2 at 1 AU, ``area_to_mass`` in m^2/kg, and
    ``sun_dir`` points from the orbit toward the Sun.
    """

    pressure: float = 4.56e-6
    reflectivity: float = 1.3
    area_to_mass: float = 0.01
    sun_dir: tuple[float, float] = (-1.0, 0.0)

    def __post_init__(self):
        norm = math.hypot(*self.sun_dir)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"sun_dir must be a unit vector, |s| = {norm}")

    def acceleration(self) -> np.ndarray:
        # N/kg = m/s^2 -> km/s^2, pushing away from the Sun
        mag = self.pressure * self.reflectivity * self.area_to_mass / 1000.0
        return -mag * np.asarray(self.sun_dir, dtype=float)


@dataclass(frozen=True)
class GravParams:
    mu: float = MU_EARTH
    body_radius: float = R_EARTH
    j2: float = J2_EARTH
    srp: SRPParams | None = None
    satellite_mass: float = 0.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.body_radius <= 0:
            raise ValueError("body_radius must be positive")
        if self.satellite_mass < 0:
            raise ValueError("satellite_mass must be nonnegative")

    @property
    def mu_total(self) -> float:
        """G(M + m); equals ``mu`` for a massless satellite."""
        return self.mu + G_KM * self.satellite_mass


BODIES: dict[str, GravParams] = {
    "earth": GravParams(),
    "moon": GravParams(mu=4902.800066, body_radius=1737.4, j2=2.0323e-4),
    "jupiter": GravParams(mu=1.26686534e8, body_radius=71492.0, j2=1.4736e-2),
}


def body_params(name: str, perturbed: bool = False) -> GravParams:
    try:
        base = BODIES[name]
    except KeyError:
        raise ValueError(f"unknown body {name!r}; choose from {sorted(BODIES)}") from None
    if perturbed and base.srp is None:
        return GravParams(base.mu, base.body_radius, base.j2, SRPParams(), base.satellite_mass)
    return base


@dataclass(frozen=True)
class Cr3bpParams:
    m_star: float
    l_star: float
    t_star: float
    mu_frac: float

    def __post_init__(self):
        if not 0.0 < self.mu_frac < 0.5:
            raise ValueError("mu_frac must lie in (0, 0.5)")
        expected = math.sqrt(self.l_star**3 / (G_KM * self.m_star))
        if abs(self.t_star - expected) > 1e-12 * expected:
            raise ValueError("t_star inconsistent with l_star and m_star")

    @classmethod
    def from_masses(cls, m_primary: float, m_secondary: float, distance: float) -> "Cr3bpParams":
        m_star = m_primary + m_secondary
        t_star = math.sqrt(distance**3 / (G_KM * m_star))
        return cls(m_star, distance, t_star, m_secondary / m_star)

    @classmethod
    def earth_moon(cls) -> "Cr3bpParams":
        return cls.from_masses(M_EARTH, M_MOON, EARTH_MOON_DISTANCE)


@dataclass(frozen=True)
class OrbitSpec:
    kind: str
    perigee_radius: float
    eccentricity: float = 0.0
    semi_major_axis: float = field(init=False)

    def __post_init__(self):
        if self.kind not in ("circular", "elliptical", "perturbed-circular"):
            raise ValueError(f"unknown orbit kind {self.kind!r}")
        if not 0.0 <= self.eccentricity < 1.0:
            raise InvalidOrbitError(f"eccentricity {self.eccentricity} outside [0, 1)")
        if self.perigee_radius <= 0:
            raise InvalidOrbitError("perigee radius must be positive")
        object.__setattr__(
            self, "semi_major_axis", self.perigee_radius / (1.0 - self.eccentricity)
        )

    def period(self, mu: float) -> float:
        return 2.0 * math.pi * math.sqrt(self.semi_major_axis**3 / mu)


def two_body_accel(state, params: GravParams, include_perturbations: bool = False) -> np.ndarray:
    """Planar two-body acceleration in km/s^2.

    With ``include_perturbations`` the in-plane J2 term (radial for z = 0)
    and the constant SRP acceleration are added.
    """
    x, y = float(state[0]), float(state[1])
    r2 = x * x + y * y
    if r2 == 0.0:
        raise SingularityError("two-body acceleration undefined at r = 0")
    r = math.sqrt(r2)
    coeff = -params.mu_total / (r2 * r)
    if include_perturbations:
        coeff -= 1.5 * params.j2 * params.mu_total * params.body_radius**2 / (r2 * r2 * r)
    acc = np.array([coeff * x, coeff * y])
    if include_perturbations and params.srp is not None:
        acc += params.srp.acceleration()
    return acc


def two_body_derivative(params: GravParams, include_perturbations: bool = False) -> Derivative:
    def deriv(s: np.ndarray) -> np.ndarray:
        a = two_body_accel(s, params, include_perturbations)
        return np.array([s[2], s[3], a[0], a[1]])

    return deriv


def cr3bp_accel(state, mu_frac: float) -> np.ndarray:
    """Rotating-frame CR3BP acceleration ``(ax, ay, az)``."""
    x, y, z, vx, vy, _ = (float(c) for c in state)
    d2 = (x + mu_frac) ** 2 + y * y + z * z
    r2 = (x - 1.0 + mu_frac) ** 2 + y * y + z * z
    if d2 == 0.0 or r2 == 0.0:
        raise SingularityError("CR3BP acceleration undefined at a primary")
    d3 = d2 * math.sqrt(d2)
    r3 = r2 * math.sqrt(r2)
    m1 = (1.0 - mu_frac) / d3
    m2 = mu_frac / r3
    ax = x + 2.0 * vy - m1 * (x + mu_frac) - m2 * (x - 1.0 + mu_frac)
    ay = y - 2.0 * vx - m1 * y - m2 * y
    az = -m1 * z - m2 * z
    return np.array([ax, ay, az])


def cr3bp_derivative(mu_frac: float) -> Derivative:
    def deriv(s: np.ndarray) -> np.ndarray:
        a = cr3bp_accel(s, mu_frac)
        return np.array([s[3], s[4], s[5], a[0], a[1], a[2]])

    return deriv


def rk4_step(derivative: Derivative, state, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of an autonomous system."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=float)
    k1 = derivative(s)
    if not np.all(np.isfinite(k1)):
        raise PropagationError("non-finite derivative at stage k1")
    k2 = derivative(s + 0.5 * dt * k1)
    if not np.all(np.isfinite(k2)):
        raise PropagationError("non-finite derivative at stage k2")
    k3 = derivative(s + 0.5 * dt * k2)
    if not np.all(np.isfinite(k3)):
        raise PropagationError("non-finite derivative at stage k3")
    k4 = derivative(s + dt * k3)
    if not np.all(np.isfinite(k4)):
        raise PropagationError("non-finite derivative at stage k4")
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite state after RK4 combination")
    return out


@dataclass
class Trajectory:
    """Time-indexed states, ``states[k]`` at ``times[k]``.

    ``spec`` is a JSON-serializable record of how the trajectory was made.
    """

    times: np.ndarray
    states: np.ndarray
    units: str = UNITS_PHYSICAL
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"states {self.states.shape} do not match times {self.times.shape}"
            )
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def positions(self) -> np.ndarray:
        return self.states[:, : self.n // 2]

    def velocities(self) -> np.ndarray:
        return self.states[:, self.n // 2 :]


def propagate(
    ic,
    derivative: Derivative,
    dt: float,
    n_steps: int,
    units: str | None = None,
    spec: dict | None = None,
) -> Trajectory:
    """Integrate ``n_steps`` RK4 steps from ``ic``; returns ``n_steps + 1`` states."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if units is None:
        units = ic.units if isinstance(ic, StateVector) else UNITS_PHYSICAL
    s = np.array(ic, dtype=float)
    out = np.empty((n_steps + 1, s.size))
    out[0] = s
    for k in range(n_steps):
        try:
            s = rk4_step(derivative, s, dt)
        except PropagationError as exc:
            raise PropagationError(f"step {k}: {exc}") from exc
        out[k + 1] = s
    times = dt * np.arange(n_steps + 1)
    return Trajectory(times, out, units, dict(spec or {}))


def make_2bp_ic(spec: OrbitSpec, params: GravParams) -> StateVector:
    """Periapsis state ``[r_p, 0, 0, sqrt(mu (2/r_p - 1/a))]``."""
    if spec.perigee_radius <= params.body_radius:
        raise InvalidOrbitError(
            f"perigee radius {spec.perigee_radius} km is inside the body "
            f"(radius {params.body_radius} km)"
        )
    rp, a = spec.perigee_radius, spec.semi_major_axis
    vis_viva = 2.0 / rp - 1.0 / a
    if vis_viva <= 0:
        raise InvalidOrbitError("orbit is not bound (2/r_p - 1/a <= 0)")
    return StateVector([rp, 0.0, 0.0, math.sqrt(params.mu_total * vis_viva)], UNITS_PHYSICAL)


def l1_residual(x: float, mu_frac: float) -> float:
    a = x + mu_frac
    b = x - 1.0 + mu_frac
    return -(1.0 - mu_frac) / (a * abs(a)) - mu_frac / (b * abs(b)) + x


def l1_point(mu_frac: float, tol: float = 1e-12) -> float:
    """x-coordinate of L1 by bisection between the two primaries."""
    if not 0.0 < mu_frac < 0.5:
        raise ValueError("mu_frac must lie in (0, 0.5)")
    lo, hi = -mu_frac + 1e-9, 1.0 - mu_frac - 1e-9
    f_lo, f_hi = l1_residual(lo, mu_frac), l1_residual(hi, mu_frac)
    if f_lo * f_hi > 0:
        raise SolverError(f"L1 not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")
    # bisect to machine resolution; tol bounds the residual check below
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        f_mid = l1_residual(mid, mu_frac)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    res = l1_residual(x, mu_frac)
    if abs(res) > tol:
        raise SolverError(f"L1 residual {res:.3e} above tolerance {tol:.1e}")
    return x


def l1_linearization(mu_frac: float) -> tuple[float, float, float]:
    """In-plane oscillation data at L1: ``(x_L1, omega, kappa)``.

    On the center eigenspace of the linearized motion about L1 the offsets
    evolve as ``dx = A cos(omega t)``, ``dy = -kappa A sin(omega t)``.
    """
    x = l1_point(mu_frac)
    c2 = (1.0 - mu_frac) / abs(x + mu_frac) ** 3 + mu_frac / abs(x - 1.0 + mu_frac) ** 3
    b = 2.0 - c2
    c = (1.0 + 2.0 * c2) * (1.0 - c2)
    lam2 = 0.5 * (-b - math.sqrt(b * b - 4.0 * c))
    omega = math.sqrt(-lam2)
    kappa = (omega * omega + 1.0 + 2.0 * c2) / (2.0 * omega)
    return x, omega, kappa


def make_cr3bp_ic(
    params: Cr3bpParams,
    x_multiplier: float,
    include_y_offset: bool = True,
    oscillate: bool = True,
) -> StateVector:
    """Planar L1-oscillation initial condition.

    ``x0 = x_L1 * x_multiplier`` and ``y0 = 1 / L*`` (L* in km). The velocity
    places the offset from L1 on the linearized center eigenspace.
    """
    if not 1.0 <= x_multiplier <= 1.05:
        raise ValueError(f"x_multiplier {x_multiplier} outside [1, 1.05]")
    x_l1, omega, kappa = l1_linearization(params.mu_frac)
    x0 = x_l1 * x_multiplier
    y0 = 1.0 / params.l_star if include_y_offset else 0.0
    vx0 = vy0 = 0.0
    if oscillate:
        vx0 = omega * y0 / kappa
        vy0 = -kappa * omega * (x0 - x_l1)
    return StateVector([x0, y0, 0.0, vx0, vy0, 0.0], UNITS_CR3BP)
