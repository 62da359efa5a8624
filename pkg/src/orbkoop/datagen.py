"""Training-set generation, unit scaling, snapshot views and dataset files.

Every initial condition draws from its own generator seeded by
``SeedSequence(master_seed, spawn_key=(ic_index,))``, so any single
trajectory can be regenerated without the others.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    UNITS_CANONICAL,
    UNITS_CR3BP,
    UNITS_PHYSICAL,
    Cr3bpParams,
    GravParams,
    OrbitSpec,
    Trajectory,
    body_params,
    cr3bp_derivative,
    make_2bp_ic,
    make_cr3bp_ic,
    propagate,
    two_body_derivative,
)
from .errors import ConfigError, FormatError

DATASET_FORMAT = "orbkoop-dataset"
DATASET_VERSION = 1


def ic_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


@dataclass
class SnapshotPair:
    X: np.ndarray
    Xp: np.ndarray


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    dt_scaled: float
    alpha: int
    n: int
    unit_system: str
    master_seed: int
    dp: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise ConfigError("dataset has no trajectories")
        lengths = {len(t) for t in self.trajectories}
        if len(lengths) != 1:
            raise ConfigError(f"trajectories differ in length: {sorted(lengths)}")
        if not 1 <= self.alpha < lengths.pop():
            raise ConfigError("alpha must be >= 1 and shorter than the trajectories")

    def __len__(self):
        return len(self.trajectories)

    def stacked(self) -> np.ndarray:
        """States as an array of shape ``(n_traj, length, n)``."""
        return np.stack([t.states for t in self.trajectories])


@dataclass
class TwoBodyDataConfig:
    n_ic: int = 200
    dp: int = 1000
    alpha: int = 25
    kind: str = "circular"
    body: str = "earth"
    altitude_range: tuple[float, float] = (200.0, 5000.0)
    e_range: tuple[float, float] = (0.1, 0.5)
    perturbations: bool = False
    seed: int = 0


@dataclass
class Cr3bpDataConfig:
    n_ic: int = 500
    dp: int = 1000
    alpha: int = 25
    duration_hours: float = 90.0
    multiplier_range: tuple[float, float] = (1.0, 1.05)
    seed: int = 0


def _check_counts(n_ic: int, dp: int, alpha: int) -> None:
    if n_ic < 1:
        raise ConfigError("n_ic must be at least 1")
    if alpha < 1:
        raise ConfigError("alpha must be at least 1")
    if dp < alpha + 2:
        raise ConfigError(f"dp = {dp} leaves no snapshots after truncating alpha = {alpha}")


def _truncate(traj: Trajectory, keep: int) -> Trajectory:
    return Trajectory(traj.times[:keep], traj.states[:keep], traj.units, traj.spec)


def two_body_trajectory(
    spec: OrbitSpec,
    params: GravParams,
    dp: int,
    perturbations: bool = False,
    n_steps: int | None = None,
) -> Trajectory:
    """Physical-unit trajectory with step ``T / dp``.

    ``n_steps`` defaults to ``dp - 1`` (``dp`` samples covering one period).
    """
    ic = make_2bp_ic(spec, params)
    period = spec.period(params.mu_total)
    if n_steps is None:
        n_steps = dp - 1
    record = {
        "kind": spec.kind,
        "perigee_radius": spec.perigee_radius,
        "eccentricity": spec.eccentricity,
        "semi_major_axis": spec.semi_major_axis,
        "mu": params.mu_total,
        "body_radius": params.body_radius,
        "perturbations": perturbations,
        "ic": ic.components.tolist(),
    }
    return propagate(
        ic,
        two_body_derivative(params, perturbations),
        period / dp,
        n_steps,
        UNITS_PHYSICAL,
        record,
    )


def generate_2bp_dataset(config: TwoBodyDataConfig) -> Dataset:
    """Random periapsis-start orbits, one period each, stored in canonical units.

    The sampled altitude sets the perigee radius. Circular kinds force e = 0
    but still consume the eccentricity draw so the altitude stream is shared
    across kinds.
    """
    _check_counts(config.n_ic, config.dp, config.alpha)
    if config.kind not in ("circular", "elliptical", "perturbed-circular"):
        raise ConfigError(f"unknown 2BP kind {config.kind!r}")
    lo, hi = config.altitude_range
    e_lo, e_hi = config.e_range
    if not 0 <= lo <= hi:
        raise ConfigError("altitude_range must be nonnegative and ordered")
    if not 0 <= e_lo <= e_hi < 1:
        raise ConfigError("e_range must be ordered within [0, 1)")
    perturbed = config.perturbations or config.kind == "perturbed-circular"
    params = body_params(config.body, perturbed)
    trajs = []
    for i in range(config.n_ic):
        rng = ic_rng(config.seed, i)
        altitude = rng.uniform(lo, hi)
        ecc = e_lo + (e_hi - e_lo) * rng.random()
        if config.kind != "elliptical":
            ecc = 0.0
        spec = OrbitSpec(config.kind, params.body_radius + altitude, ecc)
        traj = two_body_trajectory(spec, params, config.dp, perturbed)
        traj.spec.update(ic_index=i, seed=config.seed, altitude=altitude)
        trajs.append(_truncate(to_canonical(traj, params), config.dp - config.alpha))
    return Dataset(
        trajs,
        dt_scaled=2.0 * math.pi / config.dp,
        alpha=config.alpha,
        n=4,
        unit_system=UNITS_CANONICAL,
        master_seed=config.seed,
        dp=config.dp,
        config={"problem": "2bp", **_jsonable(asdict(config))},
    )


def cr3bp_duration(duration_hours: float, params: Cr3bpParams) -> float:
    return duration_hours * 3600.0 / params.t_star


def generate_cr3bp_dataset(config: Cr3bpDataConfig, params: Cr3bpParams | None = None) -> Dataset:
    """Earth-Moon L1 oscillations with the L1 x-offset scaled by a random multiplier."""
    _check_counts(config.n_ic, config.dp, config.alpha)
    m_lo, m_hi = config.multiplier_range
    if not 1.0 <= m_lo <= m_hi <= 1.05:
        raise ConfigError("multiplier_range must lie within [1, 1.05]")
    params = params or Cr3bpParams.earth_moon()
    dt = cr3bp_duration(config.duration_hours, params) / config.dp
    deriv = cr3bp_derivative(params.mu_frac)
    trajs = []
    for i in range(config.n_ic):
        rng = ic_rng(config.seed, i)
        mult = rng.uniform(m_lo, m_hi)
        ic = make_cr3bp_ic(params, mult)
        record = {"kind": "cr3bp", "x_multiplier": mult, "mu_frac": params.mu_frac,
                  "ic": ic.components.tolist(), "ic_index": i, "seed": config.seed}
        traj = propagate(ic, deriv, dt, config.dp - 1, UNITS_CR3BP, record)
        trajs.append(_truncate(traj, config.dp - config.alpha))
    return Dataset(
        trajs,
        dt_scaled=dt,
        alpha=config.alpha,
        n=6,
        unit_system=UNITS_CR3BP,
        master_seed=config.seed,
        dp=config.dp,
        config={"problem": "cr3bp", **_jsonable(asdict(config))},
    )


def canonical_scales(traj: Trajectory, params: GravParams) -> tuple[float, float]:
    """Distance and time units ``(DU, TU)`` for a trajectory's own orbit.

    DU is the semi-major axis (from the generation record, else vis-viva at
    the first sample) so one period always spans ``2 pi`` time units.
    """
    a = traj.spec.get("semi_major_axis")
    if a is None:
        s = traj.states[0]
        r = math.hypot(s[0], s[1])
        v2 = s[2] ** 2 + s[3] ** 2
        inv_a = 2.0 / r - v2 / params.mu_total
        if inv_a <= 0:
            raise ValueError("trajectory is not on a bound orbit")
        a = 1.0 / inv_a
    du = float(a)
    return du, math.sqrt(du**3 / params.mu_total)


def to_canonical(traj: Trajectory, params: GravParams) -> Trajectory:
    if traj.units == UNITS_CANONICAL:
        warnings.warn("trajectory is already in canonical units", stacklevel=2)
        return traj
    if traj.units != UNITS_PHYSICAL:
        raise ValueError(f"cannot convert {traj.units} to canonical units")
    du, tu = canonical_scales(traj, params)
    scale = np.array([du, du, du / tu, du / tu])
    spec = dict(traj.spec, du=du, tu=tu)
    return Trajectory(traj.times / tu, traj.states / scale, UNITS_CANONICAL, spec)


def from_canonical(traj: Trajectory) -> Trajectory:
    if traj.units == UNITS_PHYSICAL:
        warnings.warn("trajectory is already in physical units", stacklevel=2)
        return traj
    try:
        du, tu = traj.spec["du"], traj.spec["tu"]
    except KeyError:
        raise ValueError("canonical trajectory carries no du/tu record") from None
    scale = np.array([du, du, du / tu, du / tu])
    return Trajectory(traj.times * tu, traj.states * scale, UNITS_PHYSICAL, dict(traj.spec))


def snapshots(traj: Trajectory) -> SnapshotPair:
    """Column snapshot matrices ``X = [x_0 .. x_{M-2}]`` and ``X' = [x_1 .. x_{M-1}]``."""
    if len(traj) < 2:
        raise ValueError("need at least two states for a snapshot pair")
    s = traj.states
    return SnapshotPair(s[:-1].T.copy(), s[1:].T.copy())


def csv_header(n: int) -> list[str]:
    if n == 4:
        return ["t", "x", "y", "vx", "vy"]
    if n == 6:
        return ["t", "x", "y", "z", "vx", "vy", "vz"]
    raise ValueError(f"unsupported state dimension {n}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_trajectory_csv(path: Path, times: np.ndarray, states: np.ndarray, header: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t, row in zip(times, states):
            fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")


def write_dataset(ds: Dataset, path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    header = csv_header(ds.n)
    for i, traj in enumerate(ds.trajectories):
        name = f"traj_{i:05d}.csv"
        write_trajectory_csv(out / name, traj.times, traj.states, header)
        files.append({"file": name, "units": traj.units, "spec": _jsonable(traj.spec)})
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "unit_system": ds.unit_system,
        "dt_scaled": ds.dt_scaled,
        "alpha": ds.alpha,
        "n": ds.n,
        "dp": ds.dp,
        "master_seed": ds.master_seed,
        "config": _jsonable(ds.config),
        "trajectories": files,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_trajectory_csv(path: Path, n: int) -> tuple[np.ndarray, np.ndarray]:
    header = csv_header(n)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise FormatError(f"{path}:1: header {first} != expected {header}")
        for record in reader:
            if len(record) != len(header):
                raise FormatError(
                    f"{path}:{reader.line_num}: expected {len(header)} columns, "
                    f"got {len(record)}"
                )
            try:
                rows.append([float(v) for v in record])
            except ValueError as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1:]


def read_dataset(path) -> Dataset:
    root = Path(path)
    try:
        meta = json.loads((root / "meta.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{root}: missing meta.json") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{root / 'meta.json'}:{exc.lineno}: {exc.msg}") from None
    if meta.get("format") != DATASET_FORMAT:
        raise FormatError(f"{root}: not a dataset directory (format={meta.get('format')!r})")
    if meta.get("version") != DATASET_VERSION:
        raise FormatError(f"{root}: unsupported dataset version {meta.get('version')!r}")
    try:
        trajs = []
        for entry in meta["trajectories"]:
            times, states = read_trajectory_csv(root / entry["file"], meta["n"])
            trajs.append(Trajectory(times, states, entry["units"], entry["spec"]))
        return Dataset(
            trajs,
            dt_scaled=meta["dt_scaled"],
            alpha=meta["alpha"],
            n=meta["n"],
            unit_system=meta["unit_system"],
            master_seed=meta["master_seed"],
            dp=meta["dp"],
            config=meta["config"],
        )
    except KeyError as exc:
        raise FormatError(f"{root / 'meta.json'}: missing field {exc}") from None
