"""Command-line front end.

Verbs::

    orbkoop gen-data --config CFG --out DATA_DIR
    orbkoop train    --config CFG --data DATA_DIR --out MODEL.json
    orbkoop predict  --config CFG --model MODEL.json [--scenario NAME] --out PRED.csv
    orbkoop eval     --config CFG --model MODEL.json [--scenario NAME] --out EVAL_DIR

``CFG`` is a JSON run configuration or the name of a bundled preset
(``orbkoop presets`` lists them). ``--config``, ``--seed``, ``--out`` and
``--log-level`` fall back to ``ORBKOOP_CONFIG``, ``ORBKOOP_SEED``,
``ORBKOOP_OUT`` and ``ORBKOOP_LOG_LEVEL``.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .datagen import (
    Cr3bpDataConfig,
    TwoBodyDataConfig,
    cr3bp_duration,
    generate_2bp_dataset,
    generate_cr3bp_dataset,
    read_dataset,
    to_canonical,
    two_body_trajectory,
    write_dataset,
)
from .dynamics import (
    BODIES,
    UNITS_CANONICAL,
    UNITS_CR3BP,
    Cr3bpParams,
    OrbitSpec,
    StateVector,
    Trajectory,
    body_params,
    cr3bp_derivative,
    make_cr3bp_ic,
    propagate,
)
from .errors import ConfigError, DivergenceError, FormatError, NumericalError, OrbKoopError
from .koopman import KoopmanModel, LossWeights, TrainConfig, load_model, predict, save_model, train
from .metrics import circular_invariants, jacobi_series, rollout_errors, write_metric_csv

log = logging.getLogger("orbkoop")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
ENV_PREFIX = "ORBKOOP_"


@dataclass
class TwoBodyScenario:
    name: str
    body: str = "earth"
    altitude_km: float = 500.0
    eccentricity: float = 0.0
    periods: float = 1.0
    perturbations: bool = False

    def __post_init__(self):
        if self.body not in BODIES:
            raise ConfigError(f"scenario {self.name}: unknown body {self.body!r}")
        if self.periods < 0:
            raise ConfigError(f"scenario {self.name}: periods must be nonnegative")
        if not 0.0 <= self.eccentricity < 1.0:
            raise ConfigError(f"scenario {self.name}: eccentricity outside [0, 1)")


@dataclass
class Cr3bpScenario:
    name: str
    x_multiplier: float = 1.0
    # explicit initial state; overrides x_multiplier when given
    ic: list[float] | None = None
    duration_hours: float = 90.0

    def __post_init__(self):
        if self.ic is not None and len(self.ic) != 6:
            raise ConfigError(f"scenario {self.name}: ic needs 6 components")
        if self.duration_hours < 0:
            raise ConfigError(f"scenario {self.name}: duration_hours must be nonnegative")


@dataclass
class RunConfig:
    problem: str
    data: TwoBodyDataConfig | Cr3bpDataConfig
    train: TrainConfig
    scenarios: list = field(default_factory=list)


# ---------------------------------------------------------------- parsing


def _check_type(where: str, name: str, value, default):
    if default is None or isinstance(default, (list, tuple, dict)):
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool):
            ok = float(value).is_integer()
            value = int(value) if ok else value
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}.{name}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, raw, where: str, defaults: dict | None = None):
    """Instantiate dataclass ``cls`` from a JSON object, rejecting unknown keys.

    ``defaults`` supplies values for keys the object leaves out.
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(defaults or {})
    for name, value in raw.items():
        f = fields[name]
        default = f.default if f.default is not dataclasses.MISSING else None
        if name == "loss_weights":
            base = kwargs.get("loss_weights")
            base = dataclasses.asdict(base) if isinstance(base, LossWeights) else base
            value = _build(LossWeights, value, f"{where}.loss_weights", base)
        elif isinstance(default, tuple):
            if not isinstance(value, list) or len(value) != len(default):
                raise ConfigError(f"{where}.{name}: expected a list of {len(default)} numbers")
            value = tuple(_check_type(where, name, v, 0.0) for v in value)
        else:
            value = _check_type(where, name, value, default)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_run_config(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("run configuration must be a JSON object")
    unknown = sorted(set(raw) - {"problem", "data", "train", "scenarios", "description"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    problem = raw.get("problem", "2bp")
    if problem == "2bp":
        data = _build(TwoBodyDataConfig, raw.get("data", {}), "data")
        cfg = _build(TrainConfig, raw.get("train", {}), "train")
        scen_cls = TwoBodyScenario
    elif problem == "cr3bp":
        data = _build(Cr3bpDataConfig, raw.get("data", {}), "data")
        base = dataclasses.asdict(TrainConfig.cr3bp())
        cfg = _build(TrainConfig, raw.get("train", {}), "train", base)
        scen_cls = Cr3bpScenario
    else:
        raise ConfigError(f"config.problem must be '2bp' or 'cr3bp', got {problem!r}")
    if cfg.alpha != data.alpha:
        raise ConfigError(f"train.alpha {cfg.alpha} != data.alpha {data.alpha}")
    scen_raw = raw.get("scenarios", [])
    if not isinstance(scen_raw, list):
        raise ConfigError("config.scenarios must be a list")
    scenarios = []
    for i, s in enumerate(scen_raw):
        if not isinstance(s, dict) or "name" not in s:
            raise ConfigError(f"scenarios[{i}]: every scenario needs a name")
        scenarios.append(_build(scen_cls, s, f"scenarios[{i}]"))
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique")
    return RunConfig(problem, data, cfg, scenarios)


def preset_names() -> list[str]:
    root = resources.files("orbkoop") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_run_config(ref: str | None) -> RunConfig:
    """Read a run configuration from a path or a bundled preset name."""
    if ref is None:
        return parse_run_config({})
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
        origin = str(path)
    elif ref in preset_names():
        text = (resources.files("orbkoop") / "presets" / f"{ref}.json").read_text()
        origin = f"preset {ref}"
    else:
        raise ConfigError(f"no config file or preset named {ref!r}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}:{exc.lineno}: {exc.msg}") from None
    return parse_run_config(raw)


def apply_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return RunConfig(
        cfg.problem,
        dataclasses.replace(cfg.data, seed=seed),
        dataclasses.replace(cfg.train, seed=seed),
        cfg.scenarios,
    )


# ---------------------------------------------------------------- scenarios


@dataclass
class ScenarioRun:
    reference: Trajectory
    prediction: Trajectory | None
    canonical_radius_km: float | None = None


def _steps_per_period(model: KoopmanModel) -> int:
    return int(round(2.0 * math.pi / model.dt_scaled))


def _check_problem(model: KoopmanModel, scenario) -> None:
    if isinstance(scenario, TwoBodyScenario) and model.unit_system != UNITS_CANONICAL:
        raise ConfigError(
            f"model units {model.unit_system!r} cannot run two-body scenario {scenario.name}")
    if isinstance(scenario, Cr3bpScenario) and model.unit_system != UNITS_CR3BP:
        raise ConfigError(
            f"model units {model.unit_system!r} cannot run CR3BP scenario {scenario.name}")


def scenario_reference(model: KoopmanModel, scenario, n_steps: int | None = None) -> Trajectory:
    """Nonlinear reference on the model's time grid, in the model's units."""
    _check_problem(model, scenario)
    if isinstance(scenario, TwoBodyScenario):
        params = body_params(scenario.body, scenario.perturbations)
        kind = "elliptical" if scenario.eccentricity > 0 else (
            "perturbed-circular" if scenario.perturbations else "circular")
        spec = OrbitSpec(kind, params.body_radius + scenario.altitude_km, scenario.eccentricity)
        dp = _steps_per_period(model)
        steps = int(round(scenario.periods * dp)) if n_steps is None else n_steps
        traj = two_body_trajectory(spec, params, dp, scenario.perturbations, n_steps=steps)
        return to_canonical(traj, params)
    params = Cr3bpParams.earth_moon()
    if scenario.ic is not None:
        ic = StateVector(scenario.ic, UNITS_CR3BP)
    else:
        try:
            ic = make_cr3bp_ic(params, scenario.x_multiplier)
        except ValueError as exc:
            raise ConfigError(f"scenario {scenario.name}: {exc}") from None
    if n_steps is None:
        n_steps = int(round(cr3bp_duration(scenario.duration_hours, params) / model.dt_scaled))
    return propagate(ic, cr3bp_derivative(params.mu_frac), model.dt_scaled, n_steps, UNITS_CR3BP,
                     {"kind": "cr3bp", "scenario": scenario.name})


def select_scenarios(cfg: RunConfig, name: str | None) -> list:
    if not cfg.scenarios:
        raise ConfigError("configuration defines no scenarios")
    if name is None or name == "all":
        return list(cfg.scenarios)
    for s in cfg.scenarios:
        if s.name == name:
            return [s]
    known = ", ".join(s.name for s in cfg.scenarios)
    raise ConfigError(f"unknown scenario {name!r} (have: {known})")


# ---------------------------------------------------------------- commands


def _state_columns(n: int) -> list[str]:
    return ["x", "y", "vx", "vy"] if n == 4 else ["x", "y", "z", "vx", "vy", "vz"]


def cmd_gen_data(cfg: RunConfig, out: Path) -> Path:
    if cfg.problem == "2bp":
        ds = generate_2bp_dataset(cfg.data)
    else:
        ds = generate_cr3bp_dataset(cfg.data)
    write_dataset(ds, out)
    if cfg.problem == "2bp":
        print(f"{'ic':>5} {'altitude_km':>12} {'e':>8} {'a_km':>12}")
        for t in ds.trajectories:
            s = t.spec
            print(f"{s['ic_index']:>5} {s['altitude']:>12.3f} {s['eccentricity']:>8.4f} "
                  f"{s['semi_major_axis']:>12.3f}")
    else:
        print(f"{'ic':>5} {'x_mult':>9} {'x0':>10} {'vy0':>10}")
        for t in ds.trajectories:
            s = t.spec
            print(f"{s['ic_index']:>5} {s['x_multiplier']:>9.5f} {s['ic'][0]:>10.6f} "
                  f"{s['ic'][4]:>10.6f}")
    print(f"wrote {len(ds)} trajectories of {len(ds.trajectories[0])} samples to {out}")
    return out


def loss_csv_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.stem + ".loss.csv")


def cmd_train(cfg: RunConfig, data_dir: Path, model_out: Path) -> Path:
    ds = read_dataset(data_dir)
    want_n = 4 if cfg.problem == "2bp" else 6
    if ds.n != want_n:
        raise ConfigError(f"dataset has n = {ds.n}, {cfg.problem} config expects {want_n}")
    if ds.alpha != cfg.train.alpha:
        raise ConfigError(f"dataset alpha {ds.alpha} != train.alpha {cfg.train.alpha}")
    every = max(1, cfg.train.epochs // 20)

    def progress(epoch, value):
        if epoch % every == 0 or epoch == cfg.train.epochs - 1:
            log.info("epoch %d/%d  loss %.6e", epoch + 1, cfg.train.epochs, value)

    model, history = train(ds, cfg.train, progress)
    model_out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_out)
    history.write_csv(loss_csv_path(model_out))
    print(f"model {model.K.shape[0]}x{model.K.shape[1]} K written to {model_out}")
    print(f"loss history: first {history.total[0]:.6e}  last {history.total[-1]:.6e}")
    return model_out


def run_scenario(model: KoopmanModel, scenario, n_steps: int | None = None) -> ScenarioRun:
    ref = scenario_reference(model, scenario, n_steps)
    pred = predict(model, ref.states[0], len(ref) - 1)
    du = ref.spec.get("du") if isinstance(scenario, TwoBodyScenario) else None
    return ScenarioRun(ref, pred, du)


def cmd_predict(model_path: Path, scenario, out: Path, n_steps: int | None = None) -> Path:
    model = load_model(model_path)
    run = run_scenario(model, scenario, n_steps)
    cols = _state_columns(model.n)
    header = ["t", *cols, *(c + "_ref" for c in cols)]
    data = np.hstack([run.reference.times[:, None], run.prediction.states, run.reference.states])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metric_csv(out, header, data.T)
    print(f"{scenario.name}: {len(data)} rows written to {out}")
    return out


def evaluate_scenario(model: KoopmanModel, scenario, out_dir: Path) -> list[str]:
    """Write metric CSVs for one scenario; return its summary lines."""
    run = run_scenario(model, scenario)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref = run.reference
    lines = [f"[{scenario.name}]", f"steps: {len(ref) - 1}"]
    if len(ref) < 2:
        lines.append("nothing to evaluate for a zero-length rollout")
        return lines
    err = rollout_errors(model, ref)
    cols = _state_columns(model.n)
    header = ["step", "t", *(f"local_{c}" for c in cols), *(f"global_{c}" for c in cols),
              "local_pos", "global_pos"]
    steps = np.arange(1, len(ref))
    write_metric_csv(out_dir / "errors.csv", header,
                     [steps, ref.times[1:], *err.local[:, :model.n].T,
                      *err.global_[:, :model.n].T, err.local_pos, err.global_pos])
    lines.append(f"mean radius <r>: {err.mean_radius:.10g}")
    lines.append(f"max global position error: {err.max_global_pos_percent:.6g} % of <r>")
    lines.append(f"max local position error: {err.max_local_pos_percent:.6g} % of <r>")
    if run.canonical_radius_km:
        km = run.canonical_radius_km * float(err.global_pos.max())
        lines.append(f"max global position error: {km:.6g} km")
    if isinstance(scenario, TwoBodyScenario):
        inv = circular_invariants(run.prediction)
        write_metric_csv(out_dir / "invariants.csv", ["t", "xi_r", "xi_v", "r_dot_v", "xi_lz"],
                         [ref.times, inv.xi_r, inv.xi_v, inv.r_dot_v, inv.xi_lz])
        for key, value in inv.max_abs.items():
            lines.append(f"max |{key}|: {value:.6g}")
    else:
        rep = jacobi_series(run.prediction, Cr3bpParams.earth_moon(), reference=ref)
        write_metric_csv(out_dir / "jacobi.csv", ["t", "jacobi_pred", "jacobi_ref", "rel_error"],
                         [ref.times, rep.series, rep.reference, rep.relative_error])
        lines.append(f"max relative Jacobi deviation: {100 * rep.max_relative_error:.6g} %")
    return lines


def cmd_eval(model_path: Path, scenarios: list, out_dir: Path) -> Path:
    model = load_model(model_path)
    summary = [f"model: {model_path}", f"K: {model.K.shape[0]}x{model.K.shape[1]}", ""]
    for s in scenarios:
        summary += evaluate_scenario(model, s, out_dir / s.name) + [""]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.txt").write_text("\n".join(summary))
    print("\n".join(summary))
    return out_dir


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=os.environ.get(ENV_PREFIX + "CONFIG"),
                        help="run configuration (JSON path or preset name)")
    common.add_argument("--seed", type=int, default=None,
                        help="override data and training seeds")
    common.add_argument("--out", default=os.environ.get(ENV_PREFIX + "OUT"),
                        help="output path")
    common.add_argument("--log-level", default=os.environ.get(ENV_PREFIX + "LOG_LEVEL", "WARNING"))

    parser = argparse.ArgumentParser(prog="orbkoop", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate a training dataset")
    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p = sub.add_parser("predict", parents=[common], help="roll out a model on one scenario")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--steps", type=int, default=None, help="override the scenario length")
    p = sub.add_parser("eval", parents=[common], help="write error and invariant metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", default=None, help="scenario name or 'all' (default)")
    sub.add_parser("presets", help="list bundled presets")
    return parser


def _seed_from(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(ENV_PREFIX + "SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}SEED is not an integer: {env!r}") from None


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError(f"--out (or {ENV_PREFIX}OUT) is required")
    return Path(args.out)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    level = getattr(logging, str(args.log_level).upper(), None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {args.log_level!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    cfg = apply_seed(load_run_config(args.config), _seed_from(args))
    if args.command == "gen-data":
        cmd_gen_data(cfg, _require_out(args))
    elif args.command == "train":
        if args.epochs is not None:
            if args.epochs < 1:
                raise ConfigError("--epochs must be positive")
            cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
        cmd_train(cfg, Path(args.data), _require_out(args))
    elif args.command == "predict":
        chosen = select_scenarios(cfg, args.scenario)
        if len(chosen) != 1:
            raise ConfigError("predict needs exactly one scenario; pass --scenario")
        if args.steps is not None and args.steps < 0:
            raise ConfigError("--steps must be nonnegative")
        cmd_predict(Path(args.model), chosen[0], _require_out(args), args.steps)
    elif args.command == "eval":
        cmd_eval(Path(args.model), select_scenarios(cfg, args.scenario), _require_out(args))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NumericalError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OrbKoopError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
