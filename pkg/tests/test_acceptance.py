"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Training-based criteria share module-scoped models. The whole module takes
several minutes on one CPU; every model is trained at desk scale.
"""

import hashlib
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from orbkoop.cli import main as cli_main
from orbkoop.datagen import (
    Cr3bpDataConfig,
    TwoBodyDataConfig,
    cr3bp_duration,
    generate_2bp_dataset,
    generate_cr3bp_dataset,
    to_canonical,
    two_body_trajectory,
)
from orbkoop.dynamics import (
    MU_EARTH,
    R_EARTH,
    UNITS_CANONICAL,
    UNITS_CR3BP,
    Cr3bpParams,
    OrbitSpec,
    Trajectory,
    body_params,
    cr3bp_derivative,
    make_2bp_ic,
    propagate,
    two_body_derivative,
)
from orbkoop.koopman import LossWeights, TrainConfig, predict, train
from orbkoop.metrics import circular_invariants, jacobi_series, rollout_errors
from orbkoop.neuralnet import backward, forward, init_lecun

pytestmark = pytest.mark.slow

DESK_EPOCHS = 5000
DESK_ICS = 50
HELD_OUT_ALTITUDES = (300.0, 2000.0, 5000.0, 30000.0)


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def canonical_orbit(body, altitude, model, periods=1.0, e=0.0, perturbed=False):
    params = body_params(body, perturbed)
    kind = "elliptical" if e > 0 else ("perturbed-circular" if perturbed else "circular")
    spec = OrbitSpec(kind, params.body_radius + altitude, e)
    dp = int(round(2 * math.pi / model.dt_scaled))
    traj = two_body_trajectory(spec, params, dp, perturbed, n_steps=int(round(periods * dp)))
    return to_canonical(traj, params)


def max_position_error_percent(model, ref):
    """Max global position error in percent of the orbit-averaged radius."""
    err = rollout_errors(model, ref)
    return err.max_global_pos_percent, err.prediction


# ---------------------------------------------------------------- models


@pytest.fixture(scope="module")
def circular_model():
    ds = generate_2bp_dataset(TwoBodyDataConfig(n_ic=DESK_ICS, kind="circular", seed=1))
    cfg = TrainConfig.two_body(epochs=DESK_EPOCHS, seed=0)
    t0 = time.perf_counter()
    model, history = train(ds, cfg)
    return model, history, time.perf_counter() - t0


@pytest.fixture(scope="module")
def perturbed_model():
    ds = generate_2bp_dataset(TwoBodyDataConfig(
        n_ic=DESK_ICS, kind="perturbed-circular", perturbations=True, seed=1))
    cfg = TrainConfig.two_body(epochs=DESK_EPOCHS, neurons_per_layer=35, seed=0)
    return train(ds, cfg)[0]


@pytest.fixture(scope="module")
def eccentric_model():
    ds = generate_2bp_dataset(TwoBodyDataConfig(n_ic=DESK_ICS, kind="elliptical", seed=1))
    cfg = TrainConfig.two_body(
        epochs=DESK_EPOCHS, learning_rate=1e-3, seed=0,
        loss_weights=LossWeights(gamma=0.8, beta=1.0, lambda1=0.0, lambda2=0.0, lambda_rv=0.0))
    return train(ds, cfg)[0]


# ---------------------------------------------------------------- criteria


def test_criterion_1_propagator_conservation():
    params = body_params("earth")
    spec = OrbitSpec("circular", R_EARTH + 500.0)
    ic = make_2bp_ic(spec, params)
    period = spec.period(params.mu_total)
    t0 = time.perf_counter()
    traj = propagate(ic, two_body_derivative(params), period / 1000, 1000)
    elapsed = time.perf_counter() - t0
    x, y, vx, vy = traj.states.T
    r = np.hypot(x, y)
    energy = 0.5 * (vx**2 + vy**2) - MU_EARTH / r
    lz = x * vy - y * vx
    drifts = {
        "energy": np.max(np.abs(energy / energy[0] - 1)),
        "L_z": np.max(np.abs(lz / lz[0] - 1)),
        "radius": np.max(np.abs(r / r[0] - 1)),
    }
    ok = all(v < 1e-7 for v in drifts.values()) and elapsed < 1.0
    report("1", ok, " ".join(f"{k}={v:.2e}" for k, v in drifts.items()) + f" time={elapsed:.3f}s")
    assert ok


def test_criterion_2_cr3bp_conservation():
    params = Cr3bpParams.earth_moon()
    ic = np.array([0.8673, 0.0, 0.0, 0.0, -0.2546, 0.0])
    dt = cr3bp_duration(90.0, params) / 1000
    t0 = time.perf_counter()
    traj = propagate(ic, cr3bp_derivative(params.mu_frac), dt, 1000, UNITS_CR3BP)
    elapsed = time.perf_counter() - t0
    drift = jacobi_series(traj, params).drift
    ok = drift < 1e-6 and elapsed < 1.0
    report("2", ok, f"jacobi drift={drift:.2e} time={elapsed:.3f}s")
    assert ok


def test_criterion_3_edmd_oracle():
    A = np.array([[0.97, 0.21], [-0.18, 0.93]])
    rng = np.random.default_rng(0)
    trajs = []
    for _ in range(5):
        x = rng.normal(size=2)
        states = [x]
        for _ in range(59):
            x = A @ x
            states.append(x)
        trajs.append(Trajectory(0.1 * np.arange(60), np.array(states), UNITS_CANONICAL, {}))
    from orbkoop.datagen import Dataset

    ds = Dataset(trajs, 0.1, 3, 2, UNITS_CANONICAL, 0, 63)
    cfg = TrainConfig(epochs=2, batch_size=8, alpha=3, hidden_layers=1, neurons_per_layer=2,
                      lifted_size=0, loss_weights=LossWeights(lambda1=0, lambda2=0, lambda_rv=0))
    model = train(ds, cfg)[0]
    err = float(np.max(np.abs(model.K - A)))
    ok = err < 1e-8
    report("3", ok, f"max |K - A| = {err:.2e}")
    assert ok


def _gradient_check(n_hidden: int, rng) -> tuple[float, int]:
    sizes = [4] + [9] * n_hidden + [3]
    net = init_lecun(sizes, rng)
    x = rng.normal(size=(4, 7))
    target = rng.normal(size=(3, 7))

    def value_and_signs():
        out, tape = forward(net, x)
        signs = np.concatenate([(z > 0).ravel() for z in tape.pre[:-1]] or [np.zeros(0, bool)])
        return 0.5 * float(np.sum((out - target) ** 2)), signs

    out, tape = forward(net, x)
    grads = backward(net, tape, out - target)
    worst, checked = 0.0, 0
    for params, g in [*zip(net.weights, grads.weights), *zip(net.biases, grads.biases)]:
        flat, gflat = params.reshape(-1), g.reshape(-1)
        for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            old = flat[idx]
            h = 1e-6 * max(1.0, abs(old))
            flat[idx] = old + h
            up, s_up = value_and_signs()
            flat[idx] = old - h
            dn, s_dn = value_and_signs()
            flat[idx] = old
            if not np.array_equal(s_up, s_dn):
                continue  # probe straddles the SELU kink at 0
            fd = (up - dn) / (2 * h)
            checked += 1
            worst = max(worst, abs(fd - gflat[idx]) / max(abs(fd), abs(gflat[idx]), 1e-8))
    return worst, checked


def test_criterion_4_gradient_fidelity():
    rng = np.random.default_rng(42)
    results = {n: _gradient_check(n, rng) for n in (1, 3, 13)}
    ok = all(err < 1e-5 and checked >= 2 * (n + 1) for n, (err, checked) in results.items())
    report("4", ok, " ".join(f"{n}-hidden={err:.2e} ({checked} probes)"
                             for n, (err, checked) in results.items()))
    assert ok


def test_criterion_5_desk_scale_2bp(circular_model):
    model, _, elapsed = circular_model
    worst = {"err%": 0.0, "xi_r": 0.0, "xi_v": 0.0, "xi_lz": 0.0, "r_dot_v": 0.0}
    for alt in HELD_OUT_ALTITUDES:
        ref = canonical_orbit("earth", alt, model)
        pct, pred = max_position_error_percent(model, ref)
        inv = circular_invariants(pred).max_abs
        worst["err%"] = max(worst["err%"], pct)
        for k in ("xi_r", "xi_v", "xi_lz", "r_dot_v"):
            worst[k] = max(worst[k], inv[k])
    ok = (worst["err%"] <= 1.0 and max(worst["xi_r"], worst["xi_v"], worst["xi_lz"]) <= 1e-2
          and worst["r_dot_v"] <= 1e-2 and elapsed < 1800)
    report("5", ok, " ".join(f"{k}={v:.3g}" for k, v in worst.items()) + f" train={elapsed:.0f}s")
    assert ok


def test_criterion_6_ten_period_local_error(circular_model):
    model = circular_model[0]
    ratios, growth = [], []
    for alt in HELD_OUT_ALTITUDES:
        ref = canonical_orbit("earth", alt, model, periods=10.0)
        err = rollout_errors(model, ref)
        per = len(err.local_pos) // 10
        first, last = err.local_pos[: 5 * per].max(), err.local_pos[5 * per:].max()
        ratios.append(last / first)
        growth.append(err.global_pos[5 * per:].max() / err.global_pos[: per].max())
    ok = max(ratios) <= 2.0
    report("6", ok, f"max local(6-10)/local(1-5)={max(ratios):.3f} "
                    f"global(6-10)/global(1)={min(growth):.3g}..{max(growth):.3g}")
    assert ok


def test_criterion_7_cross_body(circular_model):
    model = circular_model[0]
    errs = {}
    for body in ("earth", "moon", "jupiter"):
        errs[body] = max(max_position_error_percent(model, canonical_orbit(body, a, model))[0]
                         for a in HELD_OUT_ALTITUDES)
    ok = errs["moon"] <= 2 * errs["earth"] and errs["jupiter"] <= 2 * errs["earth"]
    report("7", ok, " ".join(f"{b}={e:.3g}%" for b, e in errs.items()))
    assert ok


def test_criterion_8_perturbed(perturbed_model):
    errs = {alt: max_position_error_percent(
        perturbed_model, canonical_orbit("earth", alt, perturbed_model, perturbed=True))[0]
        for alt in (300.0, 2000.0, 5000.0)}
    ok = max(errs.values()) <= 3.0
    report("8a", ok, "perturbed " + " ".join(f"{int(a)}km={e:.3g}%" for a, e in errs.items()))
    assert ok


def test_criterion_8_eccentric(eccentric_model):
    errs = {}
    for e in (0.1, 0.2, 0.5):
        ref = canonical_orbit("earth", 300.0, eccentric_model, e=e)
        try:
            errs[e] = max_position_error_percent(eccentric_model, ref)[0]
        except ArithmeticError:
            errs[e] = math.inf
    ok = max(errs.values()) <= 3.0
    report("8b", ok, "eccentric " + " ".join(f"e={e}:{v:.3g}%" for e, v in errs.items()))
    assert ok


def test_criterion_9a_reduced_cr3bp():
    params = Cr3bpParams.earth_moon()
    ds = generate_cr3bp_dataset(Cr3bpDataConfig(n_ic=DESK_ICS, seed=1))
    cfg = TrainConfig.cr3bp(epochs=2000, lifted_size=20, seed=0)
    model, history = train(ds, cfg)
    ma = history.moving_average(100)
    monotone = bool(np.all(np.diff(ma) < 0))
    ic = np.array([0.8673, 0.0, 0.0, 0.0, -0.2546, 0.0])
    n = int(round(cr3bp_duration(10.0, params) / model.dt_scaled))
    ref = propagate(ic, cr3bp_derivative(params.mu_frac), model.dt_scaled, n, UNITS_CR3BP)
    pred = predict(model, ic, n)
    jac = jacobi_series(pred, params, reference=ref).max_relative_error
    ok = monotone and jac <= 0.25
    report("9a", ok, f"moving-average monotone={monotone} jacobi rel err={100 * jac:.3g}% "
                     f"over {n} steps")
    assert ok


def test_criterion_9b_table2_smoke():
    ds = generate_cr3bp_dataset(Cr3bpDataConfig())
    model, history = train(ds, TrainConfig.cr3bp(epochs=10))
    ok = model.K.shape == (106, 106) and len(history.total) == 10 and all(
        math.isfinite(v) for v in history.total)
    report("9b", ok, f"K {model.K.shape} epochs={len(history.total)} "
                     f"loss {history.total[0]:.4g} -> {history.total[-1]:.4g}")
    assert ok


def _digest(path):
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "problem": "2bp",
        "data": {"n_ic": 5, "kind": "elliptical", "seed": 3},
        "train": {"epochs": 30, "seed": 3},
    }))
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        assert cli_main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
        assert cli_main(["train", "--config", str(cfg), "--data", str(root / "data"),
                         "--out", str(root / "model" / "model.json")]) == 0
        digests.append((_digest(root / "data"), _digest(root / "model")))
    ok = digests[0] == digests[1]
    report("10", ok, f"data {digests[0][0][:12]} model {digests[0][1][:12]}")
    assert ok
