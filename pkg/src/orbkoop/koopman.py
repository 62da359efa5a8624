"""Deep EDMD: learned lifting, per-batch Koopman matrix, loss, training, rollout.

The lifted state is ``[x; phi(x)]``: the raw state stacked on ``N`` network
outputs, so ``P = [I_n, 0]`` recovers the state without a decoder. K is fit by
least squares on each batch and held fixed while that batch's gradient is
computed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .dynamics import UNITS_CANONICAL, UNITS_CR3BP, Trajectory
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .linalg import DEFAULT_RCOND, lstsq_K, lstsq_K_blocks
from .neuralnet import (
    AdamState,
    Gradients,
    Network,
    adam_step,
    backward,
    forward,
    init_lecun,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "orbkoop-model"
MODEL_VERSION = 1
DIVERGENCE_BOUND = 1e6
INFER_CHUNK = 20000


@dataclass
class LossWeights:
    gamma: float = 0.8
    beta: float = 1.0
    lambda1: float = 0.04
    lambda2: float = 0.01
    lambda_rv: float = 0.001

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be nonnegative")


@dataclass
class TrainConfig:
    epochs: int = 80000
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    alpha: int = 25
    hidden_layers: int = 3
    neurons_per_layer: int = 25
    lifted_size: int = 6
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    rcond: float = DEFAULT_RCOND
    # None: one batch per batch_size trajectories (at least one)
    batches_per_epoch: int | None = None

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        counts = ("epochs", "batch_size", "alpha", "neurons_per_layer")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_layers < 0 or self.lifted_size < 0:
            raise ConfigError("hidden_layers and lifted_size must be nonnegative")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise ConfigError("batches_per_epoch must be positive")
        if not 0.0 < self.rcond < 1.0:
            raise ConfigError("rcond must lie in (0, 1)")

    @classmethod
    def two_body(cls, **overrides) -> "TrainConfig":
        """Hyperparameters used for the two-body networks."""
        return cls(**overrides)

    @classmethod
    def cr3bp(cls, **overrides) -> "TrainConfig":
        """Hyperparameters used for the CR3BP network (106 x 106 K)."""
        base = dict(
            epochs=35000,
            batch_size=16,
            learning_rate=1e-6,
            weight_decay=1e-5,
            alpha=25,
            hidden_layers=13,
            neurons_per_layer=105,
            lifted_size=100,
            loss_weights=LossWeights(gamma=2.0, beta=1.0, lambda1=0.004, lambda2=0.001, lambda_rv=0.0),
        )
        base.update(overrides)
        return cls(**base)

    def layer_sizes(self, n: int) -> list[int]:
        return [n] + [self.neurons_per_layer] * self.hidden_layers + [self.lifted_size]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class KoopmanModel:
    encoder: Network
    K: np.ndarray
    n: int
    N: int
    unit_system: str
    dt_scaled: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        side = self.n + self.N
        if self.K.shape != (side, side):
            raise ShapeError(f"K is {self.K.shape}, expected {side} x {side}")
        if self.encoder.n_in != self.n or self.encoder.n_out != self.N:
            raise ShapeError(
                f"encoder maps {self.encoder.n_in} -> {self.encoder.n_out}, "
                f"model needs {self.n} -> {self.N}"
            )

    @property
    def P(self) -> np.ndarray:
        return np.hstack([np.eye(self.n), np.zeros((self.n, self.N))])

    @property
    def problem_kind(self) -> str:
        return "cr3bp" if self.unit_system == UNITS_CR3BP else "2bp"


def _encode(net: Network, x: np.ndarray) -> np.ndarray:
    if x.shape[1] <= INFER_CHUNK:
        return forward(net, x)[0]
    return np.hstack([forward(net, x[:, i : i + INFER_CHUNK])[0]
                      for i in range(0, x.shape[1], INFER_CHUNK)])


def lift(model: KoopmanModel, x) -> np.ndarray:
    """``[x; phi(x)]`` for one state ``(n,)`` or a column batch ``(n, B)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    cols = x[:, None] if single else x
    if cols.shape[0] != model.n:
        raise ShapeError(f"state has {cols.shape[0]} rows, model expects {model.n}")
    if model.N == 0:
        out = cols.copy()
    else:
        out = np.vstack([cols, _encode(model.encoder, cols)])
    return out[:, 0] if single else out


def compute_K(model: KoopmanModel, X, Y, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """EDMD matrix ``lift(Y) @ pinv(lift(X))`` for column-aligned snapshots."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ShapeError(f"X {X.shape} and Y {Y.shape} are not aligned")
    return lstsq_K(lift(model, X), lift(model, Y), rcond)


def predict(model: KoopmanModel, ic, n_steps: int) -> Trajectory:
    """Corrected linear rollout: lift, apply K once, project, re-lift."""
    x = np.array(ic, dtype=float).reshape(-1)
    if x.size != model.n:
        raise ShapeError(f"initial state has {x.size} components, model expects {model.n}")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    out = np.empty((n_steps + 1, model.n))
    out[0] = x
    kx = model.K[: model.n]
    for k in range(n_steps):
        x = kx @ lift(model, x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            raise DivergenceError(f"rollout diverged at step {k + 1}")
        out[k + 1] = x
    times = model.dt_scaled * np.arange(n_steps + 1)
    return Trajectory(times, out, model.unit_system, {"kind": "koopman-prediction"})


def r_dot_v(states: np.ndarray) -> np.ndarray:
    """``x vx + y vy`` along the last axis of planar two-body states."""
    return states[..., 0] * states[..., 2] + states[..., 1] * states[..., 3]


@dataclass
class LossResult:
    total: float
    terms: dict[str, float]
    grads: Gradients
    K: np.ndarray


def loss(
    model: KoopmanModel,
    windows,
    weights: LossWeights,
    alpha: int,
    problem_kind: str = "2bp",
    rcond: float = DEFAULT_RCOND,
    K: np.ndarray | None = None,
) -> LossResult:
    """Total loss and its gradient for a batch of trajectory windows.

    ``windows`` has shape ``(B, alpha + 1, n)``; its consecutive pairs are the
    batch's X / Y snapshots. K is refit from them (unless given) and treated
    as a constant.
    Terms: one-step reconstruction, alpha-step corrected prediction (both mean
    squared state error per predicted state), L1/L2 on weight matrices and the
    mean squared ``r . v`` of the predicted states (planar two-body states only).
    """
    W = np.asarray(windows, dtype=float)
    if W.ndim != 3 or W.shape[1] != alpha + 1 or W.shape[2] != model.n:
        raise ShapeError(f"windows {W.shape} do not match (B, {alpha + 1}, {model.n})")
    net = model.encoder
    n, N = model.n, model.N
    B = W.shape[0]
    n_pairs = B * alpha

    # every window state lifted once; index [:, b, j]
    xs = W.transpose(2, 0, 1).reshape(n, B * (alpha + 1))
    phi_all, tape_all = forward(net, xs)
    lifted = np.vstack([xs, phi_all]).reshape(n + N, B, alpha + 1)
    phi_x = lifted[:, :, :-1].reshape(n + N, n_pairs)
    phi_y = lifted[:, :, 1:].reshape(n + N, n_pairs)
    if K is None:
        K = lstsq_K(phi_x, phi_y, rcond)
    A, Bk = K[:n, :n], K[:n, n:]

    # one-step reconstruction from true states
    x_true = W.transpose(2, 0, 1)  # (n, B, alpha + 1)
    recon = K[:n] @ phi_x
    r_res = recon - x_true[:, :, 1:].reshape(n, n_pairs)
    l_recon = float(np.sum(r_res**2)) / n_pairs

    # alpha-step corrected rollout
    xh = [x_true[:, :, 0].copy()]
    tapes = []
    for _ in range(alpha):
        phi_j, tape_j = forward(net, xh[-1])
        tapes.append(tape_j)
        xh.append(A @ xh[-1] + Bk @ phi_j)
    pred = np.stack(xh[1:], axis=2)  # (n, B, alpha)
    p_res = pred - x_true[:, :, 1:]
    l_pred = float(np.sum(p_res**2)) / n_pairs

    planar_2bp = problem_kind == "2bp" and n == 4
    use_rv = planar_2bp and weights.lambda_rv > 0
    rv = r_dot_v(np.moveaxis(pred, 0, -1)) if planar_2bp else np.zeros((B, alpha))
    l_rv = float(np.sum(rv**2)) / n_pairs

    l1 = float(sum(np.abs(w).sum() for w in net.weights))
    l2 = float(sum((w * w).sum() for w in net.weights))

    terms = {"pred": l_pred, "recon": l_recon, "l1": l1, "l2": l2, "rv": l_rv}
    total = (weights.gamma * l_pred + weights.beta * l_recon + weights.lambda1 * l1
             + weights.lambda2 * l2 + weights.lambda_rv * l_rv)

    # reconstruction gradient flows only through phi at the true X states
    g_phi = np.zeros((N, B, alpha + 1))
    if N:
        g_phi[:, :, :-1] = (weights.beta * 2.0 / n_pairs * (Bk.T @ r_res)).reshape(N, B, alpha)
    grads = backward(net, tape_all, g_phi.reshape(N, B * (alpha + 1)))

    # backprop through the rollout, last step first
    direct = weights.gamma * 2.0 / n_pairs * p_res  # (n, B, alpha)
    if use_rv:
        # d(x vx + y vy) / d(x, y, vx, vy) = (vx, vy, x, y)
        drv = np.stack([pred[2], pred[3], pred[0], pred[1]])
        direct = direct + (weights.lambda_rv * 2.0 / n_pairs) * rv[None] * drv
    carry = np.zeros((n, B))
    for j in range(alpha, 0, -1):
        g = direct[:, :, j - 1] + carry
        tape = tapes[j - 1]
        if N:
            g_out = Bk.T @ g
            step_grads = backward(net, tape, g_out, need_input=j > 1)
            grads += step_grads
            carry = A.T @ g + (step_grads.inputs if j > 1 else 0.0)
        else:
            carry = A.T @ g

    for gw, w in zip(grads.weights, net.weights):
        gw += weights.lambda1 * np.sign(w) + weights.lambda2 * 2.0 * w
    return LossResult(float(total), terms, grads, K)


@dataclass
class LossHistory:
    total: list[float] = field(default_factory=list)
    terms: dict[str, list[float]] = field(default_factory=lambda: {
        k: [] for k in ("pred", "recon", "l1", "l2", "rv")})

    def append(self, total: float, terms: dict[str, float]) -> None:
        self.total.append(total)
        for k, v in terms.items():
            self.terms[k].append(v)

    def moving_average(self, window: int = 100) -> np.ndarray:
        t = np.asarray(self.total)
        w = min(window, t.size)
        return np.convolve(t, np.ones(w) / w, mode="valid")

    def write_csv(self, path) -> None:
        keys = list(self.terms)
        with open(path, "w") as fh:
            fh.write(",".join(["epoch", "total", *keys]) + "\n")
            for i, tot in enumerate(self.total):
                vals = [tot] + [self.terms[k][i] for k in keys]
                fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in vals) + "\n")


def _problem_kind(unit_system: str) -> str:
    return "cr3bp" if unit_system == UNITS_CR3BP else "2bp"


def full_data_K(model: KoopmanModel, dataset: Dataset, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """EDMD solve over every snapshot pair of every trajectory."""
    def blocks():
        chunk = []
        size = 0
        for traj in dataset.trajectories:
            chunk.append(traj.states)
            size += len(traj)
            if size >= INFER_CHUNK:
                yield _pairs(chunk)
                chunk, size = [], 0
        if chunk:
            yield _pairs(chunk)

    def _pairs(states_list):
        X = np.hstack([s[:-1].T for s in states_list])
        Y = np.hstack([s[1:].T for s in states_list])
        return lift(model, X), lift(model, Y)

    return lstsq_K_blocks(blocks(), rcond)


def train(dataset: Dataset, config: TrainConfig, progress=None) -> tuple[KoopmanModel, LossHistory]:
    """Mini-batch training; returns the model with K frozen from the full dataset.

    Each batch draws ``batch_size`` (trajectory, start) pairs uniformly with
    ``start <= length - alpha - 1``. ``progress``, when given, is called as
    ``progress(epoch, mean_total)`` after every epoch.
    """
    if config.alpha != dataset.alpha:
        raise ConfigError(f"config alpha {config.alpha} != dataset alpha {dataset.alpha}")
    data = dataset.stacked()
    n_traj, length, n = data.shape
    if n != dataset.n:
        raise ConfigError(f"dataset states have {n} components, metadata says {dataset.n}")
    alpha = config.alpha
    n_starts = length - alpha
    if n_starts < 1:
        raise ConfigError("trajectories too short for the prediction horizon")
    kind = _problem_kind(dataset.unit_system)
    weights = config.loss_weights
    if kind == "cr3bp" and weights.lambda_rv:
        log.warning("r.v loss is a two-body invariant; ignoring lambda_rv for CR3BP")
        weights = LossWeights(weights.gamma, weights.beta, weights.lambda1, weights.lambda2, 0.0)

    root = np.random.SeedSequence(config.seed)
    init_seq, batch_seq = root.spawn(2)
    net = init_lecun(config.layer_sizes(n), np.random.default_rng(init_seq))
    rng = np.random.default_rng(batch_seq)
    model = KoopmanModel(
        net,
        np.eye(n + config.lifted_size),
        n,
        config.lifted_size,
        dataset.unit_system,
        dataset.dt_scaled,
        config.to_dict(),
    )
    adam = AdamState.for_network(net, learning_rate=config.learning_rate,
                                 weight_decay=config.weight_decay)
    per_epoch = config.batches_per_epoch or max(1, math.ceil(n_traj / config.batch_size))
    offsets = np.arange(alpha + 1)
    history = LossHistory()
    last_K = None
    for epoch in range(config.epochs):
        totals = []
        term_sums = dict.fromkeys(history.terms, 0.0)
        for batch in range(per_epoch):
            tr = rng.integers(0, n_traj, config.batch_size)
            st = rng.integers(0, n_starts, config.batch_size)
            windows = data[tr[:, None], st[:, None] + offsets]
            res = loss(model, windows, weights, alpha, kind, config.rcond)
            if not math.isfinite(res.total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {batch}: {res.terms}"
                )
            adam_step(net, res.grads, adam)
            totals.append(res.total)
            for k, v in res.terms.items():
                term_sums[k] += v
            last_K = res.K
        history.append(float(np.mean(totals)), {k: v / per_epoch for k, v in term_sums.items()})
        if progress is not None:
            progress(epoch, history.total[-1])

    model.K = full_data_K(model, dataset, config.rcond)
    if last_K is not None:
        drift = np.linalg.norm(model.K - last_K) / max(np.linalg.norm(model.K), 1e-300)
        log.info("full-data K vs last-batch K: relative Frobenius difference %.3e", drift)
    return model, history


def _network_to_dict(net: Network) -> list[dict]:
    return [{"shape": list(w.shape), "weights": w.tolist(), "biases": b.tolist()}
            for w, b in zip(net.weights, net.biases)]


def save_model(model: KoopmanModel, path) -> Path:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n": model.n,
        "N": model.N,
        "unit_system": model.unit_system,
        "dt_scaled": model.dt_scaled,
        "K_shape": list(model.K.shape),
        "config": model.config,
        "encoder": _network_to_dict(model.encoder),
        "K": model.K.tolist(),
    }
    out = Path(path)
    # json writes floats with repr(), which round-trips doubles exactly
    out.write_text(json.dumps(payload, indent=1) + "\n")
    return out


def load_model(path) -> KoopmanModel:
    p = Path(path)
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: corrupt model file (line {exc.lineno}: {exc.msg})") from None
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise FormatError(f"{p}: not a model file")
    if payload.get("version") != MODEL_VERSION:
        raise FormatError(f"{p}: model version {payload.get('version')!r}, expected {MODEL_VERSION}")
    try:
        layers = payload["encoder"]
        net = Network(
            [np.array(layer["weights"], dtype=float).reshape(layer["shape"]) for layer in layers],
            [np.array(layer["biases"], dtype=float) for layer in layers],
        )
        return KoopmanModel(
            net,
            np.array(payload["K"], dtype=float).reshape(payload["K_shape"]),
            payload["n"],
            payload["N"],
            payload["unit_system"],
            payload["dt_scaled"],
            payload.get("config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{p}: corrupt model file ({exc})") from None
