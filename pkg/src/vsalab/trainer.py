"""Adam training with orthogonality and unbinding-reconstruction auxiliaries,
plus a finite-difference gradient checker."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import vsaheads as vh
from .attn import Model, cross_entropy
from .errors import (
    ConfigError,
    DegenerateColumnError,
    EvaluatorError,
    GradientCheckError,
    ParameterError,
    TrainingDivergedError,
)
from .hvcore import SeededRng
from .tasks import TaskSet

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "train_acc", "test_acc", "ce", "ortho", "recon", "total", "coherence")


@dataclass(frozen=True)
class LossSpec:
    """total = ce + ortho_weight * ortho + recon_weight * recon."""

    ortho_weight: float = 0.0
    recon_weight: float = 0.0
    recon_noise: float = 0.0
    ortho_normalize: bool = True
    recon_batch: int = 16

    def __post_init__(self):
        if self.ortho_weight < 0 or self.recon_weight < 0 or self.recon_noise < 0:
            raise ConfigError("loss weights and noise level must be non-negative")
        if self.recon_batch < 1:
            raise ConfigError("recon_batch must be positive")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int
    config: AdamConfig

    @classmethod
    def fresh(cls, params: dict, config: AdamConfig) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, 0, config)


def adam_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """In-place Adam update with bias correction."""
    c = state.config
    state.step += 1
    bc1 = 1.0 - c.beta1**state.step
    bc2 = 1.0 - c.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ParameterError(f"moment shape {m.shape} does not match parameter {name} {p.shape}")
        m *= c.beta1
        m += (1.0 - c.beta1) * g
        v *= c.beta2
        v += (1.0 - c.beta2) * (g * g)
        p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass(frozen=True)
class Schedule:
    steps: int = 2000
    batch_size: int = 64
    eval_every: int = 100
    stop_test_acc: float | None = 1.0
    stop_train_acc: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("schedule needs steps >= 0, batch_size >= 1, eval_every >= 1")


# -- orthogonality penalty ----------------------------------------------------


def _normalized_columns(w: np.ndarray):
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0.0):
        raise DegenerateColumnError("zero column cannot be normalized")
    return w / norms, norms


def ortho_penalty(w: np.ndarray, normalize: bool = True) -> float:
    """Squared Frobenius norm of (W^T W - I) over the columns of ``w``."""
    return ortho_penalty_grad(w, normalize)[0]


def ortho_penalty_grad(w: np.ndarray, normalize: bool = True) -> tuple[float, np.ndarray]:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] < 1:
        raise ParameterError("orthogonality penalty needs a matrix with at least one column")
    if normalize:
        u, norms = _normalized_columns(w)
    else:
        u = w
    e = u.T @ u - np.eye(w.shape[1])
    value = float(np.sum(e * e))
    du = 4.0 * u @ e
    if not normalize:
        return value, du
    # Project out the radial component: unit columns only rotate.
    dw = (du - u * np.sum(u * du, axis=0)) / norms
    return value, dw


def ortho_targets(model: Model) -> list[tuple[str, int | None]]:
    """Matrices under the penalty: per-head W_Q and W_K, plus trainable roles (as columns)."""
    out = []
    for i, blk in enumerate(model.params.blocks):
        for name in ("wq", "wk"):
            out += [(f"blocks.{i}.{name}", h) for h in range(blk.wq.shape[0])]
    if model.cfg.role_trainable and model.params.roles is not None:
        out.append(("roles", None))
    return out


def _target_matrix(arrays: dict, name: str, head: int | None) -> np.ndarray:
    a = arrays[name]
    return a.T if head is None else a[head]


def model_ortho(model: Model, normalize: bool = True, grads: dict | None = None, weight: float = 1.0) -> float:
    """Sum of penalties over ``ortho_targets``; adds ``weight * gradient`` into ``grads`` if given."""
    arrays = model.all_arrays()
    total = 0.0
    for name, head in ortho_targets(model):
        value, g = ortho_penalty_grad(_target_matrix(arrays, name, head), normalize)
        total += value
        if grads is not None and weight != 0.0:
            if head is None:
                grads[name] += weight * g.T
            else:
                grads[name][head] += weight * g
    return total


def mean_abs_offdiag_cosine(w: np.ndarray) -> float:
    u, _ = _normalized_columns(np.asarray(w, dtype=np.float64))
    g = u.T @ u
    n = g.shape[0]
    if n < 2:
        return 0.0
    return float((np.sum(np.abs(g)) - np.sum(np.abs(np.diag(g)))) / (n * (n - 1)))


def key_role_coherence(model: Model) -> float:
    """Mean absolute off-diagonal column cosine over every W_K head and the role matrix."""
    vals = [mean_abs_offdiag_cosine(blk.wk[h]) for blk in model.params.blocks for h in range(blk.wk.shape[0])]
    if model.params.roles is not None:
        vals.append(mean_abs_offdiag_cosine(model.params.roles.T))
    return float(np.mean(vals))


# -- reconstruction auxiliary -------------------------------------------------


def _cosine_rows(a: np.ndarray, b: np.ndarray):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.maximum(na * nb, 1e-300)
    return np.sum(a * b, axis=1) / denom, na, nb


def reconstruction_loss(
    roles: np.ndarray,
    op: str,
    sigma: float,
    rng: SeededRng,
    batch: int = 16,
    readout=None,
    with_grad: bool = False,
):
    """Mean (1 - cos(readout, filler)) over synthetic noisy bound vectors.

    Each sample binds a random role row with a fresh random filler and adds
    Gaussian noise of scale ``sigma`` per coordinate, relative to the bound
    vector's RMS. The default readout is the model's own unbinding with the
    same role (differentiable in ``roles``); a custom ``readout(z, role_rows)``
    may be supplied for evaluation only.
    """
    roles = np.asarray(roles, dtype=np.float64)
    if roles.ndim != 2:
        raise EvaluatorError("roles must be an (n_roles, D) matrix")
    n_roles, dim = roles.shape
    idx = rng.integers(0, n_roles, batch)
    if op == "MAP":
        fillers = np.where(rng.bits(batch * dim).reshape(batch, dim) == 1, 1.0, -1.0)
    elif op == "HRR":
        fillers = rng.normal(batch * dim, 1.0 / math.sqrt(dim)).reshape(batch, dim)
    else:
        raise ConfigError(f"unknown binding op {op!r}")
    noise = rng.normal(batch * dim).reshape(batch, dim)
    r = roles[idx]
    bound = vh._bind_arrays(op, r, fillers)
    rms = np.sqrt(np.mean(bound * bound, axis=1, keepdims=True))
    z = bound + sigma * rms * noise
    if readout is not None:
        read = np.asarray(readout(z, r), dtype=np.float64)
        if read.shape != fillers.shape or not np.all(np.isfinite(read)):
            raise EvaluatorError(f"readout must return finite rows of shape {fillers.shape}")
        cos, _, _ = _cosine_rows(read, fillers)
        return float(np.mean(1.0 - cos))
    read = vh._unbind_arrays(op, z, r)
    cos, na, nb = _cosine_rows(read, fillers)
    loss = float(np.mean(1.0 - cos))
    if not with_grad:
        return loss
    # d(1 - cos)/d read, averaged over the batch
    dread = -(fillers / (na * nb)[:, None] - cos[:, None] * read / (na * na)[:, None]) / batch
    dz, dr_cue = vh._unbind_backward(op, z, r, dread)
    # z depends on r through the bound term and through the RMS-scaled noise.
    dr_bound, _ = vh._bind_backward(op, r, fillers, dz)
    drms = np.sum(dz * sigma * noise, axis=1, keepdims=True)
    dbound_rms = drms * bound / (dim * np.maximum(rms, 1e-300))
    dr_rms, _ = vh._bind_backward(op, r, fillers, dbound_rms)
    dr = dr_cue + dr_bound + dr_rms
    droles = np.zeros_like(roles)
    np.add.at(droles, idx, dr)
    return loss, droles


# -- total objective ----------------------------------------------------------


@dataclass
class LossBreakdown:
    ce: float
    ortho: float
    recon: float
    total: float


def total_loss_and_grads(model: Model, tokens, targets, spec: LossSpec, rng: SeededRng | None = None):
    """Returns (LossBreakdown, grads, logits). ``rng`` drives the reconstruction batch."""
    ce, grads, logits = model.loss_and_grads(tokens, targets)
    ortho = 0.0
    if spec.ortho_weight > 0:
        ortho = model_ortho(model, spec.ortho_normalize, grads, spec.ortho_weight)
    recon = 0.0
    if spec.recon_weight > 0:
        if model.params.roles is None:
            raise ConfigError("reconstruction loss needs a model with a role codebook")
        if rng is None:
            raise ConfigError("reconstruction loss needs an rng")
        recon, droles = reconstruction_loss(model.params.roles, model.cfg.binding_op, spec.recon_noise, rng, spec.recon_batch, with_grad=True)
        if "roles" in grads:
            grads["roles"] += spec.recon_weight * droles
    total = ce + spec.ortho_weight * ortho + spec.recon_weight * recon
    return LossBreakdown(float(ce), ortho, recon, float(total)), grads, logits


def total_loss(model: Model, tokens, targets, spec: LossSpec, rng: SeededRng | None = None) -> float:
    """The scalar objective of ``total_loss_and_grads`` without the backward pass."""
    logits, _ = model.forward(tokens, keep_tape=False)
    ce, _ = cross_entropy(logits, np.asarray(targets))
    total = float(ce)
    if spec.ortho_weight > 0:
        total += spec.ortho_weight * model_ortho(model, spec.ortho_normalize)
    if spec.recon_weight > 0:
        if model.params.roles is None:
            raise ConfigError("reconstruction loss needs a model with a role codebook")
        if rng is None:
            raise ConfigError("reconstruction loss needs an rng")
        total += spec.recon_weight * reconstruction_loss(model.params.roles, model.cfg.binding_op, spec.recon_noise, rng, spec.recon_batch)
    return total


# -- training loop ------------------------------------------------------------


def accuracy(model: Model, task_set: TaskSet, max_len: int | None = None) -> float:
    if len(task_set) == 0:
        return float("nan")
    tokens, targets = task_set.to_arrays(max_len)
    return float(np.mean(model.predict(tokens) == targets))


@dataclass
class TrainResult:
    model: Model
    curves: list = field(default_factory=list)  # dict rows with CURVE_COLUMNS
    step_log: list = field(default_factory=list)  # (step, LossBreakdown) per optimizer step
    steps_run: int = 0
    stop_reason: str = "max_steps"


def _check_vocab(model: Model, task_set: TaskSet) -> None:
    if len(task_set.vocab) != model.cfg.vocab_size or len(task_set.answer_symbols) != model.cfg.n_classes:
        raise ConfigError(
            f"task vocabulary ({len(task_set.vocab)} tokens, {len(task_set.answer_symbols)} answers) "
            f"does not match the model ({model.cfg.vocab_size}, {model.cfg.n_classes})"
        )


def train(
    model: Model,
    train_set: TaskSet,
    test_set: TaskSet | None,
    loss: LossSpec = LossSpec(),
    adam: AdamConfig = AdamConfig(),
    schedule: Schedule = Schedule(),
    rng: SeededRng | None = None,
    on_eval=None,
) -> TrainResult:
    """Mini-batch Adam. Evaluates at step 0 and every ``eval_every`` steps.

    Batches walk seeded per-epoch permutations of the training set, so the
    whole run is a pure function of the model init, data and ``rng``.
    """
    _check_vocab(model, train_set)
    if test_set is not None:
        _check_vocab(model, test_set)
    rng = rng or SeededRng(schedule.seed, 0x7A)
    batch_rng = rng.spawn(1)
    aux_rng = rng.spawn(2)
    tokens, targets = train_set.to_arrays(model.cfg.max_len)
    test_arrays = test_set.to_arrays(model.cfg.max_len) if test_set is not None and len(test_set) else None
    n = tokens.shape[0]
    params = model.named_params()
    state = OptimizerState.fresh(params, adam)
    result = TrainResult(model)

    def evaluate(step: int, bd: LossBreakdown | None):
        train_acc = float(np.mean(model.predict(tokens) == targets))
        test_acc = float(np.mean(model.predict(test_arrays[0]) == test_arrays[1])) if test_arrays else float("nan")
        if bd is None:
            ce, _ = cross_entropy(model.forward(tokens[: schedule.batch_size], keep_tape=False)[0], targets[: schedule.batch_size])
            ortho = model_ortho(model, loss.ortho_normalize) if loss.ortho_weight > 0 else 0.0
            recon = 0.0
            if loss.recon_weight > 0:
                recon = reconstruction_loss(model.params.roles, model.cfg.binding_op, loss.recon_noise, aux_rng.spawn(0), loss.recon_batch)
            bd = LossBreakdown(float(ce), ortho, recon, float(ce) + loss.ortho_weight * ortho + loss.recon_weight * recon)
        row = {
            "step": step,
            "train_acc": train_acc,
            "test_acc": test_acc,
            "ce": bd.ce,
            "ortho": bd.ortho,
            "recon": bd.recon,
            "total": bd.total,
            "coherence": key_role_coherence(model),
        }
        result.curves.append(row)
        if on_eval is not None:
            on_eval(row)
        log.info("step %d train_acc %.4f test_acc %.4f total %.5f", step, train_acc, test_acc, bd.total)
        return row

    def should_stop(row) -> str | None:
        if schedule.stop_test_acc is not None and test_arrays and row["test_acc"] >= schedule.stop_test_acc:
            return "test_acc"
        if schedule.stop_train_acc is not None and row["train_acc"] >= schedule.stop_train_acc:
            return "train_acc"
        return None

    reason = should_stop(evaluate(0, None))
    order = np.zeros(0, dtype=np.int64)
    cursor, epoch = 0, 0
    step = 0
    last_good = copy.deepcopy(model.params)
    while reason is None and step < schedule.steps:
        if cursor + schedule.batch_size > order.size:
            order = batch_rng.spawn(epoch).permutation(n)
            cursor, epoch = 0, epoch + 1
        idx = order[cursor : cursor + schedule.batch_size]
        cursor += schedule.batch_size
        bd, grads, _ = total_loss_and_grads(model, tokens[idx], targets[idx], loss, aux_rng.spawn(step + 1))
        finite = math.isfinite(bd.total) and all(np.all(np.isfinite(g)) for g in grads.values())
        if not finite:
            good = Model(model.cfg, last_good)
            raise TrainingDivergedError(f"non-finite loss or gradient at step {step + 1}", step + 1, good)
        last_good = copy.deepcopy(model.params)
        adam_step(params, grads, state)
        model.touch()
        step += 1
        result.step_log.append((step, bd))
        if step % schedule.eval_every == 0 or step == schedule.steps:
            reason = should_stop(evaluate(step, bd))
    result.steps_run = step
    result.stop_reason = reason or "max_steps"
    return result


# -- gradient check -----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict  # name -> max relative error over sampled coordinates
    n_coords: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _sample_coords(params: dict, n_coords: int, rng: SeededRng) -> list[tuple[str, int]]:
    names = list(params)
    if n_coords < len(names):
        raise ConfigError(f"need at least {len(names)} coordinates to cover every parameter group")
    total = sum(p.size for p in params.values())
    coords = []
    for name in names:
        size = params[name].size
        k = min(size, max(1, int(round(n_coords * size / total))))
        coords += [(name, int(j)) for j in rng.spawn(len(coords)).choice(size, k)]
    return coords


def grad_check(
    model: Model,
    tokens,
    targets,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    n_coords: int = 256,
    rng: SeededRng | None = None,
    loss: LossSpec = LossSpec(),
    abs_floor: float = 1e-8,
    raise_on_fail: bool = True,
) -> GradCheckReport:
    """Central differences on a random coordinate sample covering every trainable group.

    Relative error is |a - n| / max(|a| + |n|, abs_floor).
    """
    rng = rng or SeededRng(0, 0x6C)
    aux = rng.spawn(99)
    tokens = np.atleast_2d(tokens)
    targets = np.atleast_1d(targets)

    def objective() -> float:
        model.touch()
        return total_loss(model, tokens, targets, loss, aux.copy())

    model.touch()
    _, grads, _ = total_loss_and_grads(model, tokens, targets, loss, aux.copy())
    params = model.named_params()
    coords = _sample_coords(params, n_coords, rng)
    per_param: dict[str, float] = {}
    for name, j in coords:
        flat = params[name].reshape(-1)
        old = flat[j]
        flat[j] = old + step
        plus = objective()
        flat[j] = old - step
        minus = objective()
        flat[j] = old
        numeric = (plus - minus) / (2.0 * step)
        analytic = grads[name].reshape(-1)[j]
        rel = abs(numeric - analytic) / max(abs(numeric) + abs(analytic), abs_floor)
        per_param[name] = max(per_param.get(name, 0.0), rel)
    model.touch()
    report = GradCheckReport(max(per_param.values()), per_param, len(coords), tolerance)
    if raise_on_fail and not report.passed:
        bad = sorted(k for k, v in per_param.items() if v >= tolerance)
        raise GradientCheckError(f"gradient check failed: max relative error {report.max_rel_error:.3g} >= {tolerance:g}", bad)
    return report
