"""VSA-likeness metrics: role-filler recoverability, interference curves,
operator alignment, and failure diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .algebra import bind, cconv, superpose, unbind
from .attn import Model, ModelConfig, block_forward
from .codec import Codebook, _bipolar_rows
from .errors import EvaluatorError, IllPosedFitError, ParameterError, VocabularyError
from .hvcore import Hypervector, SeededRng, VsaModel, derive_seed, random_hv
from .tasks import TaskInstance, TaskSet
from .vsaheads import HdMemory, hd_read, hd_write

# -- recoverability -----------------------------------------------------------


class RecoverabilityTarget(Protocol):
    def inject(self, bindings: Sequence[tuple[Hypervector, Hypervector]]): ...

    def readout(self, state, role_cue: Hypervector): ...


class HdMemoryTarget:
    """The exact algebra: writes into an HdMemory and unbinds with the cue."""

    def __init__(self, model: VsaModel, dim: int):
        self.model, self.dim = model, dim

    def inject(self, bindings):
        return hd_write(HdMemory.empty(self.model, self.dim), list(bindings))

    def readout(self, state: HdMemory, role_cue: Hypervector):
        return hd_read(state, role_cue)[0]


class ModelLayerTarget:
    """One transformer block as an evaluator.

    Each binding becomes a residual row ``role + filler``; the cue is
    appended as the final row and the readout is the block's write
    ``x' - x`` at that row. Vectors must be MAP with dimension d_model.
    """

    def __init__(self, model: Model, layer: int = 0):
        if not 0 <= layer < model.cfg.n_layers:
            raise EvaluatorError(f"layer {layer} out of range")
        self.model, self.layer = model, layer

    def inject(self, bindings):
        rows = [r.data + f.data for r, f in bindings]
        if any(row.shape[0] != self.model.cfg.d_model for row in rows):
            raise EvaluatorError(f"vectors must have dimension d_model={self.model.cfg.d_model}")
        return np.stack(rows)

    def readout(self, state, role_cue: Hypervector):
        x = np.vstack([state, role_cue.data[None]])[None]
        out, _ = block_forward(x, self.model.params.blocks[self.layer], self.model)
        return Hypervector(role_cue.model, out[0, -1] - x[0, -1])


class UntrainedModelTarget:
    """Null evaluator: every injection gets a freshly initialized model.

    One fixed random block carries its own bias toward some fillers, so its
    readouts are correlated and scatter wider than a binomial. Drawing a new
    initialization per trial makes the trials independent draws of chance.
    """

    def __init__(self, cfg: ModelConfig, layer: int = 0, seed: int = 0):
        if not 0 <= layer < cfg.n_layers:
            raise EvaluatorError(f"layer {layer} out of range")
        self.cfg, self.layer, self.seed = cfg, layer, seed
        self._draws = 0

    def inject(self, bindings):
        model = Model(replace(self.cfg, seed=derive_seed(self.seed, self._draws)))
        self._draws += 1
        target = ModelLayerTarget(model, self.layer)
        return target, target.inject(bindings)

    def readout(self, state, role_cue: Hypervector):
        target, rows = state
        return target.readout(rows, role_cue)


@dataclass
class RecoverabilityReport:
    per_role_accuracy: dict
    accuracy: float
    mean_margin: float
    probe: str
    n_readouts: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_target(target) -> None:
    for name in ("inject", "readout"):
        if not callable(getattr(target, name, None)):
            raise EvaluatorError(f"target lacks a callable {name}()")


def _cosine_matrix(rows: np.ndarray, book_rows: np.ndarray) -> np.ndarray:
    rn = np.linalg.norm(rows, axis=1, keepdims=True)
    bn = np.linalg.norm(book_rows, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (rows @ book_rows.T) / (rn * bn[None, :])
    return np.nan_to_num(sims, nan=0.0)


def _scores(sims: np.ndarray, truth: np.ndarray):
    """Accuracy flags and top1 - top2 margins from a similarity matrix; ties go to the lowest index."""
    pred = np.argmax(sims, axis=1)
    part = np.sort(sims, axis=1)
    margin = part[:, -1] - part[:, -2] if sims.shape[1] > 1 else part[:, -1]
    return pred == truth, margin


def role_filler_recoverability(
    target,
    roles: Codebook,
    fillers: Codebook,
    trials: int = 200,
    rng: SeededRng | None = None,
    n_bindings: int = 1,
    probe: str = "similarity",
) -> RecoverabilityReport:
    """Inject ``n_bindings`` random (role, filler) pairs per trial, cue every role,
    and clean the readout up against the filler book.

    ``probe="linear"`` fits a least-squares map from readouts to filler
    vectors on the even trials and scores the odd trials with it.
    """
    _check_target(target)
    if probe not in ("similarity", "linear"):
        raise EvaluatorError(f"unknown probe {probe!r}")
    if n_bindings < 1 or n_bindings > len(roles):
        raise ParameterError(f"n_bindings must lie in [1, {len(roles)}]")
    rng = rng or SeededRng(0)
    reads, truth, cued = [], [], []
    for t in range(trials):
        trng = rng.spawn(t)
        role_idx = trng.choice(len(roles), n_bindings)
        filler_idx = trng.integers(0, len(fillers), n_bindings)
        pairs = [(roles.vector(int(r)), fillers.vector(int(f))) for r, f in zip(role_idx, filler_idx)]
        state = target.inject(pairs)
        for (r, _), f_i, r_i in zip(pairs, filler_idx, role_idx):
            out = target.readout(state, r)
            vec = out.data if isinstance(out, Hypervector) else np.asarray(out, dtype=np.float64)
            if vec.shape != (fillers.dim,) or not np.all(np.isfinite(vec)):
                raise EvaluatorError(f"readout must be a finite vector of dimension {fillers.dim}")
            if isinstance(out, Hypervector):
                vec = _bipolar_rows(out.model, vec[None])[0] if out.model is VsaModel.BSC else vec
            reads.append(vec)
            truth.append(int(f_i))
            cued.append(int(r_i))
    reads_a = np.array(reads)
    truth_a = np.array(truth)
    cued_a = np.array(cued)
    book_rows = _bipolar_rows(fillers.model, np.asarray(fillers.matrix))
    if probe == "linear":
        per_trial = np.repeat(np.arange(trials), n_bindings)
        fit = per_trial % 2 == 0
        if not np.any(~fit):
            raise EvaluatorError("linear probe needs at least two trials")
        w, *_ = np.linalg.lstsq(reads_a[fit], book_rows[truth_a[fit]], rcond=None)
        reads_a, truth_a, cued_a = reads_a[~fit] @ w, truth_a[~fit], cued_a[~fit]
    ok, margin = _scores(_cosine_matrix(reads_a, book_rows), truth_a)
    per_role = {}
    for i, sym in enumerate(roles.symbols):
        sel = cued_a == i
        if np.any(sel):
            per_role[sym] = float(np.mean(ok[sel]))
    return RecoverabilityReport(per_role, float(np.mean(ok)), float(np.mean(margin)), probe, int(ok.size))


def binomial_band(p: float, n: int, k_sigma: float = 3.0) -> tuple[float, float]:
    s = math.sqrt(p * (1.0 - p) / n)
    return p - k_sigma * s, p + k_sigma * s


# -- interference curves ------------------------------------------------------


def coherent_roles(model: VsaModel, dim: int, k: int, coherence: float, rng: SeededRng) -> np.ndarray:
    """``k`` role rows whose expected pairwise similarity is ``coherence``.

    HRR rows are ``sqrt(1-c) * fresh + sqrt(c) * shared``, renormalized.
    Bipolar and binary rows take each coordinate from the shared vector with
    probability ``sqrt(c)`` and from a fresh vector otherwise.
    """
    if not 0.0 <= coherence < 1.0:
        raise ParameterError(f"coherence must lie in [0, 1), got {coherence}")
    shared = random_hv(model, dim, rng.spawn(0)).data
    rows = np.empty((k, dim))
    for i in range(k):
        sub = rng.spawn(i + 1)
        fresh = random_hv(model, dim, sub).data
        if model is VsaModel.HRR:
            v = math.sqrt(1.0 - coherence) * fresh + math.sqrt(coherence) * shared
            rows[i] = v / np.linalg.norm(v)
        else:
            take = sub.spawn(1).uniform(dim) < math.sqrt(coherence)
            rows[i] = np.where(take, shared, fresh)
    return rows


@dataclass
class CurveCell:
    k: int
    coherence: float
    role_coherence: float
    accuracy: float
    mean_similarity: float
    n_readouts: int

    @property
    def sigma(self) -> float:
        p = self.accuracy
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.n_readouts)


@dataclass
class CapacityCurve:
    model: str
    dim: int
    n_fillers: int
    cells: list = field(default_factory=list)

    def cell(self, k: int, coherence: float = 0.0) -> CurveCell:
        for c in self.cells:
            if c.k == k and abs(c.coherence - coherence) < 1e-12:
                return c
        raise KeyError((k, coherence))

    def rows(self) -> list[dict]:
        return [dict(asdict(c), sigma=c.sigma) for c in self.cells]


def interference_curve(
    model: VsaModel = VsaModel.MAP,
    dim: int = 1024,
    k_range: Sequence[int] = (1, 2, 4, 8, 16, 32),
    coherence_range: Sequence[float] = (0.0,),
    trials: int = 1000,
    rng: SeededRng | None = None,
    n_fillers: int = 64,
) -> CapacityCurve:
    """Cleanup accuracy of every unbound filler from K-binding superpositions.

    Per trial: K roles at the requested coherence, K fillers drawn with
    replacement from a fixed ``n_fillers`` codebook, one superposition, and
    K unbind-and-cleanup readouts.
    """
    for c in coherence_range:
        if not 0.0 <= c < 1.0:
            raise ParameterError(f"coherence must lie in [0, 1), got {c}")
    if any(k < 1 for k in k_range):
        raise ParameterError("K must be >= 1")
    rng = rng or SeededRng(0)
    book = Codebook(model, dim, [f"F{i}" for i in range(n_fillers)], int(rng.spawn(0).next_u64(1)[0] >> 1))
    book_rows = _bipolar_rows(model, np.asarray(book.matrix))
    curve = CapacityCurve(model.value, dim, n_fillers)
    for coherence in coherence_range:
        for k in k_range:
            # Keyed by the cell's own (coherence, K) so any sub-grid reproduces it exactly.
            cell_rng = rng.spawn(1 + int(round(coherence * 1e6))).spawn(k)
            correct = 0
            sims_total = 0.0
            coh_total = 0.0
            for t in range(trials):
                trng = cell_rng.spawn(t)
                roles = coherent_roles(model, dim, k, coherence, trng.spawn(0))
                f_idx = trng.spawn(1).integers(0, n_fillers, k)
                role_hvs = [Hypervector(model, row) for row in roles]
                bound = [bind(r, book.vector(int(f))) for r, f in zip(role_hvs, f_idx)]
                z = superpose(bound)
                reads = np.stack([_bipolar_rows(model, unbind(z, r).data[None])[0] for r in role_hvs])
                sims = _cosine_matrix(reads, book_rows)
                correct += int(np.sum(np.argmax(sims, axis=1) == f_idx))
                sims_total += float(np.sum(sims[np.arange(k), f_idx]))
                if k > 1:
                    g = _cosine_matrix(_bipolar_rows(model, roles), _bipolar_rows(model, roles))
                    coh_total += float((np.sum(g) - np.trace(g)) / (k * (k - 1)))
            n = trials * k
            curve.cells.append(
                CurveCell(k, float(coherence), coh_total / trials if k > 1 else float("nan"), correct / n, sims_total / n, n)
            )
    return curve


# -- operator alignment -------------------------------------------------------

FAMILIES = ("cyclic_shift", "elementwise_product", "permutation", "circular_convolution")
CONV_FLOOR = 1e-6
TIE_TOLERANCE = 1e-9


@dataclass
class OperatorAlignmentReport:
    best_family: str
    r2: float
    operator: dict
    per_family: dict

    def to_json(self) -> str:
        op = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.operator.items()}
        return json.dumps({"best_family": self.best_family, "r2": self.r2, "operator": op, "per_family": self.per_family}, sort_keys=True)


def _r2(y: np.ndarray, y_hat: np.ndarray, ss_tot: float) -> float:
    return float(1.0 - np.sum((y - y_hat) ** 2) / ss_tot)


def _gain(pred: np.ndarray, y: np.ndarray) -> float:
    denom = float(np.sum(pred * pred))
    return float(np.sum(pred * y) / denom) if denom > 0 else 0.0


def _fit_shift(x, y, ss_tot):
    best = None
    for s in range(x.shape[1]):
        pred = np.roll(x, s, axis=1)
        g = _gain(pred, y)
        r2 = _r2(y, g * pred, ss_tot)
        if best is None or r2 > best[0] + TIE_TOLERANCE:
            best = (r2, {"shift": s, "gain": g})
    return best


def _fit_product(x, y, ss_tot):
    denom = np.sum(x * x, axis=0)
    if np.any(denom == 0.0):
        raise IllPosedFitError("an input coordinate is identically zero")
    r = np.sum(x * y, axis=0) / denom
    return _r2(y, x * r, ss_tot), {"vector": r}


def _fit_permutation(x, y, ss_tot):
    n, d = x.shape
    if n < d:
        raise IllPosedFitError(f"permutation fitting needs at least D={d} samples, got {n}")
    xn = np.linalg.norm(x, axis=0)
    yn = np.linalg.norm(y, axis=0)
    if np.any(xn == 0) or np.any(yn == 0):
        raise IllPosedFitError("zero-variance coordinate in the samples")
    corr = (x.T @ y) / np.outer(xn, yn)  # corr[i, j]: input i against output j
    rows, cols = linear_sum_assignment(corr, maximize=True)
    idx = np.empty(d, dtype=np.int64)
    idx[cols] = rows  # output j reads input idx[j]
    pred = x[:, idx]
    g = _gain(pred, y)
    return _r2(y, g * pred, ss_tot), {"indices": idx.tolist(), "gain": g}


def _fit_convolution(x, y, ss_tot):
    xf = np.fft.fft(x, axis=1)
    yf = np.fft.fft(y, axis=1)
    denom = np.maximum(np.sum(np.abs(xf) ** 2, axis=0), CONV_FLOOR)
    rf = np.sum(np.conj(xf) * yf, axis=0) / denom
    r = np.fft.ifft(rf).real
    pred = cconv(x, np.broadcast_to(r, x.shape))
    return _r2(y, pred, ss_tot), {"vector": r}


_FITTERS = {
    "cyclic_shift": _fit_shift,
    "elementwise_product": _fit_product,
    "permutation": _fit_permutation,
    "circular_convolution": _fit_convolution,
}


def _as_signal(v) -> np.ndarray:
    # Binary vectors are fitted in bipolar form, where XOR is a product.
    if isinstance(v, Hypervector):
        return _bipolar_rows(v.model, v.data[None])[0].astype(np.float64)
    return np.asarray(v, dtype=np.float64)


def operator_alignment(samples, families: Sequence[str] = FAMILIES) -> OperatorAlignmentReport:
    """Fit each family to (input, output) pairs and report the best R^2.

    BSC hypervectors are mapped to bipolar form before fitting.

    Families are tried in parsimony order; a later family must beat the
    current best by more than 1e-9 to win.
    """
    pairs = list(samples)
    if not pairs:
        raise IllPosedFitError("no samples")
    x = np.array([_as_signal(a) for a, _ in pairs])
    y = np.array([_as_signal(b) for _, b in pairs])
    if x.shape != y.shape or x.ndim != 2:
        raise IllPosedFitError(f"inputs {x.shape} and outputs {y.shape} must be matching (N, D) arrays")
    ss_tot = float(np.sum((y - y.mean(axis=0)) ** 2))
    if ss_tot == 0.0 or not np.any(x):
        raise IllPosedFitError("samples have zero variance")
    unknown = set(families) - set(FAMILIES)
    if unknown:
        raise ParameterError(f"unknown operator families {sorted(unknown)}")
    ordered = [f for f in FAMILIES if f in families]
    per_family, operators = {}, {}
    best = None
    for fam in ordered:
        r2, op = _FITTERS[fam](x, y, ss_tot)
        per_family[fam] = r2
        operators[fam] = op
        if best is None or r2 > per_family[best] + TIE_TOLERANCE:
            best = fam
    return OperatorAlignmentReport(best, per_family[best], operators[best], per_family)


# -- failure diagnostics ------------------------------------------------------


@dataclass
class DiagnosticCounts:
    variable_confusion: int = 0
    role_swap: int = 0
    interference_inconsistency: int = 0
    other: int = 0
    n_failures: int = 0

    @property
    def total(self) -> int:
        return self.variable_confusion + self.role_swap + self.interference_inconsistency + self.other


def isolate(instance: TaskInstance, task_set: TaskSet) -> TaskInstance:
    """The same query asked of a one-statement instance holding only the queried binding."""
    vocab = task_set.vocab
    filler = dict(instance.structure)[instance.query_role]
    tokens = (vocab.id(instance.query_role), vocab.id(filler)) + tuple(instance.prompt_tokens[-2:])
    return TaskInstance(tokens, instance.answer_token, ((instance.query_role, filler),), instance.query_role, instance.split)


def classify_failure(instance: TaskInstance, answer: int, task_set: TaskSet, isolated_answer: int | None = None) -> str | None:
    """Category of a wrong answer, or None when the answer is right.

    Precedence: role_swap (the filler held in the mirrored statement slot),
    then variable_confusion (any other statement's filler), then
    interference_inconsistency (right when asked in isolation), else other.
    """
    if answer == instance.answer_token:
        return None
    vocab = task_set.vocab
    symbol = vocab.symbol(answer)
    roles = [r for r, _ in instance.structure]
    fillers = [f for _, f in instance.structure]
    j = roles.index(instance.query_role)
    mirror = len(roles) - 1 - j
    if mirror != j and fillers[mirror] == symbol:
        return "role_swap"
    if symbol in fillers and fillers[j] != symbol:
        return "variable_confusion"
    if isolated_answer is not None and isolated_answer == instance.answer_token:
        return "interference_inconsistency"
    return "other"


def diagnose_failures(task_set: TaskSet, answers: Sequence[int], isolated_answers: Sequence[int] | None = None) -> DiagnosticCounts:
    """Classify every wrong answer of ``answers`` (token ids, one per instance)."""
    answers = list(answers)
    if len(answers) != len(task_set.instances):
        raise VocabularyError(f"{len(answers)} answers for {len(task_set.instances)} instances")
    allowed = set(task_set.answer_tokens)
    for a in answers:
        if a not in allowed:
            raise VocabularyError(f"answer token {a} is outside the answer vocabulary")
    if isolated_answers is not None and len(isolated_answers) != len(answers):
        raise VocabularyError("isolated answers must align with the instances")
    counts = DiagnosticCounts()
    for i, (inst, a) in enumerate(zip(task_set.instances, answers)):
        iso = None if isolated_answers is None else isolated_answers[i]
        kind = classify_failure(inst, a, task_set, iso)
        if kind is not None:
            counts.n_failures += 1
            setattr(counts, kind, getattr(counts, kind) + 1)
    return counts


def model_answers(model: Model, task_set: TaskSet) -> list[int]:
    tokens, _ = task_set.to_arrays(model.cfg.max_len)
    answer_tokens = np.asarray(task_set.answer_tokens)
    return [int(t) for t in answer_tokens[model.predict(tokens)]]


def diagnose_model(model: Model, task_set: TaskSet) -> DiagnosticCounts:
    iso = TaskSet(task_set.name + "-isolated", task_set.vocab, task_set.answer_symbols, [isolate(i, task_set) for i in task_set.instances])
    return diagnose_failures(task_set, model_answers(model, task_set), model_answers(model, iso))


def vsa_likeness_summary(recoverability: float, interference: float, alignment_r2: float) -> dict:
    """The three metrics side by side; ``mean`` is an unweighted convenience value only."""
    vals = {"recoverability": recoverability, "interference": interference, "operator_alignment_r2": alignment_r2}
    vals["mean"] = float(np.mean([recoverability, interference, max(alignment_r2, 0.0)]))
    return vals
