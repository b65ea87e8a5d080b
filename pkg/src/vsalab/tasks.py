"""Synthetic benchmarks: role-filler binding with held-out combinations,
symbol renaming, and positional sequence tasks.

Binding prompts are ``ROLE_r FILLER_f ... QUERY ROLE_q`` with the answer
being the filler bound to ``ROLE_q``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .algebra import bind, superpose
from .codec import Codebook
from .errors import MappingError, SplitError, UnknownSymbolError, VocabularyError
from .hvcore import Hypervector, SeededRng, VsaModel, zeros

PAD = "<pad>"
QUERY = "<query>"
SEP = "<sep>"
SPECIALS = (PAD, QUERY, SEP)


def role_symbol(i: int) -> str:
    return f"ROLE_{i}"


def filler_symbol(i: int) -> str:
    return f"FILLER_{i}"


def item_symbol(i: int) -> str:
    return f"ITEM_{i}"


def pos_symbol(i: int) -> str:
    return f"POS_{i}"


class Vocabulary:
    """Token strings with ids; id 0 is always padding."""

    def __init__(self, symbols: Iterable[str]):
        self.symbols = list(symbols)
        if self.symbols[: len(SPECIALS)] != list(SPECIALS):
            self.symbols = list(SPECIALS) + [s for s in self.symbols if s not in SPECIALS]
        if len(set(self.symbols)) != len(self.symbols):
            raise VocabularyError("duplicate vocabulary symbols")
        self.ids = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def id(self, symbol: str) -> int:
        try:
            return self.ids[symbol]
        except KeyError:
            raise VocabularyError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol(self, token: int) -> str:
        if not 0 <= token < len(self.symbols):
            raise VocabularyError(f"token id {token} out of range")
        return self.symbols[token]

    def manifest(self) -> str:
        return "".join(f"{i}\t{s}\n" for i, s in enumerate(self.symbols))

    @classmethod
    def from_manifest(cls, text: str) -> "Vocabulary":
        rows = [line.split("\t") for line in text.splitlines() if line.strip()]
        if [int(r[0]) for r in rows] != list(range(len(rows))):
            raise VocabularyError("vocabulary manifest ids must be 0..n-1 in order")
        return cls(r[1] for r in rows)


@dataclass(frozen=True)
class TaskInstance:
    prompt_tokens: tuple
    answer_token: int
    structure: tuple  # ((role symbol, filler symbol), ...) in presentation order
    query_role: str
    split: str = "train"

    def to_json(self) -> dict:
        return {
            "tokens": list(self.prompt_tokens),
            "answer": self.answer_token,
            "structure": [list(p) for p in self.structure],
            "query_role": self.query_role,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TaskInstance":
        return cls(
            tuple(obj["tokens"]),
            int(obj["answer"]),
            tuple(tuple(p) for p in obj["structure"]),
            obj["query_role"],
            obj.get("split", "train"),
        )


@dataclass
class TaskSet:
    name: str
    vocab: Vocabulary
    answer_symbols: list
    instances: list
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def answer_tokens(self) -> list:
        return [self.vocab.id(s) for s in self.answer_symbols]

    def class_of(self, token: int) -> int:
        try:
            return self.answer_tokens.index(token)
        except ValueError:
            raise VocabularyError(f"token {token} is not an answer token") from None

    def to_arrays(self, max_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Right-padded token matrix and class-index targets."""
        n = max((len(i.prompt_tokens) for i in self.instances), default=1)
        width = max_len or n
        if n > width:
            raise VocabularyError(f"instance of length {n} exceeds max_len {width}")
        tokens = np.zeros((len(self.instances), width), dtype=np.int64)
        lookup = {t: c for c, t in enumerate(self.answer_tokens)}
        targets = np.empty(len(self.instances), dtype=np.int64)
        for row, inst in enumerate(self.instances):
            tokens[row, : len(inst.prompt_tokens)] = inst.prompt_tokens
            targets[row] = lookup[inst.answer_token]
        return tokens, targets

    def write(self, path_jsonl, path_vocab) -> None:
        with open(path_jsonl, "w") as fh:
            header = {"schema": "vsalab.tasks/1", "name": self.name, "answers": self.answer_symbols, "meta": self.meta}
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for inst in self.instances:
                fh.write(json.dumps(inst.to_json(), sort_keys=True) + "\n")
        with open(path_vocab, "w") as fh:
            fh.write(self.vocab.manifest())

    @classmethod
    def read(cls, path_jsonl, path_vocab) -> "TaskSet":
        with open(path_vocab) as fh:
            vocab = Vocabulary.from_manifest(fh.read())
        with open(path_jsonl) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or "header" not in lines[0]:
            raise VocabularyError(f"{path_jsonl} lacks a task-set header line")
        header = lines[0]["header"]
        if header.get("schema") != "vsalab.tasks/1":
            raise VocabularyError(f"unsupported task schema {header.get('schema')!r}")
        return cls(header["name"], vocab, header["answers"], [TaskInstance.from_json(o) for o in lines[1:]], header.get("meta", {}))


def binding_vocabulary(n_roles: int, n_fillers: int) -> Vocabulary:
    return Vocabulary(list(SPECIALS) + [role_symbol(i) for i in range(n_roles)] + [filler_symbol(j) for j in range(n_fillers)])


# -- splits -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset
    test: frozenset
    holdout_fraction: float
    seed: int

    def __post_init__(self):
        if self.train & self.test:
            raise SplitError("train and test combinations overlap")


def make_split(n_roles: int, n_fillers: int, holdout_fraction: float, seed: int) -> SplitSpec:
    """Hold out ``round(fraction * n_roles * n_fillers)`` (role, filler) combinations.

    Combinations are visited in seeded random order and held out unless that
    would leave some role or filler with no training combination.
    """
    combos = [(r, f) for r in range(n_roles) for f in range(n_fillers)]
    target = int(round(holdout_fraction * len(combos)))
    rng = SeededRng(seed, 0x5B17)
    role_left = {r: n_fillers for r in range(n_roles)}
    filler_left = {f: n_roles for f in range(n_fillers)}
    test = set()
    for idx in rng.permutation(len(combos)):
        if len(test) == target:
            break
        r, f = combos[idx]
        if role_left[r] > 1 and filler_left[f] > 1:
            test.add((r, f))
            role_left[r] -= 1
            filler_left[f] -= 1
    if len(test) != target:
        raise SplitError(f"cannot hold out {target} combinations while keeping every role and filler trainable")
    return SplitSpec(frozenset(combos) - frozenset(test), frozenset(test), holdout_fraction, seed)


def check_split_hygiene(split: SplitSpec, n_roles: int, n_fillers: int) -> None:
    if split.train & split.test:
        raise SplitError("train and test combinations overlap")
    if {r for r, _ in split.train} != set(range(n_roles)) or {f for _, f in split.train} != set(range(n_fillers)):
        raise SplitError("every role and filler must appear in a training combination")


# -- binding task -------------------------------------------------------------


def _length_range(instance_len) -> tuple[int, int]:
    if isinstance(instance_len, int):
        return instance_len, instance_len
    lo, hi = instance_len
    return int(lo), int(hi)


def _sample_binding(combos_by_role: dict, length: int, rng: SeededRng, attempts: int = 64):
    roles = [r for r, fs in combos_by_role.items() if fs]
    if len(roles) < length:
        return None
    for _ in range(attempts):
        chosen = [roles[i] for i in rng.choice(len(roles), length)]
        used, pairs = set(), []
        for r in chosen:
            options = [f for f in combos_by_role[r] if f not in used]
            if not options:
                break
            f = options[int(rng.integers(0, len(options), 1)[0])]
            used.add(f)
            pairs.append((r, f))
        if len(pairs) == length:
            return pairs
    return None


def binding_instance(pairs: Sequence[tuple[int, int]], query_index: int, vocab: Vocabulary, split: str) -> TaskInstance:
    tokens = []
    structure = []
    for r, f in pairs:
        tokens += [vocab.id(role_symbol(r)), vocab.id(filler_symbol(f))]
        structure.append((role_symbol(r), filler_symbol(f)))
    q_role, q_filler = pairs[query_index]
    tokens += [vocab.id(QUERY), vocab.id(role_symbol(q_role))]
    return TaskInstance(tuple(tokens), vocab.id(filler_symbol(q_filler)), tuple(structure), role_symbol(q_role), split)


def gen_binding_task(
    n_roles: int = 8,
    n_fillers: int = 16,
    instance_len=(2, 6),
    split: SplitSpec | None = None,
    rng: SeededRng | None = None,
    n_train: int = 4096,
    n_test: int = 1024,
    max_context: int = 64,
) -> tuple[TaskSet, TaskSet]:
    """Training instances use only training combinations in every statement;
    test instances use only held-out combinations."""
    lo, hi = _length_range(instance_len)
    if lo < 1 or hi < lo:
        raise SplitError(f"invalid instance length range {instance_len}")
    if 2 * hi + 2 > max_context:
        raise SplitError(f"instances of {hi} statements exceed the context limit {max_context}")
    if hi > n_roles or hi > n_fillers:
        raise SplitError("instances need distinct roles and fillers")
    split = split or make_split(n_roles, n_fillers, 0.0, 0)
    check_split_hygiene(split, n_roles, n_fillers)
    rng = rng or SeededRng(0)
    vocab = binding_vocabulary(n_roles, n_fillers)
    answers = [filler_symbol(j) for j in range(n_fillers)]
    sets = []
    for tag, combos, count, stream in (("train", split.train, n_train, 1), ("test", split.test, n_test, 2)):
        by_role = {r: sorted(f for rr, f in combos if rr == r) for r in range(n_roles)}
        sub = rng.spawn(stream)
        instances = []
        for _ in range(count):
            length = int(sub.integers(lo, hi + 1, 1)[0])
            pairs = _sample_binding(by_role, length, sub)
            if pairs is None:
                raise SplitError(f"{tag} combinations cannot form an instance of {length} statements")
            q = int(sub.integers(0, length, 1)[0])
            instances.append(binding_instance(pairs, q, vocab, tag))
        meta = {"n_roles": n_roles, "n_fillers": n_fillers, "instance_len": [lo, hi], "holdout_fraction": split.holdout_fraction, "split_seed": split.seed}
        sets.append(TaskSet(f"binding-{tag}", vocab, answers, instances, meta))
    train, test = sets
    seen = {p for inst in train.instances for p in inst.structure}
    held = {(role_symbol(r), filler_symbol(f)) for r, f in split.test}
    if seen & held:
        raise SplitError("a held-out combination leaked into the training set")
    return train, test


# -- renaming -----------------------------------------------------------------


def renaming_bijection(symbols: Sequence[str], seed: int) -> dict:
    perm = SeededRng(seed, 0xB1).permutation(len(symbols))
    return {s: symbols[int(j)] for s, j in zip(symbols, perm)}


def invert_mapping(mapping: Mapping[str, str]) -> dict:
    inverse = {v: k for k, v in mapping.items()}
    if len(inverse) != len(mapping):
        raise MappingError("mapping is not injective")
    return inverse


def gen_renaming_split(base: TaskSet, bijection, rename_roles: bool = False) -> TaskSet:
    """Rewrite every instance under a symbol bijection.

    ``bijection`` is a mapping over filler symbols (optionally role symbols
    too) or an integer seed from which one is drawn.
    """
    if isinstance(bijection, int):
        fillers = list(base.answer_symbols)
        mapping = renaming_bijection(fillers, bijection)
        if rename_roles:
            roles = sorted({r for inst in base.instances for r, _ in inst.structure} | {inst.query_role for inst in base.instances})
            mapping.update(renaming_bijection(roles, bijection ^ 0x7F))
    else:
        mapping = dict(bijection)
    if set(mapping) != set(mapping.values()) or len(set(mapping.values())) != len(mapping):
        raise MappingError("renaming must be a bijection on its domain")
    for s in mapping:
        base.vocab.id(s)
    sym = lambda s: mapping.get(s, s)  # noqa: E731
    tok = lambda t: base.vocab.id(sym(base.vocab.symbol(t)))  # noqa: E731
    out = []
    for inst in base.instances:
        out.append(
            replace(
                inst,
                prompt_tokens=tuple(tok(t) for t in inst.prompt_tokens),
                answer_token=tok(inst.answer_token),
                structure=tuple((sym(r), sym(f)) for r, f in inst.structure),
                query_role=sym(inst.query_role),
            )
        )
    meta = dict(base.meta, renaming=sorted(mapping.items()))
    return TaskSet(base.name + "-renamed", base.vocab, list(base.answer_symbols), out, meta)


# -- sequence tasks -----------------------------------------------------------


@dataclass(frozen=True)
class SequenceExample:
    kind: str
    items: tuple
    target: tuple


def sequence_vocabulary(n_items: int, max_length: int) -> Vocabulary:
    return Vocabulary(list(SPECIALS) + [item_symbol(i) for i in range(n_items)] + [pos_symbol(i) for i in range(max_length)])


def gen_sequence_task(kind: str, lengths: Sequence[int], rng: SeededRng, count: int = 256, n_items: int = 16, max_context: int = 64):
    """Copy / Reverse / IndexQuery.

    Returns ``(examples, task_set)``. Every example is expanded into one
    instance per position query: ``items... <sep> POS_t`` (Copy, Reverse)
    or ``items... <query> POS_i`` (IndexQuery).
    """
    if kind not in ("Copy", "Reverse", "IndexQuery"):
        raise ValueError(f"unknown sequence task {kind!r}")
    max_length = max(lengths)
    if max_length + 2 > max_context:
        raise SplitError(f"length {max_length} exceeds the context limit")
    vocab = sequence_vocabulary(n_items, max_length)
    examples, instances = [], []
    for _ in range(count):
        n = int(lengths[int(rng.integers(0, len(lengths), 1)[0])])
        items = tuple(item_symbol(int(i)) for i in rng.integers(0, n_items, n))
        if kind == "Copy":
            target = items
        elif kind == "Reverse":
            target = items[::-1]
        else:
            target = items
        examples.append(SequenceExample(kind, items, target))
        base = [vocab.id(s) for s in items]
        marker = vocab.id(QUERY if kind == "IndexQuery" else SEP)
        positions = range(n) if kind != "IndexQuery" else [int(rng.integers(0, n, 1)[0])]
        structure = tuple((pos_symbol(t), target[t]) for t in range(n))
        for t in positions:
            tokens = tuple(base + [marker, vocab.id(pos_symbol(t))])
            instances.append(TaskInstance(tokens, vocab.id(target[t]), structure, pos_symbol(t)))
    answers = [item_symbol(i) for i in range(n_items)]
    return examples, TaskSet(kind.lower(), vocab, answers, instances, {"kind": kind, "lengths": list(lengths)})


# -- VSA reference trajectory -------------------------------------------------


def task_codebook(vocab: Vocabulary, model: VsaModel = VsaModel.MAP, dim: int = 1024, seed: int = 0) -> Codebook:
    return Codebook(model, dim, [s for s in vocab.symbols if s not in SPECIALS], seed)


def encode_task_tokens(instance: TaskInstance, book: Codebook) -> list[Hypervector]:
    """Ideal states s(0..T) with s(t+1) = s(t) + bind(role_t, filler_t)."""
    state = zeros(book.model, book.dim)
    states = [state]
    for r, f in instance.structure:
        if r not in book or f not in book:
            raise UnknownSymbolError(f"statement ({r}, {f}) uses a symbol missing from the codebook")
        state = superpose([state, bind(book[r], book[f])])
        states.append(state)
    return states
