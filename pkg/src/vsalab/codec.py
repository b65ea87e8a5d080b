"""Structure codecs: sequences, sets, key-value stores, trees and program
environments encoded as single hypervectors, plus cleanup memory."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .algebra import Permutation, bind, permute, superpose, unbind
from .errors import (
    DuplicateKeyError,
    SerializationError,
    UnknownSymbolError,
    UnknownVariableError,
    VsaError,
)
from .hvcore import (
    Hypervector,
    SeededRng,
    VsaModel,
    bipolar_view,
    check_compatible,
    random_hv,
    similarity,
    zeros,
)

POS = "pos"
LEFT = "LEFT"
RIGHT = "RIGHT"
LEAF = "LEAF"
RESERVED = (POS, LEFT, RIGHT, LEAF)

MAX_COHERENCE = 0.2
MAX_RETRIES = 16


class Codebook:
    """Item memory: ordered symbols with deterministic random vectors.

    Entry ``i`` is drawn from ``SeededRng(seed, i)``. At D >= 512 every
    entry must have ``|similarity| <= 0.2`` against all earlier entries;
    offenders are redrawn from stream ``i + (attempt << 32)``.
    """

    def __init__(self, model: VsaModel, dim: int, symbols: Iterable[str], seed: int):
        self.model = VsaModel.parse(model)
        self.dim = int(dim)
        self.seed = int(seed)
        self.symbols = list(symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise DuplicateKeyError("codebook symbols must be unique")
        self.index = {s: i for i, s in enumerate(self.symbols)}
        rows = []
        for i in range(len(self.symbols)):
            rows.append(self._draw(i, rows))
        self.matrix = np.array(rows).reshape(len(rows), self.dim)
        self.matrix.setflags(write=False)
        self._view = _bipolar_rows(self.model, self.matrix)
        self._view_sq = np.einsum("ij,ij->i", self._view, self._view)

    def _draw(self, i: int, previous: list) -> np.ndarray:
        for attempt in range(MAX_RETRIES):
            vec = random_hv(self.model, self.dim, SeededRng(self.seed, i + (attempt << 32))).data
            if self.dim < 512 or not previous:
                return vec
            prev = _bipolar_rows(self.model, np.array(previous))
            cur = _bipolar_rows(self.model, vec[None, :])[0]
            sims = prev @ cur / (np.linalg.norm(prev, axis=1) * np.linalg.norm(cur))
            if np.max(np.abs(sims)) <= MAX_COHERENCE:
                return vec
        raise VsaError(f"could not draw a decorrelated vector for entry {i} after {MAX_RETRIES} attempts")

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def __getitem__(self, symbol: str) -> Hypervector:
        try:
            return Hypervector(self.model, self.matrix[self.index[symbol]])
        except KeyError:
            raise UnknownSymbolError(f"symbol {symbol!r} not in codebook") from None

    def vector(self, i: int) -> Hypervector:
        return Hypervector(self.model, self.matrix[i])

    def similarities(self, query: Hypervector) -> np.ndarray:
        if query.model is not self.model or query.dim != self.dim:
            check_compatible(query, self.vector(0))
        q = bipolar_view(query)
        qq = float(np.dot(q, q))
        if qq == 0.0:
            return np.zeros(len(self))
        return (self._view @ q) / np.sqrt(self._view_sq * qq)

    def renamed(self, mapping: Mapping[str, str]) -> "Codebook":
        """Same vectors under new names (``mapping`` old -> new, identity where absent)."""
        clone = object.__new__(Codebook)
        clone.model, clone.dim, clone.seed = self.model, self.dim, self.seed
        clone.symbols = [mapping.get(s, s) for s in self.symbols]
        if len(set(clone.symbols)) != len(clone.symbols):
            raise DuplicateKeyError("renaming must stay injective")
        clone.index = {s: i for i, s in enumerate(clone.symbols)}
        clone.matrix, clone._view, clone._view_sq = self.matrix, self._view, self._view_sq
        return clone

    def to_manifest(self) -> str:
        lines = ["# vsalab codebook manifest v1", f"model {self.model.value}", f"dim {self.dim}", f"seed {self.seed}"]
        lines += [f"symbol {s}" for s in self.symbols]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "Codebook":
        header, symbols = {}, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            if key == "symbol":
                symbols.append(value)
            elif key in ("model", "dim", "seed"):
                header[key] = value
            else:
                raise SerializationError(f"unknown manifest line {raw!r}")
        missing = {"model", "dim", "seed"} - header.keys()
        if missing:
            raise SerializationError(f"manifest missing {sorted(missing)}")
        return cls(header["model"], int(header["dim"]), symbols, int(header["seed"]))


def _bipolar_rows(model: VsaModel, rows: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * rows if model is VsaModel.BSC else rows


def cleanup(query: Hypervector, book: Codebook) -> tuple[str, float]:
    """Nearest codebook entry by similarity; ties go to the lowest index."""
    sims = book.similarities(query)
    best = int(np.argmax(sims))
    return book.symbols[best], float(sims[best])


def cleanup_ranked(query: Hypervector, book: Codebook) -> tuple[str, float, float]:
    """Best symbol, its similarity and the runner-up similarity."""
    sims = book.similarities(query)
    order = np.argsort(-sims, kind="stable")
    second = float(sims[order[1]]) if len(order) > 1 else float("nan")
    return book.symbols[order[0]], float(sims[order[0]]), second


class Kind(enum.Enum):
    SEQUENCE = "Sequence"
    SET = "Set"
    KV_STORE = "KvStore"
    TREE = "Tree"
    ENV = "Env"


@dataclass(frozen=True)
class EncodedStructure:
    vector: Hypervector
    kind: Kind
    arity: int
    # Exact (var, value) bookkeeping for environments; None once lost.
    bindings: tuple[tuple[str, str], ...] | None = field(default=None)


# -- sequences ----------------------------------------------------------------


def position_role(book: Codebook, p: Permutation, i: int) -> Hypervector:
    return permute(book[POS], p, i)


def encode_sequence(items: Sequence[str], book: Codebook, p: Permutation) -> EncodedStructure:
    """sum_i perm^i(pos) * x_i with i starting at 1."""
    if not items:
        raise VsaError("cannot encode an empty sequence")
    terms = [bind(position_role(book, p, i), book[sym]) for i, sym in enumerate(items, start=1)]
    return EncodedStructure(superpose(terms), Kind.SEQUENCE, len(items))


def decode_sequence_at(s: EncodedStructure, i: int, book: Codebook, p: Permutation) -> tuple[str, float]:
    if s.kind is not Kind.SEQUENCE:
        raise VsaError(f"expected a Sequence, got {s.kind.value}")
    return cleanup(unbind(s.vector, position_role(book, p, i)), book)


# -- key-value stores and sets ------------------------------------------------


def encode_kv(pairs: Sequence[tuple[str, str]], book: Codebook) -> EncodedStructure:
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise DuplicateKeyError("key-value store keys must be distinct")
    if not pairs:
        raise VsaError("cannot encode an empty key-value store")
    vec = superpose([bind(book[k], book[v]) for k, v in pairs])
    return EncodedStructure(vec, Kind.KV_STORE, len(pairs))


def kv_lookup(store: EncodedStructure, key: str, book: Codebook) -> tuple[str, float]:
    return cleanup(unbind(store.vector, book[key]), book)


def encode_set(items: Sequence[str], book: Codebook) -> EncodedStructure:
    if len(set(items)) != len(items):
        raise DuplicateKeyError("set members must be distinct")
    if not items:
        raise VsaError("cannot encode an empty set")
    return EncodedStructure(superpose([book[s] for s in items]), Kind.SET, len(items))


def set_contains(s: EncodedStructure, symbol: str, book: Codebook, threshold: float) -> bool:
    return similarity(s.vector, book[symbol]) >= threshold


# -- trees --------------------------------------------------------------------

# A tree is a leaf symbol or a (left, right) pair; either child may be None.
Tree = Union[str, tuple]


class Branch(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


def _tree_perm(book: Codebook, p: Permutation | None) -> Permutation:
    return p if p is not None else Permutation.cyclic(book.dim, 1)


def _encode_node(node: Tree, book: Codebook, p: Permutation) -> tuple[Hypervector, int]:
    if isinstance(node, str):
        return bind(book[LEAF], book[node]), 1
    left, right = node
    terms, count = [], 0
    for role, child in ((LEFT, left), (RIGHT, right)):
        if child is None:
            continue
        vec, n = _encode_node(child, book, p)
        terms.append(bind(book[role], permute(vec, p, 1)))
        count += n
    if not terms:
        raise VsaError("internal tree node needs at least one child")
    return superpose(terms), count


def encode_tree(node: Tree, book: Codebook, p: Permutation | None = None) -> EncodedStructure:
    """Leaves are LEAF * sym; internal nodes LEFT * perm(enc(l)) + RIGHT * perm(enc(r)).

    Binding is commutative in all three models, so without the permutation
    the paths LEFT,RIGHT and RIGHT,LEFT would produce the same role product.
    ``p`` defaults to a cyclic shift by one.
    """
    vec, leaves = _encode_node(node, book, _tree_perm(book, p))
    return EncodedStructure(vec, Kind.TREE, leaves)


def tree_read_path(tree: EncodedStructure, path: Sequence, book: Codebook, p: Permutation | None = None) -> tuple[str, float]:
    p = _tree_perm(book, p)
    vec = tree.vector
    for step in path:
        step = Branch(step.value if isinstance(step, Branch) else step)
        vec = permute(unbind(vec, book[LEFT if step is Branch.LEFT else RIGHT]), p, -1)
    return cleanup(unbind(vec, book[LEAF]), book)


# -- program environments -----------------------------------------------------


class WriteMode(enum.Enum):
    EXACT = "Exact"
    APPROX = "Approx"


def env_encode(bindings: Mapping[str, str], book: Codebook) -> EncodedStructure:
    pairs = tuple(bindings.items())
    if not pairs:
        return EncodedStructure(zeros(book.model, book.dim), Kind.ENV, 0, ())
    vec = superpose([bind(book[var], book[val]) for var, val in pairs])
    return EncodedStructure(vec, Kind.ENV, len(pairs), pairs)


def env_read(e: EncodedStructure, var: str, book: Codebook) -> tuple[str, float]:
    return cleanup(unbind(e.vector, book[var]), book)


def presence_threshold(dim: int) -> float:
    """Similarity below which an Approx-mode read is treated as absent (5 noise std)."""
    return 5.0 / math.sqrt(dim)


def env_write(e: EncodedStructure, var: str, newval: str, book: Codebook, mode=WriteMode.EXACT) -> EncodedStructure:
    """Rebind ``var`` to ``newval``.

    Exact mode removes the recorded old binding. Approx mode removes the
    binding to the cleaned-up current estimate, or just adds when the
    estimate is below ``presence_threshold``; its result carries no
    bookkeeping.
    """
    mode = WriteMode(mode.value if isinstance(mode, WriteMode) else mode)
    new_term = bind(book[var], book[newval])
    if mode is WriteMode.EXACT:
        if e.bindings is None:
            raise VsaError("Exact-mode write needs bookkeeping; this environment has none")
        current = dict(e.bindings)
        if var not in current:
            raise UnknownVariableError(f"variable {var!r} is not bound in this environment")
        old_term = bind(book[var], book[current[var]])
        vec = superpose([e.vector, old_term, new_term], [1.0, -1.0, 1.0])
        pairs = tuple((k, newval if k == var else v) for k, v in e.bindings)
        return EncodedStructure(vec, Kind.ENV, e.arity, pairs)
    estimate, sim = env_read(e, var, book) if e.arity else (None, 0.0)
    if estimate is not None and sim >= presence_threshold(book.dim):
        old_term = bind(book[var], book[estimate])
        vec = superpose([e.vector, old_term, new_term], [1.0, -1.0, 1.0])
        return EncodedStructure(vec, Kind.ENV, e.arity, None)
    vec = superpose([e.vector, new_term])
    return EncodedStructure(vec, Kind.ENV, e.arity + 1, None)
