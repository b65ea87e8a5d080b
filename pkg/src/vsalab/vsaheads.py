"""VSA-inspired network components.

Array kernels here are used inside the transformer (with hand-written
backward passes); ``HdMemory`` and the ``*_forward`` functions at the
bottom operate on hypervectors directly and serve as the hard-algebra
reference the soft heads converge to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import bind, ccorr, cconv, superpose, unbind
from .codec import Codebook, cleanup
from .errors import ConfigError, IncompatibleOperandsError
from .hvcore import Hypervector, VsaModel, check_compatible, zeros

# -- helpers ------------------------------------------------------------------


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _bind_arrays(op: str, role: np.ndarray, filler: np.ndarray) -> np.ndarray:
    return role * filler if op == "MAP" else cconv(role, filler)


def _unbind_arrays(op: str, memory: np.ndarray, cue: np.ndarray) -> np.ndarray:
    return memory * cue if op == "MAP" else ccorr(memory, cue)


def _bind_backward(op: str, role, filler, dbound):
    """Gradients of bind(role, filler) with respect to (role, filler)."""
    if op == "MAP":
        return dbound * filler, dbound * role
    return ccorr(dbound, filler), ccorr(dbound, role)


def _unbind_backward(op: str, memory, cue, dread):
    """Gradients of unbind(memory, cue) with respect to (memory, cue)."""
    if op == "MAP":
        return dread * cue, dread * memory
    # read[j] = sum_k memory[k] cue[k - j]
    return cconv(dread, cue), ccorr(memory, dread)


# -- rotary tie ---------------------------------------------------------------


@dataclass(frozen=True)
class RotaryTie:
    """Paired-coordinate rotations: pair (2j, 2j+1) turns by ``pos * base_frequencies[j]``."""

    base_frequencies: tuple
    dim: int

    @classmethod
    def standard(cls, dim: int, base: float = 10000.0) -> "RotaryTie":
        if dim % 2:
            raise ConfigError(f"rotary tie needs an even dimension, got {dim}")
        freqs = tuple(float(base ** (-2.0 * j / dim)) for j in range(dim // 2))
        return cls(freqs, dim)

    def angles(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(positions, dtype=np.float64)[:, None] * np.asarray(self.base_frequencies)[None, :]
        return np.cos(theta), np.sin(theta)


def rotary_apply(rows: np.ndarray, positions: Sequence[int], tie: RotaryTie, inverse: bool = False) -> np.ndarray:
    """Rotate rows of shape (..., n, d_k) by their positions; ``inverse`` undoes it."""
    if rows.shape[-1] != tie.dim or tie.dim % 2:
        raise ConfigError(f"rotary tie of dimension {tie.dim} cannot rotate rows of width {rows.shape[-1]}")
    cos, sin = tie.angles(np.asarray(positions))
    if inverse:
        sin = -sin
    even, odd = rows[..., 0::2], rows[..., 1::2]
    out = np.empty_like(rows, dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


# -- in-network heads ---------------------------------------------------------


@dataclass
class BindingHeadParams:
    """Role selection over a role codebook plus a filler projection.

    ``w_back`` maps the bound hypervector back to the residual width; heads
    that feed an HD memory leave it unused.
    """

    selector: np.ndarray  # d_model x n_roles
    w_f: np.ndarray  # d_model x D
    w_back: np.ndarray  # D x d_model


@dataclass
class UnbindingHeadParams:
    selector: np.ndarray  # d_model x n_roles
    w_read: np.ndarray  # D x d_model


def select_roles(h: np.ndarray, selector: np.ndarray, roles: np.ndarray, temperature: float):
    probs = softmax((h @ selector) / temperature)
    return probs, probs @ roles


def select_roles_backward(h, selector, roles, temperature, probs, drole):
    """Returns (dh, dselector, droles)."""
    droles = _flat(probs).T @ _flat(drole)
    dlogits = softmax_backward(probs, drole @ roles.T) / temperature
    dselector = _flat(h).T @ _flat(dlogits)
    return dlogits @ selector.T, dselector, droles


def binding_bound(h, p: BindingHeadParams, roles, temperature, op="MAP"):
    probs, role = select_roles(h, p.selector, roles, temperature)
    filler = h @ p.w_f
    return _bind_arrays(op, role, filler), {"probs": probs, "role": role, "filler": filler}


def binding_bound_backward(h, p: BindingHeadParams, roles, temperature, cache, dbound, op="MAP"):
    drole, dfiller = _bind_backward(op, cache["role"], cache["filler"], dbound)
    dh, dsel, droles = select_roles_backward(h, p.selector, roles, temperature, cache["probs"], drole)
    dwf = _flat(h).T @ _flat(dfiller)
    dh = dh + dfiller @ p.w_f.T
    return dh, dsel, dwf, droles


def memory_update(bound: np.ndarray, mask: np.ndarray, causal: bool) -> np.ndarray:
    """Per-position memory increment from bound vectors of shape (B, n, D)."""
    masked = bound * mask[..., None]
    if causal:
        return np.cumsum(masked, axis=-2)
    return np.broadcast_to(np.sum(masked, axis=-2, keepdims=True), bound.shape).copy()


def memory_update_backward(dm: np.ndarray, mask: np.ndarray, causal: bool) -> np.ndarray:
    if causal:
        dbound = np.flip(np.cumsum(np.flip(dm, axis=-2), axis=-2), axis=-2)
    else:
        dbound = np.broadcast_to(np.sum(dm, axis=-2, keepdims=True), dm.shape)
    return dbound * mask[..., None]


# -- hard-algebra reference ---------------------------------------------------


@dataclass
class HdMemory:
    """Running superposition ``m`` of bound (role, filler) pairs.

    In oracle mode ``shadow`` records every binding so that ``m`` can be
    reconstructed exactly.
    """

    m: Hypervector
    shadow: list | None = None
    write_count: int = 0
    saturation_log: list = field(default_factory=list)

    @classmethod
    def empty(cls, model: VsaModel, dim: int, oracle: bool = False) -> "HdMemory":
        return cls(zeros(model, dim), [] if oracle else None)

    def reconstruct(self) -> Hypervector:
        if self.shadow is None:
            raise ConfigError("memory is not in oracle mode")
        if not self.shadow:
            return zeros(self.m.model, self.m.dim)
        return superpose([zeros(self.m.model, self.m.dim)] + [bind(r, f) for r, f in self.shadow])


def hd_write(mem: HdMemory, pairs: Sequence[tuple[Hypervector, Hypervector]]) -> HdMemory:
    """m <- m + sum_k bind(r_k, f_k). Returns a new memory; the input is untouched."""
    terms = []
    for r, f in pairs:
        check_compatible(mem.m, r)
        check_compatible(r, f)
        terms.append(bind(r, f))
    if not terms:
        return mem
    m = superpose([mem.m] + terms)
    shadow = None if mem.shadow is None else mem.shadow + list(pairs)
    log = list(mem.saturation_log)
    # Never decays; record the norm so saturation can be inspected.
    log.append(float(np.linalg.norm(m.data)))
    return HdMemory(m, shadow, mem.write_count + 1, log)


def hd_read(mem: HdMemory, role_cue: Hypervector, book: Codebook | None = None, clean: bool = False):
    """Unbind ``role_cue`` from the memory. Returns (raw vector, None) or (symbol, similarity)."""
    raw = unbind(mem.m, role_cue)
    if clean:
        if book is None:
            raise ConfigError("cleanup requested without a codebook")
        return cleanup(raw, book)
    return raw, None


def binding_head_forward(
    x: np.ndarray,
    params: BindingHeadParams,
    role_book: Codebook,
    temperature: float = 1.0,
    project: bool = True,
) -> np.ndarray:
    """Soft binding write for residual rows ``x`` (n x d_model).

    Each row selects a role by softmax over ``x @ selector / temperature``
    and binds it (elementwise for MAP, circular convolution for HRR) with
    ``x @ w_f``. With ``project`` the bound vectors are mapped back through
    ``w_back``; otherwise they are returned in hypervector space.
    """
    if params.w_f.shape[1] != role_book.dim:
        raise ConfigError(f"filler projection width {params.w_f.shape[1]} does not match role dimension {role_book.dim}")
    if role_book.model is VsaModel.BSC:
        raise ConfigError("binding heads support MAP and HRR role books")
    bound, _ = binding_bound(np.atleast_2d(x), params, role_book.matrix, temperature, role_book.model.value)
    return bound @ params.w_back if project else bound


def unbinding_head_forward(
    x: np.ndarray,
    cue_selector: np.ndarray,
    role_book: Codebook,
    memory_source: HdMemory | None,
    temperature: float = 1.0,
    filler_book: Codebook | None = None,
):
    """Soft role cue per row of ``x`` unbound from the memory.

    Returns an (n x D) array of raw reads, or a list of (symbol, similarity)
    when ``filler_book`` is given.
    """
    if memory_source is None:
        raise ConfigError("unbinding head needs a memory source")
    if memory_source.m.dim != role_book.dim or memory_source.m.model is not role_book.model:
        raise IncompatibleOperandsError("memory and role book disagree on model or dimension")
    _, cue = select_roles(np.atleast_2d(x), cue_selector, role_book.matrix, temperature)
    reads = _unbind_arrays(role_book.model.value, memory_source.m.data[None, :], cue)
    if filler_book is None:
        return reads
    return [cleanup(Hypervector(role_book.model, row), filler_book) for row in reads]
