"""A small pre-norm transformer with exact hand-written gradients.

Everything runs in float64 numpy. A block computes

    h   = LN1(x)
    x'  = x + sum_h head_h(h) + binding(h) + memory_read(h)
    x'' = x' + MLP(LN2(x'))

so the residual stream is exactly the embedding plus every branch write.
The optional binding and HD-memory branches come from ``vsaheads``.
"""

from __future__ import annotations

import math
import struct
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np
from scipy.special import erf

from . import vsaheads as vh
from .codec import Codebook
from .errors import ConfigError, SerializationError, ShapeError, TapeMismatchError, VocabularyError
from .hvcore import SeededRng, VsaModel

LN_EPS = 1e-24
PAD_ID = 0
MAX_D_MODEL = 128
MAX_HEADS = 8
MAX_LAYERS = 4
MAX_CONTEXT = 64
CHECKPOINT_MAGIC = b"VSACKPT1"


# -- primitives ---------------------------------------------------------------


def attention_forward(q_rows, k_rows, v_rows, scale=None, mask=None):
    """Scaled dot-product attention for one head.

    Returns ``(outputs, weights)`` where ``weights[i, j]`` is the softmax
    over j of ``<q_i, k_j> * scale`` (default ``1 / sqrt(d_k)``).
    """
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q_rows, k_rows, v_rows))
    if k.shape[0] == 0 or q.shape[0] == 0:
        raise ShapeError("attention over an empty sequence")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"inconsistent shapes q{q.shape} k{k.shape} v{v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    logits = (q @ k.T) * scale
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    weights = vh.softmax(logits)
    return weights @ v, weights


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    d = xhat.shape[-1]
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    return dx, dg, db


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT_HALF))


def gelu_grad(x, erf_term=None):
    """Derivative of the exact GELU; ``erf_term`` reuses erf(x / sqrt 2) from the forward pass."""
    if erf_term is None:
        erf_term = erf(x * _SQRT_HALF)
    return 0.5 * (1.0 + erf_term) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def cross_entropy(logits, targets):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return float(loss), grad / n


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _project_heads(h, w):
    """(B, n, d) rows through stacked (H, d, d_k) weights -> (B, H, n, d_k), as one GEMM."""
    H, d, dk = w.shape
    flat = _flat(h) @ w.transpose(1, 0, 2).reshape(d, H * dk)
    return flat.reshape(*h.shape[:-1], H, dk).swapaxes(-2, -3)


def _merge_heads(a):
    """(B, H, n, d_k) -> (B, n, H * d_k)."""
    B, H, n, dk = a.shape
    return a.swapaxes(1, 2).reshape(B, n, H * dk)


def _split_heads(a, H):
    """(B, n, H * d_k) -> (B, H, n, d_k)."""
    B, n, w = a.shape
    return a.reshape(B, n, H, w // H).swapaxes(1, 2)


# -- configuration and parameters ---------------------------------------------


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    max_len: int = 16
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 0
    positional: str = "learned"  # learned | rotary | none
    causal: bool = False
    binding_heads: bool = False
    hd_memory: bool = False
    hd_dim: int = 128
    n_roles: int = 8
    role_trainable: bool = False
    binding_op: str = "MAP"
    temperature: float = 1.0
    rotary_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.d_ff <= 0:
            self.d_ff = 4 * self.d_model
        if self.positional not in ("learned", "rotary", "none"):
            raise ConfigError(f"unknown positional scheme {self.positional!r}")
        if self.binding_op not in ("MAP", "HRR"):
            raise ConfigError("binding_op must be MAP or HRR")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.positional == "rotary" and self.d_k % 2:
            raise ConfigError(f"rotary positions need an even head width, got {self.d_k}")
        if self.d_model > MAX_D_MODEL or self.n_heads > MAX_HEADS or self.n_layers > MAX_LAYERS or self.max_len > MAX_CONTEXT:
            raise ConfigError("configuration exceeds the desk-scale envelope (d_model<=128, heads<=8, layers<=4, n<=64)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def uses_roles(self) -> bool:
        return self.binding_heads or self.hd_memory

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class HeadParams:
    """Views onto one head's slice of the block's stacked projections."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


@dataclass
class BlockParams:
    wq: np.ndarray  # H x d x d_k
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray  # H x d_k x d
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    binding: vh.BindingHeadParams | None = None
    unbinding: vh.UnbindingHeadParams | None = None

    @property
    def heads(self) -> list[HeadParams]:
        return [HeadParams(self.wq[h], self.wk[h], self.wv[h], self.wo[h]) for h in range(self.wq.shape[0])]


@dataclass
class ModelParams:
    embed: np.ndarray
    pos: np.ndarray | None
    blocks: list[BlockParams]
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    readout_w: np.ndarray
    readout_b: np.ndarray
    roles: np.ndarray | None = None

    def named(self, include_frozen_roles: bool = True) -> dict[str, np.ndarray]:
        out = {"embed": self.embed}
        if self.pos is not None:
            out["pos"] = self.pos
        if self.roles is not None and include_frozen_roles:
            out["roles"] = self.roles
        for i, blk in enumerate(self.blocks):
            p = f"blocks.{i}."
            for name in ("wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
                out[p + name] = getattr(blk, name)
            if blk.binding is not None:
                out[p + "bind.selector"] = blk.binding.selector
                out[p + "bind.w_f"] = blk.binding.w_f
                out[p + "bind.w_back"] = blk.binding.w_back
            if blk.unbinding is not None:
                out[p + "unbind.selector"] = blk.unbinding.selector
                out[p + "unbind.w_read"] = blk.unbinding.w_read
        out.update({"lnf_g": self.lnf_g, "lnf_b": self.lnf_b, "readout_w": self.readout_w, "readout_b": self.readout_b})
        return out


def role_codebook(cfg: ModelConfig) -> Codebook:
    return Codebook(VsaModel.parse(cfg.binding_op), cfg.hd_dim, [f"ROLE{i}" for i in range(cfg.n_roles)], cfg.seed ^ 0x5EED)


def init_params(cfg: ModelConfig, rng: SeededRng | None = None) -> ModelParams:
    rng = rng or SeededRng(cfg.seed, 1)
    d, dk, H = cfg.d_model, cfg.d_k, cfg.n_heads

    def normal(shape, std):
        return rng.normal(int(np.prod(shape)), std).reshape(shape)

    blocks = []
    for _ in range(cfg.n_layers):
        blk = BlockParams(
            wq=normal((H, d, dk), d**-0.5),
            wk=normal((H, d, dk), d**-0.5),
            wv=normal((H, d, dk), d**-0.5),
            wo=normal((H, dk, d), (H * dk) ** -0.5),
            ln1_g=np.ones(d),
            ln1_b=np.zeros(d),
            ln2_g=np.ones(d),
            ln2_b=np.zeros(d),
            w1=normal((d, cfg.d_ff), d**-0.5),
            b1=np.zeros(cfg.d_ff),
            w2=normal((cfg.d_ff, d), cfg.d_ff**-0.5),
            b2=np.zeros(d),
        )
        if cfg.uses_roles:
            blk.binding = vh.BindingHeadParams(
                selector=normal((d, cfg.n_roles), d**-0.5),
                w_f=normal((d, cfg.hd_dim), d**-0.5),
                w_back=normal((cfg.hd_dim, d), cfg.hd_dim**-0.5),
            )
        if cfg.hd_memory:
            blk.unbinding = vh.UnbindingHeadParams(
                selector=normal((d, cfg.n_roles), d**-0.5),
                w_read=normal((cfg.hd_dim, d), cfg.hd_dim**-0.5),
            )
        blocks.append(blk)
    roles = None
    if cfg.uses_roles:
        roles = np.array(role_codebook(cfg).matrix, dtype=np.float64)
    return ModelParams(
        embed=normal((cfg.vocab_size, d), 1.0),
        pos=normal((cfg.max_len, d), 1.0) if cfg.positional == "learned" else None,
        blocks=blocks,
        lnf_g=np.ones(d),
        lnf_b=np.zeros(d),
        readout_w=normal((d, cfg.n_classes), d**-0.5),
        readout_b=np.zeros(cfg.n_classes),
        roles=roles,
    )


# -- the model ----------------------------------------------------------------


@dataclass
class ForwardTape:
    """Activations cached by ``Model.forward`` for the backward pass."""

    version: int
    tokens: np.ndarray
    mask: np.ndarray
    readout_pos: np.ndarray
    x0: np.ndarray
    layers: list = field(default_factory=list)
    final: tuple | None = None
    logits: np.ndarray | None = None


class Model:
    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)
        self.version = 0
        self.tie = vh.RotaryTie.standard(cfg.d_k, cfg.rotary_base) if cfg.positional == "rotary" else None

    def named_params(self) -> dict[str, np.ndarray]:
        return self.params.named(include_frozen_roles=self.cfg.role_trainable)

    def all_arrays(self) -> dict[str, np.ndarray]:
        return self.params.named(include_frozen_roles=True)

    def touch(self) -> None:
        """Mark parameters as modified; outstanding tapes become stale."""
        self.version += 1

    # forward ------------------------------------------------------------

    def _prepare(self, tokens, mask):
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise VocabularyError(f"token ids must lie in [0, {self.cfg.vocab_size})")
        B, n = tokens.shape
        if n == 0:
            raise ShapeError("empty token sequence")
        if n > self.cfg.max_len:
            raise ShapeError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        mask = tokens != PAD_ID if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
        if mask.shape != tokens.shape:
            raise ShapeError("mask shape must match tokens")
        if not mask[:, 0].all():
            raise ShapeError("every sequence needs a non-padding first token")
        readout_pos = n - 1 - np.argmax(mask[:, ::-1], axis=1)
        return tokens, mask, readout_pos

    def embed(self, tokens):
        x = self.params.embed[tokens]
        if self.params.pos is not None:
            x = x + self.params.pos[: tokens.shape[1]][None]
        return x

    def forward(self, tokens, mask=None, keep_tape: bool = True):
        """Logits of shape (B, n_classes) read at each sequence's last real token."""
        tokens, mask, readout_pos = self._prepare(tokens, mask)
        x = self.embed(tokens)
        tape = ForwardTape(self.version, tokens, mask, readout_pos, x)
        B, n = tokens.shape
        keymask = mask[:, None, None, :]
        if self.cfg.causal:
            keymask = keymask & np.tril(np.ones((n, n), dtype=bool))[None, None]
        memory = np.zeros((B, n, self.cfg.hd_dim)) if self.cfg.hd_memory else None
        for blk in self.params.blocks:
            x, memory, cache = self._block_forward(blk, x, memory, keymask, mask)
            tape.layers.append(cache)
        B_idx = np.arange(B)
        last = x[B_idx, readout_pos]
        hf, lnf_cache = layer_norm(last, self.params.lnf_g, self.params.lnf_b)
        logits = hf @ self.params.readout_w + self.params.readout_b
        tape.final = (x, hf, lnf_cache)
        tape.logits = logits
        return logits, (tape if keep_tape else None)

    def _block_forward(self, blk: BlockParams, x, memory, keymask, mask):
        cfg = self.cfg
        c = {"x_in": x}
        h, c["ln1"] = layer_norm(x, blk.ln1_g, blk.ln1_b)
        c["h"] = h
        q, k, v = (_project_heads(h, w) for w in (blk.wq, blk.wk, blk.wv))
        if self.tie is not None:
            positions = np.arange(x.shape[1])
            q = vh.rotary_apply(q, positions, self.tie)
            k = vh.rotary_apply(k, positions, self.tie)
        scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(cfg.d_k)
        scores = np.where(keymask, scores, -np.inf)
        att = vh.softmax(scores)
        o = att @ v
        o_cat = _merge_heads(o)
        # Equals the sum of per-head writes o_h @ W_O^h; one GEMM over the concatenation.
        writes = (_flat(o_cat) @ blk.wo.reshape(-1, cfg.d_model)).reshape(x.shape)
        c.update(q=q, k=k, v=v, att=att, o=o, o_cat=o_cat, attn_write=writes)
        if blk.binding is not None:
            bound, c["bind"] = vh.binding_bound(h, blk.binding, self.params.roles, cfg.temperature, cfg.binding_op)
            c["bound"] = bound
            if cfg.hd_memory:
                memory = memory + vh.memory_update(bound, mask, cfg.causal)
                cue_p, cue = vh.select_roles(h, blk.unbinding.selector, self.params.roles, cfg.temperature)
                read = vh._unbind_arrays(cfg.binding_op, memory, cue)
                mem_write = read @ blk.unbinding.w_read
                c.update(memory=memory, cue_p=cue_p, cue=cue, read=read, mem_write=mem_write)
                writes = writes + mem_write
            else:
                bind_write = bound @ blk.binding.w_back
                c["bind_write"] = bind_write
                writes = writes + bind_write
        x_mid = x + writes
        h2, c["ln2"] = layer_norm(x_mid, blk.ln2_g, blk.ln2_b)
        a = h2 @ blk.w1 + blk.b1
        ea = erf(a * _SQRT_HALF)
        ga = 0.5 * a * (1.0 + ea)
        mlp_out = ga @ blk.w2 + blk.b2
        c.update(x_mid=x_mid, h2=h2, a=a, ea=ea, ga=ga, mlp_out=mlp_out)
        return x_mid + mlp_out, memory, c

    # backward -----------------------------------------------------------

    def backward(self, tape: ForwardTape, dlogits) -> dict[str, np.ndarray]:
        """Exact gradients of ``sum(dlogits * logits)`` for every trainable array."""
        if tape is None or tape.version != self.version or len(tape.layers) != len(self.params.blocks):
            raise TapeMismatchError("tape does not match the current parameters")
        P, cfg = self.params, self.cfg
        dlogits = np.asarray(dlogits, dtype=np.float64)
        if dlogits.shape != tape.logits.shape:
            raise ShapeError(f"loss gradient shape {dlogits.shape} != logits shape {tape.logits.shape}")
        grads = {name: np.zeros_like(arr) for name, arr in self.all_arrays().items()}
        x_last, hf, lnf_cache = tape.final
        grads["readout_w"] += hf.T @ dlogits
        grads["readout_b"] += dlogits.sum(axis=0)
        dlast, dg, db = layer_norm_backward(dlogits @ P.readout_w.T, P.lnf_g, lnf_cache)
        grads["lnf_g"] += dg
        grads["lnf_b"] += db
        B, n = tape.tokens.shape
        dx = np.zeros_like(x_last)
        dx[np.arange(B), tape.readout_pos] = dlast
        dmemory = np.zeros((B, n, cfg.hd_dim)) if cfg.hd_memory else None
        for i in reversed(range(len(P.blocks))):
            dx, dmemory = self._block_backward(i, P.blocks[i], tape.layers[i], dx, dmemory, tape.mask, grads)
        np.add.at(grads["embed"], tape.tokens, dx)
        if P.pos is not None:
            grads["pos"][:n] += dx.sum(axis=0)
        if not cfg.role_trainable:
            grads.pop("roles", None)
        return grads

    def _block_backward(self, i, blk: BlockParams, c, dout, dmemory, mask, grads):
        cfg, p = self.cfg, f"blocks.{i}."
        # MLP branch
        dmlp = dout
        grads[p + "w2"] += _flat(c["ga"]).T @ _flat(dmlp)
        grads[p + "b2"] += dmlp.sum(axis=(0, 1))
        da = (dmlp @ blk.w2.T) * gelu_grad(c["a"], c["ea"])
        grads[p + "w1"] += _flat(c["h2"]).T @ _flat(da)
        grads[p + "b1"] += da.sum(axis=(0, 1))
        dx_mid, dg, db = layer_norm_backward(da @ blk.w1.T, blk.ln2_g, c["ln2"])
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dx_mid = dx_mid + dout
        dwrites = dx_mid
        h = c["h"]
        dh = np.zeros_like(h)
        # attention heads
        H, dk_ = blk.wo.shape[0], blk.wo.shape[1]
        grads[p + "wo"] += (_flat(c["o_cat"]).T @ _flat(dwrites)).reshape(blk.wo.shape)
        do = _split_heads((_flat(dwrites) @ blk.wo.reshape(H * dk_, -1).T).reshape(*dwrites.shape[:-1], H * dk_), H)
        att = c["att"]
        datt = do @ c["v"].swapaxes(-1, -2)
        dv = att.swapaxes(-1, -2) @ do
        dscores = vh.softmax_backward(att, datt) / math.sqrt(cfg.d_k)
        dq = dscores @ c["k"]
        dk = dscores.swapaxes(-1, -2) @ c["q"]
        if self.tie is not None:
            positions = np.arange(h.shape[1])
            dq = vh.rotary_apply(dq, positions, self.tie, inverse=True)
            dk = vh.rotary_apply(dk, positions, self.tie, inverse=True)
        for name, dproj, w in (("wq", dq, blk.wq), ("wk", dk, blk.wk), ("wv", dv, blk.wv)):
            dflat = dproj.transpose(0, 2, 1, 3).reshape(-1, H * dk_)
            grads[p + name] += (_flat(h).T @ dflat).reshape(-1, H, dk_).transpose(1, 0, 2)
            dh += (dflat @ w.transpose(1, 0, 2).reshape(w.shape[1], -1).T).reshape(h.shape)
        # binding / memory branches
        if blk.binding is not None:
            if cfg.hd_memory:
                grads[p + "unbind.w_read"] += _flat(c["read"]).T @ _flat(dwrites)
                dread = dwrites @ blk.unbinding.w_read.T
                dmem_here, dcue = vh._unbind_backward(cfg.binding_op, c["memory"], c["cue"], dread)
                dh_c, dsel, droles = vh.select_roles_backward(
                    h, blk.unbinding.selector, self.params.roles, cfg.temperature, c["cue_p"], dcue
                )
                dh += dh_c
                grads[p + "unbind.selector"] += dsel
                grads["roles"] += droles
                dmemory = dmemory + dmem_here
                dbound = vh.memory_update_backward(dmemory, mask, cfg.causal)
            else:
                grads[p + "bind.w_back"] += _flat(c["bound"]).T @ _flat(dwrites)
                dbound = dwrites @ blk.binding.w_back.T
            dh_b, dsel, dwf, droles = vh.binding_bound_backward(
                h, blk.binding, self.params.roles, cfg.temperature, c["bind"], dbound, cfg.binding_op
            )
            dh += dh_b
            grads[p + "bind.selector"] += dsel
            grads[p + "bind.w_f"] += dwf
            grads["roles"] += droles
        dx_in, dg, db = layer_norm_backward(dh, blk.ln1_g, c["ln1"])
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        return dx_mid + dx_in, dmemory

    # conveniences -------------------------------------------------------

    def loss_and_grads(self, tokens, targets, mask=None):
        logits, tape = self.forward(tokens, mask)
        loss, dlogits = cross_entropy(logits, np.asarray(targets))
        return loss, self.backward(tape, dlogits), logits

    def predict(self, tokens, mask=None, batch_size: int = 512) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        out = []
        for s in range(0, tokens.shape[0], batch_size):
            m = None if mask is None else mask[s : s + batch_size]
            logits, _ = self.forward(tokens[s : s + batch_size], m, keep_tape=False)
            out.append(np.argmax(logits, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def branch_writes(self, tape: ForwardTape, layer: int) -> dict[str, np.ndarray]:
        """Per-branch residual writes of one block (heads individually)."""
        c = tape.layers[layer]
        wo = self.params.blocks[layer].wo
        out = {f"head{h}": c["o"][:, h] @ wo[h] for h in range(self.cfg.n_heads)}
        if "bind_write" in c:
            out["binding"] = c["bind_write"]
        if "mem_write" in c:
            out["memory"] = c["mem_write"]
        out["mlp"] = c["mlp_out"]
        return out


def model_forward(model: Model, tokens, mask=None):
    return model.forward(tokens, mask)


def model_backward(model: Model, tape: ForwardTape, dlogits):
    return model.backward(tape, dlogits)


def block_forward(x, blk: BlockParams, model: Model, mask=None):
    """Apply one block to residual rows ``x`` of shape (B, n, d_model); returns (x', cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != model.cfg.d_model:
        raise ShapeError(f"block input must be (B, n, {model.cfg.d_model}), got {x.shape}")
    B, n, _ = x.shape
    mask = np.ones((B, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keymask = mask[:, None, None, :]
    if model.cfg.causal:
        keymask = keymask & np.tril(np.ones((n, n), dtype=bool))[None, None]
    memory = np.zeros((B, n, model.cfg.hd_dim)) if model.cfg.hd_memory else None
    out, _, cache = model._block_forward(blk, x, memory, keymask, mask)
    return out, cache


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """``VSACKPT1`` + u32 header length + JSON header + little-endian f64 parameters."""
    arrays = model.all_arrays()
    header = {
        "format_version": 1,
        "kind": "transformer",
        "config": asdict(model.cfg),
        "manifest": [[name, list(arr.shape)] for name, arr in arrays.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    flat = np.concatenate([a.reshape(-1) for a in arrays.values()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + flat.tobytes())


def save_oracle_checkpoint(path, model: VsaModel, dim: int, extra: dict | None = None) -> None:
    """Header-only checkpoint standing for the exact HD-memory algebra (a probe test double)."""
    header = {"format_version": 1, "kind": "oracle", "config": {"model": model.value, "dim": int(dim)}, "manifest": [], "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob)


def read_checkpoint_header(path) -> tuple[dict, bytes]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SerializationError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise SerializationError(f"{path} is not a vsalab checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise SerializationError(f"{path} has a corrupt checkpoint header") from None
    if not isinstance(header, dict) or header.get("format_version") != 1:
        raise SerializationError(f"unsupported checkpoint version {header.get('format_version') if isinstance(header, dict) else None}")
    return header, raw[12 + hlen :]


def load_checkpoint(path) -> tuple[Model, dict]:
    header, body = read_checkpoint_header(path)
    if header.get("kind") != "transformer":
        raise SerializationError(f"checkpoint kind {header.get('kind')!r} is not a transformer")
    model = Model(ModelConfig.from_dict(header["config"]))
    arrays = model.all_arrays()
    expected = 8 * sum(int(np.prod(shape)) for _, shape in header["manifest"])
    if len(body) != expected:
        raise SerializationError(f"checkpoint payload is {len(body)} bytes; its manifest needs {expected}")
    flat = np.frombuffer(body, dtype="<f8")
    offset = 0
    for name, shape in header["manifest"]:
        if name not in arrays or list(arrays[name].shape) != shape:
            raise SerializationError(f"manifest entry {name}{shape} does not fit the configured model")
        size = int(np.prod(shape))
        arrays[name][...] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise SerializationError("checkpoint payload length does not match its manifest")
    return model, header.get("extra", {})


def iter_param_coords(model: Model) -> Iterator[tuple[str, tuple]]:
    for name, arr in model.named_params().items():
        for idx in np.ndindex(arr.shape):
            yield name, idx
