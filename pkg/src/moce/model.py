"""Byte-level Transformer encoder-decoder with one adaptive multiscale layer.

Blocks are pre-norm. Encoder, decoder and output projection share one
embedding table. The self-attention of encoder layer ``ada_layer`` is the
adaptive multiscale-headed attention (or the fixed-scale variant when
``msha_scales`` is set); every other attention is plain multi-head attention.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, attention, causal_mask, init_attention,
                        msha_forward, padding_mask)
from .contextualization import ExpertPool, init_pool, pool_param_count
from .router import RouterParams, ada_msha_forward, init_router, load_balance_loss
from .tensor import Tensor
from .tokenizer import EOS_ID, PAD_ID, TokenSeq, Vocab

NO_LID = "none"


@dataclass
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    heads: int = 4
    ffn: int = 256
    max_delta: int = 5
    top_k: int = 2
    use_lid: bool = False
    ada_layer: int = 0
    dropout: float = 0.1
    share_embeddings: bool = True
    seed: int = 0
    expert_bias: bool = True
    expert_activation: str = "none"
    gate_mode: str = "prob"
    per_stream_router: bool = False
    aux_loss_coef: float = 0.0
    msha_scales: tuple[int, ...] | None = None
    dtype: str = "float32"

    def validate(self) -> None:
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0 <= self.ada_layer < self.enc_layers:
            raise ValueError(f"ada_layer={self.ada_layer} must be below enc_layers={self.enc_layers}")
        if self.max_delta < 0:
            raise ValueError("max_delta must be >= 0")
        if not 1 <= self.top_k <= self.max_delta + 1:
            raise ValueError(f"top_k={self.top_k} outside 1..{self.max_delta + 1}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.msha_scales is not None:
            if len(self.msha_scales) != self.heads:
                raise ValueError(f"msha_scales needs {self.heads} radii")
            if any(not 0 <= d <= self.max_delta for d in self.msha_scales):
                raise ValueError("msha_scales radius outside 0..max_delta")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def has_ada(self) -> bool:
        return self.max_delta > 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["msha_scales"] is not None:
            d["msha_scales"] = list(d["msha_scales"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("msha_scales") is not None:
            d["msha_scales"] = tuple(d["msha_scales"])
        return cls(**d)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : d - d // 2])
    return out


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocab
    params: dict[str, Tensor] = field(default_factory=dict)

    # -- structure accessors ------------------------------------------------
    def attn(self, prefix: str) -> AttentionParams:
        p = self.params
        return AttentionParams(p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"],
                               p[f"{prefix}.wo"], self.config.heads)

    @property
    def ada_prefix(self) -> str:
        return f"enc.{self.config.ada_layer}"

    def pool(self) -> ExpertPool:
        c = self.config
        pre = f"{self.ada_prefix}.pool"
        weights = {d: self.params[f"{pre}.w{d}"] for d in range(1, c.max_delta + 1)}
        biases = {d: self.params[f"{pre}.b{d}"] for d in range(1, c.max_delta + 1)
                  if f"{pre}.b{d}" in self.params}
        return ExpertPool(c.max_delta, c.d_k, weights, biases, c.expert_activation)

    def router(self) -> RouterParams:
        c = self.config
        return RouterParams(self.params[f"{self.ada_prefix}.router.w"], c.d_k, c.top_k,
                            c.use_lid, c.gate_mode)

    @property
    def output_weight(self) -> Tensor:
        return self.params["embed"] if self.config.share_embeddings else self.params["out_proj"]

    @property
    def float_dtype(self):
        return np.dtype(self.config.dtype)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def ada_overhead(self) -> int:
        """Parameters added by the expert pool and router."""
        if not self.config.has_ada:
            return 0
        pre = f"{self.ada_prefix}."
        return int(sum(p.size for n, p in self.params.items()
                       if n.startswith(pre + "pool.") or n.startswith(pre + "router.")))

    def astype(self, dtype) -> "Model":
        """Copy of this model with every parameter cast to ``dtype``."""
        cfg = dataclasses.replace(self.config, dtype=np.dtype(dtype).name)
        params = {n: Tensor(p.data.astype(dtype), requires_grad=True) for n, p in self.params.items()}
        return Model(cfg, self.vocab, params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward ----------------------------------------------------------------
    def embed(self, ids: np.ndarray) -> Tensor:
        d = self.config.d_model
        x = T.take_rows(self.params["embed"], ids) * float(np.sqrt(d))
        pos = sinusoidal_positions(ids.shape[1], d).astype(self.float_dtype)
        return x + Tensor(pos[None])

    def lid_vectors(self, src: np.ndarray, lid_override: str | None = None) -> Tensor:
        """Raw embedding rows of each source's language token, ``(B, d_model)``."""
        if lid_override is None:
            return T.take_rows(self.params["embed"], src[:, 0])
        if lid_override == NO_LID:
            return Tensor(np.zeros((src.shape[0], self.config.d_model), dtype=self.float_dtype))
        lid = self.vocab.lang_id(lid_override)
        return T.take_rows(self.params["embed"], np.full(src.shape[0], lid))

    def encode(self, src: np.ndarray, training: bool = False, rng: np.random.Generator | None = None,
               lid_override: str | None = None, recorder=None, aux: list | None = None) -> Tensor:
        c = self.config
        src = np.asarray(src)
        check_language_tokens(src, self.vocab)
        nonpad = src != PAD_ID
        mask = padding_mask(nonpad)
        x = T.dropout(self.embed(src), c.dropout, rng, training)
        lid = self.lid_vectors(src, lid_override) if c.use_lid else None
        for i in range(c.enc_layers):
            pre = f"enc.{i}"
            h = T.layer_norm(x, self.params[f"{pre}.ln1.g"], self.params[f"{pre}.ln1.b"])
            if i == c.ada_layer and c.has_ada:
                if c.msha_scales is not None:
                    a = msha_forward(h, self.attn(f"{pre}.attn"), self.pool(), c.msha_scales,
                                     mask, nonpad)
                else:
                    a, g = ada_msha_forward(h, self.attn(f"{pre}.attn"), self.pool(), self.router(),
                                            lid, mask, nonpad, recorder, return_gate=True)
                    if aux is not None and c.aux_loss_coef > 0:
                        aux.append(load_balance_loss(g, nonpad[None, :, None, :]))
            else:
                a = attention(h, self.attn(f"{pre}.attn"), mask)
            x = x + T.dropout(a, c.dropout, rng, training)
            x = x + T.dropout(self._ffn(pre, x, training, rng), c.dropout, rng, training)
        return T.layer_norm(x, self.params["enc.ln.g"], self.params["enc.ln.b"])

    def _ffn(self, pre: str, x: Tensor, training: bool, rng) -> Tensor:
        p = self.params
        h = T.layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        h = T.relu(h @ p[f"{pre}.ffn.w1"] + p[f"{pre}.ffn.b1"])
        h = T.dropout(h, self.config.dropout, rng, training)
        return h @ p[f"{pre}.ffn.w2"] + p[f"{pre}.ffn.b2"]

    def decode(self, enc: Tensor, src_nonpad: np.ndarray, tgt_in: np.ndarray,
               training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Logits ``(B, L_tgt, V)`` for teacher-forced decoder inputs."""
        c, p = self.config, self.params
        tgt_in = np.asarray(tgt_in)
        L = tgt_in.shape[1]
        self_mask = causal_mask(L)[None, None] + padding_mask(tgt_in != PAD_ID)
        cross_mask = padding_mask(src_nonpad)
        x = T.dropout(self.embed(tgt_in), c.dropout, rng, training)
        for i in range(c.dec_layers):
            pre = f"dec.{i}"
            h = T.layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            x = x + T.dropout(attention(h, self.attn(f"{pre}.self"), self_mask), c.dropout, rng, training)
            h = T.layer_norm(x, p[f"{pre}.lnx.g"], p[f"{pre}.lnx.b"])
            x = x + T.dropout(attention(h, self.attn(f"{pre}.cross"), cross_mask, xkv=enc),
                              c.dropout, rng, training)
            x = x + T.dropout(self._ffn(pre, x, training, rng), c.dropout, rng, training)
        x = T.layer_norm(x, p["dec.ln.g"], p["dec.ln.b"])
        return x @ self.output_weight.T


def check_language_tokens(src: np.ndarray, vocab: Vocab) -> None:
    first = src[:, 0]
    bad = ~((first >= 258) & (first < vocab.size))
    if bad.any():
        raise ValueError(f"source sequence {int(np.argmax(bad))} lacks a leading language token")


def build_model(config: ModelConfig, vocab: Vocab) -> Model:
    """Deterministically initialise all parameters from ``config.seed``."""
    config.validate()
    c = config
    rng = np.random.default_rng(c.seed)
    dt = np.dtype(c.dtype)
    params: dict[str, Tensor] = {}

    def t(a):
        return Tensor(np.asarray(a, dtype=dt), requires_grad=True)

    def ln(name):
        params[f"{name}.g"] = t(np.ones(c.d_model))
        params[f"{name}.b"] = t(np.zeros(c.d_model))

    def add_attn(prefix):
        params.update(init_attention(c.d_model, c.heads, rng, dt).parameters(prefix))

    def add_ffn(prefix):
        b1 = np.sqrt(6.0 / (c.d_model + c.ffn))
        params[f"{prefix}.ffn.w1"] = t(rng.uniform(-b1, b1, (c.d_model, c.ffn)))
        params[f"{prefix}.ffn.b1"] = t(np.zeros(c.ffn))
        params[f"{prefix}.ffn.w2"] = t(rng.uniform(-b1, b1, (c.ffn, c.d_model)))
        params[f"{prefix}.ffn.b2"] = t(np.zeros(c.d_model))

    params["embed"] = t(rng.normal(0.0, c.d_model ** -0.5, (vocab.size, c.d_model)))
    params["embed"].data[PAD_ID] = 0.0
    if not c.share_embeddings:
        params["out_proj"] = t(rng.normal(0.0, c.d_model ** -0.5, (vocab.size, c.d_model)))
    for i in range(c.enc_layers):
        pre = f"enc.{i}"
        ln(f"{pre}.ln1")
        add_attn(f"{pre}.attn")
        if i == c.ada_layer and c.has_ada:
            pool = init_pool(c.max_delta, c.d_k, rng, c.expert_bias, c.expert_activation, dt)
            params.update(pool.parameters(f"{pre}.pool"))
            if c.msha_scales is None:
                d_lid = c.d_model if c.use_lid else 0
                r = init_router(c.d_k, c.max_delta + 1, rng, c.top_k, d_lid,
                                c.per_stream_router, c.gate_mode, dt)
                params[f"{pre}.router.w"] = r.weight
        ln(f"{pre}.ln2")
        add_ffn(pre)
    ln("enc.ln")
    for i in range(c.dec_layers):
        pre = f"dec.{i}"
        ln(f"{pre}.ln1")
        add_attn(f"{pre}.self")
        ln(f"{pre}.lnx")
        add_attn(f"{pre}.cross")
        ln(f"{pre}.ln2")
        add_ffn(pre)
    ln("dec.ln")
    return Model(config, vocab, params)


def expected_ada_overhead(config: ModelConfig) -> int:
    """Closed form for the pool + router parameters of ``config``."""
    c = config
    if not c.has_ada:
        return 0
    n = pool_param_count(c.max_delta, c.d_k, c.expert_bias)
    if c.msha_scales is None:
        d_in = c.d_k + (c.d_model if c.use_lid else 0)
        n += d_in * (c.max_delta + 1) * (3 if c.per_stream_router else 1)
    return n


# -- batching and loss ---------------------------------------------------------------

def pad_batch(seqs: Sequence, pad: int = PAD_ID) -> np.ndarray:
    rows = [s.ids if isinstance(s, TokenSeq) else tuple(s) for s in seqs]
    L = max(len(r) for r in rows)
    out = np.full((len(rows), L), pad, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def forward_loss(model: Model, src, tgt, smoothing: float = 0.1, training: bool = False,
                 rng: np.random.Generator | None = None, lid_override: str | None = None,
                 return_logits: bool = False):
    """Teacher-forced label-smoothed cross entropy over non-PAD target positions.

    ``tgt`` rows start with the target language token, which doubles as the
    decoder start symbol; the model predicts ``tgt[:, 1:]`` from ``tgt[:, :-1]``.
    """
    src = src if isinstance(src, np.ndarray) else pad_batch(src)
    tgt = tgt if isinstance(tgt, np.ndarray) else pad_batch(tgt)
    aux: list = []
    enc = model.encode(src, training, rng, lid_override, aux=aux)
    logits = model.decode(enc, src != PAD_ID, tgt[:, :-1], training, rng)
    loss = T.cross_entropy_ls(logits, tgt[:, 1:], smoothing, ignore_index=PAD_ID)
    for a in aux:
        loss = loss + a * model.config.aux_loss_coef
    return (loss, logits) if return_logits else loss


def token_accuracy(model: Model, src, tgt) -> tuple[int, int]:
    """Correct and total teacher-forced next-token predictions on non-PAD targets."""
    src = src if isinstance(src, np.ndarray) else pad_batch(src)
    tgt = tgt if isinstance(tgt, np.ndarray) else pad_batch(tgt)
    with T.no_grad():
        enc = model.encode(src)
        logits = model.decode(enc, src != PAD_ID, tgt[:, :-1])
    gold = tgt[:, 1:]
    keep = gold != PAD_ID
    pred = logits.data.argmax(axis=-1)
    return int(((pred == gold) & keep).sum()), int(keep.sum())


__all__ = ["Model", "ModelConfig", "build_model", "forward_loss", "pad_batch",
           "token_accuracy", "expected_ada_overhead", "NO_LID", "EOS_ID"]
