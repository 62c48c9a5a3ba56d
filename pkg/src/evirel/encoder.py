"""Compact multi-head self-attention encoder with attention export.

encode() returns per-token embeddings H and A, the head-averaged post-softmax
attention of the final layer. Entity embeddings pool mention start-marker
rows with coordinatewise logsumexp; the pair context embedding reweights H by
the normalized product of the two entities' attention distributions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Entity, MarkedSequence

log = logging.getLogger(__name__)


class EncoderError(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 256
    use_positions: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise EncoderError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class EncoderOutput:
    H: Tensor  # (L, d_model)
    A: Tensor  # (L, L), rows sum to 1


def _xavier(rng, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


def init_encoder_params(cfg: EncoderConfig, rng) -> dict[str, Tensor]:
    d, dff = cfg.d_model, cfg.d_ff
    p = {
        "encoder.tok_emb": _xavier(rng, cfg.vocab_size, d),
        "encoder.pos_emb": _xavier(rng, cfg.max_len, d),
    }
    for i in range(cfg.n_layers):
        pre = f"encoder.layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.{name}"] = _xavier(rng, d, d)
            p[f"{pre}.b{name[1]}"] = Tensor(np.zeros(d))
        p[f"{pre}.ln1.gain"] = Tensor(np.ones(d))
        p[f"{pre}.ln1.bias"] = Tensor(np.zeros(d))
        p[f"{pre}.ln2.gain"] = Tensor(np.ones(d))
        p[f"{pre}.ln2.bias"] = Tensor(np.zeros(d))
        p[f"{pre}.ff.w1"] = _xavier(rng, d, dff)
        p[f"{pre}.ff.b1"] = Tensor(np.zeros(dff))
        p[f"{pre}.ff.w2"] = _xavier(rng, dff, d)
        p[f"{pre}.ff.b2"] = Tensor(np.zeros(d))
    p["encoder.final_ln.gain"] = Tensor(np.ones(d))
    p["encoder.final_ln.bias"] = Tensor(np.zeros(d))
    return p


def encode(seq: MarkedSequence, cfg: EncoderConfig, params: dict[str, Tensor]) -> EncoderOutput:
    """Run the encoder on a marked sequence.

    Pre-layer-norm residual blocks with relu feed-forward; A is the mean over
    heads of the last layer's attention.
    """
    ids = seq.token_ids
    L = len(ids)
    if L > cfg.max_len:
        raise EncoderError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if L and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise EncoderError(f"token id out of range for vocab of {cfg.vocab_size}")
    d, nh = cfg.d_model, cfg.n_heads
    dk = d // nh

    x = ad.embedding_gather(params["encoder.tok_emb"], ids)
    if cfg.use_positions:
        x = ad.add(x, ad.slice_axis(params["encoder.pos_emb"], 0, 0, L))

    attn = None
    for i in range(cfg.n_layers):
        pre = f"encoder.layer{i}"
        h = ad.layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])

        def heads(t):  # (L, d) -> (nh, L, dk)
            return ad.transpose(ad.reshape(t, (L, nh, dk)), (1, 0, 2))

        q = heads(ad.add(ad.matmul(h, params[f"{pre}.wq"]), params[f"{pre}.bq"]))
        k = heads(ad.add(ad.matmul(h, params[f"{pre}.wk"]), params[f"{pre}.bk"]))
        v = heads(ad.add(ad.matmul(h, params[f"{pre}.wv"]), params[f"{pre}.bv"]))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dk))
        attn = ad.softmax(scores, axis=-1)  # (nh, L, L)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (1, 0, 2)), (L, d))
        x = ad.add(x, ad.add(ad.matmul(ctx, params[f"{pre}.wo"]), params[f"{pre}.bo"]))

        h2 = ad.layer_norm(x, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"])
        ff = ad.relu(ad.add(ad.matmul(h2, params[f"{pre}.ff.w1"]), params[f"{pre}.ff.b1"]))
        x = ad.add(x, ad.add(ad.matmul(ff, params[f"{pre}.ff.w2"]), params[f"{pre}.ff.b2"]))

    H = ad.layer_norm(x, params["encoder.final_ln.gain"], params["encoder.final_ln.bias"])
    A = ad.reduce_mean(attn, axis=0)
    return EncoderOutput(H=H, A=A)


def _marker_positions(entity: Entity, seq: MarkedSequence) -> list[int]:
    return [seq.mention_start_pos[(entity.id, j)] for j in range(len(entity.mentions))]


def entity_embedding(entity: Entity, seq: MarkedSequence, out: EncoderOutput) -> Tensor:
    """Coordinatewise logsumexp over the entity's mention start-marker rows of H."""
    rows = ad.gather_rows(out.H, _marker_positions(entity, seq))
    return ad.logsumexp(rows, axis=0)


def entity_attention(entity: Entity, seq: MarkedSequence, out: EncoderOutput) -> Tensor:
    """Mean over mentions of the attention row at each start-marker position."""
    rows = ad.gather_rows(out.A, _marker_positions(entity, seq))
    return ad.reduce_mean(rows, axis=0)


def entity_tables(doc, seq: MarkedSequence, out: EncoderOutput) -> tuple[Tensor, Tensor]:
    """Stacked per-entity embeddings (E, d) and attention distributions (E, L)."""
    embs = ad.stack([entity_embedding(e, seq, out) for e in doc.entities])
    attns = ad.stack([entity_attention(e, seq, out) for e in doc.entities])
    return embs, attns


def context_embedding(a_head: Tensor, a_tail: Tensor, H: Tensor) -> Tensor:
    """Pair context c = H^T w with w = (a_head * a_tail) normalized to sum 1."""
    L = H.shape[0]
    c = context_embeddings(ad.reshape(a_head, (1, L)), ad.reshape(a_tail, (1, L)), H)
    return ad.reshape(c, (H.shape[1],))


def context_embeddings(A_heads: Tensor, A_tails: Tensor, H: Tensor) -> Tensor:
    """Stacked Eq-style context embeddings for P pairs: (P, L) x 2 -> (P, d).

    Rows with a zero product mass cannot occur under softmax attention, but
    the operation stays total: such rows fall back to uniform weights.
    """
    raw = ad.mul(A_heads, A_tails)  # (P, L)
    denom = ad.reduce_sum(raw, axis=1, keepdims=True)  # (P, 1)
    zero = denom.data == 0.0
    if zero.any():
        log.warning("context_embeddings: %d pair(s) with zero attention overlap, "
                    "falling back to uniform weights", int(zero.sum()))
        L = H.shape[0]
        safe = ad.add(denom, zero.astype(np.float64))
        w = ad.add(ad.div(raw, safe), (zero / L) * np.ones((1, L)))
    else:
        w = ad.div(raw, denom)
    return ad.matmul(w, H)
