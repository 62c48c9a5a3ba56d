"""Joint model: shared encoder, relation head, evidence head, checkpoint I/O."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import evi_head as ev
from . import rel_head as rh
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Document, MarkedSequence, RelationVocab, TokenVocab, candidate_pairs, \
    insert_markers


class DocForward:
    """Everything computed for one document in a single forward pass."""

    def __init__(self, seq, out, pairs, rel_logits, evi_logits):
        self.seq: MarkedSequence = seq
        self.out: enc.EncoderOutput = out
        self.pairs: list[tuple[int, int]] = pairs
        self.rel_logits: Tensor = rel_logits  # (P, |R|+1)
        self.evi_logits: Tensor | None = evi_logits  # (P, N) or None

    def scores(self) -> np.ndarray:
        """Threshold-relative relation scores, (P, |R|)."""
        return rh.scores_from_logits(self.rel_logits.data)

    def evidence_probs(self) -> np.ndarray:
        if self.evi_logits is None:
            raise ValueError("forward pass ran without the evidence head")
        return ad._sigmoid(self.evi_logits.data)


class JointModel:
    def __init__(self, cfg: enc.EncoderConfig, token_vocab: TokenVocab,
                 relations: RelationVocab, params: dict[str, Tensor],
                 tau: float | None = None):
        self.cfg = cfg
        self.token_vocab = token_vocab
        self.relations = relations
        self.params = params
        self.tau = tau

    @classmethod
    def build(cls, cfg: enc.EncoderConfig, token_vocab: TokenVocab,
              relations: RelationVocab, seed: int) -> "JointModel":
        if len(relations) < 1:
            raise ValueError("model needs at least one relation type")
        if cfg.vocab_size != len(token_vocab):
            raise ValueError(f"config vocab_size {cfg.vocab_size} != vocab {len(token_vocab)}")
        rng = ad.make_rng(seed)
        params = enc.init_encoder_params(cfg, rng)
        params.update(rh.RelHead.init(cfg.d_model, len(relations), rng).params())
        params.update(ev.EviHead.init(cfg.d_model, rng).params())
        return cls(cfg, token_vocab, relations, params)

    @property
    def rel_head(self) -> rh.RelHead:
        return rh.RelHead.from_params(self.params)

    @property
    def evi_head(self) -> ev.EviHead:
        return ev.EviHead.from_params(self.params)

    def param_items(self):
        return sorted(self.params.items())

    # -- forward ------------------------------------------------------------

    def forward(self, doc: Document, with_evidence: bool = True,
                pairs: list[tuple[int, int]] | None = None) -> DocForward:
        """Encode a document and score relation (and optionally evidence) for pairs."""
        seq = insert_markers(doc, self.token_vocab)
        out = enc.encode(seq, self.cfg, self.params)
        if pairs is None:
            pairs = candidate_pairs(doc)
        if not pairs:
            raise ValueError(f"doc '{doc.doc_id}': needs at least 2 entities to form pairs")
        ent_emb, ent_attn = enc.entity_tables(doc, seq, out)
        heads = [h for h, _ in pairs]
        tails = [t for _, t in pairs]
        e_h = ad.gather_rows(ent_emb, heads)
        e_t = ad.gather_rows(ent_emb, tails)
        a_h = ad.gather_rows(ent_attn, heads)
        a_t = ad.gather_rows(ent_attn, tails)
        contexts = enc.context_embeddings(a_h, a_t, out.H)
        z_h, z_t = rh.pair_repr(self.rel_head, e_h, e_t, contexts)
        rel_logits = rh.relation_logits(self.rel_head, z_h, z_t)
        evi_logits = None
        if with_evidence:
            sent_embs = ev.sentence_table(seq.sent_spans, out.H)
            evi_logits = ev.evidence_logits(self.evi_head, sent_embs, contexts)
        return DocForward(seq, out, pairs, rel_logits, evi_logits)

    def score_document(self, doc: Document, with_evidence: bool = True) -> DocForward:
        """Forward pass without gradient recording (inference path)."""
        return self.forward(doc, with_evidence=with_evidence)

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        meta = {
            "encoder_config": self.cfg.to_dict(),
            "relations": list(self.relations.names),
            "token_vocab": list(self.token_vocab.tokens),
            "tau": self.tau,
        }
        save_checkpoint(path, dict(self.param_items()), meta)

    @classmethod
    def load(cls, path) -> "JointModel":
        arrays, meta = load_checkpoint(path)
        cfg = enc.EncoderConfig.from_dict(meta["encoder_config"])
        model = cls(cfg, TokenVocab(meta["token_vocab"]), RelationVocab(meta["relations"]),
                    {name: Tensor(a) for name, a in arrays.items()}, meta.get("tau"))
        return model

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, t in self.params.items():
            t.data = snap[name].copy()
