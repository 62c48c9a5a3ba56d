"""Per-(pair, sentence) evidence scorer.

One bilinear form compares each sentence embedding (logsumexp pooling over
the sentence's marked-token rows, markers included) against the pair's
context embedding. A single probability vector is produced per pair,
shared across relations, and the BCE training loss runs only over pairs
that hold at least one relation and have a non-empty evidence annotation.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class EviHead:
    def __init__(self, w_v: Tensor, b_v: Tensor):
        self.w_v = w_v
        self.b_v = b_v

    @classmethod
    def init(cls, d: int, rng) -> "EviHead":
        bound = np.sqrt(6.0 / (2 * d))
        return cls(Tensor(rng.uniform(-bound, bound, size=(d, d))), Tensor(np.zeros(())))

    def params(self) -> dict[str, Tensor]:
        return {"evi_head.w_v": self.w_v, "evi_head.b_v": self.b_v}

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "EviHead":
        return cls(params["evi_head.w_v"], params["evi_head.b_v"])


def sentence_embedding(span: tuple[int, int], H: Tensor) -> Tensor:
    """Coordinatewise logsumexp over the H rows of one marked-coordinate span."""
    start, end = span
    if end <= start:
        raise ValueError(f"sentence span [{start},{end}) is empty")
    return ad.logsumexp(ad.slice_axis(H, 0, start, end - start), axis=0)


def sentence_table(sent_spans, H: Tensor) -> Tensor:
    """Stacked sentence embeddings (N, d)."""
    return ad.stack([sentence_embedding(span, H) for span in sent_spans])


def evidence_logits(head: EviHead, sent_embs: Tensor, contexts: Tensor) -> Tensor:
    """Bilinear logits s_n W_v c + b_v for every (pair, sentence): (P, N)."""
    return ad.add(ad.matmul(ad.matmul(contexts, ad.transpose(head.w_v)),
                            ad.transpose(sent_embs)), head.b_v)


def evidence_prob(head: EviHead, sent_emb: Tensor, context: Tensor) -> Tensor:
    """sigma(s_n W_v c + b_v) for a single sentence and pair."""
    d = sent_emb.shape[0]
    logit = evidence_logits(head, ad.reshape(sent_emb, (1, d)), ad.reshape(context, (1, d)))
    return ad.reshape(ad.sigmoid(logit), ())


def evi_loss(logits: Tensor, pair_rows, labels: np.ndarray) -> Tensor:
    """Summed BCE over the selected pair rows of the (P, N) evidence logits.

    pair_rows indexes pairs that hold a relation and have evidence
    annotation; labels is the matching binary (len(pair_rows), N) matrix.
    Standard BCE is used, with the log applied to both terms.
    """
    if len(pair_rows) == 0:
        return Tensor(0.0)
    picked = ad.gather_rows(logits, list(pair_rows))
    return ad.bce_with_logits(picked, labels)


def predict_evidence(probs: np.ndarray, threshold: float = 0.5) -> set[int]:
    """Sentences with probability at or above the threshold; may be empty."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"evidence threshold {threshold} outside [0, 1]")
    return {int(n) for n in np.nonzero(probs >= threshold)[0]}
