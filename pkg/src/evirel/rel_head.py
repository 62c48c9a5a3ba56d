"""Context-aware bilinear relation classifier with an adaptive threshold class.

Every pair gets |R| relation logits plus one extra TH logit whose class is
learned like any other; prediction scores are threshold-relative,
S_r = y_r - y_TH, and a relation is predicted iff S_r > 0. The training
objective pushes positive-class logits above TH and negative-class logits
below it via two masked softmax cross-entropy terms.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Logit offset that empties a class out of a masked softmax; exp underflows
# to exactly 0 in float64 while the logit itself stays finite.
_MASK_BIG = 1e30


class RelHead:
    """Parameters: four d x d projections, |R|+1 bilinear forms, per-class bias."""

    def __init__(self, w_h: Tensor, w_t: Tensor, w_ch: Tensor, w_ct: Tensor,
                 w_r: Tensor, b_r: Tensor):
        self.w_h, self.w_t, self.w_ch, self.w_ct = w_h, w_t, w_ch, w_ct
        self.w_r, self.b_r = w_r, b_r
        if w_r.shape[0] != b_r.shape[0]:
            raise ad.ShapeMismatch(f"rel head: {w_r.shape[0]} forms vs {b_r.shape[0]} biases")
        self.n_classes = w_r.shape[0]  # |R| + 1, TH last
        self.n_relations = self.n_classes - 1

    @classmethod
    def init(cls, d: int, n_relations: int, rng) -> "RelHead":
        def mat():
            bound = np.sqrt(6.0 / (2 * d))
            return Tensor(rng.uniform(-bound, bound, size=(d, d)))

        w_r = Tensor(rng.uniform(-np.sqrt(6.0 / (2 * d)), np.sqrt(6.0 / (2 * d)),
                                 size=(n_relations + 1, d, d)))
        return cls(mat(), mat(), mat(), mat(), w_r, Tensor(np.zeros(n_relations + 1)))

    def params(self) -> dict[str, Tensor]:
        return {"rel_head.w_h": self.w_h, "rel_head.w_t": self.w_t,
                "rel_head.w_ch": self.w_ch, "rel_head.w_ct": self.w_ct,
                "rel_head.w_r": self.w_r, "rel_head.b_r": self.b_r}

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "RelHead":
        return cls(params["rel_head.w_h"], params["rel_head.w_t"],
                   params["rel_head.w_ch"], params["rel_head.w_ct"],
                   params["rel_head.w_r"], params["rel_head.b_r"])


def pair_repr(head: RelHead, e_heads: Tensor, e_tails: Tensor, contexts: Tensor):
    """z_h = tanh(e_h W_h + c W_ch), z_t likewise; stacked over pairs (P, d)."""
    z_h = ad.tanh(ad.add(ad.matmul(e_heads, head.w_h), ad.matmul(contexts, head.w_ch)))
    z_t = ad.tanh(ad.add(ad.matmul(e_tails, head.w_t), ad.matmul(contexts, head.w_ct)))
    return z_h, z_t


def relation_logits(head: RelHead, z_h: Tensor, z_t: Tensor) -> Tensor:
    """Per-class bilinear logits y[p, c] = z_h[p] W_c z_t[p] + b_c, shape (P, |R|+1)."""
    p, d = z_h.shape
    c = head.n_classes
    # z_h W_c z_t for all classes at once: (P,d) @ (d, C*d) -> (P,C,d), dot z_t
    w_flat = ad.reshape(ad.transpose(head.w_r, (1, 0, 2)), (d, c * d))
    left = ad.reshape(ad.matmul(z_h, w_flat), (p, c, d))
    prods = ad.reduce_sum(ad.mul(left, ad.reshape(z_t, (p, 1, d))), axis=2)
    return ad.add(prods, head.b_r)


def scores_from_logits(logits: np.ndarray) -> np.ndarray:
    """Threshold-relative scores S_r = y_r - y_TH, shape (..., |R|)."""
    return logits[..., :-1] - logits[..., -1:]


def predict(scores: np.ndarray) -> set[int]:
    """Relations scored strictly above the threshold class; empty set means NA."""
    return {int(r) for r in np.nonzero(scores > 0.0)[0]}


def atl_loss_batch(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Adaptive-thresholding loss summed over pairs.

    logits: (P, |R|+1) with TH last; labels: binary (P, |R|). For each pair,
    term one is a softmax cross-entropy over positives + TH for each positive
    class, term two ranks TH above the negative classes. Pairs with no
    positive class contribute only term two.
    """
    p, n_cls = logits.shape
    n_rel = n_cls - 1
    if labels.shape != (p, n_rel):
        raise ad.ShapeMismatch(f"atl_loss: logits {logits.shape} vs labels {labels.shape}")
    th_col = np.zeros((p, 1))
    pos_mask = np.concatenate([labels, np.ones((p, 1))], axis=1)  # positives + TH
    neg_mask = np.concatenate([1.0 - labels, np.ones((p, 1))], axis=1)  # negatives + TH

    logit1 = ad.add(logits, -_MASK_BIG * (1.0 - pos_mask))
    logp1 = ad.sub(logit1, ad.logsumexp(logit1, axis=1, keepdims=True))
    term1 = ad.scale(ad.reduce_sum(ad.mul(logp1, np.concatenate([labels, th_col], axis=1))), -1.0)

    logit2 = ad.add(logits, -_MASK_BIG * (1.0 - neg_mask))
    logp2 = ad.sub(logit2, ad.logsumexp(logit2, axis=1, keepdims=True))
    th_only = np.concatenate([np.zeros((p, n_rel)), np.ones((p, 1))], axis=1)
    term2 = ad.scale(ad.reduce_sum(ad.mul(logp2, th_only)), -1.0)

    return ad.add(term1, term2)


def atl_loss(logits: Tensor, positives) -> Tensor:
    """Single-pair adaptive-thresholding loss; positives is a set of relation ids."""
    n_cls = logits.shape[0]
    labels = np.zeros((1, n_cls - 1))
    for r in positives:
        labels[0, r] = 1.0
    return atl_loss_batch(ad.reshape(logits, (1, n_cls)), labels)
