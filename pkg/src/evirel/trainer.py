"""Joint multi-task training loop.

Loss per batch is the summed adaptive-thresholding relation loss plus a
weighted evidence BCE, normalized by the batch's candidate-pair count.
Optimization is adaptive-moment gradient descent with decoupled weight
decay, global-norm gradient clipping, and a linear warmup/decay schedule.
Early stopping tracks plain relation F1 on the development split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import rel_head as rh
from . import evi_head as ev
from . import rules as rules_mod
from .autodiff import Tape, Tensor
from .corpus import Document, pair_label_matrix, positive_pairs
from .metrics import gold_facts, re_f1
from .model import JointModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_encoder: float = 5e-5
    lr_heads: float = 1e-4
    warmup_fraction: float = 0.06
    batch_docs: int = 4
    max_epochs: int = 30
    evi_loss_weight: float = 0.1
    seed: int = 0
    no_joint: bool = False
    patience: int = 5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction {self.warmup_fraction} outside (0,1)")
        for name in ("lr_encoder", "lr_heads", "batch_docs", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    best_dev_f1: float = -1.0
    best_epoch: int = -1
    best_snapshot: dict | None = None
    log_rows: list = field(default_factory=list)


def lr_factor(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Piecewise-linear schedule: 0 -> 1 over the warmup steps, then 1 -> 0."""
    warmup = max(1, round(warmup_fraction * total_steps))
    if step <= warmup:
        return step / warmup
    if total_steps <= warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


class AdamW:
    """Adaptive moments with decoupled weight decay and per-group learning rates.

    Parameters whose gradient is absent or identically zero are skipped
    entirely, including their weight decay.
    """

    def __init__(self, named_params, cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.t = {name: 0 for name, p in self.named_params}

    def clip_gradients(self) -> float:
        total = 0.0
        for _, p in self.named_params:
            if p.grad is not None:
                total += float((p.grad * p.grad).sum())
        norm = np.sqrt(total)
        if self.cfg.clip_norm > 0 and norm > self.cfg.clip_norm:
            scale = self.cfg.clip_norm / norm
            for _, p in self.named_params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self, factor: float):
        c = self.cfg
        for name, p in self.named_params:
            g = p.grad
            if g is None or not np.any(g):
                continue
            lr = (c.lr_encoder if name.startswith("encoder.") else c.lr_heads) * factor
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * (g * g)
            mhat = self.m[name] / (1 - c.beta1 ** t)
            vhat = self.v[name] / (1 - c.beta2 ** t)
            p.data = p.data - lr * (mhat / (np.sqrt(vhat) + c.eps) + c.weight_decay * p.data)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


def _evidence_labels(doc: Document, source: str, provider) -> dict:
    """Evidence sets for training, per positive pair; empty sets mean 'skip'."""
    pos = positive_pairs(doc)
    if source == "gold":
        return dict(pos)
    if source == "silver":
        provider = provider or rules_mod.IdentityCoref()
        return {lab.pair: lab.evidence
                for lab in rules_mod.silver_labels(doc, provider, sorted(pos))}
    raise TrainingError(f"unknown training evidence source '{source}'")


def doc_losses(model: JointModel, doc: Document, evi_labels: dict | None,
               no_joint: bool) -> tuple[Tensor, Tensor | None, int, int]:
    """Relation and evidence loss terms for one document.

    Returns (relation loss, evidence loss or None, candidate pair count,
    evidence term count).
    """
    forward = model.forward(doc, with_evidence=not no_joint)
    labels = pair_label_matrix(doc, len(model.relations))
    loss_re = rh.atl_loss_batch(forward.rel_logits, labels)
    loss_evi = None
    n_terms = 0
    if not no_joint:
        n = doc.n_sentences
        pair_index = {pair: i for i, pair in enumerate(forward.pairs)}
        rows, mat = [], []
        for pair, evidence in sorted((evi_labels or {}).items()):
            if not evidence:  # missing annotation is not negative evidence
                continue
            rows.append(pair_index[pair])
            row = np.zeros(n)
            row[sorted(evidence)] = 1.0
            mat.append(row)
        if rows:
            loss_evi = ev.evi_loss(forward.evi_logits, rows, np.stack(mat))
            n_terms = len(rows) * n
    return loss_re, loss_evi, len(forward.pairs), n_terms


def joint_loss(model: JointModel, docs, evi_labels_by_doc: dict, weight: float,
               no_joint: bool = False) -> Tensor:
    """Summed objective over a batch: L_RE + weight * L_Evi (L_RE alone when no_joint)."""
    total = None
    for doc in docs:
        loss_re, loss_evi, _, _ = doc_losses(model, doc, evi_labels_by_doc.get(doc.doc_id),
                                             no_joint)
        term = loss_re
        if loss_evi is not None and weight != 0.0:
            term = ad.add(term, ad.scale(loss_evi, weight))
        total = term if total is None else ad.add(total, term)
    return total


def dev_relation_f1(model: JointModel, dev_docs) -> float:
    """Plain relation micro-F1 of the thresholded original-document scores."""
    pred = set()
    for doc in dev_docs:
        forward = model.score_document(doc, with_evidence=False)
        scores = forward.scores()
        for i, (h, t) in enumerate(forward.pairs):
            for r in rh.predict(scores[i]):
                pred.add((doc.doc_id, h, t, r))
    return re_f1(pred, gold_facts(dev_docs)).f1


def train(model: JointModel, train_docs, dev_docs, cfg: TrainConfig,
          evidence_source: str = "gold", provider=None,
          log_path=None) -> TrainState:
    """Train in place; the model ends up holding the best-dev-F1 parameters."""
    if not train_docs or not dev_docs:
        raise TrainingError("train and dev splits must both be non-empty")
    rng = ad.make_rng(cfg.seed)
    evi_labels = {}
    if not cfg.no_joint:
        for doc in train_docs:
            evi_labels[doc.doc_id] = _evidence_labels(doc, evidence_source, provider)
        if not any(any(ev_ for ev_ in labs.values()) for labs in evi_labels.values()):
            raise TrainingError(
                "no usable evidence labels in the training split; supply gold evidence, "
                "use the silver source, or set no_joint")

    optimizer = AdamW(model.param_items(), cfg)
    steps_per_epoch = (len(train_docs) + cfg.batch_docs - 1) // cfg.batch_docs
    total_steps = steps_per_epoch * cfg.max_epochs
    state = TrainState()
    epochs_since_best = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_docs))
        epoch_re, epoch_evi, last_lr = 0.0, 0.0, 0.0
        for b in range(steps_per_epoch):
            batch = [train_docs[i] for i in order[b * cfg.batch_docs:(b + 1) * cfg.batch_docs]]
            state.step += 1
            with Tape() as tape:
                # the step objective normalizes each task by its own term
                # count so gradient scale is stable across batch compositions
                re_total = evi_total = None
                n_pairs = n_evi = 0
                for doc in batch:
                    loss_re, loss_evi, pairs, terms = doc_losses(
                        model, doc, evi_labels.get(doc.doc_id), cfg.no_joint)
                    n_pairs += pairs
                    re_total = loss_re if re_total is None else ad.add(re_total, loss_re)
                    if loss_evi is not None and cfg.evi_loss_weight != 0.0:
                        n_evi += terms
                        evi_total = loss_evi if evi_total is None \
                            else ad.add(evi_total, loss_evi)
                re_val = re_total.item()
                evi_val = evi_total.item() if evi_total is not None else 0.0
                loss = ad.scale(re_total, 1.0 / n_pairs)
                if evi_total is not None:
                    loss = ad.add(loss, ad.scale(evi_total, cfg.evi_loss_weight / n_evi))
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss at step {state.step} "
                        f"(docs: {[d.doc_id for d in batch]})")
                tape.backward(loss)
            optimizer.clip_gradients()
            factor = lr_factor(state.step, total_steps, cfg.warmup_fraction)
            optimizer.step(factor)
            optimizer.zero_grad()
            epoch_re += re_val
            epoch_evi += evi_val
            last_lr = cfg.lr_heads * factor

        dev_f1 = dev_relation_f1(model, dev_docs)
        row = {"epoch": epoch, "step": state.step,
               "loss_re": epoch_re / len(train_docs),
               "loss_evi": epoch_evi / len(train_docs),
               "dev_f1": dev_f1, "lr": last_lr}
        state.log_rows.append(row)
        log.info("epoch %d: loss_re %.4f loss_evi %.4f dev_f1 %.4f",
                 epoch, row["loss_re"], row["loss_evi"], dev_f1)
        if dev_f1 >= state.best_dev_f1:
            # ties advance the snapshot too: the evidence head keeps
            # improving after the relation metric plateaus
            improved = dev_f1 > state.best_dev_f1
            state.best_dev_f1 = dev_f1
            state.best_epoch = epoch
            state.best_snapshot = model.snapshot()
            if improved:
                epochs_since_best = 0
            else:
                epochs_since_best += 1
        else:
            epochs_since_best += 1
        if epochs_since_best >= cfg.patience:
            break

    if state.best_snapshot is not None:
        model.restore(state.best_snapshot)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            for row in state.log_rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    return state
