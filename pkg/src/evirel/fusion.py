"""Evidence-fused inference: pseudo documents, score blending, threshold tuning.

For each pair with usable evidence, the kept sentences form a pseudo
document (original order preserved) that is re-marked and re-encoded from
scratch. The pair's two scores combine through a one-parameter blending
layer, P = sigma(S_O + S_E - tau); tau is fit on a development split by
minimizing binary cross-entropy, a strictly convex one-dimensional problem
solved by golden-section search. Pairs without usable evidence fall back to
the original-document decision rule S_O > 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import rules as rules_mod
from .autodiff import _sigmoid
from .corpus import Document, Entity, Mention, RelationFact, Sentence, validate_document
from .evi_head import predict_evidence
from .model import JointModel

log = logging.getLogger(__name__)

MODES = ("full", "nopseudo", "noorigdoc", "noblending", "nojoint")
EVIDENCE_SOURCES = ("model", "rules")

TAU_SEARCH_INTERVAL = (-20.0, 20.0)


class FusionError(ValueError):
    pass


class EvidenceFallback(Exception):
    """The pair has no usable evidence; score it from the original document only."""


@dataclass
class PseudoDocument:
    pair: tuple[int, int]  # head/tail indices in the restricted document
    kept_sentences: list[int]  # original sentence ids, ascending
    document: Document
    entity_map: dict[int, int]  # original entity id -> restricted id


def build_pseudo(doc: Document, pair: tuple[int, int], evidence) -> PseudoDocument:
    """Restrict a document to its evidence sentences for one pair.

    Sentences keep their original order; mentions outside kept sentences are
    dropped and empty entities removed. Raises EvidenceFallback when the
    evidence is empty or the head or tail loses all mentions.
    """
    head, tail = pair
    kept = sorted(s for s in evidence if 0 <= s < doc.n_sentences)
    if not kept:
        raise EvidenceFallback(f"doc '{doc.doc_id}' pair {pair}: empty evidence")
    sent_map = {old: new for new, old in enumerate(kept)}

    entity_map: dict[int, int] = {}
    entities = []
    for ent in doc.entities:
        mentions = tuple(
            Mention(entity_id=len(entities), sent_id=sent_map[m.sent_id],
                    start=m.start, end=m.end, name=m.name, etype=m.etype)
            for m in ent.mentions if m.sent_id in sent_map)
        if mentions:
            entity_map[ent.id] = len(entities)
            entities.append(Entity(id=len(entities), mentions=mentions))
    if head not in entity_map or tail not in entity_map:
        raise EvidenceFallback(
            f"doc '{doc.doc_id}' pair {pair}: head or tail absent from evidence sentences")

    facts = [RelationFact(head=entity_map[f.head], tail=entity_map[f.tail],
                          relation=f.relation,
                          evidence=frozenset(sent_map[s] for s in f.evidence
                                             if s in sent_map))
             for f in doc.facts if f.head in entity_map and f.tail in entity_map]
    restricted = Document(
        doc_id=f"{doc.doc_id}#pseudo-{head}-{tail}",
        sentences=[Sentence(index=sent_map[old], tokens=doc.sentences[old].tokens)
                   for old in kept],
        entities=entities,
        facts=facts,
    )
    validate_document(restricted)
    return PseudoDocument(pair=(entity_map[head], entity_map[tail]),
                          kept_sentences=kept, document=restricted, entity_map=entity_map)


@dataclass
class FusedPrediction:
    s_orig: np.ndarray  # (|R|,)
    s_evi: np.ndarray | None  # None when the pair fell back
    probs: np.ndarray  # P_fuse per relation (doc-only pairs carry sigma(S_O))
    predicted: set[int]


def fuse_scores(s_orig: np.ndarray, s_evi: np.ndarray, tau: float) -> FusedPrediction:
    """Blend the two score vectors; predicted iff S_O + S_E > tau (P_fuse > 0.5)."""
    combined = s_orig + s_evi
    probs = _sigmoid(combined - tau)
    predicted = {int(r) for r in np.nonzero(combined > tau)[0]}
    return FusedPrediction(s_orig=s_orig, s_evi=s_evi, probs=probs, predicted=predicted)


def blend_bce(instances, tau: float) -> float:
    """Mean-free BCE of Eq-style fused probabilities at a given tau."""
    total = 0.0
    for s, y in instances:
        x = s - tau
        # stable -log sigma(x) and -log(1 - sigma(x))
        total += np.logaddexp(0.0, -x) if y else np.logaddexp(0.0, x)
    return float(total)


def tune_tau(instances, interval=TAU_SEARCH_INTERVAL, tol: float = 1e-6) -> float:
    """Golden-section minimization of the blending BCE over tau.

    instances is a sequence of (combined score, binary label) for every
    fused (pair, relation) on the development split. The objective is
    strictly convex, so the search converges to the global minimum; if all
    labels agree the optimum sits at an interval boundary, returned with a
    warning.
    """
    instances = list(instances)
    if not instances:
        raise FusionError("tune_tau needs at least one development instance")
    labels = {y for _, y in instances}
    lo, hi = interval
    if labels in ({0}, {1}):
        tau = hi if labels == {0} else lo
        log.warning("tune_tau: all development labels identical, returning boundary %g", tau)
        return float(tau)

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = blend_bce(instances, c), blend_bce(instances, d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = blend_bce(instances, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = blend_bce(instances, d)
    return float((a + b) / 2.0)


# ---------------------------------------------------------------------------
# document scoring and the mode dispatch

@dataclass
class PairResult:
    s_orig: np.ndarray
    s_evi: np.ndarray | None
    evidence: frozenset[int]  # evidence used for the pseudo document
    fallback_reason: str | None = None


def evidence_sets(model: JointModel, doc: Document, forward, source: str,
                  provider=None, evi_threshold: float = 0.5) -> dict:
    """Evidence per candidate pair, from the model head or the silver rules."""
    if source == "model":
        probs = forward.evidence_probs()
        return {pair: frozenset(predict_evidence(probs[i], evi_threshold))
                for i, pair in enumerate(forward.pairs)}
    if source == "rules":
        provider = provider or rules_mod.IdentityCoref()
        return {pair: lab.evidence
                for pair, lab in rules_mod.categorize_all_pairs(doc, provider).items()}
    raise FusionError(f"unknown evidence source '{source}'")


def score_document_pair_wise(model: JointModel, doc: Document, source: str,
                             provider=None, evi_threshold: float = 0.5,
                             need_evidence: bool = True) -> dict[tuple[int, int], PairResult]:
    """S_O for all pairs plus, where evidence allows, S_E from a pseudo document."""
    forward = model.score_document(doc, with_evidence=(source == "model" and need_evidence))
    s_orig = forward.scores()
    results = {pair: PairResult(s_orig=s_orig[i], s_evi=None, evidence=frozenset())
               for i, pair in enumerate(forward.pairs)}
    if not need_evidence:
        return results

    evidence = evidence_sets(model, doc, forward, source, provider, evi_threshold)
    for pair, ev in evidence.items():
        res = results[pair]
        try:
            pseudo = build_pseudo(doc, pair, ev)
        except EvidenceFallback as e:
            res.fallback_reason = str(e)
            continue
        pf = model.score_document(pseudo.document, with_evidence=False)
        idx = pf.pairs.index(pseudo.pair)
        res.s_evi = pf.scores()[idx]
        res.evidence = frozenset(pseudo.kept_sentences)
    return results


def decide(result: PairResult, mode: str, tau: float) -> tuple[set[int], np.ndarray]:
    """Prediction set and per-relation probabilities/scores for one pair."""
    s_o, s_e = result.s_orig, result.s_evi
    doc_only = {int(r) for r in np.nonzero(s_o > 0.0)[0]}
    if mode == "nopseudo":
        return doc_only, s_o
    if s_e is None:  # fallback pairs always get the doc-only decision
        return doc_only, s_o
    if mode in ("full", "nojoint"):
        fused = fuse_scores(s_o, s_e, tau)
        return fused.predicted, fused.probs
    if mode == "noorigdoc":
        return {int(r) for r in np.nonzero(s_e > 0.0)[0]}, s_e
    if mode == "noblending":
        return doc_only | {int(r) for r in np.nonzero(s_e > 0.0)[0]}, np.maximum(s_o, s_e)
    raise FusionError(f"unknown inference mode '{mode}'")


def inference_pipeline(model: JointModel, docs, evidence_source: str = "model",
                       mode: str = "full", provider=None, evi_threshold: float = 0.5,
                       tau: float | None = None):
    """Score documents and emit per-pair prediction records.

    Returns (records, evidence_used) where records are dicts with title,
    h_idx, t_idx, r (relation name) and score, and evidence_used maps
    (doc_id, head, tail) to the sentence set behind the pair's pseudo
    document. Modes: full, nopseudo, noorigdoc, noblending, nojoint
    (nojoint is full-mode fusion fed by rule evidence for a model trained
    without the evidence task).
    """
    mode = mode.lower()
    if mode not in MODES:
        raise FusionError(f"unknown inference mode '{mode}' (choose from {MODES})")
    if evidence_source not in EVIDENCE_SOURCES:
        raise FusionError(f"unknown evidence source '{evidence_source}'")
    if mode == "nojoint" and evidence_source == "model":
        raise FusionError("mode 'nojoint' requires the rule evidence source")
    if tau is None:
        tau = model.tau if model.tau is not None else 0.0
        if model.tau is None and mode in ("full", "nojoint"):
            log.warning("inference: tau never tuned, using 0.0")

    need_evidence = mode != "nopseudo"
    records = []
    evidence_used = {}
    for doc in docs:
        results = score_document_pair_wise(model, doc, evidence_source, provider,
                                           evi_threshold, need_evidence)
        for (h, t), res in sorted(results.items()):
            predicted, strengths = decide(res, mode, tau)
            if res.evidence:
                evidence_used[(doc.doc_id, h, t)] = res.evidence
            for r in sorted(predicted):
                records.append({"title": doc.doc_id, "h_idx": h, "t_idx": t,
                                "r": model.relations.names[r],
                                "score": float(strengths[r])})
    return records, evidence_used


def records_to_facts(records, relations) -> set:
    return {(rec["title"], rec["h_idx"], rec["t_idx"], relations.id_of(rec["r"]))
            for rec in records}


def tuning_instances(model: JointModel, docs, evidence_source: str = "model",
                     provider=None, evi_threshold: float = 0.5):
    """(combined score, label) pairs for every fused (pair, relation) on a dev split."""
    instances = []
    for doc in docs:
        positives = {(f.head, f.tail, f.relation) for f in doc.facts}
        results = score_document_pair_wise(model, doc, evidence_source, provider,
                                           evi_threshold)
        for (h, t), res in sorted(results.items()):
            if res.s_evi is None:
                continue
            combined = res.s_orig + res.s_evi
            for r in range(len(model.relations)):
                instances.append((float(combined[r]), 1 if (h, t, r) in positives else 0))
    return instances
