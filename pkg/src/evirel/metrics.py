"""Evaluation metrics: micro F1 variants for relations and evidence.

Facts are (doc_id, head, tail, relation) tuples; evidence is scored over
(doc_id, head, tail, sentence) tuples. The train-overlap filter removes
facts whose (head name, tail name, relation) combination appears in the
training annotation from both prediction and gold before scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import Document
from .rules import BRIDGE, COOCCUR, COREF, NONE


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, n_pred: int, n_gold: int) -> "PRF":
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1)

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def re_f1(pred, gold) -> PRF:
    """Exact-match micro F1 over (doc, head, tail, relation) tuples."""
    pred, gold = set(pred), set(gold)
    return PRF.from_counts(len(pred & gold), len(pred), len(gold))


def train_fact_keys(train_docs, vocab) -> set:
    """(head name, tail name, relation name) combinations seen in training labels."""
    keys = set()
    for doc in train_docs:
        for f in doc.facts:
            rname = vocab.names[f.relation]
            for mh in doc.entities[f.head].mentions:
                for mt in doc.entities[f.tail].mentions:
                    keys.add((mh.name, mt.name, rname))
    return keys


def _fact_in_train(doc: Document, head: int, tail: int, rname: str, train_keys: set) -> bool:
    return any((mh.name, mt.name, rname) in train_keys
               for mh in doc.entities[head].mentions
               for mt in doc.entities[tail].mentions)


def ign_f1(pred, gold, docs_by_id: dict, vocab, train_keys: set) -> PRF:
    """Micro F1 after dropping train-overlapping facts from both pred and gold."""
    def keep(fact):
        doc_id, h, t, r = fact
        return not _fact_in_train(docs_by_id[doc_id], h, t, vocab.names[r], train_keys)

    return re_f1({f for f in pred if keep(f)}, {f for f in gold if keep(f)})


def pair_is_intra(doc: Document, head: int, tail: int) -> bool:
    """True when any sentence contains proper-noun mentions of both entities."""
    sents_h = {m.sent_id for m in doc.entities[head].mentions}
    return any(m.sent_id in sents_h for m in doc.entities[tail].mentions)


def intra_inter_f1(pred, gold, docs_by_id: dict) -> tuple[PRF, PRF]:
    """F1 on co-occurring (intra) pairs and on pairs that never co-occur (inter)."""
    def split(facts):
        intra, inter = set(), set()
        for fact in facts:
            doc_id, h, t, _ = fact
            (intra if pair_is_intra(docs_by_id[doc_id], h, t) else inter).add(fact)
        return intra, inter

    pred_intra, pred_inter = split(pred)
    gold_intra, gold_inter = split(gold)
    return re_f1(pred_intra, gold_intra), re_f1(pred_inter, gold_inter)


def evi_f1(pred_evidence: dict, gold_evidence: dict, scope) -> PRF:
    """Micro F1 over (doc, head, tail, sentence) tuples restricted to scoped pairs.

    Both evidence maps go from (doc_id, head, tail) to a set of sentence ids;
    scope is the set of pairs to score (gold-positive pairs for the
    positive-pair variant, predicted-positive pairs for the leaderboard one).
    """
    tp = n_pred = n_gold = 0
    for key in scope:
        p = set(pred_evidence.get(key, ()))
        g = set(gold_evidence.get(key, ()))
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    return PRF.from_counts(tp, n_pred, n_gold)


def breakdown(pred, gold, categories: dict) -> dict[str, PRF]:
    """re_f1 restricted to the gold facts (and predictions) of each rule category.

    categories maps (doc_id, head, tail) to a category name; facts on pairs
    without an entry count as NONE. Categories with no gold facts are omitted.
    """
    out = {}
    for cat in (COOCCUR, COREF, BRIDGE, NONE):
        gold_c = {f for f in gold if categories.get((f[0], f[1], f[2]), NONE) == cat}
        if not gold_c:
            continue
        pred_c = {f for f in pred if categories.get((f[0], f[1], f[2]), NONE) == cat}
        out[cat] = re_f1(pred_c, gold_c)
    return out


@dataclass
class EvalReport:
    f1: PRF
    ign_f1: PRF | None = None
    intra_f1: PRF | None = None
    inter_f1: PRF | None = None
    evi_f1: PRF | None = None
    pos_evi_f1: PRF | None = None
    by_category: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"f1": self.f1.as_dict()}
        for name in ("ign_f1", "intra_f1", "inter_f1", "evi_f1", "pos_evi_f1"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v.as_dict()
        if self.by_category:
            out["by_category"] = {k: v.as_dict() for k, v in sorted(self.by_category.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1, sort_keys=True)

    def to_table(self) -> str:
        rows = [("metric", "P", "R", "F1")]
        def add(name, prf):
            if prf is not None:
                rows.append((name, f"{prf.precision:.4f}", f"{prf.recall:.4f}",
                             f"{prf.f1:.4f}"))
        add("F1", self.f1)
        add("Ign F1", self.ign_f1)
        add("Intra F1", self.intra_f1)
        add("Inter F1", self.inter_f1)
        add("Evi F1", self.evi_f1)
        add("PosEvi F1", self.pos_evi_f1)
        for cat in sorted(self.by_category):
            add(f"F1[{cat}]", self.by_category[cat])
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines)


def gold_facts(docs) -> set:
    return {(d.doc_id, f.head, f.tail, f.relation) for d in docs for f in d.facts}


def gold_evidence_map(docs) -> dict:
    """Union of evidence over each positive pair's facts."""
    out: dict[tuple, set] = {}
    for d in docs:
        for f in d.facts:
            out.setdefault((d.doc_id, f.head, f.tail), set()).update(f.evidence)
    return out
