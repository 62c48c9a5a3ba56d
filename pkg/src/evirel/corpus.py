"""Annotated-document data model and DocRED-layout JSON interchange.

A corpus file is a JSON array of document objects with the fields
title / sents / vertexSet / labels (labels carry h, t, r, evidence).
Real DocRED splits load unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, MARKER = 0, 1, 2
RESERVED_TOKENS = ["<pad>", "<unk>", "*"]


class CorpusError(ValueError):
    """Schema or invariant violation in a corpus, named by document and field."""


@dataclass(frozen=True)
class Mention:
    entity_id: int
    sent_id: int
    start: int
    end: int  # half-open token offsets within the sentence
    name: str
    etype: str = ""


@dataclass(frozen=True)
class Sentence:
    index: int
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Entity:
    id: int
    mentions: tuple[Mention, ...]


@dataclass(frozen=True)
class RelationFact:
    head: int
    tail: int
    relation: int
    evidence: frozenset[int] = frozenset()


@dataclass
class Document:
    doc_id: str
    sentences: list[Sentence]
    entities: list[Entity]
    facts: list[RelationFact]

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def n_entities(self) -> int:
        return len(self.entities)


@dataclass
class RelationVocab:
    """Ordered non-NA relation names; NA is implicit (the empty prediction)."""

    names: list[str]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise CorpusError("relation names must be unique")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self._index[name]


@dataclass
class TokenVocab:
    """Token-string to id map with reserved PAD/UNK/MARKER ids in front."""

    tokens: list[str]

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}
        for i, t in enumerate(RESERVED_TOKENS):
            if self.tokens[i] != t:
                raise CorpusError("token vocab must start with the reserved tokens")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    @classmethod
    def build(cls, docs) -> "TokenVocab":
        seen = set()
        for doc in docs:
            for sent in doc.sentences:
                seen.update(sent.tokens)
        seen -= set(RESERVED_TOKENS)
        return cls(RESERVED_TOKENS + sorted(seen))


@dataclass
class MarkedSequence:
    """Token ids after '*' markers are inserted around every mention."""

    token_ids: np.ndarray
    mention_start_pos: dict[tuple[int, int], int]  # (entity_id, mention_idx) -> marker pos
    sent_spans: list[tuple[int, int]]  # half-open, markers belong to their sentence

    def __len__(self):
        return len(self.token_ids)


# ---------------------------------------------------------------------------
# validation

def validate_document(doc: Document):
    """Check all structural invariants; raises CorpusError naming the culprit."""
    n = doc.n_sentences
    for i, sent in enumerate(doc.sentences):
        if sent.index != i:
            raise CorpusError(f"doc '{doc.doc_id}': sentence {i} has index {sent.index}")
        if not sent.tokens:
            raise CorpusError(f"doc '{doc.doc_id}': sentence {i} is empty")
    for ent in doc.entities:
        if not ent.mentions:
            raise CorpusError(f"doc '{doc.doc_id}': entity {ent.id} has no mentions")
        for j, m in enumerate(ent.mentions):
            if m.entity_id != ent.id:
                raise CorpusError(
                    f"doc '{doc.doc_id}': entity {ent.id} mention {j} carries id {m.entity_id}")
            if not 0 <= m.sent_id < n:
                raise CorpusError(
                    f"doc '{doc.doc_id}': entity {ent.id} mention {j} sent_id {m.sent_id} "
                    f"out of range [0,{n})")
            slen = len(doc.sentences[m.sent_id].tokens)
            if not 0 <= m.start < m.end <= slen:
                raise CorpusError(
                    f"doc '{doc.doc_id}': entity {ent.id} mention {j} span "
                    f"[{m.start},{m.end}) invalid for sentence {m.sent_id} of length {slen}")
    e = doc.n_entities
    for k, fact in enumerate(doc.facts):
        if not (0 <= fact.head < e and 0 <= fact.tail < e):
            raise CorpusError(f"doc '{doc.doc_id}': fact {k} entity index out of range [0,{e})")
        if fact.head == fact.tail:
            raise CorpusError(f"doc '{doc.doc_id}': fact {k} has head == tail == {fact.head}")
        for s in fact.evidence:
            if not 0 <= s < n:
                raise CorpusError(
                    f"doc '{doc.doc_id}': fact {k} evidence sentence {s} out of range [0,{n})")


# ---------------------------------------------------------------------------
# JSON interchange

def parse_corpus(text) -> tuple[list[Document], RelationVocab]:
    """Parse DocRED-layout JSON (str or bytes) into documents plus the relation vocab.

    Relation names are collected across all labels and ordered alphabetically;
    evidence lists are preserved verbatim (as sets).
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorpusError(f"invalid JSON: {e}") from None
    if not isinstance(data, list):
        raise CorpusError("corpus must be a JSON array of documents")

    raw = []
    all_names = set()
    for idx, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise CorpusError(f"document {idx}: expected an object")
        doc_id = obj.get("title", f"doc{idx}")
        for key in ("sents", "vertexSet"):
            if key not in obj:
                raise CorpusError(f"doc '{doc_id}': missing field '{key}'")
        sentences = []
        for i, toks in enumerate(obj["sents"]):
            if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                raise CorpusError(f"doc '{doc_id}': sents[{i}] must be a list of strings")
            sentences.append(Sentence(index=i, tokens=tuple(toks)))
        entities = []
        for eid, group in enumerate(obj["vertexSet"]):
            mentions = []
            for j, m in enumerate(group):
                try:
                    mentions.append(Mention(
                        entity_id=eid,
                        sent_id=int(m["sent_id"]),
                        start=int(m["pos"][0]),
                        end=int(m["pos"][1]),
                        name=str(m["name"]),
                        etype=str(m.get("type", "")),
                    ))
                except (KeyError, TypeError, IndexError) as e:
                    raise CorpusError(
                        f"doc '{doc_id}': entity {eid} mention {j} malformed: {e}") from None
            entities.append(Entity(id=eid, mentions=tuple(mentions)))
        labels = []
        for k, lab in enumerate(obj.get("labels", [])):
            try:
                labels.append((int(lab["h"]), int(lab["t"]), str(lab["r"]),
                               frozenset(int(s) for s in lab.get("evidence", []))))
            except (KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"doc '{doc_id}': label {k} malformed: {e}") from None
            all_names.add(labels[-1][2])
        raw.append((doc_id, sentences, entities, labels))

    vocab = RelationVocab(sorted(all_names))
    docs = []
    for doc_id, sentences, entities, labels in raw:
        facts = [RelationFact(head=h, tail=t, relation=vocab.id_of(r), evidence=ev)
                 for h, t, r, ev in labels]
        doc = Document(doc_id=doc_id, sentences=sentences, entities=entities, facts=facts)
        validate_document(doc)
        docs.append(doc)
    return docs, vocab


def document_to_json(doc: Document, vocab: RelationVocab) -> dict:
    return {
        "title": doc.doc_id,
        "sents": [list(s.tokens) for s in doc.sentences],
        "vertexSet": [
            [{"name": m.name, "sent_id": m.sent_id, "pos": [m.start, m.end], "type": m.etype}
             for m in ent.mentions]
            for ent in doc.entities
        ],
        "labels": [
            {"h": f.head, "t": f.tail, "r": vocab.names[f.relation],
             "evidence": sorted(f.evidence)}
            for f in doc.facts
        ],
    }


def serialize_corpus(docs, vocab: RelationVocab) -> str:
    return json.dumps([document_to_json(d, vocab) for d in docs], indent=1)


# ---------------------------------------------------------------------------
# marker insertion and pair enumeration

def insert_markers(doc: Document, vocab: TokenVocab) -> MarkedSequence:
    """Insert a '*' marker before and after every mention.

    At a shared boundary, closing markers precede opening markers; for
    identical spans of different entities, markers nest ordered by entity id.
    Unknown tokens map to the reserved UNK id.
    """
    by_sentence: dict[int, list[tuple[Mention, int]]] = {}
    for ent in doc.entities:
        for j, m in enumerate(ent.mentions):
            by_sentence.setdefault(m.sent_id, []).append((m, j))

    ids: list[int] = []
    start_pos: dict[tuple[int, int], int] = {}
    sent_spans: list[tuple[int, int]] = []
    for sent in doc.sentences:
        span_begin = len(ids)
        mentions = by_sentence.get(sent.index, [])
        # closes first at each boundary; inner mentions close before outer,
        # outer mentions open before inner
        opens_at: dict[int, list] = {}
        closes_at: dict[int, list] = {}
        for m, j in mentions:
            opens_at.setdefault(m.start, []).append((m, j))
            closes_at.setdefault(m.end, []).append((m, j))
        for p in range(len(sent.tokens) + 1):
            for m, j in sorted(closes_at.get(p, []),
                               key=lambda mj: (-mj[0].start, -mj[0].entity_id)):
                ids.append(MARKER)
            for m, j in sorted(opens_at.get(p, []),
                               key=lambda mj: (-mj[0].end, mj[0].entity_id)):
                start_pos[(m.entity_id, j)] = len(ids)
                ids.append(MARKER)
            if p < len(sent.tokens):
                ids.append(vocab.id_of(sent.tokens[p]))
        sent_spans.append((span_begin, len(ids)))

    return MarkedSequence(token_ids=np.asarray(ids, dtype=np.intp),
                          mention_start_pos=start_pos, sent_spans=sent_spans)


def candidate_pairs(doc: Document) -> list[tuple[int, int]]:
    """All ordered entity pairs (head, tail) with head != tail, head-major order."""
    e = doc.n_entities
    return [(h, t) for h in range(e) for t in range(e) if h != t]


def positive_pairs(doc: Document) -> dict[tuple[int, int], frozenset[int]]:
    """Pairs holding at least one relation, mapped to the union of their evidence."""
    out: dict[tuple[int, int], set[int]] = {}
    for f in doc.facts:
        out.setdefault((f.head, f.tail), set()).update(f.evidence)
    return {pair: frozenset(ev) for pair, ev in out.items()}


def pair_label_matrix(doc: Document, n_relations: int) -> np.ndarray:
    """Binary (n_pairs, n_relations) matrix in candidate_pairs order."""
    pairs = candidate_pairs(doc)
    index = {p: i for i, p in enumerate(pairs)}
    mat = np.zeros((len(pairs), n_relations), dtype=np.float64)
    for f in doc.facts:
        mat[index[(f.head, f.tail)], f.relation] = 1.0
    return mat
