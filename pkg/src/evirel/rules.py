"""Heuristic silver-evidence rules and pair categorization.

Three rules apply in strict precedence; the first non-empty result wins:

  Cooccur  sentences where proper-noun mentions of head and tail co-occur
  Coref    sentences where a coreference provider places both entities
  Bridge   a third entity co-occurring (via the provider) with both head
           and tail; evidence is every sentence it shares with either

Coreference is pluggable: the identity provider uses annotated mentions
only; the lexicon provider additionally scans sentences for alias strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .corpus import Document, positive_pairs, candidate_pairs

COOCCUR, COREF, BRIDGE, NONE = "Cooccur", "Coref", "Bridge", "None"


@dataclass(frozen=True)
class SilverLabel:
    pair: tuple[int, int]
    category: str
    evidence: frozenset[int]
    bridge_entity: int | None = None


class IdentityCoref:
    """Coreference from annotated mentions only: provider(e) = e's sentences."""

    def sentences(self, doc: Document, entity_id: int) -> frozenset[int]:
        return _mention_sentences(doc, entity_id)


class LexiconCoref:
    """Annotated mentions plus case-insensitive alias matches from a lexicon.

    The lexicon maps entity surface names to alias strings; an alias matches
    a sentence when its (lowercased) tokens appear as a contiguous run.
    """

    def __init__(self, lexicon: dict):
        self._aliases = {name.lower(): [a for a in aliases]
                         for name, aliases in lexicon.items()}

    @classmethod
    def from_file(cls, path) -> "LexiconCoref":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def sentences(self, doc: Document, entity_id: int) -> frozenset[int]:
        sents = set(_mention_sentences(doc, entity_id))
        alias_tokens = []
        for m in doc.entities[entity_id].mentions:
            for alias in self._aliases.get(m.name.lower(), []):
                alias_tokens.append(tuple(alias.lower().split()))
        if alias_tokens:
            for sent in doc.sentences:
                lowered = tuple(t.lower() for t in sent.tokens)
                if any(_contains_run(lowered, a) for a in set(alias_tokens)):
                    sents.add(sent.index)
        return frozenset(sents)


def _contains_run(tokens: tuple, run: tuple) -> bool:
    if not run or len(run) > len(tokens):
        return False
    return any(tokens[i:i + len(run)] == run for i in range(len(tokens) - len(run) + 1))


def _mention_sentences(doc: Document, entity_id: int) -> frozenset[int]:
    return frozenset(m.sent_id for m in doc.entities[entity_id].mentions)


def cooccur_rule(doc: Document, head: int, tail: int) -> frozenset[int]:
    """Sentences containing proper-noun mentions of both entities."""
    return _mention_sentences(doc, head) & _mention_sentences(doc, tail)


def coref_rule(doc: Document, head: int, tail: int, provider) -> frozenset[int]:
    """Sentences where the provider places both entities (proper mentions don't co-occur)."""
    return provider.sentences(doc, head) & provider.sentences(doc, tail)


def bridge_rule(doc: Document, head: int, tail: int, provider):
    """Best third entity linking head and tail, with its evidence sentences.

    Candidates co-occur (via the provider) with both head and tail; the one
    with the most annotated mentions wins, ties broken by smallest ordinal.
    Returns (bridge_entity or None, evidence set).
    """
    p_head = provider.sentences(doc, head)
    p_tail = provider.sentences(doc, tail)
    best = None
    for b in range(doc.n_entities):
        if b == head or b == tail:
            continue
        p_b = provider.sentences(doc, b)
        with_head = p_b & p_head
        with_tail = p_b & p_tail
        if with_head and with_tail:
            freq = len(doc.entities[b].mentions)
            key = (-freq, b)
            if best is None or key < best[0]:
                best = (key, b, with_head | with_tail)
    if best is None:
        return None, frozenset()
    return best[1], best[2]


def categorize_pair(doc: Document, head: int, tail: int, provider) -> SilverLabel:
    """Apply the rules in precedence order and record the winning category."""
    ev = cooccur_rule(doc, head, tail)
    if ev:
        return SilverLabel(pair=(head, tail), category=COOCCUR, evidence=ev)
    ev = coref_rule(doc, head, tail, provider)
    if ev:
        return SilverLabel(pair=(head, tail), category=COREF, evidence=ev)
    bridge, ev = bridge_rule(doc, head, tail, provider)
    if bridge is not None:
        return SilverLabel(pair=(head, tail), category=BRIDGE, evidence=ev,
                           bridge_entity=bridge)
    return SilverLabel(pair=(head, tail), category=NONE, evidence=frozenset())


def silver_labels(doc: Document, provider, pairs=None) -> list[SilverLabel]:
    """Silver labels for the given pairs (default: the document's positive pairs)."""
    if pairs is None:
        pairs = sorted(positive_pairs(doc))
    return [categorize_pair(doc, h, t, provider) for h, t in pairs]


def categorize_all_pairs(doc: Document, provider) -> dict[tuple[int, int], SilverLabel]:
    return {(h, t): categorize_pair(doc, h, t, provider)
            for h, t in candidate_pairs(doc)}


def category_histogram(docs, provider, relation_count: int | None = None) -> dict:
    """Counts and fractions of gold facts covered by each rule (the tabular report)."""
    counts = {COOCCUR: 0, COREF: 0, BRIDGE: 0, NONE: 0}
    total = 0
    for doc in docs:
        seen = {}
        for f in doc.facts:
            pair = (f.head, f.tail)
            if pair not in seen:
                seen[pair] = categorize_pair(doc, f.head, f.tail, provider).category
            counts[seen[pair]] += 1
            total += 1
    covered = total - counts[NONE]
    return {
        "total_relations": total,
        "counts": counts,
        "percent": {k: (100.0 * v / total if total else 0.0) for k, v in counts.items()},
        "covered": covered,
        "covered_percent": 100.0 * covered / total if total else 0.0,
    }
