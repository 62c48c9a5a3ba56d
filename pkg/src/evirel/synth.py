"""Deterministic synthetic corpora with planted facts and exact gold evidence.

Each document is assembled from independent units drawn from the category
mix. A unit uses fresh entities, so evidence never leaks across units:

  intra      one sentence containing head, relation verb, and tail
  coref      an alias-introduction sentence for the head, then a sentence
             where the alias (not an annotated mention) meets the tail;
             gold evidence is the alias sentence only
  bridge     head meets a bridge entity in one sentence, the bridge meets
             the tail in another; gold evidence is both sentences
  distractor one sentence mentioning a single uninvolved entity

Every mention is two tokens, a type word followed by the entity name, and
each relation only holds between one (head type, tail type) signature, so
type-incompatible pairs are never positive. Alias surface forms are emitted
as a lexicon (entity name -> aliases) with which the lexicon-based
coreference provider reconstructs every planted evidence set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff
from .corpus import Document, Entity, Mention, RelationFact, RelationVocab, Sentence, \
    validate_document

CATEGORIES = ("intra", "coref", "bridge", "distractor")

ENTITY_TYPES = ("PER", "ORG", "LOC", "MISC")

_CONNECTORS = {"aka": "aka", "idle": "remains"}


class SynthConfigError(ValueError):
    """Generator configuration cannot produce valid documents."""


@dataclass
class SynthConfig:
    n_docs: int = 100
    vocab_size: int = 200
    n_relations: int = 4
    seed: int = 0
    mix: dict = field(default_factory=lambda: {
        "intra": 0.4, "coref": 0.2, "bridge": 0.2, "distractor": 0.2})
    n_entities: int = 60
    min_units: int = 2
    max_units: int = 3

    def __post_init__(self):
        if self.n_docs < 1 or self.n_relations < 1:
            raise SynthConfigError("n_docs and n_relations must be >= 1")
        if self.n_entities < 4 * self.max_units:
            raise SynthConfigError(
                f"n_entities {self.n_entities} too small: need >= {4 * self.max_units} "
                f"(four types, up to {self.max_units} units per document)")
        if not 1 <= self.min_units <= self.max_units:
            raise SynthConfigError("need 1 <= min_units <= max_units")
        if set(self.mix) - set(CATEGORIES):
            raise SynthConfigError(f"unknown mix categories: {set(self.mix) - set(CATEGORIES)}")
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9:
            raise SynthConfigError(f"category mix must sum to 1, got {total}")
        # entities + aliases + relation verbs + bridge links + connectors +
        # type words must fit in vocab_size with at least 4 filler tokens
        slots = 2 * self.n_entities + 3 * self.n_relations + len(_CONNECTORS) \
            + len(ENTITY_TYPES)
        if self.vocab_size - slots < 4:
            raise SynthConfigError(
                f"vocab_size {self.vocab_size} too small for template slots "
                f"({slots} reserved, need >= {slots + 4})")
        self.n_fillers = self.vocab_size - slots


@dataclass
class SynthCorpus:
    documents: list
    relations: RelationVocab
    lexicon: dict  # entity name -> list of alias strings
    categories: dict  # (doc_id, head, tail) -> generating template category


def _type_of(i: int) -> str:
    return ENTITY_TYPES[i % len(ENTITY_TYPES)]


def _name_tokens(i: int) -> list[str]:
    return [_type_of(i).lower(), f"Ent{i}"]


def _entity_name(i: int) -> str:
    return " ".join(_name_tokens(i))


def _alias_name(i: int) -> str:
    return f"als{i}"


def _relverb(r: int) -> str:
    return f"relates{r}"


def _linkverb_head(r: int) -> str:
    return f"points{r}"


def _linkverb_tail(r: int) -> str:
    return f"joins{r}"


def relation_signature(r: int) -> tuple[str, str]:
    """Head and tail entity types a relation connects."""
    k = len(ENTITY_TYPES)
    return ENTITY_TYPES[r % k], ENTITY_TYPES[(r + 1) % k]


def synth_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Generate a deterministic corpus; same config and seed give identical output."""
    rng = autodiff.make_rng(cfg.seed)
    fillers = [f"w{i}" for i in range(cfg.n_fillers)]
    cats = sorted(cfg.mix)
    probs = [cfg.mix[c] for c in cats]
    by_type = {t: [i for i in range(cfg.n_entities) if _type_of(i) == t]
               for t in ENTITY_TYPES}

    docs = []
    categories = {}
    for d in range(cfg.n_docs):
        doc_id = f"synth-{cfg.seed}-{d:04d}"
        n_units = int(rng.integers(cfg.min_units, cfg.max_units + 1))
        unit_cats = [cats[int(rng.choice(len(cats), p=probs))] for _ in range(n_units)]
        pools = {t: list(rng.permutation(ids)) for t, ids in by_type.items()}
        anypool = list(rng.permutation(cfg.n_entities))
        used: set[int] = set()
        locals_seen: list[int] = []

        def take_typed(etype):
            while pools[etype]:
                g = int(pools[etype].pop())
                if g not in used:
                    used.add(g)
                    locals_seen.append(g)
                    return len(locals_seen) - 1
            raise SynthConfigError(f"entity pool for type {etype} exhausted")

        def take_any():
            while anypool:
                g = int(anypool.pop())
                if g not in used:
                    used.add(g)
                    locals_seen.append(g)
                    return len(locals_seen) - 1
            raise SynthConfigError("entity pool exhausted")

        def fill(k):
            return [fillers[int(rng.integers(cfg.n_fillers))] for _ in range(k)]

        def name(local):
            return _name_tokens(locals_seen[local])

        pending = []  # (tokens, [(local_entity, start, end)])
        unit_facts = []  # (head, relation, tail, [pending sentence ids], category)

        # distinct relations within a document where possible, so no two
        # units share a relation verb
        n_fact_units = sum(1 for c in unit_cats if c != "distractor")
        if n_fact_units <= cfg.n_relations:
            doc_rels = list(rng.choice(cfg.n_relations, size=n_fact_units, replace=False))
        else:
            doc_rels = list(rng.integers(cfg.n_relations, size=n_fact_units))

        for cat in unit_cats:
            if cat == "distractor":
                e = take_any()
                toks = name(e) + [_CONNECTORS["idle"]] + fill(2)
                pending.append((toks, [(e, 0, 2)]))
                continue
            r = int(doc_rels.pop())
            th, tt = relation_signature(r)
            h, t = take_typed(th), take_typed(tt)
            if cat == "intra":
                lead = fill(int(rng.integers(0, 2)))
                toks = lead + name(h) + [_relverb(r)] + name(t) + fill(1)
                off = len(lead)
                sid = len(pending)
                pending.append((toks, [(h, off, off + 2), (t, off + 3, off + 5)]))
                unit_facts.append((h, r, t, [sid], cat))
            elif cat == "coref":
                alias = _alias_name(locals_seen[h])
                intro = name(h) + [_CONNECTORS["aka"], alias] + fill(1)
                use = [alias, _relverb(r)] + name(t) + fill(1)
                pending.append((intro, [(h, 0, 2)]))
                s_use = len(pending)
                pending.append((use, [(t, 2, 4)]))
                unit_facts.append((h, r, t, [s_use], cat))
            else:  # bridge
                b = take_any()
                s1 = name(h) + [_linkverb_head(r)] + name(b) + fill(1)
                s2 = name(b) + [_linkverb_tail(r)] + name(t) + fill(1)
                i1 = len(pending)
                pending.append((s1, [(h, 0, 2), (b, 3, 5)]))
                pending.append((s2, [(b, 0, 2), (t, 3, 5)]))
                unit_facts.append((h, r, t, [i1, i1 + 1], cat))

        order = list(rng.permutation(len(pending)))
        new_index = {old: new for new, old in enumerate(order)}

        sentences = []
        mention_lists: dict[int, list[Mention]] = {i: [] for i in range(len(locals_seen))}
        for new, old in enumerate(order):
            toks, ments = pending[old]
            sentences.append(Sentence(index=new, tokens=tuple(toks)))
            for local, s, e in ments:
                g = locals_seen[local]
                mention_lists[local].append(Mention(
                    entity_id=local, sent_id=new, start=s, end=e,
                    name=_entity_name(g), etype=_type_of(g)))
        entities = [Entity(id=i, mentions=tuple(sorted(mention_lists[i],
                                                       key=lambda m: (m.sent_id, m.start))))
                    for i in range(len(locals_seen))]
        facts = []
        for h, r, t, sids, cat in unit_facts:
            ev = frozenset(new_index[s] for s in sids)
            facts.append(RelationFact(head=h, tail=t, relation=r, evidence=ev))
            categories[(doc_id, h, t)] = cat

        doc = Document(doc_id=doc_id, sentences=sentences, entities=entities, facts=facts)
        validate_document(doc)
        docs.append(doc)

    relations = RelationVocab([_relverb(r) for r in range(cfg.n_relations)])
    lexicon = {_entity_name(i): [_alias_name(i)] for i in range(cfg.n_entities)}
    return SynthCorpus(documents=docs, relations=relations,
                       lexicon=lexicon, categories=categories)
