"""Batch command-line front end.

Subcommands: validate, synth, rules, train, eval, infer, tune-tau, report.
Options may come from flags or an optional JSON config file (flags win).
Every run is deterministic given --seed; errors exit nonzero with a single
machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import fusion, metrics, rules as rules_mod, synth as synth_mod, trainer as trainer_mod
from .corpus import CorpusError, TokenVocab, insert_markers, parse_corpus, serialize_corpus, \
    document_to_json
from .encoder import EncoderConfig
from .model import JointModel


class CliError(ValueError):
    pass


def _read_corpus(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_corpus(f.read())
    except FileNotFoundError:
        raise CliError(f"input file not found: {path}") from None


def _coref_provider(spec: str | None):
    if spec is None or spec == "identity":
        return rules_mod.IdentityCoref()
    if spec.startswith("lexicon:"):
        path = spec.split(":", 1)[1]
        try:
            return rules_mod.LexiconCoref.from_file(path)
        except FileNotFoundError:
            raise CliError(f"lexicon file not found: {path}") from None
    raise CliError(f"unknown coref provider '{spec}' (use identity or lexicon:PATH)")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _opt(args, config: dict, name: str, default=None):
    v = getattr(args, name.replace("-", "_"), None)
    if v is not None:
        return v
    return config.get(name, default)


def _check_lengths(docs, vocab, max_len: int):
    for doc in docs:
        n = len(insert_markers(doc, vocab))
        if n > max_len:
            raise CliError(
                f"doc '{doc.doc_id}': marked length {n} exceeds encoder max_len {max_len}; "
                f"shorten the document or raise --max-len")


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args, config):
    docs, _ = _read_corpus(args.input)
    print(f"{len(docs)} documents OK")


def cmd_synth(args, config):
    mix = {}
    for part in _opt(args, config, "mix", "intra=0.4,coref=0.2,bridge=0.2,distractor=0.2").split(","):
        key, _, val = part.partition("=")
        mix[key.strip()] = float(val)
    cfg = synth_mod.SynthConfig(
        n_docs=int(_opt(args, config, "n-docs", 100)),
        vocab_size=int(_opt(args, config, "vocab-size", 120)),
        n_relations=int(_opt(args, config, "n-relations", 4)),
        seed=int(_opt(args, config, "seed", 0)),
        mix=mix,
        n_entities=int(_opt(args, config, "n-entities", 30)),
    )
    corpus = synth_mod.synth_corpus(cfg)
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(serialize_corpus(corpus.documents, corpus.relations))
        f.write("\n")
    if args.lexicon_out:
        _write_json(args.lexicon_out, corpus.lexicon)
    dev_fraction = _opt(args, config, "dev-fraction")
    if dev_fraction is not None:
        frac = float(dev_fraction)
        if not 0.0 < frac < 1.0:
            raise CliError(f"dev-fraction {frac} outside (0,1)")
        split = len(corpus.documents) - max(1, round(frac * len(corpus.documents)))
        if split < 1:
            raise CliError("dev-fraction leaves no training documents")
        base = args.output[:-5] if args.output.endswith(".json") else args.output
        for name, docs in (("train", corpus.documents[:split]),
                           ("dev", corpus.documents[split:])):
            with open(f"{base}.{name}.json", "w", encoding="utf-8") as f:
                f.write(serialize_corpus(docs, corpus.relations))
                f.write("\n")
    print(f"wrote {len(corpus.documents)} documents")


def cmd_rules(args, config):
    docs, vocab = _read_corpus(args.input)
    provider = _coref_provider(_opt(args, config, "coref"))
    out_docs = []
    for doc in docs:
        labels = {lab.pair: lab
                  for lab in rules_mod.silver_labels(doc, provider)}
        obj = document_to_json(doc, vocab)
        for lab_obj, fact in zip(obj["labels"], doc.facts):
            lab_obj["evidence"] = sorted(labels[(fact.head, fact.tail)].evidence)
        out_docs.append(obj)
    with open(args.output, "w", encoding="utf-8") as f:
        json.dump(out_docs, f, indent=1)
        f.write("\n")
    hist = rules_mod.category_histogram(docs, provider)
    if args.report:
        _write_json(args.report, hist)
    print(_format_histogram(hist))


def _format_histogram(hist: dict) -> str:
    lines = [f"{'category':<10} {'count':>8} {'percent':>8}"]
    for cat in (rules_mod.COOCCUR, rules_mod.COREF, rules_mod.BRIDGE, rules_mod.NONE):
        lines.append(f"{cat:<10} {hist['counts'][cat]:>8} {hist['percent'][cat]:>7.2f}%")
    lines.append(f"{'covered':<10} {hist['covered']:>8} {hist['covered_percent']:>7.2f}%")
    lines.append(f"{'total':<10} {hist['total_relations']:>8}")
    return "\n".join(lines)


def _encoder_config(args, config, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=vocab_size,
        n_layers=int(_opt(args, config, "n-layers", 2)),
        n_heads=int(_opt(args, config, "n-heads", 4)),
        d_model=int(_opt(args, config, "d-model", 64)),
        d_ff=int(_opt(args, config, "d-ff", 128)),
        max_len=int(_opt(args, config, "max-len", 256)),
    )


def _train_config(args, config) -> trainer_mod.TrainConfig:
    return trainer_mod.TrainConfig(
        lr_encoder=float(_opt(args, config, "lr-encoder", 5e-5)),
        lr_heads=float(_opt(args, config, "lr-heads", 1e-4)),
        warmup_fraction=float(_opt(args, config, "warmup-fraction", 0.06)),
        batch_docs=int(_opt(args, config, "batch-docs", 4)),
        max_epochs=int(_opt(args, config, "max-epochs", 30)),
        evi_loss_weight=float(_opt(args, config, "evi-loss-weight", 0.1)),
        seed=int(_opt(args, config, "seed", 0)),
        no_joint=bool(_opt(args, config, "no-joint", False)),
        patience=int(_opt(args, config, "patience", 5)),
    )


def cmd_train(args, config):
    train_docs, relations = _read_corpus(args.input)
    dev_docs, _ = _read_corpus(args.dev)
    if len(relations) < 1:
        raise CliError("training corpus has no relation labels")
    token_vocab = TokenVocab.build(train_docs)
    cfg = _encoder_config(args, config, len(token_vocab))
    _check_lengths(train_docs + dev_docs, token_vocab, cfg.max_len)
    tcfg = _train_config(args, config)
    evidence_source = _opt(args, config, "evidence-source", "gold")
    if evidence_source not in ("gold", "silver"):
        raise CliError(f"training evidence source must be gold or silver, got {evidence_source}")
    provider = _coref_provider(_opt(args, config, "coref"))
    model = JointModel.build(cfg, token_vocab, relations, tcfg.seed)
    state = trainer_mod.train(model, train_docs, dev_docs, tcfg,
                              evidence_source=evidence_source, provider=provider,
                              log_path=_opt(args, config, "log"))
    model.save(args.output)
    print(f"best dev F1 {state.best_dev_f1:.4f} at epoch {state.best_epoch}; "
          f"checkpoint written")


def cmd_infer(args, config):
    docs, _ = _read_corpus(args.input)
    model = JointModel.load(args.checkpoint)
    _check_lengths(docs, model.token_vocab, model.cfg.max_len)
    mode = _opt(args, config, "mode", "full").lower()
    source = _opt(args, config, "evidence-source", "model")
    if mode == "nojoint" and source == "model":
        raise CliError("mode nojoint requires --evidence-source rules")
    provider = _coref_provider(_opt(args, config, "coref"))
    threshold = float(_opt(args, config, "evi-threshold", 0.5))
    records, evidence_used = fusion.inference_pipeline(
        model, docs, evidence_source=source, mode=mode, provider=provider,
        evi_threshold=threshold)
    with open(args.output, "w", encoding="utf-8") as f:
        json.dump(records, f, indent=1, sort_keys=True)
        f.write("\n")
    if args.annotated_output:
        out = []
        for doc in docs:
            obj = document_to_json(doc, model.relations)
            obj["predictions"] = [
                {"h_idx": r["h_idx"], "t_idx": r["t_idx"], "r": r["r"], "score": r["score"]}
                for r in records if r["title"] == doc.doc_id]
            obj["predicted_evidence"] = [
                {"h_idx": h, "t_idx": t, "evidence": sorted(ev)}
                for (d, h, t), ev in sorted(evidence_used.items()) if d == doc.doc_id]
            out.append(obj)
        with open(args.annotated_output, "w", encoding="utf-8") as f:
            json.dump(out, f, indent=1)
            f.write("\n")
    print(f"{len(records)} predictions written")


def cmd_tune_tau(args, config):
    docs, _ = _read_corpus(args.input)
    model = JointModel.load(args.checkpoint)
    _check_lengths(docs, model.token_vocab, model.cfg.max_len)
    source = _opt(args, config, "evidence-source", "model")
    provider = _coref_provider(_opt(args, config, "coref"))
    threshold = float(_opt(args, config, "evi-threshold", 0.5))
    instances = fusion.tuning_instances(model, docs, evidence_source=source,
                                        provider=provider, evi_threshold=threshold)
    model.tau = fusion.tune_tau(instances)
    model.save(args.output or args.checkpoint)
    print(f"tau {model.tau:.6f} from {len(instances)} instances")


def cmd_eval(args, config):
    docs, vocab = _read_corpus(args.input)
    docs_by_id = {d.doc_id: d for d in docs}
    with open(args.pred, "r", encoding="utf-8") as f:
        records = json.load(f)
    try:
        pred = fusion.records_to_facts(records, vocab)
    except KeyError as e:
        raise CliError(f"prediction file references unknown relation {e}") from None
    gold = metrics.gold_facts(docs)

    report = metrics.EvalReport(f1=metrics.re_f1(pred, gold))
    if args.train_input:
        train_docs, _ = _read_corpus(args.train_input)
        keys = metrics.train_fact_keys(train_docs, vocab)
        report.ign_f1 = metrics.ign_f1(pred, gold, docs_by_id, vocab, keys)
    report.intra_f1, report.inter_f1 = metrics.intra_inter_f1(pred, gold, docs_by_id)
    if args.pred_evidence:
        with open(args.pred_evidence, "r", encoding="utf-8") as f:
            rows = json.load(f)
        pred_evi = {(r["title"], r["h_idx"], r["t_idx"]): set(r["evidence"]) for r in rows}
        gold_evi = metrics.gold_evidence_map(docs)
        pos_pairs = set(gold_evi)
        pred_pairs = {(d, h, t) for d, h, t, _ in pred}
        report.pos_evi_f1 = metrics.evi_f1(pred_evi, gold_evi, pos_pairs)
        report.evi_f1 = metrics.evi_f1(pred_evi, gold_evi, pred_pairs)
    coref = _opt(args, config, "coref")
    if coref is not None:
        provider = _coref_provider(coref)
        categories = {}
        for doc in docs:
            for pair, lab in rules_mod.categorize_all_pairs(doc, provider).items():
                categories[(doc.doc_id, pair[0], pair[1])] = lab.category
        report.by_category = metrics.breakdown(pred, gold, categories)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(report.to_json())
            f.write("\n")
    print(report.to_table())


def cmd_report(args, config):
    docs, _ = _read_corpus(args.input)
    provider = _coref_provider(_opt(args, config, "coref"))
    hist = rules_mod.category_histogram(docs, provider)
    if args.output:
        _write_json(args.output, hist)
    print(_format_histogram(hist))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evirel",
                                description="joint relation and evidence extraction")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *names):
        if "seed" in names:
            sp.add_argument("--seed", type=int)
        if "coref" in names:
            sp.add_argument("--coref", help="identity or lexicon:PATH")
        if "evidence-source" in names:
            sp.add_argument("--evidence-source", choices=["model", "rules", "gold", "silver"])
        if "evi-threshold" in names:
            sp.add_argument("--evi-threshold", type=float)

    sp = sub.add_parser("validate", help="parse and validate a corpus file")
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--output", required=True)
    sp.add_argument("--lexicon-out")
    sp.add_argument("--n-docs", type=int)
    sp.add_argument("--vocab-size", type=int)
    sp.add_argument("--n-relations", type=int)
    sp.add_argument("--n-entities", type=int)
    sp.add_argument("--mix")
    sp.add_argument("--dev-fraction", type=float)
    common(sp, "seed")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("rules", help="fill silver evidence and report rule coverage")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--report")
    common(sp, "coref")
    sp.set_defaults(func=cmd_rules)

    sp = sub.add_parser("train", help="train the joint model")
    sp.add_argument("--input", required=True, help="training split")
    sp.add_argument("--dev", required=True, help="development split")
    sp.add_argument("--output", required=True, help="checkpoint path")
    sp.add_argument("--log", help="line-JSON training log path")
    sp.add_argument("--no-joint", action="store_const", const=True, default=None)
    for name in ("lr-encoder", "lr-heads", "warmup-fraction", "evi-loss-weight"):
        sp.add_argument(f"--{name}", type=float)
    for name in ("batch-docs", "max-epochs", "patience",
                 "n-layers", "n-heads", "d-model", "d-ff", "max-len"):
        sp.add_argument(f"--{name}", type=int)
    common(sp, "seed", "coref", "evidence-source")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="run inference with a trained checkpoint")
    sp.add_argument("--input", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--annotated-output", help="corpus layout plus prediction arrays")
    sp.add_argument("--mode", choices=list(fusion.MODES))
    common(sp, "coref", "evidence-source", "evi-threshold")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("tune-tau", help="fit the blending threshold on a dev split")
    sp.add_argument("--input", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--output", help="defaults to rewriting the checkpoint")
    common(sp, "coref", "evidence-source", "evi-threshold")
    sp.set_defaults(func=cmd_tune_tau)

    sp = sub.add_parser("eval", help="score predictions against gold labels")
    sp.add_argument("--input", required=True, help="gold corpus")
    sp.add_argument("--pred", required=True, help="prediction records JSON")
    sp.add_argument("--pred-evidence", help="predicted evidence JSON")
    sp.add_argument("--train-input", help="training corpus for the overlap-filtered F1")
    sp.add_argument("--output", help="write the report as JSON")
    common(sp, "coref")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="rule-category histogram for a corpus")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    common(sp, "coref")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                config = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            print(json.dumps({"error": f"cannot read config: {e}"}), file=sys.stderr)
            return 1
        unknown = set(config) - _known_config_keys(parser)
        if unknown:
            print(json.dumps({"error": f"unknown config keys: {sorted(unknown)}"}),
                  file=sys.stderr)
            return 1
    try:
        args.func(args, config)
    except (CliError, CorpusError, fusion.FusionError, trainer_mod.TrainingError,
            synth_mod.SynthConfigError, ValueError, OSError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1
    return 0


def _known_config_keys(parser) -> set:
    keys = set()
    for action in parser._subparsers._group_actions[0].choices.values():
        for a in action._actions:
            for opt in a.option_strings:
                if opt.startswith("--"):
                    keys.add(opt[2:])
    return keys


if __name__ == "__main__":
    sys.exit(main())
