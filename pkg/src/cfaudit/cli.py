"""Command-line pipeline: validate, prep, generate, build, fetch, audit.

Subcommands mirror the pipeline stages:

    cfaudit lexicon validate
    cfaudit corpus prep | corpus stats
    cfaudit generate mgs|sll|llmdef|llmlist
    cfaudit evalset build
    cfaudit predict fetch
    cfaudit audit
    cfaudit report render

Every command is deterministic given identical inputs (and replay files);
output files carry a ``<name>.meta.json`` sidecar with input digests.
Exit codes: 0 ok, 2 validation, 3 transport, 4 completeness, 5 not found.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import corpus as corpus_mod
from . import generate as generate_mod
from . import metrics as metrics_mod
from . import predictions as predictions_mod
from .errors import CompletenessError, TransportError, ValidationError
from .evalset import build_evalset, load_templates, read_evalset, write_evalset
from .lexicon import build_dictionary, load_lexicon
from .predictions import ClassifierHttpClient, fetch_predictions, write_predictions
from .resources import shipped_lexicon_path, shipped_templates_path
from .scorer import HttpScorerClient, StdioScorerClient, ngram_train
from .util import sha256_file, utc_timestamp, write_json, write_jsonl, write_meta

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_COMPLETENESS = 4
EXIT_NOT_FOUND = 5


def _lexicon_arg(args) -> Path:
    return Path(args.lexicon) if args.lexicon else shipped_lexicon_path()


def _templates_arg(args) -> Path:
    return Path(args.templates) if args.templates else shipped_templates_path()


def cmd_lexicon_validate(args) -> int:
    path = _lexicon_arg(args)
    lex = load_lexicon(path)
    dictionary = build_dictionary(lex)
    categories = lex.categories
    print(f"lexicon OK: {len(lex)} terms across {len(categories)} categories ({path})")
    for (category, pos), bucket in sorted(dictionary.buckets.items()):
        print(f"  {category}/{pos}: {len(bucket)}")
    return EXIT_OK


def cmd_corpus_prep(args) -> int:
    lex = load_lexicon(_lexicon_arg(args))
    posts = corpus_mod.read_posts(args.input)
    cleaned = [
        corpus_mod.Post(p.id, corpus_mod.preprocess(p.text), p.label, p.source) for p in posts
    ]
    kept = corpus_mod.filter_corpus(cleaned, lex)
    out = Path(args.out)
    corpus_mod.write_posts(out, kept)
    write_meta(
        out,
        {"corpus": args.input, "lexicon": _lexicon_arg(args)},
        command="corpus prep",
        input_posts=len(posts),
        kept_posts=len(kept),
    )
    print(f"kept {len(kept)} of {len(posts)} posts -> {out}")
    return EXIT_OK


def cmd_corpus_stats(args) -> int:
    lex = load_lexicon(_lexicon_arg(args))
    posts = corpus_mod.read_posts(args.input)
    stats = corpus_mod.corpus_stats(posts, lex)
    report = {
        "meta": {
            "length_unit": "whitespace tokens",
            "entropy_unit": "bits over SGT occurrence counts",
            "corpus_sha256": sha256_file(args.input),
            "lexicon_sha256": sha256_file(_lexicon_arg(args)),
        },
        "labels": {
            label: {
                "count": s.count,
                "avg_len": s.avg_len,
                "sgt_entropy": s.sgt_entropy,
            }
            for label, s in stats.items()
        },
    }
    if args.out:
        write_json(args.out, report)
        print(f"stats -> {args.out}")
    else:
        print(json.dumps(report, ensure_ascii=False, indent=2))
    return EXIT_OK


def _build_scorer(args):
    """Exactly one scorer backend must be selected; returns (scorer, closer)."""
    chosen = [
        name
        for name, value in (
            ("ngram_train", args.ngram_train),
            ("scorer_endpoint", args.scorer_endpoint),
            ("scorer_cmd", args.scorer_cmd),
        )
        if value
    ]
    if len(chosen) != 1:
        raise ValidationError(
            "select exactly one scorer backend: --ngram-train, --scorer-endpoint"
            f" or --scorer-cmd (got {len(chosen)})"
        )
    if args.ngram_train:
        train_path = Path(args.ngram_train)
        if not train_path.exists():
            raise FileNotFoundError(str(train_path))
        sentences = [
            line.strip() for line in train_path.read_text(encoding="utf-8").splitlines()
        ]
        model = ngram_train(
            [s for s in sentences if s], order=args.ngram_order, alpha=args.ngram_alpha
        )
        return model, lambda: None
    if args.scorer_endpoint:
        client = HttpScorerClient(
            args.scorer_endpoint,
            timeout=args.timeout,
            max_retries=args.max_retries,
            backoff=args.backoff,
        )
        return client, lambda: None
    cmd = args.scorer_cmd
    if isinstance(cmd, str):
        cmd = cmd.split()
    client = StdioScorerClient(cmd)
    return client, client.close


def _build_llm(args):
    if args.llm_replay and args.llm_endpoint:
        raise ValidationError("select one LLM backend: --llm-replay or --llm-endpoint")
    if args.llm_replay:
        return generate_mod.ReplayLlm.from_file(args.llm_replay)
    if args.llm_endpoint:
        if not args.llm_model:
            raise ValidationError("--llm-endpoint needs --llm-model")
        return generate_mod.HttpLlm(
            args.llm_endpoint,
            args.llm_model,
            temperature=args.llm_temperature,
            timeout=args.timeout,
            max_retries=args.max_retries,
            backoff=args.backoff,
        )
    raise ValidationError("LLM generation needs --llm-replay or --llm-endpoint")


def cmd_generate(args) -> int:
    method = args.method
    lex = load_lexicon(_lexicon_arg(args))
    posts = corpus_mod.read_posts(args.corpus)
    dictionary = build_dictionary(lex) if method == "mgs" else None
    scorer = None
    closer = lambda: None  # noqa: E731
    llm = None
    if method == "sll":
        scorer, closer = _build_scorer(args)
    elif method in ("llmdef", "llmlist"):
        llm = _build_llm(args)

    try:
        cfs, errors = generate_mod.generate_batch(
            posts,
            method,
            lex=lex,
            dictionary=dictionary,
            scorer=scorer,
            llm=llm,
            max_workers=args.max_workers,
        )
    finally:
        closer()

    out = Path(args.out)
    generate_mod.write_counterfactuals(out, cfs)
    inputs = {"corpus": args.corpus, "lexicon": _lexicon_arg(args)}
    if getattr(args, "llm_replay", None):
        inputs["replay"] = args.llm_replay
    if getattr(args, "ngram_train", None):
        inputs["ngram_train"] = args.ngram_train
    summary = generate_mod.summarize_counterfactuals(cfs, lex)
    write_meta(out, inputs, command=f"generate {method}", **summary)
    write_json(Path(f"{out}.summary.json"), summary)

    if errors:
        errors_path = Path(f"{out}.errors.jsonl")
        write_jsonl(errors_path, errors)
        print(f"{len(errors)} post(s) failed -> {errors_path}", file=sys.stderr)
    print(f"wrote {len(cfs)} counterfactuals for {len(posts)} posts -> {out}")

    if posts and len(errors) == len(posts):
        if any(e["error"] == "TransportError" for e in errors):
            return EXIT_TRANSPORT
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_evalset_build(args) -> int:
    lex = load_lexicon(_lexicon_arg(args))
    templates = load_templates(_templates_arg(args))
    sentences = build_evalset(templates, lex)
    out = Path(args.out)
    write_evalset(out, sentences)
    write_meta(
        out,
        {"templates": _templates_arg(args), "lexicon": _lexicon_arg(args)},
        command="evalset build",
        sentences=len(sentences),
    )
    by_toxicity = {t: sum(1 for tpl in templates if tpl.toxicity == t) for t in ("toxic", "nontoxic")}
    print(
        f"wrote {len(sentences)} sentences ({len(templates)} templates"
        f" [{by_toxicity['toxic']} toxic, {by_toxicity['nontoxic']} nontoxic]"
        f" x {len(lex)} terms) -> {out}"
    )
    return EXIT_OK


def cmd_predict_fetch(args) -> int:
    sentences = read_evalset(args.evalset)
    pairs = [(s.key, s.text) for s in sentences]
    if args.predictions_file and args.classifier_endpoint:
        raise ValidationError("select one source: --predictions-file or --classifier-endpoint")
    if args.predictions_file:
        preds = fetch_predictions(pairs, predictions_path=args.predictions_file)
        source = {"predictions": args.predictions_file}
    elif args.classifier_endpoint:
        client = ClassifierHttpClient(
            args.classifier_endpoint,
            timeout=args.timeout,
            max_retries=args.max_retries,
            backoff=args.backoff,
        )
        preds = fetch_predictions(
            pairs, client=client, max_workers=args.max_workers, batch_size=args.batch_size
        )
        source = {}
    else:
        raise ValidationError("predict fetch needs --predictions-file or --classifier-endpoint")
    out = Path(args.out)
    write_predictions(out, preds)
    write_meta(
        out,
        {"evalset": args.evalset, **source},
        command="predict fetch",
        predictions=len(preds),
        endpoint=args.classifier_endpoint,
    )
    print(f"wrote {len(preds)} predictions -> {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    sentences = read_evalset(args.evalset)
    preds = predictions_mod.read_predictions(args.predictions)
    matched = predictions_mod.match_predictions([s.key for s in sentences], preds)

    corpus_preds = None
    corpus_gold = None
    inputs = {"evalset": args.evalset, "predictions": args.predictions}
    if args.corpus or args.corpus_predictions:
        if not (args.corpus and args.corpus_predictions):
            raise ValidationError(
                "the classification report needs both --corpus and --corpus-predictions"
            )
        posts = corpus_mod.read_posts(args.corpus)
        corpus_gold = {p.id: p.label for p in posts}
        corpus_preds = predictions_mod.match_predictions(
            list(corpus_gold), predictions_mod.read_predictions(args.corpus_predictions)
        )
        inputs["corpus"] = args.corpus
        inputs["corpus_predictions"] = args.corpus_predictions

    report = metrics_mod.build_fairness_report(
        sentences,
        matched,
        corpus_predictions=corpus_preds,
        corpus_gold=corpus_gold,
        pair_scope=args.pair_scope,
        use_probs=args.probs,
        meta={
            "model_id": args.model_id,
            "datasets": {name: sha256_file(path) for name, path in inputs.items()},
            "timestamp": utc_timestamp(),
        },
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_dict = report.to_dict()
    json_path = out_dir / "report.json"
    write_json(json_path, report_dict)
    write_meta(json_path, inputs, command="audit")
    table = metrics_mod.render_table(report_dict)
    table_path = out_dir / "report.txt"
    table_path.write_text(table, encoding="utf-8")
    if args.ctf_csv:
        with open(args.ctf_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["template_id", "ctf"])
            for row in metrics_mod.per_template_rows(report):
                writer.writerow([row["template_id"], repr(row["ctf"])])
    print(table, end="")
    print(f"report -> {json_path}")
    return EXIT_OK


def cmd_report_render(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report_dict = json.load(fh)
    table = metrics_mod.render_table(report_dict)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"table -> {args.out}")
    else:
        print(table, end="")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--lexicon", help="lexicon CSV (default: shipped Dutch list)")
    parser.add_argument("--max-workers", dest="max_workers", type=int, default=None)
    parser.add_argument("--timeout", type=float, default=None)
    parser.add_argument("--max-retries", dest="max_retries", type=int, default=None)
    parser.add_argument("--backoff", type=float, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfaudit",
        description="Counterfactual generation and fairness auditing for Dutch hate-speech classifiers",
    )
    top = parser.add_subparsers(dest="command", required=True)

    lexicon = top.add_parser("lexicon", help="lexicon utilities").add_subparsers(
        dest="subcommand", required=True
    )
    p = lexicon.add_parser("validate", help="load, validate and summarize a lexicon")
    _add_common(p)
    p.set_defaults(func=cmd_lexicon_validate)

    corpus = top.add_parser("corpus", help="corpus preparation and statistics").add_subparsers(
        dest="subcommand", required=True
    )
    p = corpus.add_parser("prep", help="preprocess posts and keep the SGT-bearing ones")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="raw posts JSONL")
    p.add_argument("--out", required=True, help="filtered posts JSONL")
    p.set_defaults(func=cmd_corpus_prep)
    p = corpus.add_parser("stats", help="per-label count, avg token length, SGT entropy")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="posts JSONL")
    p.add_argument("--out", help="stats JSON (stdout when omitted)")
    p.set_defaults(func=cmd_corpus_stats)

    gen = top.add_parser("generate", help="generate counterfactuals").add_subparsers(
        dest="method", required=True
    )
    for method in generate_mod.METHODS:
        p = gen.add_parser(method)
        _add_common(p)
        p.add_argument("--corpus", required=True, help="prepped posts JSONL")
        p.add_argument("--out", required=True, help="counterfactuals JSONL")
        if method == "sll":
            p.add_argument("--ngram-train", dest="ngram_train", help="training sentences, one per line")
            p.add_argument("--ngram-order", dest="ngram_order", type=int, default=None)
            p.add_argument("--ngram-alpha", dest="ngram_alpha", type=float, default=None)
            p.add_argument("--scorer-endpoint", dest="scorer_endpoint")
            p.add_argument(
                "--scorer-cmd",
                dest="scorer_cmd",
                nargs="+",
                help="command to spawn a stdio scorer",
            )
        if method in ("llmdef", "llmlist"):
            p.add_argument("--llm-replay", dest="llm_replay", help="recorded raw replies JSONL")
            p.add_argument("--llm-endpoint", dest="llm_endpoint")
            p.add_argument("--llm-model", dest="llm_model")
            p.add_argument(
                "--llm-temperature", dest="llm_temperature", type=float, default=None
            )
        p.set_defaults(func=cmd_generate, method=method)

    ev = top.add_parser("evalset", help="template evalset").add_subparsers(
        dest="subcommand", required=True
    )
    p = ev.add_parser("build", help="instantiate every template with every term")
    _add_common(p)
    p.add_argument("--templates", help="template CSV (default: shipped templates)")
    p.add_argument("--out", required=True, help="evalset JSONL")
    p.set_defaults(func=cmd_evalset_build)

    pred = top.add_parser("predict", help="classifier predictions").add_subparsers(
        dest="subcommand", required=True
    )
    p = pred.add_parser("fetch", help="obtain predictions for an evalset")
    _add_common(p)
    p.add_argument("--evalset", required=True)
    p.add_argument("--predictions-file", dest="predictions_file")
    p.add_argument("--classifier-endpoint", dest="classifier_endpoint")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_fetch)

    p = top.add_parser("audit", help="compute the fairness report")
    _add_common(p)
    p.add_argument("--evalset", required=True)
    p.add_argument("--predictions", required=True, help="4-class predictions JSONL for the evalset")
    p.add_argument("--corpus", help="labeled posts JSONL for the classification report")
    p.add_argument(
        "--corpus-predictions",
        dest="corpus_predictions",
        help="4-class predictions JSONL for --corpus",
    )
    p.add_argument("--pair-scope", dest="pair_scope", choices=metrics_mod.PAIR_SCOPES, default="all")
    p.add_argument(
        "--probs",
        action="store_true",
        help="compare toxic-probability mass instead of hard labels in CTF",
    )
    p.add_argument("--model-id", dest="model_id", default="unknown")
    p.add_argument("--ctf-csv", dest="ctf_csv", help="write per-template CTF contributions")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_audit)

    rep = top.add_parser("report", help="report utilities").add_subparsers(
        dest="subcommand", required=True
    )
    p = rep.add_parser("render", help="render a report JSON as an aligned table")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            config_mod.apply_config(args, config_mod.load_config(args.config))
        config_mod.finalize_defaults(args)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except CompletenessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.missing:
            print(f"  missing ids: {', '.join(exc.missing[:20])}", file=sys.stderr)
        if exc.extra:
            print(f"  unexpected ids: {', '.join(exc.extra[:20])}", file=sys.stderr)
        return EXIT_COMPLETENESS
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
