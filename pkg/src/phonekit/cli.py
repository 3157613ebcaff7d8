"""Command-line entry point.

Subcommands: score, features, decode, train, ablate, correlate. Reports are
JSON-first (sorted keys, byte-stable across runs) with an optional TSV
projection; ``--figures DIR`` additionally renders PNG charts next to the
delimited output. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .analysis import coverage_report, family_breakdown, impute_missing, spearman
from .ctc import OBJECTIVES, LossConfig
from .decoding import beam_decode, greedy_decode
from .errors import ConfigError, DataError, NumericalError, ParseError
from .formats import (
    fmt_num,
    fmt_pct,
    read_counts_tsv,
    read_family_map,
    read_grid_json,
    read_lang_vectors_csv,
    read_utterances_tsv,
    write_json,
    write_jsonl,
    write_tsv,
)
from .ipa import FeatureTable, PhoneSequence, load_default_table, load_feature_table
from .metrics import (
    ScoreReport,
    UtteranceScore,
    aggregate,
    feature_error_attribution,
    score_utterance,
)
from .toymodel import SyntheticTask, ToyModel, build_model, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

TABLE_ENV = "PHONEKIT_FEATURE_TABLE"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; our contract reserves 2 for
    data problems, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_table(args) -> FeatureTable:
    path = getattr(args, "table", None) or os.environ.get(TABLE_ENV)
    return load_feature_table(path) if path else load_default_table()


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _objective_list(text: str) -> tuple[str, ...]:
    objs = tuple(x.strip() for x in text.split(",") if x.strip())
    for obj in objs:
        if obj not in OBJECTIVES:
            raise argparse.ArgumentTypeError(f"unknown objective {obj!r}")
    return objs


# ---------------------------------------------------------------------------
# score / features
# ---------------------------------------------------------------------------


def _paired_scores(args, table):
    refs = read_utterances_tsv(args.ref, table)
    hyps = read_utterances_tsv(args.hyp, table)
    ref_by_id = {seq.utterance_id: seq for seq in refs}
    hyp_by_id = {seq.utterance_id: seq for seq in hyps}
    unmatched_hyp = sorted(set(hyp_by_id) - set(ref_by_id))
    missing_hyp = sorted(set(ref_by_id) - set(hyp_by_id))

    pairs = []
    for utt_id in sorted(ref_by_id):
        ref = ref_by_id[utt_id]
        hyp = hyp_by_id.get(utt_id)
        if hyp is None:
            hyp = PhoneSequence(utt_id, ref.language, ())
        pairs.append((ref, hyp))

    jobs = max(1, getattr(args, "jobs", 1))
    if jobs == 1:
        results = [score_utterance(r, h) for r, h in pairs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda p: score_utterance(*p), pairs))
    scores = [score for score, _ in results]
    alignments = [alignment for _, alignment in results]
    return scores, alignments, missing_hyp, unmatched_hyp


def _score_report(args, table) -> dict:
    scores, alignments, missing_hyp, unmatched_hyp = _paired_scores(args, table)
    family_map = read_family_map(args.family_map) if args.family_map else None

    report = ScoreReport(per_utterance=scores)
    groups = dict(aggregate(scores, "all"))
    for lang, stats in aggregate(scores, "language").items():
        groups[f"lang:{lang}"] = stats
    if family_map is not None:
        for family, stats in aggregate(scores, "family", family_map).items():
            groups[f"family:{family}"] = stats
    report.aggregates = groups
    report.feature_errors = feature_error_attribution(alignments, table)

    payload = report.to_dict()
    payload["schema"] = "phonekit-score-1"
    payload["table_version"] = table.version
    payload["missing_hyp"] = missing_hyp
    payload["unmatched_hyp"] = unmatched_hyp
    payload["unknown_phones"] = {
        "ref": sum(s.unknown_ref for s in scores),
        "hyp": sum(s.unknown_hyp for s in scores),
    }
    return payload


def _score_tsv_rows(payload):
    rows = []
    for utt in payload["per_utterance"]:
        rows.append(
            (
                "utt",
                utt["utt_id"],
                utt["lang"],
                "",
                utt["ref_length"],
                fmt_pct(utt["per"]),
                fmt_pct(utt["pfer"]),
            )
        )
    for key in sorted(payload["aggregates"]):
        g = payload["aggregates"][key]
        rows.append(
            (
                "group",
                key,
                "",
                g["n_utterances"],
                g["ref_length"],
                fmt_pct(g["per"]),
                fmt_pct(g["pfer"]),
            )
        )
    return rows


def cmd_score(args) -> int:
    table = _load_table(args)
    payload = _score_report(args, table)
    if args.format == "json":
        write_json(args.out, payload)
    else:
        write_tsv(
            args.out,
            ("row_type", "key", "lang", "n_utterances", "ref_length", "per", "pfer"),
            _score_tsv_rows(payload),
        )
    if args.figures:
        from . import plots

        plots.score_figures(payload, args.figures)
    alls = payload["aggregates"]["ALL"]
    print(f"ALL PER {fmt_pct(alls['per'])} PFER {fmt_pct(alls['pfer'])}")
    return EXIT_OK


def cmd_features(args) -> int:
    table = _load_table(args)
    scores, alignments, _, _ = _paired_scores(args, table)
    del scores
    proportions = feature_error_attribution(alignments, table)
    payload = {
        "schema": "phonekit-features-1",
        "table_version": table.version,
        "feature_errors": proportions,
    }
    if args.format == "json":
        write_json(args.out, payload)
    else:
        write_tsv(
            args.out,
            ("feature", "proportion"),
            [(name, fmt_num(proportions[name])) for name in sorted(proportions)],
        )
    if args.figures:
        from . import plots

        plots.feature_figure(proportions, args.figures)
    for name in sorted(proportions):
        print(f"{name} {fmt_num(proportions[name])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    _load_table(args)  # validates the table argument/env even though labels
    # come from the grid's own vocab
    vocab, grids = read_grid_json(args.grids)

    def decode_one(item):
        utt_id, lang, grid = item
        if args.mode == "greedy":
            labels = greedy_decode(grid).labels
        else:
            labels = beam_decode(grid, args.beam_width)[0].labels
        return utt_id, lang, " ".join(vocab[k - 1] for k in labels)

    jobs = max(1, args.jobs)
    if jobs == 1:
        rows = [decode_one(item) for item in grids]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(decode_one, grids))
    rows.sort(key=lambda r: r[0])
    lines = "".join(f"{u}\t{lang}\t{text}\n" for u, lang, text in rows)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / ablate
# ---------------------------------------------------------------------------


def _task_from_args(args) -> SyntheticTask:
    return SyntheticTask(
        num_phones=args.phones,
        feature_dim=args.feature_dim,
        noise=args.noise,
        cluster_spread=args.spread,
        seed=args.seed,
    )


def _run_objective(args, data, objective: str):
    config = LossConfig(objective, args.lam, getattr(args, "aux_layers", ()) or ())
    model = build_model(
        args.feature_dim,
        args.hidden_dim,
        args.blocks,
        args.phones,
        config,
        seed=args.seed,
        char_vocab=data.char_vocab,
    )
    trace, model = train(
        model,
        data,
        config,
        steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        eval_every=args.eval_every,
        freeze_conditioning=getattr(args, "freeze_conditioning", False),
    )
    return config, model, trace


def cmd_train(args) -> int:
    data = _task_from_args(args).build(args.train_size, args.dev_size)
    try:
        config, model, trace = _run_objective(args, data, args.objective)
    except NumericalError as err:
        if args.trace and getattr(err, "trace", None) is not None:
            write_jsonl(args.trace, err.trace)
        raise
    if args.trace:
        write_jsonl(args.trace, trace)
    if args.checkpoint:
        write_json(args.checkpoint, model.to_dict())
    if args.figures and trace:
        from . import plots

        plots.training_figure(trace, args.figures)
    tr = evaluate(model, data.train, config, data.phone_table)
    dv = evaluate(model, data.dev, config, data.phone_table)
    print(
        f"train PER {fmt_pct(tr['per'])} PFER {fmt_pct(tr['pfer'])} "
        f"dev PER {fmt_pct(dv['per'])} PFER {fmt_pct(dv['pfer'])}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    data = _task_from_args(args).build(args.train_size, args.dev_size)
    rows = []
    for objective in args.objectives:
        row = {"objective": objective, "lam": args.lam, "status": "ok"}
        try:
            config, model, trace = _run_objective(args, data, objective)
        except NumericalError as err:
            row["status"] = "failed"
            row["error"] = str(err)
            row.update(
                final_loss=None, train_per=None, train_pfer=None, dev_per=None, dev_pfer=None
            )
            rows.append(row)
            continue
        tr = evaluate(model, data.train, config, data.phone_table)
        dv = evaluate(model, data.dev, config, data.phone_table)
        row["final_loss"] = trace[-1]["loss"] if trace else None
        row["train_per"] = tr["per"]
        row["train_pfer"] = tr["pfer"]
        row["dev_per"] = dv["per"]
        row["dev_pfer"] = dv["pfer"]
        rows.append(row)

    payload = {
        "schema": "phonekit-ablate-1",
        "seed": args.seed,
        "steps": args.steps,
        "lam": args.lam,
        "task": {
            "phones": args.phones,
            "feature_dim": args.feature_dim,
            "noise": args.noise,
            "spread": args.spread,
            "train_size": args.train_size,
            "dev_size": args.dev_size,
        },
        "rows": rows,
    }
    if args.format == "json":
        write_json(args.out, payload)
    else:
        write_tsv(
            args.out,
            ("objective", "status", "train_per", "train_pfer", "dev_per", "dev_pfer"),
            [
                (
                    r["objective"],
                    r["status"],
                    fmt_pct(r["train_per"]),
                    fmt_pct(r["train_pfer"]),
                    fmt_pct(r["dev_per"]),
                    fmt_pct(r["dev_pfer"]),
                )
                for r in rows
            ],
        )
    if args.figures:
        from . import plots

        plots.ablation_figure(rows, args.figures)
    for r in rows:
        print(
            f"{r['objective']:<12} {r['status']:<6} "
            f"train {fmt_pct(r['train_per'])}/{fmt_pct(r['train_pfer'])} "
            f"dev {fmt_pct(r['dev_per'])}/{fmt_pct(r['dev_pfer'])}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# correlate
# ---------------------------------------------------------------------------


def _utterances_from_report(blob: dict) -> list[UtteranceScore]:
    out = []
    for utt in blob.get("per_utterance", []):
        out.append(
            UtteranceScore(
                utterance_id=utt["utt_id"],
                language=utt["lang"],
                ref_length=int(utt["ref_length"]),
                per_cost=float(utt["per_cost"]),
                pfer_cost=float(utt["pfer_cost"]),
            )
        )
    return out


def cmd_correlate(args) -> int:
    import json

    try:
        blob = json.loads(Path(args.scores).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", path=str(args.scores)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(args.scores)) from None
    aggregates = blob.get("aggregates")
    if not isinstance(aggregates, dict):
        raise ParseError('scores file lacks "aggregates"', path=str(args.scores))
    pfer_by_lang = {
        key[len("lang:") :]: g["pfer"]
        for key, g in aggregates.items()
        if key.startswith("lang:") and g.get("pfer") is not None
    }
    if not pfer_by_lang:
        raise DataError("no per-language PFER values in scores file")

    vectors = impute_missing(read_lang_vectors_csv(args.vectors))
    counts = read_counts_tsv(args.counts)
    excluded_test = sorted(lang for lang in pfer_by_lang if lang not in vectors)
    test_langs = [vectors[lang] for lang in sorted(pfer_by_lang) if lang in vectors]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # exclusions are reported in the payload
        cov_scores, excluded_train = coverage_report(
            test_langs, counts, vectors, exclude_self=args.exclude_self
        )
    pairs = [
        (score.lang, score.weighted_count, pfer_by_lang[score.lang])
        for score in cov_scores
    ]
    rho, p = spearman(
        [c for _, c, _ in pairs],
        [e for _, _, e in pairs],
        method=args.method,
        permutations=args.permutations,
        seed=args.seed,
    )

    per_family = {}
    if args.family_map:
        family_map = read_family_map(args.family_map)
        report = ScoreReport(per_utterance=_utterances_from_report(blob))
        per_family = family_breakdown(report, family_map)

    payload = {
        "schema": "phonekit-correlate-1",
        "coverage": [
            {"lang": lang, "weighted_count": cov} for lang, cov, _ in pairs
        ],
        "rho": rho,
        "p": p,
        "n": len(pairs),
        "method": args.method,
        "exclude_self": args.exclude_self,
        "per_family": per_family,
        "excluded_train": excluded_train,
        "excluded_test": excluded_test,
    }
    if args.format == "json":
        write_json(args.out, payload)
    else:
        write_tsv(
            args.out,
            ("lang", "coverage", "pfer"),
            [(lang, fmt_num(cov), fmt_pct(err)) for lang, cov, err in pairs],
        )
    if args.figures:
        from . import plots

        plots.correlation_figure(pairs, rho, p, args.figures)
    print(f"rho {fmt_num(rho)} p {fmt_num(p)} n {len(pairs)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_report_options(sub, out_required=True):
    sub.add_argument("--out", required=out_required, help="report output path")
    sub.add_argument("--format", choices=("json", "tsv"), default="json")
    sub.add_argument("--figures", metavar="DIR", help="also render PNG figures here")


def _add_task_options(sub):
    sub.add_argument("--seed", type=int, required=True, help="seed for task, init, and batches")
    sub.add_argument("--steps", type=int, default=400)
    sub.add_argument("--lr", type=float, default=0.2)
    sub.add_argument("--lam", type=float, default=0.3)
    sub.add_argument("--batch-size", type=int, default=8)
    sub.add_argument("--eval-every", type=int, default=100)
    sub.add_argument("--hidden-dim", type=int, default=16)
    sub.add_argument("--blocks", type=int, default=2)
    sub.add_argument("--phones", type=int, default=3)
    sub.add_argument("--feature-dim", type=int, default=5)
    sub.add_argument("--noise", type=float, default=0.05)
    sub.add_argument("--spread", type=float, default=3.0)
    sub.add_argument("--train-size", type=int, default=24)
    sub.add_argument("--dev-size", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phonekit", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    score = subs.add_parser("score", help="PER/PFER + per-feature report from ref/hyp TSVs")
    score.add_argument("ref")
    score.add_argument("hyp")
    score.add_argument("--table", help=f"feature table CSV (default: ${TABLE_ENV} or bundled)")
    score.add_argument("--family-map", help="lang<TAB>family TSV for family aggregates")
    score.add_argument("--jobs", type=int, default=1)
    _add_report_options(score)
    score.set_defaults(func=cmd_score)

    features = subs.add_parser("features", help="per-feature error proportions only")
    features.add_argument("ref")
    features.add_argument("hyp")
    features.add_argument("--table")
    features.add_argument("--jobs", type=int, default=1)
    _add_report_options(features)
    features.set_defaults(func=cmd_features)

    decode = subs.add_parser("decode", help="grid JSON -> hypothesis TSV")
    decode.add_argument("grids", help="posterior grid JSON file")
    decode.add_argument("--table")
    decode.add_argument("--mode", choices=("greedy", "beam"), default="greedy")
    decode.add_argument("--beam-width", type=int, default=8)
    decode.add_argument("--jobs", type=int, default=1)
    decode.add_argument("--out", help="hypothesis TSV path (default: stdout)")
    decode.set_defaults(func=cmd_decode)

    tr = subs.add_parser("train", help="train one objective on the synthetic task")
    tr.add_argument("--objective", choices=OBJECTIVES, default="vanilla")
    tr.add_argument("--aux-layers", type=_int_tuple, default=())
    tr.add_argument("--freeze-conditioning", action="store_true")
    _add_task_options(tr)
    tr.add_argument("--trace", help="training trace JSONL path")
    tr.add_argument("--checkpoint", help="model checkpoint JSON path")
    tr.add_argument("--figures", metavar="DIR")
    tr.set_defaults(func=cmd_train)

    ablate = subs.add_parser("ablate", help="train every objective; emit a comparison table")
    ablate.add_argument(
        "--objectives", type=_objective_list, default=OBJECTIVES, metavar="a,b,..."
    )
    _add_task_options(ablate)
    _add_report_options(ablate)
    ablate.set_defaults(func=cmd_ablate)

    corr = subs.add_parser("correlate", help="coverage vs per-language PFER rank correlation")
    corr.add_argument("scores", help="score report JSON (from `score`)")
    corr.add_argument("vectors", help="language vectors CSV")
    corr.add_argument("counts", help="training counts TSV")
    corr.add_argument("--family-map")
    corr.add_argument(
        "--exclude-self",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="drop the test language's own training data from its coverage",
    )
    corr.add_argument("--method", choices=("t", "permutation"), default="t")
    corr.add_argument("--permutations", type=int, default=10_000)
    corr.add_argument("--seed", type=int, default=0)
    _add_report_options(corr)
    corr.set_defaults(func=cmd_correlate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"phonekit: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DataError) as err:
        print(f"phonekit: error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"phonekit: error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
