"""Command-line interface.

Subcommands:

    ingest     build and persist a BM25 index from a JSONL corpus
    run        evaluate the adaptive pipeline over a dataset
    calibrate  grid-search routing thresholds from calibration records
    ablate     compare binary SE routing against PE baselines
    report     render (and optionally verify) a saved report

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 backend error. Every run is a one-shot batch process; there is no daemon
mode. Flags beat config-file values; all randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import HTTP, MOCK, RunConfig, load_config
from .entailment import HttpEntailment, MockEntailment
from .errors import ConfigError, DataError, DatasetNotFound, SemrouteError
from .evaluation import (
    EvalRecord,
    EvalReport,
    ablate,
    aggregate,
    load_dataset,
    render_ablation_table,
    render_report_table,
    report_to_json,
    run_eval,
)
from .generator import HttpGenerator, MockGenerator
from .orchestrator import Pipeline
from .retriever import BM25Index, ingest_corpus
from .router import (
    calibrate,
    entropy_accuracy_profile,
    load_calibration_records,
    pairs_from_values,
)

logger = logging.getLogger(__name__)


def build_pipeline(config: RunConfig, require_index: bool = False) -> Pipeline:
    """Construct backends and the pipeline from a validated config."""
    if config.generator.backend == MOCK:
        generator = MockGenerator.from_file(config.generator.mock_scenario)
    else:
        generator = HttpGenerator(
            url=config.generator.http_url,
            model=config.generator.model,
            timeout_s=config.generator.timeout_s,
            max_retries=config.generator.max_retries,
            fan_out=config.generator.fan_out,
            max_n_per_request=config.generator.max_n_per_request,
            api_key=config.api_key,
            demo_question=config.generator.demo_question,
            demo_answer=config.generator.demo_answer,
            context_header=config.generator.context_header,
        )
    if config.entailment.backend == MOCK:
        entailment = MockEntailment.from_files(
            alias_table=config.entailment.alias_table,
            antonym_table=config.entailment.antonym_table,
        )
    else:
        entailment = HttpEntailment(
            url=config.entailment.http_url,
            timeout_s=config.entailment.timeout_s,
            max_retries=config.entailment.max_retries,
            api_key=config.api_key,
        )
    retriever = None
    if config.retriever.index_dir:
        retriever = BM25Index.load(config.retriever.index_dir)
    elif require_index:
        raise ConfigError(
            "missing required config key: retriever.index_dir "
            "(run ingest first, then point the config at the index)"
        )
    return Pipeline(config, generator, entailment, retriever)


def _write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def _load_report_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DatasetNotFound(f"report not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise DataError(f"{p}: expected a JSON object")
    return payload


def _report_from_dict(payload: dict, path: str) -> EvalReport:
    try:
        return EvalReport(
            dataset=payload["dataset"],
            num_questions=payload["num_questions"],
            em=payload["em"],
            f1=payload["f1"],
            acc=payload["acc"],
            mean_retrieval_steps=payload["mean_retrieval_steps"],
            mean_wall_time_ms=payload["mean_wall_time_ms"],
            mode_counts=payload["mode_counts"],
            failed_questions=payload["failed_questions"],
            relative_time=payload.get("relative_time"),
        )
    except KeyError as exc:
        raise DataError(f"{path}: not a report file (missing {exc})") from exc


# --- subcommands ----------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    index = ingest_corpus(args.corpus)
    index.save(args.index)
    stats = index.stats()
    print(f"indexed {stats.num_docs} documents")
    print(f"vocabulary {stats.num_terms} terms")
    print(f"average document length {stats.avg_doc_len:.2f} tokens")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides=args.set, seed=args.seed)
    baseline = _load_report_json(args.baseline_report) if args.baseline_report else None
    questions = load_dataset(args.dataset)
    pipeline = build_pipeline(config)
    report, records, results = run_eval(
        pipeline,
        questions,
        dataset_name=Path(args.dataset).stem,
        baseline_report=baseline,
    )
    out = Path(args.out)
    _write_text(out / "report.json", report_to_json(report))
    _write_text(
        out / "records.jsonl",
        "\n".join(json.dumps(r.to_dict(), sort_keys=True) for r in records) + "\n",
    )
    result_lines = []
    for record, result in zip(records, results):
        if result is None:
            result_lines.append(
                json.dumps(
                    {"question_id": record.question_id, "error": record.error},
                    sort_keys=True,
                )
            )
        else:
            result_lines.append(json.dumps(result.to_dict(), sort_keys=True))
    _write_text(out / "results.jsonl", "\n".join(result_lines) + "\n")
    print(render_report_table(report))
    print(f"\nreport written to {out / 'report.json'}")
    return 0


def _parse_grid(raw: str | None):
    if raw is None:
        return None
    try:
        values = [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--grid must be comma-separated numbers: {exc}") from exc
    if not values:
        raise ConfigError("--grid is empty")
    if any(v < 0 for v in values):
        raise ConfigError("--grid values must be >= 0")
    return pairs_from_values(values)


def cmd_calibrate(args: argparse.Namespace) -> int:
    records = load_calibration_records(args.records)
    grid = _parse_grid(args.grid)
    thresholds = calibrate(
        records, grid=grid, k_folds=args.folds, seed=args.seed or 0
    )
    profile = entropy_accuracy_profile(
        records, thresholds, bucket_width=args.bucket_width
    )
    header = ("entropy", "count", "accuracy", "retrieval")
    rows = [
        (
            f"[{b.lower:.2f}, {b.upper:.2f})",
            str(b.count),
            f"{b.accuracy:.3f}",
            f"{b.retrieval_frequency:.3f}",
        )
        for b in profile
    ]
    widths = [max(len(r[c]) for r in (header, *rows)) for c in range(4)]
    for row in (header, *rows):
        print("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)))
    print(f"\ntau_low  = {thresholds.tau_low:g}")
    print(f"tau_high = {thresholds.tau_high:g}")
    if args.out_config:
        fragment = {
            "router": {
                "tau_low": thresholds.tau_low,
                "tau_high": thresholds.tau_high,
            }
        }
        _write_text(Path(args.out_config), yaml.safe_dump(fragment, sort_keys=True))
        print(f"config fragment written to {args.out_config}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides=args.set, seed=args.seed)
    questions = load_dataset(args.dataset)
    pipeline = build_pipeline(config)
    report = ablate(
        pipeline,
        questions,
        dataset_name=Path(args.dataset).stem,
        tau_se=args.tau_se,
        tau_pe_list=args.tau_pe,
    )
    print(render_ablation_table(report))
    if args.out:
        out = Path(args.out)
        _write_text(
            out / "ablation.json",
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        )
        print(f"\nablation written to {out / 'ablation.json'}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    payload = _load_report_json(args.report)
    report = _report_from_dict(payload, args.report)
    print(render_report_table(report))
    if args.records:
        path = Path(args.records)
        if not path.is_file():
            raise DatasetNotFound(f"records file not found: {path}")
        records = []
        with path.open(encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if line.strip() == "":
                    continue
                raw = json.loads(line)
                records.append(
                    EvalRecord(
                        question_id=raw["question_id"],
                        prediction=raw["prediction"],
                        gold_answers=tuple(raw["gold_answers"]),
                        em=raw["em"],
                        f1=raw["f1"],
                        acc=raw["acc"],
                        retrieval_steps=raw["retrieval_steps"],
                        wall_time_ms=raw["wall_time_ms"],
                        mode=raw["mode"],
                        error=raw.get("error"),
                    )
                )
        recomputed = aggregate(report.dataset, records)
        expected = report.to_dict()
        expected.pop("relative_time", None)
        if recomputed.to_dict() != expected:
            raise DataError(
                f"{args.records} disagrees with {args.report}: "
                "aggregates do not match"
            )
        print(f"\n{len(records)} records consistent with the report")
    return 0


# --- argument parsing -------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, repeatable (e.g. --set router.tau_low=0.3)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semroute",
        description="entropy-routed adaptive retrieval for question answering",
    )
    parser.add_argument("--version", action="version", version=f"semroute {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="index a JSONL corpus")
    p_ingest.add_argument("--corpus", required=True, help="corpus JSONL path")
    p_ingest.add_argument("--index", required=True, help="output index directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="evaluate the pipeline over a dataset")
    p_run.add_argument("--dataset", required=True, help="dataset JSONL path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument(
        "--baseline-report",
        default=None,
        help="report.json of a baseline run; enables relative_time",
    )
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cal = sub.add_parser("calibrate", help="grid-search routing thresholds")
    p_cal.add_argument("--records", required=True, help="calibration records JSONL")
    p_cal.add_argument(
        "--grid",
        default=None,
        help="comma-separated tau values; all valid pairs are searched "
        "(default 0.0..2.0 step 0.1)",
    )
    p_cal.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    p_cal.add_argument("--seed", type=int, default=0, help="fold-shuffle seed")
    p_cal.add_argument(
        "--bucket-width", type=float, default=0.1, help="profile bucket width in nats"
    )
    p_cal.add_argument(
        "--out-config", default=None, help="write the chosen thresholds as a YAML fragment"
    )
    p_cal.set_defaults(func=cmd_calibrate)

    p_abl = sub.add_parser("ablate", help="binary SE-vs-PE routing comparison")
    p_abl.add_argument("--dataset", required=True, help="dataset JSONL path")
    p_abl.add_argument("--tau-se", type=float, required=True, help="SE threshold")
    p_abl.add_argument(
        "--tau-pe",
        type=float,
        action="append",
        required=True,
        help="PE threshold, repeatable",
    )
    p_abl.add_argument("--out", default=None, help="optional output directory")
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_rep = sub.add_parser("report", help="render a saved report")
    p_rep.add_argument("--report", required=True, help="report.json path")
    p_rep.add_argument(
        "--records",
        default=None,
        help="records.jsonl to verify against the report",
    )
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except SemrouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
