"""Regenerate the golden fixtures under tests/data/.

Builds a 60-question mock world with three tiers of uncertainty:

    q01-q20  one scripted answer, entropy 0, stays closed-book
    q21-q40  two answers at 0.5/0.5 closed-book; retrieval resolves them
    q41-q60  ten answers at 0.1 each; never converges, runs all steps

The master seed is searched so that every question routes to its intended
tier under the default thresholds (a mid-tier draw can land outside the
single-step band by chance). The verified report is frozen to
golden_report.json; the acceptance suite re-runs the pipeline and compares
bytes.

Run from the repository root:  python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import yaml

from semroute.config import load_config
from semroute.entailment import MockEntailment
from semroute.evaluation import report_to_json, run_eval
from semroute.generator import MockGenerator, Question
from semroute.orchestrator import Pipeline
from semroute.retriever import BM25Index, Document

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "tests" / "data"

LOW = range(1, 21)
MID = range(21, 41)
HIGH = range(41, 61)
CANDIDATES = "abcdefghij"
MAX_SEED = 10_000


def question_id(i: int) -> str:
    return f"q{i:02d}"


def question_text(i: int) -> str:
    return f"what does the archive say about topic{i:02d}"


def gold_answers(i: int) -> list[str]:
    if i in LOW or i in MID:
        return [f"item{i:02d}"]
    # First half of the high tier gets an unreachable gold so the frozen
    # report exercises non-trivial em/f1 aggregation.
    if i < 51:
        return [f"opt{i:02d}a plus extra"]
    return [f"opt{i:02d}a"]


def build_scenario() -> dict:
    questions: dict[str, object] = {}
    for i in LOW:
        questions[question_id(i)] = [{"text": f"item{i:02d}", "probability": 1.0}]
    for i in MID:
        questions[question_id(i)] = {
            "closed_book": [
                {"text": f"item{i:02d}", "probability": 0.5},
                {"text": f"decoy{i:02d}", "probability": 0.5},
            ],
            "with_context": [{"text": f"item{i:02d}", "probability": 1.0}],
        }
    for i in HIGH:
        questions[question_id(i)] = [
            {"text": f"opt{i:02d}{c}", "probability": 0.1} for c in CANDIDATES
        ]
    return {"questions": questions}


def build_corpus() -> list[Document]:
    docs = []
    for i in (*LOW, *MID, *HIGH):
        answer = f"item{i:02d}" if i <= 40 else f"opt{i:02d}a"
        docs.append(
            Document(
                doc_id=f"d{i:02d}",
                title=f"note on topic{i:02d}",
                text=f"topic{i:02d} is associated with {answer}",
            )
        )
    return docs


def build_questions() -> list[Question]:
    return [
        Question(id=question_id(i), text=question_text(i), gold_answers=tuple(gold_answers(i)))
        for i in (*LOW, *MID, *HIGH)
    ]


def expected_outcome(i: int) -> tuple[str, int, str]:
    if i in LOW:
        return "no_retrieval", 0, f"item{i:02d}"
    if i in MID:
        return "single_step", 1, f"item{i:02d}"
    return "multi_step", 3, f"opt{i:02d}a"


def config_payload(seed: int) -> dict:
    return {
        "generator": {"backend": "mock"},
        "entailment": {"backend": "mock"},
        "sampling": {"n": 10, "temperature": 1.0},
        "router": {"tau_low": 0.4, "tau_high": 0.9, "signal": "se"},
        "retriever": {"k": 5},
        "multistep": {"max_steps": 3},
        "runner": {"parallelism": 4, "measure_time": False},
        "seed": seed,
    }


def run_once(seed: int, scenario: dict, index: BM25Index, questions: list[Question]):
    config = load_config(validate=False)
    config.seed = seed
    pipeline = Pipeline(config, MockGenerator(scenario), MockEntailment(), index)
    return run_eval(pipeline, questions, dataset_name="golden_dataset")


def seed_routes_cleanly(records) -> bool:
    for i, record in zip((*LOW, *MID, *HIGH), records):
        mode, steps, answer = expected_outcome(i)
        if (record.mode, record.retrieval_steps, record.prediction) != (mode, steps, answer):
            return False
    return True


def main() -> int:
    scenario = build_scenario()
    corpus = build_corpus()
    questions = build_questions()
    index = BM25Index()
    index.build(corpus)

    chosen = None
    for seed in range(MAX_SEED):
        _, records, _ = run_once(seed, scenario, index, questions)
        if seed_routes_cleanly(records):
            chosen = seed
            break
    if chosen is None:
        print(f"no seed below {MAX_SEED} routes all 60 questions cleanly", file=sys.stderr)
        return 1

    report, records, _ = run_once(chosen, scenario, index, questions)
    print(f"seed {chosen}: em={report.em:.4f} f1={report.f1:.4f} acc={report.acc:.4f}")
    print(f"mean steps {report.mean_retrieval_steps:.6f} modes {report.mode_counts}")

    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "golden_scenario.json").write_text(
        json.dumps(scenario, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (DATA / "golden_dataset.jsonl").write_text(
        "\n".join(
            json.dumps(
                {"id": q.id, "question": q.text, "answers": list(q.gold_answers)},
                sort_keys=True,
            )
            for q in questions
        )
        + "\n",
        encoding="utf-8",
    )
    (DATA / "golden_corpus.jsonl").write_text(
        "\n".join(
            json.dumps(
                {"doc_id": d.doc_id, "title": d.title, "text": d.text}, sort_keys=True
            )
            for d in corpus
        )
        + "\n",
        encoding="utf-8",
    )
    (DATA / "golden_config.yaml").write_text(
        yaml.safe_dump(config_payload(chosen), sort_keys=True), encoding="utf-8"
    )
    (DATA / "golden_report.json").write_text(report_to_json(report), encoding="utf-8")
    print(f"fixtures written to {DATA}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
