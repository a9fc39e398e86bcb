"""Answer scoring (token F1, judge-based exact match) and stratified evaluation."""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .gateway import GatewayError
from .paths import parse as parse_path
from .qa import Knowledge, Query, answer
from .retrieval import RetrieverConfig
from .textutil import normalize, tokenize

JUDGE_PROMPT_VERSION = "judge-v1"

QUESTION_TYPES = ("EA", "EC", "RA", "RC")

_QTYPE_ALIASES = {
    "ea": "EA",
    "ec": "EC",
    "ra": "RA",
    "rc": "RC",
    "extraction-atomic": "EA",
    "extraction-complex": "EC",
    "reasoning-atomic": "RA",
    "reasoning-complex": "RC",
    "extraction_atomic": "EA",
    "extraction_complex": "EC",
    "reasoning_atomic": "RA",
    "reasoning_complex": "RC",
}


class EvalError(ValueError):
    """Raised on malformed QA pair records or missing knowledge artifacts."""


def parse_qtype(value: str) -> str:
    code = _QTYPE_ALIASES.get(value.strip().lower())
    if code is None:
        raise EvalError(f"unknown question type {value!r}")
    return code


def qtype_is_atomic(code: str) -> bool:
    return code in ("EA", "RA")


@dataclass
class QAPair:
    question: str
    gold_answer: str
    answer_source_paths: list[str]
    qtype: str
    conference_id: str

    def __post_init__(self):
        self.qtype = parse_qtype(self.qtype)
        if not self.answer_source_paths:
            raise EvalError(f"no answer source paths for question {self.question!r}")
        for raw in self.answer_source_paths:
            parse_path(raw)  # must be a valid serialized path
        if qtype_is_atomic(self.qtype) and len(self.answer_source_paths) != 1:
            raise EvalError(
                f"atomic question has {len(self.answer_source_paths)} source paths: "
                f"{self.question!r}"
            )
        if not qtype_is_atomic(self.qtype) and len(self.answer_source_paths) < 2:
            raise EvalError(
                f"complex question needs more than one source path: {self.question!r}"
            )


_KEY_ALIASES = {
    "question": ("question", "q"),
    "gold_answer": ("gold_answer", "answer", "gold", "a"),
    "answer_source_paths": ("answer_source_paths", "sources", "source", "answer_source", "evidence"),
    "qtype": ("qtype", "type", "question_type", "category", "class"),
    "conference_id": ("conference_id", "conference", "dataset"),
}


def pair_from_record(obj: dict, default_conference: str | None = None) -> QAPair:
    """Lossless shim over published record key variants."""
    values = {}
    for target, aliases in _KEY_ALIASES.items():
        for alias in aliases:
            if alias in obj:
                values[target] = obj[alias]
                break
    if "conference_id" not in values and default_conference:
        values["conference_id"] = default_conference
    missing = [k for k in _KEY_ALIASES if k not in values]
    if missing:
        raise EvalError(f"QA record missing fields {missing}: {obj!r:.200}")
    sources = values["answer_source_paths"]
    if isinstance(sources, str):
        sources = [sources]
    return QAPair(
        question=values["question"],
        gold_answer=values["gold_answer"],
        answer_source_paths=list(sources),
        qtype=values["qtype"],
        conference_id=values["conference_id"],
    )


def load_pairs(path: str, default_conference: str | None = None) -> list[QAPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            pairs.append(pair_from_record(obj, default_conference))
    return pairs


def token_f1(pred: str, gold: str) -> float:
    """Harmonic mean of token precision and recall with multiset overlap."""
    pred_tokens = tokenize(pred)
    gold_tokens = tokenize(gold)
    if not pred_tokens or not gold_tokens:
        return 1.0 if pred_tokens == gold_tokens else 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def fallback_judge(pred: str, gold: str, question: str = "") -> str:
    """Deterministic exact-match verdict used when no LLM judge is configured."""
    norm_pred, norm_gold = normalize(pred), normalize(gold)
    if norm_gold and norm_gold in norm_pred:
        return "match"
    if token_f1(pred, gold) >= 0.99:
        return "match"
    return "no_match"


def build_judge_prompt(pred: str, gold: str, question: str) -> str:
    return "\n".join(
        [
            "Decide whether the predicted answer conveys the same answer as the "
            "correct one, tolerating phrasing differences.",
            f"Question: {question}",
            f"Correct answer: {gold}",
            f"Predicted answer: {pred}",
            "Reply with exactly MATCH or NO_MATCH.",
        ]
    )


def judge_exact_match(pred: str, gold: str, question: str, judge=None) -> str:
    """Binary verdict: 'match' / 'no_match', or 'unjudged' on judge failure."""
    if judge is None:
        return fallback_judge(pred, gold, question)
    messages = [
        {"role": "system", "content": "You are a strict but fair grading assistant."},
        {"role": "user", "content": build_judge_prompt(pred, gold, question)},
    ]
    try:
        verdict = judge.chat(messages, temperature=0)
    except GatewayError:
        return "unjudged"
    return "match" if "MATCH" in verdict.upper() and "NO_MATCH" not in verdict.upper() else "no_match"


@dataclass
class PairOutcome:
    pair: QAPair
    mode: str
    answer: str
    f1: float
    em: str  # match | no_match | unjudged
    recall_hit: bool


@dataclass
class Cell:
    n: int = 0
    n_judged: int = 0
    f1_sum: float = 0.0
    em_matches: int = 0
    recall_hits: int = 0

    @property
    def f1_mean(self) -> float:
        return 100.0 * self.f1_sum / self.n if self.n else 0.0

    @property
    def em_mean(self) -> float:
        return 100.0 * self.em_matches / self.n_judged if self.n_judged else 0.0

    @property
    def recall(self) -> float:
        return self.recall_hits / self.n if self.n else 0.0


@dataclass
class EvalReport:
    modes: list[str]
    cells: dict[tuple[str, str, str], Cell] = field(default_factory=dict)  # (conf, qtype, mode)
    outcomes: list[PairOutcome] = field(default_factory=list)
    failures: list[tuple[str, str, str]] = field(default_factory=list)  # (conf, question, error)
    judge_label: str = "fallback"

    def cell(self, conference: str, qtype: str, mode: str) -> Cell:
        return self.cells.setdefault((conference, qtype, mode), Cell())

    def delta(self, conference: str, qtype: str, desc_mode: str, path_mode: str):
        """Cellwise (description minus path) deltas for f1_mean and em_mean."""
        a = self.cells.get((conference, qtype, desc_mode))
        b = self.cells.get((conference, qtype, path_mode))
        if a is None or b is None:
            return None
        return (a.f1_mean - b.f1_mean, a.em_mean - b.em_mean)


_DELTA_PAIRS = (("dense_description", "dense_path"), ("bm25_description", "bm25_path"))


def delta_pairs(modes: list[str]) -> list[tuple[str, str]]:
    return [(d, p) for d, p in _DELTA_PAIRS if d in modes and p in modes]


def evaluate_dataset(
    pairs: list[QAPair],
    knowledge_by_conference: dict[str, Knowledge],
    modes: list[str],
    cfg: RetrieverConfig,
    gateway,
    judge=None,
    generator_id: str = "unknown",
    concurrency: int = 8,
) -> EvalReport:
    """Answer every pair under every retrieval mode, then aggregate per cell.

    Per-pair failures are recorded and skipped; aggregation is order-independent.
    Also tracks retrieval recall: whether all of a pair's source paths appear in
    the retrieved top-k.
    """
    for pair in pairs:
        if pair.conference_id not in knowledge_by_conference:
            raise EvalError(f"no knowledge artifacts for conference {pair.conference_id!r}")

    report = EvalReport(modes=list(modes), judge_label="llm" if judge is not None else "fallback")

    def run_one(pair: QAPair, mode: str) -> PairOutcome:
        knowledge = knowledge_by_conference[pair.conference_id]
        mode_cfg = RetrieverConfig(
            k=cfg.k, retriever=mode, bm25_k1=cfg.bm25_k1, bm25_b=cfg.bm25_b
        )
        record = answer(
            Query(text=pair.question, conference_id=pair.conference_id),
            knowledge,
            mode_cfg,
            gateway,
            generator_id=generator_id,
        )
        retrieved_set = {p.serialized() for p, _ in record.retrieved.ranked}
        return PairOutcome(
            pair=pair,
            mode=mode,
            answer=record.answer,
            f1=token_f1(record.answer, pair.gold_answer),
            em=judge_exact_match(record.answer, pair.gold_answer, pair.question, judge),
            recall_hit=all(src in retrieved_set for src in pair.answer_source_paths),
        )

    tasks = [(pair, mode) for mode in modes for pair in pairs]
    outcomes: list[PairOutcome | None] = [None] * len(tasks)
    if tasks:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            futures = {pool.submit(run_one, p, m): i for i, (p, m) in enumerate(tasks)}
            for fut, i in futures.items():
                pair, mode = tasks[i]
                try:
                    outcomes[i] = fut.result()
                except Exception as exc:  # record-and-continue policy
                    report.failures.append((pair.conference_id, pair.question, f"{mode}: {exc}"))

    for outcome in outcomes:
        if outcome is None:
            continue
        report.outcomes.append(outcome)
        cell = report.cell(outcome.pair.conference_id, outcome.pair.qtype, outcome.mode)
        cell.n += 1
        cell.f1_sum += outcome.f1
        cell.recall_hits += outcome.recall_hit
        if outcome.em != "unjudged":
            cell.n_judged += 1
            cell.em_matches += outcome.em == "match"
    return report
