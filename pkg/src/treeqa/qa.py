"""RAG loop: retrieve top-k paths for a question and generate an answer from them."""

from __future__ import annotations

from dataclasses import dataclass

from .describer import DescriptionStore
from .paths import PathCorpus
from .retrieval import (
    RetrievalError,
    RetrievalResult,
    RetrieverConfig,
    VectorIndex,
    bm25_topk,
    retrieve_descriptions,
    retrieve_paths,
)

ANSWER_PROMPT_VERSION = "answer-v1"

_SYSTEM_MESSAGE = (
    "You answer questions about an academic conference using only the provided "
    "knowledge paths. If the paths do not contain the answer, say so."
)


class QAError(ValueError):
    """Raised on invalid queries or missing knowledge artifacts."""


@dataclass
class Query:
    text: str
    conference_id: str

    def __post_init__(self):
        self.text = self.text.strip()
        if not self.text:
            raise QAError("query text is empty")


@dataclass
class AnswerRecord:
    query: Query
    answer: str
    retrieved: RetrievalResult
    generator_id: str
    prompt_version: str = ANSWER_PROMPT_VERSION


@dataclass
class Knowledge:
    """Everything the engine needs for one conference."""

    corpus: PathCorpus
    path_index: VectorIndex | None = None
    description_index: VectorIndex | None = None
    store: DescriptionStore | None = None
    embedder: object | None = None


def assemble_answer_prompt(query: Query, retrieved: RetrievalResult) -> str:
    """Deterministic template: instruction, then paths in rank order, then the question.

    Only raw paths go into the prompt; descriptions steer retrieval but never
    reach the generator.
    """
    if not retrieved.ranked:
        raise QAError("cannot assemble a prompt from an empty retrieval result")
    lines = ["Answer the question using only these knowledge paths:"]
    for i, (path, _score) in enumerate(retrieved.ranked, start=1):
        lines.append(f"{i}. {path.serialized()}")
    lines.append(f"Question: {query.text}")
    return "\n".join(lines)


def retrieve(query: Query, knowledge: Knowledge, cfg: RetrieverConfig) -> RetrievalResult:
    mode = cfg.retriever
    if mode == "dense_path":
        if knowledge.path_index is None or knowledge.embedder is None:
            raise QAError("dense_path retrieval needs a path index and an embedder")
        return retrieve_paths(query.text, knowledge.path_index, knowledge.corpus, knowledge.embedder, cfg)
    if mode == "dense_description":
        if knowledge.description_index is None or knowledge.store is None or knowledge.embedder is None:
            raise QAError("dense_description retrieval needs a description index, store, and embedder")
        return retrieve_descriptions(
            query.text, knowledge.description_index, knowledge.corpus, knowledge.store, knowledge.embedder, cfg
        )
    if mode == "bm25_path":
        entries = [(p.path_id, p.serialized()) for p in knowledge.corpus.paths]
        return bm25_topk(query.text, entries, knowledge.corpus, cfg)
    if mode == "bm25_description":
        if knowledge.store is None:
            raise QAError("bm25_description retrieval needs a description store")
        entries = []
        for p in knowledge.corpus.paths:
            desc = knowledge.store.entries.get(p.path_id)
            if desc is None:
                raise RetrievalError(f"no description for path_id {p.path_id}")
            entries.append((p.path_id, desc.text))
        return bm25_topk(query.text, entries, knowledge.corpus, cfg)
    raise QAError(f"unknown retriever {mode!r}")


def answer(
    query: Query,
    knowledge: Knowledge,
    cfg: RetrieverConfig,
    gateway,
    generator_id: str = "unknown",
) -> AnswerRecord:
    if knowledge.corpus.conference_id != query.conference_id:
        raise QAError(
            f"no knowledge for conference {query.conference_id!r} "
            f"(loaded: {knowledge.corpus.conference_id!r})"
        )
    retrieved = retrieve(query, knowledge, cfg)
    prompt = assemble_answer_prompt(query, retrieved)
    messages = [
        {"role": "system", "content": _SYSTEM_MESSAGE},
        {"role": "user", "content": prompt},
    ]
    completion = gateway.chat(messages, temperature=0)
    return AnswerRecord(
        query=query,
        answer=completion,
        retrieved=retrieved,
        generator_id=generator_id,
    )
