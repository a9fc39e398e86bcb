"""Top-down generation of per-path descriptions conditioned on structural context.

Each node's description is generated only after its parent's description exists,
and incorporates the parent description, the node's siblings (with leaf siblings
carrying their parent's text), and the target path itself.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .gateway import GatewayError
from .paths import (
    ELISION_MARKER,
    NodeContext,
    PathCorpus,
    node_context,
    path_id_for,
)
from .tree import SEPARATOR, KnowledgeTree, TreeNode

log = logging.getLogger(__name__)

PROMPT_VERSION = "desc-v1"
PROMPT_LEAF_TRUNCATION = 500

_SYSTEM_MESSAGE = (
    "You write concise reference descriptions for entries in a hierarchical "
    "conference knowledge base."
)


class StoreError(ValueError):
    """Raised on corrupt or incompatible description store files."""


@dataclass
class PathDescription:
    path_id: str
    prefix: tuple[str, ...]
    text: str
    prompt_version: str
    source: str = "generated"  # generated | cached
    fallback: bool = False
    cache_key: str = ""


@dataclass
class DescriptionStore:
    conference_id: str
    entries: dict[str, PathDescription] = field(default_factory=dict)

    def leaf_store(self, corpus: PathCorpus) -> "DescriptionStore":
        """Only leaf-path entries; the knowledge source actually indexed."""
        wanted = {p.path_id for p in corpus.paths}
        return DescriptionStore(
            conference_id=self.conference_id,
            entries={pid: d for pid, d in self.entries.items() if pid in wanted},
        )


def _clip(label: str) -> str:
    if len(label) > PROMPT_LEAF_TRUNCATION:
        return label[:PROMPT_LEAF_TRUNCATION] + "…"
    return label


def build_description_prompt(context: NodeContext, parent_description: str | None = None) -> str:
    """Deterministic user prompt for one node; the root passes no parent description."""
    target = SEPARATOR.join(list(context.target[:-1]) + [_clip(context.target[-1])])
    lines = [f"Target path: {target}"]
    if parent_description is None:
        lines.append(
            "Context: this is the root of the knowledge base, named after the conference."
        )
    else:
        lines.append(f"Parent description: {parent_description}")
    if context.siblings:
        lines.append("Sibling entries at the same level:")
        for sib in context.siblings:
            lines.append(f"- {_clip(sib)}")
        if context.elided_siblings:
            lines.append(ELISION_MARKER.format(n=context.elided_siblings))
    else:
        lines.append("Sibling entries at the same level: none")
    lines.append(
        "Write one standalone paragraph describing exactly what the target path "
        "denotes, so that the paragraph alone suffices to match questions about it."
    )
    return "\n".join(lines)


def _cache_key(
    prefix: tuple[str, ...],
    parent_description: str | None,
    siblings: list[str],
    prompt_version: str,
) -> str:
    parts = json.dumps(
        {
            "prefix": list(prefix),
            "parent": hashlib.sha256((parent_description or "").encode()).hexdigest(),
            "siblings": hashlib.sha256("\n".join(siblings).encode()).hexdigest(),
            "version": prompt_version,
        },
        sort_keys=True,
    )
    return hashlib.sha256(parts.encode("utf-8")).hexdigest()[:16]


def _entry_to_obj(entry: PathDescription) -> dict:
    return {
        "path_id": entry.path_id,
        "prefix": list(entry.prefix),
        "text": entry.text,
        "prompt_version": entry.prompt_version,
        "source": entry.source,
        "fallback": entry.fallback,
        "cache_key": entry.cache_key,
    }


def _entry_from_obj(obj: dict) -> PathDescription:
    return PathDescription(
        path_id=obj["path_id"],
        prefix=tuple(obj["prefix"]),
        text=obj["text"],
        prompt_version=obj["prompt_version"],
        source=obj.get("source", "generated"),
        fallback=obj.get("fallback", False),
        cache_key=obj.get("cache_key", ""),
    )


def save_store(store: DescriptionStore, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"conference": store.conference_id}, ensure_ascii=False))
        fh.write("\n")
        for entry in store.entries.values():
            fh.write(json.dumps(_entry_to_obj(entry), ensure_ascii=False))
            fh.write("\n")
    os.replace(tmp, path)


def load_store(
    path: str,
    strict: bool = False,
    expected_prompt_version: str | None = None,
) -> DescriptionStore:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise StoreError(f"cannot read store {path}: {exc}") from exc
    if not lines:
        raise StoreError(f"corrupt store file {path}: empty")
    try:
        header = json.loads(lines[0])
        conference = header["conference"]
        entries = [_entry_from_obj(json.loads(line)) for line in lines[1:] if line]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise StoreError(f"corrupt store file {path}: {exc}") from exc
    store = DescriptionStore(conference_id=conference)
    for entry in entries:
        store.entries[entry.path_id] = entry
    if expected_prompt_version is not None:
        mismatched = {
            e.prompt_version for e in store.entries.values() if e.prompt_version != expected_prompt_version
        }
        if mismatched:
            msg = (
                f"store {path} holds prompt_version(s) {sorted(mismatched)}, "
                f"expected {expected_prompt_version}"
            )
            if strict:
                raise StoreError(msg)
            log.warning(msg)
    return store


def _load_partial(path: str, conference_id: str) -> dict[str, PathDescription]:
    """Resume helper: tolerates a crash-truncated final line, nothing else."""
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    entries: dict[str, PathDescription] = {}
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise StoreError(f"corrupt store file {path} at line {i + 1}")
        if "conference" in obj and "path_id" not in obj:
            continue
        entry = _entry_from_obj(obj)
        entries[entry.path_id] = entry
    return entries


def _levels(tree: KnowledgeTree) -> list[list[tuple[str, ...]]]:
    """Node prefixes grouped by depth, each level in pre-order."""
    levels: list[list[tuple[str, ...]]] = []

    def walk(node: TreeNode, prefix: tuple[str, ...], depth: int) -> None:
        prefix = prefix + (node.label,)
        if len(levels) <= depth:
            levels.append([])
        levels[depth].append(prefix)
        for child in node.children:
            walk(child, prefix, depth + 1)

    walk(tree.root, (), 0)
    return levels


def describe_tree(
    tree: KnowledgeTree,
    corpus: PathCorpus,
    llm,
    store_path: str | None = None,
    max_in_flight: int = 8,
    prompt_version: str = PROMPT_VERSION,
) -> DescriptionStore:
    """Generate descriptions level by level, parents strictly before children.

    Within a level, sibling subtrees run concurrently up to ``max_in_flight``.
    With ``store_path`` set, completed levels are appended as they finish so an
    interrupted run resumes without regenerating anything already done.
    """
    existing = _load_partial(store_path, tree.conference_id) if store_path else {}
    store = DescriptionStore(conference_id=tree.conference_id)

    def generate(prefix: tuple[str, ...], ctx: NodeContext, parent_desc: str | None, key: str) -> PathDescription:
        prompt = build_description_prompt(ctx, parent_desc)
        messages = [
            {"role": "system", "content": _SYSTEM_MESSAGE},
            {"role": "user", "content": prompt},
        ]
        text = llm.chat(messages, temperature=0)
        if not text.strip():
            text = llm.chat(messages, temperature=0)
        fallback = False
        if not text.strip():
            text = SEPARATOR.join(prefix)
            fallback = True
        return PathDescription(
            path_id=path_id_for(SEPARATOR.join(prefix)),
            prefix=prefix,
            text=text,
            prompt_version=prompt_version,
            source="generated",
            fallback=fallback,
            cache_key=key,
        )

    def persist(new_entries: list[PathDescription]) -> None:
        if store_path is None or not new_entries:
            return
        write_header = not os.path.exists(store_path) or os.path.getsize(store_path) == 0
        with open(store_path, "a", encoding="utf-8") as fh:
            if write_header:
                fh.write(json.dumps({"conference": store.conference_id}, ensure_ascii=False))
                fh.write("\n")
            for entry in new_entries:
                fh.write(json.dumps(_entry_to_obj(entry), ensure_ascii=False))
                fh.write("\n")

    for level in _levels(tree):
        planned: list[tuple[tuple[str, ...], NodeContext, str | None, str, PathDescription | None]] = []
        for prefix in level:
            ctx = node_context(tree, prefix)
            parent_desc = None
            if len(prefix) > 1:
                parent_id = path_id_for(SEPARATOR.join(prefix[:-1]))
                parent_desc = store.entries[parent_id].text
            key = _cache_key(prefix, parent_desc, ctx.siblings, prompt_version)
            pid = path_id_for(SEPARATOR.join(prefix))
            reuse = existing.get(pid)
            if reuse is not None and reuse.cache_key == key:
                cached = PathDescription(
                    path_id=pid,
                    prefix=prefix,
                    text=reuse.text,
                    prompt_version=reuse.prompt_version,
                    source="cached",
                    fallback=reuse.fallback,
                    cache_key=key,
                )
                planned.append((prefix, ctx, parent_desc, key, cached))
            else:
                planned.append((prefix, ctx, parent_desc, key, None))

        to_generate = [(i, p) for i, p in enumerate(planned) if p[4] is None]
        results: dict[int, PathDescription] = {}
        failure: Exception | None = None
        if to_generate:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                futures = {
                    pool.submit(generate, p[0], p[1], p[2], p[3]): i for i, p in to_generate
                }
                for fut, i in futures.items():
                    try:
                        results[i] = fut.result()
                    except GatewayError as exc:
                        failure = failure or exc

        completed: list[PathDescription] = []
        new_for_file: list[PathDescription] = []
        for i, (prefix, _ctx, _pd, _key, cached) in enumerate(planned):
            entry = cached if cached is not None else results.get(i)
            if entry is None:
                continue
            completed.append(entry)
            if cached is None:
                new_for_file.append(entry)
        persist(new_for_file)
        for entry in completed:
            store.entries[entry.path_id] = entry
        if failure is not None:
            raise GatewayError(f"description generation halted: {failure}")
        if len(completed) != len(planned):
            raise GatewayError("description generation halted: incomplete level")

    if store_path is not None:
        save_store(store, store_path)  # compact to canonical pre-order
    return store
