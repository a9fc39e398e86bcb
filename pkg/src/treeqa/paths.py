"""Root-to-leaf path corpus: `>>` serialization and structural context lookup."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .tree import SEPARATOR, KnowledgeTree, TreeNode

SIBLING_CAP = 30
ELISION_MARKER = "... ({n} more siblings omitted)"


class PathError(ValueError):
    """Raised on invalid serialized paths or unresolvable prefixes."""


@dataclass(frozen=True)
class KnowledgePath:
    labels: tuple[str, ...]
    path_id: str

    def serialized(self) -> str:
        return SEPARATOR.join(self.labels)


def path_id_for(serialized: str) -> str:
    return hashlib.sha256(serialized.encode("utf-8")).hexdigest()[:16]


def make_path(labels: list[str] | tuple[str, ...]) -> KnowledgePath:
    if not labels:
        raise PathError("a path needs at least one label")
    serialized = SEPARATOR.join(labels)
    return KnowledgePath(labels=tuple(labels), path_id=path_id_for(serialized))


def serialize(path: KnowledgePath) -> str:
    return path.serialized()


def parse(text: str) -> KnowledgePath:
    if not text:
        raise PathError("empty path string")
    segments = text.split(SEPARATOR)
    if any(not seg for seg in segments):
        raise PathError(f"empty segment in path: {text!r}")
    return make_path(segments)


@dataclass
class PathCorpus:
    conference_id: str
    paths: list[KnowledgePath]

    @property
    def m(self) -> int:
        return len(self.paths)

    def by_id(self) -> dict[str, KnowledgePath]:
        return {p.path_id: p for p in self.paths}

    def content_hash(self) -> str:
        joined = "\n".join(p.serialized() for p in self.paths)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


@dataclass
class NodeContext:
    target: tuple[str, ...]
    parent_prefix: tuple[str, ...]
    siblings: list[str] = field(default_factory=list)
    elided_siblings: int = 0


def flatten_paths(tree: KnowledgeTree) -> PathCorpus:
    """One path per leaf, in depth-first pre-order."""
    paths: list[KnowledgePath] = []

    def walk(node: TreeNode, trail: list[str]) -> None:
        trail = trail + [node.label]
        if node.is_leaf:
            paths.append(make_path(trail))
        else:
            for child in node.children:
                walk(child, trail)

    walk(tree.root, [])
    seen: dict[str, str] = {}
    for p in paths:
        prior = seen.get(p.path_id)
        if prior is not None and prior != p.serialized():
            raise PathError(
                f"path id collision between {prior!r} and {p.serialized()!r}"
            )
        seen[p.path_id] = p.serialized()
    return PathCorpus(conference_id=tree.conference_id, paths=paths)


def save_corpus(corpus: PathCorpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.paths:
            fh.write(p.serialized())
            fh.write("\n")


def load_corpus(path: str, conference_id: str) -> PathCorpus:
    paths = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                paths.append(parse(line))
    return PathCorpus(conference_id=conference_id, paths=paths)


def _resolve(tree: KnowledgeTree, prefix: tuple[str, ...]) -> tuple[TreeNode, TreeNode | None]:
    """Returns (node, parent) for the addressed prefix."""
    if not prefix or prefix[0] != tree.root.label:
        raise PathError(f"prefix does not start at the root: {SEPARATOR.join(prefix)!r}")
    node, parent = tree.root, None
    for label in prefix[1:]:
        nxt = next((c for c in node.children if c.label == label), None)
        if nxt is None:
            raise PathError(f"prefix not found in tree: {SEPARATOR.join(prefix)!r}")
        node, parent = nxt, node
    return node, parent


def render_leaf_sibling(parent_label: str, sibling_label: str) -> str:
    """Leaf siblings carry their parent's text so their meaning survives alone."""
    return f"{parent_label}: {sibling_label}"


def node_context(tree: KnowledgeTree, prefix: list[str] | tuple[str, ...]) -> NodeContext:
    prefix = tuple(prefix)
    node, parent = _resolve(tree, prefix)
    if parent is None:
        return NodeContext(target=prefix, parent_prefix=())

    rendered: list[str] = []
    for sib in parent.children:
        if sib.label == node.label:
            continue
        if sib.is_leaf:
            rendered.append(render_leaf_sibling(parent.label, sib.label))
        else:
            rendered.append(sib.label)

    elided = 0
    if len(rendered) > SIBLING_CAP:
        elided = len(rendered) - SIBLING_CAP
        rendered = rendered[:SIBLING_CAP]
    return NodeContext(
        target=prefix,
        parent_prefix=prefix[:-1],
        siblings=rendered,
        elided_siblings=elided,
    )
