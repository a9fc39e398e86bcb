"""Tree-structured conference knowledge: loading, validation, HTML ingestion, stats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from html.parser import HTMLParser

SEPARATOR = ">>"

_HEADING_TAGS = {"h1": 1, "h2": 2, "h3": 3, "h4": 4, "h5": 5, "h6": 6}
_SKIP_CONTENT_TAGS = {"script", "style"}


class TreeError(ValueError):
    """Raised when a document cannot be ingested as a valid knowledge tree."""


@dataclass
class TreeNode:
    label: str
    children: list[TreeNode] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class KnowledgeTree:
    conference_id: str
    root: TreeNode


@dataclass
class TreeStats:
    path_count: int
    avg_depth: float
    max_depth: int
    # Depth counts nodes from root to leaf inclusive; a root with direct
    # leaf children has depth 2. Reported so published numbers computed
    # under an edge-count convention remain diagnosable.
    depth_definition: str = "nodes-inclusive"


def _validate_node(node: TreeNode, trail: list[str]) -> None:
    label = node.label.strip()
    if not label:
        raise TreeError(f"empty label under {SEPARATOR.join(trail) or '<root>'}")
    if SEPARATOR in label:
        raise TreeError(f"label contains {SEPARATOR!r}: {label!r}")
    node.label = label
    seen: set[str] = set()
    for child in node.children:
        child_label = child.label.strip()
        if child_label in seen:
            raise TreeError(
                "duplicate sibling label "
                f"{child_label!r} under {SEPARATOR.join(trail + [label])}"
            )
        seen.add(child_label)
        _validate_node(child, trail + [label])


def validate_tree(tree: KnowledgeTree) -> KnowledgeTree:
    if tree.root.label.strip() != tree.conference_id:
        raise TreeError(
            f"root label {tree.root.label!r} does not match "
            f"conference id {tree.conference_id!r}"
        )
    _validate_node(tree.root, [])
    return tree


def _node_from_obj(obj: object, trail: list[str], depth: int = 0) -> TreeNode:
    if depth > 500:
        raise TreeError("tree nesting exceeds the supported depth; refusing input")
    if not isinstance(obj, dict):
        raise TreeError(f"node is not an object at {SEPARATOR.join(trail) or '<root>'}")
    label = obj.get("label")
    children = obj.get("children", [])
    if not isinstance(label, str):
        raise TreeError(f"missing or non-string label at {SEPARATOR.join(trail) or '<root>'}")
    if not isinstance(children, list):
        raise TreeError(f"children is not an array at {SEPARATOR.join(trail + [label])}")
    return TreeNode(
        label=label,
        children=[_node_from_obj(c, trail + [label], depth + 1) for c in children],
    )


def ingest_json(document: str | dict) -> KnowledgeTree:
    """Parse and validate the canonical tree file format.

    The document has top-level fields ``conference`` (string) and ``root``
    (recursive ``{label, children}`` object).
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise TreeError(f"malformed tree document: {exc}") from exc
    if not isinstance(document, dict):
        raise TreeError("tree document must be a JSON object")
    conference = document.get("conference")
    if not isinstance(conference, str) or not conference.strip():
        raise TreeError("missing or empty 'conference' field")
    if "root" not in document:
        raise TreeError("missing 'root' field")
    root = _node_from_obj(document["root"], [])
    return validate_tree(KnowledgeTree(conference_id=conference.strip(), root=root))


def load_tree(path: str) -> KnowledgeTree:
    with open(path, encoding="utf-8") as fh:
        return ingest_json(fh.read())


def _node_to_obj(node: TreeNode) -> dict:
    return {"label": node.label, "children": [_node_to_obj(c) for c in node.children]}


def serialize_tree(tree: KnowledgeTree) -> str:
    """Inverse of ingest_json, label-for-label and order-for-order."""
    obj = {"conference": tree.conference_id, "root": _node_to_obj(tree.root)}
    return json.dumps(obj, ensure_ascii=False, indent=1)


def save_tree(tree: KnowledgeTree, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_tree(tree))
        fh.write("\n")


def stats(tree: KnowledgeTree) -> TreeStats:
    depths: list[int] = []
    stack: list[tuple[TreeNode, int]] = [(tree.root, 1)]
    while stack:
        node, depth = stack.pop()
        if node.is_leaf:
            depths.append(depth)
        else:
            for child in reversed(node.children):
                stack.append((child, depth + 1))
    return TreeStats(
        path_count=len(depths),
        avg_depth=sum(depths) / len(depths),
        max_depth=max(depths),
    )


def _clean_label(text: str) -> str:
    """Collapse whitespace and keep the path separator token out of labels."""
    cleaned = " ".join(text.split())
    while SEPARATOR in cleaned:
        cleaned = cleaned.replace(SEPARATOR, "> >")
    return cleaned


def _dedupe_label(label: str, taken: set[str]) -> str:
    if label not in taken:
        return label
    n = 2
    while f"{label} ({n})" in taken:
        n += 1
    return f"{label} ({n})"


class _HeadingOutlineParser(HTMLParser):
    """Collects title, h1-h6 headings, and inter-heading text runs."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.events: list[tuple[str, int, str]] = []  # (kind, level, text)
        self.title: str | None = None
        self._heading_level: int | None = None
        self._in_title = False
        self._skip_depth = 0
        self._buf: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_CONTENT_TAGS:
            self._skip_depth += 1
            return
        if tag == "title":
            self._in_title = True
            self._buf = []
        elif tag in _HEADING_TAGS:
            self._flush_text()
            self._heading_level = _HEADING_TAGS[tag]
            self._buf = []

    def handle_endtag(self, tag):
        if tag in _SKIP_CONTENT_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if tag == "title" and self._in_title:
            text = _clean_label("".join(self._buf))
            if text and self.title is None:
                self.title = text
            self._in_title = False
            self._buf = []
        elif tag in _HEADING_TAGS and self._heading_level is not None:
            text = _clean_label("".join(self._buf))
            if text:
                self.events.append(("heading", self._heading_level, text))
            self._heading_level = None
            self._buf = []

    def handle_data(self, data):
        if self._skip_depth:
            return
        self._buf.append(data)

    def _flush_text(self) -> None:
        text = _clean_label("".join(self._buf))
        self._buf = []
        if text:
            self.events.append(("text", 0, text))

    def close(self):
        self._flush_text()
        super().close()


def ingest_html_headings(html: str, conference_id: str | None = None) -> KnowledgeTree:
    """Convert an HTML document into a tree via its h1-h6 heading hierarchy.

    Headings become internal nodes nested by level; text between a heading
    and the next heading becomes a leaf child of that heading. The document
    title (or the first h1) becomes the root.
    """
    parser = _HeadingOutlineParser()
    try:
        parser.feed(html)
        parser.close()
    except Exception as exc:  # html.parser is lenient; guard anyway
        raise TreeError(f"unparseable markup: {exc}") from exc

    events = parser.events
    headings = [e for e in events if e[0] == "heading"]
    if not headings:
        raise TreeError("no h1-h6 headings found in document")

    root_label = parser.title
    consumed_first = False
    if root_label is None:
        root_label = headings[0][2]
        consumed_first = True
    if conference_id is not None:
        root_label = conference_id

    root = TreeNode(label=root_label)
    stack: list[tuple[int, TreeNode]] = [(0, root)]
    skipped_root_heading = False

    for kind, level, text in events:
        if kind == "heading":
            if consumed_first and not skipped_root_heading:
                skipped_root_heading = True
                continue
            while len(stack) > 1 and stack[-1][0] >= level:
                stack.pop()
            parent = stack[-1][1]
            node = TreeNode(label=_dedupe_label(text, {c.label for c in parent.children}))
            parent.children.append(node)
            stack.append((level, node))
        else:
            parent = stack[-1][1]
            leaf = TreeNode(label=_dedupe_label(text, {c.label for c in parent.children}))
            parent.children.append(leaf)

    return validate_tree(KnowledgeTree(conference_id=root.label, root=root))
