from __future__ import annotations

import random

import pytest

from treeqa.tree import KnowledgeTree, TreeNode, validate_tree


def node(label, *children):
    return TreeNode(label=label, children=list(children))


@pytest.fixture
def registration_tree() -> KnowledgeTree:
    """Registration-fee subtree used across retrieval and QA tests."""
    root = node(
        "WWW2023",
        node(
            "Attendees",
            node(
                "Registration",
                node(
                    "Register Fee",
                    node(
                        "Virtual Conference",
                        node("ACM Members", node("$300")),
                        node("Non Members", node("$350")),
                        node("Students", node("$150")),
                    ),
                    node(
                        "On-site Conference",
                        node("ACM Members", node("$900")),
                        node("Non Members", node("$1150")),
                    ),
                ),
            ),
        ),
        node(
            "Calls",
            node("Research Tracks", node("Deadline", node("October 13, 2022"))),
        ),
    )
    return validate_tree(KnowledgeTree(conference_id="WWW2023", root=root))


def random_tree(rng: random.Random, max_depth: int = 5, max_children: int = 4) -> KnowledgeTree:
    """Random valid tree with unique sibling labels; used by property tests."""
    counter = [0]

    def build(depth: int) -> TreeNode:
        counter[0] += 1
        label = f"n{counter[0]}"
        if depth >= max_depth or rng.random() < 0.35:
            return TreeNode(label=label)
        n_children = rng.randint(1, max_children)
        return TreeNode(label=label, children=[build(depth + 1) for _ in range(n_children)])

    root = build(1)
    return validate_tree(KnowledgeTree(conference_id=root.label, root=root))
