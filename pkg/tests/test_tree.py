from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeqa.paths import flatten_paths
from treeqa.tree import (
    KnowledgeTree,
    TreeError,
    TreeNode,
    ingest_html_headings,
    ingest_json,
    serialize_tree,
    stats,
    validate_tree,
)

from conftest import random_tree


MINIMAL = {
    "conference": "T",
    "root": {"label": "T", "children": [
        {"label": "a", "children": [{"label": "1", "children": []}]},
    ]},
}


class TestIngestJson:
    def test_minimal_tree(self):
        tree = ingest_json(json.dumps(MINIMAL))
        assert tree.conference_id == "T"
        assert stats(tree).path_count == 1

    def test_root_label_mismatch(self):
        doc = {"conference": "X", "root": {"label": "T", "children": []}}
        with pytest.raises(TreeError, match="does not match"):
            ingest_json(doc)

    def test_empty_label_rejected(self):
        doc = {"conference": "T", "root": {"label": "T", "children": [
            {"label": "   ", "children": []}]}}
        with pytest.raises(TreeError, match="empty label"):
            ingest_json(doc)

    def test_separator_in_label_rejected(self):
        doc = {"conference": "T", "root": {"label": "T", "children": [
            {"label": "a>>b", "children": []}]}}
        with pytest.raises(TreeError, match=">>"):
            ingest_json(doc)

    def test_duplicate_siblings_report_path(self):
        doc = {"conference": "T", "root": {"label": "T", "children": [
            {"label": "x", "children": [
                {"label": "same", "children": []},
                {"label": "same", "children": []},
            ]}]}}
        with pytest.raises(TreeError, match=r"'same' under T>>x"):
            ingest_json(doc)

    def test_malformed_document(self):
        with pytest.raises(TreeError, match="malformed"):
            ingest_json("{not json")

    def test_missing_fields(self):
        with pytest.raises(TreeError):
            ingest_json({"conference": "T"})
        with pytest.raises(TreeError):
            ingest_json({"root": {"label": "T", "children": []}})

    def test_round_trip(self):
        rng = random.Random(7)
        for _ in range(20):
            tree = random_tree(rng)
            again = ingest_json(serialize_tree(tree))
            assert serialize_tree(again) == serialize_tree(tree)


class TestStats:
    def test_single_chain(self):
        tree = ingest_json(json.dumps(MINIMAL))
        st_ = stats(tree)
        assert st_.path_count == 1
        assert st_.avg_depth == 3.0
        assert st_.max_depth == 3

    def test_root_with_k_leaf_children_has_avg_depth_2(self):
        for k in (1, 3, 10):
            root = TreeNode("C", [TreeNode(f"l{i}") for i in range(k)])
            tree = validate_tree(KnowledgeTree("C", root))
            assert stats(tree).avg_depth == 2.0

    def test_path_count_matches_flatten(self):
        rng = random.Random(11)
        for _ in range(25):
            tree = random_tree(rng)
            assert stats(tree).path_count == len(flatten_paths(tree).paths)


class TestHtmlIngestion:
    def test_single_nesting(self):
        tree = ingest_html_headings("<h1>C</h1><h2>Dates</h2><p>June 1</p>")
        assert tree.root.label == "C"
        (dates,) = tree.root.children
        assert dates.label == "Dates"
        assert [c.label for c in dates.children] == ["June 1"]

    def test_two_sections(self):
        tree = ingest_html_headings("<h1>C</h1><h2>A</h2><p>x</p><h2>B</h2><p>y</p>")
        assert [c.label for c in tree.root.children] == ["A", "B"]
        assert [c.children[0].label for c in tree.root.children] == ["x", "y"]

    def test_no_headings_is_an_error(self):
        with pytest.raises(TreeError, match="no h1-h6 headings"):
            ingest_html_headings("<p>no headings</p>")

    def test_title_becomes_root(self):
        tree = ingest_html_headings(
            "<title>Conf 2024</title><h1>Welcome</h1><p>hello</p>"
        )
        assert tree.root.label == "Conf 2024"
        assert tree.root.children[0].label == "Welcome"

    def test_level_skips_nest_under_nearest_shallower(self):
        tree = ingest_html_headings("<h1>C</h1><h3>Deep</h3><p>x</p><h2>Back</h2>")
        assert [c.label for c in tree.root.children] == ["Deep", "Back"]

    def test_duplicate_headings_disambiguated(self):
        tree = ingest_html_headings("<h1>C</h1><h2>A</h2><p>x</p><h2>A</h2><p>y</p>")
        assert [c.label for c in tree.root.children] == ["A", "A (2)"]
        validate_tree(tree)

    def test_output_always_valid(self):
        snippets = [
            "<h1>C</h1><h2>S</h2>text<h2>S</h2>more",
            "<h1>A&amp;B</h1><p>x &gt;&gt; y</p><h2>Next</h2>",
            "<h1>C</h1><script>var x = 1;</script><h2>S</h2><p>ok</p>",
        ]
        for html in snippets:
            validate_tree(ingest_html_headings(html))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 4), st.sampled_from("ABCD")), min_size=1, max_size=8))
    def test_random_heading_sequences_produce_valid_trees(self, headings):
        html = "<h1>Root</h1>" + "".join(
            f"<h{lvl + 1}>{name}</h{lvl + 1}><p>body {i}</p>"
            for i, (lvl, name) in enumerate(headings)
        )
        tree = ingest_html_headings(html)
        validate_tree(tree)
        assert stats(tree).path_count >= 1
