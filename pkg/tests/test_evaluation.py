from __future__ import annotations

import json

import pytest

from treeqa.evaluation import (
    EvalError,
    QAPair,
    evaluate_dataset,
    fallback_judge,
    judge_exact_match,
    load_pairs,
    pair_from_record,
    token_f1,
)
from treeqa.gateway import GatewayError, MockChatGateway
from treeqa.report import render_figures, render_table, write_json, write_tsv
from treeqa.retrieval import RetrieverConfig
from treeqa.textutil import tokenize

from test_qa import first_leaf_reply, knowledge_for


FEE_PATH = "WWW2023>>Attendees>>Registration>>Register Fee>>Virtual Conference>>ACM Members>>$300"
NONMEMBER_PATH = "WWW2023>>Attendees>>Registration>>Register Fee>>Virtual Conference>>Non Members>>$350"
STUDENT_PATH = "WWW2023>>Attendees>>Registration>>Register Fee>>Virtual Conference>>Students>>$150"


class TestTokenize:
    def test_currency_kept(self):
        assert tokenize("The fee is $300.") == ["the", "fee", "is", "$300"]

    def test_empty(self):
        assert tokenize("") == []

    def test_inner_hyphen_kept_edge_comma_stripped(self):
        assert tokenize("ACL-2023, Toronto") == ["acl-2023", "toronto"]

    def test_separator_splits(self):
        assert tokenize("A>>b c>>d") == ["a", "b", "c", "d"]


class TestTokenF1:
    def test_identity(self):
        assert token_f1("June 1, 2023", "June 1, 2023") == 1.0

    def test_worked_example(self):
        # P = 1/4, R = 1, F1 = 0.4
        assert token_f1("the fee is $300", "$300") == pytest.approx(0.4)

    def test_disjoint(self):
        assert token_f1("apples oranges", "june toronto") == 0.0

    def test_empty_conventions(self):
        assert token_f1("", "") == 1.0
        assert token_f1("something", "") == 0.0
        assert token_f1("", "something") == 0.0

    def test_range_and_self_identity(self):
        samples = ["a", "a b c", "$300", "the answer is no", "x " * 50]
        for s in samples:
            assert token_f1(s, s) == 1.0
        for a in samples:
            for b in samples:
                assert 0.0 <= token_f1(a, b) <= 1.0

    def test_multiset_intersection(self):
        # pred has "the" twice; gold once -> overlap counts it once
        assert token_f1("the the cat", "the cat") == pytest.approx(2 * (2 / 3) * 1.0 / (2 / 3 + 1.0))


class TestFallbackJudge:
    def test_exact(self):
        assert fallback_judge("$300", "$300") == "match"

    def test_substring_rule(self):
        assert fallback_judge("Registration costs $300 for ACM members", "$300") == "match"

    def test_mismatch(self):
        assert fallback_judge("$350", "$300") == "no_match"

    def test_deterministic_idempotent(self):
        for _ in range(3):
            assert fallback_judge("yes it is", "Yes") == "match"
            assert fallback_judge("no", "Yes") == "no_match"

    def test_llm_judge_verdicts(self):
        judge_yes = MockChatGateway(reply_fn=lambda m: "MATCH")
        judge_no = MockChatGateway(reply_fn=lambda m: "NO_MATCH")
        assert judge_exact_match("a", "b", "q", judge_yes) == "match"
        assert judge_exact_match("a", "b", "q", judge_no) == "no_match"

    def test_llm_judge_failure_marks_unjudged(self):
        def boom(messages):
            raise GatewayError("down")

        class FailingJudge:
            def chat(self, messages, **kw):
                raise GatewayError("down")

        assert judge_exact_match("a", "b", "q", FailingJudge()) == "unjudged"


class TestQAPairValidation:
    def test_atomic_needs_one_source(self):
        with pytest.raises(EvalError, match="atomic"):
            QAPair("q", "a", [FEE_PATH, NONMEMBER_PATH], "EA", "WWW2023")

    def test_complex_needs_multiple_sources(self):
        with pytest.raises(EvalError, match="complex"):
            QAPair("q", "a", [FEE_PATH], "EC", "WWW2023")

    def test_source_paths_must_parse(self):
        with pytest.raises(Exception):
            QAPair("q", "a", ["bad>>>>path"], "EA", "WWW2023")

    def test_qtype_aliases(self):
        pair = QAPair("q", "a", [FEE_PATH], "extraction-atomic", "WWW2023")
        assert pair.qtype == "EA"

    def test_record_shim(self):
        record = {
            "question": "q",
            "answer": "a",
            "source": FEE_PATH,
            "type": "reasoning-atomic",
            "conference": "WWW2023",
        }
        pair = pair_from_record(record)
        assert pair.gold_answer == "a"
        assert pair.answer_source_paths == [FEE_PATH]
        assert pair.qtype == "RA"

    def test_load_pairs_file(self, tmp_path):
        file = tmp_path / "pairs.jsonl"
        file.write_text(
            json.dumps({
                "question": "q", "gold_answer": "a",
                "answer_source_paths": [FEE_PATH], "qtype": "EA",
            }) + "\n"
        )
        pairs = load_pairs(str(file), default_conference="WWW2023")
        assert pairs[0].conference_id == "WWW2023"


def fixture_pairs():
    return [
        QAPair(
            "How much is the Virtual Conference Register Fee for ACM Members at WWW2023?",
            "$300", [FEE_PATH], "EA", "WWW2023",
        ),
        QAPair(
            "What are the Virtual Conference Register Fees for ACM Members and Non Members?",
            "$300 and $350", [FEE_PATH, NONMEMBER_PATH], "EC", "WWW2023",
        ),
        QAPair(
            "What is the Students Virtual Conference Register Fee at WWW2023 Registration?",
            "$150", [STUDENT_PATH], "RA", "WWW2023",
        ),
        QAPair(
            "How much more do Non Members pay than ACM Members for the Virtual Conference?",
            "$50", [FEE_PATH, NONMEMBER_PATH], "RC", "WWW2023",
        ),
    ]


class TestEvaluateDataset:
    def test_empty_pairs(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        report = evaluate_dataset(
            [], {"WWW2023": knowledge}, ["dense_path"], RetrieverConfig(),
            MockChatGateway(reply_fn=first_leaf_reply),
        )
        assert report.cells == {}

    def test_four_cells_hand_scored(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        report = evaluate_dataset(
            fixture_pairs(), {"WWW2023": knowledge}, ["dense_path"],
            RetrieverConfig(k=5),
            MockChatGateway(reply_fn=first_leaf_reply),
        )
        cells = {qt: report.cells[("WWW2023", qt, "dense_path")] for qt in ("EA", "EC", "RA", "RC")}
        assert all(c.n == 1 for c in cells.values())
        # mock generator answers with the top-1 leaf; hand-scored metrics:
        # EA: pred "$300" vs "$300" -> F1 100, match
        assert cells["EA"].f1_mean == pytest.approx(100.0)
        assert cells["EA"].em_mean == pytest.approx(100.0)
        # RA: pred "$150" vs "$150" -> F1 100, match
        assert cells["RA"].f1_mean == pytest.approx(100.0)
        # EC: pred "$300" vs "$300 and $350" -> P=1, R=1/3, F1=50
        assert cells["EC"].f1_mean == pytest.approx(50.0)
        assert cells["EC"].em_mean == pytest.approx(0.0)
        # RC: pred is a fee leaf, gold "$50" -> F1 0, no match
        assert cells["RC"].f1_mean == pytest.approx(0.0)
        assert cells["RC"].em_mean == pytest.approx(0.0)

    def test_deltas_are_cellwise_subtraction(self, registration_tree):
        knowledge = knowledge_for(registration_tree, with_descriptions=True)
        report = evaluate_dataset(
            fixture_pairs(), {"WWW2023": knowledge},
            ["dense_path", "dense_description"],
            RetrieverConfig(k=5),
            MockChatGateway(reply_fn=first_leaf_reply),
        )
        for qt in ("EA", "EC", "RA", "RC"):
            delta = report.delta("WWW2023", qt, "dense_description", "dense_path")
            a = report.cells[("WWW2023", qt, "dense_description")]
            b = report.cells[("WWW2023", qt, "dense_path")]
            assert delta == (a.f1_mean - b.f1_mean, a.em_mean - b.em_mean)

    def test_order_invariance(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        pairs = fixture_pairs()
        r1 = evaluate_dataset(
            pairs, {"WWW2023": knowledge}, ["dense_path"], RetrieverConfig(k=5),
            MockChatGateway(reply_fn=first_leaf_reply), concurrency=1,
        )
        r2 = evaluate_dataset(
            list(reversed(pairs)), {"WWW2023": knowledge}, ["dense_path"], RetrieverConfig(k=5),
            MockChatGateway(reply_fn=first_leaf_reply), concurrency=4,
        )
        for key, cell in r1.cells.items():
            assert r2.cells[key].f1_mean == pytest.approx(cell.f1_mean)
            assert r2.cells[key].em_mean == pytest.approx(cell.em_mean)

    def test_recall_monotone_in_k(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        recalls = []
        for k in (1, 3, 6):
            report = evaluate_dataset(
                fixture_pairs(), {"WWW2023": knowledge}, ["dense_path"],
                RetrieverConfig(k=k),
                MockChatGateway(reply_fn=first_leaf_reply),
            )
            total_hits = sum(c.recall_hits for c in report.cells.values())
            recalls.append(total_hits)
        assert recalls == sorted(recalls)

    def test_failures_recorded_and_run_continues(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        gw = MockChatGateway(
            reply_fn=first_leaf_reply, fail_on={"Students Virtual Conference"}
        )
        report = evaluate_dataset(
            fixture_pairs(), {"WWW2023": knowledge}, ["dense_path"],
            RetrieverConfig(k=5), gw,
        )
        assert len(report.failures) == 1
        assert sum(c.n for c in report.cells.values()) == 3

    def test_missing_conference_rejected(self, registration_tree):
        knowledge = knowledge_for(registration_tree)
        pairs = [QAPair("q", "a", [FEE_PATH], "EA", "ICML2023")]
        with pytest.raises(EvalError, match="ICML2023"):
            evaluate_dataset(
                pairs, {"WWW2023": knowledge}, ["dense_path"], RetrieverConfig(),
                MockChatGateway(),
            )


class TestReportOutput:
    def make_report(self, registration_tree):
        knowledge = knowledge_for(registration_tree, with_descriptions=True)
        return evaluate_dataset(
            fixture_pairs(), {"WWW2023": knowledge},
            ["dense_path", "dense_description"],
            RetrieverConfig(k=5),
            MockChatGateway(reply_fn=first_leaf_reply),
        )

    def test_table_layout(self, registration_tree):
        table = render_table(self.make_report(registration_tree))
        assert "WWW2023" in table
        assert "dense_path" in table and "dense_description" in table
        # description rows carry signed deltas
        desc_row = next(l for l in table.splitlines() if l.startswith("dense_description"))
        assert "+" in desc_row or "-" in desc_row

    def test_tsv_and_json(self, registration_tree, tmp_path):
        report = self.make_report(registration_tree)
        tsv = tmp_path / "report.tsv"
        js = tmp_path / "report.json"
        write_tsv(report, str(tsv))
        write_json(report, str(js))
        lines = tsv.read_text().splitlines()
        assert lines[0].startswith("conference\tqtype\tmode")
        assert len(lines) == 1 + 8  # 4 qtypes x 2 modes
        obj = json.loads(js.read_text())
        assert len(obj["cells"]) == 8

    def test_figures_rendered(self, registration_tree, tmp_path):
        report = self.make_report(registration_tree)
        written = render_figures(report, str(tmp_path / "figs"))
        assert len(written) == 2  # one conference x {F1, EM}
        for path in written:
            with open(path, "rb") as fh:
                assert fh.read(8).startswith(b"\x89PNG")
