"""Tests for evaluation module."""

import csv
import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.decoder import Hypothesis, NBestList
from src.evaluation import (
    SetScore,
    SweepPoint,
    WerBreakdown,
    compare_systems,
    load_testset,
    oracle_wer,
    score_testset,
    select_operating_point,
    sweep,
    wer,
    werr,
    write_testset,
)


def _nbest(utt_id: str, *sentences: str) -> NBestList:
    hyps = tuple(
        Hypothesis((i,), -float(i), 0.0, -float(i), tuple(s.split()))
        for i, s in enumerate(sentences)
    )
    return NBestList(utt_id, hyps)


def _edit_distance(ref: list[str], hyp: list[str]) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


def _score(errors: int, words: int = 100, oracle_errors: int = 0) -> SetScore:
    return SetScore(
        WerBreakdown(errors, 0, 0, words), WerBreakdown(oracle_errors, 0, 0, words)
    )


def _outcome(**errors: int) -> dict[str, SetScore]:
    return {name: _score(count) for name, count in errors.items()}


class TestWer:
    """Test cases for WER alignment."""

    def test_identical(self) -> None:
        """Test a perfect hypothesis has no errors."""
        result = wer(["a", "b", "c"], ["a", "b", "c"])
        assert result == WerBreakdown(0, 0, 0, 3)
        assert result.wer == 0.0

    def test_single_substitution(self) -> None:
        """Test the rare-word misrecognition counts one substitution."""
        result = wer(
            "tune into the freiberg game".split(), "tune into the friday game".split()
        )
        assert result == WerBreakdown(1, 0, 0, 5)
        assert result.wer == pytest.approx(0.2)

    def test_deletion_and_insertion(self) -> None:
        """Test pure deletions and insertions."""
        assert wer(["a", "b", "c"], ["a", "c"]) == WerBreakdown(0, 1, 0, 3)
        assert wer(["a", "c"], ["a", "b", "c"]) == WerBreakdown(0, 0, 1, 2)
        assert wer(["a", "b"], []) == WerBreakdown(0, 2, 0, 2)

    def test_substitutions_preferred_on_ties(self) -> None:
        """Test equal-cost alignments resolve to substitutions."""
        assert wer(["a", "b"], ["b", "a"]) == WerBreakdown(2, 0, 0, 2)

    def test_wer_can_exceed_one(self) -> None:
        """Test insertions can push WER above 1."""
        assert wer(["a"], ["b", "c", "d"]).wer == 3.0

    def test_empty_reference(self) -> None:
        """Test an empty reference is rejected."""
        with pytest.raises(ValueError):
            wer([], ["a"])

    def test_matches_independent_edit_distance(self) -> None:
        """Test error totals on random pairs against a separate DP."""
        rng = np.random.default_rng(0)
        vocab = ["a", "b", "c", "d"]
        for _ in range(300):
            ref_len, hyp_len = int(rng.integers(1, 8)), int(rng.integers(0, 8))
            ref = [vocab[int(i)] for i in rng.integers(0, 4, size=ref_len)]
            hyp = [vocab[int(i)] for i in rng.integers(0, 4, size=hyp_len)]
            result = wer(ref, hyp)
            assert result.errors == _edit_distance(ref, hyp)
            assert len(ref) - result.deletions + result.insertions == len(hyp)

    def test_pooling(self) -> None:
        """Test breakdowns add component-wise."""
        total = WerBreakdown(1, 0, 0, 5) + WerBreakdown(0, 1, 1, 3)
        assert total == WerBreakdown(1, 1, 1, 8)
        assert total.wer == pytest.approx(3 / 8)


class TestOracleAndWerr:
    """Test cases for oracle WER and WERR."""

    def test_oracle_picks_best_hypothesis(self) -> None:
        """Test the oracle uses the lowest-error entry."""
        nbest = _nbest("u", "tune into the friday game", "tune into the freiberg game")
        reference = "tune into the freiberg game".split()
        assert oracle_wer(reference, nbest).errors == 0
        assert wer(reference, nbest.best.words).errors == 1

    def test_oracle_never_above_one_best(self) -> None:
        """Test oracle errors are bounded by 1-best errors."""
        nbest = _nbest("u", "a b", "a c", "b c")
        one_best = wer(["a", "c"], ["a", "b"])
        assert oracle_wer(["a", "c"], nbest).errors <= one_best.errors

    def test_oracle_empty_list(self) -> None:
        """Test an empty list raises ValueError."""
        with pytest.raises(ValueError):
            oracle_wer(["a"], NBestList("u", ()))

    def test_werr(self) -> None:
        """Test relative reduction in percent."""
        assert werr(0.10, 0.09) == pytest.approx(10.0)
        assert werr(0.10, 0.11) == pytest.approx(-10.0)
        assert werr(0.2, 0.2) == 0.0

    def test_werr_zero_baseline(self) -> None:
        """Test a zero baseline is rejected."""
        with pytest.raises(ValueError):
            werr(0.0, 0.1)


class TestTestsetIO:
    """Test cases for testset files."""

    def test_write_load(self) -> None:
        """Test a written testset loads back."""
        items = [("u1", ("play", "music")), ("u2", ("tune", "into", "the", "game"))]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "test.tsv"
            write_testset(path, items)
            assert load_testset(path) == items

    def test_lowercases(self) -> None:
        """Test transcripts are lowercased by default."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "test.tsv"
            path.write_text("u1\tPlay Music\n\n", encoding="utf-8")
            assert load_testset(path) == [("u1", ("play", "music"))]
            assert load_testset(path, lowercase=False) == [("u1", ("Play", "Music"))]

    @pytest.mark.parametrize(
        "content", ["no tab here\n", "u1\t\n", "u1\ta\nu1\tb\n", "\tplay music\n"]
    )
    def test_malformed(self, content: str) -> None:
        """Test malformed files raise ValueError."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "test.tsv"
            path.write_text(content, encoding="utf-8")
            with pytest.raises(ValueError):
                load_testset(path)

    def test_missing_file(self) -> None:
        """Test missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_testset("/nonexistent/test.tsv")


class TestScoreTestset:
    """Test cases for score_testset."""

    def test_pooled_scores(self) -> None:
        """Test errors pool over utterances."""
        testset = [("u1", ("a", "b")), ("u2", ("c", "d", "e"))]
        lists = [_nbest("u2", "c d e"), _nbest("u1", "a x", "a b")]
        score = score_testset(testset, lists)
        assert score.one_best == WerBreakdown(1, 0, 0, 5)
        assert score.oracle == WerBreakdown(0, 0, 0, 5)

    def test_missing_utterance(self) -> None:
        """Test an utterance without hypotheses raises ValueError."""
        with pytest.raises(ValueError):
            score_testset([("u1", ("a",))], [_nbest("u2", "a")])


class TestSweep:
    """Test cases for the sweep and operating-point selection."""

    BASELINE = {"sports": _score(10), "music": _score(10), "control": _score(10)}

    def test_no_fusion_grid_is_zero(self) -> None:
        """Test T=+inf reproduces the baseline with 0 WERR everywhere."""
        report = sweep(
            [(math.inf, 0.5)],
            ["sports", "music"],
            "control",
            self.BASELINE,
            lambda t, lam: self.BASELINE,
        )
        assert all(row.werr == 0.0 for row in report.rows)
        assert report.selected is not None
        assert report.selected.ood_werr == 0.0

    def test_selects_best_under_constraint(self) -> None:
        """Test the highest OOD WERR with tolerable control loss wins."""
        outcomes = {
            (2.0, 0.25): _outcome(sports=9, music=9, control=10),
            (2.0, 0.5): _outcome(sports=5, music=5, control=11),
            (3.0, 0.25): _outcome(sports=8, music=7, control=10),
        }
        report = sweep(
            list(outcomes),
            ["sports", "music"],
            "control",
            self.BASELINE,
            lambda t, lam: outcomes[(t, lam)],
        )
        assert len(report.rows) == 9
        assert [p.satisfies_control for p in report.points] == [True, False, True]
        assert report.points[1].control_werr == pytest.approx(-10.0)
        assert report.selected is not None
        assert (report.selected.threshold, report.selected.lam) == (3.0, 0.25)
        assert report.selected.ood_werr == pytest.approx(25.0)

    def test_no_point_satisfies(self) -> None:
        """Test an all-violating grid reports no selection."""
        degraded = _outcome(sports=5, music=5, control=12)
        report = sweep(
            [(2.0, 0.5)],
            ["sports", "music"],
            "control",
            self.BASELINE,
            lambda t, lam: degraded,
        )
        assert not report.has_selection
        assert report.summary()["constraint_satisfied"] is False

    def test_ties_keep_earlier_point(self) -> None:
        """Test equal OOD WERR keeps the first grid point."""
        points = [
            SweepPoint(2.0, 0.25, 5.0, 0.0, 0.0, True),
            SweepPoint(2.5, 0.25, 5.0, 0.0, 0.0, True),
        ]
        assert select_operating_point(points) is points[0]
        assert select_operating_point([]) is None

    def test_empty_grid(self) -> None:
        """Test an empty grid raises ValueError."""
        with pytest.raises(ValueError):
            sweep(
                [], ["sports"], "control", self.BASELINE, lambda t, lam: self.BASELINE
            )

    def test_report_files(self) -> None:
        """Test CSV and JSON outputs."""
        report = sweep(
            [(2.0, 0.25)],
            ["sports", "music"],
            "control",
            self.BASELINE,
            lambda t, lam: {**self.BASELINE, "sports": _score(9, oracle_errors=0)},
        )
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = Path(tmp) / "report" / "sweep.csv"
            json_path = Path(tmp) / "report" / "sweep_summary.json"
            report.write_csv(csv_path)
            report.write_summary(json_path)
            with open(csv_path, encoding="utf-8") as f:
                rows = list(csv.DictReader(f))
            summary = json.loads(json_path.read_text(encoding="utf-8"))
        assert [r["testset"] for r in rows] == ["sports", "music", "control"]
        assert rows[0]["lambda"] == "0.25"
        assert float(rows[0]["werr"]) == pytest.approx(10.0)
        assert "oracle_werr" in rows[0]
        assert summary["selected"]["threshold"] == 2.0
        assert summary["constraint_satisfied"] is True


class TestCompareSystems:
    """Test cases for compare_systems."""

    def test_rows_per_testset_and_system(self) -> None:
        """Test each system is scored against the baseline."""
        testsets = {"sports": [("u1", ("tune", "into", "the", "zorb"))]}
        systems = {
            "baseline": {
                "sports": [_nbest("u1", "tune into the news", "tune into the zorb")]
            },
            "first_pass": {"sports": [_nbest("u1", "tune into the zorb")]},
        }
        rows = compare_systems(testsets, systems, "baseline")
        assert [(r["testset"], r["system"]) for r in rows] == [
            ("sports", "baseline"),
            ("sports", "first_pass"),
        ]
        assert rows[0]["werr"] == 0.0
        assert rows[1]["werr"] == pytest.approx(100.0)
        assert rows[0]["oracle_wer"] == 0.0
        assert rows[1]["oracle_werr"] == 0.0
