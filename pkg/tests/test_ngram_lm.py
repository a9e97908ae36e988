"""Tests for ngram_lm module."""

import math
import tempfile
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import pytest

from src.corpus import BOS, EOS, UNK, Corpus
from src.ngram_lm import (
    ArpaFormatError,
    InterpolationSpec,
    MixtureModel,
    NGramModel,
    count_ngrams,
    estimate_katz,
    interpolate,
    perplexity,
    prune_model,
    read_arpa,
    write_arpa,
)
from src.synth import generate_suite

LETTERS = ["a b c", "a b", "b c a", "c c b a", "a b c", "b b", "c a"]
COMMANDS = [
    "play some music",
    "play music",
    "tune into the game",
    "tune into the news",
    "play some jazz music",
    "tune into the game",
    "what time is it",
    "play the news",
]


def _corpora() -> dict[str, Corpus]:
    return {
        "letters": Corpus.from_lines(LETTERS),
        "commands": Corpus.from_lines(COMMANDS),
        "synthetic": generate_suite(
            seed=3, general_size=150, domain_size=10, testset_size=2, control_size=2
        ).general,
    }


def _train(corpus: Corpus, order: int) -> NGramModel:
    return estimate_katz(count_ngrams(corpus, order), name="test")


def _katz_bigram_oracle(
    lines: list[str], cutoff: int, floor: float = 1e-6
) -> Callable[[str, str], float]:
    """Straight-line Katz bigram estimate, returning p(word | previous)."""
    unigrams: Counter[str] = Counter()
    bigrams: Counter[tuple[str, str]] = Counter()
    for line in lines:
        padded = [BOS, *line.lower().split(), EOS]
        for prev, word in zip(padded, padded[1:]):
            unigrams[word] += 1
            bigrams[(prev, word)] += 1

    def discounts(counts: Iterable[int]) -> dict[int, float]:
        n = Counter(counts)
        common = (cutoff + 1) * n[cutoff + 1] / n[1] if n[1] else None
        ratios: dict[int, float] = {}
        for r in range(1, cutoff + 1):
            if n[r] == 0:
                continue
            if common is None or n[r + 1] == 0 or common >= 1.0:
                ratios[r] = 1.0
                continue
            ratio = ((r + 1) * n[r + 1] / (r * n[r]) - common) / (1.0 - common)
            ratios[r] = ratio if 0.0 < ratio <= 1.0 else 1.0
        return ratios

    def with_floor(seen: dict[str, float]) -> tuple[dict[str, float], float]:
        leftover = 1.0 - math.fsum(seen.values())
        if leftover >= floor:
            return seen, leftover
        scale = (1.0 - floor) / math.fsum(seen.values())
        return {w: p * scale for w, p in seen.items()}, floor

    d1 = discounts(unigrams.values())
    total = sum(unigrams.values())
    p1, leftover = with_floor(
        {w: c * d1.get(c, 1.0) / total for w, c in unigrams.items()}
    )
    p1[UNK] = p1.get(UNK, 0.0) + leftover

    d2 = discounts(bigrams.values())
    p2: dict[tuple[str, str], float] = {}
    alpha: dict[str, float] = {}
    for prev in {v for v, _ in bigrams}:
        followers = {w: c for (v, w), c in bigrams.items() if v == prev}
        context_total = sum(followers.values())
        seen, leftover = with_floor(
            {w: c * d2.get(c, 1.0) / context_total for w, c in followers.items()}
        )
        for w, p in seen.items():
            p2[(prev, w)] = p
        alpha[prev] = leftover / (1.0 - math.fsum(p1[w] for w in seen))

    def prob(word: str, prev: str) -> float:
        word = word if word in p1 else UNK
        prev = prev if prev in p1 or prev == BOS else UNK
        if (prev, word) in p2:
            return p2[(prev, word)]
        return alpha.get(prev, 1.0) * p1[word]

    return prob


def _assert_normalized(model: NGramModel) -> None:
    vocabulary = model.vocabulary()
    for context in [(), *model.contexts()]:
        total = math.fsum(model.prob(w, context) for w in vocabulary)
        assert abs(total - 1.0) <= 1e-9, f"context {context} sums to {total}"


class TestCountNgrams:
    """Test cases for count_ngrams."""

    def test_padded_counts(self) -> None:
        """Test counts include sentence markers as context and target."""
        counts = count_ngrams(Corpus.from_lines(["a b"]), 2)
        assert counts.of_order(1) == {("a",): 1, ("b",): 1, (EOS,): 1}
        assert counts.of_order(2) == {(BOS, "a"): 1, ("a", "b"): 1, ("b", EOS): 1}
        assert counts.total(1) == 3

    def test_bos_never_predicted(self) -> None:
        """Test <s> only appears as context."""
        counts = count_ngrams(Corpus.from_lines(LETTERS), 3)
        assert all(ng[-1] != BOS for ng in counts.counts)

    def test_order_out_of_range(self) -> None:
        """Test unsupported orders raise ValueError."""
        with pytest.raises(ValueError):
            count_ngrams(Corpus.from_lines(["a"]), 5)
        with pytest.raises(ValueError):
            count_ngrams(Corpus.from_lines(["a"]), 0)


class TestEstimateKatz:
    """Test cases for Katz estimation."""

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    @pytest.mark.parametrize("name", ["letters", "commands", "synthetic"])
    def test_every_context_normalizes(self, name: str, order: int) -> None:
        """Test full-vocabulary sums for every context."""
        _assert_normalized(_train(_corpora()[name], order))

    @pytest.mark.parametrize("name", ["letters", "commands", "synthetic"])
    @pytest.mark.parametrize("cutoff", [2, 5])
    def test_matches_straight_line_estimate(self, name: str, cutoff: int) -> None:
        """Test every bigram query against an independent Katz estimate."""
        lines = {
            "letters": LETTERS,
            "commands": COMMANDS,
            "synthetic": [" ".join(s) for s in _corpora()["synthetic"]],
        }[name]
        model = estimate_katz(
            count_ngrams(Corpus.from_lines(lines), 2), discount_cutoff=cutoff
        )
        oracle = _katz_bigram_oracle(lines, cutoff)
        words = [*model.vocabulary(), "zorb"]
        for prev in [BOS, *words]:
            for word in words:
                assert model.prob(word, [prev]) == pytest.approx(
                    oracle(word, prev), rel=1e-12, abs=1e-15
                )

    def test_backoff_trace_by_hand(self) -> None:
        """Test a three-sentence bigram model against hand-derived fractions.

        Unigram counts a=b=2, c..g=1, </s>=3 over 12 tokens give ratios
        d1=1/2, d2=3/8; bigram singletons get d1=1/5.
        """
        corpus = Corpus.from_lines(["a b c", "a d e", "b f g"])
        model = estimate_katz(count_ngrams(corpus, 2), discount_cutoff=2)
        assert model.prob("a") == pytest.approx(1 / 16, rel=1e-12)
        assert model.prob("c") == pytest.approx(1 / 24, rel=1e-12)
        assert model.prob(EOS) == pytest.approx(1 / 4, rel=1e-12)
        assert model.prob(UNK) == pytest.approx(5 / 12, rel=1e-12)

        assert model.prob("a", [BOS]) == pytest.approx(2 / 3, rel=1e-12)
        assert model.prob("b", [BOS]) == pytest.approx(1 / 15, rel=1e-12)
        assert math.exp(model.backoffs[(BOS,)]) == pytest.approx(32 / 105, rel=1e-12)
        assert model.prob("c", [BOS]) == pytest.approx(4 / 315, rel=1e-12)

        assert model.prob("b", ["a"]) == pytest.approx(1 / 10, rel=1e-12)
        assert math.exp(model.backoffs[("a",)]) == pytest.approx(192 / 215, rel=1e-12)
        assert model.prob("c", ["a"]) == pytest.approx(8 / 215, rel=1e-12)
        assert model.prob("zorb", ["a"]) == pytest.approx(
            192 / 215 * 5 / 12, rel=1e-12
        )
        assert model.log_prob("c", ["zorb"]) == pytest.approx(
            math.log(1 / 24), rel=1e-12
        )

    def test_unknown_word_maps_to_unk(self) -> None:
        """Test out-of-vocabulary words score as <unk>."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        assert model.log_prob("zorb", ["play"]) == model.log_prob(UNK, ["play"])
        assert model.log_prob("music", ["zorb", "some"]) == model.log_prob(
            "music", [UNK, "some"]
        )

    def test_every_log_prob_finite(self) -> None:
        """Test no probability collapses to zero."""
        model = _train(Corpus.from_lines(LETTERS), 4)
        for word in model.vocabulary():
            assert math.isfinite(model.log_prob(word, [BOS, "c", "c"]))

    def test_leftover_floor(self) -> None:
        """Test undiscountable statistics still leave the floor for <unk>."""
        counts = count_ngrams(Corpus.from_lines(["a"] * 3), 1)
        model = estimate_katz(counts, min_leftover=1e-6)
        assert model.prob(UNK) == pytest.approx(1e-6, abs=1e-15)
        _assert_normalized(model)

    def test_counts_kept(self) -> None:
        """Test estimated models carry their counts."""
        model = _train(Corpus.from_lines(LETTERS), 2)
        assert model.counts[("a", "b")] == 3

    def test_sentence_log_prob(self) -> None:
        """Test sentence scoring includes </s>."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        expected = (
            model.log_prob("play", [BOS])
            + model.log_prob("music", [BOS, "play"])
            + model.log_prob(EOS, [BOS, "play", "music"])
        )
        actual = model.sentence_log_prob(["play", "music"])
        assert actual == pytest.approx(expected, abs=1e-12)

    def test_ngrams_sorted(self) -> None:
        """Test explicit n-gram enumeration is sorted."""
        model = _train(Corpus.from_lines(LETTERS), 3)
        ngrams = list(model.ngrams())
        assert ngrams == sorted(model.probs)
        assert all(len(ng) == 2 for ng in model.ngrams(2))

    def test_invalid_parameters(self) -> None:
        """Test parameter validation."""
        counts = count_ngrams(Corpus.from_lines(LETTERS), 2)
        with pytest.raises(ValueError):
            estimate_katz(counts, discount_cutoff=0)
        with pytest.raises(ValueError):
            estimate_katz(counts, min_leftover=0.0)

    def test_perplexity(self) -> None:
        """Test perplexity is finite, above 1 and rejects empty input."""
        model = _train(Corpus.from_lines(COMMANDS), 2)
        assert 1.0 < perplexity(model, Corpus.from_lines(COMMANDS)) < math.inf
        with pytest.raises(ValueError):
            perplexity(model, [])


def _component(model: NGramModel, word: str, history: tuple[str, ...]) -> float:
    if word != UNK and not model.knows(word):
        return 0.0
    return model.prob(word, history)


def _random_queries(
    vocabulary: list[str], order: int, count: int, seed: int
) -> list[tuple[tuple[str, ...], str]]:
    rng = np.random.default_rng(seed)
    history_words = [*vocabulary, BOS, "zorb"]
    queries = []
    for _ in range(count):
        length = int(rng.integers(0, order))
        history = tuple(str(rng.choice(history_words)) for _ in range(length))
        queries.append((history, str(rng.choice([*vocabulary, "zorb"]))))
    return queries


class TestInterpolate:
    """Test cases for static interpolation."""

    def test_identity(self) -> None:
        """Test mixing a model with itself reproduces every query."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        mixed = interpolate(InterpolationSpec.equal_weights([model, model]))
        for history, word in _random_queries(model.vocabulary(), 3, 300, seed=1):
            assert mixed.log_prob(word, history) == pytest.approx(
                model.log_prob(word, history), abs=1e-9
            )
        _assert_normalized(mixed)

    def test_zero_weight_component_dropped(self) -> None:
        """Test a zero-weight component contributes nothing."""
        first = _train(Corpus.from_lines(COMMANDS), 2)
        second = _train(Corpus.from_lines(LETTERS), 2)
        mixed = interpolate(InterpolationSpec(((first, 1.0), (second, 0.0))))
        assert mixed.vocabulary() == first.vocabulary()
        for history, word in _random_queries(first.vocabulary(), 2, 200, seed=2):
            assert mixed.log_prob(word, history) == pytest.approx(
                first.log_prob(word, history), abs=1e-9
            )

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_union_ngrams_exact_and_normalized(self, order: int) -> None:
        """Test explicit n-grams carry the exact mixture probability."""
        first = _train(Corpus.from_lines(COMMANDS), order)
        second = _train(Corpus.from_lines(LETTERS + ["play a b"]), order)
        mixed = interpolate(InterpolationSpec(((first, 0.25), (second, 0.75))))

        for ngram in set(first.probs) | set(second.probs):
            history, word = ngram[:-1], ngram[-1]
            expected = 0.25 * _component(first, word, history) + 0.75 * _component(
                second, word, history
            )
            assert mixed.prob(word, history) == pytest.approx(expected, rel=1e-12)
        _assert_normalized(mixed)

    @pytest.mark.parametrize("order", [2, 3])
    def test_backed_off_queries_are_linear(self, order: int) -> None:
        """Test random queries, most of them backed off, match the mixture."""
        first = _train(Corpus.from_lines(COMMANDS), order)
        second = _train(Corpus.from_lines(LETTERS + ["play a b"]), order)
        spec = InterpolationSpec(((first, 0.4), (second, 0.6)))
        mixed = interpolate(spec)
        lazy = MixtureModel(spec)
        vocabulary = mixed.vocabulary()
        assert lazy.vocabulary() == vocabulary

        backed_off = 0
        for history, word in _random_queries(vocabulary, order, 400, seed=order):
            mapped = word if word in vocabulary else UNK
            expected = 0.4 * _component(first, mapped, history) + 0.6 * _component(
                second, mapped, history
            )
            assert mixed.prob(word, history) == pytest.approx(expected, abs=1e-9)
            assert lazy.prob(word, history) == pytest.approx(expected, abs=1e-9)
            if history and (history[-1], mapped) not in first.probs:
                backed_off += 1
        assert backed_off > 100

    def test_cross_vocabulary_history(self) -> None:
        """Test a history word known to one component only."""
        first = _train(Corpus.from_lines(COMMANDS), 2)
        second = _train(Corpus.from_lines(LETTERS), 2)
        mixed = interpolate(InterpolationSpec.equal_weights([first, second]))
        expected = 0.5 * _component(first, "a", ("music",)) + 0.5 * _component(
            second, "a", (UNK,)
        )
        assert mixed.prob("a", ("music",)) == pytest.approx(expected, abs=1e-12)

    def test_disjoint_vocabularies(self) -> None:
        """Test words exclusive to one component get half its probability."""
        first = _train(Corpus.from_lines(["x y", "y x x", "x"]), 2)
        second = _train(Corpus.from_lines(["p q", "q q p"]), 2)
        mixed = interpolate(InterpolationSpec.equal_weights([first, second]))
        for history in [(), (BOS,), ("x",), ("q",), ("zorb",)]:
            for word in ["x", "y"]:
                assert mixed.prob(word, history) == pytest.approx(
                    0.5 * first.prob(word, history), abs=1e-12
                )
            for word in ["p", "q"]:
                assert mixed.prob(word, history) == pytest.approx(
                    0.5 * second.prob(word, history), abs=1e-12
                )
        _assert_normalized(mixed)

    def test_mixture_sentence_scores(self) -> None:
        """Test lazy and materialized mixtures score sentences alike."""
        first = _train(Corpus.from_lines(COMMANDS), 3)
        second = _train(Corpus.from_lines(LETTERS + ["play a b"]), 3)
        spec = InterpolationSpec(((first, 0.7), (second, 0.3)))
        mixed = interpolate(spec, name="mixed")
        lazy = MixtureModel(spec, name="lazy")
        assert lazy.order == 3
        assert set(lazy.ngrams()) == set(first.probs) | set(second.probs)
        for sentence in [["play", "a", "b"], ["tune", "into", "c"], ["zorb"], []]:
            assert lazy.sentence_log_prob(sentence) == pytest.approx(
                mixed.sentence_log_prob(sentence), abs=1e-9
            )

    def test_invalid_specs(self) -> None:
        """Test weight and order validation."""
        first = _train(Corpus.from_lines(COMMANDS), 2)
        other_order = _train(Corpus.from_lines(COMMANDS), 3)
        with pytest.raises(ValueError):
            InterpolationSpec(((first, 0.5), (first, 0.6)))
        with pytest.raises(ValueError):
            InterpolationSpec(((first, -0.5), (first, 1.5)))
        with pytest.raises(ValueError):
            InterpolationSpec.equal_weights([first, other_order])
        with pytest.raises(ValueError):
            InterpolationSpec(())


class TestPrune:
    """Test cases for pruning."""

    def test_count_pruning(self) -> None:
        """Test singletons of the highest order are removed."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        pruned = prune_model(model, min_count=2)
        top = [ng for ng in pruned.probs if len(ng) == 3]
        assert top
        assert all(model.counts[ng] >= 2 for ng in top)
        assert len(pruned) < len(model)
        _assert_normalized(pruned)

    def test_no_op_returns_model(self) -> None:
        """Test a threshold of 1 removes nothing."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        assert prune_model(model, min_count=1) is model

    def test_count_pruning_needs_counts(self) -> None:
        """Test models without counts cannot be count-pruned."""
        model = _train(Corpus.from_lines(COMMANDS), 2)
        bare = NGramModel(order=2, probs=model.probs, backoffs=model.backoffs)
        with pytest.raises(ValueError):
            prune_model(bare, min_count=2)

    def test_size_budget(self) -> None:
        """Test budget pruning fits the model and keeps it normalized."""
        model = _train(Corpus.from_lines(COMMANDS), 4)
        budget = model.sizes()[1] + 10
        pruned = prune_model(model, max_entries=budget)
        assert len(pruned) <= budget
        for ngram in pruned.probs:
            if len(ngram) > 1:
                assert ngram[:-1] in pruned.probs or ngram[:-1] == (BOS,)
        _assert_normalized(pruned)

    def test_pruning_raises_training_perplexity(self) -> None:
        """Test pruned models fit their training text no better."""
        corpus = _corpora()["synthetic"]
        for order in (2, 3, 4):
            model = _train(corpus, order)
            pruned = prune_model(model, min_count=2)
            assert len(pruned) < len(model)
            assert perplexity(pruned, corpus) >= perplexity(model, corpus)

    def test_all_top_order_pruned_resolves_through_lower_order(self) -> None:
        """Test a 4-gram model without 4-grams answers like a trigram model."""
        corpus = _corpora()["synthetic"]
        model = _train(corpus, 4)
        pruned = prune_model(model, min_count=10**9)
        trigram = _train(corpus, 3)
        assert pruned.sizes()[4] == 0
        assert pruned.sizes()[3] == trigram.sizes()[3]

        vocabulary = [*model.vocabulary(), "zorb"]
        rng = np.random.default_rng(4)
        for _ in range(300):
            history = [str(w) for w in rng.choice([BOS, *vocabulary], size=3)]
            word = str(rng.choice(vocabulary))
            context = tuple(w if w == BOS or pruned.knows(w) else UNK for w in history)
            assert context not in pruned.backoffs
            assert pruned.log_prob(word, history) == pytest.approx(
                trigram.log_prob(word, history), abs=1e-9
            )
        for ngram in model.ngrams(4):
            history, word = list(ngram[:-1]), ngram[-1]
            assert pruned.log_prob(word, history) == pytest.approx(
                trigram.log_prob(word, history[1:]), abs=1e-9
            )

    def test_budget_below_unigrams(self) -> None:
        """Test an infeasible budget raises ValueError."""
        model = _train(Corpus.from_lines(COMMANDS), 2)
        with pytest.raises(ValueError):
            prune_model(model, max_entries=1)


class TestArpa:
    """Test cases for ARPA serialization."""

    def test_write_read(self) -> None:
        """Test a written model reads back within the printed precision."""
        model = _train(Corpus.from_lines(COMMANDS), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "model.arpa"
            write_arpa(model, path)
            text = path.read_text(encoding="utf-8")
            loaded = read_arpa(path)
        assert "\\data\\" in text and "\\end\\" in text
        assert f"-99.0\t{BOS}\t" in text
        assert loaded.order == 3
        assert set(loaded.probs) == set(model.probs)
        for ngram, logp in model.probs.items():
            assert loaded.probs[ngram] == pytest.approx(logp, abs=1e-8)
        for context, bow in model.backoffs.items():
            assert loaded.backoffs[context] == pytest.approx(bow, abs=1e-8)

    def test_hand_written_fixture(self) -> None:
        """Test queries on a bigram ARPA file with backoff weights."""
        content = (
            "\\data\\\nngram 1=5\nngram 2=2\n\n"
            "\\1-grams:\n-0.5\t</s>\n-99\t<s>\t-0.3\n-1.0\t<unk>\n"
            "-0.4\ta\t-0.2\n-0.6\tb\n\n"
            "\\2-grams:\n-0.1\t<s> a\n-0.25\ta b\n\n\\end\\\n"
        )
        ln10 = math.log(10.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "fixture.arpa"
            path.write_text(content, encoding="utf-8")
            model = read_arpa(path)
        assert model.order == 2
        assert model.name == "fixture"
        assert model.log_prob("a", [BOS]) == pytest.approx(-0.1 * ln10, abs=1e-12)
        assert model.log_prob("b", ["a"]) == pytest.approx(-0.25 * ln10, abs=1e-12)
        assert model.log_prob("b", [BOS]) == pytest.approx(-0.9 * ln10, abs=1e-12)
        assert model.log_prob(EOS, ["a"]) == pytest.approx(-0.7 * ln10, abs=1e-12)
        assert model.log_prob("a", ["b"]) == pytest.approx(-0.4 * ln10, abs=1e-12)
        assert model.log_prob("zorb", ["a"]) == pytest.approx(-1.2 * ln10, abs=1e-12)
        assert model.log_prob("a", ["zorb"]) == pytest.approx(-0.4 * ln10, abs=1e-12)

    def test_missing_file(self) -> None:
        """Test missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            read_arpa("/nonexistent/model.arpa")

    def test_count_mismatch(self) -> None:
        """Test header counts must match the body."""
        content = "\\data\\\nngram 1=3\n\n\\1-grams:\n-1.0\t<unk>\n-0.5\ta\n\n\\end\\\n"
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.arpa"
            path.write_text(content, encoding="utf-8")
            with pytest.raises(ArpaFormatError):
                read_arpa(path)

    def test_missing_end(self) -> None:
        """Test a truncated file is rejected."""
        content = "\\data\\\nngram 1=1\n\n\\1-grams:\n-1.0\t<unk>\n"
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.arpa"
            path.write_text(content, encoding="utf-8")
            with pytest.raises(ArpaFormatError):
                read_arpa(path)

    def test_missing_unk(self) -> None:
        """Test models without <unk> are rejected."""
        content = "\\data\\\nngram 1=1\n\n\\1-grams:\n0.0\ta\n\n\\end\\\n"
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.arpa"
            path.write_text(content, encoding="utf-8")
            with pytest.raises(ArpaFormatError):
                read_arpa(path)
