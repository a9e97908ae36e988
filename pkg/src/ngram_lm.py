"""Katz backoff n-gram language models.

Probabilities are kept in natural-log units in memory; ARPA files store
log10 values. Models are order 1..4, open-vocabulary with an explicit
``<unk>`` entry that receives the unigram mass left by discounting.
"""

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Protocol, Sequence

from .corpus import BOS, EOS, UNK, Corpus, CorpusError
from .logger import logger

MAX_ORDER = 4
LOG10 = math.log(10.0)
ARPA_LOG_ZERO = -99.0

# Floor for backoff numerators/denominators that underflow to zero
_TINY = 1e-300

NGram = tuple[str, ...]


class ArpaFormatError(ValueError):
    """Raised when an ARPA file is malformed."""


class LanguageModel(Protocol):
    """Anything that scores a word given its history."""

    @property
    def name(self) -> str: ...

    @property
    def order(self) -> int: ...

    def log_prob(self, word: str, history: Sequence[str] = ()) -> float: ...

    def ngrams(self) -> Iterator[NGram]: ...


@dataclass(frozen=True)
class CountTable:
    """Raw n-gram counts of orders 1..order.

    ``<s>`` is counted only as context: it never appears as the last word of
    a counted n-gram.
    """

    order: int
    counts: dict[NGram, int]
    vocabulary: frozenset[str]

    def of_order(self, k: int) -> dict[NGram, int]:
        return {ng: c for ng, c in self.counts.items() if len(ng) == k}

    def total(self, k: int = 1) -> int:
        return sum(c for ng, c in self.counts.items() if len(ng) == k)


def count_ngrams(corpus: Corpus, order: int) -> CountTable:
    """Count all k-grams, k = 1..order, of ``<s>``/``</s>``-padded sentences.

    Args:
        corpus: Source corpus.
        order: Highest n-gram order (1..4).

    Returns:
        CountTable instance.

    Raises:
        ValueError: If order is out of range.
        CorpusError: If the corpus is empty.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"Order must be in 1..{MAX_ORDER}, got {order}")
    if not corpus.sentences:
        raise CorpusError("Cannot count n-grams of an empty corpus")

    counts: Counter[NGram] = Counter()
    for sentence in corpus:
        padded = (BOS, *sentence, EOS)
        for j in range(1, len(padded)):
            for k in range(1, order + 1):
                start = j - k + 1
                if start < 0:
                    break
                counts[padded[start : j + 1]] += 1

    vocabulary = frozenset({BOS, EOS, UNK}) | frozenset(corpus.word_counts())
    logger.debug(f"Counted {len(counts)} distinct n-grams up to order {order}")
    return CountTable(order=order, counts=dict(counts), vocabulary=vocabulary)


@dataclass(frozen=True)
class NGramModel:
    """Backoff n-gram model.

    ``probs`` maps every explicit n-gram to its natural-log probability;
    ``backoffs`` maps contexts (n-grams shorter than ``order``, including
    ``(<s>,)``) to natural-log backoff weights. ``counts`` is kept when the
    model was estimated from counts.
    """

    order: int
    probs: dict[NGram, float]
    backoffs: dict[NGram, float] = field(default_factory=dict)
    name: str = ""
    counts: dict[NGram, int] = field(default_factory=dict, repr=False)
    _known: frozenset[str] = field(
        init=False, repr=False, compare=False, default=frozenset()
    )

    def __post_init__(self) -> None:
        known = frozenset(ng[0] for ng in self.probs if len(ng) == 1)
        if UNK not in known:
            raise ValueError("Model has no <unk> unigram")
        object.__setattr__(self, "_known", known)

    def __len__(self) -> int:
        return len(self.probs)

    def vocabulary(self) -> list[str]:
        """Sorted words the model can predict (``<s>`` excluded)."""
        return sorted(self._known)

    def knows(self, word: str) -> bool:
        return word in self._known

    def contexts(self) -> list[NGram]:
        """Sorted contexts carrying a backoff weight."""
        return sorted(self.backoffs)

    def ngrams(self, k: Optional[int] = None) -> Iterator[NGram]:
        """Yield explicit n-grams in lexicographic order, optionally of one order."""
        for ngram in sorted(self.probs):
            if k is None or len(ngram) == k:
                yield ngram

    def sizes(self) -> dict[int, int]:
        sizes: Counter[int] = Counter(len(ng) for ng in self.probs)
        return {k: sizes.get(k, 0) for k in range(1, self.order + 1)}

    def _map(self, word: str) -> str:
        return word if word in self._known else UNK

    def _history(self, history: Sequence[str]) -> NGram:
        n = self.order - 1
        if n <= 0:
            return ()
        tail = tuple(history)[-n:]
        return tuple(w if w == BOS else self._map(w) for w in tail)

    def log_prob(self, word: str, history: Sequence[str] = ()) -> float:
        """Natural-log probability of ``word`` after ``history``.

        Resolves by longest match: an explicit n-gram is returned directly,
        otherwise the context's backoff weight is added and the history is
        shortened by one word. Unknown words map to ``<unk>``.
        """
        word = self._map(word)
        h = self._history(history)
        total = 0.0
        for start in range(len(h) + 1):
            context = h[start:]
            logp = self.probs.get(context + (word,))
            if logp is not None:
                return total + logp
            total += self.backoffs.get(context, 0.0)
        raise AssertionError("unreachable: <unk> unigram always present")

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        return math.exp(self.log_prob(word, history))

    def sentence_log_prob(self, sentence: Sequence[str]) -> float:
        """Sum of token log-probabilities, ``<s>``-padded, ``</s>`` included."""
        history: list[str] = [BOS]
        total = 0.0
        for word in (*sentence, EOS):
            total += self.log_prob(word, history)
            history.append(word)
        return total


def perplexity(model: NGramModel, sentences: Iterable[Sequence[str]]) -> float:
    """Per-token perplexity over sentences, counting ``</s>``."""
    total = 0.0
    tokens = 0
    for sentence in sentences:
        total += model.sentence_log_prob(sentence)
        tokens += len(sentence) + 1
    if tokens == 0:
        raise ValueError("Perplexity needs at least one sentence")
    return math.exp(-total / tokens)


def _good_turing_discounts(
    count_of_counts: Counter[int], cutoff: int, k: int
) -> dict[int, float]:
    """Katz discount ratios d_r for r = 1..cutoff.

    Buckets whose statistics are missing or produce a ratio outside (0, 1]
    are left undiscounted (d_r = 1).
    """
    n1 = count_of_counts.get(1, 0)
    n_top = count_of_counts.get(cutoff + 1, 0)
    common = (cutoff + 1) * n_top / n1 if n1 else None

    discounts: dict[int, float] = {}
    for r in range(1, cutoff + 1):
        nr = count_of_counts.get(r, 0)
        if nr == 0:
            continue
        nr_next = count_of_counts.get(r + 1, 0)
        if common is None or nr_next == 0 or common >= 1.0:
            logger.warning(
                f"Degenerate Good-Turing statistics for count {r} at order {k}; "
                "bucket left undiscounted"
            )
            discounts[r] = 1.0
            continue
        ratio = ((r + 1) * nr_next / (r * nr) - common) / (1.0 - common)
        if not 0.0 < ratio <= 1.0:
            logger.warning(
                f"Good-Turing ratio {ratio:.4f} for count {r} at order {k} "
                "out of range; bucket left undiscounted"
            )
            ratio = 1.0
        discounts[r] = ratio
    return discounts


def _apply_leftover_floor(
    seen: dict[str, float], min_leftover: float, label: str
) -> tuple[dict[str, float], float]:
    """Return seen probabilities and leftover mass, leaving at least the floor."""
    mass = math.fsum(seen.values())
    leftover = 1.0 - mass
    if leftover >= min_leftover:
        return seen, leftover
    logger.debug(f"Leftover mass {leftover:.3g} below floor for {label}; rescaling")
    scale = (1.0 - min_leftover) / mass
    return {w: p * scale for w, p in seen.items()}, min_leftover


def _backoff_weight(numerator: float, denominator: float) -> float:
    return math.log(max(numerator, _TINY)) - math.log(max(denominator, _TINY))


def estimate_katz(
    counts: CountTable,
    discount_cutoff: int = 5,
    min_leftover: float = 1e-6,
    name: str = "",
) -> NGramModel:
    """Estimate a Katz backoff model with Good-Turing discounting.

    Counts up to ``discount_cutoff`` are discounted; larger counts keep their
    maximum-likelihood estimate. Each context's backoff weight spreads the
    leftover mass over the lower-order distribution of unseen words.

    Args:
        counts: N-gram counts.
        discount_cutoff: Largest discounted count (≥ 1).
        min_leftover: Smallest leftover mass kept per context.
        name: Model name used in provenance.

    Returns:
        NGramModel instance.

    Raises:
        ValueError: If counts are empty or parameters out of range.
    """
    if not counts.counts:
        raise ValueError("Cannot estimate a model from empty counts")
    if discount_cutoff < 1:
        raise ValueError(f"discount_cutoff must be >= 1, got {discount_cutoff}")
    if not 0.0 < min_leftover < 1.0:
        raise ValueError(f"min_leftover must be in (0, 1), got {min_leftover}")

    order = counts.order
    by_order = {k: counts.of_order(k) for k in range(1, order + 1)}
    discounts = {
        k: _good_turing_discounts(Counter(by_order[k].values()), discount_cutoff, k)
        for k in by_order
    }

    def discounted(k: int, c: int) -> float:
        return c * discounts[k].get(c, 1.0)

    probs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}

    # Unigrams: leftover mass goes to <unk>
    total = sum(by_order[1].values())
    seen = {ng[0]: discounted(1, c) / total for ng, c in by_order[1].items()}
    seen, leftover = _apply_leftover_floor(seen, min_leftover, "unigrams")
    seen[UNK] = seen.get(UNK, 0.0) + leftover
    for word, p in seen.items():
        probs[(word,)] = math.log(p)

    model = NGramModel(order=order, probs=probs, backoffs=backoffs, name=name)

    for k in range(2, order + 1):
        children: dict[NGram, dict[str, int]] = defaultdict(dict)
        for ngram, c in by_order[k].items():
            children[ngram[:-1]][ngram[-1]] = c

        for context in sorted(children):
            followers = children[context]
            context_total = sum(followers.values())
            seen = {w: discounted(k, c) / context_total for w, c in followers.items()}
            seen, leftover = _apply_leftover_floor(
                seen, min_leftover, " ".join(context)
            )
            lower = context[1:]
            lower_mass = math.fsum(model.prob(w, lower) for w in seen)
            for w, p in seen.items():
                probs[context + (w,)] = math.log(p)
            backoffs[context] = _backoff_weight(leftover, 1.0 - lower_mass)

    model = NGramModel(
        order=order,
        probs=probs,
        backoffs=backoffs,
        name=name,
        counts=dict(counts.counts),
    )
    logger.info(
        f"Estimated Katz model {name or '(unnamed)'}: order {order}, "
        f"sizes {model.sizes()}"
    )
    return model


def _recompute_backoffs(
    order: int, probs: dict[NGram, float], name: str, counts: dict[NGram, int]
) -> NGramModel:
    """Rebuild backoff weights bottom-up so every context normalizes."""
    children: dict[NGram, list[str]] = defaultdict(list)
    for ngram in probs:
        if len(ngram) >= 2:
            children[ngram[:-1]].append(ngram[-1])

    backoffs: dict[NGram, float] = {}
    model = NGramModel(order, probs, backoffs, name=name, counts=counts)
    for k in range(2, order + 1):
        for context in sorted(c for c in children if len(c) == k - 1):
            followers = children[context]
            seen_mass = math.fsum(math.exp(probs[context + (w,)]) for w in followers)
            lower_mass = math.fsum(model.prob(w, context[1:]) for w in followers)
            backoffs[context] = _backoff_weight(1.0 - seen_mass, 1.0 - lower_mass)
    return model


@dataclass(frozen=True)
class InterpolationSpec:
    """Weighted mixture of models sharing one order."""

    components: tuple[tuple[NGramModel, float], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("Interpolation needs at least one component")
        orders = {model.order for model, _ in self.components}
        if len(orders) != 1:
            raise ValueError(
                f"Interpolated models must share one order, got {sorted(orders)}"
            )
        weights = [w for _, w in self.components]
        if any(w < 0 for w in weights):
            raise ValueError("Interpolation weights must be nonnegative")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError(
                f"Interpolation weights must sum to 1, got {math.fsum(weights)}"
            )

    @classmethod
    def equal_weights(cls, models: Sequence[NGramModel]) -> "InterpolationSpec":
        if not models:
            raise ValueError("Interpolation needs at least one component")
        weight = 1.0 / len(models)
        return cls(tuple((model, weight) for model in models))


def _component_prob(model: NGramModel, word: str, history: NGram) -> float:
    # A component assigns nothing to words outside its own vocabulary;
    # its <unk> mass stands for them collectively.
    if word != UNK and not model.knows(word):
        return 0.0
    return model.prob(word, history)


def _active(spec: InterpolationSpec) -> list[tuple[NGramModel, float]]:
    return [(model, w) for model, w in spec.components if w > 0.0]


@dataclass(frozen=True)
class MixtureModel:
    """Linear mixture queried on the fly.

    Every query returns ``log sum_i w_i p_i(word | history)`` exactly, each
    component resolving the history with its own backoff. Used where the
    materialized form would be too large.
    """

    spec: InterpolationSpec
    name: str = ""
    _known: frozenset[str] = field(
        init=False, repr=False, compare=False, default=frozenset()
    )

    def __post_init__(self) -> None:
        known: set[str] = set()
        for model, _ in _active(self.spec):
            known.update(model.vocabulary())
        object.__setattr__(self, "_known", frozenset(known))

    @property
    def order(self) -> int:
        return self.spec.components[0][0].order

    def vocabulary(self) -> list[str]:
        return sorted(self._known)

    def knows(self, word: str) -> bool:
        return word in self._known

    def ngrams(self, k: Optional[int] = None) -> Iterator[NGram]:
        """Yield the union of the components' explicit n-grams, sorted."""
        union: set[NGram] = set()
        for model, _ in _active(self.spec):
            union.update(model.probs)
        for ngram in sorted(union):
            if k is None or len(ngram) == k:
                yield ngram

    def log_prob(self, word: str, history: Sequence[str] = ()) -> float:
        word = word if word in self._known else UNK
        h = tuple(history)
        p = math.fsum(
            w * _component_prob(model, word, h) for model, w in _active(self.spec)
        )
        return math.log(p)

    def prob(self, word: str, history: Sequence[str] = ()) -> float:
        return math.exp(self.log_prob(word, history))

    def sentence_log_prob(self, sentence: Sequence[str]) -> float:
        history: list[str] = [BOS]
        total = 0.0
        for word in (*sentence, EOS):
            total += self.log_prob(word, history)
            history.append(word)
        return total


def _context_preimages(
    context: NGram, model: NGramModel, vocabulary: Sequence[str]
) -> Iterator[NGram]:
    """Histories over ``vocabulary`` that ``model`` reads as ``context``."""
    foreign = [w for w in vocabulary if not model.knows(w)]
    choices = [[UNK, *foreign] if token == UNK else [token] for token in context]
    for combination in itertools.product(*choices):
        yield tuple(combination)


def interpolate(spec: InterpolationSpec, name: str = "") -> NGramModel:
    """Materialize a linear mixture as a static backoff model.

    Every context some component distinguishes (including histories that
    map onto a component's ``<unk>``) gets an explicit entry for every word
    of the union vocabulary, carrying the exact mixture probability, with a
    zero backoff weight. Any query then resolves to the longest such context,
    where every component answers as it would for the full history, so
    backed-off queries are exact too. Size grows with contexts times
    vocabulary; prefer ``MixtureModel`` for large components.

    Args:
        spec: Components and weights.
        name: Name of the resulting model.

    Returns:
        NGramModel instance.
    """
    active = _active(spec)
    mixture = MixtureModel(spec, name=name)
    vocabulary = mixture.vocabulary()

    contexts: set[NGram] = {()}
    for model, _ in active:
        own = set(model.backoffs) | {ng[:-1] for ng in model.probs if len(ng) >= 2}
        for context in own:
            if 0 < len(context) < mixture.order:
                contexts.update(_context_preimages(context, model, vocabulary))

    probs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}
    for context in sorted(contexts):
        for word in vocabulary:
            probs[context + (word,)] = mixture.log_prob(word, context)
        if context:
            backoffs[context] = 0.0

    mixed = NGramModel(mixture.order, probs, backoffs, name=name)
    logger.info(
        f"Interpolated {len(active)} models into {name or '(unnamed)'}: "
        f"{len(contexts)} contexts x {len(vocabulary)} words, sizes {mixed.sizes()}"
    )
    return mixed


def prune_model(
    model: NGramModel,
    min_count: Optional[int] = None,
    max_entries: Optional[int] = None,
    counts: Optional[dict[NGram, int]] = None,
) -> NGramModel:
    """Prune a model by count threshold and/or total size budget.

    ``min_count`` removes highest-order n-grams seen fewer times than the
    threshold. ``max_entries`` removes n-grams from the highest order down
    (lowest count first, or lowest probability when counts are unknown)
    until the model fits; n-grams that are contexts or suffixes of kept
    longer n-grams are never removed. Backoff weights are recomputed.

    Raises:
        ValueError: If count pruning lacks counts or the budget is smaller
            than the unigram section.
    """
    counts = counts if counts is not None else model.counts
    removed: set[NGram] = set()

    if min_count is not None and min_count > 1 and model.order > 1:
        if not counts:
            raise ValueError("Count-threshold pruning needs n-gram counts")
        removed.update(
            ng
            for ng in model.probs
            if len(ng) == model.order and counts.get(ng, 0) < min_count
        )

    if max_entries is not None:
        unigrams = model.sizes()[1]
        if max_entries < unigrams:
            raise ValueError(
                f"Size budget {max_entries} is smaller than the {unigrams} unigrams"
            )
        kept = set(model.probs) - removed
        for k in range(model.order, 1, -1):
            if len(kept) <= max_entries:
                break
            longer = [ng for ng in kept if len(ng) == k + 1]
            protected = {ng[:-1] for ng in longer} | {ng[1:] for ng in longer}

            def rank(ng: NGram) -> tuple[float, NGram]:
                if counts:
                    return float(counts.get(ng, 0)), ng
                return model.probs[ng], ng

            candidates = sorted(
                (ng for ng in kept if len(ng) == k and ng not in protected), key=rank
            )
            excess = len(kept) - max_entries
            for ng in candidates[:excess]:
                kept.discard(ng)
                removed.add(ng)

    if not removed:
        logger.info("Pruning removed no n-grams")
        return model

    probs = {ng: lp for ng, lp in model.probs.items() if ng not in removed}
    kept_counts = {ng: c for ng, c in counts.items() if ng not in removed}
    pruned = _recompute_backoffs(model.order, probs, model.name, kept_counts)
    logger.info(
        f"Pruned {len(removed)} n-grams from {model.name or '(unnamed)'}: "
        f"sizes {pruned.sizes()}"
    )
    return pruned


def _format_log10(value: float) -> str:
    return f"{value / LOG10:.10f}"


def write_arpa(model: NGramModel, path: str | Path) -> None:
    """Write a model in ARPA format (log10 values)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    sections: dict[int, list[str]] = {k: [] for k in range(1, model.order + 1)}
    for ngram in sorted(set(model.probs) | {(BOS,)}):
        logp = model.probs.get(ngram)
        logp_field = _format_log10(logp) if logp is not None else f"{ARPA_LOG_ZERO:.1f}"
        fields = [logp_field, " ".join(ngram)]
        if ngram in model.backoffs and len(ngram) < model.order:
            fields.append(_format_log10(model.backoffs[ngram]))
        sections[len(ngram)].append("\t".join(fields))

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n\\data\\\n")
        for k in range(1, model.order + 1):
            f.write(f"ngram {k}={len(sections[k])}\n")
        for k in range(1, model.order + 1):
            f.write(f"\n\\{k}-grams:\n")
            for line in sections[k]:
                f.write(line + "\n")
        f.write("\n\\end\\\n")
    logger.info(f"Wrote ARPA model to {path}")


def read_arpa(path: str | Path, name: Optional[str] = None) -> NGramModel:
    """Read an ARPA model, converting log10 values to natural log.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ArpaFormatError: If sections are malformed or counts disagree.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ARPA file not found: {path}")

    declared: dict[int, int] = {}
    found: Counter[int] = Counter()
    probs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}
    section: Optional[int] = None
    in_data = False
    ended = False

    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if ended:
                raise ArpaFormatError(f"{path}:{line_no}: content after \\end\\")
            if line == "\\data\\":
                in_data = True
                continue
            if line == "\\end\\":
                ended = True
                continue
            if line.startswith("\\") and line.endswith("-grams:"):
                try:
                    k = int(line[1:].split("-", 1)[0])
                except ValueError as e:
                    raise ArpaFormatError(
                        f"{path}:{line_no}: bad section {line!r}"
                    ) from e
                expected = 1 if section is None else section + 1
                if k != expected:
                    raise ArpaFormatError(
                        f"{path}:{line_no}: expected \\{expected}-grams:"
                    )
                section = k
                in_data = False
                continue
            if in_data:
                if not line.startswith("ngram ") or "=" not in line:
                    raise ArpaFormatError(f"{path}:{line_no}: bad header line {line!r}")
                k_str, c_str = line[len("ngram ") :].split("=", 1)
                declared[int(k_str)] = int(c_str)
                continue
            if section is None:
                raise ArpaFormatError(f"{path}:{line_no}: entry outside any section")

            parts = line.split()
            if len(parts) == section + 1:
                bow = None
            elif len(parts) == section + 2:
                bow = float(parts[-1]) * LOG10
            else:
                raise ArpaFormatError(f"{path}:{line_no}: expected {section} words")
            ngram = tuple(parts[1 : section + 1])
            logp10 = float(parts[0])
            if not (ngram == (BOS,) and logp10 <= ARPA_LOG_ZERO):
                probs[ngram] = logp10 * LOG10
            if bow is not None:
                backoffs[ngram] = bow
            found[section] += 1

    if not declared:
        raise ArpaFormatError(f"{path}: missing \\data\\ header")
    if not ended:
        raise ArpaFormatError(f"{path}: missing \\end\\ marker")
    order = max(declared)
    if sorted(declared) != list(range(1, order + 1)) or section != order:
        raise ArpaFormatError(
            f"{path}: header declares order {order} but body ends at order {section}"
        )
    for k, expected in declared.items():
        if found[k] != expected:
            raise ArpaFormatError(
                f"{path}: header declares {expected} {k}-grams, body has {found[k]}"
            )

    try:
        model = NGramModel(order, probs, backoffs, name=name or path.stem)
    except ValueError as e:
        raise ArpaFormatError(f"{path}: {e}") from e
    logger.info(f"Read ARPA model {path}: order {order}, sizes {model.sizes()}")
    return model
