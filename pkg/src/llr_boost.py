"""Log-likelihood-ratio n-gram selection and clipping."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .corpus import BOS, EOS, UNK
from .logger import logger
from .ngram_lm import LanguageModel, NGram

# Boost scores live on this grid so that sums and differences of scores are
# exact in binary floating point.
SCORE_QUANTUM = 2.0**-16


def quantize_score(value: float) -> float:
    """Round a score to the nearest multiple of SCORE_QUANTUM."""
    return round(value / SCORE_QUANTUM) * SCORE_QUANTUM


@dataclass(frozen=True)
class BoostTable:
    """Boost score S(n-gram) for every n-gram whose score exceeds threshold T."""

    threshold: float
    entries: dict[NGram, float] = field(default_factory=dict)
    provenance: tuple[str, str] = ("", "")

    def __post_init__(self) -> None:
        if math.isnan(self.threshold):
            raise ValueError("Threshold must not be NaN")
        for ngram, score in self.entries.items():
            if not ngram:
                raise ValueError("Empty n-gram in boost table")
            if not math.isfinite(score) or score <= self.threshold:
                raise ValueError(
                    f"Score {score} of {' '.join(ngram)!r} does not exceed "
                    f"threshold {self.threshold}"
                )

    @classmethod
    def from_scores(
        cls,
        scores: Mapping[NGram, float],
        threshold: float,
        provenance: tuple[str, str] = ("", ""),
    ) -> "BoostTable":
        """Clip raw LLR scores at threshold, keeping quantized scores above it."""
        entries: dict[NGram, float] = {}
        for ngram in sorted(scores):
            score = quantize_score(scores[ngram])
            if score > threshold:
                entries[ngram] = score
        return cls(threshold=threshold, entries=entries, provenance=provenance)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ngram: object) -> bool:
        return ngram in self.entries

    def __iter__(self) -> Iterator[NGram]:
        return iter(sorted(self.entries))

    @property
    def order(self) -> int:
        """Length of the longest boosted n-gram (0 for an empty table)."""
        return max((len(ng) for ng in self.entries), default=0)

    def get(self, ngram: NGram, default: float = 0.0) -> float:
        return self.entries.get(ngram, default)

    def at_threshold(self, threshold: float) -> "BoostTable":
        """Return the sub-table clipped at a higher threshold."""
        if threshold < self.threshold:
            raise ValueError(
                f"Cannot lower threshold from {self.threshold} to {threshold}"
            )
        entries = {ng: s for ng, s in self.entries.items() if s > threshold}
        return BoostTable(
            threshold=threshold, entries=entries, provenance=self.provenance
        )

    def write_tsv(self, path: str | Path) -> None:
        """Write ``#threshold=<T>`` then one ``words<TAB>score`` line per entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"#threshold={self.threshold}\n")
            f.write(f"#provenance={self.provenance[0]},{self.provenance[1]}\n")
            for ngram in sorted(self.entries):
                f.write(f"{' '.join(ngram)}\t{self.entries[ngram]:.6f}\n")
        logger.info(f"Wrote boost table ({len(self)} entries) to {path}")

    @classmethod
    def read_tsv(cls, path: str | Path) -> "BoostTable":
        """Read a table written by :meth:`write_tsv`.

        Raises:
            FileNotFoundError: If the file doesn't exist.
            ValueError: If the header or an entry line is malformed.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Boost table not found: {path}")

        threshold: Optional[float] = None
        provenance = ("", "")
        entries: dict[NGram, float] = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#threshold="):
                    threshold = float(line.split("=", 1)[1])
                    continue
                if line.startswith("#provenance="):
                    gen, _, ood = line.split("=", 1)[1].partition(",")
                    provenance = (gen, ood)
                    continue
                if line.startswith("#"):
                    continue
                words, sep, score = line.partition("\t")
                if not sep or not words.split():
                    raise ValueError(f"{path}:{line_no}: malformed boost entry")
                entries[tuple(words.split())] = quantize_score(float(score))

        if threshold is None:
            raise ValueError(f"{path}: missing #threshold header")
        return cls(threshold=threshold, entries=entries, provenance=provenance)


def llr_score(gen: LanguageModel, ood: LanguageModel, ngram: Sequence[str]) -> float:
    """Log-likelihood ratio of the final word given its context.

    Returns:
        log p_OOD(w | h) - log p_GEN(w | h), each side resolved with backoff.
    """
    if not ngram:
        raise ValueError("Cannot score an empty n-gram")
    history, word = tuple(ngram[:-1]), ngram[-1]
    return ood.log_prob(word, history) - gen.log_prob(word, history)


def _boostable(ngram: NGram) -> bool:
    return UNK not in ngram and ngram[-1] != BOS


def llr_scores(gen: LanguageModel, ood: LanguageModel) -> dict[NGram, float]:
    """Score every explicit n-gram of the OOD model.

    N-grams involving ``<unk>`` are skipped: they name no concrete word.

    Raises:
        ValueError: If the OOD model has no n-grams.
    """
    ngrams = [ng for ng in ood.ngrams() if _boostable(ng)]
    if not ngrams:
        raise ValueError(f"OOD model {ood.name!r} has no n-grams to score")
    return {ng: llr_score(gen, ood, ng) for ng in sorted(ngrams)}


def build_boost_table(
    gen: LanguageModel, ood: LanguageModel, threshold: float
) -> BoostTable:
    """Build the clipped boosting table.

    Args:
        gen: Model of the data the decoder was trained on.
        ood: Model of the out-of-domain data.
        threshold: Clipping threshold T; only scores above it are kept.

    Returns:
        BoostTable instance.
    """
    scores = llr_scores(gen, ood)
    table = BoostTable.from_scores(scores, threshold, provenance=(gen.name, ood.name))
    logger.info(
        f"Boost table at T={threshold}: kept {len(table)} of {len(scores)} n-grams"
    )
    return table


def sentence_boost_oracle(table: BoostTable, sentence: Iterable[str]) -> float:
    """Total boost of a sentence by longest-suffix matching.

    Every position after ``<s>``, ``</s>`` included, contributes the score of
    the longest table n-gram ending there (0 if none).
    """
    padded = (BOS, *sentence, EOS)
    order = table.order
    total = 0.0
    for i in range(1, len(padded)):
        for k in range(min(order, i + 1), 0, -1):
            score = table.entries.get(padded[i - k + 1 : i + 1])
            if score is not None:
                total += score
                break
    return total
