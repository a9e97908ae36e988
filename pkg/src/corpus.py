"""Text corpus ingestion and subword segmentation."""

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .logger import logger

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
MARKERS = frozenset({BOS, EOS, UNK})

# Suffix carried by word-internal units when rendered as tokens
INTERNAL_SUFFIX = "@@"


class CorpusError(ValueError):
    """Raised when a corpus or inventory cannot be built or read."""


class SegmentationError(ValueError):
    """Raised when a word cannot be segmented with an inventory."""


@dataclass(frozen=True)
class Corpus:
    """Whitespace-tokenized sentences, one per non-blank input line.

    Sentence markers are not stored; the language model layer adds them.
    """

    sentences: tuple[tuple[str, ...], ...]
    skipped_lines: int = 0
    source: Optional[str] = None

    def __post_init__(self) -> None:
        for index, sentence in enumerate(self.sentences):
            if not sentence:
                raise CorpusError(f"Sentence {index} is empty")
            for token in sentence:
                if not token or any(ch.isspace() for ch in token):
                    raise CorpusError(f"Invalid token {token!r} in sentence {index}")
                if token in (BOS, EOS):
                    raise CorpusError(
                        f"Sentence marker {token} inside sentence {index}"
                    )

    @classmethod
    def from_lines(
        cls,
        lines: Iterable[str],
        lowercase: bool = True,
        source: Optional[str] = None,
    ) -> "Corpus":
        """Tokenize raw lines into a corpus.

        Args:
            lines: Raw utterances, one per item.
            lowercase: Lowercase every token.
            source: Optional name of the origin (file path).

        Returns:
            Corpus instance.
        """
        sentences: list[tuple[str, ...]] = []
        skipped = 0
        for line in lines:
            if lowercase:
                line = line.lower()
            tokens = [tok for tok in line.split() if tok not in (BOS, EOS)]
            if not tokens:
                skipped += 1
                continue
            sentences.append(tuple(tokens))
        return cls(tuple(sentences), skipped_lines=skipped, source=source)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[tuple[str, ...]]:
        return iter(self.sentences)

    def word_counts(self) -> Counter[str]:
        """Count word occurrences over all sentences."""
        counts: Counter[str] = Counter()
        for sentence in self.sentences:
            counts.update(sentence)
        return counts

    def vocabulary(self) -> list[str]:
        """Sorted list of distinct words."""
        return sorted(self.word_counts())

    def alphabet(self) -> list[str]:
        """Sorted list of distinct characters."""
        return sorted({ch for word in self.word_counts() for ch in word})

    def merge(self, other: "Corpus") -> "Corpus":
        """Concatenate two corpora."""
        return Corpus(
            self.sentences + other.sentences,
            skipped_lines=self.skipped_lines + other.skipped_lines,
        )


def load_corpus(path: str | Path, lowercase: bool = True) -> Corpus:
    """Load a line-oriented UTF-8 corpus.

    Args:
        path: Text file with one utterance per line.
        lowercase: Lowercase every token.

    Returns:
        Corpus instance.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        CorpusError: If the file is not valid UTF-8 or has no utterances.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Corpus file not found: {path}")

    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"Corpus file is not valid UTF-8: {path} ({e})") from e

    corpus = Corpus.from_lines(text.splitlines(), lowercase=lowercase, source=str(path))
    if not corpus.sentences:
        raise CorpusError(f"Corpus file has no non-blank lines: {path}")

    if corpus.skipped_lines:
        logger.warning(f"Skipped {corpus.skipped_lines} blank lines in {path}")
    logger.info(f"Loaded corpus {path}: {len(corpus)} sentences")
    return corpus


@dataclass(frozen=True, order=True)
class SubwordUnit:
    """A subword string tagged word-internal or word-final."""

    text: str
    final: bool

    @property
    def token(self) -> str:
        """Token form used in subword-level text (internal units end in @@)."""
        return self.text if self.final else self.text + INTERNAL_SUFFIX

    def __str__(self) -> str:
        return self.token


@dataclass(frozen=True)
class SubwordInventory:
    """Dense, 0-based table of subword units."""

    units: tuple[SubwordUnit, ...]
    _index: dict[SubwordUnit, int] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        index = {unit: i for i, unit in enumerate(self.units)}
        if len(index) != len(self.units):
            raise CorpusError("Duplicate units in subword inventory")
        chars = {ch for unit in self.units for ch in unit.text}
        for ch in chars:
            if any(SubwordUnit(ch, final) not in index for final in (False, True)):
                raise CorpusError(f"Character {ch!r} lacks an internal or final unit")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self) -> Iterator[SubwordUnit]:
        return iter(self.units)

    def __contains__(self, unit: object) -> bool:
        return unit in self._index

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(unit.text for unit in self.units if len(unit.text) == 1)

    @property
    def max_unit_length(self) -> int:
        return max((len(unit.text) for unit in self.units), default=0)

    def id_of(self, text: str, final: bool) -> int:
        """Return the id of a unit.

        Raises:
            KeyError: If the unit is not in the inventory.
        """
        return self._index[SubwordUnit(text, final)]

    def get(self, text: str, final: bool) -> Optional[int]:
        return self._index.get(SubwordUnit(text, final))

    def write(self, path: str | Path) -> None:
        """Write one unit per line as ``text<TAB>internal|final<TAB>id``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, unit in enumerate(self.units):
                tag = "final" if unit.final else "internal"
                f.write(f"{unit.text}\t{tag}\t{i}\n")

    @classmethod
    def read(cls, path: str | Path) -> "SubwordInventory":
        """Read an inventory written by :meth:`write`.

        Raises:
            FileNotFoundError: If the file doesn't exist.
            CorpusError: If a line is malformed or ids are not dense.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Inventory file not found: {path}")

        units: list[SubwordUnit] = []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or parts[1] not in ("internal", "final"):
                    raise CorpusError(f"{path}:{line_no}: malformed unit line")
                if int(parts[2]) != len(units):
                    raise CorpusError(f"{path}:{line_no}: unit ids must be dense")
                units.append(SubwordUnit(parts[0], parts[1] == "final"))
        return cls(tuple(units))


def build_subword_inventory(
    corpus: Corpus,
    max_units: int,
    max_unit_length: int = 8,
) -> SubwordInventory:
    """Build a frequency-ranked subword inventory.

    Every character of the corpus alphabet is included in both forms. The
    remaining budget goes to the most frequent multi-character substrings,
    each ranked in both forms by its substring frequency; ties are broken
    lexicographically on (text, tag name), so ``final`` precedes
    ``internal``.

    Args:
        corpus: Source corpus.
        max_units: Total number of units allowed.
        max_unit_length: Longest substring considered.

    Returns:
        SubwordInventory with units sorted by (text, final).

    Raises:
        CorpusError: If the budget cannot hold the character units.
    """
    word_counts = corpus.word_counts()
    alphabet = corpus.alphabet()
    forced = {SubwordUnit(ch, final) for ch in alphabet for final in (False, True)}
    if max_units < len(forced):
        raise CorpusError(
            f"Subword budget {max_units} is smaller than the "
            f"{len(forced)} required character units"
        )

    candidates: Counter[str] = Counter()
    for word, freq in word_counts.items():
        n = len(word)
        for i in range(n):
            for j in range(i + 2, min(n, i + max_unit_length) + 1):
                candidates[word[i:j]] += freq

    ranked = sorted(
        (SubwordUnit(text, final) for text in candidates for final in (True, False)),
        key=lambda unit: (-candidates[unit.text], unit.text, not unit.final),
    )
    extra = set(ranked[: max_units - len(forced)])

    units = tuple(sorted(forced | extra))
    logger.info(
        f"Built subword inventory: {len(units)} units "
        f"({len(forced)} character units, alphabet size {len(alphabet)})"
    )
    return SubwordInventory(units)


def segment_word(word: str, inv: SubwordInventory) -> tuple[int, ...]:
    """Segment a word by greedy longest match, left to right.

    The last unit is word-final; all earlier units are word-internal.

    Args:
        word: Non-empty word.
        inv: Subword inventory.

    Returns:
        Tuple of unit ids.

    Raises:
        SegmentationError: If the word is empty or uses an unknown character.
    """
    if not word:
        raise SegmentationError("Cannot segment an empty word")

    n = len(word)
    longest = inv.max_unit_length
    ids: list[int] = []
    i = 0
    while i < n:
        unit_id = inv.get(word[i:], True) if n - i <= longest else None
        if unit_id is not None:
            ids.append(unit_id)
            break
        for length in range(min(longest, n - i - 1), 0, -1):
            unit_id = inv.get(word[i : i + length], False)
            if unit_id is not None:
                ids.append(unit_id)
                i += length
                break
        else:
            raise SegmentationError(
                f"Character {word[i]!r} of {word!r} is outside the inventory alphabet"
            )
    return tuple(ids)


def segment_sentence(words: Iterable[str], inv: SubwordInventory) -> tuple[int, ...]:
    """Concatenate the segmentations of a word sequence."""
    ids: list[int] = []
    for word in words:
        ids.extend(segment_word(word, inv))
    return tuple(ids)


def units_to_words(
    ids: Iterable[int], inv: SubwordInventory
) -> tuple[tuple[str, ...], str]:
    """Decode unit ids back to words.

    Returns:
        Completed words and the pending (unterminated) surface string.
    """
    words: list[str] = []
    pending = ""
    for unit_id in ids:
        unit = inv.units[unit_id]
        pending += unit.text
        if unit.final:
            words.append(pending)
            pending = ""
    return tuple(words), pending


def to_subword_corpus(corpus: Corpus, inv: SubwordInventory) -> Corpus:
    """Render every sentence as subword tokens (internal units end in @@)."""
    sentences = tuple(
        tuple(inv.units[i].token for i in segment_sentence(sentence, inv))
        for sentence in corpus.sentences
    )
    return Corpus(sentences, source=corpus.source)
