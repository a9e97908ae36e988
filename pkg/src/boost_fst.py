"""Word-level boosting transducer with backoff arcs and subword lookahead."""

from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import BOS, EOS, MARKERS, SubwordInventory, SubwordUnit, segment_word
from .llr_boost import BoostTable, quantize_score
from .logger import logger
from .ngram_lm import NGram


def _ilog2(value: int) -> int:
    return value.bit_length() - 1


class RangeMax:
    """Sparse table answering range-maximum queries in O(1)."""

    def __init__(self, data: Sequence[float]):
        length = len(data)
        self._table: list[list[float]] = [list(data)]
        depth = 1
        while (1 << depth) <= length:
            prev = self._table[depth - 1]
            half = 1 << (depth - 1)
            self._table.append(
                [max(prev[i], prev[i + half]) for i in range(length - (1 << depth) + 1)]
            )
            depth += 1

    def __call__(self, start: int, stop: int) -> Optional[float]:
        """Maximum over data[start:stop], or None for an empty range."""
        if start >= stop:
            return None
        depth = _ilog2(stop - start)
        row = self._table[depth]
        return max(row[start], row[stop - (1 << depth)])


@dataclass(frozen=True)
class Arc:
    """Outgoing arc of a context state."""

    label: str
    weight: float
    next_state: int


@dataclass(frozen=True)
class FstState:
    """Context state: its word history, sorted arcs and backoff target."""

    history: NGram
    arcs: tuple[Arc, ...]
    backoff: Optional[int]
    labels: tuple[str, ...] = field(init=False, repr=False, compare=False)
    max_weight: RangeMax = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        labels = tuple(arc.label for arc in self.arcs)
        if any(a >= b for a, b in zip(labels, labels[1:])):
            raise ValueError(f"Arcs of state {self.history} are not strictly sorted")
        object.__setattr__(self, "labels", labels)
        weights = [arc.weight for arc in self.arcs]
        object.__setattr__(self, "max_weight", RangeMax(weights))

    def find(self, label: str) -> Optional[Arc]:
        i = bisect_left(self.labels, label)
        if i < len(self.labels) and self.labels[i] == label:
            return self.arcs[i]
        return None


@dataclass(frozen=True)
class FstCursor:
    """Per-hypothesis position: state, pending subwords of the current word,
    and the lookahead weight provisionally applied for them."""

    state: int
    pending: tuple[str, ...] = ()
    provisional: float = 0.0

    def __post_init__(self) -> None:
        if not self.pending and self.provisional != 0.0:
            raise ValueError(
                "A cursor without pending subwords has no provisional weight"
            )

    @property
    def prefix(self) -> str:
        return "".join(self.pending)


class BoostingFst:
    """Backoff automaton over words whose paths sum matched boost scores.

    State 0 is the root (empty history). Every non-root state backs off with
    weight 0 to the state of its longest proper suffix.
    """

    def __init__(self, order: int, states: Sequence[FstState]):
        if not states or states[0].history != ():
            raise ValueError("State 0 must be the root state")
        self.order = order
        self.states: tuple[FstState, ...] = tuple(states)
        self._index = {state.history: i for i, state in enumerate(self.states)}
        self.root = 0
        self.start = self.suffix_state((BOS,))
        self._word_best: dict[str, float] = {}
        self._prefix_best: dict[str, float] = {}
        for state in self.states:
            for arc in state.arcs:
                label, weight = arc.label, arc.weight
                self._word_best[label] = max(weight, self._word_best.get(label, 0.0))
                for end in range(1, len(label) + 1):
                    prefix = label[:end]
                    best = self._prefix_best.get(prefix, 0.0)
                    self._prefix_best[prefix] = max(weight, best)
        self._bound_units: tuple[SubwordUnit, ...] = ()
        self._bounds: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.states)

    def state_of(self, history: NGram) -> Optional[int]:
        return self._index.get(history)

    def suffix_state(self, words: NGram) -> int:
        """State of the longest suffix of ``words`` that is a context state."""
        for start in range(len(words) + 1):
            state = self._index.get(words[start:])
            if state is not None:
                return state
        raise AssertionError("unreachable: root state always present")

    def num_arcs(self) -> int:
        return sum(len(state.arcs) for state in self.states)

    def start_cursor(self) -> FstCursor:
        return FstCursor(self.start)

    def advance(self, state: int, word: str) -> tuple[int, float]:
        """Consume one word.

        Looks the word up among the state's sorted arcs, following backoff
        arcs (weight 0) until a match; at the root without a match the
        result is the root itself with weight 0.

        Returns:
            (next state, weight).
        """
        current = state
        while True:
            node = self.states[current]
            arc = node.find(word)
            if arc is not None:
                return arc.next_state, arc.weight
            if node.backoff is None:
                return self.root, 0.0
            current = node.backoff

    def prefix_range(self, state: int, prefix: str) -> tuple[int, int]:
        """Half-open range of arcs at ``state`` whose label starts with ``prefix``."""
        labels = self.states[state].labels
        n = len(prefix)
        lo = bisect_left(labels, prefix, key=lambda label: label[:n])
        hi = bisect_right(labels, prefix, lo=lo, key=lambda label: label[:n])
        return lo, hi

    def lookahead_weight(self, state: int, prefix: str) -> float:
        """Largest arc weight among arcs of this state matching the prefix."""
        lo, hi = self.prefix_range(state, prefix)
        best = self.states[state].max_weight(lo, hi)
        return 0.0 if best is None else best

    def unit_gains(
        self, pending: str, units: tuple[SubwordUnit, ...]
    ) -> np.ndarray:
        """Upper bound, per unit, on the committed-plus-lookahead weight of
        appending it to the pending text ``pending``.

        A final unit can at best earn the largest weight of any arc carrying
        the completed word; an internal unit at best the largest weight of
        any arc whose label extends the new prefix. Neither depends on the
        state, so the vectors are cached per pending text. Entries are never
        negative because unmatched words and prefixes score 0.
        """
        if units is not self._bound_units:
            self._bound_units = units
            self._bounds = {}
        gains = self._bounds.get(pending)
        if gains is None:
            gains = np.array(
                [
                    (self._word_best if unit.final else self._prefix_best).get(
                        pending + unit.text, 0.0
                    )
                    for unit in units
                ]
            )
            self._bounds[pending] = gains
        return gains

    def cursor_extend(
        self, cursor: FstCursor, unit: SubwordUnit
    ) -> tuple[FstCursor, float]:
        """Consume one subword unit.

        A word-final unit resolves the completed word exactly and retracts
        the provisional weight; an internal unit replaces the provisional
        weight by the lookahead weight of the longer prefix.

        Returns:
            (new cursor, score delta).
        """
        pending = cursor.pending + (unit.text,)
        if unit.final:
            next_state, weight = self.advance(cursor.state, "".join(pending))
            return FstCursor(next_state), weight - cursor.provisional
        provisional = self.lookahead_weight(cursor.state, "".join(pending))
        delta = provisional - cursor.provisional
        return FstCursor(cursor.state, pending, provisional), delta

    def finalize(self, cursor: FstCursor) -> tuple[FstCursor, float, Optional[str]]:
        """Close an utterance: flush a pending word, then consume ``</s>``.

        Returns:
            (final cursor, score delta, flushed word or None).
        """
        delta = 0.0
        state = cursor.state
        word: Optional[str] = None
        if cursor.pending:
            word = cursor.prefix
            state, weight = self.advance(state, word)
            delta = weight - cursor.provisional
        state, weight = self.advance(state, EOS)
        return FstCursor(state), delta + weight, word

    def score_words(self, words: Sequence[str]) -> float:
        """Total weight of a sentence, ``</s>`` included."""
        state = self.start
        total = 0.0
        for word in (*words, EOS):
            state, weight = self.advance(state, word)
            total += weight
        return total

    def write(self, path: str | Path) -> None:
        """Write the text serialization (states, sorted arcs, backoff arcs)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"#order={self.order}\n")
            for i, state in enumerate(self.states):
                history = " ".join(state.history) if state.history else "ε"
                f.write(f"state {i} {history}\n")
            for i, state in enumerate(self.states):
                for arc in state.arcs:
                    f.write(f"arc {i} {arc.next_state} {arc.label} {arc.weight:.6f}\n")
                if state.backoff is not None:
                    f.write(f"backoff {i} {state.backoff}\n")
        logger.info(
            f"Wrote boosting FST ({len(self)} states, {self.num_arcs()} arcs) "
            f"to {path}"
        )

    @classmethod
    def read(
        cls, path: str | Path, inv: Optional[SubwordInventory] = None
    ) -> "BoostingFst":
        """Read a serialized FST, checking its labels against an inventory when given.

        Raises:
            FileNotFoundError: If the file doesn't exist.
            ValueError: If a line is malformed.
            SegmentationError: If a label cannot be segmented with ``inv``.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"FST file not found: {path}")

        order = 0
        histories: dict[int, NGram] = {}
        arcs: dict[int, list[Arc]] = defaultdict(list)
        backoffs: dict[int, int] = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    if parts[0].startswith("#order="):
                        order = int(parts[0].split("=", 1)[1])
                    elif parts[0] == "state":
                        words = tuple(parts[2:])
                        histories[int(parts[1])] = () if words == ("ε",) else words
                    elif parts[0] == "arc" and len(parts) == 5:
                        weight = quantize_score(float(parts[4]))
                        arc = Arc(parts[3], weight, int(parts[2]))
                        arcs[int(parts[1])].append(arc)
                    elif parts[0] == "backoff" and len(parts) == 3:
                        backoffs[int(parts[1])] = int(parts[2])
                    else:
                        raise ValueError(parts[0])
                except (ValueError, IndexError) as e:
                    raise ValueError(f"{path}:{line_no}: malformed FST line") from e

        if sorted(histories) != list(range(len(histories))):
            raise ValueError(f"{path}: state ids must be dense")
        if inv is not None:
            for state_arcs in arcs.values():
                for arc in state_arcs:
                    _check_label(arc.label, inv)
        states = [
            FstState(histories[i], tuple(arcs[i]), backoffs.get(i))
            for i in range(len(histories))
        ]
        return cls(order, states)


def _check_label(label: str, inv: SubwordInventory) -> None:
    # Every word label must be spellable by the inventory
    if label not in MARKERS:
        segment_word(label, inv)


def build_fst(table: BoostTable, inv: SubwordInventory) -> BoostingFst:
    """Compile a boost table into a backoff automaton.

    States are all proper prefixes of boosted n-grams. An arc from history h
    on word w carries the score of the longest boosted suffix of h·w, so a
    context arc weighs 0 unless a shorter boosted n-gram ends there; it leads
    to the longest suffix of h·w that is a state.

    Raises:
        SegmentationError: If a boosted word cannot be segmented.
    """
    entries = table.entries
    histories: set[NGram] = {()}
    for ngram in entries:
        for j in range(len(ngram)):
            histories.add(ngram[:j])

    ordered = sorted(histories, key=lambda h: (len(h), h))
    index = {h: i for i, h in enumerate(ordered)}

    def suffix_state(words: NGram) -> int:
        for start in range(len(words) + 1):
            if words[start:] in index:
                return index[words[start:]]
        raise AssertionError("unreachable: root state always present")

    def boost(words: NGram) -> float:
        for start in range(len(words)):
            score = entries.get(words[start:])
            if score is not None:
                return score
        return 0.0

    children: dict[NGram, set[str]] = defaultdict(set)
    for ngram in histories.union(entries):
        if ngram and ngram[-1] != BOS:
            children[ngram[:-1]].add(ngram[-1])

    states: list[FstState] = []
    for history in ordered:
        arcs = []
        for word in sorted(children.get(history, ())):
            extended = history + (word,)
            _check_label(word, inv)
            arcs.append(Arc(word, boost(extended), suffix_state(extended)))
        backoff = suffix_state(history[1:]) if history else None
        states.append(FstState(history, tuple(arcs), backoff))

    fst = BoostingFst(table.order, states)
    logger.info(f"Built boosting FST: {len(fst)} states, {fst.num_arcs()} arcs")
    return fst
