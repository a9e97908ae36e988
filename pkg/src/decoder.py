"""Step-synchronous beam search with shallow fusion of a boosting FST.

A seeded surrogate channel stands in for the acoustic model: it emits one
subword posterior per reference unit, mixing the true unit with a
subword-level prior that plays the role of the model's internal LM.
"""

import bisect
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

import numpy as np

from .boost_fst import BoostingFst, FstCursor
from .corpus import BOS, SubwordInventory, segment_sentence
from .logger import logger
from .ngram_lm import NGramModel

MAX_BETA = 1.0 - 1e-9


@dataclass(frozen=True, eq=False)
class PosteriorSequence:
    """Per-step natural-log distributions over the subword inventory."""

    utt_id: str
    log_probs: np.ndarray
    reference: tuple[str, ...] = ()
    params: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.log_probs.ndim != 2:
            raise ValueError("Posteriors must be a (steps, units) matrix")
        with np.errstate(under="ignore"):
            sums = np.exp(self.log_probs).sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= 1e-9):
            raise ValueError(f"Posterior steps of {self.utt_id!r} are not normalized")

    @property
    def num_steps(self) -> int:
        return int(self.log_probs.shape[0])


class SurrogateChannel:
    """Seeded stand-in for an end-to-end model's subword posteriors.

    At step i with true unit t_i the posterior is proportional to
    (1 - β_i)·[v = t_i] + β_i·p_prior(v | preceding true units) + ε, where
    β_i is β perturbed by a bounded, seeded jitter.
    """

    def __init__(
        self,
        inv: SubwordInventory,
        prior: NGramModel,
        beta: float,
        epsilon: float = 0.0,
        jitter: float = 0.0,
    ):
        """Initialize channel.

        Args:
            inv: Subword inventory shared with the decoder.
            prior: Model over subword tokens trained on general text.
            beta: Prior mixing weight in [0, 1).
            epsilon: Probability floor added to every unit.
            jitter: Half-width of the uniform perturbation of β per step.
        """
        if not 0.0 <= beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {beta}")
        if epsilon < 0.0 or jitter < 0.0:
            raise ValueError("epsilon and jitter must be nonnegative")
        self.inv = inv
        self.prior = prior
        self.beta = beta
        self.epsilon = epsilon
        self.jitter = jitter
        self._tokens = [unit.token for unit in inv.units]
        self._cache: dict[tuple[str, ...], np.ndarray] = {}

    def prior_distribution(self, history: Sequence[str]) -> np.ndarray:
        """Prior over units after ``history``, renormalized to the inventory."""
        key = tuple(history[-(self.prior.order - 1) :]) if self.prior.order > 1 else ()
        dist = self._cache.get(key)
        if dist is None:
            dist = np.array([self.prior.prob(token, key) for token in self._tokens])
            dist /= dist.sum()
            self._cache[key] = dist
        return dist

    def emit(
        self, reference: Sequence[str], seed: int, utt_id: str = ""
    ) -> PosteriorSequence:
        """Emit posteriors for a reference transcript.

        Raises:
            SegmentationError: If the reference is not segmentable.
            ValueError: If the reference is empty.
        """
        truth = segment_sentence(reference, self.inv)
        if not truth:
            raise ValueError(f"Empty reference for utterance {utt_id!r}")

        rng = np.random.default_rng(seed)
        size = len(self.inv)
        history: list[str] = [BOS]
        rows = np.empty((len(truth), size))
        for i, unit_id in enumerate(truth):
            shift = rng.uniform(-self.jitter, self.jitter)
            beta_i = float(np.clip(self.beta + shift, 0.0, MAX_BETA))
            q = beta_i * self.prior_distribution(history) + self.epsilon
            q[unit_id] += 1.0 - beta_i
            q /= q.sum()
            with np.errstate(divide="ignore"):
                rows[i] = np.log(q)
            history.append(self._tokens[unit_id])

        params = {"beta": self.beta, "epsilon": self.epsilon, "jitter": self.jitter}
        return PosteriorSequence(utt_id, rows, tuple(reference), params, seed)


def surrogate_emit(
    reference: Sequence[str],
    inv: SubwordInventory,
    prior: NGramModel,
    beta: float,
    epsilon: float,
    seed: int,
    jitter: float = 0.0,
    utt_id: str = "",
) -> PosteriorSequence:
    """Emit surrogate posteriors for one reference (see SurrogateChannel)."""
    channel = SurrogateChannel(inv, prior, beta, epsilon, jitter)
    return channel.emit(reference, seed, utt_id)


@dataclass(frozen=True)
class Hypothesis:
    """Beam-search candidate ranked by total = model_score + λ·fusion_score."""

    tokens: tuple[int, ...]
    model_score: float
    fusion_score: float
    total: float
    words: tuple[str, ...] = ()
    pending: str = ""
    cursor: Optional[FstCursor] = field(default=None, compare=False)
    rescore_total: Optional[float] = None

    @property
    def rank_key(self) -> tuple[float, tuple[int, ...]]:
        return -self.total, self.tokens

    @property
    def committed(self) -> float:
        """Fusion score without the provisional lookahead weight."""
        if self.cursor is None:
            return self.fusion_score
        return self.fusion_score - self.cursor.provisional

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "words": list(self.words),
            "tokens": list(self.tokens),
            "model_score": self.model_score,
            "fusion_score": self.fusion_score,
            "total": self.total,
        }
        if self.rescore_total is not None:
            data["rescore_total"] = self.rescore_total
        return data

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Hypothesis":
        return cls(
            tokens=tuple(data["tokens"]),
            model_score=float(data["model_score"]),
            fusion_score=float(data["fusion_score"]),
            total=float(data["total"]),
            words=tuple(data["words"]),
            rescore_total=data.get("rescore_total"),
        )


@dataclass(frozen=True)
class NBestList:
    """Hypotheses of one utterance, best first."""

    utt_id: str
    hypotheses: tuple[Hypothesis, ...]

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self) -> Iterator[Hypothesis]:
        return iter(self.hypotheses)

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def to_json(self) -> dict[str, Any]:
        hypotheses = [h.to_json() for h in self.hypotheses]
        return {"utt_id": self.utt_id, "hypotheses": hypotheses}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "NBestList":
        hypotheses = tuple(Hypothesis.from_json(h) for h in data["hypotheses"])
        return cls(data["utt_id"], hypotheses)


def write_nbest(path: str | Path, lists: Iterable[NBestList]) -> None:
    """Write one JSON object per utterance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for nbest in lists:
            f.write(json.dumps(nbest.to_json()) + "\n")


def read_nbest(path: str | Path) -> list[NBestList]:
    """Read lists written by :func:`write_nbest`.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ValueError: If a line is not a valid n-best object.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"N-best file not found: {path}")
    lists = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                lists.append(NBestList.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{line_no}: invalid n-best line ({e})") from e
    return lists


def beam_search(
    post: PosteriorSequence,
    inv: SubwordInventory,
    beam: int,
    fst: Optional[BoostingFst] = None,
    lam: float = 0.0,
    nbest: int = 1,
) -> NBestList:
    """Decode posteriors with optional shallow fusion.

    Every step expands each hypothesis by every unit, adds the step
    log-probability to the model score and the FST delta to the fusion
    score, and keeps the ``beam`` best totals (ties: smaller token sequence
    first). Expansions are visited in order of an upper bound on their
    total (see :meth:`BoostingFst.unit_gains`), and the visit stops once the
    bound falls below the current beam-th total, so the kept set equals that
    of full expansion. After the last step pending words are flushed and
    ``</s>`` is consumed.

    Args:
        post: Posterior sequence.
        inv: Inventory the posteriors are over.
        beam: Beam width (≥ 1).
        fst: Boosting FST, or None for plain decoding.
        lam: Fusion weight λ (≥ 0).
        nbest: Number of hypotheses returned (1..beam).

    Returns:
        NBestList sorted best first.
    """
    if post.num_steps == 0:
        raise ValueError(f"Empty posterior sequence for {post.utt_id!r}")
    if beam < 1 or not 1 <= nbest <= beam:
        raise ValueError(f"Need beam >= 1 and 1 <= nbest <= beam, got {beam}, {nbest}")
    if lam < 0.0:
        raise ValueError(f"Fusion weight must be nonnegative, got {lam}")
    if post.log_probs.shape[1] != len(inv):
        raise ValueError("Posterior width does not match the inventory size")

    units = inv.units
    size = len(units)
    no_gain = np.zeros(size)
    start_cursor = fst.start_cursor() if fst is not None else None
    hyps = [Hypothesis((), 0.0, 0.0, 0.0, cursor=start_cursor)]

    for step in post.log_probs:
        model = np.array([h.model_score for h in hyps])
        committed = np.array([h.committed for h in hyps])
        base = model[:, None] + step[None, :]
        if fst is not None and lam > 0.0:
            gains = np.stack([fst.unit_gains(h.pending, units) for h in hyps])
        else:
            gains = no_gain[None, :]
        bound = (base + lam * (committed[:, None] + gains)).ravel()
        base = base.ravel()

        kept: list[Hypothesis] = []
        keys: list[tuple[float, tuple[int, ...]]] = []
        for idx in np.argsort(-bound, kind="stable"):
            upper = bound[idx]
            if upper == -math.inf:
                break
            if len(kept) == beam and upper < kept[-1].total:
                break
            parent = hyps[idx // size]
            unit_id = int(idx % size)
            unit = units[unit_id]

            if fst is not None and parent.cursor is not None:
                cursor, delta = fst.cursor_extend(parent.cursor, unit)
                fusion = parent.fusion_score + delta
            else:
                cursor, fusion = None, 0.0
            words, pending = parent.words, parent.pending + unit.text
            if unit.final:
                words, pending = words + (pending,), ""

            model_score = float(base[idx])
            cand = Hypothesis(
                parent.tokens + (unit_id,),
                model_score,
                fusion,
                model_score + lam * fusion,
                words,
                pending,
                cursor,
            )
            pos = bisect.bisect_left(keys, cand.rank_key)
            if len(kept) == beam and pos == beam:
                continue
            keys.insert(pos, cand.rank_key)
            kept.insert(pos, cand)
            if len(kept) > beam:
                keys.pop()
                kept.pop()
        hyps = kept

    finished = [_finalize(h, fst, lam) for h in hyps]
    finished.sort(key=lambda h: h.rank_key)
    return NBestList(post.utt_id, tuple(finished[:nbest]))


def _finalize(hyp: Hypothesis, fst: Optional[BoostingFst], lam: float) -> Hypothesis:
    words = hyp.words
    fusion = hyp.fusion_score
    cursor = hyp.cursor
    if fst is not None and cursor is not None:
        cursor, delta, _ = fst.finalize(cursor)
        fusion += delta
    if hyp.pending:
        words = words + (hyp.pending,)
    return Hypothesis(
        hyp.tokens,
        hyp.model_score,
        fusion,
        hyp.model_score + lam * fusion,
        words,
        "",
        cursor,
    )


def decode_all(
    posteriors: Sequence[PosteriorSequence],
    inv: SubwordInventory,
    beam: int,
    fst: Optional[BoostingFst] = None,
    lam: float = 0.0,
    nbest: int = 1,
    jobs: int = 1,
) -> list[NBestList]:
    """Decode many utterances; results follow the input order.

    Args:
        jobs: Worker processes; 1 decodes in-process.
    """
    decode = partial(beam_search, inv=inv, beam=beam, fst=fst, lam=lam, nbest=nbest)
    if jobs <= 1 or len(posteriors) <= 1:
        results = [decode(post) for post in posteriors]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            chunksize = max(1, len(posteriors) // (4 * jobs))
            results = list(executor.map(decode, posteriors, chunksize=chunksize))
    logger.info(
        f"Decoded {len(results)} utterances (beam={beam}, lambda={lam}, "
        f"fusion={'on' if fst is not None else 'off'})"
    )
    return results
