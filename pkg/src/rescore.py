"""Second-pass n-best rescoring."""

from dataclasses import dataclass, replace
from typing import Iterable, Protocol, Sequence

from .decoder import Hypothesis, NBestList
from .logger import logger


class SentenceScorer(Protocol):
    """Anything that assigns a log-probability to a word sequence."""

    def sentence_log_prob(self, sentence: Sequence[str]) -> float: ...


@dataclass(frozen=True)
class RescoreConfig:
    """Weights of the second-pass combination."""

    scorer: SentenceScorer
    alpha: float = 0.0
    word_reward: float = 0.0

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


def rescore_term(hyp: Hypothesis, cfg: RescoreConfig) -> float:
    """Second-pass addition α·log P_RLM(words) + word_reward·|words|."""
    lm_term = cfg.alpha * cfg.scorer.sentence_log_prob(hyp.words)
    return lm_term + cfg.word_reward * len(hyp.words)


def rescore_nbest(nbest: NBestList, cfg: RescoreConfig) -> NBestList:
    """Re-rank hypotheses by first-pass total plus the second-pass term.

    Raises:
        ValueError: If the list is empty.
    """
    if not nbest.hypotheses:
        raise ValueError(f"Cannot rescore an empty n-best list ({nbest.utt_id!r})")
    rescored = [
        replace(hyp, rescore_total=hyp.total + rescore_term(hyp, cfg)) for hyp in nbest
    ]
    rescored.sort(key=lambda h: (-(h.rescore_total or 0.0), h.tokens))
    return NBestList(nbest.utt_id, tuple(rescored))


def rescore_all(lists: Iterable[NBestList], cfg: RescoreConfig) -> list[NBestList]:
    """Rescore many lists, keeping their order."""
    results = [rescore_nbest(nbest, cfg) for nbest in lists]
    logger.info(
        f"Rescored {len(results)} n-best lists (alpha={cfg.alpha}, "
        f"word_reward={cfg.word_reward})"
    )
    return results
