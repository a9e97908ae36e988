"""WER, Oracle WER and WERR metrics and the threshold/weight sweep."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .decoder import NBestList
from .logger import logger

Testset = list[tuple[str, tuple[str, ...]]]


@dataclass(frozen=True)
class WerBreakdown:
    """Error counts of one or more aligned utterances."""

    substitutions: int
    deletions: int
    insertions: int
    reference_words: int

    def __post_init__(self) -> None:
        if self.reference_words <= 0:
            raise ValueError("WER needs at least one reference word")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_words + other.reference_words,
        )


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerBreakdown:
    """Levenshtein alignment with unit costs.

    Among equal-cost alignments the backtrace prefers substitution, then
    insertion, then deletion.

    Raises:
        ValueError: If the reference is empty.
    """
    if not reference:
        raise ValueError("Reference must not be empty")
    n, m = len(reference), len(hypothesis)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if reference[i - 1] == hypothesis[j - 1] else 1
            dp[i][j] = min(dp[i - 1][j - 1] + cost, dp[i][j - 1] + 1, dp[i - 1][j] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if reference[i - 1] == hypothesis[j - 1] else 1
            if dp[i][j] == dp[i - 1][j - 1] + cost:
                subs += cost
                i, j = i - 1, j - 1
                continue
        if j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerBreakdown(subs, dels, ins, n)


def oracle_wer(reference: Sequence[str], nbest: NBestList) -> WerBreakdown:
    """Breakdown of the lowest-error hypothesis (earliest rank on ties).

    Raises:
        ValueError: If the list is empty.
    """
    if not nbest.hypotheses:
        raise ValueError(f"Empty n-best list for {nbest.utt_id!r}")
    scored = [wer(reference, hyp.words) for hyp in nbest]
    return min(scored, key=lambda b: b.errors)


def werr(baseline_wer: float, new_wer: float) -> float:
    """Relative WER reduction in percent; positive means improvement.

    Raises:
        ValueError: If the baseline WER is zero.
    """
    if baseline_wer <= 0.0:
        raise ValueError("WERR is undefined for a zero baseline WER")
    return 100.0 * (baseline_wer - new_wer) / baseline_wer


def _safe_werr(baseline_wer: float, new_wer: float) -> float:
    if baseline_wer > 0.0:
        return werr(baseline_wer, new_wer)
    return 0.0 if new_wer == 0.0 else -math.inf


def load_testset(path: str | Path, lowercase: bool = True) -> Testset:
    """Read ``utterance_id<TAB>reference transcript`` lines.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ValueError: If a line is malformed or an id repeats.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Testset not found: {path}")
    items: Testset = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt_id, sep, text = line.partition("\t")
            if lowercase:
                text = text.lower()
            words = tuple(text.split())
            if not sep or not utt_id or not words:
                raise ValueError(f"{path}:{line_no}: expected 'id<TAB>transcript'")
            if utt_id in seen:
                raise ValueError(f"{path}:{line_no}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            items.append((utt_id, words))
    logger.info(f"Loaded testset {path}: {len(items)} utterances")
    return items


def write_testset(path: str | Path, items: Testset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt_id, words in items:
            f.write(f"{utt_id}\t{' '.join(words)}\n")


@dataclass(frozen=True)
class SetScore:
    """Pooled 1-best and Oracle breakdowns of one testset."""

    one_best: WerBreakdown
    oracle: WerBreakdown

    def __add__(self, other: "SetScore") -> "SetScore":
        return SetScore(self.one_best + other.one_best, self.oracle + other.oracle)


def score_testset(testset: Testset, lists: Sequence[NBestList]) -> SetScore:
    """Pool 1-best and Oracle errors over a testset.

    Raises:
        ValueError: If an utterance has no n-best list.
    """
    by_id = {nbest.utt_id: nbest for nbest in lists}
    one_best: Optional[WerBreakdown] = None
    oracle: Optional[WerBreakdown] = None
    for utt_id, reference in testset:
        nbest = by_id.get(utt_id)
        if nbest is None:
            raise ValueError(f"No hypotheses for utterance {utt_id!r}")
        b = wer(reference, nbest.best.words)
        o = oracle_wer(reference, nbest)
        one_best = b if one_best is None else one_best + b
        oracle = o if oracle is None else oracle + o
    if one_best is None or oracle is None:
        raise ValueError("Cannot score an empty testset")
    return SetScore(one_best, oracle)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    lam: float
    testset: str
    baseline_wer: float
    new_wer: float
    werr: float
    baseline_oracle_wer: float
    new_oracle_wer: float
    oracle_werr: float


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    lam: float
    ood_werr: float
    ood_oracle_werr: float
    control_werr: float
    satisfies_control: bool


@dataclass
class SweepReport:
    """Full grid plus the selected operating point."""

    rows: list[SweepRow] = field(default_factory=list)
    points: list[SweepPoint] = field(default_factory=list)
    selected: Optional[SweepPoint] = None
    control_tolerance: float = 0.5

    @property
    def has_selection(self) -> bool:
        return self.selected is not None

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = list(SweepRow.__dataclass_fields__)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["lambda" if n == "lam" else n for n in names])
            for row in self.rows:
                values = [getattr(row, n) for n in names]
                writer.writerow(
                    [repr(v) if isinstance(v, float) else v for v in values]
                )

    def summary(self) -> dict[str, object]:
        return {
            "control_tolerance": self.control_tolerance,
            "constraint_satisfied": self.has_selection,
            "selected": asdict(self.selected) if self.selected else None,
            "points": [asdict(p) for p in self.points],
        }

    def write_summary(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.summary(), f, indent=2)
            f.write("\n")


PointRunner = Callable[[float, float], Mapping[str, SetScore]]


def select_operating_point(
    points: Sequence[SweepPoint],
) -> Optional[SweepPoint]:
    """Best pooled OOD WERR among points meeting the control constraint.

    Ties keep the earlier grid point.
    """
    best: Optional[SweepPoint] = None
    for point in points:
        if point.satisfies_control and (best is None or point.ood_werr > best.ood_werr):
            best = point
    return best


def sweep(
    grid: Sequence[tuple[float, float]],
    ood_testsets: Sequence[str],
    control_testset: str,
    baseline: Mapping[str, SetScore],
    run_point: PointRunner,
    control_tolerance: float = 0.5,
) -> SweepReport:
    """Evaluate every (T, λ) grid point and select the operating point.

    Args:
        grid: (threshold, fusion weight) pairs in evaluation order.
        ood_testsets: Names of the out-of-domain testsets.
        control_testset: Name of the control testset.
        baseline: Baseline scores per testset name.
        run_point: Decodes all testsets at (T, λ) and scores them.
        control_tolerance: Largest allowed control degradation, % relative.

    Returns:
        SweepReport with every row; ``selected`` is None when no point
        keeps control degradation below the tolerance.
    """
    if not grid or not ood_testsets:
        raise ValueError("Sweep needs a non-empty grid and at least one OOD testset")

    names = [*ood_testsets, control_testset]
    report = SweepReport(control_tolerance=control_tolerance)
    for threshold, lam in grid:
        scores = run_point(threshold, lam)
        for name in names:
            base, new = baseline[name], scores[name]
            report.rows.append(
                SweepRow(
                    threshold,
                    lam,
                    name,
                    base.one_best.wer,
                    new.one_best.wer,
                    _safe_werr(base.one_best.wer, new.one_best.wer),
                    base.oracle.wer,
                    new.oracle.wer,
                    _safe_werr(base.oracle.wer, new.oracle.wer),
                )
            )

        pooled_base = _pool(baseline, ood_testsets)
        pooled_new = _pool(scores, ood_testsets)
        control_werr = _safe_werr(
            baseline[control_testset].one_best.wer, scores[control_testset].one_best.wer
        )
        point = SweepPoint(
            threshold,
            lam,
            _safe_werr(pooled_base.one_best.wer, pooled_new.one_best.wer),
            _safe_werr(pooled_base.oracle.wer, pooled_new.oracle.wer),
            control_werr,
            -control_werr < control_tolerance,
        )
        report.points.append(point)
        logger.info(
            f"Sweep T={threshold} lambda={lam}: OOD WERR {point.ood_werr:.2f}%, "
            f"control WERR {point.control_werr:.2f}%"
        )

    report.selected = select_operating_point(report.points)
    if report.selected is None:
        logger.warning("No grid point satisfies the control constraint")
    else:
        logger.info(
            f"Selected operating point T={report.selected.threshold} "
            f"lambda={report.selected.lam}"
        )
    return report


def _pool(scores: Mapping[str, SetScore], names: Sequence[str]) -> SetScore:
    pooled = scores[names[0]]
    for name in names[1:]:
        pooled = pooled + scores[name]
    return pooled


def compare_systems(
    testsets: Mapping[str, Testset],
    systems: Mapping[str, Mapping[str, Sequence[NBestList]]],
    baseline: str,
) -> list[dict[str, object]]:
    """Per-testset WER, Oracle WER and WERR of several systems against one.

    Args:
        testsets: Testset name to items.
        systems: System name to (testset name to n-best lists).
        baseline: Name of the reference system.
    """
    rows: list[dict[str, object]] = []
    for name, testset in testsets.items():
        base = score_testset(testset, systems[baseline][name])
        for system, lists in systems.items():
            score = score_testset(testset, lists[name])
            rows.append(
                {
                    "testset": name,
                    "system": system,
                    "wer": score.one_best.wer,
                    "werr": _safe_werr(base.one_best.wer, score.one_best.wer),
                    "oracle_wer": score.oracle.wer,
                    "oracle_werr": _safe_werr(base.oracle.wer, score.oracle.wer),
                }
            )
    return rows
