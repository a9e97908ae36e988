"""Stage orchestration: models, boosting, decoding, rescoring and reports."""

import json
import zlib
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boost_fst import BoostingFst, build_fst
from .config import ConfigError, PipelineConfig
from .corpus import (
    Corpus,
    SubwordInventory,
    build_subword_inventory,
    load_corpus,
    to_subword_corpus,
)
from .decoder import (
    NBestList,
    PosteriorSequence,
    SurrogateChannel,
    decode_all,
    write_nbest,
)
from .evaluation import (
    SetScore,
    SweepReport,
    Testset,
    compare_systems,
    load_testset,
    score_testset,
    sweep,
)
from .llr_boost import BoostTable, llr_scores
from .logger import logger
from .ngram_lm import (
    InterpolationSpec,
    LanguageModel,
    MixtureModel,
    NGram,
    NGramModel,
    count_ngrams,
    estimate_katz,
    perplexity,
    prune_model,
    write_arpa,
)
from .rescore import RescoreConfig, rescore_all

SYSTEMS = ("baseline", "first_pass", "second_pass", "first_and_second_pass")


def utterance_seed(seed: int, utt_id: str) -> int:
    """Per-utterance seed derived from the run seed and the utterance id."""
    state = np.random.SeedSequence([seed, zlib.crc32(utt_id.encode("utf-8"))])
    return int(state.generate_state(1)[0])


class Pipeline:
    """Lazily built pipeline stages sharing one configuration.

    Every stage is computed on first use and cached; callers may assign a
    stage attribute (for example ``general_lm``) to inject a model read
    from disk.
    """

    def __init__(self, config: PipelineConfig):
        """Initialize pipeline.

        Args:
            config: Validated configuration.
        """
        self.config = config
        self.out_dir = Path(config.out_dir)
        self._tables: dict[float, BoostTable] = {}
        self._fsts: dict[float, BoostingFst] = {}
        self._posteriors: dict[str, list[PosteriorSequence]] = {}
        self._decoded: dict[tuple[str, Optional[float], float], list[NBestList]] = {}

    # Corpora and models

    @cached_property
    def general_corpus(self) -> Corpus:
        if not self.config.general_corpus:
            raise ConfigError("general_corpus is not set")
        return load_corpus(self.config.general_corpus, lowercase=self.config.lowercase)

    @cached_property
    def ood_corpora(self) -> list[Corpus]:
        if not self.config.ood_corpora:
            raise ConfigError("ood_corpora is not set")
        return [
            load_corpus(p, lowercase=self.config.lowercase)
            for p in self.config.ood_corpora
        ]

    def train_lm(
        self, corpus: Corpus, name: str, order: Optional[int] = None
    ) -> NGramModel:
        """Count and estimate a Katz model, pruning when configured."""
        counts = count_ngrams(corpus, order or self.config.order)
        model = estimate_katz(
            counts,
            discount_cutoff=self.config.discount_cutoff,
            min_leftover=self.config.min_leftover,
            name=name,
        )
        if self.config.prune_min_count is not None:
            pruned = prune_model(model, min_count=self.config.prune_min_count)
            logger.info(
                f"{name}: perplexity {perplexity(model, corpus):.3f} unpruned, "
                f"{perplexity(pruned, corpus):.3f} pruned"
            )
            model = pruned
        else:
            logger.info(f"{name}: training perplexity {perplexity(model, corpus):.3f}")
        return model

    @cached_property
    def general_lm(self) -> NGramModel:
        return self.train_lm(self.general_corpus, "general")

    @cached_property
    def ood_models(self) -> list[NGramModel]:
        return [
            self.train_lm(corpus, Path(path).stem)
            for corpus, path in zip(self.ood_corpora, self.config.ood_corpora)
        ]

    @cached_property
    def ood_lm(self) -> LanguageModel:
        """OOD model; several OOD corpora are mixed with equal weights."""
        if len(self.ood_models) == 1:
            return self.ood_models[0]
        return MixtureModel(InterpolationSpec.equal_weights(self.ood_models), "ood")

    @cached_property
    def rescoring_lm(self) -> MixtureModel:
        """General model adapted to the OOD text by equal-weight mixing."""
        ood = self.ood_lm
        parts: tuple[tuple[NGramModel, float], ...]
        if isinstance(ood, MixtureModel):
            parts = tuple((model, w / 2) for model, w in ood.spec.components)
        elif isinstance(ood, NGramModel):
            parts = ((ood, 0.5),)
        else:
            raise TypeError(f"Cannot mix OOD model of type {type(ood).__name__}")
        spec = InterpolationSpec(((self.general_lm, 0.5), *parts))
        return MixtureModel(spec, name="rescore")

    @cached_property
    def inventory(self) -> SubwordInventory:
        corpus = self.general_corpus
        for ood in self.ood_corpora:
            corpus = corpus.merge(ood)
        return build_subword_inventory(
            corpus, self.config.subword_budget, self.config.max_unit_length
        )

    @cached_property
    def prior(self) -> NGramModel:
        """Subword-level model of general text feeding the surrogate channel."""
        subwords = to_subword_corpus(self.general_corpus, self.inventory)
        return self.train_lm(subwords, "subword-prior", order=self.config.prior_order)

    @cached_property
    def channel(self) -> SurrogateChannel:
        return SurrogateChannel(
            self.inventory,
            self.prior,
            beta=self.config.beta,
            epsilon=self.config.epsilon,
            jitter=self.config.jitter,
        )

    # Boosting

    @cached_property
    def llr_scores(self) -> dict[NGram, float]:
        return llr_scores(self.general_lm, self.ood_lm)

    def boost_table(self, threshold: Optional[float] = None) -> BoostTable:
        threshold = self.config.threshold if threshold is None else threshold
        if threshold not in self._tables:
            self._tables[threshold] = BoostTable.from_scores(
                self.llr_scores,
                threshold,
                provenance=(self.general_lm.name, self.ood_lm.name),
            )
            logger.info(
                f"Boost table at T={threshold}: {len(self._tables[threshold])} "
                f"of {len(self.llr_scores)} n-grams"
            )
        return self._tables[threshold]

    def fst(self, threshold: Optional[float] = None) -> BoostingFst:
        threshold = self.config.threshold if threshold is None else threshold
        if threshold not in self._fsts:
            table = self.boost_table(threshold)
            self._fsts[threshold] = build_fst(table, self.inventory)
        return self._fsts[threshold]

    def use_fst(self, fst: BoostingFst, threshold: Optional[float] = None) -> None:
        """Register a prebuilt FST (for example one read from disk)."""
        threshold = self.config.threshold if threshold is None else threshold
        self._fsts[threshold] = fst

    # Testsets and decoding

    @cached_property
    def testsets(self) -> dict[str, Testset]:
        """OOD testsets followed by the control testset, keyed by file stem."""
        paths = [*self.config.ood_testsets, self.config.control_testset]
        if not self.config.ood_testsets or not self.config.control_testset:
            raise ConfigError("ood_testsets and control_testset must be set")
        names = [Path(p).stem for p in paths]
        if len(set(names)) != len(names):
            raise ConfigError(f"Testset file names must be distinct, got {names}")
        return {
            name: load_testset(path, lowercase=self.config.lowercase)
            for name, path in zip(names, paths)
        }

    @property
    def ood_names(self) -> list[str]:
        return list(self.testsets)[:-1]

    @property
    def control_name(self) -> str:
        return list(self.testsets)[-1]

    def posteriors(self, name: str) -> list[PosteriorSequence]:
        """Surrogate posteriors of a testset, one seeded stream per utterance."""
        if name not in self._posteriors:
            self._posteriors[name] = [
                self.channel.emit(
                    words, utterance_seed(self.config.seed, utt_id), utt_id
                )
                for utt_id, words in self.testsets[name]
            ]
        return self._posteriors[name]

    def decode(
        self,
        name: str,
        threshold: Optional[float] = None,
        lam: Optional[float] = None,
    ) -> list[NBestList]:
        """Decode one testset.

        Args:
            name: Testset name.
            threshold: Boost threshold of the fused FST; None decodes
                without fusion.
            lam: Fusion weight (default: configured λ).
        """
        lam = self.config.lambda_ if lam is None else lam
        key = (name, threshold, lam if threshold is not None else 0.0)
        if key not in self._decoded:
            self._decoded[key] = decode_all(
                self.posteriors(name),
                self.inventory,
                beam=self.config.beam,
                fst=self.fst(threshold) if threshold is not None else None,
                lam=lam,
                nbest=self.config.nbest,
                jobs=self.config.jobs,
            )
        return self._decoded[key]

    def rescore(self, lists: Sequence[NBestList]) -> list[NBestList]:
        cfg = RescoreConfig(
            scorer=self.rescoring_lm,
            alpha=self.config.alpha,
            word_reward=self.config.word_reward,
        )
        return rescore_all(lists, cfg)

    # Reports

    def system_outputs(self) -> dict[str, dict[str, list[NBestList]]]:
        """N-best lists of the four compared systems for every testset."""
        systems: dict[str, dict[str, list[NBestList]]] = {s: {} for s in SYSTEMS}
        for name in self.testsets:
            baseline = self.decode(name)
            boosted = self.decode(name, threshold=self.config.threshold)
            systems["baseline"][name] = baseline
            systems["first_pass"][name] = boosted
            systems["second_pass"][name] = self.rescore(baseline)
            systems["first_and_second_pass"][name] = self.rescore(boosted)
        return systems

    def evaluate(self) -> list[dict[str, object]]:
        """Compare the four systems and write n-best lists plus the report."""
        systems = self.system_outputs()
        for system, by_testset in systems.items():
            for name, lists in by_testset.items():
                write_nbest(self.out_dir / "nbest" / f"{name}.{system}.jsonl", lists)
        rows = compare_systems(self.testsets, systems, baseline="baseline")
        path = self.out_dir / "report" / "systems.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(rows, f, indent=2)
            f.write("\n")
        for row in rows:
            logger.info(
                f"{row['testset']:<16} {row['system']:<22} WER {row['wer']:.4f} "
                f"WERR {row['werr']:+.2f}% oracle {row['oracle_wer']:.4f}"
            )
        return rows

    def sweep(
        self, grid: Optional[Sequence[tuple[float, float]]] = None
    ) -> SweepReport:
        """Sweep (T, λ) and write the CSV grid and JSON summary."""
        grid = list(grid) if grid is not None else self.config.grid
        baseline = {
            name: score_testset(items, self.decode(name))
            for name, items in self.testsets.items()
        }

        def run_point(threshold: float, lam: float) -> dict[str, SetScore]:
            return {
                name: score_testset(items, self.decode(name, threshold, lam))
                for name, items in self.testsets.items()
            }

        report = sweep(
            grid,
            self.ood_names,
            self.control_name,
            baseline,
            run_point,
            control_tolerance=self.config.control_tolerance,
        )
        report.write_csv(self.out_dir / "report" / "sweep.csv")
        report.write_summary(self.out_dir / "report" / "sweep_summary.json")
        return report

    def write_models(self) -> None:
        """Write every model, the inventory, the boost table and the FST."""
        write_arpa(self.general_lm, self.out_dir / "lm" / "general.arpa")
        if len(self.ood_models) == 1:
            write_arpa(self.ood_models[0], self.out_dir / "lm" / "ood.arpa")
        else:
            for model in self.ood_models:
                write_arpa(model, self.out_dir / "lm" / "ood" / f"{model.name}.arpa")
        write_arpa(self.prior, self.out_dir / "lm" / "prior.arpa")
        self.inventory.write(self.out_dir / "inventory.tsv")
        self.boost_table().write_tsv(self.out_dir / "boost.tsv")
        self.fst().write(self.out_dir / "boost.fst")

    def run(self) -> SweepReport:
        """Run all stages."""
        logger.info(f"Running pipeline into {self.out_dir}")
        self.write_models()
        self.evaluate()
        return self.sweep()
