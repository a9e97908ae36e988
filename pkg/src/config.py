"""Configuration management module."""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .ngram_lm import MAX_ORDER


class ConfigError(ValueError):
    """Raised when a configuration file or override is invalid."""


# YAML keys that differ from the field names
_KEY_ALIASES = {"lambda": "lambda_"}

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class PipelineConfig:
    """All pipeline parameters as one flat mapping."""

    # Data
    general_corpus: str = ""
    ood_corpora: list[str] = field(default_factory=list)
    ood_testsets: list[str] = field(default_factory=list)
    control_testset: str = ""
    lowercase: bool = True

    # Language models
    order: int = 4
    discount_cutoff: int = 5
    min_leftover: float = 1e-6
    prune_min_count: Optional[int] = None

    # Subwords and surrogate channel
    subword_budget: int = 256
    max_unit_length: int = 8
    prior_order: int = 3
    beta: float = 0.85
    epsilon: float = 1e-4
    jitter: float = 0.05

    # Boosting, decoding and rescoring
    threshold: float = 3.0
    lambda_: float = 0.25
    alpha: float = 0.0
    word_reward: float = 0.0
    beam: int = 8
    nbest: int = 8

    # Sweep
    thresholds: list[float] = field(default_factory=lambda: [2.0, 2.5, 3.0])
    lambdas: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75])
    control_tolerance: float = 0.5

    # Run
    seed: int = 0
    jobs: int = 1
    out_dir: str = "out"
    log_level: str = "INFO"
    log_file: Optional[str] = None

    @classmethod
    def from_yaml(cls, path: str | Path) -> "PipelineConfig":
        """Load configuration from YAML file.

        Args:
            path: Path to YAML configuration file.

        Returns:
            PipelineConfig instance.

        Raises:
            FileNotFoundError: If config file doesn't exist.
            ConfigError: If config file is invalid.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {path}")

        with open(path, "r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError(f"Configuration file is not valid YAML: {e}") from e

        if not data:
            raise ConfigError("Configuration file is empty")
        if not isinstance(data, dict):
            raise ConfigError("Configuration file must be a mapping")

        return cls._from_dict(data)

    @classmethod
    def _from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        """Create PipelineConfig from dictionary."""
        return cls().with_overrides(data)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        """Return a copy with the given keys replaced (None values are skipped).

        Raises:
            ConfigError: If a key is unknown or a value is out of range.
        """
        names = {f.name for f in dataclasses.fields(self)}
        changes: dict[str, Any] = {}
        for key, value in overrides.items():
            name = _KEY_ALIASES.get(key, key)
            if name not in names:
                raise ConfigError(f"Unknown configuration key: {key}")
            if value is not None:
                changes[name] = value
        config = dataclasses.replace(self, **changes)
        try:
            config.validate()
        except (TypeError, AttributeError) as e:
            raise ConfigError(f"Invalid value type in configuration: {e}") from e
        return config

    def validate(self) -> None:
        """Check every parameter against the range its consumer accepts.

        Raises:
            ConfigError: On the first violation.
        """
        if isinstance(self.ood_corpora, str):
            self.ood_corpora = [self.ood_corpora]
        if isinstance(self.ood_testsets, str):
            self.ood_testsets = [self.ood_testsets]

        checks: list[tuple[bool, str]] = [
            (1 <= self.order <= MAX_ORDER, f"order must be in [1, {MAX_ORDER}]"),
            (
                1 <= self.prior_order <= MAX_ORDER,
                f"prior_order must be in [1, {MAX_ORDER}]",
            ),
            (self.discount_cutoff >= 1, "discount_cutoff must be at least 1"),
            (0.0 < self.min_leftover < 1.0, "min_leftover must be in (0, 1)"),
            (
                self.prune_min_count is None or self.prune_min_count >= 1,
                "prune_min_count must be at least 1",
            ),
            (self.subword_budget >= 2, "subword_budget must be at least 2"),
            (self.max_unit_length >= 1, "max_unit_length must be at least 1"),
            (0.0 <= self.beta < 1.0, "beta must be in [0, 1)"),
            (self.epsilon >= 0.0, "epsilon must be nonnegative"),
            (self.jitter >= 0.0, "jitter must be nonnegative"),
            (not math.isnan(self.threshold), "threshold must be a number"),
            (self.lambda_ >= 0.0, "lambda must be nonnegative"),
            (self.alpha >= 0.0, "alpha must be nonnegative"),
            (math.isfinite(self.word_reward), "word_reward must be finite"),
            (self.beam >= 1, "beam must be at least 1"),
            (1 <= self.nbest <= self.beam, "nbest must be in [1, beam]"),
            (bool(self.thresholds), "thresholds must not be empty"),
            (bool(self.lambdas), "lambdas must not be empty"),
            (all(lam >= 0.0 for lam in self.lambdas), "lambdas must be nonnegative"),
            (self.control_tolerance >= 0.0, "control_tolerance must be nonnegative"),
            (self.jobs >= 1, "jobs must be at least 1"),
            (
                self.log_level.upper() in LOG_LEVELS,
                f"unknown log_level {self.log_level!r}",
            ),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def grid(self) -> list[tuple[float, float]]:
        """Sweep grid in threshold-major order."""
        return [(float(t), float(lam)) for t in self.thresholds for lam in self.lambdas]
