"""Seeded synthetic adaptation suite.

Builds a general corpus of assistant-style commands, several out-of-domain
corpora whose templates carry rare made-up entity names, per-domain OOD
testsets and a control testset drawn from general traffic.

OOD templates reuse general carrier words and put the entity right after a
context the general text predicts strongly, so recognition errors gather at
the entities. General traffic messages a long tail of rare contacts, which
gives the general model a realistic share of unseen-word mass, and mentions
some entities a few times each, which spreads their boost scores.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .evaluation import Testset, write_testset
from .logger import logger

SLOTS: dict[str, tuple[str, ...]] = {
    "city": (
        "london",
        "paris",
        "boston",
        "seattle",
        "chicago",
        "denver",
        "tokyo",
        "berlin",
    ),
    "day": ("today", "tomorrow", "tonight", "monday", "friday", "sunday"),
    "number": ("one", "two", "three", "four", "five", "ten", "twenty", "thirty"),
    "genre": ("jazz", "rock", "pop", "classical", "country", "blues"),
    "onoff": ("on", "off"),
    "room": ("kitchen", "bedroom", "office", "garage", "bathroom"),
    "item": ("milk", "eggs", "bread", "butter", "apples", "coffee", "pizza", "cheese"),
    "person": ("mom", "dad", "john", "sarah", "alex", "emma"),
    "task": ("buy milk", "water the plants", "take out the trash", "pay the bills"),
    "dish": ("pancakes", "pasta", "soup", "salad", "pizza"),
    "place": ("airport", "station", "library", "park", "museum", "hospital"),
}

GENERAL_TEMPLATES: tuple[str, ...] = (
    "what is the weather in {city}",
    "what is the weather like {day}",
    "set a timer for {number} minutes",
    "set an alarm for {number} am",
    "play some {genre} music",
    "turn {onoff} the {room} lights",
    "tell me a joke",
    "what time is it",
    "add {item} to my shopping list",
    "call {person}",
    "send a message to {contact}",
    "remind me to {task} {day}",
    "how do i make {dish}",
    "what is the score of the game",
    "tune into the news",
    "play the next song",
    "turn the volume up",
    "turn the volume down",
    "navigate to the {place}",
    "how far is the {place}",
    "quiz me on my vocabulary",
)

DOMAIN_TEMPLATES: dict[str, tuple[str, ...]] = {
    "sports": (
        "tune into the {entity} game",
        "what is the score of the {entity} game",
        "play the {entity} game",
        "tune into the {entity} game {day}",
    ),
    "music": (
        "play some {entity} music",
        "play the next {entity} song",
        "play the {entity} song",
    ),
    "places": (
        "navigate to {entity}",
        "how far is {entity}",
        "what is the weather in {entity}",
        "navigate to {entity} station",
    ),
}

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"

# General-corpus mentions of each domain's entities, cycled over the entities
MENTION_TIERS: tuple[int, ...] = (0, 0, 0, 0, 0, 0, 1, 2, 4, 8, 16, 32)
CONTACT_POOL = 4000


@dataclass
class SyntheticSuite:
    """Generated corpora and testsets."""

    general: Corpus
    domains: dict[str, Corpus]
    entities: dict[str, tuple[str, ...]]
    testsets: dict[str, Testset] = field(default_factory=dict)
    control: Testset = field(default_factory=list)

    def write(self, out_dir: str | Path) -> dict[str, object]:
        """Write corpora as text and testsets as TSV.

        Returns:
            Mapping in the shape of the configuration keys general_corpus,
            ood_corpora, ood_testsets and control_testset.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        general_path = out / "general.txt"
        _write_corpus(general_path, self.general)
        ood_paths, test_paths = [], []
        for name, corpus in self.domains.items():
            path = out / f"ood_{name}.txt"
            _write_corpus(path, corpus)
            ood_paths.append(str(path))
            test_path = out / f"test_{name}.tsv"
            write_testset(test_path, self.testsets[name])
            test_paths.append(str(test_path))
        control_path = out / "test_control.tsv"
        write_testset(control_path, self.control)

        logger.info(f"Wrote synthetic suite to {out}")
        return {
            "general_corpus": str(general_path),
            "ood_corpora": ood_paths,
            "ood_testsets": test_paths,
            "control_testset": str(control_path),
        }


def _write_corpus(path: Path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sentence in corpus:
            f.write(" ".join(sentence) + "\n")


def _pick(options: Sequence[str], rng: np.random.Generator) -> str:
    return options[rng.integers(len(options))]


def _fill(
    template: str,
    rng: np.random.Generator,
    pools: dict[str, Sequence[str]],
) -> str:
    values = {name: _pick(options, rng) for name, options in SLOTS.items()}
    values.update({name: _pick(options, rng) for name, options in pools.items()})
    return template.format(**values)


def _sample(
    templates: Sequence[str],
    size: int,
    rng: np.random.Generator,
    pools: dict[str, Sequence[str]],
) -> list[str]:
    return [_fill(_pick(templates, rng), rng, pools) for _ in range(size)]


def _make_names(
    count: int,
    rng: np.random.Generator,
    alphabet: set[str],
    taken: set[str],
) -> tuple[str, ...]:
    consonants = [c for c in CONSONANTS if c in alphabet]
    vowels = [v for v in VOWELS if v in alphabet]
    names: list[str] = []
    while len(names) < count:
        syllables = int(rng.integers(2, 4))
        name = "".join(
            _pick(consonants, rng) + _pick(vowels, rng) for _ in range(syllables)
        )
        if rng.random() < 0.5:
            name += _pick(consonants, rng)
        if name not in taken:
            taken.add(name)
            names.append(name)
    return tuple(names)


def generate_suite(
    seed: int = 0,
    general_size: int = 5000,
    domain_size: int = 500,
    testset_size: int = 100,
    control_size: int = 200,
    entities_per_domain: int = 12,
    domains: Sequence[str] = tuple(DOMAIN_TEMPLATES),
    mentions: Sequence[int] = MENTION_TIERS,
) -> SyntheticSuite:
    """Generate a seeded suite.

    Each part draws from its own generator stream so changing one size
    leaves the other parts unchanged. The general corpus holds
    ``general_size`` template sentences followed by the entity mentions.

    Args:
        seed: Base seed.
        general_size: Sentences in the general corpus.
        domain_size: Sentences per OOD corpus.
        testset_size: Utterances per OOD testset.
        control_size: Utterances in the control testset.
        entities_per_domain: Rare names injected per domain.
        domains: Domain names, each a key of DOMAIN_TEMPLATES.
        mentions: Times the j-th entity of a domain is mentioned in general
            text, cycled over the entities; empty for no mentions.

    Returns:
        SyntheticSuite instance.
    """
    unknown = [name for name in domains if name not in DOMAIN_TEMPLATES]
    if unknown:
        raise ValueError(f"Unknown synthetic domains: {unknown}")
    sizes = (general_size, domain_size, testset_size, control_size, entities_per_domain)
    if min(sizes) < 1:
        raise ValueError("Suite sizes must be positive")
    if any(count < 0 for count in mentions):
        raise ValueError("Mention counts must be nonnegative")

    letters = set(CONSONANTS + VOWELS)
    contacts = _make_names(
        CONTACT_POOL, np.random.default_rng([seed, 0, 1]), letters, set()
    )
    general_pools: dict[str, Sequence[str]] = {"contact": contacts}
    general_lines = _sample(
        GENERAL_TEMPLATES, general_size, np.random.default_rng([seed, 0]), general_pools
    )
    templated = Corpus.from_lines(general_lines)
    taken = set(templated.vocabulary()) | set(contacts)
    alphabet = set(templated.alphabet())

    suite = SyntheticSuite(general=templated, domains={}, entities={})
    mention_lines: list[str] = []
    for k, name in enumerate(domains, start=1):
        templates = DOMAIN_TEMPLATES[name]
        entities = _make_names(
            entities_per_domain, np.random.default_rng([seed, k, 0]), alphabet, taken
        )
        suite.entities[name] = entities
        lines = _sample(
            templates,
            domain_size,
            np.random.default_rng([seed, k, 1]),
            {"entity": entities},
        )
        suite.domains[name] = Corpus.from_lines(lines, source=f"synthetic:{name}")
        test_lines = _sample(
            templates,
            testset_size,
            np.random.default_rng([seed, k, 2]),
            {"entity": entities},
        )
        suite.testsets[name] = [
            (f"{name}-{i:04d}", tuple(line.split()))
            for i, line in enumerate(test_lines)
        ]
        if mentions:
            rng = np.random.default_rng([seed, k, 3])
            for j, entity in enumerate(entities):
                count = mentions[j % len(mentions)]
                mention_lines.extend(
                    _sample(templates, count, rng, {"entity": (entity,)})
                )

    suite.general = Corpus.from_lines(
        general_lines + mention_lines, source="synthetic:general"
    )
    control_lines = _sample(
        GENERAL_TEMPLATES,
        control_size,
        np.random.default_rng([seed, len(domains) + 1]),
        general_pools,
    )
    suite.control = [
        (f"control-{i:04d}", tuple(line.split()))
        for i, line in enumerate(control_lines)
    ]
    logger.info(
        f"Generated synthetic suite: {len(suite.general)} general sentences "
        f"({len(mention_lines)} entity mentions), "
        f"{len(suite.domains)} domains of {domain_size} sentences"
    )
    return suite
