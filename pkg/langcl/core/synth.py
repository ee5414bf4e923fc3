"""Synthetic languages standing in for a multilingual speech corpus.

Global token ids are laid out as::

    0               blank
    1               word boundary (shared by every word-granularity language)
    2 .. P+1        shared pool
    P+2 ..          private tokens, allocated language by language

A language emits each token as a few noisy copies of the token's prototype
feature vector, so a model has to learn both the acoustics (prototypes) and,
through the bigram chain, a little of the language model.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import pairwise

import numpy as np

from langcl.core.config import DataConfig
from langcl.core.ctc import TokenSeq
from langcl.core.errors import GenerationError
from langcl.core.seeds import derive_seed

logger = logging.getLogger(__name__)

BOUNDARY = 1
POOL_START = 2
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class SharedPool:
    token_ids: tuple[int, ...]
    prototypes: np.ndarray
    boundary_prototype: np.ndarray


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """One language: vocabulary, emission model, split sizes and seed."""

    lang: str
    shared_tokens: tuple[int, ...]
    private_tokens: tuple[int, ...]
    boundary: int | None
    prototypes: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    frames_per_token: tuple[int, int]
    noise: float
    splits: tuple[int, int, int]
    seed: int
    granularity: str
    max_tokens: int
    max_frames: int
    boundary_prob: float

    @property
    def content_tokens(self) -> tuple[int, ...]:
        return self.shared_tokens + self.private_tokens

    @property
    def token_ids(self) -> tuple[int, ...]:
        """Every id the language can emit, boundary last."""
        if self.boundary is None:
            return self.content_tokens
        return (*self.content_tokens, self.boundary)

    @property
    def vocabulary(self) -> frozenset[int]:
        return frozenset(self.content_tokens)

    @property
    def shared_count(self) -> int:
        return len(self.shared_tokens)

    @property
    def private_count(self) -> int:
        return len(self.private_tokens)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(repr((self.lang, self.token_ids, self.seed, self.splits)).encode())
        for array in (self.prototypes, self.transitions, self.start):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    lang: str
    features: np.ndarray
    tokens: tuple[int, ...]

    @property
    def frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def transcript(self) -> TokenSeq:
        return TokenSeq(self.tokens, self.lang)


@dataclass(eq=False)
class LanguageData:
    """Materialised splits of one language, plus what scoring needs to know."""

    lang: str
    token_ids: tuple[int, ...]
    boundary: int | None
    granularity: str
    train: list[Utterance] = field(default_factory=list)
    val: list[Utterance] = field(default_factory=list)
    test: list[Utterance] = field(default_factory=list)

    def split(self, name: str) -> list[Utterance]:
        if name not in SPLITS:
            raise KeyError(f"unknown split '{name}'")
        items: list[Utterance] = getattr(self, name)
        return items


@dataclass(eq=False)
class SuiteData:
    base: list[LanguageData]
    new: list[LanguageData]
    vocab_size: int

    def language(self, lang: str) -> LanguageData:
        for data in (*self.base, *self.new):
            if data.lang == lang:
                return data
        raise KeyError(f"unknown language '{lang}'")


def shared_pool(config: DataConfig) -> SharedPool:
    rng = np.random.default_rng(derive_seed(config.seed, "pool"))
    ids = tuple(range(POOL_START, POOL_START + config.pool_size))
    prototypes = rng.standard_normal((config.pool_size, config.d_in))
    return SharedPool(ids, prototypes, rng.standard_normal(config.d_in))


def _min_distance(prototypes: np.ndarray) -> float:
    if len(prototypes) < 2:
        return np.inf
    diff = prototypes[:, None, :] - prototypes[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    dist[np.diag_indices_from(dist)] = np.inf
    return float(dist.min())


def gen_language(
    config: DataConfig,
    seed: int,
    lang: str = "lang",
    private_start: int | None = None,
    pool: SharedPool | None = None,
) -> TaskSpec:
    if not 0.0 <= config.overlap <= 1.0:
        raise GenerationError(f"overlap must be in [0, 1], got {config.overlap}")
    pool = pool or shared_pool(config)
    rng = np.random.default_rng(seed)
    shared_count = int(np.floor(config.overlap * config.vocab_size + 0.5))
    if shared_count > len(pool.token_ids):
        raise GenerationError(
            f"{lang}: needs {shared_count} shared tokens, pool has {len(pool.token_ids)}"
        )
    private_count = config.vocab_size - shared_count
    if private_start is None:
        private_start = POOL_START + len(pool.token_ids)

    picked = np.sort(rng.choice(len(pool.token_ids), size=shared_count, replace=False))
    shared = tuple(pool.token_ids[i] for i in picked)
    private = tuple(range(private_start, private_start + private_count))
    rows = [pool.prototypes[picked], rng.standard_normal((private_count, config.d_in))]

    granularity = "char" if lang in config.char_languages else "word"
    boundary = BOUNDARY if granularity == "word" else None
    if boundary is not None:
        rows.append(pool.boundary_prototype[None, :])
    prototypes = np.concatenate(rows, axis=0)

    gap = _min_distance(prototypes)
    if gap < config.min_prototype_distance:
        raise GenerationError(
            f"{lang}: prototypes too close ({gap:.3f} < {config.min_prototype_distance}); "
            f"increase d_in (currently {config.d_in})"
        )

    n = config.vocab_size
    transitions = rng.dirichlet(np.ones(n), size=n)
    np.fill_diagonal(transitions, 0.0)
    transitions /= transitions.sum(axis=1, keepdims=True)

    return TaskSpec(
        lang=lang,
        shared_tokens=shared,
        private_tokens=private,
        boundary=boundary,
        prototypes=prototypes,
        transitions=transitions,
        start=rng.dirichlet(np.ones(n)),
        frames_per_token=tuple(config.frames_per_token),  # type: ignore[arg-type]
        noise=config.noise,
        splits=tuple(config.splits),  # type: ignore[arg-type]
        seed=seed,
        granularity=granularity,
        max_tokens=config.max_tokens,
        max_frames=config.max_frames,
        boundary_prob=config.boundary_prob,
    )


def sample_utterance(task: TaskSpec, rng: np.random.Generator) -> tuple[np.ndarray, TokenSeq]:
    low, high = task.frames_per_token
    cap = max(1, min(task.max_tokens, task.max_frames // high))
    length = int(rng.integers(1, cap + 1))
    content = task.content_tokens
    n_content = len(content)

    positions: list[int] = []  # row indices into task.prototypes
    state = int(rng.choice(n_content, p=task.start))
    positions.append(state)
    for i in range(1, length):
        last = i == length - 1
        if (
            task.boundary is not None
            and not last
            and positions[-1] != n_content
            and rng.random() < task.boundary_prob
        ):
            positions.append(n_content)
            continue
        state = int(rng.choice(n_content, p=task.transitions[state]))
        positions.append(state)

    durations = rng.integers(low, high + 1, size=len(positions))
    features = np.repeat(task.prototypes[positions], durations, axis=0)
    if task.noise > 0:
        features = features + task.noise * rng.standard_normal(features.shape)
    ids = task.token_ids
    return features, TokenSeq(tuple(ids[p] for p in positions), task.lang)


def make_splits(task: TaskSpec) -> LanguageData:
    data = LanguageData(task.lang, task.token_ids, task.boundary, task.granularity)
    for index, (name, size) in enumerate(zip(SPLITS, task.splits, strict=True)):
        rng = np.random.default_rng([task.seed, index + 1])
        items = data.split(name)
        for i in range(size):
            features, tokens = sample_utterance(task, rng)
            items.append(Utterance(f"{task.lang}-{name}-{i:05d}", task.lang, features, tokens.tokens))
    return data


def oracle_transcribe(task: TaskSpec, features: np.ndarray) -> TokenSeq:
    """Nearest-prototype label per frame, with runs merged."""
    dist = ((features[:, None, :] - task.prototypes[None, :, :]) ** 2).sum(axis=-1)
    labels = dist.argmin(axis=1).tolist()
    merged = [labels[0]] + [b for a, b in pairwise(labels) if a != b]
    ids = task.token_ids
    return TokenSeq(tuple(ids[i] for i in merged), task.lang)


def language_ids(config: DataConfig) -> tuple[list[str], list[str]]:
    return (
        [f"b{i:02d}" for i in range(config.n_base)],
        [f"n{i:02d}" for i in range(config.n_new)],
    )


def gen_suite(config: DataConfig) -> tuple[list[TaskSpec], list[TaskSpec]]:
    pool = shared_pool(config)
    base_ids, new_ids = language_ids(config)
    next_private = POOL_START + config.pool_size
    specs: list[TaskSpec] = []
    for lang in (*base_ids, *new_ids):
        spec = gen_language(config, derive_seed(config.seed, lang), lang, next_private, pool)
        next_private += spec.private_count
        specs.append(spec)
    return specs[: config.n_base], specs[config.n_base :]


def suite_vocab_size(config: DataConfig) -> int:
    """Size of the union vocabulary, blank and boundary included."""
    shared = int(np.floor(config.overlap * config.vocab_size + 0.5))
    private = config.vocab_size - shared
    return POOL_START + config.pool_size + private * (config.n_base + config.n_new)


@lru_cache(maxsize=4)
def build_suite_data(config: DataConfig) -> SuiteData:
    base, new = gen_suite(config)
    logger.info(f"generating {len(base)} base and {len(new)} new languages")
    return SuiteData(
        base=[make_splits(t) for t in base],
        new=[make_splits(t) for t in new],
        vocab_size=suite_vocab_size(config),
    )
