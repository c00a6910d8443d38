"""Meta-task construction: language subsets, then support/query examples.

Three ways to fill an episode:

* random   - fresh uniform draw without replacement for every episode
* covering - each role's pool is shuffled once per pass and consumed in
             consecutive chunks, so every example is used exactly once per pass
* parallel - support and query are renderings of the same latent examples
             (translation pairs); combines with either strategy above
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Example, LanguageBag

log = logging.getLogger(__name__)

STRATEGIES = ("random", "covering")


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Episode:
    support: tuple[Example, ...]
    query: tuple[Example, ...]
    support_languages: tuple[str, ...]
    query_languages: tuple[str, ...]

    def __post_init__(self):
        if not self.support or not self.query:
            raise SamplingError("an episode needs nonempty support and query sets")
        for e in self.support:
            if e.language not in self.support_languages:
                raise SamplingError(f"support example in {e.language} outside {self.support_languages}")
        for e in self.query:
            if e.language not in self.query_languages:
                raise SamplingError(f"query example in {e.language} outside {self.query_languages}")


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "covering"
    parallel: bool = False
    support_pool: tuple[str, ...] = ("en",)
    query_pool: tuple[str, ...] = ()
    support_subset_size: int = 1
    query_subset_size: int = 1
    k_support: int = 8
    n_query: int = 8
    # per-role strategy overrides ("" = use ``strategy``)
    support_strategy: str = ""
    query_strategy: str = ""

    def __post_init__(self):
        for s in (self.strategy, self.support_strategy or self.strategy, self.query_strategy or self.strategy):
            if s not in STRATEGIES:
                raise ValueError(f"unknown sampling strategy {s!r}; expected one of {STRATEGIES}")
        if self.k_support < 1 or self.n_query < 1:
            raise ValueError("K and N must be >= 1")
        if not 1 <= self.support_subset_size <= max(1, len(self.support_pool)):
            raise ValueError("support subset size must be between 1 and the support pool size")
        if self.query_pool and not 1 <= self.query_subset_size <= len(self.query_pool):
            raise ValueError("query subset size must be between 1 and the query pool size")
        if self.parallel and self.k_support != self.n_query:
            raise ValueError("parallel episodes need K == N")

    def role_strategy(self, role: str) -> str:
        override = self.support_strategy if role == "support" else self.query_strategy
        return override or self.strategy


def sample_language_subsets(
    support_pool: Sequence[str], query_pool: Sequence[str], sizes: tuple[int, int], rng: np.random.Generator
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Uniform without-replacement language subsets for each role (sorted)."""
    out = []
    for pool, size in zip((support_pool, query_pool), sizes):
        if not pool:
            raise SamplingError("language pool is empty")
        if not 1 <= size <= len(pool):
            raise SamplingError(f"subset size {size} outside [1, {len(pool)}]")
        picked = rng.choice(len(pool), size=size, replace=False)
        out.append(tuple(sorted(pool[i] for i in picked)))
    return out[0], out[1]


def _union(bags: Mapping[str, LanguageBag], languages: Sequence[str]) -> list[Example]:
    missing = [lang for lang in languages if lang not in bags]
    if missing:
        raise SamplingError(f"no bag for languages {missing}")
    return [e for lang in languages for e in bags[lang].examples]


def _draw(pool: list[Example], n: int, rng) -> tuple[Example, ...]:
    if len(pool) < n:
        raise SamplingError(f"need {n} examples but the pool holds {len(pool)}")
    idx = rng.choice(len(pool), size=n, replace=False)
    return tuple(pool[i] for i in idx)


def sample_episode_random(bags, subsets, K: int, N: int, rng) -> Episode:
    s_langs, q_langs = subsets
    support = _draw(_union(bags, s_langs), K, rng)
    query = _draw(_union(bags, q_langs), N, rng)
    return Episode(support, query, tuple(s_langs), tuple(q_langs))


class CoveringStream:
    """Shuffled pass over ``items``, consumed in chunks; reshuffles on pass boundary.

    A chunk never straddles two passes: the last chunk of a pass may be short.
    """

    def __init__(self, items: Sequence, rng: np.random.Generator, name: str = ""):
        if not items:
            raise SamplingError("covering pool is empty")
        self.items = list(items)
        self.rng = rng
        self.name = name
        self.passes = 0
        self._order: list[int] = []
        self._cursor = 0
        self._new_pass()

    def _new_pass(self):
        self._order = list(self.rng.permutation(len(self.items)))
        self._cursor = 0
        self.passes += 1
        if self.passes > 1:
            log.debug("covering pool %s: starting pass %d", self.name, self.passes)

    def take(self, n: int) -> list:
        if self._cursor >= len(self._order):
            self._new_pass()
        chunk = self._order[self._cursor:self._cursor + n]
        self._cursor += len(chunk)
        return [self.items[i] for i in chunk]


class CoveringSampler:
    """Episode stream over fixed language subsets, covering each role's pool."""

    def __init__(self, bags, subsets, K: int, N: int, rng):
        s_langs, q_langs = subsets
        self.subsets = (tuple(s_langs), tuple(q_langs))
        self.K, self.N = K, N
        self.support = CoveringStream(_union(bags, s_langs), rng, f"support:{'+'.join(s_langs)}")
        self.query = CoveringStream(_union(bags, q_langs), rng, f"query:{'+'.join(q_langs)}")

    def __iter__(self):
        return self

    def __next__(self) -> Episode:
        return Episode(tuple(self.support.take(self.K)), tuple(self.query.take(self.N)), *self.subsets)


def covering_sampler(bags, subsets, K: int, N: int, rng) -> CoveringSampler:
    return CoveringSampler(bags, subsets, K, N, rng)


def shared_latent_ids(bags, languages: Sequence[str]) -> list[int]:
    """Latent ids present in every listed bag, in ascending order."""
    common = None
    for lang in languages:
        bag = bags[lang]
        if not bag.parallel_ready:
            raise SamplingError(f"bag {lang} has no latent ids; parallel sampling unavailable")
        ids = set(bag.by_latent_id())
        common = ids if common is None else common & ids
    return sorted(common or ())


def _render_ids(bags, ids, s_langs, q_langs, rng) -> Episode:
    lookup = {lang: bags[lang].by_latent_id() for lang in set(s_langs) | set(q_langs)}
    s_pick = rng.integers(0, len(s_langs), size=len(ids))
    q_pick = rng.integers(0, len(q_langs), size=len(ids))
    support, query = [], []
    for i, latent in enumerate(ids):
        s, q = lookup[s_langs[s_pick[i]]][latent], lookup[q_langs[q_pick[i]]][latent]
        if s.label != q.label:
            raise SamplingError(f"latent id {latent}: labels differ across languages")
        support.append(s)
        query.append(q)
    return Episode(tuple(support), tuple(query), tuple(s_langs), tuple(q_langs))


def sample_episode_parallel(bags, subsets, K: int, rng) -> Episode:
    """Draw K latent ids; support and query are those ids rendered per role."""
    s_langs, q_langs = subsets
    ids = shared_latent_ids(bags, tuple(s_langs) + tuple(q_langs))
    if len(ids) < K:
        raise SamplingError(f"only {len(ids)} latent ids shared by {s_langs} and {q_langs}; need {K}")
    chosen = [ids[i] for i in rng.choice(len(ids), size=K, replace=False)]
    return _render_ids(bags, chosen, s_langs, q_langs, rng)


class EpisodeSampler:
    """Full per-episode procedure used by the meta-training loop.

    Language subsets are resampled every episode. Covering state is kept per
    (role, language subset) so differently sized pools are tracked separately.
    """

    def __init__(self, bags: Mapping[str, LanguageBag], config: SamplerConfig, rng: np.random.Generator,
                 tie_roles: bool = False):
        self.bags = bags
        self.config = config
        self.rng = rng
        # x-maml: the support subset is forced equal to the query subset
        self.tie_roles = tie_roles
        self._streams: dict[tuple, CoveringStream] = {}

    def _stream(self, key, items) -> CoveringStream:
        stream = self._streams.get(key)
        if stream is None:
            stream = self._streams[key] = CoveringStream(items, self.rng, str(key))
        return stream

    def subsets(self):
        c = self.config
        if self.tie_roles:
            _, q = sample_language_subsets(c.query_pool, c.query_pool, (c.query_subset_size, c.query_subset_size),
                                           self.rng)
            return q, q
        return sample_language_subsets(c.support_pool, c.query_pool, (c.support_subset_size, c.query_subset_size),
                                       self.rng)

    def next(self) -> Episode:
        c = self.config
        s_langs, q_langs = self.subsets()
        if c.parallel:
            if c.strategy == "random":
                return sample_episode_parallel(self.bags, (s_langs, q_langs), c.k_support, self.rng)
            key = ("pair", s_langs, q_langs)
            ids = self._streams.get(key)
            if ids is None:
                ids = self._stream(key, shared_latent_ids(self.bags, s_langs + q_langs))
            return _render_ids(self.bags, ids.take(c.k_support), s_langs, q_langs, self.rng)

        parts = []
        for role, langs, n in (("support", s_langs, c.k_support), ("query", q_langs, c.n_query)):
            if c.role_strategy(role) == "random":
                parts.append(_draw(_union(self.bags, langs), n, self.rng))
            else:
                parts.append(tuple(self._stream((role, langs), _union(self.bags, langs)).take(n)))
        return Episode(parts[0], parts[1], s_langs, q_langs)

    def __iter__(self):
        return self

    def __next__(self) -> Episode:
        return self.next()
