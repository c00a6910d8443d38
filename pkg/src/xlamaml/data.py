"""Synthetic multilingual task families and JSONL ingestion.

A language is an orthogonal transform of a shared latent space: Givens
rotations in the fixed coordinate planes (0,1), (2,3), ... followed by an
optional coordinate permutation. The label is a function of the latent
example only, so every language carries the same task, and rendering the
same latent example in two languages gives an exact translation pair.

The token family (for the span head) uses vocabulary permutations instead
of rotations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Example:
    x: np.ndarray
    label: object  # int class id, or (start, end)
    latent_id: int | None
    language: str

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.language == other.language
            and self.latent_id == other.latent_id
            and self.label == other.label
            and np.array_equal(self.x, other.x)
        )

    __hash__ = None


@dataclass
class LanguageBag:
    language: str
    examples: list[Example]
    split: str = "train"

    def __post_init__(self):
        ids = [e.latent_id for e in self.examples if e.latent_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError(f"bag {self.language}/{self.split}: duplicate latent ids")

    def __len__(self):
        return len(self.examples)

    @property
    def parallel_ready(self) -> bool:
        return all(e.latent_id is not None for e in self.examples)

    def by_latent_id(self) -> dict[int, Example]:
        return {e.latent_id: e for e in self.examples}


@dataclass(frozen=True)
class LanguageSpec:
    code: str
    angles: tuple[float, ...] = ()
    permutation: tuple[int, ...] | None = None
    group: str = "aux"

    def matrix(self, dim: int) -> np.ndarray:
        """The full orthogonal matrix ``M`` with ``x = M @ z``."""
        M = np.eye(dim)
        for plane, phi in enumerate(self.angles):
            a, b = 2 * plane, 2 * plane + 1
            if b >= dim:
                raise ValueError(f"language {self.code}: plane {plane} exceeds dimension {dim}")
            c, s = np.cos(phi), np.sin(phi)
            G = np.eye(dim)
            G[a, a], G[a, b], G[b, a], G[b, b] = c, -s, s, c
            M = G @ M
        if self.permutation is not None:
            M = M[list(self.permutation)]
        return M


@dataclass(frozen=True)
class FamilyConfig:
    """Shape of a synthetic language family."""

    kind: str = "features"  # "features" | "tokens"
    latent_dim: int = 8
    n_classes: int = 3
    high_resource: str = "en"
    aux_languages: tuple[str, ...] = ("a1", "a2", "a3", "a4")
    target_languages: tuple[str, ...] = ("t1", "t2", "t3")
    spread: float = 0.7
    jitter: float = 0.3
    # where each target sits on the path from the high-resource language (0) to the group (1)
    target_positions: tuple[float, ...] = (0.4, 0.7, 1.0)
    # names an extra far-away language ("" disables it); it joins the aux pool
    outlier: str = ""
    outlier_factor: float = 4.0
    class_separation: float = 2.0
    noise: float = 1.0
    # token family
    vocab_size: int = 24
    seq_len: int = 10
    permute_fraction: float = 0.25

    @property
    def languages(self) -> tuple[str, ...]:
        extra = (self.outlier,) if self.outlier else ()
        return (self.high_resource,) + tuple(self.aux_languages) + extra + tuple(self.target_languages)

    @property
    def aux_pool(self) -> tuple[str, ...]:
        return tuple(self.aux_languages) + ((self.outlier,) if self.outlier else ())


@dataclass(frozen=True)
class CorpusLayout:
    train_size: int = 2000
    dev_size: int = 250
    test_size: int = 500

    def __post_init__(self):
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise ValueError("corpus sizes must be >= 1")


# ---------------------------------------------------------------------------
# language families


def gen_language_family(family: FamilyConfig, seed: int) -> list[LanguageSpec]:
    """Languages of a family; the high-resource one is the identity transform.

    The low-resource languages form a group: they share a common rotation of
    magnitude ``spread`` per plane (random sign per plane) plus an individual
    jitter drawn uniformly in ``[-jitter * spread, jitter * spread]``. The
    optional outlier uses ``outlier_factor * spread`` per plane with its own
    random signs, so it is far from both the group and the high-resource
    language.
    """
    codes = family.languages
    if len(codes) < 2:
        raise ValueError("a family needs at least two languages")
    if len(set(codes)) != len(codes):
        raise ValueError(f"language codes must be unique: {codes}")
    if family.spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng([seed, 0xFA])
    specs = []
    if family.kind == "features":
        n_planes = family.latent_dim // 2
        group_angles = family.spread * rng.choice([-1.0, 1.0], size=n_planes)
        for code in codes:
            if code == family.high_resource:
                specs.append(LanguageSpec(code, (0.0,) * n_planes, None, "high"))
                continue
            signs = rng.choice([-1.0, 1.0], size=n_planes)
            jitter = rng.uniform(-1.0, 1.0, size=n_planes) * family.jitter * family.spread
            if code == family.outlier:
                angles = signs * family.outlier_factor * family.spread
                group = "outlier"
            elif code in family.target_languages:
                pos = family.target_positions[family.target_languages.index(code) % len(family.target_positions)]
                angles = pos * group_angles + jitter
                group = "target"
            else:
                angles = group_angles + jitter
                group = "aux"
            specs.append(LanguageSpec(code, tuple(float(a) for a in angles), None, group))
        return specs

    V = family.vocab_size
    for code in codes:
        if code == family.high_resource:
            specs.append(LanguageSpec(code, (), tuple(range(V)), "high"))
            continue
        frac = family.permute_fraction * (family.outlier_factor if code == family.outlier else 1.0)
        n_moved = min(V, int(round(frac * V)))
        perm = np.arange(V)
        if n_moved >= 2:
            moved = rng.choice(V, size=n_moved, replace=False)
            perm[moved] = moved[rng.permutation(n_moved)]
        group = "outlier" if code == family.outlier else ("target" if code in family.target_languages else "aux")
        specs.append(LanguageSpec(code, (), tuple(int(i) for i in perm), group))
    return specs


def language_angle(spec: LanguageSpec) -> float:
    """Largest absolute rotation angle of a language."""
    return float(max((abs(a) for a in spec.angles), default=0.0))


# ---------------------------------------------------------------------------
# latent examples


@dataclass(frozen=True, eq=False)
class LatentExample:
    latent_id: int
    z: np.ndarray
    label: object


def _balanced_labels(n: int, n_classes: int, rng) -> np.ndarray:
    labels = np.arange(n) % n_classes
    return labels[rng.permutation(n)]


def class_means(family: FamilyConfig, seed: int) -> np.ndarray:
    """Regular simplex of class means (all pairs equally far apart) in a random subspace."""
    C, d = family.n_classes, family.latent_dim
    if d < C:
        raise ValueError(f"latent_dim {d} must be >= n_classes {C}")
    rng = np.random.default_rng([seed, 0xC1])
    simplex = np.eye(C) - 1.0 / C
    simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
    basis, _ = np.linalg.qr(rng.normal(size=(d, C)))
    return family.class_separation * simplex @ basis.T


def gen_latents(family: FamilyConfig, n: int, first_id: int, rng, seed: int) -> list[LatentExample]:
    if family.kind == "features":
        means = class_means(family, seed)
        labels = _balanced_labels(n, family.n_classes, rng)
        z = means[labels] + family.noise * rng.normal(size=(n, family.latent_dim))
        return [LatentExample(first_id + i, z[i], int(labels[i])) for i in range(n)]
    return [_latent_span_example(family, first_id + i, rng) for i in range(n)]


# token family vocabulary: [0, 4) open-span markers, [4, 8) close-span markers, rest filler
_N_MARK = 4


def _latent_span_example(family: FamilyConfig, latent_id: int, rng) -> LatentExample:
    L, V = family.seq_len, family.vocab_size
    if V < 2 * _N_MARK + 1 or L < 2:
        raise ValueError("token family needs vocab_size >= 9 and seq_len >= 2")
    length = int(rng.integers(2, min(4, L) + 1))
    start = int(rng.integers(0, L - length + 1))
    end = start + length - 1
    seq = rng.integers(2 * _N_MARK, V, size=L)
    seq[start] = rng.integers(0, _N_MARK)
    seq[end] = rng.integers(_N_MARK, 2 * _N_MARK)
    return LatentExample(latent_id, seq.astype(np.int64), (start, end))


def render(z: LatentExample, spec: LanguageSpec) -> Example:
    """Realize a latent example in a language."""
    latent = np.asarray(z.z)
    if latent.dtype.kind in "iu":
        perm = spec.permutation
        if perm is None:
            x = latent.copy()
        else:
            if latent.max(initial=0) >= len(perm):
                raise ValueError(f"render: token id beyond vocabulary of language {spec.code}")
            x = np.asarray(perm, dtype=np.int64)[latent]
        return Example(x, z.label, z.latent_id, spec.code)
    dim = latent.shape[0]
    if 2 * len(spec.angles) > dim or (spec.permutation is not None and len(spec.permutation) != dim):
        raise ValueError(f"render: language {spec.code} does not fit latent dimension {dim}")
    return Example(spec.matrix(dim) @ latent, z.label, z.latent_id, spec.code)


def unrender(x: np.ndarray, spec: LanguageSpec) -> np.ndarray:
    """Inverse of :func:`render` for feature languages."""
    return spec.matrix(len(x)).T @ np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# corpora


@dataclass
class Corpus:
    family: FamilyConfig
    specs: list[LanguageSpec]
    train: dict[str, LanguageBag]
    dev: dict[str, LanguageBag]
    test: dict[str, LanguageBag]

    def spec(self, code: str) -> LanguageSpec:
        return next(s for s in self.specs if s.code == code)


def gen_corpus(layout: CorpusLayout, family: FamilyConfig, seed: int) -> Corpus:
    """Deterministic corpus: high-resource train split, and parallel dev/test splits for every language."""
    specs = gen_language_family(family, seed)
    by_code = {s.code: s for s in specs}
    rng = np.random.default_rng([seed, 0xDA7A])
    train_latents = gen_latents(family, layout.train_size, 0, rng, seed)
    dev_latents = gen_latents(family, layout.dev_size, layout.train_size, rng, seed)
    test_latents = gen_latents(family, layout.test_size, layout.train_size + layout.dev_size, rng, seed)

    hr = family.high_resource
    train = {hr: LanguageBag(hr, [render(z, by_code[hr]) for z in train_latents], "train")}
    dev = {c: LanguageBag(c, [render(z, by_code[c]) for z in dev_latents], "dev") for c in family.languages}
    test = {c: LanguageBag(c, [render(z, by_code[c]) for z in test_latents], "test") for c in family.languages}
    return Corpus(family, specs, train, dev, test)


# ---------------------------------------------------------------------------
# JSONL


def example_to_json(e: Example) -> dict:
    if isinstance(e.label, tuple):
        label = {"start": int(e.label[0]), "end": int(e.label[1])}
    else:
        label = int(e.label)
    x = e.x.tolist() if e.x.dtype.kind in "iu" else [float(v) for v in e.x]
    row = {"language": e.language, "x": x, "label": label}
    if e.latent_id is not None:
        row["latent_id"] = int(e.latent_id)
    return row


def write_jsonl(bags: Iterable[LanguageBag], path) -> None:
    with open(path, "w") as fh:
        for bag in bags:
            for e in bag.examples:
                fh.write(json.dumps(example_to_json(e)) + "\n")


class DataFormatError(ValueError):
    pass


def load_jsonl(
    path,
    language_field: str = "language",
    feature_fields: Sequence[str] = ("x",),
    label_field: str = "label",
    n_classes: int | None = None,
    split: str = "train",
) -> dict[str, LanguageBag]:
    """Group a JSONL file into language bags.

    Rows may omit ``latent_id``; the resulting bags then report
    ``parallel_ready == False``. A class label outside ``[0, n_classes)`` is
    rejected when ``n_classes`` is given.
    """
    grouped: dict[str, list[Example]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                lang = row[language_field]
                parts = [row[f] if isinstance(row[f], list) else [row[f]] for f in feature_fields]
                raw_label = row[label_field]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed row ({exc})") from None
            flat = [v for part in parts for v in part]
            if flat and all(isinstance(v, int) and not isinstance(v, bool) for v in flat):
                x = np.asarray(flat, dtype=np.int64)
            else:
                x = np.asarray(flat, dtype=np.float64)
            label = _parse_label(raw_label, n_classes, path, lineno)
            latent_id = row.get("latent_id")
            grouped.setdefault(lang, []).append(Example(x, label, latent_id, lang))
    return {lang: LanguageBag(lang, exs, split) for lang, exs in grouped.items()}


def _parse_label(raw, n_classes, path, lineno):
    if isinstance(raw, dict):
        try:
            start, end = int(raw["start"]), int(raw["end"])
        except (KeyError, TypeError, ValueError):
            raise DataFormatError(f"{path}:{lineno}: span label needs integer start/end") from None
        if end < start or start < 0:
            raise DataFormatError(f"{path}:{lineno}: invalid span ({start}, {end})")
        return (start, end)
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise DataFormatError(f"{path}:{lineno}: unknown label {raw!r}")
    if n_classes is not None and not 0 <= raw < n_classes:
        raise DataFormatError(f"{path}:{lineno}: unknown label {raw} (expected 0..{n_classes - 1})")
    return raw


def write_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in ("train", "dev", "test"):
        bags = getattr(corpus, split)
        paths[split] = directory / f"{split}.jsonl"
        write_jsonl([bags[c] for c in sorted(bags)], paths[split])
    return paths


def load_corpus_dir(directory, n_classes: int | None = None) -> dict[str, dict[str, LanguageBag]]:
    directory = Path(directory)
    return {
        split: load_jsonl(directory / f"{split}.jsonl", n_classes=n_classes, split=split)
        for split in ("train", "dev", "test")
    }


__all__ = [
    "Example", "LanguageBag", "LanguageSpec", "FamilyConfig", "CorpusLayout", "Corpus",
    "LatentExample", "gen_language_family", "language_angle", "gen_latents", "render",
    "unrender", "gen_corpus", "write_jsonl", "load_jsonl", "write_corpus", "load_corpus_dir",
    "DataFormatError", "class_means",
]
