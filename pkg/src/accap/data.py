"""Synthetic captioned-scene corpus.

Scenes are attribute tuples (count, color, shape, setting); their "image
feature" is the concatenated one-hot encoding plus Gaussian noise, and every
scene gets two template captions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = "capcorpus-v1"

COUNTS = (1, 2, 3)
COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("circle", "square", "triangle")
SETTINGS = ("indoors", "outdoors")
COUNT_WORDS = {2: "two", 3: "three"}

FEATURE_DIM = len(COUNTS) + len(COLORS) + len(SHAPES) + len(SETTINGS)
NOISE_SIGMA = 0.05
BLOCKS = (
    slice(0, 3),
    slice(3, 7),
    slice(7, 10),
    slice(10, 12),
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Scene:
    count: int
    color: str
    shape: str
    setting: str

    def __post_init__(self):
        if (
            self.count not in COUNTS
            or self.color not in COLORS
            or self.shape not in SHAPES
            or self.setting not in SETTINGS
        ):
            raise ValueError(f"invalid scene {self}")

    def as_dict(self) -> dict:
        return {"count": self.count, "color": self.color, "shape": self.shape, "setting": self.setting}


def scene_captions(scene: Scene) -> list[str]:
    """The two template captions for ``scene``."""
    if scene.count == 1:
        return [
            f"a {scene.color} {scene.shape} {scene.setting}",
            f"there is a {scene.color} {scene.shape}",
        ]
    word = COUNT_WORDS[scene.count]
    return [
        f"{word} {scene.color} {scene.shape}s {scene.setting}",
        f"there are {word} {scene.color} {scene.shape}s",
    ]


def template_words() -> list[str]:
    words: list[str] = []
    for count in COUNTS:
        for color in COLORS:
            for shape in SHAPES:
                for setting in SETTINGS:
                    for cap in scene_captions(Scene(count, color, shape, setting)):
                        words.extend(w for w in cap.split() if w not in words)
    return words


def encode_feature(scene: Scene, rng: np.random.Generator | None, sigma: float = NOISE_SIGMA) -> np.ndarray:
    """One-hot blocks of the scene attributes plus i.i.d. N(0, sigma^2) noise."""
    f = np.zeros(FEATURE_DIM)
    f[BLOCKS[0].start + COUNTS.index(scene.count)] = 1.0
    f[BLOCKS[1].start + COLORS.index(scene.color)] = 1.0
    f[BLOCKS[2].start + SHAPES.index(scene.shape)] = 1.0
    f[BLOCKS[3].start + SETTINGS.index(scene.setting)] = 1.0
    if sigma > 0:
        f += rng.normal(0.0, sigma, size=FEATURE_DIM)
    return f


def decode_feature(feature: np.ndarray) -> Scene:
    """Recover the scene by blockwise argmax."""
    idx = [int(np.argmax(feature[b])) for b in BLOCKS]
    return Scene(COUNTS[idx[0]], COLORS[idx[1]], SHAPES[idx[2]], SETTINGS[idx[3]])


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, sentence: str, add_eos: bool = True) -> list[int]:
        ids = [self.index.get(w, UNK) for w in sentence.split()]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids: Iterable[int], strip: bool = True) -> str:
        words = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            words.append(self.tokens[i])
        return " ".join(words)


def build_vocab(captions: Iterable[str]) -> Vocab:
    """Reserved tokens, then caption words in first-occurrence order."""
    tokens = list(RESERVED)
    seen = set(tokens)
    for cap in captions:
        for w in cap.split():
            if w not in seen:
                seen.add(w)
                tokens.append(w)
    return Vocab(tokens)


@dataclass
class Example:
    scene: Scene
    feature: np.ndarray
    references: list[list[int]]
    split: str


@dataclass
class Corpus:
    examples: list[Example]
    vocab: Vocab
    seed: int

    def split(self, name: str) -> list[Example]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [e for e in self.examples if e.split == name]

    def features(self, name: str) -> np.ndarray:
        return np.stack([e.feature for e in self.split(name)])


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = round(0.8 * n)
    n_val = round(0.1 * n)
    return n_train, n_val, n - n_train - n_val


def generate_corpus(seed: int, n_scenes: int) -> Corpus:
    if n_scenes < 10:
        raise ValueError(f"n_scenes must be >= 10, got {n_scenes}")
    rng = np.random.default_rng(seed)
    scenes = [
        Scene(
            COUNTS[rng.integers(len(COUNTS))],
            COLORS[rng.integers(len(COLORS))],
            SHAPES[rng.integers(len(SHAPES))],
            SETTINGS[rng.integers(len(SETTINGS))],
        )
        for _ in range(n_scenes)
    ]
    features = [encode_feature(s, rng) for s in scenes]
    order = rng.permutation(n_scenes)
    n_train, n_val, _ = split_sizes(n_scenes)
    split_of = {}
    for rank, i in enumerate(order):
        split_of[int(i)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    captions = [scene_captions(s) for s in scenes]
    vocab = build_vocab(c for caps in captions for c in caps)
    examples = [
        Example(s, f, [vocab.encode(c) for c in caps], split_of[i])
        for i, (s, f, caps) in enumerate(zip(scenes, features, captions))
    ]
    return Corpus(examples, vocab, seed)


# ---------------------------------------------------------------- file format


def dumps_corpus(corpus: Corpus) -> str:
    header = {
        "format": FORMAT_VERSION,
        "seed": corpus.seed,
        "n_scenes": len(corpus.examples),
        "vocab": corpus.vocab.tokens,
    }
    lines = [json.dumps(header)]
    for e in corpus.examples:
        rec = {
            "scene": e.scene.as_dict(),
            # repr-based float formatting round-trips float64 exactly
            "feature": [float(x) for x in e.feature],
            "references": [corpus.vocab.decode(r) for r in e.references],
            "split": e.split,
        }
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def loads_corpus(text: str) -> Corpus:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty corpus file")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported corpus format {header.get('format')!r}")
    vocab = Vocab(header["vocab"])
    examples = []
    for line in lines[1:]:
        rec = json.loads(line)
        feature = np.array(rec["feature"], dtype=np.float64)
        if feature.shape != (FEATURE_DIM,):
            raise ValueError(f"feature must have {FEATURE_DIM} values")
        examples.append(
            Example(Scene(**rec["scene"]), feature, [vocab.encode(r) for r in rec["references"]], rec["split"])
        )
    return Corpus(examples, vocab, header["seed"])


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")


def load_corpus(path: str | Path) -> Corpus:
    return loads_corpus(Path(path).read_text(encoding="utf-8"))
