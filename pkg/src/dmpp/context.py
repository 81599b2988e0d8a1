"""Contextual feature operators: map-image patches and event-description
tokens attached to each representative point."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import NormalizationTransform, RepPointGrid
from .errors import ConfigurationError, OutOfRasterError, ShapeError

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Variant(str, enum.Enum):
    NAIVE = "naive"
    IMAGE = "image"
    TEXT = "text"
    FULL = "full"

    @property
    def uses_image(self) -> bool:
        return self in (Variant.IMAGE, Variant.FULL)

    @property
    def uses_text(self) -> bool:
        return self in (Variant.TEXT, Variant.FULL)


@dataclass(frozen=True, eq=False)
class RasterMap:
    """RGB raster in ``[0, 1]`` with its spatial bounding box.

    Row 0 is the northern (largest ``s2``) edge, as in image files.
    """

    pixels: np.ndarray  # (N_H, N_W, 3)
    bounds: tuple[float, float, float, float]  # s1_min, s2_min, s1_max, s2_max

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"raster must be (H, W, 3), got {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise ValueError("raster pixel values must lie in [0, 1]")
        b = tuple(float(v) for v in self.bounds)
        if not (b[0] < b[2] and b[1] < b[3]):
            raise ValueError(f"invalid raster georeference {b}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "bounds", b)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def pixel_of(self, location) -> tuple[int, int]:
        s1, s2 = float(location[0]), float(location[1])
        x0, y0, x1, y1 = self.bounds
        if not (x0 <= s1 <= x1 and y0 <= s2 <= y1):
            raise OutOfRasterError(f"location ({s1}, {s2}) outside raster bounds {self.bounds}")
        col = int(np.floor((s1 - x0) / (x1 - x0) * self.width))
        row = int(np.floor((y1 - s2) / (y1 - y0) * self.height))
        return min(row, self.height - 1), min(col, self.width - 1)


@dataclass(frozen=True)
class EventDescription:
    t_start: float
    t_end: float
    location: tuple[float, float]
    text: tuple[str, ...]

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError(f"description ends ({self.t_end}) before it starts ({self.t_start})")
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))
        if isinstance(self.text, str):
            object.__setattr__(self, "text", tuple(tokenize(self.text)))
        else:
            object.__setattr__(self, "text", tuple(self.text))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    def __init__(self, words: Sequence[str] = ()):
        self.index: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for w in words:
            if w not in self.index:
                self.index[w] = len(self.index)

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __getitem__(self, word: str) -> int:
        return self.index.get(word, UNK)

    @property
    def words(self) -> list[str]:
        return list(self.index)[2:]


def build_vocabulary(corpus: Iterable, max_words: int = 200) -> Vocabulary:
    """Keep the ``max_words`` most frequent words (ties: lexicographic)."""
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    counts: Counter = Counter()
    for doc in corpus:
        counts.update(tokenize(doc) if isinstance(doc, str) else doc)
    for reserved in (PAD_TOKEN, UNK_TOKEN):
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([w for w, _ in ranked[:max_words]])


def encode_tokens(vocab: Vocabulary, text, n_tokens: int = 5) -> np.ndarray:
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    if text is None:
        words = []
    elif isinstance(text, str):
        words = tokenize(text)
    else:
        words = list(text)
    ids = [vocab[w] for w in words[:n_tokens]]
    ids += [PAD] * (n_tokens - len(ids))
    return np.array(ids, dtype=np.int64)


def extract_image_patch(raster: RasterMap, location, patch_px: int = 20,
                        out_px: int = 10) -> np.ndarray:
    """Average-pooled ``patch_px`` square block around ``location``.

    Pixels beyond the raster edge repeat the border pixel.
    """
    if patch_px % out_px:
        raise ValueError(f"patch_px {patch_px} must be a multiple of out_px {out_px}")
    row, col = raster.pixel_of(location)
    half = patch_px // 2
    rows = np.clip(np.arange(row - half, row - half + patch_px), 0, raster.height - 1)
    cols = np.clip(np.arange(col - half, col - half + patch_px), 0, raster.width - 1)
    block = raster.pixels[np.ix_(rows, cols)]
    f = patch_px // out_px
    return block.reshape(out_px, f, out_px, f, 3).mean(axis=(1, 3))


def select_description(descriptions: Sequence[EventDescription], point,
                       radius: float) -> EventDescription | None:
    """Active description (``t_start < tau < t_end``) closest to the point
    and within ``radius``; ``None`` if there is none."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    tau, r = float(point[0]), np.asarray(point[1:3], dtype=np.float64)
    best, best_key = None, None
    for i, d in enumerate(descriptions):
        if not d.t_start < tau < d.t_end:
            continue
        dist = float(np.hypot(d.location[0] - r[0], d.location[1] - r[1]))
        if not dist < radius:
            continue
        key = (dist, d.t_start, i)
        if best_key is None or key < best_key:
            best, best_key = d, key
    return best


@dataclass(frozen=True, eq=False)
class ContextSnapshot:
    position: np.ndarray
    image_patch: np.ndarray | None = None
    token_ids: np.ndarray | None = None


@dataclass(eq=False)
class SnapshotBatch:
    """Stacked per-point features for all representative points."""

    positions: np.ndarray  # (J, 3)
    patches: np.ndarray | None = None  # (J, N_h, N_w, N_c)
    tokens: np.ndarray | None = None  # (J, N_s) int
    vocab_size: int | None = None

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, j: int) -> ContextSnapshot:
        return ContextSnapshot(
            self.positions[j],
            None if self.patches is None else self.patches[j],
            None if self.tokens is None else self.tokens[j],
        )

    def subset(self, idx) -> "SnapshotBatch":
        return SnapshotBatch(
            self.positions[idx],
            None if self.patches is None else self.patches[idx],
            None if self.tokens is None else self.tokens[idx],
            self.vocab_size,
        )

    @classmethod
    def stack(cls, snaps: Sequence[ContextSnapshot], vocab_size: int | None = None):
        pos = np.stack([s.position for s in snaps])
        patches = tokens = None
        if snaps[0].image_patch is not None:
            patches = np.stack([s.image_patch for s in snaps])
        if snaps[0].token_ids is not None:
            tokens = np.stack([s.token_ids for s in snaps])
        return cls(pos, patches, tokens, vocab_size)


def build_snapshots(grid: RepPointGrid, variant: Variant | str = Variant.NAIVE,
                    raster: RasterMap | None = None,
                    descriptions: Sequence[EventDescription] | None = None,
                    vocab: Vocabulary | None = None, radius: float = 0.62,
                    transform: NormalizationTransform | None = None,
                    patch_px: int = 20, out_px: int = 10,
                    n_tokens: int = 5) -> SnapshotBatch:
    """Features for every representative point of ``grid``.

    If ``transform`` is given the grid is in normalized coordinates while the
    raster and descriptions are in raw units; lookups happen in raw units and
    positions are stored normalized.
    """
    variant = Variant(variant)
    positions = np.array(grid.points, dtype=np.float64)
    raw = transform.inverse(positions) if transform is not None else positions
    patches = tokens = None
    if variant.uses_image:
        if raster is None:
            raise ConfigurationError(f"variant {variant.value!r} requires a raster map")
        patches = np.stack([extract_image_patch(raster, p[1:], patch_px, out_px) for p in raw])
    vocab_size = None
    if variant.uses_text:
        if descriptions is None or vocab is None:
            raise ConfigurationError(
                f"variant {variant.value!r} requires descriptions and a vocabulary")
        rows = []
        for p in raw:
            d = select_description(descriptions, p, radius)
            rows.append(encode_tokens(vocab, None if d is None else d.text, n_tokens))
        tokens = np.stack(rows)
        vocab_size = len(vocab)
    return SnapshotBatch(positions, patches, tokens, vocab_size)
