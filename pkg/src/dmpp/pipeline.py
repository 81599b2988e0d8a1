"""Glue from a :class:`RunConfig` to a ready model and normalized data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .context import SnapshotBatch, Vocabulary, build_snapshots, build_vocabulary
from .domain import NormalizationTransform, RepPointGrid, build_grid, normalize
from .evaluation import test_region, train_region
from .kernels import Box, KernelParams
from .model import DmppModel, default_log_sigma


@dataclass
class Prepared:
    config: RunConfig
    transform: NormalizationTransform
    grid: RepPointGrid
    snapshots: SnapshotBatch
    vocab: Vocabulary | None

    @property
    def unit_domain(self):
        return self.transform.forward_domain(self.config.domain)

    @property
    def train_box(self) -> Box:
        return train_region(self.unit_domain)

    @property
    def test_box(self) -> Box:
        return test_region(self.unit_domain)

    def kernel(self) -> KernelParams:
        c = self.config
        ls = default_log_sigma(self.grid) if c.log_sigma is None else c.log_sigma
        return KernelParams(c.kernel_family, ls, c.support_w)

    def new_model(self, seed: int | None = None) -> DmppModel:
        c = self.config
        return DmppModel.create(self.grid, self.snapshots, c.network, c.kernel_family,
                                c.support_w, seed=c.seed if seed is None else seed,
                                log_sigma=c.log_sigma, transform=self.transform)

    def normalize(self, events) -> np.ndarray:
        return normalize(events, self.config.domain)[0]

    def split(self, events) -> tuple[np.ndarray, np.ndarray]:
        """Normalized ``(train, test)`` events split at the forecast origin."""
        x = self.normalize(events)
        T = self.unit_domain.train_end
        return x[x[:, 0] <= T], x[x[:, 0] > T]


def prepare(config: RunConfig, vocab_words: list[str] | None = None) -> Prepared:
    """Grid, normalization and context features for ``config``.

    The raster and descriptions are read from ``config.paths`` when the
    variant needs them; ``vocab_words`` pins a stored vocabulary.
    """
    from .io import load_descriptions, load_raster

    transform = NormalizationTransform.for_domain(config.domain)
    grid = build_grid(transform.forward_domain(config.domain), config.M, config.L_per_axis)
    raster = descriptions = vocab = None
    net = config.network
    if config.variant.uses_image:
        raster = load_raster(config.path("raster"))
    if config.variant.uses_text:
        descriptions = load_descriptions(config.path("descriptions"))
        if vocab_words is not None:
            vocab = Vocabulary(vocab_words)
        else:
            vocab = build_vocabulary([d.text for d in descriptions], config.max_words)
        net.vocab_size = len(vocab)
    snaps = build_snapshots(grid, config.variant, raster, descriptions, vocab,
                            radius=config.description_radius, transform=transform,
                            patch_px=config.patch_px, out_px=net.patch_shape[0],
                            n_tokens=net.n_tokens)
    return Prepared(config, transform, grid, snaps, vocab)
