import numpy as np
import pytest

from dmpp.context import (EventDescription, RasterMap, Variant, build_snapshots,
                          build_vocabulary)
from dmpp.domain import SpatioTemporalDomain, build_grid
from dmpp.model import LOG_SIGMA, DmppModel
from dmpp.network import NetworkConfig

DESCRIPTIONS = [
    EventDescription(0.0, 0.6, (0.3, 0.3), "lane closed after collision"),
    EventDescription(0.2, 1.0, (0.7, 0.7), "road works near the bridge"),
    EventDescription(0.5, 0.9, (0.5, 0.8), "parade closed main street"),
]


def small_model(M=2, L_per_axis=2, seed=0, family="compact_gaussian", support_w=3.0, **net):
    grid = build_grid(SpatioTemporalDomain.unit(train_end=0.8), M, L_per_axis)
    cfg = NetworkConfig(variant=Variant.NAIVE, n_layers=2, n_units=8, position_units=8, **net)
    snaps = build_snapshots(grid, Variant.NAIVE)
    return DmppModel.create(grid, snaps, cfg, family=family, support_w=support_w, seed=seed)


def context_model(variant, M=2, L_per_axis=2, seed=0, text_dropout=0.1):
    """Small image/text model on a synthetic raster and three descriptions."""
    variant = Variant(variant)
    grid = build_grid(SpatioTemporalDomain.unit(train_end=0.8), M, L_per_axis)
    yy, xx = np.mgrid[0:24, 0:24] / 24.0
    raster = RasterMap(np.stack([xx, yy, 0.5 * (xx + yy)], axis=-1), (0, 0, 1, 1))
    vocab = build_vocabulary([d.text for d in DESCRIPTIONS], 200)
    cfg = NetworkConfig(variant=variant, n_layers=2, n_units=8, position_units=8,
                        attention_dim=4, conv_channels=3, image_fc=6, text_fc=4,
                        embed_dim=4, text_hidden=4, patch_shape=(4, 4, 3),
                        vocab_size=len(vocab), text_dropout=text_dropout)
    snaps = build_snapshots(grid, variant, raster if variant.uses_image else None,
                            DESCRIPTIONS if variant.uses_text else None,
                            vocab if variant.uses_text else None, radius=0.5,
                            patch_px=8, out_px=4)
    return DmppModel.create(grid, snaps, cfg, seed=seed)


def constant_f_model(grid, f, family="gaussian", log_sigma=(0.0, 0.0, 0.0), support_w=3.0):
    """Model whose network outputs the constant ``f`` (zero weights, tuned bias)."""
    cfg = NetworkConfig(variant="naive", n_layers=1, n_units=4, position_units=4)
    model = DmppModel.create(grid, build_snapshots(grid, "naive"), cfg, family=family,
                             support_w=support_w, log_sigma=log_sigma)
    for k in model.store:
        if k != LOG_SIGMA:
            model.store.set(k, np.zeros_like(model.store[k]))
    model.store.set("fuse.out.b", np.full_like(model.store["fuse.out.b"], np.log(np.expm1(f))))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
