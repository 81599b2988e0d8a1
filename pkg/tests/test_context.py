import numpy as np
import pytest

from dmpp.context import (PAD, UNK, EventDescription, RasterMap, Variant, Vocabulary,
                          build_snapshots, build_vocabulary, encode_tokens, extract_image_patch,
                          select_description)
from dmpp.domain import NormalizationTransform, SpatioTemporalDomain, build_grid
from dmpp.errors import ConfigurationError, OutOfRasterError


def checkerboard(h=40, w=40):
    px = np.zeros((h, w, 3))
    px[(np.add.outer(np.arange(h), np.arange(w)) % 2) == 0] = 1.0
    px[..., 1] *= 0.5
    return px


def test_constant_raster_gives_constant_patch():
    r = RasterMap(np.full((30, 30, 3), [0.2, 0.4, 0.6]), (0, 0, 1, 1))
    p = extract_image_patch(r, (0.5, 0.5))
    assert p.shape == (10, 10, 3)
    np.testing.assert_allclose(p, np.broadcast_to([0.2, 0.4, 0.6], p.shape), rtol=1e-15)


def test_interior_patch_is_block_mean():
    rng = np.random.default_rng(3)
    px = rng.random((40, 40, 3))
    r = RasterMap(px, (0, 0, 4, 4))
    loc = (2.05, 1.95)
    row, col = r.pixel_of(loc)
    block = px[row - 10: row + 10, col - 10: col + 10]
    p = extract_image_patch(r, loc)
    for i in range(10):
        for j in range(10):
            np.testing.assert_allclose(p[i, j], block[2 * i: 2 * i + 2, 2 * j: 2 * j + 2].mean(axis=(0, 1)))
    cb = extract_image_patch(RasterMap(checkerboard(), (0, 0, 4, 4)), loc)
    np.testing.assert_allclose(cb[..., 0], 0.5)


def test_edge_patch_clamps_and_bounds():
    r = RasterMap(checkerboard(8, 8), (0, 0, 1, 1))
    p = extract_image_patch(r, (0.0, 1.0))
    assert p.shape == (10, 10, 3)
    assert np.all((p >= 0) & (p <= 1))
    with pytest.raises(OutOfRasterError):
        extract_image_patch(r, (1.5, 0.5))


def test_pixel_orientation_north_up():
    px = np.zeros((4, 4, 3))
    px[0, 0] = 1.0  # top-left pixel = north-west corner
    r = RasterMap(px, (0, 0, 1, 1))
    assert r.pixel_of((0.01, 0.99)) == (0, 0)
    assert r.pixel_of((0.99, 0.01)) == (3, 3)


def make_descs():
    return [
        EventDescription(0.0, 10.0, (0.6, 0.5), "lane closed for repairs"),
        EventDescription(0.0, 10.0, (0.7, 0.5), "road closed"),
        EventDescription(20.0, 30.0, (0.5, 0.5), "parade"),
    ]


def test_select_description_rules():
    d = make_descs()
    assert select_description(d[1:2], (5.0, 0.5, 0.5), 0.62) is d[1]
    # distances 0.1 and 0.2 -> the nearer
    assert select_description(d, (5.0, 0.5, 0.5), 0.62) is d[0]
    # none active at tau = 15
    assert select_description(d, (15.0, 0.5, 0.5), 0.62) is None
    # open interval: tau equal to t_start is not active
    assert select_description(d, (20.0, 0.5, 0.5), 0.62) is None
    assert select_description(d, (5.0, 0.5, 0.5), 0.05) is None
    with pytest.raises(ValueError):
        select_description(d, (5.0, 0.5, 0.5), 0.0)


def test_select_description_ties():
    a = EventDescription(2.0, 10.0, (0.6, 0.5), "a")
    b = EventDescription(1.0, 10.0, (0.4, 0.5), "b")
    c = EventDescription(1.0, 10.0, (0.5, 0.6), "c")
    assert select_description([a, b], (5.0, 0.5, 0.5), 1.0) is b
    assert select_description([b, c], (5.0, 0.5, 0.5), 1.0) is b


def test_select_description_never_violates_predicates():
    rng = np.random.default_rng(0)
    descs = [EventDescription(t, t + rng.uniform(0, 5), tuple(rng.random(2)), "x")
             for t in rng.uniform(0, 10, 60)]
    for _ in range(300):
        p = np.array([rng.uniform(0, 12), *rng.random(2)])
        d = select_description(descs, p, 0.3)
        if d is not None:
            assert d.t_start < p[0] < d.t_end
            assert np.hypot(*(np.array(d.location) - p[1:])) < 0.3
        else:
            assert not any(e.t_start < p[0] < e.t_end
                           and np.hypot(*(np.array(e.location) - p[1:])) < 0.3 for e in descs)


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        EventDescription(5.0, 1.0, (0, 0), "bad")


def test_vocabulary_examples():
    v = build_vocabulary(["a a b"], max_words=1)
    assert v.index == {"<pad>": PAD, "<unk>": UNK, "a": 2}
    v = build_vocabulary(["y x"], max_words=1)
    assert v.words == ["x"]
    assert len(build_vocabulary([], 5)) == 2
    big = build_vocabulary([" ".join(f"w{i}" for i in range(500))])
    assert len(big) <= 202
    assert sorted(v.index.values()) == list(range(len(v)))


def test_encode_tokens():
    v = Vocabulary(["road", "closed", "lane"])
    np.testing.assert_array_equal(encode_tokens(v, "road closed"), [v["road"], v["closed"], 0, 0, 0])
    seven = "lane road closed a b c d"
    ids = encode_tokens(v, seven)
    assert len(ids) == 5
    np.testing.assert_array_equal(ids, [v["lane"], v["road"], v["closed"], UNK, UNK])
    np.testing.assert_array_equal(encode_tokens(v, None), [PAD] * 5)
    with pytest.raises(ValueError):
        encode_tokens(v, "x", n_tokens=0)


def test_build_snapshots_variants():
    dom = SpatioTemporalDomain(0.0, 10.0, (0.0, 0.0), (1.0, 1.0), 8.0)
    tr = NormalizationTransform.for_domain(dom)
    grid = build_grid(tr.forward_domain(dom), 4, 1)  # J = 4 at (0.5, 0.5)
    naive = build_snapshots(grid, "naive")
    assert naive.patches is None and naive.tokens is None and len(naive) == 4
    r = RasterMap(np.random.default_rng(1).random((50, 50, 3)), (0, 0, 1, 1))
    img = build_snapshots(grid, Variant.IMAGE, raster=r, transform=tr)
    for j in range(4):
        raw = tr.inverse(grid.points[j])
        np.testing.assert_array_equal(img.patches[j], extract_image_patch(r, raw[1:]))
    descs = make_descs()
    v = build_vocabulary([d.text for d in descs])
    txt = build_snapshots(grid, Variant.TEXT, descriptions=descs, vocab=v, radius=0.62,
                          transform=tr)
    assert txt.tokens.shape == (4, 5) and np.all(txt.tokens < len(v))
    # raw tau = 0, 10/3, 20/3, 10: the end points sit on interval bounds -> dummy
    np.testing.assert_array_equal(txt.tokens[[0, 3]], 0)
    expected = encode_tokens(v, descs[0].text)
    np.testing.assert_array_equal(txt.tokens[1], expected)
    np.testing.assert_array_equal(txt.tokens[2], expected)
    with pytest.raises(ConfigurationError):
        build_snapshots(grid, Variant.IMAGE)
    with pytest.raises(ConfigurationError):
        build_snapshots(grid, Variant.FULL, raster=r)
    again = build_snapshots(grid, Variant.IMAGE, raster=r, transform=tr)
    assert again.patches.tobytes() == img.patches.tobytes()
