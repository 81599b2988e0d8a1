import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dmpp.cli import main
from dmpp.config import RunConfig, load_config
from dmpp.context import EventDescription, RasterMap
from dmpp.errors import ConfigurationError, IncompatibleCheckpointError, ParseError
from dmpp.io import (load_checkpoint, load_descriptions, load_events_csv, load_raster,
                     save_checkpoint, save_descriptions, save_events_csv, save_raster)
from dmpp.kernels import kernel_box_integral
from dmpp.model import UNIT_BOX
from dmpp.synth import _truth, default_true_weights, synth_generate

from conftest import small_model

ROOT = Path(__file__).resolve().parents[1]


def write_config(tmp_path, **overrides):
    raw = json.loads((ROOT / "configs" / "synthetic.json").read_text())
    raw.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw))
    return path


def small_config(tmp_path, variant="naive", **overrides):
    raw = {"domain": {"t_min": 0, "t_max": 10, "s_min": [0, 0], "s_max": [1, 1],
                      "train_end": 8},
           "variant": variant, "M": 4, "L_per_axis": 2,
           "network": {"n_layers": 2, "n_units": 8, "position_units": 8, "attention_dim": 4,
                       "conv_channels": 2, "image_fc": 6, "text_fc": 4, "embed_dim": 4,
                       "text_hidden": 4, "patch_shape": [4, 4, 3]},
           "train": {"max_epochs": 2, "batch_size": 32},
           "paths": {"events": "events.csv"},
           "synth_expected_events": 300, "patch_px": 8}
    if variant in ("image", "full"):
        yy, xx = np.mgrid[0:16, 0:16] / 16.0
        save_raster(tmp_path / "map.ppm", RasterMap(np.stack([xx, yy, xx * yy], -1), (0, 0, 1, 1)))
        raw["paths"]["raster"] = "map.ppm"
    if variant in ("text", "full"):
        save_descriptions(tmp_path / "desc.csv", [
            EventDescription(0, 6, (0.3, 0.3), "lane closed"),
            EventDescription(4, 10, (0.7, 0.6), "road works ahead")])
        raw["paths"]["descriptions"] = "desc.csv"
    raw.update(overrides)
    path = tmp_path / f"{variant}.json"
    path.write_text(json.dumps(raw))
    return path


# -- events -------------------------------------------------------------------

def test_events_csv_examples(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("t,s1,s2\n0.5,0.1,0.9\n")
    np.testing.assert_array_equal(load_events_csv(p), [[0.5, 0.1, 0.9]])
    p.write_text("t,s1,s2\n3,0,0\n1,0.1,0\n3,0.2,0\n1,0.3,0\n")
    np.testing.assert_array_equal(load_events_csv(p)[:, 1], [0.1, 0.3, 0.0, 0.2])
    p.write_text("t,s1,s2\n1,NaN,0\n")
    with pytest.raises(ParseError, match=":2:"):
        load_events_csv(p)
    p.write_text("")
    assert load_events_csv(p).shape == (0, 3)
    p.write_text("t,s1,s2\n1,2\n")
    with pytest.raises(ParseError, match=":2:"):
        load_events_csv(p)


def test_events_round_trip(tmp_path, rng):
    ev = rng.random((50, 3))
    ev = ev[np.argsort(ev[:, 0])]
    save_events_csv(tmp_path / "e.csv", ev)
    np.testing.assert_array_equal(load_events_csv(tmp_path / "e.csv"), ev)


# -- rasters and descriptions ------------------------------------------------------

def test_white_raster(tmp_path):
    p = tmp_path / "w.ppm"
    p.write_text("P3\n2 2\n255\n255 255 255 255 255 255\n255 255 255 255 255 255\n")
    (tmp_path / "w.ppm.geo").write_text("geo: 0 0 1 1\n")
    r = load_raster(p)
    assert r.pixels.shape == (2, 2, 3)
    np.testing.assert_array_equal(r.pixels, 1.0)
    assert tuple(r.bounds) == (0, 0, 1, 1)


def test_raster_comment_georeference_and_round_trip(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_text("P3\n# geo: -1 -2 3 4\n1 1\n10\n0 5 10\n")
    r = load_raster(p)
    np.testing.assert_allclose(r.pixels[0, 0], [0, 0.5, 1])
    save_raster(tmp_path / "d.ppm", r, maxval=10)
    back = load_raster(tmp_path / "d.ppm")
    np.testing.assert_array_equal(back.pixels, r.pixels)
    assert tuple(back.bounds) == (-1, -2, 3, 4)


def test_raster_missing_georeference(tmp_path):
    p = tmp_path / "n.ppm"
    p.write_text("P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ParseError, match="georeference"):
        load_raster(p)


def test_description_examples(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text('t_start,t_end,s1,s2,text\n0,10,0.5,0.5,"road closed"\n')
    (d,) = load_descriptions(p)
    assert (d.t_start, d.t_end, tuple(d.location)) == (0, 10, (0.5, 0.5))
    assert list(d.text) == ["road", "closed"]
    p.write_text('t_start,t_end,s1,s2,text\n0,10,0.5,0.5,"ok"\n5,2,0.1,0.1,"backwards"\n')
    with pytest.raises(ParseError, match=":3:"):
        load_descriptions(p)
    save_descriptions(tmp_path / "e.csv", [d])
    assert list(load_descriptions(tmp_path / "e.csv")[0].text) == ["road", "closed"]


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    model = small_model(seed=3)
    for k in model.store:
        model.store.set(k, model.store[k] + rng.normal(scale=0.1, size=model.store[k].shape))
    save_checkpoint(tmp_path / "c.json", model.store, {"variant": "naive"}, [{"epoch": 1}])
    ck = load_checkpoint(tmp_path / "c.json")
    other = small_model(seed=9)
    other.store = ck.store()
    for k in model.store:
        np.testing.assert_array_equal(other.store[k], model.store[k])
        assert other.store.decay[k] == model.store.decay[k]
    X = rng.random((100, 3))
    for x in X:
        assert other.intensity_at(x) == model.intensity_at(x)
    assert ck.history == [{"epoch": 1}]


def test_checkpoint_errors(tmp_path):
    model = small_model()
    p = tmp_path / "c.json"
    save_checkpoint(p, model.store, {"variant": "image"})
    text = p.read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "t.json")
    with pytest.raises(ConfigurationError):
        load_checkpoint(p, expected_variant="text")
    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "v.json")


# -- config and synthetic data -------------------------------------------------------

def test_config_round_trip_and_validation(tmp_path):
    cfg = load_config(small_config(tmp_path, "full"))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigurationError, match="missing"):
        load_config(small_config(tmp_path, "naive", paths={"raster": "nope.ppm"}))
    with pytest.raises(ConfigurationError):
        load_config(small_config(tmp_path, "naive", M=1))
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.json")


def test_synth_tiny_weights_give_near_empty_output(tmp_path):
    cfg = load_config(small_config(tmp_path), check_paths=False)
    J = cfg.J
    events, desc = synth_generate(cfg, np.full(J, 1e-12), seed=0)
    assert len(events) == 0 and desc["n_events"] == 0
    assert desc["expected_count"] < 1e-9
    with pytest.raises(ConfigurationError):
        synth_generate(cfg, np.r_[np.ones(J - 1), 0.0])
    with pytest.raises(ConfigurationError):
        synth_generate(cfg, np.ones(J + 1))


def test_synth_expected_count_and_domain(tmp_path):
    cfg = load_config(small_config(tmp_path), check_paths=False)
    events, desc = synth_generate(cfg, seed=4)
    _, grid, kp = _truth(cfg)
    w = np.asarray(desc["weights"])
    np.testing.assert_allclose(desc["expected_count"],
                               w @ kernel_box_integral(kp, grid.points, UNIT_BOX), rtol=1e-14)
    np.testing.assert_allclose(desc["expected_count"], cfg.synth_expected_events, rtol=1e-12)
    assert np.all(cfg.domain.contains(events))
    assert np.all(np.diff(events[:, 0]) >= 0)


def test_synth_counts_over_seeds(tmp_path):
    cfg = load_config(small_config(tmp_path), check_paths=False)
    w = default_true_weights(cfg) * (40.0 / cfg.synth_expected_events)
    counts = np.array([len(synth_generate(cfg, w, seed=s)[0]) for s in range(200)])
    assert abs(counts.mean() - 40.0) <= 3 * np.sqrt(40.0 / 200)


# -- command line ----------------------------------------------------------------

def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    return code


def test_end_to_end_on_synthetic_defaults(tmp_path):
    cfg = write_config(tmp_path)
    t0 = time.perf_counter()
    assert run(["synth", "--config", cfg]) == 0
    assert (tmp_path / "events.csv").exists() and (tmp_path / "events.truth.json").exists()
    assert run(["train", "--config", cfg, "--out", tmp_path / "ck.json"]) == 0
    assert run(["evaluate", "--config", cfg, "--checkpoint", tmp_path / "ck.json",
                "--out", tmp_path / "metrics.json"]) == 0
    assert run(["predict", "--config", cfg, "--checkpoint", tmp_path / "ck.json",
                "--partition", "10x10x14", "--out", tmp_path / "counts.csv"]) == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 120
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics) >= {"loglike_per_event", "mape", "n_test"}
    assert np.isfinite(metrics["loglike_per_event"]) and metrics["mape"] >= 0
    rows = (tmp_path / "counts.csv").read_text().strip().splitlines()
    assert rows[0] == "cell_r,bin_t,expected" and len(rows) == 1 + 1400
    ll = json.loads((tmp_path / "counts.loglike.json").read_text())
    np.testing.assert_allclose(ll["loglike_per_event"], metrics["loglike_per_event"], rtol=1e-12)
    hist = (tmp_path / "ck.history.csv").read_text().splitlines()
    assert len(hist) == 1 + 50


def test_evaluate_hp_only_matches_closed_form(tmp_path):
    cfg_path = small_config(tmp_path)
    assert run(["synth", "--config", cfg_path, "--seed", 3]) == 0
    out = tmp_path / "hp.json"
    assert run(["evaluate", "--config", cfg_path, "--hp-only", "--out", out]) == 0
    metrics = json.loads(out.read_text())
    raw = load_events_csv(tmp_path / "events.csv")
    train_ev = raw[raw[:, 0] <= 8]
    test_ev = raw[raw[:, 0] > 8]
    rate = len(train_ev) / (8 * 1.0)
    n = len(test_ev)
    closed = (n * np.log(rate) - rate * 2 * 1.0) / n
    np.testing.assert_allclose(metrics["loglike_per_event"], closed, rtol=1e-12)
    assert metrics["model"] == "hp" and metrics["n_test"] == n


def test_train_simulate_and_gradcheck(tmp_path):
    cfg = small_config(tmp_path)
    assert run(["synth", "--config", cfg]) == 0
    assert run(["train", "--config", cfg, "--out", tmp_path / "a.json"]) == 0
    assert run(["simulate", "--config", cfg, "--checkpoint", tmp_path / "a.json",
                "--out", tmp_path / "sim.csv", "--seed", 5]) == 0
    sim = load_events_csv(tmp_path / "sim.csv")
    assert len(sim) > 0 and np.all((sim[:, 0] >= 8) & (sim[:, 0] <= 10))
    assert run(["gradcheck", "--config", cfg, "--checkpoint", tmp_path / "a.json"]) == 0


@pytest.mark.parametrize("variant", ["image", "text"])
def test_context_variants_through_cli(tmp_path, variant):
    cfg = small_config(tmp_path, variant)
    assert run(["synth", "--config", cfg]) == 0
    assert run(["train", "--config", cfg, "--out", tmp_path / "c.json"]) == 0
    assert run(["evaluate", "--config", cfg, "--checkpoint", tmp_path / "c.json",
                "--out", tmp_path / "m.json"]) == 0
    name = "attention_image.csv" if variant == "image" else "attention_text.csv"
    lines = (tmp_path / name).read_text().splitlines()
    per_point = 16 if variant == "image" else 5
    assert len(lines) == 1 + 16 * per_point
    ck_other = tmp_path / "c.json"
    other = small_config(tmp_path, "text" if variant == "image" else "image")
    assert run(["predict", "--config", other, "--checkpoint", ck_other]) == 1


def test_commands_are_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    outs = []
    for i in range(2):
        ev = tmp_path / f"ev{i}.csv"
        assert run(["synth", "--config", cfg, "--seed", 11, "--out", ev]) == 0
        ck = tmp_path / f"ck{i}.json"
        assert run(["train", "--config", cfg, "--events", ev, "--seed", 2, "--out", ck]) == 0
        sim = tmp_path / f"sim{i}.csv"
        assert run(["simulate", "--config", cfg, "--checkpoint", ck, "--seed", 1,
                    "--out", sim]) == 0
        outs.append([p.read_bytes() for p in (ev, ck, sim)])
    assert outs[0] == outs[1]


def test_inputs_are_not_modified(tmp_path):
    cfg = small_config(tmp_path)
    assert run(["synth", "--config", cfg]) == 0
    before = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert run(["train", "--config", cfg, "--out", tmp_path / "ck.json"]) == 0
    assert run(["evaluate", "--config", cfg, "--checkpoint", tmp_path / "ck.json",
                "--out", tmp_path / "m.json"]) == 0
    for name, data in before.items():
        assert (tmp_path / name).read_bytes() == data


def test_exit_codes(tmp_path, capsys):
    cfg = small_config(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus", "--config", str(cfg)])
    assert exc.value.code == 1
    assert run(["train", "--config", tmp_path / "missing.json"]) == 1
    assert run(["train", "--config", cfg]) == 2  # events file absent
    (tmp_path / "events.csv").write_text("t,s1,s2\n1,nan,0\n")
    assert run(["train", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "events.csv:2" in err
    assert run(["predict", "--config", cfg]) == 1  # no checkpoint
    assert run(["predict", "--config", cfg, "--checkpoint", tmp_path / "nope.json"]) == 2


def test_gradcheck_failure_exit_code(tmp_path, monkeypatch):
    import dmpp.training as training
    cfg = small_config(tmp_path)
    real = training.gradient_check_model

    def broken(*a, **k):
        rep = real(*a, **k)
        rep.worst_error = 1.0
        return rep

    monkeypatch.setattr(training, "gradient_check_model", broken)
    assert run(["gradcheck", "--config", cfg]) == 3


def test_console_script_entry_point(tmp_path):
    cfg = small_config(tmp_path)
    res = subprocess.run([sys.executable, "-m", "dmpp.cli", "synth", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "wrote" in res.stderr and res.stdout == ""
    exe = shutil.which("dmpp")
    if exe:
        res = subprocess.run([exe, "gradcheck", "--config", str(cfg)], capture_output=True,
                             text=True)
        assert res.returncode == 0 and "worst relative error" in res.stdout
