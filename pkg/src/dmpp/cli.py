"""Command-line front end.

Exit codes: 0 success, 1 usage/configuration error, 2 bad input data,
3 numerical failure. Diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigurationError, DataError, DmppError, IncompatibleCheckpointError
from .evaluation import (Partition, count_events, fit_hp, hp_counts, hp_log_likelihood,
                         mape, predict_counts, simulate_thinning, test_log_likelihood,
                         window_mask)
from .io import load_checkpoint, load_events_csv, save_checkpoint, save_events_csv
from .kernels import Box
from .model import DmppModel
from .pipeline import Prepared, prepare

log = logging.getLogger("dmpp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


# -- helpers ------------------------------------------------------------------

def _events_path(args, config: RunConfig) -> Path:
    p = args.events or config.path("events")
    if p is None:
        raise ConfigurationError("no events file: pass --events or set paths.events")
    return Path(p)


def _read_events(args, config: RunConfig) -> np.ndarray:
    path = _events_path(args, config)
    if not path.exists():
        raise DataError(f"events file not found: {path}")
    return load_events_csv(path)


def _restore(args, config: RunConfig) -> tuple[Prepared, DmppModel, dict]:
    if not args.checkpoint:
        raise ConfigurationError("this command needs --checkpoint")
    ckpt = load_checkpoint(args.checkpoint, expected_variant=config.variant)
    saved = RunConfig.from_dict(ckpt.config, check_paths=False)
    saved.paths = config.paths
    prep = prepare(saved, vocab_words=ckpt.vocab)
    model = prep.new_model()
    fresh = {k: v.shape for k, v in model.store.values.items()}
    stored = {k: v.shape for k, (v, _) in ckpt.params.items()}
    if fresh != stored:
        raise IncompatibleCheckpointError(
            "checkpoint parameters do not match the configured network: "
            f"{sorted(set(fresh) ^ set(stored)) or 'shape mismatch'}")
    model.store = ckpt.store()
    return prep, model, ckpt.config


def _partition(args, prep: Prepared) -> Partition:
    return Partition.parse(args.partition, prep.test_box)


def _output(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _raw_loglike(total: float, n: int, prep: Prepared) -> float:
    # densities in raw units differ by the Jacobian of the normalization
    return total - n * prep.transform.log_jacobian


# -- commands -----------------------------------------------------------------

def cmd_synth(args, config: RunConfig) -> None:
    from .synth import synth_generate

    weights = None
    if args.weights:
        weights = json.loads(Path(args.weights).read_text())
        weights = weights["weights"] if isinstance(weights, dict) else weights
    seed = config.seed if args.seed is None else args.seed
    events, desc = synth_generate(config, weights, seed=seed)
    out = _output(args.out or _events_path(args, config))
    save_events_csv(out, events)
    _write_json(_sibling(out, ".truth.json"), desc)
    print(f"wrote {len(events)} events to {out} (expected {desc['expected_count']:.3f})",
          file=sys.stderr)


def cmd_train(args, config: RunConfig) -> None:
    from .training import train

    if args.seed is not None:
        config.seed = args.seed
        config.train.seed = args.seed
    prep = prepare(config)
    train_ev, _ = prep.split(_read_events(args, config))
    region = prep.train_box
    val_ev = val_box = None
    if config.val_start is not None:
        vs = float(prep.transform.forward([config.val_start, 0.0, 0.0])[0])
        T = prep.unit_domain.train_end
        val_ev = train_ev[train_ev[:, 0] > vs]
        train_ev = train_ev[train_ev[:, 0] <= vs]
        region = Box([0.0, 0.0, 0.0], [vs, 1.0, 1.0])
        val_box = Box([vs, 0.0, 0.0], [T, 1.0, 1.0])
    model = prep.new_model()
    print("epoch,train_objective,val_loglike_per_event", flush=True)
    result = train(model, train_ev, region, config.train, val_ev, val_box, progress=sys.stdout)
    out = _output(args.out or "checkpoint.json")
    save_checkpoint(out, model.store, config.to_dict(), result.history,
                    None if prep.vocab is None else prep.vocab.words)
    with _sibling(out, ".history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_objective", "val_loglike_per_event"])
        for h in result.history:
            v = h["val_loglike_per_event"]
            w.writerow([h["epoch"], repr(h["train_objective"]), "" if v is None else repr(v)])
    print(f"best epoch {result.best_epoch}; checkpoint {out}", file=sys.stderr)


def cmd_predict(args, config: RunConfig) -> None:
    prep, model, _ = _restore(args, config)
    part = _partition(args, prep)
    grid = predict_counts(model, part)
    out = _output(args.out or "counts.csv")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_r", "bin_t", "expected"])
        for r, b, v in grid.rows():
            w.writerow([r, b, repr(v)])
    summary = {"expected_total": grid.total, "partition": list(part.shape)}
    path = args.events or config.path("events")
    if path is not None and Path(path).exists():
        _, test_ev = prep.split(load_events_csv(path))
        total, _ = test_log_likelihood(model, test_ev, prep.test_box)
        n = len(test_ev)
        raw = _raw_loglike(total, n, prep)
        summary.update({"loglike": raw, "loglike_per_event": raw / n if n else None,
                        "n_test": n})
    _write_json(_sibling(out, ".loglike.json"), summary)


def cmd_simulate(args, config: RunConfig) -> None:
    prep, model, _ = _restore(args, config)
    if args.region == "test":
        region = prep.test_box
        active = window_mask(model, region)
    else:
        region, active = prep.train_box, None
    seed = config.seed if args.seed is None else args.seed
    events = simulate_thinning(model, region, seed=seed, active=active)
    out = _output(args.out or "simulated.csv")
    save_events_csv(out, prep.transform.inverse(events))
    print(f"wrote {len(events)} simulated events to {out}", file=sys.stderr)


def _dump_attention(model: DmppModel, out_dir: Path) -> None:
    att = model.attention()
    if "image" in att:
        with (out_dir / "attention_image.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_j", "row", "col", "weight"])
            for j, A in enumerate(att["image"]):
                for (r, c), v in np.ndenumerate(A):
                    w.writerow([j, r, c, repr(float(v))])
    if "text" in att:
        tokens = model.snapshots.tokens
        with (out_dir / "attention_text.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_j", "position", "token_id", "weight"])
            for j, A in enumerate(att["text"]):
                for k, v in enumerate(A):
                    w.writerow([j, k, int(tokens[j, k]), repr(float(v))])


def cmd_evaluate(args, config: RunConfig) -> None:
    out = _output(args.out or "metrics.json")
    if args.hp_only:
        prep = prepare(config)
        train_ev, test_ev = prep.split(_read_events(args, config))
        hp = fit_hp(train_ev, prep.train_box)
        part = _partition(args, prep)
        total = hp_log_likelihood(hp, test_ev, prep.test_box)
        pred = hp_counts(hp, part)
        model_name = "hp"
    else:
        prep, model, _ = _restore(args, config)
        _, test_ev = prep.split(_read_events(args, config))
        part = _partition(args, prep)
        total, _ = test_log_likelihood(model, test_ev, prep.test_box)
        pred = predict_counts(model, part)
        _dump_attention(model, out.parent)
        model_name = "dmpp"
    n = len(test_ev)
    raw = _raw_loglike(total, n, prep)
    metrics = {"loglike_per_event": raw / n if n else None,
               "mape": mape(count_events(test_ev, part), pred),
               "n_test": n, "model": model_name, "partition": list(part.shape)}
    _write_json(out, metrics)
    print(json.dumps(metrics), file=sys.stderr)


def cmd_gradcheck(args, config: RunConfig) -> int:
    from .training import gradient_check_model

    if args.checkpoint:
        prep, model, _ = _restore(args, config)
    else:
        prep = prepare(config)
        model = prep.new_model()
    seed = config.seed if args.seed is None else args.seed
    path = args.events or config.path("events")
    if path is not None and Path(path).exists():
        train_ev, _ = prep.split(load_events_csv(path))
        events = train_ev[:args.n_events]
    else:
        rng = np.random.default_rng(seed)
        box = prep.train_box
        events = box.lower + (box.upper - box.lower) * rng.random((args.n_events, 3))
    report = gradient_check_model(model, events, prep.train_box, sample=args.sample, seed=seed)
    print(f"worst relative error {report.worst_error:.3e} at {report.worst_parameter} "
          f"({report.checked} checked, {report.skipped} skipped at ReLU kinks)")
    return 0 if report.ok else 3


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmpp", description="Spatio-temporal mixture point process models")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, *flags):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="RunConfig JSON file")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        if "events" in flags:
            s.add_argument("--events", default=None, help="events CSV (default: paths.events)")
        if "checkpoint" in flags:
            s.add_argument("--checkpoint", default=None)
        if "partition" in flags:
            s.add_argument("--partition", default="default", help="'default' or MxNxB")
        return s

    s = add("synth", "sample events from a known mixture intensity", "events")
    s.add_argument("--weights", default=None, help="JSON list (or descriptor) of true weights")
    add("train", "fit a model", "events")
    add("predict", "expected counts per cell", "events", "checkpoint", "partition")
    s = add("simulate", "thinning simulation from a trained model", "checkpoint")
    s.add_argument("--region", choices=("test", "train"), default="test")
    s = add("evaluate", "forecast metrics and attention dumps", "events", "checkpoint",
            "partition")
    s.add_argument("--hp-only", action="store_true", help="score the homogeneous Poisson baseline")
    s = add("gradcheck", "finite-difference gradient check", "events", "checkpoint")
    s.add_argument("--n-events", type=int, default=5)
    s.add_argument("--sample", type=int, default=100)
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
            "simulate": cmd_simulate, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        code = COMMANDS[args.command](args, config)
        return int(code or 0)
    except DmppError as exc:
        print(f"dmpp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"dmpp {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dmpp {args.command}: invalid value: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"dmpp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
