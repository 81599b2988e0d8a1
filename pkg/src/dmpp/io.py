"""Plain-text file formats: events CSV, P3 rasters, description CSV,
JSON checkpoints."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParameterStore
from .context import EventDescription, RasterMap, Variant
from .errors import ConfigurationError, IncompatibleCheckpointError, ParseError

CHECKPOINT_VERSION = 1
EVENTS_HEADER = ["t", "s1", "s2"]
DESCRIPTIONS_HEADER = ["t_start", "t_end", "s1", "s2", "text"]


# -- events -----------------------------------------------------------------

def load_events_csv(path) -> np.ndarray:
    """Events as an ``(N, 3)`` array sorted by time (stable for ties)."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.zeros((0, 3))
        if [h.strip() for h in header] != EVENTS_HEADER:
            raise ParseError(f"{path}:1: expected header 't,s1,s2', got {','.join(header)!r}")
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 3:
                raise ParseError(f"{path}:{line_no}: expected 3 fields, got {len(rec)}")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                raise ParseError(f"{path}:{line_no}: non-numeric field in {rec}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}:{line_no}: non-finite value in {rec}")
            rows.append(vals)
    if not rows:
        return np.zeros((0, 3))
    arr = np.array(rows, dtype=np.float64)
    return arr[np.argsort(arr[:, 0], kind="stable")]


def save_events_csv(path, events) -> None:
    events = np.asarray(events, dtype=np.float64).reshape(-1, 3)
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(EVENTS_HEADER) + "\n")
        for t, s1, s2 in events:
            fh.write(f"{float(t)!r},{float(s1)!r},{float(s2)!r}\n")


# -- rasters ------------------------------------------------------------------

def _parse_geo(line: str, where: str) -> tuple[float, ...]:
    parts = line.split(":", 1)[1].split()
    try:
        vals = tuple(float(v) for v in parts)
    except ValueError:
        vals = ()
    if len(vals) != 4:
        raise ParseError(f"{where}: georeference needs 4 numbers 's1_min s2_min s1_max s2_max'")
    return vals


def load_raster(path) -> RasterMap:
    """Read a P3 PPM. The georeference comes from a ``geo:`` line in a
    ``<path>.geo`` sidecar file, or from a ``# geo:`` comment in the PPM."""
    path = Path(path)
    text = path.read_text()
    geo = None
    tokens: list[str] = []
    for line in text.splitlines():
        body, _, comment = line.partition("#")
        if comment.strip().startswith("geo:"):
            geo = _parse_geo(comment.strip(), str(path))
        tokens.extend(body.split())
    sidecar = path.with_name(path.name + ".geo")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            if line.strip().startswith("geo:"):
                geo = _parse_geo(line.strip(), str(sidecar))
    if geo is None:
        raise ParseError(f"{path}: missing georeference (expected 'geo: s1_min s2_min s1_max s2_max')")
    if not tokens or tokens[0] != "P3":
        raise ParseError(f"{path}: not a plain (P3) PPM file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        data = np.array([int(v) for v in tokens[4:]], dtype=np.float64)
    except (IndexError, ValueError):
        raise ParseError(f"{path}: malformed PPM header or pixel data") from None
    if w < 1 or h < 1 or maxval < 1 or data.size != 3 * w * h:
        raise ParseError(f"{path}: expected {3 * w * h} samples for {w}x{h}, got {data.size}")
    if data.min() < 0 or data.max() > maxval:
        raise ParseError(f"{path}: sample outside [0, {maxval}]")
    try:
        return RasterMap(data.reshape(h, w, 3) / maxval, geo)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_raster(path, raster: RasterMap, maxval: int = 255) -> None:
    """Write a P3 PPM plus its ``.geo`` sidecar."""
    path = Path(path)
    px = np.rint(np.asarray(raster.pixels) * maxval).astype(int)
    lines = ["P3", f"{raster.width} {raster.height}", str(maxval)]
    lines += [" ".join(str(v) for v in row.ravel()) for row in px]
    path.write_text("\n".join(lines) + "\n")
    b = raster.bounds
    path.with_name(path.name + ".geo").write_text(f"geo: {b[0]!r} {b[1]!r} {b[2]!r} {b[3]!r}\n")


# -- descriptions ---------------------------------------------------------------

def load_descriptions(path) -> list[EventDescription]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != DESCRIPTIONS_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(DESCRIPTIONS_HEADER)!r}")
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise ParseError(f"{path}:{line_no}: expected 5 fields, got {len(rec)}")
            try:
                t0, t1, s1, s2 = (float(v) for v in rec[:4])
            except ValueError:
                raise ParseError(f"{path}:{line_no}: non-numeric field in {rec[:4]}") from None
            if not all(math.isfinite(v) for v in (t0, t1, s1, s2)):
                raise ParseError(f"{path}:{line_no}: non-finite value")
            if t0 > t1:
                raise ParseError(f"{path}:{line_no}: t_start {t0} is after t_end {t1}")
            out.append(EventDescription(t0, t1, (s1, s2), rec[4]))
    return out


def save_descriptions(path, descriptions) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC)
        fh.write(",".join(DESCRIPTIONS_HEADER) + "\n")
        for d in descriptions:
            w.writerow([d.t_start, d.t_end, d.location[0], d.location[1], " ".join(d.text)])


# -- checkpoints ------------------------------------------------------------------

def _hex(a: np.ndarray) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


@dataclass
class ModelCheckpoint:
    version: int
    config: dict
    params: dict[str, tuple[np.ndarray, bool]]
    history: list = field(default_factory=list)
    vocab: list[str] | None = None

    @property
    def variant(self) -> Variant:
        return Variant(self.config["variant"])

    def store(self) -> ParameterStore:
        s = ParameterStore()
        for name, (value, decay) in self.params.items():
            s.add(name, value, decay)
        return s


def save_checkpoint(path, store: ParameterStore, config: dict, history=(),
                    vocab: list[str] | None = None) -> None:
    """Write parameters (hex-encoded float64) with the run config and history."""
    doc = {
        "format": "dmpp-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": config,
        "vocab": vocab,
        "params": [{"name": k, "shape": list(v.shape), "decay": bool(store.decay[k]),
                    "values": _hex(v)} for k, v in store.values.items()],
        "history": list(history),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def load_checkpoint(path, expected_variant: Variant | str | None = None) -> ModelCheckpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != "dmpp-checkpoint":
        raise ParseError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    try:
        params = {}
        for rec in doc["params"]:
            vals = np.array([float.fromhex(v) for v in rec["values"]], dtype=np.float64)
            params[rec["name"]] = (vals.reshape(rec["shape"]), bool(rec["decay"]))
        ckpt = ModelCheckpoint(doc["version"], doc["config"], params,
                               doc.get("history", []), doc.get("vocab"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed checkpoint ({exc})") from None
    if expected_variant is not None and ckpt.variant != Variant(expected_variant):
        raise ConfigurationError(
            f"checkpoint holds a {ckpt.variant.value!r} model, run is {Variant(expected_variant).value!r}")
    return ckpt
