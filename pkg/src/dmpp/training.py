"""Mini-batch Adam ascent on the log-likelihood, plus a finite-difference
gradient checker."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import TextIO

import numpy as np

from .autodiff import ParameterStore
from .errors import (ConfigurationError, DegenerateLikelihoodError, DivergedStepError,
                     NumericalError)
from .kernels import Box
from .model import LOG_SIGMA, DmppModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    adam_beta1: float = 0.01
    adam_beta2: float = 0.9
    adam_epsilon: float = 1e-8
    l2_lambda: float = 0.001
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    init_output_bias: bool = True

    def __post_init__(self):
        for name in ("learning_rate", "adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {v}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigurationError("max_epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_store(cls, store: ParameterStore) -> "AdamState":
        return cls({k: np.zeros_like(x) for k, x in store.values.items()},
                   {k: np.zeros_like(x) for k, x in store.values.items()})

    def copy(self) -> "AdamState":
        return AdamState({k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()}, self.step)


def adam_step(state: AdamState, store: ParameterStore, config: TrainConfig,
              grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam *ascent* step on ``store`` (in place).

    The L2 penalty ``l2_lambda * |theta|^2`` is subtracted from the objective
    for parameters flagged ``decay`` (weights, not biases or bandwidths).
    """
    grads = store.grads if grads is None else grads
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergedStepError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, theta in store.values.items():
        g = grads[name]
        if store.decay[name] and config.l2_lambda:
            g = g - 2.0 * config.l2_lambda * theta
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta += config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_epsilon)
    store.touch()


def adam_step_bound(config: TrainConfig, step: int) -> float:
    """Largest possible per-coordinate update magnitude at ``step``.

    Cauchy-Schwarz on the moment sums gives
    ``|m_t| / sqrt(v_t) <= (1-b1) / sqrt(1-b2) * sqrt(sum_i (b1^2/b2)^i)``.
    """
    b1, b2 = config.adam_beta1, config.adam_beta2
    geo = np.sum((b1 * b1 / b2) ** np.arange(step))
    return float(config.learning_rate * (1 - b1) * np.sqrt(geo * (1 - b2 ** step)) / (
        (1 - b1 ** step) * np.sqrt(1 - b2)))


@dataclass
class TrainResult:
    model: DmppModel
    history: list[dict]
    best_epoch: int
    rejected_steps: int = 0


def init_output_bias(model: DmppModel, n_events: int, region: Box) -> None:
    """Set the output bias so the initial expected count over ``region``
    equals ``n_events``."""
    f = model.f_values()
    expected = model.expected_count(region)
    if expected <= 0 or n_events <= 0:
        return
    target = f * (n_events / expected)
    # shift pre-activations by the mean softplus-inverse offset
    inv = lambda y: y + np.log(-np.expm1(-y))
    shift = float(np.mean(inv(target) - inv(f)))
    b = model.store["fuse.out.b"].copy()
    model.store.set("fuse.out.b", b + shift)


def _param_norms(store: ParameterStore) -> dict[str, float]:
    return {k: float(np.linalg.norm(v)) for k, v in store.values.items()}


def _step_ok(model: DmppModel, events, idx, N, region, seed) -> bool:
    """The batch objective stays finite and every training event keeps a
    positive intensity (otherwise a later batch would hit log 0)."""
    try:
        after = model.minibatch_objective(events, idx, N, region, train=True, seed=seed,
                                          backward=False)
    except NumericalError:
        return False
    if not np.isfinite(after):
        return False
    lam = model.intensity(events)
    return bool(np.all(lam > 0) and np.all(np.isfinite(lam)))


def train(model: DmppModel, train_events: np.ndarray, train_region: Box,
          config: TrainConfig, val_events: np.ndarray | None = None,
          val_region: Box | None = None, progress: TextIO | None = None) -> TrainResult:
    """Maximize the mini-batch log-likelihood with Adam.

    Each epoch is one pass over a seeded permutation of the training events.
    With validation data, the parameters of the best epoch (by validation
    log-likelihood per event on the points inside the validation window) are
    restored at the end and training stops after ``patience`` epochs without
    improvement.
    """
    from .evaluation import window_log_likelihood

    events = np.asarray(train_events, dtype=np.float64).reshape(-1, 3)
    N = len(events)
    if N == 0:
        raise ConfigurationError("training set is empty")
    use_val = val_events is not None and val_region is not None and len(val_events) > 0
    rng = np.random.default_rng(config.seed)
    if config.init_output_bias:
        init_output_bias(model, N, train_region)
    state = AdamState.for_store(model.store)
    history: list[dict] = []
    best_score, best_state, best_epoch = -np.inf, model.store.state(), 0
    stale = 0
    rejected = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(N)
        batch_values = []
        for b, start in enumerate(range(0, N, config.batch_size)):
            idx = order[start:start + config.batch_size]
            seed = int(rng.integers(2**31))
            model.store.zero_grad()
            try:
                value = model.minibatch_objective(events, idx, N, train_region, train=True,
                                                  seed=seed)
            except DegenerateLikelihoodError as exc:
                # only reachable through a dropout draw; no usable gradient
                log.warning("epoch %d batch %d: skipped (%s)", epoch, b, exc)
                rejected += 1
                continue
            if not np.isfinite(value):
                raise NumericalError(
                    f"objective {value} at epoch {epoch}, batch {b}; "
                    f"parameter norms {_param_norms(model.store)}")
            batch_values.append(value)
            saved, saved_state = model.store.state(), state.copy()
            adam_step(state, model.store, config)
            if not _step_ok(model, events, idx, N, train_region, seed):
                log.warning("epoch %d batch %d: rejected step", epoch, b)
                model.store.load_state(saved)
                state = saved_state
                rejected += 1
        train_obj = float(np.mean(batch_values)) if batch_values else float("nan")
        if use_val:
            score = window_log_likelihood(model, val_events, val_region)[1]
        else:
            score = train_obj
        history.append({"epoch": epoch, "train_objective": train_obj,
                        "val_loglike_per_event": score if use_val else None})
        if progress is not None:
            print(f"{epoch},{train_obj!r},{score!r}" if use_val else f"{epoch},{train_obj!r},",
                  file=progress, flush=True)
        if score > best_score:
            best_score, best_state, best_epoch, stale = score, model.store.state(), epoch, 0
        else:
            stale += 1
            if use_val and stale >= config.patience:
                break
    if use_val:
        model.store.load_state(best_state)
    else:
        best_epoch = len(history)
    return TrainResult(model, history, best_epoch, rejected)


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    worst_error: float
    worst_parameter: str
    checked: int
    skipped: int
    errors: dict[str, float]

    @property
    def ok(self) -> bool:
        return self.worst_error < 1e-4


def relative_error(a: float, b: float, floor: float = 1e-5) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _relu_pattern(model: DmppModel, seed: int) -> list[np.ndarray]:
    tape, _ = model.forward(train=True, seed=seed)
    return tape.relu_masks


def gradient_check_model(model: DmppModel, events, region: Box, sample: int = 100,
                         step: float = 1e-5, seed: int = 0,
                         batch_indices=None) -> GradCheckReport:
    """Compare the analytic objective gradient with central differences.

    Checks ``sample`` randomly chosen network coordinates plus every
    ``log_sigma`` entry. Both sides use the same dropout seed. Coordinates
    whose perturbation flips a ReLU activation (a kink, where differences
    are meaningless) are skipped and counted.
    """
    events = np.asarray(events, dtype=np.float64).reshape(-1, 3)
    N = len(events)
    idx = np.arange(N) if batch_indices is None else np.asarray(batch_indices)
    rng = np.random.default_rng(seed)
    dropout_seed = int(rng.integers(2**31))
    store = model.store
    store.zero_grad()
    model.minibatch_objective(events, idx, N, region, train=True, seed=dropout_seed)
    analytic = {k: g.copy() for k, g in store.grads.items()}
    base_pattern = _relu_pattern(model, dropout_seed)

    coords = [(LOG_SIGMA, d) for d in range(3)]
    names = [k for k in store if k != LOG_SIGMA]
    sizes = np.array([store[k].size for k in names])
    flat = rng.choice(sizes.sum(), size=min(sample, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    for c in np.sort(flat):
        i = int(np.searchsorted(bounds, c, side="right"))
        coords.append((names[i], int(c - (bounds[i - 1] if i else 0))))

    def objective():
        return model.minibatch_objective(events, idx, N, region, train=True,
                                         seed=dropout_seed, backward=False)

    errors: dict[str, float] = {}
    worst, worst_name, skipped = 0.0, "", 0
    for name, k in coords:
        arr = store.values[name]
        old = arr.flat[k]
        arr.flat[k] = old + step
        store.touch()
        fp = objective()
        kink = name != LOG_SIGMA and _pattern_changed(base_pattern, _relu_pattern(model, dropout_seed))
        arr.flat[k] = old - step
        store.touch()
        fm = objective()
        kink = kink or (name != LOG_SIGMA
                        and _pattern_changed(base_pattern, _relu_pattern(model, dropout_seed)))
        arr.flat[k] = old
        store.touch()
        if kink:
            skipped += 1
            continue
        numeric = (fp - fm) / (2 * step)
        err = relative_error(float(analytic[name].flat[k]), numeric)
        key = f"{name}[{k}]"
        errors[key] = err
        if err >= worst:
            worst, worst_name = err, key
    store.zero_grad()
    return GradCheckReport(worst, worst_name, len(errors), skipped, errors)


def _pattern_changed(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return any(not np.array_equal(x, y) for x, y in zip(a, b))
