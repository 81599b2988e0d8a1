"""Mixture-weight network ``f(u_j, z_j; theta)``.

Three blocks, all batched over representative points:

* image attention network: conv -> spatial self-attention -> 3 convs -> 2 FC
* text attention network: embedding -> conv -> word attention -> 3 convs -> 2 FC
* fusion module: 2 FC on the position, concatenated with the enabled
  encoders, ``n_layers`` FC of ``n_units`` and a softplus output unit

Matrices are stored in ``x @ W`` layout, i.e. the attention matrix written
``M1 in R^{d_a x d}`` is kept as a ``(d, d_a)`` array.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterStore, Tape
from .context import ContextSnapshot, SnapshotBatch, Variant
from .errors import ConfigurationError, ShapeError, VocabularyError


@dataclass
class NetworkConfig:
    variant: Variant = Variant.NAIVE
    n_layers: int = 4
    n_units: int = 32
    position_units: int = 32
    attention_dim: int = 32  # d_a
    attention_rows: int = 1  # r
    conv_channels: int = 8
    image_fc: int = 512
    text_fc: int = 8
    text_dropout: float = 0.1
    embed_dim: int = 16
    text_hidden: int = 16
    patch_shape: tuple = (10, 10, 3)
    n_tokens: int = 5
    vocab_size: int = 202
    compute_q_branch: bool = False
    dropout_seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.patch_shape = tuple(int(v) for v in self.patch_shape)
        if self.n_layers < 1 or self.n_units < 1:
            raise ConfigurationError("n_layers and n_units must be >= 1")
        if not 0.0 <= self.text_dropout < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {self.text_dropout}")
        if self.attention_rows != 1:
            raise ConfigurationError("only a single attention row (r = 1) is supported")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["patch_shape"] = list(self.patch_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class ForwardResult:
    f: Node
    attention: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.f.value


# -- initialization ---------------------------------------------------------

def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _add_dense(store, rng, name, n_in, n_out):
    store.add(f"{name}.W", _glorot(rng, (n_in, n_out), n_in, n_out))
    store.add(f"{name}.b", np.zeros(n_out), decay=False)


def _add_conv(store, rng, name, kshape, c_in, c_out):
    k = int(np.prod(kshape))
    store.add(f"{name}.K", _glorot(rng, (*kshape, c_in, c_out), k * c_in, k * c_out))
    store.add(f"{name}.b", np.zeros(c_out), decay=False)


def image_feature_size(config: NetworkConfig) -> int:
    return config.image_fc


def text_feature_size(config: NetworkConfig) -> int:
    return config.text_fc


def init_parameters(config: NetworkConfig, rng: np.random.Generator,
                    store: ParameterStore | None = None) -> ParameterStore:
    """Glorot-uniform weights, zero biases, for every block the variant uses."""
    store = ParameterStore() if store is None else store
    pu = config.position_units
    _add_dense(store, rng, "pos.fc1", 3, pu)
    _add_dense(store, rng, "pos.fc2", pu, pu)
    width = pu
    da = config.attention_dim
    ch = config.conv_channels
    if config.variant.uses_image:
        h, w, c = config.patch_shape
        _add_conv(store, rng, "img.Cp", (3, 3), c, c)
        if config.compute_q_branch:
            _add_conv(store, rng, "img.Cq", (3, 3), c, c)
        store.add("img.M1", _glorot(rng, (c, da), c, da))
        store.add("img.M2", _glorot(rng, (da, config.attention_rows), da, config.attention_rows))
        c_in = c
        for i in (1, 2, 3):
            _add_conv(store, rng, f"img.conv{i}", (3, 3), c_in, ch)
            c_in = ch
        _add_dense(store, rng, "img.fc1", h * w * ch, config.image_fc)
        _add_dense(store, rng, "img.fc2", config.image_fc, config.image_fc)
        width += image_feature_size(config)
    if config.variant.uses_text:
        e, hid, ns = config.embed_dim, config.text_hidden, config.n_tokens
        store.add("txt.embed", _glorot(rng, (config.vocab_size, e), config.vocab_size, e))
        _add_conv(store, rng, "txt.conv0", (3,), e, hid)
        store.add("txt.T1", _glorot(rng, (hid, da), hid, da))
        store.add("txt.T2", _glorot(rng, (da, config.attention_rows), da, config.attention_rows))
        c_in = hid
        for i in (1, 2, 3):
            _add_conv(store, rng, f"txt.conv{i}", (3,), c_in, ch)
            c_in = ch
        _add_dense(store, rng, "txt.fc1", ns * ch, config.text_fc)
        _add_dense(store, rng, "txt.fc2", config.text_fc, config.text_fc)
        width += text_feature_size(config)
    n_in = width
    for i in range(config.n_layers):
        _add_dense(store, rng, f"fuse.h{i}", n_in, config.n_units)
        n_in = config.n_units
    _add_dense(store, rng, "fuse.out", n_in, 1)
    return store


# -- blocks -----------------------------------------------------------------

def _dense(tape, x, name, act=True):
    y = ad.dense(tape, x, tape.param(f"{name}.W"), tape.param(f"{name}.b"))
    return ad.relu(tape, y) if act else y


def _conv(tape, x, name, act=True):
    y = ad.conv_same(tape, x, tape.param(f"{name}.K"), tape.param(f"{name}.b"))
    return ad.relu(tape, y) if act else y


def _attention(tape, H: Node, first: str, second: str) -> tuple[Node, Node]:
    """``softmax(M2 tanh(M1 H^T))`` over positions; returns (weights, H*weights).

    ``H`` has shape ``(B, N, d)``; weights have shape ``(B, N)``.
    """
    B, N, _ = H.shape
    s = ad.tanh(tape, ad.matmul(tape, H, tape.param(first)))
    logits = ad.reshape(tape, ad.matmul(tape, s, tape.param(second)), (B, N))
    weights = ad.softmax(tape, logits, axis=1)
    gated = ad.mul(tape, H, ad.reshape(tape, weights, (B, N, 1)))
    return weights, gated


def image_attention_forward(tape: Tape, config: NetworkConfig, patches) -> tuple[Node, np.ndarray]:
    """Image encoder on ``(B, N_h, N_w, N_c)`` patches.

    Returns the feature node ``(B, image_fc)`` and the attention maps
    ``(B, N_h, N_w)``.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 3:
        patches = patches[None]
    if patches.shape[1:] != config.patch_shape:
        raise ShapeError(f"image block: patch shape {patches.shape[1:]} != {config.patch_shape}")
    B, h, w, c = patches.shape
    x = tape.const(patches)
    P = _conv(tape, x, "img.Cp")
    if config.compute_q_branch:
        # side output only; the attention path does not consume Q
        tape.aux["img.Q"] = np.maximum(ad.conv_same(Tape(), x, Node(tape.store["img.Cq.K"]),
                                                    Node(tape.store["img.Cq.b"])).value, 0.0)
    weights, gated = _attention(tape, ad.reshape(tape, P, (B, h * w, c)), "img.M1", "img.M2")
    Bmap = ad.reshape(tape, gated, (B, h, w, c))
    y = Bmap
    for i in (1, 2, 3):
        y = _conv(tape, y, f"img.conv{i}")
    y = ad.reshape(tape, y, (B, -1))
    y = _dense(tape, y, "img.fc1")
    y = _dense(tape, y, "img.fc2")
    return y, weights.value.reshape(B, h, w)


def _dropout(tape, x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.scale_const(tape, x, mask)


def text_attention_forward(tape: Tape, config: NetworkConfig, token_ids,
                           train: bool = False,
                           rng: np.random.Generator | None = None) -> tuple[Node, np.ndarray]:
    """Text encoder on ``(B, N_s)`` token ids.

    Dropout is applied only when ``train`` is true; ``rng`` supplies the masks.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.shape[1] != config.n_tokens:
        raise ShapeError(f"text block: sequence length {ids.shape[1]} != {config.n_tokens}")
    n_v = tape.store["txt.embed"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_v):
        raise VocabularyError(f"token id outside vocabulary of size {n_v}")
    B, ns = ids.shape
    X = ad.take_rows(tape, tape.param("txt.embed"), ids)
    H = _conv(tape, X, "txt.conv0")
    weights, y = _attention(tape, H, "txt.T1", "txt.T2")
    for i in (1, 2, 3):
        y = _conv(tape, y, f"txt.conv{i}")
    y = ad.reshape(tape, y, (B, -1))
    rate = config.text_dropout if train else 0.0
    y = _dropout(tape, _dense(tape, y, "txt.fc1"), rate, rng)
    y = _dropout(tape, _dense(tape, y, "txt.fc2"), rate, rng)
    return y, weights.value


def fusion_forward(tape: Tape, config: NetworkConfig, batch, train: bool = False,
                   rng: np.random.Generator | None = None) -> ForwardResult:
    """Mixture weights ``f_j > 0`` for a :class:`SnapshotBatch` (or one snapshot)."""
    if isinstance(batch, ContextSnapshot):
        batch = SnapshotBatch.stack([batch])
    variant = config.variant
    parts = []
    pos = tape.const(np.atleast_2d(batch.positions))
    p = _dense(tape, pos, "pos.fc1")
    parts.append(_dense(tape, p, "pos.fc2"))
    attention = {}
    if variant.uses_image:
        if batch.patches is None:
            raise ConfigurationError(f"variant {variant.value!r} needs image patches")
        feat, attention["image"] = image_attention_forward(tape, config, batch.patches)
        parts.append(feat)
    if variant.uses_text:
        if batch.tokens is None:
            raise ConfigurationError(f"variant {variant.value!r} needs token ids")
        feat, attention["text"] = text_attention_forward(tape, config, batch.tokens, train, rng)
        parts.append(feat)
    y = parts[0] if len(parts) == 1 else ad.concat(tape, parts, axis=1)
    for i in range(config.n_layers):
        y = _dense(tape, y, f"fuse.h{i}")
    y = _dense(tape, y, "fuse.out", act=False)
    y = ad.reshape(tape, y, (-1,))
    return ForwardResult(ad.softplus(tape, y), attention)


def evaluate_f(store: ParameterStore, config: NetworkConfig, batch: SnapshotBatch,
               train: bool = False, seed: int | None = None) -> ForwardResult:
    """Convenience forward on a fresh tape."""
    rng = np.random.default_rng(config.dropout_seed if seed is None else seed)
    return fusion_forward(Tape(store), config, batch, train=train, rng=rng)


def backward(tape: Tape, result: ForwardResult | Node, grad=None) -> None:
    """Accumulate parameter gradients of ``grad . output`` into the store."""
    node = result.f if isinstance(result, ForwardResult) else result
    tape.backward(node, grad)
