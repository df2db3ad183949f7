"""Temporal encoding, multi-head self-attention refiner, and its training.

Tokens are flattened per-frame point coordinates (d = 3K), expressed in a
normalized frame (grid-centered, divided by half the grid extent) so they
live on the same [-1, 1] scale as the sinusoidal encoding. The refiner is
three residual blocks of multi-head attention + feed-forward with learnable
layer scales; output projections start at zero, so an untrained model is an
exact identity on the tokens.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import DivergenceDetected, EmptyDataset, ShapeMismatch
from .eqfeatures import FilterBank

N_LAYERS = 3
FF_EXPANSION = 4
WEIGHT_DECAY = 1e-4

MODEL_MAGIC = b"SPAERMDL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (T, d)
    frame_times: np.ndarray  # (T,)

    def __post_init__(self):
        tok = np.asarray(self.tokens, dtype=float)
        if tok.ndim != 2:
            raise ShapeMismatch(f"tokens must be (T, d), got {tok.shape}")
        ft = np.asarray(self.frame_times, dtype=float).reshape(tok.shape[0])
        tok.setflags(write=False)
        ft.setflags(write=False)
        object.__setattr__(self, "tokens", tok)
        object.__setattr__(self, "frame_times", ft)


def positional_encoding(n_frames: int, dim: int) -> np.ndarray:
    """(T, d) sinusoidal encoding: sin/cos(alpha_i * t), alpha_i = 10^(-8i/d)."""
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    t = np.arange(n_frames, dtype=float)[:, None]
    i = np.arange(dim // 2, dtype=float)[None, :]
    alpha = 10.0 ** (-8.0 * i / dim)
    rho = np.empty((n_frames, dim))
    rho[:, 0::2] = np.sin(alpha * t)
    rho[:, 1::2] = np.cos(alpha * t)
    return rho


# ---------------------------------------------------------------------------
# Parameters

_LAYER_TENSORS = ("wq", "wk", "wv", "wo", "w1", "w2", "ls_attn", "ls_ff")


@dataclass(frozen=True)
class AttentionParams:
    dim: int
    heads: int
    layers: tuple[dict, ...]  # per layer: name -> ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in fixed declaration order."""
        out = []
        for li, layer in enumerate(self.layers):
            for name in _LAYER_TENSORS:
                out.append((f"layer{li}.{name}", layer[name]))
        return out

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.dim, self.heads,
                               tuple({k: v.copy() for k, v in l.items()}
                                     for l in self.layers))


def init_params(dim: int, heads: int = 4, seed: int = 0) -> AttentionParams:
    """Seeded init; wo and w2 start at zero so the refiner is the identity."""
    if dim % heads != 0:
        raise ShapeMismatch(f"dim {dim} not divisible by heads {heads}")
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = 1.0 / np.sqrt(dim)
    layers = []
    for _ in range(N_LAYERS):
        layers.append({
            "wq": rng.normal(0.0, scale, (dim, dim)),
            "wk": rng.normal(0.0, scale, (dim, dim)),
            "wv": rng.normal(0.0, scale, (dim, dim)),
            "wo": np.zeros((dim, dim)),
            "w1": rng.normal(0.0, scale, (dim, FF_EXPANSION * dim)),
            "w2": np.zeros((FF_EXPANSION * dim, dim)),
            "ls_attn": np.ones(dim),
            "ls_ff": np.ones(dim),
        })
    return AttentionParams(dim, heads, tuple(layers))


def _forward(tokens: np.ndarray, rho: np.ndarray,
             layers: list[dict[str, Tensor]], heads: int) -> Tensor:
    n_frames, dim = tokens.shape
    dh = dim // heads
    inv_sqrt = 1.0 / np.sqrt(dh)
    h0 = Tensor(tokens + rho, requires_grad=False)
    h = h0
    for layer in layers:
        q = (h @ layer["wq"]).reshape(n_frames, heads, dh).transpose(1, 0, 2)
        k = (h @ layer["wk"]).reshape(n_frames, heads, dh).transpose(1, 0, 2)
        v = (h @ layer["wv"]).reshape(n_frames, heads, dh).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * inv_sqrt
        attn = scores.softmax()
        mixed = (attn @ v).transpose(1, 0, 2).reshape(n_frames, dim)
        h = h + layer["ls_attn"] * (mixed @ layer["wo"])
        ff = (h @ layer["w1"]).relu() @ layer["w2"]
        h = h + layer["ls_ff"] * ff
    # tokens + accumulated refinement: exactly the input tokens at zero init
    return Tensor(tokens, requires_grad=False) + (h - h0)


def _lift(params: AttentionParams) -> list[dict[str, Tensor]]:
    return [{k: Tensor(v) for k, v in layer.items()} for layer in params.layers]


def forward_tokens(seq: TokenSequence, params: AttentionParams,
                   layers: list[dict[str, Tensor]] | None = None) -> Tensor:
    """Refined tokens as a Tensor (graph retained for training)."""
    n_frames, dim = seq.tokens.shape
    if dim != params.dim:
        raise ShapeMismatch(f"token dim {dim} != params dim {params.dim}")
    rho = positional_encoding(n_frames, dim)
    if layers is None:
        layers = _lift(params)
    return _forward(seq.tokens, rho, layers, params.heads)


def attend(seq: TokenSequence, params: AttentionParams) -> TokenSequence:
    """Refine a token sequence; identity when output projections are zero."""
    out = forward_tokens(seq, params)
    return TokenSequence(out.data, seq.frame_times)


def gradient(loss_fn, params: AttentionParams) -> tuple[float, dict[str, np.ndarray]]:
    """Reverse-mode gradients of loss_fn(lifted-params) w.r.t. every tensor."""
    layers = _lift(params)
    loss = loss_fn(layers)
    loss.backward()
    grads = {}
    for li, layer in enumerate(layers):
        for name in _LAYER_TENSORS:
            grads[f"layer{li}.{name}"] = layer[name].grad
    return float(loss.data), grads


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 4
    beta: float = 0.5
    epochs: int = 20
    seed: int = 0
    cosine_schedule: bool = True
    heads: int = 4
    weight_decay: float = WEIGHT_DECAY

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_schedule:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


@dataclass
class TrainResult:
    params: AttentionParams
    bank: FilterBank
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


class _Adam:
    def __init__(self, names, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = {n: 0.0 for n in names}
        self.v = {n: 0.0 for n in names}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** self.t)
            vhat = self.v[name] / (1 - self.b2 ** self.t)
            params[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _params_from_flat(flat: dict[str, np.ndarray], dim: int, heads: int) -> AttentionParams:
    layers = []
    for li in range(N_LAYERS):
        layers.append({name: flat[f"layer{li}.{name}"] for name in _LAYER_TENSORS})
    return AttentionParams(dim, heads, tuple(layers))


def sequence_loss(seq: TokenSequence, target: np.ndarray,
                  params: AttentionParams,
                  layers: list[dict[str, Tensor]]) -> Tensor:
    out = forward_tokens(seq, params, layers)
    return (out - Tensor(target, requires_grad=False)).square().sum()


def evaluate_surrogate(dataset, params: AttentionParams) -> float:
    total = 0.0
    for seq, target in dataset:
        out = attend(seq, params)
        total += float(np.sum((out.tokens - target) ** 2))
    return total / max(len(dataset), 1)


def train(train_set, val_set, bank: FilterBank, cfg: TrainConfig,
          image_eval=None) -> TrainResult:
    """Adam on the token-space surrogate loss; keeps the best-validation model.

    train_set / val_set: lists of (TokenSequence, target_tokens) pairs.
    image_eval: optional callable(params) -> dict of extra per-epoch metrics
    (used to log the image-space objective, which is not backpropagated).
    """
    if not train_set:
        raise EmptyDataset("no training sequences")
    dim = train_set[0][0].tokens.shape[1]
    params = init_params(dim, cfg.heads, cfg.seed)
    flat = dict(params.tensors())
    flat = {k: v.copy() for k, v in flat.items()}
    opt = _Adam(sorted(flat), cfg.learning_rate)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    result = TrainResult(params.copy(), bank)
    # the zero-init model (an exact identity) is a candidate checkpoint, so
    # the returned parameters are never worse than no refinement at all
    best_val = evaluate_surrogate(val_set if val_set else train_set, params)
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(cfg, epoch)
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            cur = _params_from_flat(flat, dim, cfg.heads)
            layers = _lift(cur)
            loss = None
            for idx in batch:
                seq, target = train_set[idx]
                term = sequence_loss(seq, target, cur, layers)
                loss = term if loss is None else loss + term
            for layer in layers:
                for name in _LAYER_TENSORS:
                    loss = loss + Tensor(cfg.weight_decay, requires_grad=False) \
                        * layer[name].square().sum()
            loss.backward()
            if not np.isfinite(loss.data):
                raise DivergenceDetected(f"loss became {loss.data} at epoch {epoch}")
            grads = {f"layer{li}.{name}": layers[li][name].grad
                     for li in range(N_LAYERS) for name in _LAYER_TENSORS}
            opt.step(flat, grads)
            epoch_loss += float(loss.data)

        cur = _params_from_flat(flat, dim, cfg.heads)
        val_loss = evaluate_surrogate(val_set, cur) if val_set else \
            evaluate_surrogate(train_set, cur)
        record = {"epoch": epoch, "lr": opt.lr,
                  "train_loss": epoch_loss / max(len(train_set), 1),
                  "val_loss": val_loss}
        if image_eval is not None:
            record.update(image_eval(cur))
        result.history.append(record)
        if not np.isfinite(val_loss):
            raise DivergenceDetected(f"validation loss became {val_loss}")
        if val_loss < best_val:
            best_val = val_loss
            result.params = cur.copy()
            result.best_epoch = epoch
    return result


# ---------------------------------------------------------------------------
# Model file: binary blob + human-readable .meta.json twin

def save_model(path: str | Path, params: AttentionParams, bank: FilterBank):
    path = Path(path)
    n_channels = bank.size
    header = MODEL_MAGIC + struct.pack("<IIIII", MODEL_VERSION, params.dim,
                                       n_channels, params.heads, N_LAYERS)
    blob = bytearray(header)
    for _, tensor in params.tensors():
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(bank.raw_gains, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))
    meta = {"magic": MODEL_MAGIC.decode(), "version": MODEL_VERSION,
            "d": params.dim, "K": n_channels, "H": params.heads,
            "layers": N_LAYERS}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_model(path: str | Path) -> tuple[AttentionParams, np.ndarray]:
    """Returns (attention params, raw filter-bank gains)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ValueError("not a model file (bad magic)")
    version, dim, n_channels, heads, n_layers = struct.unpack("<IIIII", raw[8:28])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    if n_layers != N_LAYERS:
        raise ValueError(f"unexpected layer count {n_layers}")
    offset = 28
    layers = []
    shapes = {"wq": (dim, dim), "wk": (dim, dim), "wv": (dim, dim),
              "wo": (dim, dim), "w1": (dim, FF_EXPANSION * dim),
              "w2": (FF_EXPANSION * dim, dim), "ls_attn": (dim,), "ls_ff": (dim,)}
    for _ in range(n_layers):
        layer = {}
        for name in _LAYER_TENSORS:
            shape = shapes[name]
            count = int(np.prod(shape))
            layer[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                        offset=offset).reshape(shape).copy()
            offset += count * 8
        layers.append(layer)
    gains = np.frombuffer(raw, dtype="<f8", count=n_channels, offset=offset).copy()
    return AttentionParams(dim, heads, tuple(layers)), gains
