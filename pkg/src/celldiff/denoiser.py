"""Bidirectional dual-head transformer denoiser.

Pre-norm blocks (RMSNorm) with rotary-position attention over serialized
rank positions and SwiGLU feed-forward layers.  Input embeddings combine
a gene-identity table with a 2-layer perceptron over the scalar value;
the corruption time is injected additively as an MLP of sinusoidal time
features.  Position 0 holds the never-masked latent anchor token whose
final hidden state summarizes the cell.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .serialization import VocabError
from .tensor import Parameter, Tensor, stack


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    ffn_dim: int = 256
    vocab_size: int = 103
    max_len: int = 64          # gene positions; sequences are max_len + 1 with LAT
    rope_base: float = 10000.0
    rmsnorm_eps: float = 1e-5

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.ffn_dim,
               self.vocab_size, self.max_len) < 1:
            raise ConfigError("all model extents must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ConfigError("head dim must be even for rotary pairs")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @classmethod
    def tiny(cls, vocab_size=20):
        return cls(n_layers=2, d_model=16, n_heads=2, ffn_dim=32,
                   vocab_size=vocab_size, max_len=8)

    @classmethod
    def desk(cls, vocab_size=103, max_len=64):
        return cls(vocab_size=vocab_size, max_len=max_len)

    @classmethod
    def full_scale(cls):
        return cls(n_layers=12, d_model=512, n_heads=8, ffn_dim=2048,
                   vocab_size=41818, max_len=1200)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DenoiserOutput:
    id_logits: Tensor          # (B, L, |V|)
    value_pred: Tensor         # (B, L)
    lat_state: Tensor          # (B, d)
    attention_maps: list = None   # per layer (B, H, L, L) arrays
    pad_mask: np.ndarray = None


def sinusoidal_time_features(t, dim):
    """Fixed sin/cos features of the diffusion time, log-spaced frequencies."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = 1000.0 * t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def rope_angles(n_positions, head_dim, base):
    """Angle grid (positions x head_dim/2) with frequencies base^(-2j/d_h)."""
    if head_dim % 2 != 0:
        raise ConfigError("head dim must be even for rotary pairs")
    j = np.arange(head_dim // 2)
    omega = base ** (-2.0 * j / head_dim)
    return np.arange(n_positions)[:, None] * omega[None, :]


def rope_rotate(x, cos, sin):
    """Rotate coordinate pairs of (B, H, L, d_h) by position-wise angles."""
    even = x[..., 0::2]
    odd = x[..., 1::2]
    rot_even = even * cos - odd * sin
    rot_odd = even * sin + odd * cos
    out = stack([rot_even, rot_odd], axis=-1)
    return out.reshape(x.shape)


class Denoiser:
    def __init__(self, config, seed=0):
        self.config = config
        self._params = []
        rng = np.random.default_rng(seed)
        c = config

        def normal(name, *shape):
            return self._add(Parameter(rng.normal(0.0, 0.02, shape), name))

        def zeros(name, *shape):
            return self._add(Parameter(np.zeros(shape), name))

        def ones(name, *shape):
            return self._add(Parameter(np.ones(shape), name))

        self.tok_emb = normal("tok_emb", c.vocab_size, c.d_model)
        self.val_w1 = normal("val_mlp.w1", 1, c.d_model)
        self.val_b1 = zeros("val_mlp.b1", c.d_model)
        self.val_w2 = normal("val_mlp.w2", c.d_model, c.d_model)
        self.val_b2 = zeros("val_mlp.b2", c.d_model)
        self.time_w1 = normal("time_mlp.w1", c.d_model, c.d_model)
        self.time_b1 = zeros("time_mlp.b1", c.d_model)
        self.time_w2 = normal("time_mlp.w2", c.d_model, c.d_model)
        self.time_b2 = zeros("time_mlp.b2", c.d_model)
        self.layers = []
        for l in range(c.n_layers):
            self.layers.append({
                "norm1": ones(f"layer{l}.norm1", c.d_model),
                "wq": normal(f"layer{l}.wq", c.d_model, c.d_model),
                "wk": normal(f"layer{l}.wk", c.d_model, c.d_model),
                "wv": normal(f"layer{l}.wv", c.d_model, c.d_model),
                # residual-identity at init: block outputs start at zero
                "wo": zeros(f"layer{l}.wo", c.d_model, c.d_model),
                "norm2": ones(f"layer{l}.norm2", c.d_model),
                "wg": normal(f"layer{l}.ffn.wg", c.d_model, c.ffn_dim),
                "wu": normal(f"layer{l}.ffn.wu", c.d_model, c.ffn_dim),
                "wd": zeros(f"layer{l}.ffn.wd", c.ffn_dim, c.d_model),
            })
        self.final_norm = ones("final_norm", c.d_model)
        self.id_head_w = normal("id_head.w", c.d_model, c.vocab_size)
        self.id_head_b = zeros("id_head.b", c.vocab_size)
        self.val_head_w = normal("val_head.w", c.d_model, 1)
        self.val_head_b = zeros("val_head.b", 1)

    def _add(self, p):
        self._params.append(p)
        return p

    def parameters(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params:
            p.grad = None

    # -- checkpoint plumbing ----------------------------------------------

    def state_arrays(self):
        return {p.name: p.data for p in self._params}

    def load_arrays(self, arrays):
        for p in self._params:
            arr = np.asarray(arrays[p.name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"shape mismatch loading {p.name}: {arr.shape} vs "
                    f"{p.data.shape}")
            p.data = arr.copy()

    # -- building blocks ---------------------------------------------------

    def _rmsnorm(self, x, gamma):
        ms = (x * x).mean(axis=-1, keepdims=True)
        return x * ((ms + self.config.rmsnorm_eps) ** -0.5) * gamma

    def _val_mlp(self, values):
        v = values.reshape(*values.shape, 1)
        h = (v @ self.val_w1 + self.val_b1).silu()
        return h @ self.val_w2 + self.val_b2

    def _time_cond(self, t):
        feats = Tensor(sinusoidal_time_features(t, self.config.d_model))
        h = (feats.reshape(1, -1) @ self.time_w1 + self.time_b1).silu()
        return (h @ self.time_w2 + self.time_b2).reshape(-1)

    def _attention(self, x, layer, cos, sin, key_bias, capture):
        c = self.config
        B, L, _ = x.shape

        def heads(t):
            return t.reshape(B, L, c.n_heads, c.head_dim).transpose(0, 2, 1, 3)

        q = rope_rotate(heads(x @ layer["wq"]), cos, sin)
        k = rope_rotate(heads(x @ layer["wk"]), cos, sin)
        v = heads(x @ layer["wv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * (c.head_dim ** -0.5)
        scores = scores + key_bias
        probs = scores.softmax(axis=-1)
        if capture is not None:
            capture.append(probs.data.copy())
        out = (probs @ v).transpose(0, 2, 1, 3).reshape(B, L, c.d_model)
        return out @ layer["wo"]

    def _ffn(self, x, layer):
        return ((x @ layer["wg"]).silu() * (x @ layer["wu"])) @ layer["wd"]

    # -- forward -----------------------------------------------------------

    def forward(self, tokens, values, pad_mask, t, capture_attention=False):
        """Run the full stack on an already collated/corrupted batch.

        tokens: (B, L) int ids with LAT at position 0; values: (B, L)
        floats with the sentinel at masked positions; pad_mask: (B, L)
        bool, True at PAD columns.
        """
        c = self.config
        tokens = np.asarray(tokens)
        B, L = tokens.shape
        if L > c.max_len + 1:
            raise LengthError(f"sequence length {L} exceeds capacity "
                              f"{c.max_len + 1} (max_len + LAT)")
        if tokens.min() < 0 or tokens.max() >= c.vocab_size:
            raise VocabError(f"token id outside [0, {c.vocab_size})")

        h = (self.tok_emb[tokens]
             + self._val_mlp(Tensor(np.asarray(values, dtype=np.float64)))
             + self._time_cond(float(t)))

        angles = rope_angles(L, c.head_dim, c.rope_base)
        cos, sin = np.cos(angles), np.sin(angles)       # (L, d_h/2)
        key_bias = np.zeros((B, 1, 1, L))
        key_bias[:, 0, 0, :] = np.where(np.asarray(pad_mask), -np.inf, 0.0)

        maps = [] if capture_attention else None
        for layer in self.layers:
            h = h + self._attention(self._rmsnorm(h, layer["norm1"]), layer,
                                    cos, sin, key_bias, maps)
            h = h + self._ffn(self._rmsnorm(h, layer["norm2"]), layer)
        h = self._rmsnorm(h, self.final_norm)

        id_logits = h @ self.id_head_w + self.id_head_b
        value_pred = (h @ self.val_head_w + self.val_head_b).reshape(B, L)
        lat_state = h[:, 0, :]
        return DenoiserOutput(id_logits=id_logits, value_pred=value_pred,
                              lat_state=lat_state, attention_maps=maps,
                              pad_mask=np.asarray(pad_mask))

    def denoise(self, corrupted, capture_attention=False):
        return self.forward(corrupted.tokens, corrupted.values,
                            corrupted.originals.pad_mask, corrupted.t,
                            capture_attention=capture_attention)


def export_attention(output, layer, head, batch_index=0):
    """Row-stochastic (L x L) attention grid for one layer/head/cell."""
    if output.attention_maps is None:
        raise StateError("attention capture was not enabled on this forward")
    return output.attention_maps[layer][batch_index, head].copy()
