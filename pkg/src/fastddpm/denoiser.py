"""Conditional noise predictor: a small convolutional U-Net.

The noisy target and the condition stack are concatenated along channels
at the input. The base-step index enters through a sinusoidal embedding,
a shared SiLU-activated linear layer, and a per-block linear projection
added as a channel bias inside every residual block. Channel widths are
``base_width * 2**level``; each level has two residual blocks, the encoder
average-pools between levels and the decoder upsamples and concatenates
the matching encoder output. There is no normalisation and no attention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .numerics import RandomSource


@dataclass(frozen=True)
class DenoiserConfig:
    target_channels: int = 1
    cond_channels: int = 1
    base_width: int = 32
    levels: int = 3
    time_embed_dim: int = 64
    image_size: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("target_channels", "cond_channels", "base_width", "levels",
                     "time_embed_dim", "image_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.image_size % (2 ** (self.levels - 1)):
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2**(levels-1) = {2 ** (self.levels - 1)}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    def widths(self) -> list[int]:
        return [self.base_width * 2 ** l for l in range(self.levels)]

    def to_dict(self) -> dict:
        return asdict(self)


def time_embed(i, d: int) -> np.ndarray:
    """Interleaved ``(sin(i*w_k), cos(i*w_k))`` with ``w_k = 10000**(-2k/d)``.

    ``i`` may be a scalar (returns shape [d]) or an array of indices (returns [N, d]).
    """
    if d % 2:
        raise ValueError(f"embedding dimension must be even, got {d}")
    i_arr = np.asarray(i, dtype=np.float64)
    k = np.arange(d // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / d)
    ang = i_arr[..., None] * omega
    out = np.empty(ang.shape[:-1] + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


_L = "CNHW"


def _to_nchw(x: nx.Node) -> nx.Node:
    v = np.ascontiguousarray(x.value.transpose(1, 0, 2, 3))
    return nx.autodiff._make(v, (x,), lambda g: (g.transpose(1, 0, 2, 3),), "to_nchw")


def _conv_shape(cin, cout, k):
    return [("w", (cout, cin, k, k), cin * k * k), ("b", (cout,), None)]


def _layout(cfg: DenoiserConfig) -> list[tuple[str, tuple, int | None]]:
    """Ordered (name, shape, fan_in) for every parameter; fan_in None marks a bias."""
    d = cfg.time_embed_dim
    w = cfg.widths()
    spec = [("time.w", (d, d), d), ("time.b", (d,), None)]

    def conv(prefix, cin, cout, k):
        for n, shape, fan in _conv_shape(cin, cout, k):
            spec.append((f"{prefix}.{n}", shape, fan))

    def block(prefix, cin, cout):
        conv(f"{prefix}.conv1", cin, cout, 3)
        spec.append((f"{prefix}.temb.w", (d, cout), d))
        spec.append((f"{prefix}.temb.b", (cout,), None))
        conv(f"{prefix}.conv2", cout, cout, 3)
        if cin != cout:
            conv(f"{prefix}.skip", cin, cout, 1)

    conv("in", cfg.target_channels + cfg.cond_channels, w[0], 3)
    cin = w[0]
    for l in range(cfg.levels):
        block(f"down{l}.0", cin, w[l])
        block(f"down{l}.1", w[l], w[l])
        cin = w[l]
    for l in range(cfg.levels - 2, -1, -1):
        block(f"up{l}.0", w[l + 1] + w[l], w[l])
        block(f"up{l}.1", w[l], w[l])
    conv("out", w[0], cfg.target_channels, 3)
    return spec


class DenoiserNet:
    def __init__(self, config: DenoiserConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.names = [n for n, _, _ in _layout(config)]
        missing = set(self.names) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        dt = np.dtype(config.dtype)
        self.p = {n: nx.parameter(np.asarray(params[n], dtype=dt)) for n in self.names}

    @property
    def params(self) -> list[nx.Node]:
        return [self.p[n] for n in self.names]

    def arrays(self) -> list[np.ndarray]:
        return [self.p[n].value for n in self.names]

    def zero_grad(self):
        for node in self.p.values():
            node.grad = None

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def _conv(self, name, x, k):
        return nx.conv2d(x, self.p[f"{name}.w"], self.p[f"{name}.b"], padding=k // 2, layout=_L)

    def _block(self, name, x, temb):
        h = self._conv(f"{name}.conv1", nx.silu(x), 3)
        tb = nx.linear(temb, self.p[f"{name}.temb.w"], self.p[f"{name}.temb.b"])
        h = nx.add_channel_bias(h, tb, layout=_L)
        h = self._conv(f"{name}.conv2", nx.silu(h), 3)
        skip = self._conv(f"{name}.skip", x, 1) if f"{name}.skip.w" in self.p else x
        return nx.add(skip, h)

    def forward(self, x_t, c, i) -> nx.Node:
        """Predicted noise for noisy targets ``x_t`` [N, C, H, W] at base steps ``i``."""
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        x_t = np.asarray(x_t, dtype=dt)
        c = np.asarray(c, dtype=dt)
        if x_t.ndim != 4 or x_t.shape[1] != cfg.target_channels:
            raise nx.ShapeError(f"x_t shape {x_t.shape} does not match {cfg.target_channels} target channels")
        if c.ndim != 4 or c.shape[1] != cfg.cond_channels or c.shape[0] != x_t.shape[0] or c.shape[2:] != x_t.shape[2:]:
            raise nx.ShapeError(f"condition shape {c.shape} incompatible with x_t {x_t.shape}")
        if x_t.shape[2] % 2 ** (cfg.levels - 1) or x_t.shape[3] % 2 ** (cfg.levels - 1):
            raise nx.ShapeError(f"spatial extents {x_t.shape[2:]} not divisible by 2**(levels-1)")
        n = x_t.shape[0]
        i = np.broadcast_to(np.asarray(i), (n,))
        emb = time_embed(i, cfg.time_embed_dim).astype(dt)
        temb = nx.silu(nx.linear(emb, self.p["time.w"], self.p["time.b"]))

        # internal activations are channels-first [C, N, H, W]
        xin = np.concatenate([x_t, c], axis=1).transpose(1, 0, 2, 3)
        h = self._conv("in", np.ascontiguousarray(xin), 3)
        skips = []
        for l in range(cfg.levels):
            h = self._block(f"down{l}.0", h, temb)
            h = self._block(f"down{l}.1", h, temb)
            if l < cfg.levels - 1:
                skips.append(h)
                h = nx.avgpool2x(h)
        for l in range(cfg.levels - 2, -1, -1):
            h = nx.concat_channels(nx.upsample2x(h), skips[l], layout=_L)
            h = self._block(f"up{l}.0", h, temb)
            h = self._block(f"up{l}.1", h, temb)
        out = self._conv("out", nx.silu(h), 3)
        return _to_nchw(out)

    def predict(self, x_t, c, i) -> np.ndarray:
        return self.forward(x_t, c, i).value

    __call__ = predict


def init(config: DenoiserConfig, rs: RandomSource) -> DenoiserNet:
    """Fan-in scaled uniform weights, zero biases; deterministic in the seed."""
    params = {}
    for k, (name, shape, fan_in) in enumerate(_layout(config)):
        if fan_in is None:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / fan_in)
            params[name] = rs.spawn(k).uniform(-bound, bound, shape)
    return DenoiserNet(config, params)


def param_shapes(config: DenoiserConfig) -> list[tuple[str, tuple]]:
    return [(n, s) for n, s, _ in _layout(config)]
