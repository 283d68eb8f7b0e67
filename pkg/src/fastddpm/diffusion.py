"""Forward corruption, grid-restricted training, and few-step sampling.

Training and sampling share one :class:`~fastddpm.schedule.StepGrid`: the
training step only ever draws base indices from the grid, and the sampler
walks the same indices from pure noise down to the clean point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import AdamState, RandomSource, adam_step, backward, gaussian
from .schedule import BaseSchedule, ScheduleError, StepGrid


def _alpha_sigma_arrays(base: BaseSchedule, i):
    i = np.asarray(i)
    if i.dtype.kind not in "iu" or np.any(i < 0) or np.any(i > base.t_base):
        raise ScheduleError(f"step index outside [0, {base.t_base}]: {i}")
    a2 = base.alpha_sq[i]
    return np.sqrt(a2), np.sqrt(1.0 - a2)


def _per_sample(v, ndim):
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim else v


def forward_sample(x0, i, eps, base: BaseSchedule) -> np.ndarray:
    """``alpha(i) * x0 + sigma(i) * eps``; ``i`` is a scalar or one index per batch item."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise nx.ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    a, s = _alpha_sigma_arrays(base, i)
    a, s = _per_sample(a, x0.ndim), _per_sample(s, x0.ndim)
    return (a * x0 + s * eps).astype(np.result_type(x0, eps), copy=False)


@dataclass
class TrainBatch:
    x0: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0)
        self.c = np.asarray(self.c)
        if self.x0.ndim != 4 or self.c.ndim != 4:
            raise nx.ShapeError("batch tensors must be [B, C, H, W]")
        if self.x0.shape[0] != self.c.shape[0] or self.x0.shape[2:] != self.c.shape[2:]:
            raise nx.ShapeError(f"x0 {self.x0.shape} and c {self.c.shape} are not aligned")
        for name, v in (("x0", self.x0), ("c", self.c)):
            if np.any(np.abs(v) > 1.0):
                raise ValueError(f"batch {name} values outside [-1, 1]")


def train_step(net, batch: TrainBatch, grid: StepGrid, opt: AdamState, rs: RandomSource) -> float:
    """One Adam step on the epsilon-prediction loss at grid-drawn time steps.

    Every batch element gets its own grid position, uniform over 1..S.
    Returns the batch loss (mean squared error, double-precision sum).
    """
    b = batch.x0.shape[0]
    dt = np.dtype(net.config.dtype)
    pos = rs.integers(1, grid.s_steps + 1, (b,))
    i = np.asarray(grid.positions)[pos]
    eps = gaussian(rs, batch.x0.shape, dtype=np.float64)
    x_t = forward_sample(batch.x0.astype(np.float64), i, eps, grid.base).astype(dt)
    net.zero_grad()
    loss = nx.mse_loss(net.forward(x_t, batch.c, i), eps.astype(dt))
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite training loss with random stream {rs!r}")
    backward(loss)
    adam_step(net.arrays(), [p.grad for p in net.params], opt)
    return value


def ddim_step(x_t, eps_hat, alpha: float, sigma: float, alpha_prev: float, sigma_prev: float):
    """Deterministic move from grid point t to the previous point t'.

    ``x' = (a'/a) x + (s' - (a'/a) s) eps_hat``; with ``(a', s') = (1, 0)`` this is
    the clean-image estimate ``(x - s eps_hat) / a``.
    """
    if alpha <= 0.0:
        raise ZeroDivisionError("ddim_step needs alpha > 0")
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    if x_t.shape != eps_hat.shape:
        raise nx.ShapeError(f"x_t {x_t.shape} and eps_hat {eps_hat.shape} differ in shape")
    r = alpha_prev / alpha
    return r * x_t + (sigma_prev - r * sigma) * eps_hat


def ancestral_step(x_t, eps_hat, alpha, sigma, alpha_prev, sigma_prev, noise):
    """DDPM posterior draw between consecutive grid points.

    The per-jump noise rate is ``1 - alpha^2 / alpha_prev^2`` and the added
    variance is the posterior variance ``sigma_prev^2 / sigma^2`` times that rate.
    """
    x_t = np.asarray(x_t)
    x0_hat = (x_t - sigma * eps_hat) / alpha
    beta_jump = 1.0 - (alpha / alpha_prev) ** 2
    s2 = sigma * sigma
    mean = (alpha_prev * beta_jump / s2) * x0_hat + ((alpha / alpha_prev) * sigma_prev ** 2 / s2) * x_t
    var = sigma_prev ** 2 / s2 * beta_jump
    if var > 0.0:
        mean = mean + np.sqrt(var) * noise
    return mean


class CallCounter:
    """Wraps a denoiser and records the base index of every batched call."""

    def __init__(self, net):
        self.net = net
        self.calls = []

    def __getattr__(self, name):
        return getattr(self.net, name)

    def forward(self, x_t, c, i):
        self.calls.append(np.array(np.broadcast_to(i, (np.shape(x_t)[0],))))
        return self.net.forward(x_t, c, i)

    def predict(self, x_t, c, i):
        self.calls.append(np.array(np.broadcast_to(i, (np.shape(x_t)[0],))))
        return self.net.predict(x_t, c, i)

    @property
    def n_calls(self) -> int:
        return len(self.calls)


def _target_channels(net) -> int:
    cfg = getattr(net, "config", None)
    if cfg is not None:
        return cfg.target_channels
    return net.target_channels


def _draw(streams, shape, *keys):
    if isinstance(streams, RandomSource):
        return gaussian(streams.spawn(*keys), shape)
    return np.concatenate([gaussian(r.spawn(*keys), (1,) + shape[1:]) for r in streams])


def sample(net, c, grid: StepGrid, seed, mode: str = "deterministic", trajectory: bool = False):
    """Generate clean-image estimates for conditions ``c`` [N, C', H, W].

    Starts from ``x(1) ~ N(0, I)`` and makes exactly ``S`` denoiser calls,
    one per grid point from position S down to 1. ``mode`` is
    "deterministic" (DDIM-style update) or "ancestral" (DDPM posterior
    draws between grid points). With ``trajectory=True`` returns
    ``(x0_hat, [x(S), ..., x(0)])``.

    ``seed`` is an int, a :class:`RandomSource` for the whole batch, or a
    sequence of N sources, one per item; in the last case the batch is
    bit-identical to N separate single-item runs.
    """
    if mode not in ("deterministic", "ancestral"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    c = np.asarray(c)
    shape = (c.shape[0], _target_channels(net)) + c.shape[2:]
    if isinstance(seed, RandomSource):
        rs = seed
    elif isinstance(seed, (list, tuple)):
        rs = list(seed)
        if len(rs) != shape[0]:
            raise ValueError(f"{len(rs)} random streams for a batch of {shape[0]}")
    else:
        rs = RandomSource(seed)
    x = _draw(rs, shape, 0)
    traj = [x.copy()] if trajectory else None
    pos_idx = grid.positions
    for pos in range(grid.s_steps, 0, -1):
        i = pos_idx[pos]
        eps_hat = np.asarray(net.predict(x, c, np.full(shape[0], i)), dtype=np.float64)
        a, s = float(grid.alpha[pos]), float(grid.sigma[pos])
        ap, sp = float(grid.alpha[pos - 1]), float(grid.sigma[pos - 1])
        if mode == "deterministic":
            x = ddim_step(x, eps_hat, a, s, ap, sp)
        else:
            noise = _draw(rs, shape, 1, pos) if pos > 1 else 0.0
            x = ancestral_step(x, eps_hat, a, s, ap, sp, noise)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite latent at grid position {pos - 1} (seed {seed})")
        if trajectory:
            traj.append(x.copy())
    return (x, traj) if trajectory else x


@dataclass(frozen=True)
class GaussianDataSpec:
    mean: float | np.ndarray = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("data scale must be positive")


def analytic_eps_gaussian(x_t, i, spec: GaussianDataSpec, base: BaseSchedule):
    """``E[eps | x_t]`` when ``x0 ~ N(mean, scale^2 I)``: ``s (x_t - a mu) / (a^2 s_d^2 + s^2)``."""
    if np.any(np.asarray(i) < 1):
        raise ScheduleError("analytic epsilon needs i >= 1")
    x_t = np.asarray(x_t, dtype=np.float64)
    a, s = _alpha_sigma_arrays(base, i)
    a, s = _per_sample(a, x_t.ndim), _per_sample(s, x_t.ndim)
    return s * (x_t - a * spec.mean) / (a * a * spec.scale ** 2 + s * s)


class GaussianOracleDenoiser:
    """Stand-in denoiser returning the exact posterior-mean noise for Gaussian data."""

    def __init__(self, spec: GaussianDataSpec, base: BaseSchedule, target_channels: int = 1):
        self.spec = spec
        self.base = base
        self.target_channels = target_channels

    def predict(self, x_t, c, i):
        return analytic_eps_gaussian(x_t, i, self.spec, self.base)


def analytic_final_variance(grid: StepGrid) -> float:
    """Output variance of the deterministic sampler on unit-variance, zero-mean data.

    With the exact posterior noise every update is the scalar map
    ``x -> (a_prev a + s_prev s) x``, so the variance is the product of the
    squared factors over consecutive grid points.
    """
    a, s = grid.alpha, grid.sigma
    factors = a[:-1] * a[1:] + s[:-1] * s[1:]
    return float(np.prod(factors ** 2))
