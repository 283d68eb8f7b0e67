"""Run configuration: a flat UTF-8 ``key = value`` file.

Blank lines and ``#`` comments are ignored. Unknown keys are an error.
Documented keys are the fields of :class:`RunConfig`.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .schedule import NonUniform, SchedulerKind, Uniform, build_base, subsample

TASKS = ("sr", "denoise", "translate", "custom-dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "denoise"
    # schedule
    t_base: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 10
    scheduler: str = "uniform"
    boundary_index: int = 0  # 0 -> round(0.699 * t_base)
    late_fraction: float = 0.6
    # denoiser
    base_width: int = 32
    levels: int = 3
    time_embed_dim: int = 64
    image_size: int = 32
    dtype: str = "float32"
    # optimisation
    lr: float = 2e-4
    iterations: int = 20000
    batch_size: int = 8
    seed: int = 0
    # data
    data_seed: int = 1
    n_items: int = 400  # images (denoise/translate) or volumes (sr)
    test_fraction: float = 0.1
    dose_fraction: float = 0.1
    n_blobs: int = 10
    dataset_path: str = ""
    # evaluation
    sample_mode: str = "deterministic"
    eval_limit: int = 0  # 0 -> whole test split
    ssim_window: int = 7
    # output
    out_dir: str = "runs/default"
    checkpoint_every: int = 5000
    log_every: int = 100

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.scheduler not in ("uniform", "nonuniform"):
            raise ConfigError(f"scheduler must be uniform or nonuniform, got {self.scheduler!r}")
        if self.sample_mode not in ("deterministic", "ancestral"):
            raise ConfigError(f"sample_mode must be deterministic or ancestral, got {self.sample_mode!r}")
        if self.task == "custom-dir" and not self.dataset_path:
            raise ConfigError("task custom-dir needs dataset_path")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)

    def kind(self) -> SchedulerKind:
        if self.scheduler == "uniform":
            return Uniform()
        return NonUniform(self.boundary_index or None, self.late_fraction)

    def grid(self, steps: int | None = None):
        base = build_base(self.t_base, self.beta_start, self.beta_end)
        return subsample(base, self.steps if steps is None else steps, self.kind())

    def channels(self) -> tuple[int, int]:
        """(target channels, condition channels) for the task."""
        return (1, 2) if self.task == "sr" else (1, 1)

    def denoiser_config(self, cond_channels: int | None = None) -> DenoiserConfig:
        t, c = self.channels()
        return DenoiserConfig(
            target_channels=t,
            cond_channels=c if cond_channels is None else cond_channels,
            base_width=self.base_width,
            levels=self.levels,
            time_embed_dim=self.time_embed_dim,
            image_size=self.image_size,
            dtype=self.dtype,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def header(self) -> str:
        """Comment line written at the top of every output file."""
        return f"# fastddpm config_hash={self.hash()}\n"


def _coerce(name: str, typ, text: str):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "str": str}[typ]
    try:
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {typ.__name__}") from None
    return text


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in pairs:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        pairs[k] = v
    return pairs


def from_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(pairs) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, known[k], v) for k, v in pairs.items()}
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    return from_pairs(parse_pairs(Path(path).read_text(encoding="utf-8")))
