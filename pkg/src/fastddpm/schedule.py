"""Linear-beta base schedules and the few-step grids sub-sampled from them.

A :class:`BaseSchedule` holds the dense ``t_base``-step linear-beta schedule
and its cumulative signal level ``alpha_sq``. A :class:`StepGrid` is an
ordered subset of base steps, always closed by the noise-free point at grid
position 0; it is what both training and sampling run on.

Index convention: arrays are indexed by base step ``i`` with ``i = 0`` the
clean endpoint, so ``beta[0]`` is unused (NaN) and ``alpha_sq[0] == 1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_T_BASE = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class ScheduleError(ValueError):
    """Invalid schedule parameters or grid request."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class BaseSchedule:
    t_base: int
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha_sq: np.ndarray

    def __post_init__(self):
        self.beta.setflags(write=False)
        self.alpha_sq.setflags(write=False)

    def alpha_sigma(self, i: int) -> tuple[float, float]:
        return alpha_sigma(self, i)

    def snr(self, i: int) -> float:
        return snr(self, i)


def build_base(
    t_base: int = DEFAULT_T_BASE,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> BaseSchedule:
    """Dense schedule with ``beta[i] = beta_start + (beta_end - beta_start) * i / t_base``."""
    if int(t_base) != t_base or t_base < 2:
        raise ScheduleError(f"t_base must be an integer >= 2, got {t_base!r}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    t_base = int(t_base)
    i = np.arange(t_base + 1, dtype=np.float64)
    beta = beta_start + (beta_end - beta_start) * (i / t_base)
    beta[0] = np.nan
    alpha_sq = np.empty(t_base + 1, dtype=np.float64)
    alpha_sq[0] = 1.0
    alpha_sq[1:] = np.cumprod(1.0 - beta[1:])
    return BaseSchedule(t_base, float(beta_start), float(beta_end), beta, alpha_sq)


def _check_index(base: BaseSchedule, i: int, lo: int = 0) -> int:
    if int(i) != i or not (lo <= i <= base.t_base):
        raise ScheduleError(f"step index {i!r} outside [{lo}, {base.t_base}]")
    return int(i)


def alpha_sigma(base: BaseSchedule, i: int) -> tuple[float, float]:
    i = _check_index(base, i)
    a2 = float(base.alpha_sq[i])
    return math.sqrt(a2), math.sqrt(1.0 - a2)


def snr(base: BaseSchedule, i: int) -> float:
    """Signal-to-noise ratio alpha^2 / sigma^2 at base step ``i >= 1``."""
    if i == 0:
        raise ScheduleError("SNR diverges at i = 0 (sigma = 0)")
    i = _check_index(base, i, lo=1)
    a2 = float(base.alpha_sq[i])
    return a2 / (1.0 - a2)


@dataclass(frozen=True)
class Uniform:
    name = "uniform"


@dataclass(frozen=True)
class NonUniform:
    """Split the grid at ``boundary_index``; ``late_fraction`` of the steps lie above it.

    ``boundary_index=None`` means ``round(0.699 * t_base)``, which is 699 for
    the default 1000-step base.
    """

    boundary_index: int | None = None
    late_fraction: float = 0.6
    name = "nonuniform"

    def resolve_boundary(self, t_base: int) -> int:
        if self.boundary_index is None:
            return round_half_up(0.699 * t_base)
        return int(self.boundary_index)


SchedulerKind = Uniform | NonUniform


def parse_kind(text: str) -> SchedulerKind:
    key = text.strip().lower().replace("-", "").replace("_", "")
    if key == "uniform":
        return Uniform()
    if key == "nonuniform":
        return NonUniform()
    raise ScheduleError(f"unknown scheduler kind {text!r}")


@dataclass(frozen=True, eq=False)
class StepGrid:
    """Base-step subset ``indices`` (ascending, last == t_base) plus the clean point.

    ``alpha`` and ``sigma`` have ``s_steps + 1`` entries indexed by grid
    position; position 0 is the noise-free point ``(1, 0)``.
    """

    base: BaseSchedule
    indices: tuple[int, ...]
    kind: SchedulerKind
    alpha: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    @property
    def s_steps(self) -> int:
        return len(self.indices)

    @property
    def positions(self) -> tuple[int, ...]:
        """Base indices by grid position, including the clean point at position 0."""
        return (0,) + self.indices

    def base_index(self, pos: int) -> int:
        return self.positions[pos]

    def __eq__(self, other):
        return (
            isinstance(other, StepGrid)
            and self.indices == other.indices
            and self.base.t_base == other.base.t_base
            and self.base.beta_start == other.base.beta_start
            and self.base.beta_end == other.base.beta_end
        )

    __hash__ = None

    def describe(self) -> dict:
        """Plain description used by checkpoints and report headers."""
        d = {
            "t_base": self.base.t_base,
            "beta_start": self.base.beta_start,
            "beta_end": self.base.beta_end,
            "kind": self.kind.name,
            "indices": list(self.indices),
        }
        if isinstance(self.kind, NonUniform):
            d["boundary_index"] = self.kind.resolve_boundary(self.base.t_base)
            d["late_fraction"] = self.kind.late_fraction
        return d

    @classmethod
    def from_description(cls, d: dict) -> StepGrid:
        base = build_base(d["t_base"], d["beta_start"], d["beta_end"])
        if d["kind"] == "nonuniform":
            kind = NonUniform(d.get("boundary_index"), d.get("late_fraction", 0.6))
        else:
            kind = Uniform()
        return grid_from_indices(base, d["indices"], kind)


def grid_from_indices(base: BaseSchedule, indices, kind: SchedulerKind = Uniform()) -> StepGrid:
    idx = tuple(int(i) for i in indices)
    if not idx:
        raise ScheduleError("grid needs at least one step")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ScheduleError(f"grid indices not strictly ascending: {idx}")
    if idx[0] < 1 or idx[-1] != base.t_base:
        raise ScheduleError(f"grid indices must lie in [1, {base.t_base}] and end at {base.t_base}")
    pos = np.array((0,) + idx)
    a2 = base.alpha_sq[pos]
    alpha = np.sqrt(a2)
    sigma = np.sqrt(1.0 - a2)
    alpha.setflags(write=False)
    sigma.setflags(write=False)
    return StepGrid(base, idx, kind, alpha, sigma)


def subsample(base: BaseSchedule, s_steps: int, kind: SchedulerKind = Uniform()) -> StepGrid:
    """Pick ``s_steps`` base indices with round-half-up placement.

    Uniform: ``round(j * T / S)`` for ``j = 1..S``.
    NonUniform: ``n_late = round(late_fraction * S)`` steps spread evenly over
    ``(boundary, T]`` and the remaining ``n_early`` over ``(0, boundary]``.
    Rounding collisions raise instead of silently shrinking the grid.
    """
    T = base.t_base
    # a single uniform step {T} is allowed: it is the one-jump sampler audit case
    lo = 1 if isinstance(kind, Uniform) else 2
    if int(s_steps) != s_steps or not (lo <= s_steps <= T):
        raise ScheduleError(f"s_steps must be in [{lo}, {T}], got {s_steps!r}")
    S = int(s_steps)
    if isinstance(kind, Uniform):
        idx = [round_half_up(j * T / S) for j in range(1, S + 1)]
    elif isinstance(kind, NonUniform):
        boundary = kind.resolve_boundary(T)
        if not (0.0 < kind.late_fraction < 1.0):
            raise ScheduleError(f"late_fraction must be in (0, 1), got {kind.late_fraction}")
        if not (1 < boundary < T):
            raise ScheduleError(f"boundary_index must be in (1, {T}), got {boundary}")
        n_late = round_half_up(kind.late_fraction * S)
        n_early = S - n_late
        if n_late < 1 or n_early < 1:
            raise ScheduleError(
                f"S={S} with late_fraction={kind.late_fraction} leaves "
                f"n_early={n_early}, n_late={n_late}; both must be >= 1"
            )
        early = [round_half_up(j * boundary / n_early) for j in range(1, n_early + 1)]
        late = [boundary + round_half_up(j * (T - boundary) / n_late) for j in range(1, n_late + 1)]
        idx = early + late
    else:
        raise ScheduleError(f"unknown scheduler kind {kind!r}")
    if len(set(idx)) != len(idx) or idx[0] < 1:
        raise ScheduleError(f"S={S} produces duplicate or zero indices after rounding: {idx}")
    return grid_from_indices(base, idx, kind)


def dense_grid(base: BaseSchedule) -> StepGrid:
    return grid_from_indices(base, range(1, base.t_base + 1), Uniform())


def _sig6(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.6g}"


def grid_rows(grid: StepGrid) -> list[dict]:
    rows = []
    for pos, i in enumerate(grid.positions):
        a, s = float(grid.alpha[pos]), float(grid.sigma[pos])
        rows.append({
            "grid_pos": pos,
            "base_index": i,
            "t": i / grid.base.t_base,
            "alpha": a,
            "sigma": s,
            "snr": math.inf if i == 0 else snr(grid.base, i),
        })
    return rows


def grid_csv(grid: StepGrid) -> str:
    """CSV dump: grid_pos, base_index, t, alpha, sigma, snr at 6 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["grid_pos", "base_index", "t", "alpha", "sigma", "snr"]
    w.writerow(cols)
    for r in grid_rows(grid):
        w.writerow([r["grid_pos"], r["base_index"]] + [_sig6(r[c]) for c in cols[2:]])
    return buf.getvalue()


PURE_NOISE_ALPHA_SQ = 1e-2


def check_invariants(base: BaseSchedule) -> dict[str, bool]:
    """Named pass/fail results for the schedule invariants, checked over every index."""
    a2 = base.alpha_sq
    beta = base.beta[1:]
    sig2 = 1.0 - a2
    return {
        "beta_strictly_increasing": bool(np.all(np.diff(beta) > 0)),
        "beta_in_open_unit": bool(np.all((beta > 0) & (beta < 1))),
        "alpha_sq_strictly_decreasing": bool(np.all(np.diff(a2) < 0)),
        "alpha_sq_in_half_open_unit": bool(np.all((a2 > 0) & (a2 <= 1))),
        "alpha_sq_zero_is_one": bool(a2[0] == 1.0),
        "variance_preserving": bool(np.max(np.abs(a2 + sig2 - 1.0)) <= 1e-12),
        "endpoint_is_pure_noise": bool(a2[-1] < PURE_NOISE_ALPHA_SQ),
    }
