"""Training, evaluation and benchmark pipelines driven by a :class:`RunConfig`."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets as ds
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .denoiser import DenoiserNet, init
from .diffusion import (
    GaussianDataSpec,
    GaussianOracleDenoiser,
    TrainBatch,
    analytic_final_variance,
    sample,
    train_step,
)
from .metrics import MetricReport
from .numerics import AdamState, RandomSource
from .schedule import build_base, check_invariants, dense_grid

log = logging.getLogger(__name__)


def worker_count() -> int:
    env = os.environ.get("FASTDIFF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def load_data(cfg: RunConfig):
    """(train, test) splits for the configured task."""
    spec = ds.SyntheticVolumeSpec(height=cfg.image_size, width=cfg.image_size,
                                  n_blobs=cfg.n_blobs, seed=cfg.data_seed)
    group = None
    if cfg.task == "sr":
        data = ds.gen_sr_triplets(spec, cfg.n_items)
        group = ds.sr_volume_of
    elif cfg.task == "denoise":
        data = ds.gen_denoise_pairs(spec, cfg.n_items, cfg.dose_fraction)
    elif cfg.task == "translate":
        data = ds.gen_translation_pairs(spec, cfg.n_items)
    else:
        data = ds.load_image_dir(cfg.dataset_path, size=cfg.image_size)
    return ds.split(data, cfg.test_fraction, cfg.data_seed, group=group)


def _stream(cfg: RunConfig) -> RandomSource:
    return RandomSource(cfg.seed)


def new_model(cfg: RunConfig, cond_channels: int | None = None) -> DenoiserNet:
    return init(cfg.denoiser_config(cond_channels), _stream(cfg).spawn(0))


@dataclass
class TrainResult:
    net: DenoiserNet
    opt: AdamState
    grid: object
    losses: list = field(default_factory=list)  # (iteration, loss)
    seconds: float = 0.0


def train(cfg: RunConfig, train_set, out_dir=None, resume=None, stop_at: int | None = None) -> TrainResult:
    """Run grid-restricted training; iteration ``k`` draws only from stream ``(seed, 1, k)``.

    ``resume`` is a checkpoint path; training continues from its iteration
    and reproduces the uninterrupted run exactly. ``stop_at`` ends early
    (after that many total iterations) without changing the stream.
    """
    grid = cfg.grid()
    x0_all, c_all = ds.stack(train_set)
    if resume is not None:
        net, ck_grid, start, opt, _ = load_checkpoint(resume)
        if ck_grid != grid:
            raise ValueError(f"checkpoint grid {ck_grid.indices} does not match config grid {grid.indices}")
        if opt is None:
            raise ValueError("checkpoint has no optimizer state; cannot resume")
    else:
        net = new_model(cfg, c_all.shape[1])
        opt = AdamState(lr=cfg.lr)
        start = 0
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    losses = []
    root = _stream(cfg)
    t0 = time.perf_counter()
    for it in range(start, end):
        rs = root.spawn(1, it)
        pick = rs.spawn(0).integers(0, len(train_set), (cfg.batch_size,))
        batch = TrainBatch(x0_all[pick], c_all[pick])
        loss = train_step(net, batch, grid, opt, rs.spawn(1))
        losses.append((it + 1, loss))
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iteration %d loss %.5f", it + 1, loss)
        if out and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.fdpm", net, grid, it + 1, opt, cfg.to_text())
    seconds = time.perf_counter() - t0
    if out:
        save_checkpoint(out / "checkpoint.fdpm", net, grid, end, opt, cfg.to_text())
        mode = "a" if resume is not None and (out / "loss.csv").exists() else "w"
        with open(out / "loss.csv", mode, encoding="utf-8", newline="") as fh:
            if mode == "w":
                fh.write(cfg.header())
                fh.write("iteration,loss\n")
            for it, loss in losses:
                fh.write(f"{it},{loss:.9g}\n")
    return TrainResult(net, opt, grid, losses, seconds)


@dataclass
class EvalResult:
    report: MetricReport
    baseline: MetricReport
    outputs: dict
    seconds_per_image: float


def _item_seed(seed: int, k: int) -> RandomSource:
    return RandomSource(seed).spawn(2, k)


def sample_items(net, items, grid, seed: int, mode: str = "deterministic", threads: int | None = None):
    """Sample every item independently (own seed), fanned out over a thread pool.

    Returns ``(outputs by id, per-item wall-clock seconds)``.
    """

    def one(k):
        s = items[k]
        t0 = time.perf_counter()
        x = sample(net, s.c[None], grid, _item_seed(seed, k), mode)[0]
        return s.id, x, time.perf_counter() - t0

    threads = threads or worker_count()
    if threads == 1:
        res = [one(k) for k in range(len(items))]
    else:
        with ThreadPoolExecutor(threads) as pool:
            res = list(pool.map(one, range(len(items))))
    return {i: x for i, x, _ in res}, [t for _, _, t in res]


def evaluate(net, grid, test_set, cfg: RunConfig, threads: int | None = None) -> EvalResult:
    items = test_set[: cfg.eval_limit] if cfg.eval_limit else test_set
    outputs, times = sample_items(net, items, grid, cfg.seed, cfg.sample_mode, threads)
    report, baseline = MetricReport(), MetricReport()
    for s in items:
        report.add(s.id, s.x0, np.clip(outputs[s.id], -1.0, 1.0), cfg.ssim_window)
        baseline.add(s.id, s.x0, ds.naive_baseline(s), cfg.ssim_window)
    return EvalResult(report, baseline, outputs, float(np.mean(times)))


def write_outputs(outputs: dict, out_dir) -> None:
    from .imageio import from_unit_range, write_pgm

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for id_, x in outputs.items():
        for ch, plane in enumerate(np.asarray(x)):
            suffix = "" if len(x) == 1 else f"_c{ch}"
            write_pgm(out_dir / f"{id_}{suffix}.pgm", from_unit_range(plane, 16))


def _csv(header: str, cols: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    w.writerows(rows)
    return buf.getvalue()


def bench_steps(cfg: RunConfig, steps_list, data=None, trained: dict | None = None) -> tuple[str, list[dict]]:
    """Train and evaluate one model per step count; returns (CSV text, rows).

    ``trained`` maps a step count to an existing :class:`TrainResult` for
    ``cfg`` with that step count, which is then evaluated without retraining.
    """
    train_set, test_set = data or load_data(cfg)
    trained = trained or {}
    rows = []
    for s in steps_list:
        c = cfg.replace(steps=int(s))
        tr = trained.get(int(s)) or train(c, train_set)
        if tr.grid != c.grid():
            raise ValueError(f"pretrained model for S={s} was trained on grid {tr.grid.indices}")
        ev = evaluate(tr.net, tr.grid, test_set, c)
        rows.append({
            "steps": int(s),
            "psnr_db": ev.report.psnr_mean,
            "ssim": ev.report.ssim_mean,
            "baseline_psnr_db": ev.baseline.psnr_mean,
            "baseline_ssim": ev.baseline.ssim_mean,
            "train_seconds": tr.seconds,
            "sample_seconds_per_image": ev.seconds_per_image,
            "indices": " ".join(map(str, tr.grid.indices)),
        })
    cols = list(rows[0]) if rows else ["steps"]
    text = _csv(cfg.header(), cols, [[_fmt(r[k]) for k in cols] for r in rows])
    return text, rows


def bench_scheduler(cfg: RunConfig, data=None) -> tuple[str, list[dict]]:
    """Uniform vs non-uniform grids on the same task, one row each."""
    train_set, test_set = data or load_data(cfg)
    rows = []
    for kind in ("uniform", "nonuniform"):
        c = cfg.replace(scheduler=kind)
        tr = train(c, train_set)
        ev = evaluate(tr.net, tr.grid, test_set, c)
        rows.append({
            "scheduler": kind,
            "psnr_db": ev.report.psnr_mean,
            "ssim": ev.report.ssim_mean,
            "baseline_psnr_db": ev.baseline.psnr_mean,
            "baseline_ssim": ev.baseline.ssim_mean,
            "train_seconds": tr.seconds,
            "indices": " ".join(map(str, tr.grid.indices)),
        })
    cols = list(rows[0])
    return _csv(cfg.header(), cols, [[_fmt(r[k]) for k in cols] for r in rows]), rows


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def oracle_streams(n: int, seed: int) -> list[RandomSource]:
    """One stream per oracle run, keyed like evaluation items."""
    return [_item_seed(seed, k) for k in range(n)]


def oracle_sampler_variance(grid, n: int = 10_000, seed: int = 0, streams=None) -> float:
    """Empirical output variance over ``n`` independent runs of the deterministic
    sampler driven by the exact Gaussian noise (unit-variance, zero-mean data)."""
    net = GaussianOracleDenoiser(GaussianDataSpec(0.0, 1.0), grid.base)
    x = sample(net, np.zeros((n, 1, 1, 1)), grid, streams or oracle_streams(n, seed))
    return float(np.var(x))


def run_oracle(cfg: RunConfig, n: int = 10_000) -> list[Check]:
    """Training-free audit: schedule invariants and the Gaussian sampler oracle."""
    checks = []
    for t_base in (500, 1000, 2000):
        inv = check_invariants(build_base(t_base, cfg.beta_start, cfg.beta_end))
        for name, ok in inv.items():
            checks.append(Check(f"schedule[T={t_base}].{name}", ok, ""))
    base = build_base(cfg.t_base, cfg.beta_start, cfg.beta_end)
    streams = oracle_streams(n, cfg.seed)
    grids = [("config", cfg.grid()), ("dense", dense_grid(base))]
    for label, grid in grids:
        emp = oracle_sampler_variance(grid, n, streams=streams)
        ana = analytic_final_variance(grid)
        rel = abs(emp - ana) / ana
        checks.append(Check(f"sampler_variance[{label},S={grid.s_steps}]", rel <= 0.02,
                            f"empirical={emp:.6f} analytic={ana:.6f} rel_err={rel:.4f}"))
    emp = oracle_sampler_variance(grids[1][1], n, streams=streams)
    checks.append(Check("dense_grid_variance_near_one", abs(emp - 1.0) <= 0.02, f"empirical={emp:.6f}"))
    return checks


def time_sampling(net, c, grid, seed: int = 0, repeats: int = 1) -> float:
    """Median wall-clock seconds to sample one batch ``c`` on ``grid``."""
    times = []
    for r in range(repeats):
        t0 = time.perf_counter()
        sample(net, c, grid, seed + r)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))
