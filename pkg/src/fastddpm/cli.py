"""Command line: ``python -m fastddpm <verb> [--config FILE] [flags]``.

Verbs: schedule, train, sample, eval, bench-steps, bench-scheduler, oracle.
The exit status is nonzero iff a check failed or a required artifact
could not be produced.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .datasets import DatasetError
from .numerics import write_tensor
from .schedule import ScheduleError, grid_csv

log = logging.getLogger("fastddpm")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.scheduler is not None:
        over["scheduler"] = args.scheduler
    if args.steps and args.verb != "bench-steps":
        over["steps"] = int(args.steps)
    if args.out:
        over["out_dir"] = args.out
    return cfg.replace(**over) if over else cfg


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    (p / "config.resolved.txt").write_text(cfg.header() + cfg.to_text(), encoding="utf-8")
    return p


def cmd_schedule(cfg: RunConfig, args) -> int:
    text = cfg.header() + grid_csv(cfg.grid())
    if args.out:
        _out(cfg)
        (Path(cfg.out_dir) / "schedule.csv").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out(cfg)
    train_set, _ = ex.load_data(cfg)
    resume = args.checkpoint
    if resume is None and args.resume and (out / "checkpoint.fdpm").exists():
        resume = out / "checkpoint.fdpm"
    res = ex.train(cfg, train_set, out_dir=out, resume=resume)
    log.info("trained to iteration %d in %.1fs; checkpoint %s", cfg.iterations, res.seconds, out / "checkpoint.fdpm")
    return 0


def _checkpoint(cfg: RunConfig, args):
    path = args.checkpoint or Path(cfg.out_dir) / "checkpoint.fdpm"
    net, grid, it, _, _ = load_checkpoint(path)
    if grid != cfg.grid():
        raise ConfigError(f"checkpoint grid {grid.indices} does not match config grid {cfg.grid().indices}")
    return net, grid


def cmd_sample(cfg: RunConfig, args) -> int:
    net, grid = _checkpoint(cfg, args)
    out = _out(cfg)
    _, test_set = ex.load_data(cfg)
    items = test_set[: cfg.eval_limit] if cfg.eval_limit else test_set
    outputs, times = ex.sample_items(net, items, grid, cfg.seed, cfg.sample_mode)
    ex.write_outputs(outputs, out / "samples")
    lines = [cfg.header(), "id,seconds\n"] + [f"{s.id},{t:.6f}\n" for s, t in zip(items, times)]
    (out / "sample_times.csv").write_text("".join(lines), encoding="utf-8")
    if args.trajectory and items:
        from .diffusion import sample

        _, traj = sample(net, items[0].c[None], grid, ex._item_seed(cfg.seed, 0), cfg.sample_mode, trajectory=True)
        with open(out / "trajectory.fdt", "wb") as fh:
            for x in traj:
                write_tensor(fh, x)
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    net, grid = _checkpoint(cfg, args)
    out = _out(cfg)
    _, test_set = ex.load_data(cfg)
    res = ex.evaluate(net, grid, test_set, cfg)
    (out / "eval.csv").write_text(res.report.to_csv(cfg.header()), encoding="utf-8")
    (out / "eval_baseline.csv").write_text(res.baseline.to_csv(cfg.header()), encoding="utf-8")
    ex.write_outputs(res.outputs, out / "samples")
    (out / "timing.csv").write_text(
        cfg.header() + "steps,seconds_per_image\n" + f"{grid.s_steps},{res.seconds_per_image:.6f}\n",
        encoding="utf-8",
    )
    print(f"psnr {res.report.psnr_mean:.3f} dB  ssim {res.report.ssim_mean:.4f}  "
          f"(baseline {res.baseline.psnr_mean:.3f} dB / {res.baseline.ssim_mean:.4f})")
    return 0


def cmd_bench_steps(cfg: RunConfig, args) -> int:
    steps = [int(s) for s in (args.steps or "3,5,7,10,20,50,100,200,500,1000").split(",")]
    text, rows = ex.bench_steps(cfg, steps)
    (_out(cfg) / "bench_steps.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0 if len(rows) == len(steps) else 1


def cmd_bench_scheduler(cfg: RunConfig, args) -> int:
    text, rows = ex.bench_scheduler(cfg)
    (_out(cfg) / "bench_scheduler.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0 if len(rows) == 2 else 1


def cmd_oracle(cfg: RunConfig, args) -> int:
    checks = ex.run_oracle(cfg)
    lines = [cfg.header()] + [f"{'PASS' if c.passed else 'FAIL'} {c.name} {c.detail}".rstrip() + "\n" for c in checks]
    text = "".join(lines)
    sys.stdout.write(text)
    if args.out:
        (_out(cfg) / "oracle.txt").write_text(text, encoding="utf-8")
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {
    "schedule": cmd_schedule,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "bench-steps": cmd_bench_steps,
    "bench-scheduler": cmd_bench_scheduler,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastddpm", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--checkpoint", help="checkpoint to load (sample/eval) or resume from (train)")
    p.add_argument("--steps", help="grid size S; for bench-steps a comma-separated list")
    p.add_argument("--scheduler", choices=["uniform", "nonuniform"])
    p.add_argument("--resume", action="store_true", help="train: continue from <out>/checkpoint.fdpm if present")
    p.add_argument("--trajectory", action="store_true", help="sample: also dump the latent trajectory of the first item")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.verb](cfg, args)
    except (ConfigError, ScheduleError, CheckpointError, DatasetError, FileNotFoundError) as e:
        print(f"fastddpm {args.verb}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
