"""
Train on ten steps, sample in ten steps
=======================================

A short run on the denoising toy task. The acceptance suite trains the
same network for 20000 iterations; 2000 are enough to see the loss fall
and the sampler produce images. Pass an iteration count to change it.
"""

import sys

from fastddpm import experiment as ex
from fastddpm.config import RunConfig

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = RunConfig(task="denoise", steps=10, base_width=8, levels=3, time_embed_dim=32,
                batch_size=4, iterations=iterations, log_every=0, eval_limit=20)

train_set, test_set = ex.load_data(cfg)
run = ex.train(cfg, train_set)
first = sum(l for _, l in run.losses[:100]) / 100
last = sum(l for _, l in run.losses[-100:]) / 100
print(f"{iterations} iterations in {run.seconds:.0f}s, loss {first:.3f} -> {last:.3f}")

ev = ex.evaluate(run.net, run.grid, test_set, cfg, threads=1)
print(f"model    PSNR {ev.report.psnr_mean:.2f} dB  SSIM {ev.report.ssim_mean:.3f}")
print(f"baseline PSNR {ev.baseline.psnr_mean:.2f} dB  SSIM {ev.baseline.ssim_mean:.3f}")
print(f"{ev.seconds_per_image * 1e3:.1f} ms per image at S={run.grid.s_steps}")
