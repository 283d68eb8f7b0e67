"""Checkpoint files.

Layout (little-endian)::

    b"FDPM" | u32 format version | u32 n | n bytes of UTF-8 JSON metadata
    | parameter tensor records in ``names`` order
    | optional Adam first-moment records, then second-moment records

The metadata holds the denoiser config, parameter names, grid description,
training iteration, Adam hyperparameters and step, and the run config text.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

from .denoiser import DenoiserConfig, DenoiserNet
from .numerics import AdamState, TensorFormatError, read_tensor, write_tensor
from .schedule import StepGrid

MAGIC = b"FDPM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: DenoiserNet, grid: StepGrid, iteration: int,
                    opt: AdamState | None = None, run_config: str = "") -> None:
    meta = {
        "denoiser": net.config.to_dict(),
        "names": net.names,
        "grid": grid.describe(),
        "iteration": int(iteration),
        "run_config": run_config,
        "adam": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step, "has_moments": bool(opt.m),
        },
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for a in net.arrays():
            write_tensor(fh, a)
        if opt is not None and opt.m:
            for a in opt.m + opt.v:
                write_tensor(fh, a)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(net, grid, iteration, adam_state_or_None, run_config_text)``."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r}, expected {MAGIC!r})")
        head = fh.read(8)
        if len(head) != 8:
            raise CheckpointError(f"{path}: truncated header")
        version, n = struct.unpack("<II", head)
        if version != VERSION:
            raise CheckpointError(f"{path}: format version {version}, this build reads version {VERSION}")
        try:
            meta = json.loads(fh.read(n).decode("utf-8"))
            cfg = DenoiserConfig(**meta["denoiser"])
            arrays = [read_tensor(fh) for _ in meta["names"]]
            opt = None
            if meta["adam"] is not None:
                a = meta["adam"]
                opt = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"])
                if a["has_moments"]:
                    k = len(meta["names"])
                    moments = [read_tensor(fh) for _ in range(2 * k)]
                    opt.m, opt.v = moments[:k], moments[k:]
            if fh.read(1):
                raise CheckpointError(f"{path}: trailing bytes after last record (version {version})")
        except (TensorFormatError, KeyError, TypeError, json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt checkpoint (format version {version}): {e}") from e
    net = DenoiserNet(cfg, dict(zip(meta["names"], arrays)))
    grid = StepGrid.from_description(meta["grid"])
    return net, grid, meta["iteration"], opt, meta.get("run_config", "")
