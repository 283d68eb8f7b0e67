"""Paired image datasets: synthetic stand-ins for the three tasks, and on-disk pairs.

Every sample is a :class:`PairSample` holding a target ``x0`` [C, H, W] and
a condition stack ``c`` [C', H, W], both in [-1, 1]. Generation is a pure
function of the :class:`SyntheticVolumeSpec`: item ``k`` draws from the child stream
``RandomSource(seed).spawn(k)``.

On-disk layout::

    <root>/manifest.txt            one id per line, defines iteration order
    <root>/target/<id>.pgm         single-channel target
    <root>/cond/<id>.pgm           single-channel condition, or
    <root>/cond_0/<id>.pgm, cond_1/<id>.pgm, ...   one directory per channel

``.png`` is accepted wherever ``.pgm`` is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imageio
from .numerics import RandomSource, gaussian


class DatasetError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("dataset problems:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class PairSample:
    x0: np.ndarray
    c: np.ndarray
    id: str

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.x0.ndim != 3 or self.c.ndim != 3 or self.x0.shape[1:] != self.c.shape[1:]:
            raise ValueError(f"{self.id}: target {self.x0.shape} and condition {self.c.shape} not aligned")
        for name, v in (("x0", self.x0), ("c", self.c)):
            if not np.all(np.isfinite(v)) or v.min() < -1.0 or v.max() > 1.0:
                raise ValueError(f"{self.id}: {name} outside [-1, 1]")


@dataclass(frozen=True)
class SyntheticVolumeSpec:
    depth: int = 10
    height: int = 32
    width: int = 32
    n_blobs: int = 10
    scale_range: tuple[float, float] = (1.5, 5.0)
    depth_scale_range: tuple[float, float] = (0.6, 1.5)
    intensity_range: tuple[float, float] = (0.3, 1.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.depth, self.height, self.width) < 8:
            raise ValueError("volume extents must be >= 8")
        if self.n_blobs < 1:
            raise ValueError("need at least one blob")


def _rescale(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-12:
        return np.zeros_like(v)
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def blob_volume(spec: SyntheticVolumeSpec, rs: RandomSource, depth: int | None = None) -> np.ndarray:
    """Sum of randomly placed anisotropic Gaussian blobs, rescaled to [-1, 1].

    Blobs are rotated in-plane and have their own depth extent, so the
    volume varies smoothly along the first axis.
    """
    d = spec.depth if depth is None else depth
    z, y, x = np.meshgrid(np.arange(d), np.arange(spec.height), np.arange(spec.width), indexing="ij")
    vol = np.zeros((d, spec.height, spec.width))
    for _ in range(spec.n_blobs):
        cz = rs.uniform(0, d - 1)
        cy = rs.uniform(0, spec.height - 1)
        cx = rs.uniform(0, spec.width - 1)
        sy, sx = rs.uniform(*spec.scale_range, shape=(2,))
        sz = rs.uniform(*spec.depth_scale_range)
        theta = rs.uniform(0, np.pi)
        amp = rs.uniform(*spec.intensity_range)
        dy, dx = y - cy, x - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        vol += amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2 + ((z - cz) / sz) ** 2))
    return _rescale(vol)


def blob_image(spec: SyntheticVolumeSpec, rs: RandomSource) -> np.ndarray:
    return blob_volume(spec, rs, depth=1)[0]


def gen_sr_triplets(spec: SyntheticVolumeSpec, n_volumes: int) -> list[PairSample]:
    """Each interior slice k of each volume: condition (k-1, k+1), target k."""
    if spec.depth < 3:
        raise ValueError("need depth >= 3 for slice triplets")
    root = RandomSource(spec.seed)
    out = []
    for v in range(n_volumes):
        vol = blob_volume(spec, root.spawn(v))
        for k in range(1, spec.depth - 1):
            out.append(PairSample(vol[k][None], np.stack([vol[k - 1], vol[k + 1]]), f"sr-v{v:04d}-s{k:03d}"))
    return out


def low_dose_std(clean, dose_fraction: float) -> np.ndarray:
    """Per-pixel std of the simulated low-dose noise.

    ``q * sqrt(0.15**2 + 0.05**2 * max(p + 1, 0) / 2)`` with
    ``q = sqrt((1 - d) / d) / 3``, so ``q = 1`` at 10% dose and 0 at full dose.
    """
    if not (0.0 < dose_fraction <= 1.0):
        raise ValueError("dose_fraction must lie in (0, 1]")
    q = np.sqrt((1.0 - dose_fraction) / dose_fraction) / 3.0
    signal = np.maximum(np.asarray(clean) + 1.0, 0.0) / 2.0
    return q * np.sqrt(0.15 ** 2 + 0.05 ** 2 * signal)


def low_dose_noise(clean, dose_fraction: float, rs: RandomSource) -> np.ndarray:
    """Unclipped noisy version of ``clean``: a flat Gaussian plus a signal-dependent term."""
    if not (0.0 < dose_fraction <= 1.0):
        raise ValueError("dose_fraction must lie in (0, 1]")
    clean = np.asarray(clean, dtype=np.float64)
    q = np.sqrt((1.0 - dose_fraction) / dose_fraction) / 3.0
    g1 = gaussian(rs, clean.shape)
    g2 = gaussian(rs, clean.shape)
    signal = np.sqrt(np.maximum(clean + 1.0, 0.0) / 2.0)
    return clean + q * (0.15 * g1 + 0.05 * signal * g2)


def gen_denoise_pairs(spec: SyntheticVolumeSpec, n_images: int, dose_fraction: float = 0.1) -> list[PairSample]:
    """Clean blob composites as targets, simulated low-dose copies as conditions."""
    root = RandomSource(spec.seed)
    out = []
    for k in range(n_images):
        rs = root.spawn(k)
        clean = blob_image(spec, rs)
        noisy = clean if dose_fraction == 1.0 else np.clip(low_dose_noise(clean, dose_fraction, rs), -1.0, 1.0)
        out.append(PairSample(clean[None], noisy[None], f"dn-{k:05d}"))
    return out


def transfer_a(s):
    return np.sqrt(s)


def transfer_b(s):
    return s ** 2


def gen_translation_pairs(spec: SyntheticVolumeSpec, n_images: int, texture: float = 0.04) -> list[PairSample]:
    """Shared structure rendered through two monotone contrast curves plus per-modality texture."""
    root = RandomSource(spec.seed)
    out = []
    for k in range(n_images):
        rs = root.spawn(k)
        s = (blob_image(spec, rs) + 1.0) / 2.0
        shape = s.shape
        tex_a = gaussian_filter(gaussian(rs, shape), 1.0, mode="wrap")
        tex_b = gaussian_filter(gaussian(rs, shape), 0.7, mode="wrap")
        tex_a /= max(tex_a.std(), 1e-12)
        tex_b /= max(tex_b.std(), 1e-12)
        a = np.clip(2.0 * (transfer_a(s) + texture * tex_a) - 1.0, -1.0, 1.0)
        b = np.clip(2.0 * (transfer_b(s) + texture * tex_b) - 1.0, -1.0, 1.0)
        out.append(PairSample(b[None], a[None], f"tr-{k:05d}"))
    return out


def stack(dataset: list[PairSample]) -> tuple[np.ndarray, np.ndarray]:
    """(targets [N, C, H, W], conditions [N, C', H, W])."""
    return np.stack([s.x0 for s in dataset]), np.stack([s.c for s in dataset])


def ids(dataset) -> list[str]:
    return [s.id for s in dataset]


def split(dataset: list[PairSample], test_fraction: float, seed: int, group=None):
    """Seeded shuffle into (train, test) with disjoint ids.

    ``round(test_fraction * n)`` items go to test. With ``group`` (a function
    of the sample id) whole groups are assigned together and the fraction
    applies to the number of groups.
    """
    if not (0.0 <= test_fraction <= 1.0):
        raise ValueError("test_fraction must lie in [0, 1]")
    names = ids(dataset)
    if len(set(names)) != len(names):
        raise DatasetError(["duplicate sample ids"])
    keys = names if group is None else [group(n) for n in names]
    uniq = list(dict.fromkeys(keys))
    n_test = int(np.floor(test_fraction * len(uniq) + 0.5))
    perm = RandomSource(seed).permutation(len(uniq))
    test_keys = {uniq[k] for k in perm[:n_test]}
    if group is None:
        test = [dataset[k] for k in perm[:n_test]]
        train = [dataset[k] for k in perm[n_test:]]
        return train, test
    train = [s for s, k in zip(dataset, keys) if k not in test_keys]
    test = [s for s, k in zip(dataset, keys) if k in test_keys]
    return train, test


def sr_volume_of(id_: str) -> str:
    return id_.rsplit("-", 1)[0]


def _channel_dirs(root: Path, stem: str) -> list[Path]:
    single = root / stem
    if single.is_dir():
        return [single]
    dirs = []
    k = 0
    while (root / f"{stem}_{k}").is_dir():
        dirs.append(root / f"{stem}_{k}")
        k += 1
    return dirs


def _find_file(d: Path, id_: str):
    for ext in (".pgm", ".png"):
        p = d / f"{id_}{ext}"
        if p.exists():
            return p
    return None


def load_image_dir(root, size: int | None = None, layout: str = "auto") -> list[PairSample]:
    """Read paired images listed in ``manifest.txt`` and normalise them to [-1, 1].

    ``size`` resizes every image bilinearly to ``size x size``. Problems
    (missing pair members, unreadable files, mixed bit depths) are gathered
    and raised together as one :class:`DatasetError`.
    """
    if layout != "auto":
        raise ValueError(f"unsupported layout {layout!r}")
    root = Path(root)
    problems = []
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise DatasetError([f"missing manifest {manifest}"])
    id_list = [ln.strip() for ln in manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
    tdirs, cdirs = _channel_dirs(root, "target"), _channel_dirs(root, "cond")
    if not tdirs:
        problems.append(f"no target/ directory under {root}")
    if not cdirs:
        problems.append(f"no cond/ directory under {root}")
    if problems:
        raise DatasetError(problems)
    depths = set()
    loaded = []
    for id_ in id_list:
        chans = {}
        ok = True
        for role, dirs in (("target", tdirs), ("cond", cdirs)):
            planes = []
            for d in dirs:
                p = _find_file(d, id_)
                if p is None:
                    problems.append(f"{id_}: missing {d.name}/{id_}.pgm|.png")
                    ok = False
                    continue
                try:
                    arr, bits = imageio.read_image(p)
                except (OSError, ValueError) as e:
                    problems.append(f"{id_}: unreadable {p.name}: {e}")
                    ok = False
                    continue
                depths.add(bits)
                x = imageio.to_unit_range(arr, bits)
                if size is not None:
                    x = np.clip(imageio.resize_bilinear(x, size), -1.0, 1.0)
                planes.append(x)
            chans[role] = planes
        if ok:
            shapes = {p.shape for p in chans["target"] + chans["cond"]}
            if len(shapes) != 1:
                problems.append(f"{id_}: mismatched image shapes {sorted(shapes)}")
                continue
            loaded.append((id_, chans))
    if len(depths) > 1:
        problems.append(f"mixed bit depths {sorted(depths)}")
    if problems:
        raise DatasetError(problems)
    return [PairSample(np.stack(ch["target"]), np.stack(ch["cond"]), id_) for id_, ch in loaded]


def save_image_dir(dataset: list[PairSample], root, bits: int = 16) -> None:
    """Write ``dataset`` in the layout :func:`load_image_dir` reads (PGM)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if not dataset:
        (root / "manifest.txt").write_text("", encoding="utf-8")
        return
    n_t, n_c = dataset[0].x0.shape[0], dataset[0].c.shape[0]

    def dirs(stem, n):
        return [root / stem] if n == 1 else [root / f"{stem}_{k}" for k in range(n)]

    tdirs, cdirs = dirs("target", n_t), dirs("cond", n_c)
    for d in tdirs + cdirs:
        d.mkdir(exist_ok=True)
    for s in dataset:
        for d, plane in zip(tdirs, s.x0):
            imageio.write_pgm(d / f"{s.id}.pgm", imageio.from_unit_range(plane, bits))
        for d, plane in zip(cdirs, s.c):
            imageio.write_pgm(d / f"{s.id}.pgm", imageio.from_unit_range(plane, bits))
    (root / "manifest.txt").write_text("".join(f"{s.id}\n" for s in dataset), encoding="utf-8")


def naive_baseline(sample: PairSample) -> np.ndarray:
    """Condition-only prediction: mean of the condition channels (identity for one channel)."""
    return sample.c.mean(axis=0, keepdims=True)
