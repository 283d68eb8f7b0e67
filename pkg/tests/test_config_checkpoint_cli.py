import io
import subprocess
import sys

import numpy as np
import pytest

from fastddpm import cli, experiment as ex
from fastddpm.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from fastddpm.config import ConfigError, RunConfig, from_pairs, load_config, parse_pairs
from fastddpm.denoiser import DenoiserConfig, init
from fastddpm.numerics import AdamState, RandomSource, adam_step, read_tensor
from fastddpm.schedule import NonUniform, build_base, subsample

TINY = """\
# tiny run for tests
task = denoise
steps = 3
base_width = 4
levels = 2
time_embed_dim = 8
image_size = 8
iterations = 6
batch_size = 2
n_items = 10
test_fraction = 0.2
checkpoint_every = 3
log_every = 0
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY + f"out_dir = {tmp_path / 'run'}\n", encoding="utf-8")
    return p


# --- config ---------------------------------------------------------------------------

def test_parse_and_coerce(cfg_file):
    cfg = load_config(cfg_file)
    assert cfg.steps == 3 and cfg.base_width == 4 and cfg.lr == 2e-4 and cfg.task == "denoise"
    assert cfg.grid().indices == (333, 667, 1000)


def test_unknown_and_bad_keys():
    with pytest.raises(ConfigError, match="stepz"):
        from_pairs({"stepz": "3"})
    with pytest.raises(ConfigError):
        from_pairs({"steps": "three"})
    with pytest.raises(ConfigError):
        parse_pairs("steps = 3\nsteps = 4\n")
    with pytest.raises(ConfigError):
        parse_pairs("just words\n")
    with pytest.raises(ConfigError):
        RunConfig(task="classify")
    with pytest.raises(ConfigError):
        RunConfig(task="custom-dir")


def test_hash_and_header():
    a, b = RunConfig(), RunConfig(seed=1)
    assert a.hash() == RunConfig().hash() != b.hash()
    assert a.header() == f"# fastddpm config_hash={a.hash()}\n"
    assert from_pairs(parse_pairs(a.to_text())) == a


def test_channels_and_kind():
    assert RunConfig(task="sr").denoiser_config().cond_channels == 2
    assert RunConfig(scheduler="nonuniform").grid().indices[3] == 699
    assert RunConfig(scheduler="nonuniform", boundary_index=500).kind() == NonUniform(500, 0.6)


# --- checkpoint -----------------------------------------------------------------------

@pytest.fixture
def saved(tmp_path):
    cfg = DenoiserConfig(base_width=4, levels=2, time_embed_dim=8, image_size=8)
    net = init(cfg, RandomSource(0))
    opt = AdamState(lr=1e-3)
    adam_step(net.arrays(), [np.ones_like(a) for a in net.arrays()], opt)
    grid = subsample(build_base(), 10, NonUniform())
    path = tmp_path / "ck.fdpm"
    save_checkpoint(path, net, grid, 17, opt, "seed = 3\n")
    return path, net, grid, opt


def test_checkpoint_round_trip(saved):
    path, net, grid, opt = saved
    net2, grid2, it, opt2, text = load_checkpoint(path)
    assert it == 17 and grid2 == grid and text == "seed = 3\n"
    assert net2.config == net.config and net2.names == net.names
    for a, b in zip(net.arrays(), net2.arrays()):
        assert a.tobytes() == b.tobytes()
    assert opt2.step == 1 and opt2.lr == 1e-3
    for a, b in zip(opt.m + opt.v, opt2.m + opt2.v):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_layout(saved):
    path, net, _, _ = saved
    raw = path.read_bytes()
    assert raw[:4] == b"FDPM"
    assert int.from_bytes(raw[4:8], "little") == 1
    n = int.from_bytes(raw[8:12], "little")
    fh = io.BytesIO(raw[12 + n:])
    assert read_tensor(fh).tobytes() == net.arrays()[0].tobytes()


def test_checkpoint_refuses_bad_files(saved, tmp_path):
    path = saved[0]
    raw = path.read_bytes()
    cases = {
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + (2).to_bytes(4, "little") + raw[8:],
        "truncated": raw[:-10],
        "trailing": raw + b"\x00",
        "header": raw[:6],
    }
    for name, data in cases.items():
        p = tmp_path / f"{name}.fdpm"
        p.write_bytes(data)
        with pytest.raises(CheckpointError) as e:
            load_checkpoint(p)
        if name == "version":
            assert "version 2" in str(e.value)


# --- CLI --------------------------------------------------------------------------------

def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_cli_schedule_stdout(capsys):
    assert run_cli("schedule", "--steps", "10") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# fastddpm config_hash=")
    assert out[1] == "grid_pos,base_index,t,alpha,sigma,snr"
    assert len(out) == 13


def test_cli_schedule_nonuniform_file(tmp_path):
    assert run_cli("schedule", "--scheduler", "nonuniform", "--out", tmp_path) == 0
    rows = (tmp_path / "schedule.csv").read_text().splitlines()[2:]
    assert sum(int(r.split(",")[1]) > 699 for r in rows) == 6
    assert (tmp_path / "config.resolved.txt").exists()


def test_cli_oracle_pass_and_fail(tmp_path, capsys):
    assert run_cli("oracle", "--out", tmp_path) == 0
    text = (tmp_path / "oracle.txt").read_text()
    assert "FAIL" not in text and text.count("PASS") == 24
    bad = tmp_path / "bad.cfg"
    bad.write_text("beta_end = 0.005\n", encoding="utf-8")
    assert run_cli("oracle", "--config", bad) == 1
    assert "FAIL schedule[T=500].endpoint_is_pure_noise" in capsys.readouterr().out


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n", encoding="utf-8")
    assert run_cli("schedule", "--config", bad) == 2
    assert "unknown config keys: colour" in capsys.readouterr().err
    assert run_cli("eval", "--checkpoint", tmp_path / "none.fdpm", "--out", tmp_path) == 2
    assert run_cli("schedule", "--steps", "0") == 2


def test_cli_train_sample_eval(cfg_file, tmp_path):
    run = tmp_path / "run"
    assert run_cli("train", "--config", cfg_file) == 0
    loss = (run / "loss.csv").read_text().splitlines()
    assert loss[0].startswith("# fastddpm config_hash=") and loss[1] == "iteration,loss"
    its = [int(r.split(",")[0]) for r in loss[2:]]
    assert its == list(range(1, 7))
    _, _, it, opt, _ = load_checkpoint(run / "checkpoint.fdpm")
    assert it == 6 and opt.step == 6

    assert run_cli("sample", "--config", cfg_file, "--trajectory") == 0
    assert len(list((run / "samples").glob("*.pgm"))) == 2
    with open(run / "trajectory.fdt", "rb") as fh:
        traj = [read_tensor(fh) for _ in range(4)]
        assert fh.read() == b""
    assert traj[0].shape == (1, 1, 8, 8)

    assert run_cli("eval", "--config", cfg_file) == 0
    ev = (run / "eval.csv").read_text().splitlines()
    assert ev[1] == "id,psnr_db,ssim" and ev[-2].startswith("mean,") and len(ev) == 2 + 2 + 2
    assert (run / "timing.csv").read_text().splitlines()[1] == "steps,seconds_per_image"

    # the checkpoint grid must match the config grid
    assert run_cli("eval", "--config", cfg_file, "--steps", "4") == 2


def test_cli_sample_deterministic(cfg_file, tmp_path):
    run = tmp_path / "run"
    assert run_cli("train", "--config", cfg_file) == 0
    outs = []
    for k in range(2):
        assert run_cli("sample", "--config", cfg_file, "--out", run) == 0
        outs.append(sorted((p.name, p.read_bytes()) for p in (run / "samples").glob("*.pgm")))
    assert outs[0] == outs[1]


def test_cli_resume_matches(cfg_file, tmp_path):
    cfg = load_config(cfg_file)
    full = tmp_path / "full"
    part = tmp_path / "part"
    assert run_cli("train", "--config", cfg_file, "--out", full) == 0
    train, _ = ex.load_data(cfg)
    ex.train(cfg.replace(out_dir=str(part)), train, out_dir=part, stop_at=3)
    assert run_cli("train", "--config", cfg_file, "--out", part, "--resume") == 0
    a = load_checkpoint(full / "checkpoint.fdpm")
    b = load_checkpoint(part / "checkpoint.fdpm")
    for x, y in zip(a[0].arrays() + a[3].m + a[3].v, b[0].arrays() + b[3].m + b[3].v):
        assert x.tobytes() == y.tobytes()
    # headers differ only through out_dir in the resolved-config hash
    assert (full / "loss.csv").read_text().splitlines()[1:] == (part / "loss.csv").read_text().splitlines()[1:]


def test_cli_benches(cfg_file, tmp_path):
    out = tmp_path / "bench"
    assert run_cli("bench-steps", "--config", cfg_file, "--steps", "2,3", "--out", out) == 0
    rows = (out / "bench_steps.csv").read_text().splitlines()
    assert rows[0].startswith("# fastddpm") and len(rows) == 4
    assert rows[1].split(",")[:3] == ["steps", "psnr_db", "ssim"]
    assert run_cli("bench-scheduler", "--config", cfg_file, "--out", out) == 0
    rows = (out / "bench_scheduler.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[2:]] == ["uniform", "nonuniform"]
    assert "699 850 1000" in rows[3]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fastddpm", "schedule", "--steps", "2"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.splitlines()[-1].startswith("2,1000,1,")


def test_threads_env(monkeypatch):
    monkeypatch.setenv("FASTDIFF_THREADS", "3")
    assert ex.worker_count() == 3
