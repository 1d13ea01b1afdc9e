import subprocess
import sys
import time

import numpy as np
import pytest

from sornet import cli
from sornet.checkpoint import load_checkpoint, save_checkpoint
from sornet.config import ConfigError, RunConfig, parse_text
from sornet.data import load_png, save_png
from sornet.toy import bundled


# ---------------------------------------------------------------- config

def test_parse_rejects_unknown_and_malformed():
    assert parse_text("arch = selfonn  # comment\n\n# only comment\nq=2") == \
        {"arch": "selfonn", "q": "2"}
    with pytest.raises(ConfigError, match="x.cfg:2: unknown key 'colour'"):
        parse_text("arch = edsr\ncolour = red", "x.cfg")
    with pytest.raises(ConfigError, match=":1:"):
        parse_text("just words")


def test_overrides_win(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("arch = selfonn\nchannels = 32\nseed = 4\n")
    cfg = RunConfig.load(path, ["channels=16", "blocks = 2"])
    spec = cfg.model_spec()
    assert (spec.arch, spec.channels, spec.num_blocks) == ("selfonn", 16, 2)
    assert cfg.get_int("seed") == 4
    with pytest.raises(ConfigError):
        RunConfig.load(path, ["nokey=1"])
    with pytest.raises(ConfigError):
        RunConfig.load(path, ["channels"])
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.cfg")


def test_derived_defaults_and_conflicts():
    cfg = RunConfig({"arch": "hybrid"})
    r = cfg.resolved()
    assert (r["blocks"], r["num_sor"], r["upsampler"], r["schedule"], r["crop"]) == \
        ("16", "4", "sol", "selfonn", "2")
    assert RunConfig({}).resolved()["schedule"] == "edsr"
    with pytest.raises(ConfigError, match="num_sor"):
        RunConfig({"arch": "edsr", "num_sor": "2"}).model_spec()
    with pytest.raises(ConfigError, match="upsampler"):
        RunConfig({"arch": "selfonn", "upsampler": "conv"}).model_spec()
    with pytest.raises(ConfigError):
        RunConfig({"channels": "many"}).model_spec()
    with pytest.raises(ConfigError):
        RunConfig({"scale": "3"}).model_spec()
    with pytest.raises(ConfigError, match="together"):
        RunConfig({"mean_r": "0.5"}).means()
    with pytest.raises(ConfigError, match="train_data"):
        RunConfig({}).train_config()


def test_resolved_echo_round_trips(tmp_path):
    cfg = RunConfig({"arch": "selfonn", "blocks": "2", "runs_dir": str(tmp_path)})
    path = cfg.write_resolved()
    assert path == tmp_path / "run" / "config.resolved"
    again = RunConfig.load(path)
    assert again.resolved() == cfg.resolved()


# ---------------------------------------------------------------- count-params

def test_count_params_table1(capsys):
    t0 = time.perf_counter()
    assert cli.main(["count-params", "--table1"]) == 0
    assert time.perf_counter() - t0 < 1.0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "4 (32): 365,059"
    assert lines[1] == "8 (32): 586,499"
    assert lines[2] == "4 (64): 1,448,963"
    assert lines[3].startswith("8 (64): 2,334,211") and "2,334,311" in lines[3]


@pytest.mark.parametrize("sets,expected", [
    (["arch=edsr"], "1,369,859"), (["arch=hybrid"], "2,331,779"),
    (["arch=selfonn", "scale=4"], "2,776,835")])
def test_count_params_from_config(capsys, sets, expected):
    argv = ["count-params"]
    for s in sets:
        argv += ["--set", s]
    assert cli.main(argv) == 0
    assert capsys.readouterr().out.strip().endswith(": " + expected)


def test_config_error_exit_code(capsys):
    assert cli.main(["count-params", "--set", "arch=vdsr"]) == cli.EXIT_CONFIG
    assert "arch" in capsys.readouterr().err


# ---------------------------------------------------------------- dataset

def test_make_dataset_checksums_stable(tmp_path, capsys):
    hr = tmp_path / "hr"
    save_png(np.random.default_rng(0).random((1, 3, 21, 30)), hr / "x.png")
    out = tmp_path / "ds"
    assert cli.main(["make-dataset", "--hr", str(hr), "--out", str(out),
                     "--scale", "2", "--scale", "4"]) == 0
    first = (out / "MANIFEST.sha256").read_text()
    assert cli.main(["make-dataset", "--hr", str(hr), "--out", str(out),
                     "--scale", "2", "--scale", "4"]) == 0
    assert (out / "MANIFEST.sha256").read_text() == first
    assert load_png(out / "LRx4" / "x.png").shape == (1, 3, 5, 7)


def test_make_dataset_missing_input_exit_code(tmp_path):
    assert cli.main(["make-dataset", "--hr", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


# ---------------------------------------------------------------- train / eval / sr

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train_dir, val_dir = bundled()
    cfg = root / "tiny.cfg"
    cfg.write_text(f"name = tiny\nruns_dir = {root}\narch = selfonn\nblocks = 1\nchannels = 4\n"
                   f"q = 2\niters = 4\nbatch = 2\npatch = 8\ncheckpoint_interval = 2\n"
                   f"train_data = {train_dir}\nval_data = {val_dir}\n")
    assert cli.main(["train", "--config", str(cfg), "--seed", "5"]) == 0
    return root, cfg


def test_train_writes_run_directory(trained):
    root, _ = trained
    run = root / "tiny"
    names = sorted(p.name for p in run.iterdir())
    assert names == ["ckpt_0000002.bin", "ckpt_0000004.bin", "config.resolved", "loss.log"]
    resolved = RunConfig.load(run / "config.resolved")
    assert resolved.get_int("seed") == 5 and resolved.means() is not None
    ck = load_checkpoint(run / "ckpt_0000004.bin")
    assert ck.meta["iteration"] == "4" and ck.meta["seed"] == "5"


def test_train_reproducible_from_echoed_config(trained, tmp_path):
    root, _ = trained
    resolved = root / "tiny" / "config.resolved"
    assert cli.main(["train", "--config", str(resolved), "--set", f"runs_dir={tmp_path}"]) == 0
    assert ((tmp_path / "tiny" / "ckpt_0000004.bin").read_bytes()
            == (root / "tiny" / "ckpt_0000004.bin").read_bytes())


def test_eval_report(trained, capsys):
    root, cfg = trained
    ckpt = root / "tiny" / "ckpt_0000004.bin"
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out
    tsv = (root / "tiny" / "report.tsv").read_text().splitlines()
    assert tsv[0] == "id\tpsnr\tssim\terror" and len(tsv) == 3
    summary = (root / "tiny" / "report.summary").read_text()
    assert "mean_psnr = " in summary and "mean_ssim = " in summary and "mean_psnr" in out


def test_eval_rejects_mismatched_spec(trained, capsys):
    root, cfg = trained
    ckpt = root / "tiny" / "ckpt_0000004.bin"
    code = cli.main(["eval", "--config", str(cfg), "--set", "channels=8",
                     "--checkpoint", str(ckpt)])
    assert code == cli.EXIT_CONFIG
    assert "channels" in capsys.readouterr().err


def test_sr_shape_contract(trained, tmp_path):
    root, _ = trained
    src = tmp_path / "in.png"
    save_png(np.random.default_rng(0).random((1, 3, 80, 100)), src)
    assert cli.main(["sr", "--checkpoint", str(root / "tiny" / "ckpt_0000004.bin"),
                     str(src), str(tmp_path / "out.png")]) == 0
    assert load_png(tmp_path / "out.png").shape == (1, 3, 160, 200)


def test_bad_checkpoint_exit_codes(trained, tmp_path):
    root, _ = trained
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    png = tmp_path / "in.png"
    save_png(np.zeros((1, 3, 8, 8)), png)
    assert cli.main(["sr", "--checkpoint", str(junk), str(png),
                     str(tmp_path / "o.png")]) == cli.EXIT_DATA
    ck = load_checkpoint(root / "tiny" / "ckpt_0000004.bin")
    ck.meta = {k: v for k, v in ck.meta.items() if not k.startswith("mean.")}
    save_checkpoint(ck, tmp_path / "nomeans.bin")
    assert cli.main(["sr", "--checkpoint", str(tmp_path / "nomeans.bin"), str(png),
                     str(tmp_path / "o.png")]) == cli.EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path):
    train_dir, _ = bundled()
    code = cli.main(["train", "--set", "arch=selfonn", "--set", "blocks=1",
                     "--set", "channels=4", "--set", "iters=50", "--set", "batch=2",
                     "--set", "patch=8", "--set", "lr=1e30", "--set", f"runs_dir={tmp_path}",
                     "--set", f"train_data={train_dir}"])
    assert code == cli.EXIT_NUMERIC
    assert (tmp_path / "run" / "ckpt_nonfinite.bin").exists()


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "sornet.cli", "count-params", "--table1"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("4 (32): 365,059")
