import csv
import os
from dataclasses import replace

import numpy as np
import pytest

from noisyoct.harness import experiments as ex
from noisyoct.harness.checkpoint import (
    CheckpointError,
    FieldCheckpoint,
    read_checkpoint,
    write_checkpoint,
)
from noisyoct.harness.cli import main
from noisyoct.harness.config import ConfigError, ExperimentConfig, load_config, parse_grid
from noisyoct.krotov import ControlField, guess_field
from noisyoct.gates import hadamard_spec

QUICK = """
[gate]
name = hadamard
cycles = 2

[noise]
kind = phase
gammas = 0 1e-3 1e-2

[optimizer]
max_iters = 40
stepper = expm
target_infidelity = 1e-3

[trajectory]
gamma = 1e-2
"""


@pytest.fixture
def quick_cfg():
    return ExperimentConfig.from_text(QUICK)


@pytest.fixture(scope="module")
def baseline():
    cfg = ExperimentConfig.from_text(QUICK)
    return ex.run_baseline(cfg)


# --- config ----------------------------------------------------------------------

def test_parse_grid():
    assert np.allclose(parse_grid("geom 1e-3 1e-1 3"), [1e-3, 1e-2, 1e-1])
    assert np.allclose(parse_grid("lin 0 1 3"), [0, 0.5, 1])
    assert np.allclose(parse_grid("0, 1e-3 geom 1e-2 1e-1 2"), [0, 1e-3, 1e-2, 1e-1])
    for bad in ("", "geom 1 2", "geom 0 1 3", "lin 0 1 0", "1 -2", "abc"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_config_round_trip(quick_cfg):
    again = ExperimentConfig.from_text(quick_cfg.text())
    assert again.text() == quick_cfg.text()
    assert again.digest() == quick_cfg.digest()
    assert again.gammas == quick_cfg.gammas


def test_config_digest_changes():
    a = ExperimentConfig()
    b = replace(a, seed=1)
    assert a.digest() != b.digest()


def test_per_channel_settings_round_trip():
    text = """
[gate]
name = entangling
omega2 = 0.25
[optimizer]
lam.z = 2.0
lam.e = 0.5
[guess]
amplitude.z = 0.1
seed = 3
perturbation = 0.05
"""
    cfg = ExperimentConfig.from_text(text)
    assert cfg.optimizer.lam == {"z": 2.0, "e": 0.5}
    assert cfg.guess_amplitudes == {"z": 0.1}
    assert cfg.spec().params["omega2"] == 0.25
    assert ExperimentConfig.from_text(cfg.text()).text() == cfg.text()


@pytest.mark.parametrize("text", [
    "[gaet]\nname = hadamard",
    "[noise]\nrate = 1",
    "[gate]\nname = toffoli",
    "[noise]\nkind = thermal",
    "[noise]\npilot = random",
    "[optimizer]\nlam = -1",
    "[gate]\nname = hadamard\nbogus = 1",
    "[run]\nworkers = 0",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        cfg = ExperimentConfig.from_text(text)
        cfg.spec()


def test_load_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_shipped_configs_load():
    here = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    names = sorted(f for f in os.listdir(here) if f.endswith(".ini"))
    assert names
    for name in names:
        cfg = load_config(os.path.join(here, name))
        cfg.spec()


# --- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    spec = hadamard_spec()
    fld = guess_field(spec, 0.1)
    fld = fld.with_array(fld.array() + rng.standard_normal(fld.array().shape) * 1e-3)
    ck = FieldCheckpoint("hadamard", fld, "abc123", 17, 3.25e-7)
    path = tmp_path / "f.ckpt"
    write_checkpoint(path, ck)
    back = read_checkpoint(path)
    assert back.gate == "hadamard" and back.config_hash == "abc123"
    assert back.iterations == 17 and back.infidelity == 3.25e-7
    assert np.array_equal(back.field.array(), fld.array())
    assert np.array_equal(back.field.shape, fld.shape)
    assert np.array_equal(back.field.times, fld.times)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("hello\n")
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "none.ckpt")
    fld = ControlField(np.linspace(0, 1, 3), {"c": [0.1, 0.2]}, [1.0, 1.0])
    good = tmp_path / "good.ckpt"
    write_checkpoint(good, FieldCheckpoint("g", fld))
    text = good.read_text().replace("n_steps = 2", "n_steps = 3")
    bad.write_text(text)
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    bad.write_text(good.read_text().replace("version = 1", "version = 9"))
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)


# --- workflows ---------------------------------------------------------------------

def test_baseline_report(baseline, quick_cfg):
    ckpt, report, trace = baseline
    assert report["converged"] and report["if_u"] <= 1e-3
    assert ckpt.config_hash == quick_cfg.digest()
    assert trace.monotonic


def test_rerun_from_checkpoint_is_fixed_point(baseline, quick_cfg, tmp_path):
    ckpt, report, _ = baseline
    path = tmp_path / "b.ckpt"
    write_checkpoint(path, ckpt)
    cfg = replace(quick_cfg, guess_source=str(path))
    _, again, _ = ex.run_baseline(cfg)
    assert again["iterations"] == 0


def test_sweep_rows(baseline, quick_cfg):
    ckpt = baseline[0]
    res = ex.run_noise_sweep(quick_cfg, ckpt)
    rows = ex.sweep_rows(res, 1.0)
    assert rows[0]["IF_n"] == rows[0]["IF_F"] == rows[0]["IF_U"]
    assert rows[0]["log10_NC"] == 0.0
    assert rows[1]["IF_n"] < rows[2]["IF_n"]
    for r in rows:
        assert r["IF_F"] <= r["IF_n"] + 1e-12
        assert r["log10_NC"] >= -1e-12


def test_chain_pilot_never_worse(baseline, quick_cfg):
    cfg = replace(quick_cfg, pilot="chain", gammas=(0.0, 1e-2, 1e-3))
    res = ex.run_noise_sweep(cfg, baseline[0])
    assert res.guesses[0] == "baseline"
    assert res.guesses[1] == "baseline"
    assert np.all(res.if_f <= res.if_n + 1e-12)
    frozen = ex.run_noise_sweep(replace(cfg, pilot="baseline"), baseline[0])
    assert np.allclose(res.if_n, frozen.if_n, rtol=0, atol=1e-15)


def test_parallel_sweep_matches_serial(baseline, quick_cfg):
    serial = ex.run_noise_sweep(quick_cfg, baseline[0])
    pooled = ex.run_noise_sweep(replace(quick_cfg, workers=2), baseline[0])
    assert np.array_equal(serial.if_f, pooled.if_f)


def test_sweep_rejects_foreign_checkpoint(baseline):
    cfg = ExperimentConfig.from_text(QUICK.replace("name = hadamard", "name = pauli_x").replace("cycles = 2", ""))
    with pytest.raises(ConfigError):
        ex.run_noise_sweep(cfg, baseline[0])


def test_trajectory_rows(baseline, quick_cfg):
    rows = ex.run_trajectory(quick_cfg, baseline[0])
    by_run = {}
    for r in rows:
        by_run.setdefault(r["run"], []).append(r)
    ref = np.array([r["radius"] for r in by_run["reference"]])
    noisy = np.array([r["radius"] for r in by_run["noisy"]])
    mitigated = np.array([r["radius"] for r in by_run["mitigated"]])
    assert np.allclose(ref, 1, atol=1e-8)
    assert noisy.min() < 1 - 1e-3
    assert mitigated[-1] > noisy[-1]


def test_timekeeping_rows(baseline, quick_cfg):
    cfg = replace(quick_cfg, gammas=tuple(np.geomspace(1e-5, 1e-1, 6)))
    rows = ex.run_timekeeping_compare(cfg, baseline[0])
    assert len(rows) == 6
    assert rows[0]["F_numeric"] == pytest.approx(1 - baseline[1]["if_u"], abs=1e-3)
    assert all(np.isfinite(r["theta"]) for r in rows)
    with pytest.raises(ConfigError):
        ex.run_timekeeping_compare(replace(cfg, gammas=(0.0, 1e-3)), baseline[0])


def test_staged_small():
    cfg = ExperimentConfig.from_text("""
[gate]
name = entangling
periods = 1
[noise]
kind = phase
[propagator]
m_points = 9
krylov_dim = 9
[optimizer]
max_iters = 3
stepper = expm
[staged]
noise_kind = phase
gammas = 0 1e-3
series_gammas = 1e-3
stage2_iters = 3
""")
    res = ex.run_staged(cfg)
    assert [r["gamma"] for r in res.rows] == [0.0, 1e-3]
    assert "cold_IF" in res.rows[0] and "cold_IF" not in res.rows[1]
    assert all(0 <= r["ancilla_max"] <= 1 for r in res.rows)
    assert {s["gamma"] for s in res.series} == {1e-3}
    with pytest.raises(ConfigError):
        ex.run_staged(ExperimentConfig())


# --- CSV and CLI -------------------------------------------------------------------

def test_csv_format(tmp_path):
    path = tmp_path / "x.csv"
    ex.write_csv(path, [{"a": 0.1, "b": 3, "c": "s"}], ["a", "b", "c"])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "0.10000000000000001,3,s"


def test_cli_baseline_and_sweep_are_deterministic(tmp_path):
    cfg_path = tmp_path / "q.ini"
    cfg_path.write_text(QUICK)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    with open(tmp_path / "run0" / "sweep.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ex.SWEEP_COLUMNS
    ck = read_checkpoint(tmp_path / "run0" / "baseline.ckpt")
    assert ck.config_hash == load_config(cfg_path).digest()


def test_cli_exit_codes(tmp_path):
    assert main(["baseline", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 1
    strict = tmp_path / "strict.ini"
    strict.write_text(QUICK.replace("target_infidelity = 1e-3", "target_infidelity = 1e-12")
                      .replace("max_iters = 40", "max_iters = 2"))
    assert main(["baseline", "--config", str(strict), "--out", str(tmp_path / "s")]) == 2
    bad_ck = tmp_path / "bad.ckpt"
    bad_ck.write_text("nope")
    assert main(["trajectory", "--config", str(strict), "--checkpoint", str(bad_ck),
                 "--out", str(tmp_path)]) == 1


def test_inline_comments_are_ignored():
    cfg = ExperimentConfig.from_text("[noise]\nkind = amplitude   # controller amplitude\n")
    assert cfg.noise_kind == "amplitude"
