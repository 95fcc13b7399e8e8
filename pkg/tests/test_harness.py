import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgscatter.cli import main
from kgscatter.config import ConfigError, child_seed, load_config
from kgscatter.experiment import render_csv, run_experiment
from kgscatter.grid import FieldState, make_grid
from kgscatter.report import render_report
from kgscatter.snapshots import HEADER_SIZE, SnapshotError, decode_snapshot, encode_snapshot, read_snapshot

SMOKE = {
    "theorem": "thm1",
    "exploratory": True,
    "seed": 7,
    "grid": {"dim": 1, "L": 80.0, "N": 64},
    "initial_data": {"family": "gaussian", "width": 1.0},
    "cutoffs": {"alpha": 1.0, "beta": 1.0},
    "run": {"dt": 0.5, "T_max": 32.0, "dyadic_start": 4.0, "checkpoint_stride": 1},
    "probes": [
        {"kind": "channel", "params": {"variant": "thm1"}},
        {"kind": "observables", "params": {"variant": "thm1"}},
        {"kind": "duhamel"},
        {"kind": "class_norms"},
        {"kind": "commutator", "required": False,
         "params": {"alpha": 0.8, "b": 0.2, "times": [1, 2, 4, 8], "iterations": 40}},
    ],
}


# ---------------------------------------------------------------- config

def test_defaults_are_materialized():
    cfg = load_config({"grid": {"dim": 1, "L": 200.0, "N": 256}, "run": {"T_max": 16.0}})
    assert cfg["run"]["dt"] == 0.05
    assert cfg["cutoffs"]["width"] == 1.0
    assert cfg["output"]["formats"] == ["csv", "json"]


def test_json_syntax_error_reports_position():
    with pytest.raises(ConfigError) as info:
        load_config('{"grid": {"dim": 1,\n  "L": }}')
    assert "line 2, column" in str(info.value)


def test_field_errors_are_collected():
    with pytest.raises(ConfigError) as info:
        load_config({"grid": {"dim": 4, "N": 7}, "run": {"dt": -1}, "bogus": 1,
                     "potential": {"terms": [{"kind": "warp"}]}})
    msg = "\n".join(info.value.problems)
    for path in ("grid.dim", "grid.N", "run.dt", "bogus", "potential.terms[0].kind"):
        assert path in msg


def test_validity_window_checked_at_load():
    with pytest.raises(ConfigError, match="validity window"):
        load_config({"grid": {"dim": 1, "L": 40.0, "N": 256}, "run": {"T_max": 32.0}})


def test_exponent_window_needs_exploratory():
    base = {"theorem": "thm1", "grid": {"dim": 1, "L": 200.0, "N": 256}, "run": {"T_max": 16.0}}
    with pytest.raises(ConfigError, match="exploratory"):
        load_config(base)
    assert load_config(dict(base, exploratory=True))["exploratory"] is True


def test_potential_errors_carry_paths():
    with pytest.raises(ConfigError, match=r"potential.terms\[0\]"):
        load_config({"grid": {"dim": 1, "L": 200.0, "N": 256}, "run": {"T_max": 16.0},
                     "potential": {"terms": [{"kind": "moving_bump", "profile": {}, "velocity": [1.2]}]}})


def test_child_seeds_are_stable_and_distinct():
    assert child_seed(3, "a") == child_seed(3, "a")
    assert child_seed(3, "a") != child_seed(3, "b") != child_seed(4, "b")


@pytest.mark.parametrize("family", ["gaussian", "plane_wave_packet", "random_band_limited"])
def test_initial_data_families(family):
    cfg = load_config({"grid": {"dim": 2, "L": 60.0, "N": 32}, "run": {"T_max": 8.0},
                       "initial_data": {"family": family, "width": 2.0}})
    a = cfg.initial_state()
    b = cfg.initial_state()
    assert np.array_equal(a.u.values, b.u.values)
    assert np.all(np.isfinite(a.u.values)) and np.abs(a.u.values).max() > 0


def test_random_data_depends_on_seed():
    base = {"grid": {"dim": 1, "L": 60.0, "N": 64}, "run": {"T_max": 8.0},
            "initial_data": {"family": "random_band_limited", "width": 3.0}}
    a = load_config(dict(base, seed=1)).initial_state().u.values
    b = load_config(dict(base, seed=2)).initial_state().u.values
    assert not np.allclose(a, b)


# ---------------------------------------------------------------- snapshots

@given(st.integers(1, 3), st.sampled_from([8, 16]), st.floats(1.0, 100.0), st.floats(0.0, 1e3),
       st.integers(0, 2 ** 32 - 1))
def test_snapshot_round_trip(dim, n, extent, t, seed):
    g = make_grid(dim, extent, n)
    rng = np.random.default_rng(seed)
    st_ = FieldState.from_arrays(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape),
                                 rng.standard_normal(g.shape))
    buf = encode_snapshot(st_, t)
    assert len(buf) == HEADER_SIZE + 32 * n ** dim
    back, t2 = decode_snapshot(buf)
    assert t2 == t and back.grid == g
    assert np.array_equal(back.u.values, st_.u.values)
    assert np.array_equal(back.udot.values, st_.udot.values)


def test_snapshot_header_layout():
    g = make_grid(2, 12.5, 8)
    buf = encode_snapshot(FieldState.from_arrays(g, np.ones(g.shape)), 3.0)
    assert buf[:8] == b"KGSNAP01"
    assert struct.unpack("<IIIIdd", buf[8:40]) == (0x01020304, 2, 8, 0, 12.5, 3.0)
    first = np.frombuffer(buf[40:56], dtype="<c16")[0]
    assert first == 1 + 0j


def test_big_endian_snapshot_is_read():
    g = make_grid(1, 10.0, 8)
    u = np.arange(8) + 0.5j
    head = b"KGSNAP01" + struct.pack(">IIIIdd", 0x01020304, 1, 8, 0, 10.0, 2.0)
    buf = head + u.astype(">c16").tobytes() + (2 * u).astype(">c16").tobytes()
    st_, t = decode_snapshot(buf)
    assert t == 2.0 and np.array_equal(st_.u.values, u) and np.array_equal(st_.udot.values, 2 * u)


def test_snapshot_rejects_garbage():
    with pytest.raises(SnapshotError):
        decode_snapshot(b"nope")
    g = make_grid(1, 10.0, 8)
    with pytest.raises(SnapshotError):
        decode_snapshot(encode_snapshot(FieldState.from_arrays(g, np.ones(8)), 0.0)[:-16])


# ---------------------------------------------------------------- experiment

def test_csv_layout():
    text = render_csv("lemma_x", [(1.0, 0.5, None), (2.0, 0.25, 0.26)])
    lines = text.splitlines()
    assert lines[0] == "# anchor: lemma_x"
    assert lines[1] == "time,value,fitted_model_value"
    assert lines[2] == "1,0.5,nan"
    assert lines[3] == "2,0.25,0.26000000000000001"


def test_smoke_experiment(tmp_path):
    status, rep = run_experiment(load_config(SMOKE), str(tmp_path))
    assert status == 0
    assert rep["probes"]["channel"]["status"] == "converged"
    assert rep["probes"]["channel"]["result"]["free_control_ok"]
    for name in ("channel", "observables", "duhamel", "class_norms", "commutator"):
        assert (tmp_path / f"{name}.csv").exists()
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp")]
    text = render_report(json.loads((tmp_path / "report.json").read_text()))
    assert "converged" in text and "exit status 0" in text


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(load_config(SMOKE), str(a))
    run_experiment(load_config(SMOKE), str(b))
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_embedded_config_reproduces_report(tmp_path):
    run_experiment(load_config(SMOKE), str(tmp_path / "a"))
    first = (tmp_path / "a" / "report.json").read_text()
    embedded = json.loads(first)["config"]
    run_experiment(load_config(embedded), str(tmp_path / "b"))
    assert (tmp_path / "b" / "report.json").read_text() == first


def test_exit_status_tracks_required_probes(tmp_path):
    cfg = json.loads(json.dumps(SMOKE))
    # a slope band that cannot hold
    bad = {"kind": "commutator", "name": "strict", "params": {"alpha": 0.8, "b": 0.2, "times": [1, 2, 4, 8],
                                                            "iterations": 40, "tolerance": 0.0}}
    cfg["probes"] = [dict(bad, required=False)]
    assert run_experiment(load_config(cfg), str(tmp_path / "opt"))[0] == 0
    cfg["probes"] = [bad]
    status, rep = run_experiment(load_config(cfg), str(tmp_path / "req"))
    assert status == 1 and rep["failed_required"] == ["strict"]


def test_blowup_is_recorded(tmp_path):
    cfg = {"grid": {"dim": 1, "L": 60.0, "N": 128}, "run": {"T_max": 20.0, "dt": 0.01, "blowup_factor": 10.0,
                                                           "checkpoint_stride": 10},
           "potential": {"terms": [{"kind": "static_localized", "profile": {"kind": "gaussian", "amplitude": -40.0}}]},
           "probes": [{"kind": "class_norms"}], "output": {"snapshots": True}}
    status, rep = run_experiment(load_config(cfg), str(tmp_path))
    assert status == 1
    assert "exceeds" in rep["abort"]["reason"]
    assert rep["probes"]["class_norms"]["status"] == "aborted"
    snaps = sorted(os.listdir(tmp_path / "snapshots"))
    assert len(snaps) >= 2
    st_, t = read_snapshot(tmp_path / "snapshots" / snaps[-1])
    assert t > 0


# ---------------------------------------------------------------- CLI

def test_cli_subcommands(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMOKE))
    assert main(["wave-op", "--config", str(path), "--out", str(tmp_path / "w")]) == 0
    rep = json.loads((tmp_path / "w" / "report.json").read_text())
    assert set(rep["probes"]) == {"channel", "observables", "duhamel", "class_norms"}
    assert main(["commutator-check", "--config", str(path), "--out", str(tmp_path / "c"), "--seed", "11"]) == 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert set(rep["probes"]) == {"commutator"} and rep["config"]["seed"] == 11
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "snapshots").is_dir()
    assert main(["report", str(tmp_path / "w")]) == 0
    assert "channel" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"grid": {"dim": 5}}))
    assert main(["simulate", "--config", str(path)]) == 2
    assert "grid.dim" in capsys.readouterr().err


def test_cli_exploratory_flag(tmp_path):
    cfg = dict(SMOKE, exploratory=False)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["wave-op", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    assert main(["wave-op", "--config", str(path), "--out", str(tmp_path / "y"), "--exploratory"]) == 0
