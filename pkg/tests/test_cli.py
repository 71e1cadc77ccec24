"""End-to-end checks of the command-line runner and its config machinery.

Covers the flat config parser (line numbers in diagnostics, duplicate and
unknown keys), schema typing and defaults, each subcommand writing its
artifact set into a fresh directory, exit codes (0 success, 2 config
error, 3 numerical failure), seed/worker resolution order, and the rerun
guarantee: the same config and seed produce a byte-identical results.csv.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np
import pytest

from divkern import ConfigError, cli
from divkern.cli import _SCHEMAS, TABLE_HEADER, main, run
from divkern.configfile import ConfigValue, Field, Schema, parse_config
from divkern.presets import PRESETS, get_preset


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def _read_rows(out_dir, name="results.csv"):
    with open(os.path.join(out_dir, name), newline="") as fh:
        return list(csv.reader(fh))


def _read_meta(out_dir):
    with open(os.path.join(out_dir, "meta.json"), encoding="utf-8") as fh:
        return json.load(fh)


SIM_CFG = """\
# small terminal-distribution run
model = ou
gamma = 0.5, 0.2
dt = 0.01
t = 0.2
n_paths = 2000
seed = 11

[bins]
interval = -3, 3
n = 8
min_count = 20
"""


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_sections_comments_lines(tmp_path):
    path = _write(
        tmp_path,
        "a.cfg",
        "# header comment\nmodel = ou\ngamma = 0.5, 0.2\n\n[bins]\nn = 8  # eight\n",
    )
    parsed = parse_config(path)
    assert set(parsed) == {"model", "gamma", "bins.n"}
    assert parsed["model"] == ConfigValue("ou", 2)
    assert parsed["gamma"].raw == "0.5, 0.2"
    assert parsed["bins.n"] == ConfigValue("8", 6)


def test_parse_config_duplicate_key_reports_line(tmp_path):
    path = _write(tmp_path, "dup.cfg", "model = ou\nseed = 1\nseed = 2\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "duplicate key 'seed'" in str(err.value)
    assert ":3:" in str(err.value)


@pytest.mark.parametrize(
    "line, message",
    [
        ("just a token", "expected 'key = value'"),
        ("[]", "empty section"),
        ("= 3", "empty key"),
    ],
)
def test_parse_config_malformed_lines(tmp_path, line, message):
    path = _write(tmp_path, "bad.cfg", "model = ou\n" + line + "\n")
    with pytest.raises(ConfigError, match=message):
        parse_config(path)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        parse_config(str(tmp_path / "nope.cfg"))


# ---------------------------------------------------------------------------
# schema application


def test_schema_rejects_unknown_key_with_line():
    sch = Schema({"a": Field("int", 1)})
    with pytest.raises(ConfigError) as err:
        sch.apply({"b": ConfigValue("2", 7)})
    assert "line 7" in str(err.value)
    assert "unknown config key 'b'" in str(err.value)


def test_schema_required_and_defaults():
    sch = Schema(
        {
            "a": Field("int", required=True),
            "b": Field("float", 2.5),
            "c": Field("bool", False),
            "d": Field("floats"),
        }
    )
    out = sch.apply({"a": ConfigValue("3", 1)})
    assert out == {"a": 3, "b": 2.5, "c": False, "d": None}
    with pytest.raises(ConfigError, match="missing required config key 'a'"):
        sch.apply({})


@pytest.mark.parametrize(
    "kind, raw",
    [
        ("int", "two"),
        ("float", "1..5"),
        ("bool", "maybe"),
        ("floats", ""),
        ("seed", "-1"),
        ("seed", str(2**64)),
    ],
)
def test_schema_bad_values_report_line(kind, raw):
    sch = Schema({"k": Field(kind)})
    with pytest.raises(ConfigError) as err:
        sch.apply({"k": ConfigValue(raw, 4)})
    assert "line 4" in str(err.value)
    assert "bad value for 'k'" in str(err.value)


def test_schema_value_conversions():
    sch = Schema({"flag": Field("bool"), "xs": Field("floats"), "s": Field("seed")})
    out = sch.apply(
        {
            "flag": ConfigValue("on", 1),
            "xs": ConfigValue("1, 2  -3", 2),
            "s": ConfigValue("7", 3),
        }
    )
    assert out["flag"] is True
    assert np.array_equal(out["xs"], [1.0, 2.0, -3.0])
    assert out["s"] == 7
    assert sch.apply({"flag": ConfigValue("no", 1)})["flag"] is False


# ---------------------------------------------------------------------------
# helper functions


def test_direction_vec_overrides_index():
    vec = np.array([0.0, 1.0])
    assert cli._direction({"direction_vec": vec, "direction": 0}) is vec
    assert cli._direction({"direction_vec": None, "direction": 1}) == 1


def test_bin_spec_defaults_and_validation():
    spec = cli._bin_spec({"bins.interval": None, "bins.n": 10, "bins.min_count": 30})
    assert spec.interval == (-2.0, 2.0)
    with pytest.raises(ConfigError, match="exactly two numbers"):
        cli._bin_spec(
            {"bins.interval": np.array([1.0, 2.0, 3.0]), "bins.n": 10, "bins.min_count": 30}
        )


def test_n_steps_rounds_and_rejects_sub_step_horizon():
    assert cli._n_steps({"t": 1.0, "dt": 0.01}) == 100
    assert cli._n_steps({"t": 0.014, "dt": 0.01}) == 1
    with pytest.raises(ConfigError, match="shorter than one step"):
        cli._n_steps({"t": 0.004, "dt": 0.01})


# ---------------------------------------------------------------------------
# run() plumbing and presets


def test_run_requires_config_or_preset(tmp_path):
    with pytest.raises(ConfigError, match="missing --config"):
        run("simulate")
    with pytest.raises(ConfigError, match="repro needs a preset"):
        run("repro")
    empty = _write(tmp_path, "empty.cfg", "")
    with pytest.raises(ConfigError, match="unknown subcommand"):
        run("walk", config_path=empty)


def test_get_preset_unknown_name():
    with pytest.raises(ConfigError, match="unknown preset 'nope'"):
        get_preset("nope")


def test_presets_validate_under_their_schemas():
    for name, entry in PRESETS.items():
        parsed = {k: ConfigValue(v, 0) for k, v in entry["config"].items()}
        cfg = _SCHEMAS[entry["subcommand"]].apply(parsed)
        assert cfg["model"], name


def test_repro_maps_preset_through_runner(tmp_path, monkeypatch):
    entry = {
        "subcommand": "simulate",
        "config": {
            "model": "ou",
            "gamma": "0, 0",
            "dt": "0.01",
            "t": "0.05",
            "n_paths": "500",
            "seed": "3",
        },
    }
    monkeypatch.setattr(cli, "get_preset", lambda name: entry)
    out = str(tmp_path / "repro_out")
    assert run("repro", preset="tiny", out=out) == 0
    meta = _read_meta(out)
    assert meta["preset"] == "tiny"
    assert meta["subcommand"] == "simulate"
    assert meta["seed"] == 3


# ---------------------------------------------------------------------------
# simulate: artifacts, reruns, seed/worker resolution


def test_simulate_writes_expected_artifacts(tmp_path):
    cfg = _write(tmp_path, "sim.cfg", SIM_CFG)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0

    rows = _read_rows(out)
    assert rows[0] == list(TABLE_HEADER)
    assert len(rows) == 1 + 8
    assert float(rows[1][0]) == -3.0
    assert sum(int(r[2]) for r in rows[1:]) <= 2000

    meta = _read_meta(out)
    assert meta["subcommand"] == "simulate"
    assert meta["seed"] == 11
    assert meta["workers"] == 1
    assert meta["config"]["model"] == "ou"
    assert sorted(meta["artifacts"]) == ["plot.svg", "results.csv"]
    assert "n_excluded" in meta and "t_final" in meta

    svg = (tmp_path / "out" / "plot.svg").read_text(encoding="utf-8")
    assert "<svg" in svg


def test_same_config_reruns_byte_identical(tmp_path):
    cfg = _write(tmp_path, "sim.cfg", SIM_CFG)
    out1, out2 = str(tmp_path / "one"), str(tmp_path / "two")
    assert main(["simulate", "--config", cfg, "--out", out1]) == 0
    assert main(["simulate", "--config", cfg, "--out", out2]) == 0
    first = (tmp_path / "one" / "results.csv").read_bytes()
    second = (tmp_path / "two" / "results.csv").read_bytes()
    assert first == second

    out3 = str(tmp_path / "three")
    assert main(["simulate", "--config", cfg, "--seed", "12", "--out", out3]) == 0
    assert (tmp_path / "three" / "results.csv").read_bytes() != first


def test_seed_and_worker_resolution(tmp_path, monkeypatch):
    cfg = _write(tmp_path, "sim.cfg", SIM_CFG)

    out = str(tmp_path / "flag_seed")
    assert main(["simulate", "--config", cfg, "--seed", "99", "--out", out]) == 0
    assert _read_meta(out)["seed"] == 99

    monkeypatch.setenv("DIVKERN_WORKERS", "2")
    out = str(tmp_path / "env_workers")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert _read_meta(out)["workers"] == 2

    out = str(tmp_path / "flag_workers")
    assert main(["simulate", "--config", cfg, "--workers", "1", "--out", out]) == 0
    assert _read_meta(out)["workers"] == 1


def test_worker_count_must_be_positive(tmp_path, capsys):
    cfg = _write(tmp_path, "sim.cfg", SIM_CFG)
    code = main(["simulate", "--config", cfg, "--workers", "0", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_model_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.cfg", "model = nosuchmodel\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("config error:")


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.cfg", "model = ou\nvolume = 11\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "unknown config key 'volume'" in err


def test_path_blowup_exits_3(tmp_path, capsys):
    cfg = _write(
        tmp_path,
        "blow.cfg",
        "model = ou\ngamma = 1e9, 0\ndt = 0.01\nt = 0.5\nn_paths = 200\n",
    )
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert capsys.readouterr().err.startswith("numerical failure:")


# ---------------------------------------------------------------------------
# remaining subcommands, small end-to-end runs


def test_score_subcommand_smoke(tmp_path):
    cfg = _write(
        tmp_path,
        "score.cfg",
        "model = mult1d\ngamma = 0\ndt = 0.01\nt = 0.1\nn_paths = 1500\nalpha = 10\n"
        "[bins]\ninterval = -2, 2\nmin_count = 10\n",
    )
    out = str(tmp_path / "out")
    assert main(["score", "--config", cfg, "--out", out]) == 0
    rows = _read_rows(out)
    assert rows[0] == list(TABLE_HEADER)
    assert sorted(_read_meta(out)["artifacts"]) == ["plot.svg", "results.csv"]


def test_linresp_with_score_artifacts(tmp_path):
    cfg = _write(
        tmp_path,
        "lr.cfg",
        "model = mult1d\ngamma = 0\ndirection = 0\ndt = 0.01\nt = 0.1\n"
        "n_paths = 1500\nalpha = 10\nwith_score = true\n"
        "[bins]\ninterval = -2, 2\nmin_count = 10\n",
    )
    out = str(tmp_path / "out")
    assert main(["linresp", "--config", cfg, "--out", out]) == 0
    meta = _read_meta(out)
    assert sorted(meta["artifacts"]) == [
        "plot.svg",
        "results.csv",
        "score.csv",
        "score.svg",
    ]
    assert _read_rows(out, "score.csv")[0] == list(TABLE_HEADER)


def test_ergodic_subcommand_smoke(tmp_path):
    cfg = _write(
        tmp_path,
        "erg.cfg",
        "model = ou\ngamma = 0, 0\ndirection = 0\ndt = 0.01\nwindow = 0.5\n"
        "horizon = 2.0\nn_orbits = 2\nburn_in = 0.5\nobservable = x0\n",
    )
    out = str(tmp_path / "out")
    assert main(["ergodic", "--config", cfg, "--out", out]) == 0
    rows = _read_rows(out)
    quantities = [r[0] for r in rows[1:]]
    assert quantities == ["phi_avg", "response", "se", "n_orbits", "per_orbit_0", "per_orbit_1"]
    meta = _read_meta(out)
    assert {"phi_avg", "response", "se"} <= set(meta)


def test_ergodic_unknown_observable_exits_2(tmp_path, capsys):
    cfg = _write(
        tmp_path, "erg.cfg", "model = ou\ngamma = 0, 0\nobservable = venus\nhorizon = 1\n"
    )
    assert main(["ergodic", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "unknown observable" in capsys.readouterr().err


def test_oracle_quadrature_and_ou_kinds(tmp_path):
    quad = _write(
        tmp_path,
        "quad.cfg",
        "model = mult1d\ngamma = 0\nkind = quadrature\ndirection = 0\ndt = 0.01\n"
        "[bins]\ninterval = -2, 2\nn = 10\n",
    )
    out = str(tmp_path / "quad_out")
    assert main(["oracle", "--config", quad, "--out", out]) == 0
    rows = _read_rows(out)
    assert len(rows) == 11
    assert all(r[2] == "0" for r in rows[1:])
    assert all(np.isfinite(float(r[3])) for r in rows[1:])

    ou = _write(
        tmp_path,
        "ou.cfg",
        "model = ou\ngamma = 0.5, 0.2\nkind = ou\ndirection = 1\nt = 1.0\n"
        "[bins]\ninterval = -2, 2\nn = 10\n",
    )
    out = str(tmp_path / "ou_out")
    assert main(["oracle", "--config", ou, "--out", out]) == 0
    rows = _read_rows(out)
    assert len(rows) == 11
    assert all(np.isfinite(float(r[5])) for r in rows[1:])


def test_oracle_fd_and_lr_kinds(tmp_path):
    fd = _write(
        tmp_path,
        "fd.cfg",
        "model = ou\ngamma = 0, 0\nkind = fd\ndirection = 0\neps = 0.1\n"
        "dt = 0.01\nt = 0.05\nn_paths = 600\n[bins]\ninterval = -2, 2\nmin_count = 10\n",
    )
    out = str(tmp_path / "fd_out")
    assert main(["oracle", "--config", fd, "--out", out]) == 0
    meta = _read_meta(out)
    assert meta["kind"] == "fd" and meta["eps"] == 0.1

    lr = _write(
        tmp_path,
        "lr.cfg",
        "model = ou\ngamma = 0, 0\nkind = lr\ndirection = 0\n"
        "dt = 0.01\nt = 0.05\nn_paths = 600\n[bins]\ninterval = -2, 2\nmin_count = 10\n",
    )
    out = str(tmp_path / "lr_out")
    assert main(["oracle", "--config", lr, "--out", out]) == 0
    meta = _read_meta(out)
    assert meta["kind"] == "lr" and "n_excluded" in meta


def test_oracle_unknown_kind_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.cfg", "model = ou\ngamma = 0, 0\nkind = bogus\n")
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "unknown oracle kind" in capsys.readouterr().err


FIT_CFG = """\
model = diffproto1d
gamma0 = 0.3, 0.1
gamma_true = 0.0, 0.2
n_data = 40
n_paths = 40
n_neighbors = 3
n_updates = 2
dt = 0.02
t = 0.1
seed = 5
"""


def test_fit_then_refit_from_dataset_csv(tmp_path):
    cfg = _write(tmp_path, "fit.cfg", FIT_CFG)
    out1 = str(tmp_path / "fit_out")
    assert main(["fit", "--config", cfg, "--out", out1]) == 0

    rows = _read_rows(out1)
    assert rows[0] == ["iteration", "gamma0", "gamma1", "grad0", "grad1", "distance", "wall_time"]
    assert len(rows) == 1 + 3
    meta = _read_meta(out1)
    assert len(meta["final_gamma"]) == 2
    assert "final_distance" in meta and "best_distance" in meta

    data_path = os.path.join(out1, "dataset.csv")
    assert os.path.exists(data_path)
    refit = _write(
        tmp_path,
        "refit.cfg",
        "model = diffproto1d\ngamma0 = 0.3, 0.1\nn_updates = 1\nn_data = 40\n"
        "n_paths = 40\nn_neighbors = 3\ndt = 0.02\nt = 0.1\n" + f"data = {data_path}\n",
    )
    out2 = str(tmp_path / "refit_out")
    assert main(["fit", "--config", refit, "--out", out2]) == 0
    meta = _read_meta(out2)
    assert "final_gamma" in meta and "final_distance" not in meta


def test_fit_requires_truth_or_data_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "fit.cfg", "model = diffproto1d\ngamma0 = 0, 0\n")
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "fit needs either data" in capsys.readouterr().err
