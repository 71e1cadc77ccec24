"""Command-line runner: configs in, CSV tables + manifest + SVG plots out.

Subcommands: simulate, score, linresp, ergodic, oracle, fit, repro.  Every
run writes results.csv (module table schema), meta.json (full resolved
config, seed, build id, timing; enough to reproduce the run byte for byte),
and usually plot.svg.  Exit codes: 0 success, 2 config errors, 3 numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .conditioning import BinSpec, bin_1d
from .configfile import ConfigValue, Field, Schema, parse_config
from .diffusion import FitConfig, _subseed, fit, generate_dataset
from .errors import ConfigError, ModelError, NumericsError, UnknownModelError
from .linresp import ErgodicConfig, ergodic_linear_response, estimate_linear_response
from .models import get_model
from .oracle import (
    OUAnalytic,
    fd_log_density,
    likelihood_ratio_response,
    quadrature_delta_log_h1,
    quadrature_one_step,
)
from .presets import get_preset
from .score import estimate_score
from .simulate import PathConfig, run_forward, simulate_ensemble
from .svgplot import write_plot

__all__ = ["main", "run"]

TABLE_HEADER = ("bin_left", "bin_right", "count", "mean", "se", "log_density")

_OBSERVABLES = {
    "mean_sq": lambda X: (X**2).mean(axis=1),
    "x0": lambda X: X[:, 0],
    "x0_sq": lambda X: X[:, 0] ** 2,
    "sum": lambda X: X.sum(axis=1),
}


# ---------------------------------------------------------------------------
# schemas

_MODEL = {
    "model": Field("str", required=True),
    "gamma": Field("floats"),
    "dim": Field("int"),
}
_COMMON = {
    "seed": Field("seed", 0),
    "workers": Field("int"),
    "out": Field("str"),
}
_BINS = {
    "bins.interval": Field("floats"),
    "bins.n": Field("int", 10),
    "bins.min_count": Field("int", 30),
}
_RUN = {
    "dt": Field("float", 0.01),
    "t": Field("float", 1.0),
    "n_paths": Field("int", 100_000),
}

_SCHEMAS = {
    "simulate": Schema({**_MODEL, **_COMMON, **_RUN, **_BINS}),
    "score": Schema(
        {
            **_MODEL,
            **_COMMON,
            **_RUN,
            **_BINS,
            "alpha": Field("float", 10.0),
            "mode": Field("str", "continuous"),
            "backend": Field("str"),
        }
    ),
    "linresp": Schema(
        {
            **_MODEL,
            **_COMMON,
            **_RUN,
            **_BINS,
            "alpha": Field("float", 10.0),
            "mode": Field("str", "continuous"),
            "backend": Field("str"),
            "direction": Field("int", 0),
            "direction_vec": Field("floats"),
            "with_score": Field("bool", False),
        }
    ),
    "ergodic": Schema(
        {
            **_MODEL,
            **_COMMON,
            "direction": Field("int", 0),
            "direction_vec": Field("floats"),
            "dt": Field("float", 0.002),
            "window": Field("float", 1.5),
            "horizon": Field("float", 100.0),
            "n_orbits": Field("int", 7),
            "alpha": Field("float", 10.0),
            "burn_in": Field("float", 10.0),
            "observable": Field("str", "mean_sq"),
        }
    ),
    "oracle": Schema(
        {
            **_MODEL,
            **_COMMON,
            **_RUN,
            **_BINS,
            "kind": Field("str", required=True),
            "direction": Field("int", 0),
            "direction_vec": Field("floats"),
            "eps": Field("float", 0.05),
        }
    ),
    "fit": Schema(
        {
            **_MODEL,
            **_COMMON,
            "gamma0": Field("floats", required=True),
            "gamma_true": Field("floats"),
            "data": Field("str"),
            "n_data": Field("int", 200),
            "n_paths": Field("int", 200),
            "n_neighbors": Field("int", 5),
            "n_updates": Field("int", 10),
            "eta": Field("float", 1.0),
            "dt": Field("float", 0.01),
            "t": Field("float", 1.0),
            "alpha": Field("float", 10.0),
            "backend": Field("str"),
        }
    ),
}


# ---------------------------------------------------------------------------
# small helpers


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_table(path, table):
    return _write_csv(path, TABLE_HEADER, table.to_rows())


def _model_from(cfg):
    return get_model(cfg["model"], gamma=cfg.get("gamma"), dim=cfg.get("dim"))


def _bin_spec(cfg) -> BinSpec:
    iv = cfg["bins.interval"]
    if iv is None:
        interval = (-2.0, 2.0)
    elif iv.size == 2:
        interval = (float(iv[0]), float(iv[1]))
    else:
        raise ConfigError("bins.interval needs exactly two numbers")
    return BinSpec(
        interval=interval, n_bins=cfg["bins.n"], min_count=cfg["bins.min_count"]
    )


def _n_steps(cfg) -> int:
    n = int(round(cfg["t"] / cfg["dt"]))
    if n < 1:
        raise ConfigError(f"t={cfg['t']} shorter than one step dt={cfg['dt']}")
    return n


def _direction(cfg):
    if cfg.get("direction_vec") is not None:
        return cfg["direction_vec"]
    return int(cfg["direction"])


def _path_config(cfg, model, seed, alpha=0.0) -> PathConfig:
    return PathConfig(
        model=model,
        dt=cfg["dt"],
        n_steps=_n_steps(cfg),
        n_paths=cfg["n_paths"],
        seed=seed,
        alpha=alpha,
    )


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _table_plot(out_dir, table, title, ylabel, fname="plot.svg", extra=None):
    series = [
        {
            "x": table.centers,
            "y": np.atleast_2d(table.means.T).T[:, 0],
            "yerr": np.atleast_2d(table.ses.T).T[:, 0],
            "kind": "errorbar",
            "label": ylabel,
        }
    ]
    if np.isfinite(table.log_density).any():
        series.append(
            {
                "x": table.centers,
                "y": table.log_density,
                "kind": "points",
                "label": "log density",
            }
        )
    if extra:
        series.extend(extra)
    return write_plot(
        os.path.join(out_dir, fname), series, title=title, xlabel="x", ylabel=ylabel
    )


# ---------------------------------------------------------------------------
# subcommand runners: cfg -> (artifacts, manifest extras)


def _cmd_simulate(cfg, out_dir, seed, workers):
    model = _model_from(cfg)
    ens = run_forward(_path_config(cfg, model, seed), workers=workers)
    spec = _bin_spec(cfg)
    table = bin_1d(
        ens.x[ens.alive, 0],
        ens.x[ens.alive, 0],
        interval=spec.interval,
        n_bins=spec.n_bins,
        min_count=spec.min_count,
    )
    arts = [_write_table(os.path.join(out_dir, "results.csv"), table)]
    arts.append(
        _table_plot(out_dir, table, f"terminal distribution: {model.name}", "x_T")
    )
    return arts, {"n_excluded": ens.n_excluded, "t_final": ens.t}


def _cmd_score(cfg, out_dir, seed, workers):
    model = _model_from(cfg)
    ens = run_forward(
        _path_config(cfg, model, seed, alpha=cfg["alpha"]),
        mode=cfg["mode"],
        backend=cfg.get("backend"),
        workers=workers,
    )
    table = estimate_score(ens, _bin_spec(cfg), min_count=cfg["bins.min_count"])
    arts = [_write_table(os.path.join(out_dir, "results.csv"), table)]
    arts.append(_table_plot(out_dir, table, f"score at T: {model.name}", "score"))
    return arts, {"n_excluded": ens.n_excluded, "t_final": ens.t}


def _cmd_linresp(cfg, out_dir, seed, workers):
    model = _model_from(cfg)
    direction = _direction(cfg)
    ens = run_forward(
        _path_config(cfg, model, seed, alpha=cfg["alpha"]),
        directions=(direction,),
        mode=cfg["mode"],
        backend=cfg.get("backend"),
        workers=workers,
    )
    spec = _bin_spec(cfg)
    table = estimate_linear_response(ens, spec, min_count=cfg["bins.min_count"])
    arts = [_write_table(os.path.join(out_dir, "results.csv"), table)]
    arts.append(
        _table_plot(out_dir, table, f"log-density response: {model.name}", "response")
    )
    if cfg["with_score"]:
        stable = estimate_score(ens, spec, min_count=cfg["bins.min_count"])
        arts.append(_write_table(os.path.join(out_dir, "score.csv"), stable))
        arts.append(
            _table_plot(
                out_dir, stable, f"score at T: {model.name}", "score", fname="score.svg"
            )
        )
    return arts, {"n_excluded": ens.n_excluded, "t_final": ens.t}


def _cmd_ergodic(cfg, out_dir, seed, workers):
    model = _model_from(cfg)
    if cfg["observable"] not in _OBSERVABLES:
        raise ConfigError(
            f"unknown observable {cfg['observable']!r} "
            f"(known: {', '.join(sorted(_OBSERVABLES))})"
        )
    econf = ErgodicConfig(
        observable=_OBSERVABLES[cfg["observable"]],
        window=cfg["window"],
        horizon=cfg["horizon"],
        n_orbits=cfg["n_orbits"],
        dt=cfg["dt"],
        alpha=cfg["alpha"],
        burn_in=cfg["burn_in"],
        seed=seed,
    )
    result = ergodic_linear_response(model, _direction(cfg), econf)
    rows = [
        ("phi_avg", result.phi_avg),
        ("response", result.response),
        ("se", result.se),
        ("n_orbits", econf.n_orbits),
    ]
    rows += [(f"per_orbit_{j}", float(v)) for j, v in enumerate(result.per_orbit)]
    arts = [_write_csv(os.path.join(out_dir, "results.csv"), ("quantity", "value"), rows)]

    # short trace like the source figure: two coordinates over 1.5 time units
    n_trace = max(2, int(round(1.5 / cfg["dt"])))
    trace = simulate_ensemble(
        PathConfig(model=model, dt=cfg["dt"], n_steps=n_trace, n_paths=1, seed=seed),
        hooks=[],
        store_trajectory=True,
    ).trajectory[0]
    ts = np.arange(n_trace + 1) * cfg["dt"]
    series = [{"x": ts, "y": trace[:, 0], "label": "x0", "kind": "line"}]
    if model.dim > 1:
        series.append({"x": ts, "y": trace[:, 1], "label": "x1", "kind": "line"})
    arts.append(
        write_plot(
            os.path.join(out_dir, "plot.svg"),
            series,
            title=f"orbit trace: {model.name}",
            xlabel="t",
            ylabel="x",
        )
    )
    return arts, {
        "phi_avg": result.phi_avg,
        "response": result.response,
        "se": result.se,
    }


def _cmd_oracle(cfg, out_dir, seed, workers):
    model = _model_from(cfg)
    kind = cfg["kind"]
    spec = _bin_spec(cfg)
    direction = _direction(cfg)
    extras = {"kind": kind}
    if kind == "quadrature":
        centers = 0.5 * (
            np.linspace(*spec.interval, spec.n_bins + 1)[:-1]
            + np.linspace(*spec.interval, spec.n_bins + 1)[1:]
        )
        vals = quadrature_delta_log_h1(model, centers, cfg["dt"], direction)
        h1 = quadrature_one_step(model, centers, cfg["dt"])
        rows = [
            (float(x), float(x), 0, float(v), 0.0, float(np.log(d)))
            for x, v, d in zip(centers, vals, h1)
        ]
        arts = [_write_csv(os.path.join(out_dir, "results.csv"), TABLE_HEADER, rows)]
        arts.append(
            write_plot(
                os.path.join(out_dir, "plot.svg"),
                [{"x": centers, "y": vals, "kind": "line", "label": "quadrature"}],
                title="one-step response oracle",
                xlabel="x",
                ylabel="response",
            )
        )
        return arts, extras
    if kind == "fd":
        table = fd_log_density(
            model,
            direction,
            cfg["eps"],
            spec.interval,
            spec.n_bins,
            cfg["dt"],
            _n_steps(cfg),
            cfg["n_paths"],
            seed,
            min_count=cfg["bins.min_count"],
            workers=workers,
        )
        extras["eps"] = cfg["eps"]
    elif kind == "ou":
        ana = OUAnalytic.from_model(model, cfg["t"])
        centers = 0.5 * (
            np.linspace(*spec.interval, spec.n_bins + 1)[:-1]
            + np.linspace(*spec.interval, spec.n_bins + 1)[1:]
        )
        d = model.normalize_direction(direction)
        vals = ana.delta_log_h(centers, d)
        logh = (
            -((centers - ana.mean) ** 2) / (2 * ana.var)
            - 0.5 * np.log(2 * np.pi * ana.var)
        )
        rows = [
            (float(x), float(x), 0, float(v), 0.0, float(ld))
            for x, v, ld in zip(centers, vals, logh)
        ]
        arts = [_write_csv(os.path.join(out_dir, "results.csv"), TABLE_HEADER, rows)]
        return arts, extras
    elif kind == "lr":
        ens = likelihood_ratio_response(_path_config(cfg, model, seed), direction)
        table = estimate_linear_response(ens, spec, min_count=cfg["bins.min_count"])
        extras["n_excluded"] = ens.n_excluded
    else:
        raise ConfigError(f"unknown oracle kind {kind!r} (quadrature, fd, ou, lr)")
    arts = [_write_table(os.path.join(out_dir, "results.csv"), table)]
    arts.append(_table_plot(out_dir, table, f"oracle ({kind}): {model.name}", "response"))
    return arts, extras


def _cmd_fit(cfg, out_dir, seed, workers):
    if cfg.get("data") is not None:
        data = np.loadtxt(cfg["data"], delimiter=",", skiprows=1, ndmin=2)
        gamma_true = cfg.get("gamma_true")
    else:
        if cfg.get("gamma_true") is None:
            raise ConfigError("fit needs either data = <csv> or gamma_true")
        gamma_true = cfg["gamma_true"]
        proto = get_model(cfg["model"], gamma=cfg["gamma0"], dim=cfg.get("dim"))
        data = generate_dataset(
            proto,
            gamma_true,
            cfg["n_data"],
            _subseed(seed, 0),
            cfg["dt"],
            _n_steps(cfg),
            workers=workers,
        )
    fconf = FitConfig(
        prototype=cfg["model"],
        gamma0=cfg["gamma0"],
        gamma_true=gamma_true,
        data=data,
        n_data=cfg["n_data"],
        n_paths=cfg["n_paths"],
        n_neighbors=cfg["n_neighbors"],
        n_updates=cfg["n_updates"],
        eta=cfg["eta"],
        dt=cfg["dt"],
        horizon=cfg["t"],
        alpha=cfg["alpha"],
        dim=cfg.get("dim"),
        seed=seed,
        workers=workers,
        backend=cfg.get("backend"),
    )
    hist = fit(fconf)

    n_gamma = hist.gammas.shape[1]
    header = (
        ["iteration"]
        + [f"gamma{i}" for i in range(n_gamma)]
        + [f"grad{i}" for i in range(n_gamma)]
        + ["distance", "wall_time"]
    )
    arts = [_write_csv(os.path.join(out_dir, "results.csv"), header, hist.to_rows())]
    arts.append(
        _write_csv(
            os.path.join(out_dir, "dataset.csv"),
            [f"y{i}" for i in range(data.shape[1])],
            data.tolist(),
        )
    )
    its = np.arange(len(hist))
    if np.isfinite(hist.distances).any():
        series = [{"x": its, "y": hist.distances, "label": "|gamma - truth|", "kind": "line"}]
    else:
        series = [
            {"x": its, "y": np.linalg.norm(hist.gradients, axis=1), "label": "|gradient|", "kind": "line"}
        ]
    arts.append(
        write_plot(
            os.path.join(out_dir, "plot.svg"),
            series,
            title="fit history",
            xlabel="iteration",
            ylabel="distance",
        )
    )
    extras = {"final_gamma": hist.final_gamma.tolist()}
    if np.isfinite(hist.distances).any():
        extras["final_distance"] = float(hist.distances[-1])
        extras["best_distance"] = float(np.nanmin(hist.distances))
    return arts, extras


_RUNNERS = {
    "simulate": _cmd_simulate,
    "score": _cmd_score,
    "linresp": _cmd_linresp,
    "ergodic": _cmd_ergodic,
    "oracle": _cmd_oracle,
    "fit": _cmd_fit,
}


# ---------------------------------------------------------------------------
# entry points


def run(subcommand, config_path=None, preset=None, seed=None, workers=None, out=None) -> int:
    """Execute one subcommand; returns the exit code (raises nothing CLI-ish)."""
    t_start = time.perf_counter()
    if subcommand == "repro":
        if preset is None:
            raise ConfigError("repro needs a preset name (sec4.1, sec4.2, sec5.1, sec5.2)")
        entry = get_preset(preset)
        subcommand = entry["subcommand"]
        parsed = {k: ConfigValue(v, 0) for k, v in entry["config"].items()}
    else:
        if config_path is None:
            raise ConfigError("missing --config")
        parsed = parse_config(config_path)
    if subcommand not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = _SCHEMAS[subcommand].apply(parsed)

    if seed is None:
        seed = cfg.get("seed", 0)
    if workers is None:
        workers = cfg.get("workers") or int(os.environ.get("DIVKERN_WORKERS", "1"))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    out_dir = out or cfg.get("out") or "divkern_out"
    os.makedirs(out_dir, exist_ok=True)

    artifacts, extras = _RUNNERS[subcommand](cfg, out_dir, seed, workers)

    manifest = {
        "subcommand": subcommand,
        "preset": preset,
        "config": {k: v for k, v in cfg.items() if v is not None},
        "seed": int(seed),
        "workers": int(workers),
        "out": out_dir,
        "version": __version__,
        "numpy": np.__version__,
        "build": _git_describe(),
        "argv": sys.argv,
        "wall_time_s": round(time.perf_counter() - t_start, 3),
        "artifacts": [os.path.basename(a) for a in artifacts],
        **extras,
    }
    meta_path = os.path.join(out_dir, "meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    print(f"wrote {len(artifacts) + 1} artifacts to {out_dir}")
    return 0


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return str(obj)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="divkern",
        description="Monte-Carlo scores and linear responses of parameterized SDEs.",
    )
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in ("simulate", "score", "linresp", "ergodic", "oracle", "fit"):
        sp = sub.add_parser(name, help=f"run the {name} pipeline from a config file")
        sp.add_argument("--config", required=True, help="key-value config file")
        _common_flags(sp)
    rp = sub.add_parser("repro", help="run a canned experiment configuration")
    rp.add_argument("preset", help="sec4.1 | sec4.2 | sec5.1 | sec5.2")
    _common_flags(rp)
    return p


def _common_flags(sp):
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.add_argument("--workers", type=int, default=None, help="parallel worker count")
    sp.add_argument("--out", default=None, help="output directory (default divkern_out)")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return run(
            args.subcommand,
            config_path=getattr(args, "config", None),
            preset=getattr(args, "preset", None),
            seed=args.seed,
            workers=args.workers,
            out=args.out,
        )
    except (ConfigError, UnknownModelError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
