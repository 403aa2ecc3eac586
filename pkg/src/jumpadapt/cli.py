"""Command-line front end.

Subcommands::

    jumpadapt convergence  [CONFIG] [--preset NAME] [...]   -> errors.csv, slopes.csv
    jumpadapt efficiency   [CONFIG] [--preset NAME] [...]   -> efficiency.csv
    jumpadapt backstop     [CONFIG] [--preset NAME] [...]   -> backstop.csv
    jumpadapt path         [CONFIG] [--preset NAME] [--trace] -> per-step trace

Configs are TOML or JSON files with the keys documented in the README
(problem, schemes, main_map/backstop_map, h_max, rho, kappa, M, h_ref,
lambda, sigma, seed, out, workers, ...).  A preset fills the config and
file values override it; command-line flags override both.  Every run
writes a manifest.json that fully determines its outputs.  Exit codes:
0 success, 1 configuration/validation error, 2 numerical abort.
"""

import argparse
import dataclasses
import datetime
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .harness import (
    ExperimentConfig,
    ExperimentError,
    backstop_experiment,
    convergence_experiment,
    efficiency_experiment,
    path_noise,
    reference_self_check,
)
from .maps import MapError
from .presets import PRESETS, apply_desk_scale
from .stepping import PathAborted, simulate_path


class ConfigError(ValueError):
    pass


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config_file(path):
    text = Path(path).read_bytes()
    if str(path).endswith(".json"):
        return json.loads(text)
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{path}: neither valid TOML nor valid JSON")


_KEY_MAP = {
    "problem": "problem",
    "schemes": "schemes",
    "main_map": "main_map",
    "backstop_map": "backstop_map",
    "h_max": "h_max_list",
    "rho": "rho",
    "kappa": "kappa",
    "M": "n_paths",
    "h_ref": "h_ref",
    "lambda": "intensity",
    "sigma": "sigma",
    "seed": "master_seed",
    "workers": "workers",
    "initial_state": "initial_state",
    "literal_backstop": "literal_backstop",
    "levy_terms": "levy_terms",
    "projection_scale": "projection_scale",
    "rho_list": "rho_list",
    "mode": "mode",
}


def resolve_config(args, mode):
    """Merge preset, config file and flags into an ExperimentConfig."""
    raw = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; known: {', '.join(sorted(PRESETS))}"
            )
        raw.update(PRESETS[args.preset])
    if args.config:
        raw.update(load_config_file(args.config))
    if not raw:
        raise ConfigError("no configuration given (need a config file or --preset)")
    if args.desk_scale:
        raw = apply_desk_scale(raw)

    out_dir = Path(raw.pop("out", "runs"))
    fields = {}
    for key, value in raw.items():
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        fields[_KEY_MAP[key]] = value
    for seq_key in ("h_max_list", "schemes", "rho_list", "initial_state"):
        if fields.get(seq_key) is not None:
            fields[seq_key] = tuple(fields[seq_key])

    if args.seed is not None:
        fields["master_seed"] = args.seed
    if getattr(args, "single_worker", False):
        fields["workers"] = 1
    elif args.workers is not None:
        fields["workers"] = args.workers
    if args.out is not None:
        out_dir = Path(args.out)
    fields["mode"] = mode

    try:
        cfg = ExperimentConfig(**fields).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return cfg, out_dir


def write_manifest(out_dir, command, cfg, started, outputs):
    manifest = {
        "command": command,
        "version": __version__,
        "master_seed": cfg.master_seed,
        "config": dataclasses.asdict(cfg),
        "started": started.isoformat(),
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "output_dir": str(out_dir),
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


ERROR_COLUMNS = ("h_max", "scheme", "h_mean", "rms_error", "stderr",
                 "backstop_freq", "jump_trunc_freq", "mean_steps")
EFFICIENCY_COLUMNS = ("h_max", "scheme", "h_mean", "mean_steps", "mean_cpu_s")
BACKSTOP_COLUMNS = ("rho", "h_min", "freq", "freq_norm", "freq_jump_trunc",
                    "jump_term_bound")

_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot the CSVs written next to this script (needs matplotlib).\"\"\"
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent


def read(name):
    with open(here / name) as fh:
        return list(csv.DictReader(fh))


fig, ax = plt.subplots(figsize=(6, 4.5))
series = defaultdict(list)
for row in read("errors.csv"):
    series[row["scheme"]].append((float(row["h_mean"]), float(row["rms_error"])))
for scheme, pts in sorted(series.items()):
    pts.sort()
    ax.loglog(*zip(*pts), marker="o", label=scheme)
if series:
    hs = sorted(h for pts in series.values() for h, _ in pts)
    e0 = min(e for pts in series.values() for _, e in pts)
    ax.loglog(hs, [e0 * h / hs[0] for h in hs], "k--", label="slope 1")
ax.set_xlabel("mean step size")
ax.set_ylabel("RMS endpoint error")
ax.legend()
ax.grid(True, which="both", alpha=0.3)
fig.tight_layout()
fig.savefig(here / "errors.png", dpi=150)
print("wrote", here / "errors.png")

if (here / "efficiency.csv").exists():
    fig2, ax2 = plt.subplots(figsize=(6, 4.5))
    series = defaultdict(list)
    for row in read("efficiency.csv"):
        series[row["scheme"]].append((float(row["h_max"]), float(row["mean_cpu_s"])))
    for scheme, pts in sorted(series.items()):
        pts.sort()
        ax2.loglog(*zip(*pts), marker="s", label=scheme)
    ax2.set_xlabel("h_max")
    ax2.set_ylabel("mean CPU seconds per path")
    ax2.legend()
    ax2.grid(True, which="both", alpha=0.3)
    fig2.tight_layout()
    fig2.savefig(here / "efficiency.png", dpi=150)
    print("wrote", here / "efficiency.png")
"""


def cmd_convergence(args):
    started = datetime.datetime.now(datetime.timezone.utc)
    cfg, out_dir = resolve_config(args, "convergence")
    out_dir.mkdir(parents=True, exist_ok=True)
    table = convergence_experiment(cfg)
    write_csv(
        out_dir / "errors.csv",
        ERROR_COLUMNS,
        [(r.h_max, r.scheme, r.h_mean, r.rms_error, r.stderr, r.backstop_freq,
          r.jump_trunc_freq, r.mean_steps) for r in table.rows],
    )
    write_csv(
        out_dir / "slopes.csv",
        ("scheme", "slope", "intercept", "fit_rms_residual", "slope_vs_h_max"),
        [(s, *table.slopes[s], table.slopes_h_max[s][0]) for s in sorted(table.slopes)],
    )
    (out_dir / "plot_results.py").write_text(_PLOT_SCRIPT)
    write_manifest(out_dir, "convergence", cfg, started,
                   ["errors.csv", "slopes.csv", "plot_results.py"])
    for scheme in sorted(table.slopes):
        print(f"{scheme}: fitted slope {table.slopes[scheme][0]:.3f}")
    if cfg.build_problem().noise_class.needs_levy_areas:
        ratio = reference_self_check(cfg, n_paths=min(cfg.n_paths, 25))
        print(f"reference self-consistency ratio (order-one target ~2): {ratio:.2f}")
    print(f"wrote {out_dir}/errors.csv, slopes.csv, manifest.json")
    return 0


def cmd_efficiency(args):
    started = datetime.datetime.now(datetime.timezone.utc)
    cfg, out_dir = resolve_config(args, "efficiency")
    out_dir.mkdir(parents=True, exist_ok=True)
    table = efficiency_experiment(cfg)
    write_csv(
        out_dir / "efficiency.csv",
        EFFICIENCY_COLUMNS,
        [(r.h_max, r.scheme, r.h_mean, r.mean_steps, r.mean_cpu_s)
         for r in table.rows],
    )
    (out_dir / "plot_results.py").write_text(_PLOT_SCRIPT)
    write_manifest(out_dir, "efficiency", cfg, started,
                   ["efficiency.csv", "plot_results.py"])
    print(f"wrote {out_dir}/efficiency.csv, manifest.json")
    return 0


def cmd_backstop(args):
    started = datetime.datetime.now(datetime.timezone.utc)
    cfg, out_dir = resolve_config(args, "backstop")
    if not cfg.rho_list:
        raise ConfigError("backstop mode needs a rho_list config entry")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = backstop_experiment(cfg)
    write_csv(
        out_dir / "backstop.csv",
        BACKSTOP_COLUMNS,
        [(r.rho, r.h_min, r.freq, r.freq_norm, r.freq_jump_trunc,
          r.jump_term_bound) for r in rows],
    )
    write_manifest(out_dir, "backstop", cfg, started, ["backstop.csv"])
    print(f"wrote {out_dir}/backstop.csv, manifest.json")
    return 0


def cmd_path(args):
    started = datetime.datetime.now(datetime.timezone.utc)
    cfg, out_dir = resolve_config(args, "convergence")
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = cfg.build_problem()
    schedule, source = path_noise(cfg, problem, path_index=0, coupled=False)
    trace_rows = []

    def trace(t, h, norm_y, used_backstop, jump_applied):
        trace_rows.append((t, h, norm_y, used_backstop, jump_applied))

    record = simulate_path(
        problem, cfg.step_params(max(cfg.h_max_list)), source, schedule,
        cfg.map_pair(), literal_backstop=cfg.literal_backstop,
        record_nodes=False, trace=trace if args.trace else None,
    )
    outputs = []
    if args.trace:
        write_csv(out_dir / "trace.csv",
                  ("t", "h", "norm_y", "used_backstop", "jump_applied"),
                  trace_rows)
        outputs.append("trace.csv")
        print(f"wrote {out_dir}/trace.csv")
    write_manifest(out_dir, "path", cfg, started, outputs)
    endpoint = np.array2string(record.endpoint, precision=8)
    print(f"endpoint {endpoint} after {record.n_steps} steps, "
          f"{record.n_jumps} jumps, {record.n_backstop} backstop uses "
          f"({record.n_backstop_jump_truncated} truncation-induced)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jumpadapt",
        description="Jump-adapted adaptive Milstein experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
        ("convergence", cmd_convergence, ()),
        ("efficiency", cmd_efficiency, ()),
        ("backstop", cmd_backstop, ()),
        ("path", cmd_path, ("--trace",)),
    ):
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="TOML or JSON config file")
        p.add_argument("--preset", help="named preset configuration")
        p.add_argument("--desk-scale", action="store_true",
                       help="halve M and keep the 4 largest h_max values")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker process count")
        p.add_argument("--single-worker", action="store_true",
                       help="pin to one worker (low-variance timings)")
        for flag in extra:
            p.add_argument(flag, action="store_true")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PathAborted, MapError, ExperimentError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
