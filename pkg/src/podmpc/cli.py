"""
Command-line pipeline: ``train`` builds the basis and ROM, ``run`` flies one
episode, ``sweep`` repeats ``run`` over several planning horizons.

Exit codes are 0 on success, 2 for configuration problems or missing
archives and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, load_config
from .errors import (BlowUpError, ConditioningError, ConfigError, DegenerateBasisError, StepFailure,
                     UndefinedMetricError)
from .metrics import episode_metrics
from .observer import DiagnosticsWriter
from .pod import pod_decompose, read_podb, write_podb
from .rom import assemble_rom, read_rom, write_rom
from .sim import run_episode, snapshot_campaign

__all__ = ["main", "cmd_train", "cmd_run", "cmd_sweep", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

BASIS_FILE = "basis.podb"
MODEL_FILE = "model.rom"
CONFIG_FILE = "config.json"
SWEEP_COLUMNS = ["Horizon", "d_f", "gamma_bar", "u_rms", "RT", "status"]

_NUMERIC = (BlowUpError, ConditioningError, DegenerateBasisError, StepFailure, UndefinedMetricError,
            FloatingPointError, np.linalg.LinAlgError)


class MissingArchiveError(ConfigError):
    pass


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_json())


def _spectrum_table(basis) -> str:
    lam = basis.all_eigenvalues
    total = basis.total_energy
    lines = [f"{'mode':>4}  {'eigenvalue':>14}  {'energy':>8}  {'captured':>8}  kept"]
    cum = 0.0
    for i, v in enumerate(lam):
        cum += v
        lines.append(f"{i + 1:>4}  {v:>14.6e}  {v / total:>8.4f}  {cum / total:>8.4f}  "
                     f"{'yes' if i < basis.n else 'no'}")
    lines.append(f"kept {basis.n} of {len(lam)} modes, captured energy {float(basis.captured_energy()[-1]):.6f}")
    return "\n".join(lines)


def cmd_train(cfg: RunConfig, out: Path | None = None, stream=None):
    """Snapshot campaign, POD and Galerkin assembly; writes the two archives."""
    out = Path(out or cfg.output_dir)
    _echo_config(cfg, out)
    grid = cfg.build_grid()
    snaps = snapshot_campaign(cfg.build_wind(), grid, cfg.snapshot_times())
    try:
        basis = pod_decompose(snaps, cfg.pod.energy_fraction, cfg.pod.max_modes)
    except DegenerateBasisError as exc:
        raise DegenerateBasisError(
            f"{exc}. The snapshots do not vary in time: give at least one wind layer a finite "
            f"period, or spread the snapshots over a longer interval.") from exc
    model = assemble_rom(basis, cfg.rom.nu, cfg.rom.length_unit)
    write_podb(out / BASIS_FILE, basis)
    write_rom(out / MODEL_FILE, model)
    print(_spectrum_table(basis), file=stream or sys.stdout)
    return basis, model


def _load_archives(out: Path):
    paths = [out / BASIS_FILE, out / MODEL_FILE]
    for p in paths:
        if not p.is_file():
            raise MissingArchiveError(f"missing archive {p}; run 'podmpc train' with the same output directory")
    basis = read_podb(paths[0])
    model = read_rom(paths[1])
    if model.n != basis.n:
        raise ConfigError(f"{paths[1]} has {model.n} modes but {paths[0]} has {basis.n}")
    return basis, model


def _run_into(cfg: RunConfig, basis, model, out: Path, horizon_hours=None):
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.build_scenario()
    ekf = cfg.ekf_config(basis.n, sc.sensors.n_rows())
    with open(out / "ekf_diagnostics.csv", "w", newline="") as fh:
        log = run_episode(sc, basis, model, ekf, cfg.planner_settings(horizon_hours),
                          diagnostics=DiagnosticsWriter(fh, basis.n))
    (out / "episode.csv").write_text(log.to_csv())
    m = episode_metrics(log)
    (out / "metrics.json").write_text(m.to_json())
    (out / "runtime.json").write_text(json.dumps({"runtime_s": m.runtime_s}, indent=2) + "\n")
    return m


def cmd_run(cfg: RunConfig, out: Path | None = None):
    """One closed-loop episode from existing archives."""
    out = Path(out or cfg.output_dir)
    basis, model = _load_archives(out)
    _echo_config(cfg, out)
    return _run_into(cfg, basis, model, out)


def _fmt(v):
    return format(float(v), ".17g")


def cmd_sweep(cfg: RunConfig, horizons, out: Path | None = None, stream=None):
    """Run one episode per horizon into ``H<hours>/`` and tabulate the metrics in ``sweep.csv``.

    A failing horizon is reported in its row and the sweep carries on.
    Returns the list of row dictionaries.
    """
    if not horizons:
        raise ConfigError("at least one horizon is required")
    if any(not (h > 0 and math.isfinite(h)) for h in horizons):
        raise ConfigError("horizons must be positive hours")
    out = Path(out or cfg.output_dir)
    basis, model = _load_archives(out)
    _echo_config(cfg, out)
    rows = []
    for h in horizons:
        sub = out / f"H{format(h, 'g')}"
        try:
            m = _run_into(cfg, basis, model, sub, h)
            row = dict(Horizon=_fmt(h), d_f=_fmt(m.d_f), gamma_bar=_fmt(m.gamma_bar), u_rms=_fmt(m.u_rms),
                       RT=_fmt(m.runtime_s), status="ok")
        except _NUMERIC as exc:
            print(f"horizon {h} h failed: {exc}", file=stream or sys.stderr)
            row = dict(Horizon=_fmt(h), d_f="nan", gamma_bar="nan", u_rms="nan", RT="nan",
                       status=f"failed: {type(exc).__name__}")
        rows.append(row)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def _parse_horizons(text):
    try:
        return [float(h) for h in text.split(",") if h.strip()]
    except ValueError as exc:
        raise ConfigError(f"--horizons must be a comma separated list of hours, got {text!r}") from exc


def _build_parser():
    parser = argparse.ArgumentParser(prog="podmpc", description=__doc__.strip().split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("train", "build the POD basis and the Galerkin ROM"),
                            ("run", "run one closed-loop episode"),
                            ("sweep", "run one episode per planning horizon")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--output", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="scenario seed (overrides seed)")
        if name == "sweep":
            p.add_argument("--horizons", default="1.5,3,6,12", help="comma separated horizons in hours")
        if name == "run":
            p.add_argument("--horizons", help="single planning horizon in hours (overrides planner)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else config_from_dict({})
        data = cfg.to_dict()
        if args.seed is not None:
            data["seed"] = args.seed
        if args.output is not None:
            data["output_dir"] = args.output
        if args.command == "run" and args.horizons:
            hs = _parse_horizons(args.horizons)
            if len(hs) != 1:
                raise ConfigError("'run' takes a single horizon; use 'sweep' for several")
            data["planner"]["horizon_hours"] = hs[0]
        cfg = config_from_dict(data)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "run":
            m = cmd_run(cfg)
            print(m.to_json(include_runtime=True), end="")
        else:
            rows = cmd_sweep(cfg, _parse_horizons(args.horizons))
            print(",".join(SWEEP_COLUMNS))
            for r in rows:
                print(",".join(r[c] for c in SWEEP_COLUMNS))
            if any(r["status"] != "ok" for r in rows):
                return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError) as exc:
        print(f"podmpc {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC as exc:
        print(f"podmpc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
