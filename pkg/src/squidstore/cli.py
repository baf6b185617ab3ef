"""Command-line front end.

Subcommands: energies, storage, transfer, rwa-gap, validate, run.  Output
is a table in CSV (default) or JSON with unit-suffixed column names and
9-significant-digit floats; identical invocations produce byte-identical
output.  SQUIDSTORE_THREADS caps sweep concurrency.

Exit codes: 0 success, 1 usage error, 2 physics/validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import pulse, resonator, storage
from .circuit import (
    DeviceFileError,
    SingularCircuitError,
    derive_energies,
    load_device,
)
from .constants import COHERENCE_WINDOW_PS, STORAGE_BUDGET_PS
from .qcore import pure_state
from .resonator import TransferPlan, TruncationOverflowError, load_geometry, resonator_mode


class UsageError(ValueError):
    pass


class PhysicsError(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def emit_table(rows: list[dict], fmt: str, path: str | None,
               header: list[str] | None = None) -> None:
    """Write homogeneous rows as CSV (header + comma rows, LF) or JSON."""
    if rows:
        header = list(rows[0])
        for r in rows:
            if list(r) != header:
                raise ValueError("rows are not homogeneous")
    else:
        header = header or []
    if fmt == "csv":
        lines = [",".join(header)]
        for r in rows:
            lines.append(",".join(_fmt(v) for v in r.values()))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = json.dumps(
            [{k: (float(_fmt(v)) if isinstance(v, float) else v)
              for k, v in r.items()} for r in rows],
            indent=2) + "\n"
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def parse_sweep(spec: str) -> tuple[str, np.ndarray]:
    """``name:min:max:points`` (linear) or ``name:log:min:max:points``."""
    parts = spec.split(":")
    try:
        if len(parts) == 4:
            name, lo, hi, n = parts[0], float(parts[1]), float(parts[2]), int(parts[3])
            if n < 1:
                raise ValueError
            return name, np.linspace(lo, hi, n)
        if len(parts) == 5 and parts[1] == "log":
            name, lo, hi, n = parts[0], float(parts[2]), float(parts[3]), int(parts[4])
            if n < 1 or lo <= 0 or hi <= 0:
                raise ValueError
            return name, np.geomspace(lo, hi, n)
    except ValueError:
        pass
    raise UsageError(f"bad sweep spec {spec!r}; use name:min:max:points "
                     f"or name:log:min:max:points")


def _max_workers() -> int:
    env = os.environ.get("SQUIDSTORE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SQUIDSTORE_THREADS must be an integer, got {env!r}")
    return min(8, os.cpu_count() or 1)


def sweep_map(fn, values) -> list:
    """Evaluate fn over values concurrently, results ordered by index."""
    workers = _max_workers()
    if workers == 1 or len(values) <= 1:
        return [fn(v) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, values))


def _resolve_input(path: str) -> str:
    """Accept a plain path, or fall back to the bundled presets by name."""
    if os.path.exists(path):
        return path
    candidate = resources.files("squidstore").joinpath("presets", path)
    if candidate.is_file():
        return str(candidate)
    raise UsageError(f"no such file: {path}")


# --- subcommands ------------------------------------------------------------

def cmd_energies(args) -> list[dict]:
    device = load_device(_resolve_input(args.device))
    en = derive_energies(device)
    return [{
        "e_c1_uev": en.e_c1,
        "e_c2_uev": en.e_c2,
        "e_3_uev": en.e_3,
        "c_s1_af": en.c_s1,
        "c_s2_af": en.c_s2,
    }]


def cmd_storage(args) -> list[dict]:
    device = load_device(_resolve_input(args.device))
    en = derive_energies(device)
    rho1 = pure_state([1, 1])        # coherence-sensitive probe
    rho2 = pure_state([0, 1])        # idle storage-qubit preparation

    def one(duration: float, e_j3: float | None = None) -> dict:
        dev = device if e_j3 is None else _with_ej3(device, e_j3)
        ctl = storage.constant_flux_controls(duration, include_e3=args.include_e3)
        rep = storage.run_storage(rho1, rho2, ctl, en, dev)
        return {
            "t_ps": duration,
            "e_j3_uev": dev.e_j3,
            "xi_bar": rep.xi_bar,
            "fidelity_raw": rep.fidelity_raw,
            "fidelity": rep.fidelity_corrected,
            "zz_phase_rad": rep.zz_phase,
        }

    if args.sweep:
        name, values = parse_sweep(args.sweep)
        if name == "duration":
            rows = sweep_map(lambda d: one(float(d)), values)
        elif name == "e_j3":
            t = storage.swap_time(device.e_j3)
            rows = sweep_map(lambda e: one(t, float(e)), values)
        else:
            raise UsageError(f"storage sweeps accept duration or e_j3, not {name!r}")
        return rows

    # no sweep: report the ramped schedule solved for a quarter-cycle swap
    wf = storage.swap_flux_schedule(device.e_j3, ramp_ps=args.ramp_ps)
    ctl = storage.StorageControls(f3=wf, duration=wf.t_end,
                                  include_e3=args.include_e3)
    rep = storage.run_storage(rho1, rho2, ctl, en, device)
    return [{
        "t_ps": wf.t_end,
        "t_swap_theory_ps": storage.swap_time(device.e_j3),
        "xi_bar": rep.xi_bar,
        "fidelity_raw": rep.fidelity_raw,
        "fidelity": rep.fidelity_corrected,
        "zz_phase_rad": rep.zz_phase,
        "budget_ps": STORAGE_BUDGET_PS,
        "coherence_window_ps": COHERENCE_WINDOW_PS,
    }]


def _with_ej3(device, e_j3):
    from dataclasses import replace
    return replace(device, e_j3=e_j3)


def cmd_transfer(args) -> list[dict]:
    device = load_device(_resolve_input(args.device))
    geom = load_geometry(_resolve_input(args.geometry))
    mode = resonator_mode(geom)
    lam = mode.g * device.e_j2
    plan = TransferPlan(lam=lam, model=args.model, n_max=args.nmax)
    alpha, beta = 0.6 + 0.3j, np.sqrt(1 - abs(0.6 + 0.3j) ** 2)
    res = resonator.run_transfer(alpha, beta, plan, mode)
    return [{
        "g": mode.g,
        "lambda_uev": lam,
        "hbar_omega_uev": mode.hbar_omega_uev,
        "t_stage_ps": res.t1,
        "total_time_ps": res.total_time_ps,
        "fidelity_raw": res.fidelity_raw,
        "fidelity": res.fidelity_corrected,
        "top_fock_population": res.top_fock_population,
    }]


def cmd_rwa_gap(args) -> list[dict]:
    device = load_device(_resolve_input(args.device))
    geom = load_geometry(_resolve_input(args.geometry))
    mode = resonator_mode(geom)
    if args.sweep:
        name, values = parse_sweep(args.sweep)
        if name not in ("lambda", "lambda_uev"):
            raise UsageError("rwa-gap sweeps accept only lambda")
        lambdas = [float(v) for v in values]
    else:
        lambdas = [10.0, 3.0, 1.0, 0.3]
    gaps = resonator.rwa_fidelity_gap(mode.hbar_omega_uev, lambdas, n_max=args.nmax)
    return [{"lambda_uev": lam, "gap": gap} for lam, gap in gaps]


def cmd_validate(args) -> int:
    device = load_device(_resolve_input(args.device))
    geom = load_geometry(_resolve_input(args.geometry)) if args.geometry else None
    with open(_resolve_input(args.program), "r", encoding="utf-8") as fh:
        prog = pulse.parse_program(fh.read())
    report = pulse.validate_program(prog, device, geom)
    for item in report.items:
        print(f"{item.severity}: {item.message}")
    if report.ok:
        print("ok: all checks passed")
    return 0


def cmd_run(args) -> list[dict]:
    device = load_device(_resolve_input(args.device))
    geom = load_geometry(_resolve_input(args.geometry)) if args.geometry else None
    with open(_resolve_input(args.program), "r", encoding="utf-8") as fh:
        prog = pulse.parse_program(fh.read())
    report = pulse.validate_program(prog, device, geom)
    if report.errors:
        raise PhysicsError("; ".join(i.message for i in report.errors))
    dims = pulse.register_dims(prog)
    dim = int(np.prod(dims))
    v = np.zeros(dim)
    v[args.initial_index] = 1.0
    initial = pure_state(v, dims)
    opts = pulse.ExecOptions(tol=args.tol, include_e3=args.include_e3,
                             model=args.model)
    traj = pulse.execute_program(prog, initial, device, geom, opts)
    rows = []
    for i, t in enumerate(traj.times):
        row = {"t_ps": float(t)}
        for name, vals in traj.observables.items():
            row[name] = float(vals[i])
        rows.append(row)
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="squidstore",
        description="Charge-qubit storage unit and transmission-line bus simulator",
    )
    sub = parser.add_subparsers(dest="command")

    def common(p, device=True, geometry=False, program=False):
        if device:
            p.add_argument("--device", required=True, help="device description file")
        if geometry:
            p.add_argument("--geometry", help="resonator geometry file")
        if program:
            p.add_argument("program", help="pulse program file")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("energies", help="derive circuit energies from capacitances")
    common(p)

    p = sub.add_parser("storage", help="simulate the in-unit swap protocol")
    common(p)
    p.add_argument("--sweep", help="duration:min:max:points or e_j3:min:max:points")
    p.add_argument("--include-e3", action="store_true",
                   help="keep the sz-sz cross energy on")
    p.add_argument("--ramp-ps", type=float, default=2.0,
                   help="raised-cosine flux ramp length")

    p = sub.add_parser("transfer", help="simulate a two-unit transfer via the line")
    common(p)
    p.add_argument("--geometry", required=True)
    p.add_argument("--model", choices=("rwa", "rabi"), default="rwa")
    p.add_argument("--nmax", type=int, default=8)

    p = sub.add_parser("rwa-gap", help="exchange-model error vs coupling strength")
    common(p)
    p.add_argument("--geometry", required=True)
    p.add_argument("--sweep", help="lambda:min:max:points")
    p.add_argument("--nmax", type=int, default=24)

    p = sub.add_parser("validate", help="check a pulse program against a device")
    p.add_argument("program")
    p.add_argument("--device", required=True)
    p.add_argument("--geometry")

    p = sub.add_parser("run", help="execute a pulse program")
    common(p, geometry=True, program=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--model", choices=("rwa", "rabi"), default="rwa")
    p.add_argument("--include-e3", action="store_true")
    p.add_argument("--initial-index", type=int, default=0,
                   help="basis state to start from")
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "energies":
            rows = cmd_energies(args)
        elif args.command == "storage":
            rows = cmd_storage(args)
        elif args.command == "transfer":
            rows = cmd_transfer(args)
        elif args.command == "rwa-gap":
            rows = cmd_rwa_gap(args)
        elif args.command == "validate":
            return cmd_validate(args)
        elif args.command == "run":
            rows = cmd_run(args)
        else:
            parser.print_usage(sys.stderr)
            return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DeviceFileError, SingularCircuitError, PhysicsError,
            TruncationOverflowError, pulse.ProgramSyntaxError,
            pulse.OverlapSegmentsError, pulse.ProgramExecutionError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        emit_table(rows, args.format, args.out)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
