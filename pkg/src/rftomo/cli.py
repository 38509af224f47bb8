"""Command-line entry point: ``rftomo {simulate,reconstruct,controllability,conditioning,optimize}``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure
(informationally incomplete record, unconverged solver).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_config, load_config
from .controllability import lie_closure
from .optimizer import optimize_preparation, optimize_tomography_pulse
from .propagator import expectation_trace, sample_times
from .pulse import sample_pulses
from .quantum import check_density_matrix, matrix_from_json, matrix_to_json, pauli_basis
from .tomography import (
    InformationallyIncompleteError,
    MeasurementRecord,
    RecordDesign,
    conditioning_study,
    protocol_records,
    reconstruct_constrained,
    records_from_json,
    records_to_json,
    simulate_records,
    stacked_rank,
    write_conditioning_csv,
    write_records_csv,
)

log = logging.getLogger("rftomo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class InputError(Exception):
    pass


def _num_qubits(d: int) -> int:
    n = int(round(np.log2(d)))
    if 2**n != d:
        raise ConfigError(f"system dimension {d} is not a power of two; no Pauli basis")
    return n


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _header(cfg: ExperimentConfig) -> str:
    return f"config_sha256={cfg.digest} seed={cfg.seed}"


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    system, proto = cfg.system, cfg.protocol
    n = proto.num_pulses or system.dim**2 - 1
    pulses = sample_pulses(cfg.pulse_spec, proto.duration, n)
    times = sample_times(proto.duration, proto.spacing)
    for i, p in enumerate(pulses, 1):
        _write_json(out / f"pulse_{i:02d}.json", {**p.to_json(), "meta": cfg.provenance})
        trace = expectation_trace(system, p, cfg.state, times, proto.step)
        trace.to_csv(out / f"trace_{i:02d}.csv", _header(cfg))
    if n == system.dim**2 - 1:
        basis = pauli_basis(_num_qubits(system.dim))
        design = RecordDesign(pulses, proto.design_times(), proto.step)
        records = simulate_records(system, design, cfg.state, basis, cfg.noise)
        (out / "records.json").write_text(
            records_to_json(records, meta=cfg.provenance, sample_times_s=design.sample_times.tolist()) + "\n"
        )
        write_records_csv(records, out / "records.csv", f"{_header(cfg)} sample_times_s={design.sample_times.tolist()}")
    print(f"wrote {n} pulses and traces to {out}")
    return EXIT_OK


def _load_records(path: str) -> list[MeasurementRecord]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read record file {path}: {exc.strerror}") from None
    try:
        return records_from_json(text)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"record file {path} is malformed: {exc}") from None


def _load_state(path: str) -> np.ndarray:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read reference state {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"reference state {path} is not valid JSON: {exc}") from None
    return check_density_matrix(matrix_from_json(obj.get("rho", obj)))


def cmd_reconstruct(cfg: ExperimentConfig, args) -> int:
    system = cfg.system
    basis = pauli_basis(_num_qubits(system.dim))
    reference = _load_state(args.reference) if args.reference else None
    if args.end_to_end:
        truth = reference if reference is not None else cfg.state
        _, records = protocol_records(system, truth, cfg.pulse_spec, cfg.noise, cfg.protocol, basis)
        reference = truth
    elif args.records:
        records = []
        for path in args.records:
            records.extend(_load_records(path))
    else:
        raise InputError("reconstruct needs --records FILE... or --end-to-end")
    a = np.vstack([r.matrix for r in records])
    rank = stacked_rank(a)
    if rank < a.shape[1]:
        raise InformationallyIncompleteError(a.shape[1] - rank, a.shape[1])
    result = reconstruct_constrained(records, basis, cfg.solver)
    obj = result.to_json(reference)
    obj["meta"] = cfg.provenance
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "reconstruction.json", obj)
    summary = f"residual={result.residual:.3e} iterations={result.iterations}"
    if reference is not None:
        summary += f" fidelity={obj['fidelity_vs_reference']:.6f}"
    if "concurrence" in obj:
        summary += f" concurrence={obj['concurrence']:.4f}"
    print(summary)
    if not result.converged:
        log.error("solver did not reach gtol=%g; result written but flagged", cfg.solver.gtol)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_controllability(cfg: ExperimentConfig, args) -> int:
    res = lie_closure(cfg.system.h0, cfg.system.hc)
    obj = {**res.to_json(), "meta": cfg.provenance}
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "controllability.json", obj)
    print(json.dumps(res.to_json()))
    return EXIT_OK


def cmd_conditioning(cfg: ExperimentConfig, args) -> int:
    basis = pauli_basis(_num_qubits(cfg.system.dim))
    rows = conditioning_study(
        cfg.system, cfg.pulse_spec, cfg.durations, cfg.realizations, basis, cfg.protocol.step, threads=args.threads
    )
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_conditioning_csv(rows, out / "conditioning.csv", _header(cfg))
    for r in rows:
        print(f"{r.duration * 1e6:6.2f} us  mean log||M^-1|| = {r.mean_log_inv_norm:8.4f}  singular={r.singular_count}")
    return EXIT_OK


def cmd_optimize(cfg: ExperimentConfig, args) -> int:
    spec = cfg.optimization
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if spec.objective == "max-concurrence":
        res = optimize_preparation(cfg.system, cfg.state, spec, cfg.protocol.step, workers=args.threads)
        _write_json(out / "optimized_pulse.json", {**res.pulse.to_json(), "concurrence": res.achieved,
                                                     "meta": cfg.provenance})
        print(f"best concurrence {res.achieved:.4f} (restart {res.restart})")
    else:
        basis = pauli_basis(_num_qubits(cfg.system.dim))
        res = optimize_tomography_pulse(cfg.system, spec, basis, cfg.protocol.step, workers=args.threads)
        _write_json(out / "optimized_pulses.json", {"pulses": [p.to_json() for p in res.pulses],
                                                      "inverse_norm": res.achieved, "meta": cfg.provenance})
        print(f"best ||M^-1|| {res.achieved:.4g} (restart {res.restart})")
    res.write_log(out / "optimization_log.csv", _header(cfg))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "controllability": cmd_controllability,
    "conditioning": cmd_conditioning,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (schema_version 1); defaults to the NV experiment")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides config output_dir)")
    common.add_argument("--threads", type=int, default=1, help="parallel workers for Monte Carlo / restarts")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rftomo", description="Random-field quantum-state tomography toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="sample random pulses and write pulse/trace files")
    rec = sub.add_parser("reconstruct", parents=[common], help="reconstruct a state from records")
    rec.add_argument("--records", nargs="+", metavar="FILE", help="records.json file(s) written by simulate")
    rec.add_argument("--end-to-end", action="store_true", help="simulate records from the reference state, then reconstruct")
    rec.add_argument("--reference", metavar="FILE", help="density-matrix JSON {dim, re, im} to compare against")
    sub.add_parser("controllability", parents=[common], help="dynamical Lie algebra rank test")
    sub.add_parser("conditioning", parents=[common], help="||M^-1|| statistics versus pulse length")
    sub.add_parser("optimize", parents=[common], help="optimize preparation or tomography pulses")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = load_config(args.config) if args.config else {"schema_version": 1}
        cfg = build_config(raw, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InformationallyIncompleteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def state_to_json(rho) -> dict:
    """Density-matrix file format read by ``--reference``."""
    return matrix_to_json(rho)


if __name__ == "__main__":
    sys.exit(main())
