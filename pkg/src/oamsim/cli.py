"""Command-line front end: train / characterize / tomography / demo.

Exit codes: 0 success, 2 configuration or input-schema error, 3 numerical
failure, 4 acceptance-threshold failure (report still emitted).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from . import tomography as tomo
from .config import ConfigError, load_config
from .optics import set_fft_workers
from .training import GATE_TARGET_NAMES, load_stack, save_stack

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override training.seed")
    parser.add_argument("--target", choices=GATE_TARGET_NAMES, help="override gate target")
    parser.add_argument("--threads", type=int, help="FFT worker threads (or OAMSIM_THREADS)")
    parser.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oamsim",
        description="Simulate and characterize diffractive three-qubit photonic gates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a phase stack for a gate target")
    _add_common(p_train)

    p_char = sub.add_parser("characterize", help="benchmark a trained stack")
    _add_common(p_char)
    p_char.add_argument("--stack", required=True, help="stack binary from 'train'")

    p_tomo = sub.add_parser("tomography", help="reconstruct a state or process from counts")
    p_tomo.add_argument("--dataset", required=True, help="counts CSV (JSON sidecar required)")
    p_tomo.add_argument("--mode", choices=("state", "process"), required=True)
    p_tomo.add_argument("--out", required=True)
    p_tomo.add_argument("--reference", help="reference matrix CSV (rho or chi) for fidelity")
    p_tomo.add_argument("--threads", type=int)
    p_tomo.add_argument("--quiet", action="store_true")

    p_demo = sub.add_parser("demo", help="train and characterize all four gate targets")
    _add_common(p_demo)
    return parser


def _configure_threads(args) -> None:
    workers = args.threads
    if workers is None:
        env = os.environ.get("OAMSIM_THREADS")
        workers = int(env) if env else None
    if workers is not None:
        set_fft_workers(workers)


def _overrides_from_args(args) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides.setdefault("training", {})["seed"] = args.seed
    if args.target is not None:
        overrides["target"] = args.target
    return overrides


def _run_train(args) -> int:
    config = load_config(args.config, _overrides_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, _ = report_mod.train_gate(config)
    save_stack(result.stack, out / "stack.bin")
    report_mod.save_loss_history_csv(out / "loss_history.csv", result.loss_history)
    report_mod.render_phase_layers_png(out, result.stack)
    report_mod.write_json_atomic(
        out / "train.json",
        {
            "schema_version": report_mod.SCHEMA_VERSION,
            "kind": "train",
            "target": config.target,
            "config": config.to_dict(),
            "loss": {
                "initial": float(result.loss_history[0]),
                "final": float(result.loss_history[-1]),
            },
        },
    )
    if not args.quiet:
        print(
            f"[{config.target}] trained {config.layers} layers, "
            f"loss {result.loss_history[0]:.4g} -> {result.loss_history[-1]:.4g}"
        )
    return EXIT_OK


def _run_characterize(args) -> int:
    config = load_config(args.config, _overrides_from_args(args))
    stack = load_stack(args.stack)
    if stack.grid != config.grid:
        raise ConfigError(
            f"stack grid {stack.grid} does not match configured grid {config.grid}"
        )
    if abs(stack.spacing - config.spacing) > 1e-12 or stack.n_layers != config.layers:
        raise ConfigError(
            "stack geometry (layers/spacing) does not match the configuration"
        )
    result = report_mod.characterize_gate(config, stack)
    report_mod.emit_characterize_outputs(args.out, result, quiet=args.quiet)
    return EXIT_OK if result.report["accepted"] else EXIT_ACCEPTANCE


def _run_tomography(args) -> int:
    try:
        dataset = tomo.load_dataset(args.dataset)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    if dataset.kind != args.mode:
        raise ConfigError(
            f"dataset kind {dataset.kind!r} does not match --mode {args.mode!r}"
        )
    states = tomo.build_probe_basis()
    out = Path(args.out)
    info: dict = {"schema_version": report_mod.SCHEMA_VERSION, "kind": f"{args.mode}-tomography"}

    if args.mode == "state":
        qst = tomo.qst_mle(dataset.counts[0], states[list(dataset.projector_indices)])
        matrices = {"rho.csv": qst.rho}
        info["iterations"] = qst.iterations
        info["converged"] = qst.converged
        reconstructed = qst.rho
        fidelity_fn = tomo.state_fidelity
    else:
        qpt = tomo.qpt_mle(dataset, states)
        chi = tomo.chi_from_choi(qpt.choi)
        matrices = {"choi.csv": qpt.choi, "chi.csv": chi}
        info["iterations"] = qpt.iterations
        info["converged"] = qpt.converged
        reconstructed = chi
        fidelity_fn = tomo.process_fidelity

    if args.reference:
        reference = report_mod.load_complex_matrix_csv(args.reference)
        if reference.shape != reconstructed.shape:
            raise ConfigError(
                f"reference shape {reference.shape} does not match "
                f"reconstruction {reconstructed.shape}"
            )
        info["fidelity_to_reference"] = float(fidelity_fn(reconstructed, reference))

    out.mkdir(parents=True, exist_ok=True)
    for name, matrix in matrices.items():
        report_mod.save_complex_matrix_csv(out / name, matrix)
    report_mod.write_json_atomic(out / "tomography.json", info)
    if not args.quiet:
        extra = (
            f" fidelity={info['fidelity_to_reference']:.6f}" if "fidelity_to_reference" in info else ""
        )
        print(f"[{args.mode}] iterations={info['iterations']} converged={info['converged']}{extra}")
    return EXIT_OK


def _run_demo(args) -> int:
    config = load_config(args.config, _overrides_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    worst = EXIT_OK
    for target in GATE_TARGET_NAMES:
        sub = out / target
        sub.mkdir(parents=True, exist_ok=True)
        cfg = load_config(args.config, {**_overrides_from_args(args), "target": target})
        train_result, _ = report_mod.train_gate(cfg)
        save_stack(train_result.stack, sub / "stack.bin")
        report_mod.save_loss_history_csv(sub / "loss_history.csv", train_result.loss_history)
        char = report_mod.characterize_gate(cfg, train_result.stack, train_result.loss_history)
        report_mod.emit_characterize_outputs(sub, char, quiet=args.quiet)
        r = char.report["results"]
        summary.append(
            {
                "target": target,
                "accepted": char.report["accepted"],
                "unitarity_defect": r["unitarity_defect"],
                "visibility": r["visibility"],
                "process_fidelity": r["process_fidelity"],
            }
        )
        if not char.report["accepted"]:
            worst = EXIT_ACCEPTANCE
    report_mod.write_json_atomic(
        out / "summary.json",
        {
            "schema_version": report_mod.SCHEMA_VERSION,
            "kind": "demo",
            "config": config.to_dict(),
            "gates": summary,
        },
    )
    if not args.quiet:
        for row in summary:
            print(
                f"[{row['target']}] accepted={row['accepted']} "
                f"visibility={row['visibility']:.4f} "
                f"process_fidelity={row['process_fidelity']:.4f}"
            )
    return worst


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_threads(args)
        if args.command == "train":
            return _run_train(args)
        if args.command == "characterize":
            return _run_characterize(args)
        if args.command == "tomography":
            return _run_tomography(args)
        if args.command == "demo":
            return _run_demo(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
