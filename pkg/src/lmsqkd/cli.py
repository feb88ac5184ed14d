"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O error, 2 protocol abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import adversary, keyrate
from .errors import ContractViolation
from .protocol import SessionConfig, SessionTranscript, run_session, theoretical_efficiency
from .strategies import AttackStrategy, CollectiveParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not a probability")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}")
    return vals


def _seed_default() -> int:
    env = os.environ.get("LMSQKD_SEED")
    if env is None:
        return 0
    try:
        return int(env, 0)
    except ValueError:
        return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (falls back to $LMSQKD_SEED, then 0)")
    p.add_argument("--threads", type=_positive_int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lmsqkd", description="Mediated semi-quantum key distribution simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one protocol session")
    _add_common(sim)
    sim.add_argument("--rounds", type=int, required=True)
    sim.add_argument("--pa", type=_probability, default=0.5)
    sim.add_argument("--pb", type=_probability, default=0.5)
    sim.add_argument("--check-fraction", type=float, default=0.5)
    sim.add_argument("--threshold", type=_probability, default=0.08)
    sim.add_argument("--min-check", type=_positive_int, default=100)
    sim.add_argument("--margin", type=int, default=0, help="extra bits removed by privacy amplification")
    sim.add_argument("--strategy", choices=["honest", "noise", "fake-z", "fake-x", "collective"], default="honest")
    sim.add_argument("--flip", type=_probability, default=None)
    sim.add_argument("--params", default=None, help="collective-attack params JSON")
    sim.add_argument("--out", default=None, help="write the transcript JSON here")
    sim.add_argument("--verbose", action="store_true", help="include per-round records in the transcript")

    curve = sub.add_parser("keyrate-curve", help="export the key-rate curve as CSV")
    _add_common(curve)
    curve.add_argument("--min", dest="q_min", type=float, default=0.0)
    curve.add_argument("--max", dest="q_max", type=float, default=0.15)
    curve.add_argument("--step", type=float, default=0.005)
    curve.add_argument("--out", default=None)

    thr = sub.add_parser("threshold", help="QBER at which the key rate reaches zero")
    _add_common(thr)
    thr.add_argument("--tol", type=float, default=5e-4)

    att = sub.add_parser("attack", help="evaluate an attack")
    _add_common(att)
    kind = att.add_mutually_exclusive_group(required=True)
    kind.add_argument("--fake-photon", choices=["z", "x"])
    kind.add_argument("--collective", action="store_true")
    att.add_argument("--params", default=None)
    att.add_argument("--m", type=_int_list, default=[1, 2, 5, 10])
    att.add_argument("--trials", type=_positive_int, default=10000)

    eff = sub.add_parser("efficiency", help="qubit efficiency b_s / q_t")
    eff.add_argument("--pa", default="0.5")
    eff.add_argument("--pb", default="0.5")
    eff.add_argument("--check-fraction", default="0.5")
    eff.add_argument("--from-transcript", default=None)
    return parser


def _load_params(path: Optional[str]) -> CollectiveParams:
    if path is None:
        raise UsageError("--params FILE is required for collective attacks")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc
    return CollectiveParams.from_json(doc)


def _strategy(args) -> AttackStrategy:
    name = args.strategy
    if name != "noise" and args.flip is not None:
        raise UsageError("--flip only applies to --strategy noise")
    if name == "honest":
        return AttackStrategy.honest()
    if name == "noise":
        if args.flip is None:
            raise UsageError("--strategy noise needs --flip")
        return AttackStrategy.noise(args.flip)
    if name in ("fake-z", "fake-x"):
        return AttackStrategy.fake_photon(name[-1])
    return AttackStrategy.collective(_load_params(args.params))


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from exc


def _kv(pairs: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in pairs.items())


def cmd_simulate(args) -> int:
    if args.rounds < 1:
        raise UsageError("--rounds must be >= 1")
    config = SessionConfig(
        n_rounds=args.rounds, p_a=args.pa, p_b=args.pb, check_fraction=args.check_fraction,
        qber_threshold=args.threshold, pa_security_margin=args.margin, master_seed=args.seed,
        min_check_bits=args.min_check,
    )
    transcript = run_session(config, _strategy(args), threads=args.threads)
    if args.out is not None:
        _write_text(args.out, transcript.dumps(include_rounds=args.verbose))
    print(_kv(transcript.summary()))
    if transcript.accepted:
        return EXIT_OK
    if transcript.estimated_qber is not None:
        print(f"aborted: QBER {transcript.estimated_qber:.6f} > threshold {config.qber_threshold}")
    else:
        print(f"aborted: {transcript.abort_reason}")
    return EXIT_ABORT


def cmd_keyrate_curve(args) -> int:
    points = keyrate.export_curve(args.q_min, args.q_max, args.step, threads=args.threads)
    _write_text(args.out, keyrate.curve_csv(points))
    if args.out not in (None, "-"):
        print(f"rows={len(points)} out={args.out}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    print(f"threshold={keyrate.find_threshold(args.tol):.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.collective:
        params = _load_params(args.params)
        report = adversary.leakage_report(params, args.trials, np.random.default_rng(args.seed))
        print(_kv({
            "qber_ii": f"{report.qber_ii:.6f}",
            "qber_hh": f"{report.qber_hh:.6f}",
            "holevo_bits": f"{report.holevo_bits:.6f}",
            "holevo_ii": f"{report.holevo_ii:.6f}",
            "holevo_hh": f"{report.holevo_hh:.6f}",
            "guess_accuracy": f"{report.empirical_guess_accuracy:.4f}",
        }))
        return EXIT_OK
    if args.params is not None:
        raise UsageError("--params only applies to --collective")
    rows = adversary.detection_table(args.fake_photon, args.m, args.trials, args.seed, threads=args.threads)
    print("m predicted per_check_model empirical")
    for m, pred, model, emp in rows:
        print(f"{m} {pred:.6f} {model:.6f} {emp:.6f}")
    return EXIT_OK


def _fraction(text: str, name: str) -> Fraction:
    try:
        v = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"--{name} must be a number, got {text!r}") from exc
    if not 0 <= v <= 1:
        raise UsageError(f"--{name} must lie in [0, 1]")
    return v


def cmd_efficiency(args) -> int:
    if args.from_transcript is not None:
        try:
            with open(args.from_transcript, encoding="utf-8") as fh:
                doc = json.load(fh)
            t = SessionTranscript.from_json(doc)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read transcript {args.from_transcript}: {exc}") from exc
        bits, qubits = len(t.final_key), 2 * t.config.n_rounds
        print(f"qe={bits}/{qubits} ({bits / qubits:.6g})")
        return EXIT_OK
    qe = theoretical_efficiency(
        _fraction(args.pa, "pa"), _fraction(args.pb, "pb"), _fraction(args.check_fraction, "check-fraction")
    )
    print(f"qe={qe.numerator}/{qe.denominator} ({float(qe):.6g})")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "keyrate-curve": cmd_keyrate_curve,
    "threshold": cmd_threshold,
    "attack": cmd_attack,
    "efficiency": cmd_efficiency,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "seed", 0) is None:
        args.seed = _seed_default()
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
