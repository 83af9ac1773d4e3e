"""Command-line entry point: ``glfm-jic {fit,select,simulate,diagnose}``.

Exit status is 0 on success, 1 for bad input or configuration and 2 when the
numerical work itself fails.  Reports go to ``--output`` or standard output;
log messages go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io as gio
from .diagnostics import error_report, hadamard_audit
from .estimator import FitConfig, fit_jml
from .model_core import get_family
from .selection import select_K
from .simulation import SimSetting, run_study, preset_setting

logger = logging.getLogger("glfm_jic")

COMMANDS = ("fit", "select", "simulate", "diagnose")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are input errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    family: str = "logistic"
    candidates: tuple = tuple(range(1, 9))
    K: int | None = None
    C: float = 4.0
    tol: float = 1e-4
    max_sweeps: int = 500
    inner_max_iter: int = 5
    seed: int = 0
    input: str | None = None
    triplets: str | None = None
    N: int | None = None
    J: int | None = None
    header: bool = False
    output: str | None = None
    format: str = "json"
    decimals: int | None = None
    no_timestamp: bool = False

    def fit_config(self) -> FitConfig:
        return FitConfig(max_sweeps=self.max_sweeps, rel_tol=self.tol,
                         inner_max_iter=self.inner_max_iter, seed=self.seed)

    def to_dict(self) -> dict:
        # the destination does not affect results, so reruns to other paths match
        out = asdict(self)
        del out["output"]
        out["candidates"] = list(self.candidates)
        return out


def parse_candidates(text: str) -> tuple:
    """``"4,5,6"`` or ``"1-5"`` or a mix like ``"1-3,6"``."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty candidate list")
    return tuple(out)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option defaults (keys as in the long flags)")
    p.add_argument("--family", choices=["logistic", "poisson", "gaussian"])
    p.add_argument("--C", type=float, help="constraint radius (default 4)")
    p.add_argument("--tol", type=float, help="relative log-likelihood tolerance (default 1e-4)")
    p.add_argument("--max-sweeps", type=int, dest="max_sweeps")
    p.add_argument("--inner-max-iter", type=int, dest="inner_max_iter")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output file (default: standard output)")
    p.add_argument("--format", choices=["json", "csv"])
    p.add_argument("--no-timestamp", action="store_true", default=None, dest="no_timestamp",
                   help="omit the creation timestamp so reruns are byte-identical")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="dense CSV matrix; empty or NA cells are missing")
    p.add_argument("--header", action="store_true", default=None,
                   help="dense CSV has a header line")
    p.add_argument("--triplets", help="CSV of i,j,y lines with 0-based indices")
    p.add_argument("--N", type=int, help="row count (triplet input)")
    p.add_argument("--J", type=int, help="column count (triplet input)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="glfm-jic",
        description="Fit generalised latent factor models and choose the number of factors by JIC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one K by constrained joint maximum likelihood")
    _add_common(p)
    _add_data(p)
    p.add_argument("--K", type=int)

    p = sub.add_parser("select", help="choose K by minimising JIC over candidates")
    _add_common(p)
    _add_data(p)
    p.add_argument("--candidates", type=parse_candidates, help="e.g. 1-5 or 4,5,6 (default 1-8)")
    p.add_argument("--decimals", type=int, help="round CSV table values")

    p = sub.add_parser("simulate", help="replication study of JIC selection")
    _add_common(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--setting", help="JSON file with simulation setting fields")
    group.add_argument("--preset", type=int, choices=range(1, 13), metavar="{1..12}",
                       help="one of the twelve preset simulation settings (1-12)")
    p.add_argument("--replications", type=int)
    p.add_argument("--scale", type=float, default=1.0, help="shrink N and J of a preset")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-runtimes", action="store_true", help="omit per-replication runtimes")

    p = sub.add_parser("diagnose", help="fit one K and report spectrum and error rates")
    _add_common(p)
    _add_data(p)
    p.add_argument("--K", type=int)
    p.add_argument("--truth", help="dense CSV of the true natural-parameter matrix")
    p.add_argument("--spectrum-output", help="write the singular values as CSV here")
    p.add_argument("--hadamard-audit", type=int, metavar="TRIALS",
                   help="run the randomized Hadamard nuclear-norm audit instead of a fit")
    return parser


def _merge_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path}: {exc}") from None
        if not isinstance(values, dict):
            raise InputError("config file must hold a JSON object")
        cmd = values.pop("command", args.command)
        if cmd != args.command:
            raise InputError(f"config file is for {cmd!r}, not {args.command!r}")
    fields = RunConfig.__dataclass_fields__
    unknown = set(values) - set(fields)
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    for name in fields:
        if name != "command" and getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    if "candidates" in values:
        cands = values["candidates"]
        values["candidates"] = parse_candidates(cands) if isinstance(cands, str) else tuple(cands)
    return RunConfig(command=args.command, **values)


def _load_observations(cfg: RunConfig):
    if bool(cfg.input) == bool(cfg.triplets):
        raise InputError("give exactly one of --input or --triplets")
    path = Path(cfg.input or cfg.triplets)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    if cfg.triplets:
        if cfg.N is None or cfg.J is None:
            raise InputError("--triplets needs --N and --J")
        return gio.read_triplets_csv(path, cfg.N, cfg.J)
    return gio.read_dense_csv(path, header=cfg.header)


def _check_output(path) -> None:
    if path and not Path(path).parent.resolve().is_dir():
        raise InputError(f"output directory does not exist: {Path(path).parent}")


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_fit(cfg: RunConfig, args) -> None:
    if cfg.K is None:
        raise InputError("fit needs --K")
    obs = _load_observations(cfg)
    fit = fit_jml(obs, cfg.K, cfg.family, cfg.C, cfg.fit_config())
    if cfg.format == "csv":
        _emit(gio.fit_params_csv(fit), cfg.output)
        return
    report = gio.fit_report(fit, obs, get_family(cfg.family).name)
    report["config"] = cfg.to_dict()
    if not cfg.no_timestamp:
        report["created"] = gio._timestamp()
    _emit(gio.dumps(report), cfg.output)


def _cmd_select(cfg: RunConfig, args) -> None:
    obs = _load_observations(cfg)
    result = select_K(obs, cfg.candidates, cfg.family, cfg.C, cfg.fit_config())
    if cfg.format == "csv":
        _emit(gio.selection_table_csv(result, cfg.decimals), cfg.output)
    else:
        report = gio.selection_report(result, cfg.to_dict(), timestamp=not cfg.no_timestamp)
        _emit(gio.dumps(report), cfg.output)
    logger.info("chosen K = %d", result.chosen_K)


def _cmd_simulate(cfg: RunConfig, args) -> None:
    if args.setting:
        path = Path(args.setting)
        if not path.is_file():
            raise InputError(f"setting file not found: {path}")
        setting = SimSetting.from_dict(json.loads(path.read_text()))
        if args.replications:
            setting = SimSetting.from_dict({**setting.to_dict(), "replications": args.replications})
    elif args.preset:
        setting = preset_setting(args.preset, args.replications, cfg.seed, args.scale)
    else:
        raise InputError("simulate needs --setting or --preset")
    summary = run_study(setting, workers=args.workers).to_dict(include_runtimes=not args.no_runtimes)
    if cfg.format == "csv":
        _emit(gio.study_csv(summary), cfg.output)
        return
    if not cfg.no_timestamp:
        summary["created"] = gio._timestamp()
    _emit(gio.dumps(summary), cfg.output)


def _cmd_diagnose(cfg: RunConfig, args) -> None:
    if args.hadamard_audit:
        _emit(gio.dumps(hadamard_audit(trials=args.hadamard_audit, seed=cfg.seed)), cfg.output)
        return
    if cfg.K is None:
        raise InputError("diagnose needs --K")
    obs = _load_observations(cfg)
    M_star = None
    if args.truth:
        truth = gio.read_dense_csv(args.truth).to_dense()
        if truth.shape != obs.shape or np.isnan(truth).any():
            raise InputError("--truth must be a complete matrix with the data's shape")
        M_star = truth
    fit = fit_jml(obs, cfg.K, cfg.family, cfg.C, cfg.fit_config())
    report = error_report(fit.M, obs.n, cfg.K, M_star)
    if args.spectrum_output:
        Path(args.spectrum_output).write_text(gio.spectrum_csv(report.singular_values))
    if cfg.format == "csv":
        _emit(gio.spectrum_csv(report.singular_values), cfg.output)
    else:
        out = report.to_dict()
        out["loglik"] = fit.loglik
        _emit(gio.dumps(out), cfg.output)


HANDLERS = {"fit": _cmd_fit, "select": _cmd_select, "simulate": _cmd_simulate,
            "diagnose": _cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _merge_config(args)
        get_family(cfg.family)
        _check_output(cfg.output)
        HANDLERS[cfg.command](cfg, args)
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, ValueError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
