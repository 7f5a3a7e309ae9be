"""Command-line interface: ``slatebayes {generate,fit,sample,eval,experiment}``."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import secrets
import sys
from pathlib import Path

from ._meta import SPEC_VERSION, version_string
from .core import ModelKind, ModelParams, PriorConfig
from .data import (
    DatasetFormatError,
    GeneratorSpec,
    dataset_to_csv,
    read_dataset,
    simulate,
    slate_array,
    view_for,
)
from .experiments import HEAVY_NOTE, PRESETS, ExperimentConfig, run_sweep, run_violin
from .inference import MapConfig, McmcConfig, NumericalFailure, map_estimate, mcmc_sample
from .metrics import l1_click_rank_error, l1_nonclick_error

log = logging.getLogger("slatebayes")

# Real defaults live here so that every argparse default can be None, which
# tells "not given on the command line" apart from "given".
DEFAULTS = {
    "theta_shape": PriorConfig.theta_shape,
    "theta_rate": PriorConfig.theta_rate,
    "phi_shape": PriorConfig.phi_shape,
    "phi_rate": PriorConfig.phi_rate,
    "max_iterations": MapConfig.max_iterations,
    "gradient_tolerance": MapConfig.gradient_tolerance,
    "initial_step": MapConfig.initial_step,
    "backtracking": MapConfig.backtracking,
    "armijo": MapConfig.armijo,
    "method": MapConfig.method,
    "num_samples": McmcConfig.num_samples,
    "burn_in": McmcConfig.burn_in,
    "thin": McmcConfig.thin,
    "target_acceptance": McmcConfig.target_acceptance,
    "adaptation_window": McmcConfig.adaptation_window,
    "replications": 50,
    "heavy": False,
    "all_positions": False,
    "metric": "both",
    "output_dir": ".",
}


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# -- parser ------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file; command-line flags win")
    p.add_argument("--seed", type=int, help="random seed (a fresh one is printed if omitted)")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true", default=None)
    verbosity.add_argument("-v", "--verbose", action="store_true", default=None)


def _prior_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("prior (Gamma shape/rate)")
    g.add_argument("--theta-shape", type=float)
    g.add_argument("--theta-rate", type=float)
    g.add_argument("--phi-shape", type=float)
    g.add_argument("--phi-rate", type=float)


def _map_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--gradient-tolerance", type=float)
    g.add_argument("--initial-step", type=float)
    g.add_argument("--backtracking", type=float)
    g.add_argument("--armijo", type=float)
    g.add_argument("--method", choices=["newton", "gradient"])


def _mcmc_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--num-samples", type=int)
    g.add_argument("--burn-in", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--target-acceptance", type=float)
    g.add_argument("--adaptation-window", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slatebayes",
        description="Full / Reward / Rank Bayesian click models for slates.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {version_string()} (schema {SPEC_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="simulate a dataset (CSV + JSON metadata)")
    _common(p)
    p.add_argument("--catalog", type=int, help="catalog size N")
    p.add_argument("--slate", type=int, help="slate size K")
    p.add_argument("--samples", type=int, help="impressions per slate n")
    p.add_argument("-o", "--output", type=Path, help="CSV path (default: stdout, no metadata)")

    p = sub.add_parser("fit", help="MAP estimate of one model on a dataset")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("-m", "--model", choices=[k.value for k in ModelKind])
    p.add_argument("-o", "--output", type=Path, help="JSON path (default: stdout)")
    _prior_flags(p)
    _map_flags(p)

    p = sub.add_parser("sample", help="posterior samples by random-walk Metropolis")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("-m", "--model", choices=[k.value for k in ModelKind])
    p.add_argument("-o", "--output", type=Path, help="output path (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"])
    _prior_flags(p)
    _map_flags(p)
    _mcmc_flags(p)

    p = sub.add_parser("eval", help="L1 errors between two parameter files")
    _common(p)
    p.add_argument("estimate", type=Path, help="fit output or {theta, phi} JSON")
    p.add_argument("truth", type=Path, help="dataset metadata, fit output or {theta, phi} JSON")
    where = p.add_mutually_exclusive_group()
    where.add_argument("--dataset", type=Path, help="score over this dataset's slates")
    where.add_argument("--slate", type=int, help="score over all slates of this size")
    p.add_argument("--metric", choices=["click_rank", "non_click", "both"])
    p.add_argument("--all-positions", action="store_true", default=None)
    p.add_argument("-o", "--output", type=Path)

    p = sub.add_parser("experiment", help="run a published experiment preset")
    _common(p)
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--values", type=_int_list, help="comma-separated sweep values")
    p.add_argument("--catalog", type=int, help="catalog size N (fixed or violin)")
    p.add_argument("--slate", type=int, help="slate size K when fixed")
    p.add_argument("--samples", type=int, help="impressions per slate n when fixed")
    p.add_argument("--replications", type=int)
    p.add_argument("--heavy", action="store_true", default=None,
                   help=HEAVY_NOTE)
    p.add_argument("--all-positions", action="store_true", default=None,
                   help="score click-rank error over every slate position")
    p.add_argument("--threads", type=int, help="worker processes (default: all CPUs)")
    p.add_argument("--format", choices=["csv", "json"], help="write only this format")
    p.add_argument("--output-dir", type=Path)
    _prior_flags(p)
    _map_flags(p)
    _mcmc_flags(p)
    return parser


# -- config merge --------------------------------------------------------------------


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _load_config(path: Path, sub: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    text = path.read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[slatebayes]\n" + text
    cp = configparser.ConfigParser()
    cp.read_string(text, source=str(path))
    actions = {a.dest: a for a in sub._actions}
    for section in cp.sections():
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("config", "help"):
                raise CliError(f"{path}: unknown setting {key!r}")
            if getattr(args, dest, None) is not None:
                continue  # command line wins
            action = actions[dest]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = _bool(raw)
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"{path}: bad value for {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise CliError(f"{path}: {key!r} must be one of {sorted(action.choices)}")
            setattr(args, dest, value)


def _fill_defaults(args: argparse.Namespace) -> None:
    for k, v in DEFAULTS.items():
        if getattr(args, k, "missing") is None:
            setattr(args, k, v)


# -- helpers ------------------------------------------------------------------------------


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    if not 0 <= args.seed < 2 ** 64:
        raise CliError("--seed must be an unsigned 64-bit integer")
    return args.seed


def _prior(args) -> PriorConfig:
    try:
        return PriorConfig(args.theta_shape, args.theta_rate, args.phi_shape, args.phi_rate)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _map_config(args) -> MapConfig:
    try:
        return MapConfig(args.max_iterations, args.gradient_tolerance, args.initial_step,
                         args.backtracking, args.armijo, args.method)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _mcmc_config(args) -> McmcConfig:
    try:
        return McmcConfig(args.num_samples, args.burn_in, args.thin, args.target_acceptance,
                          args.adaptation_window, args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _write_all(files: dict[Path, str]) -> None:
    """Write every file or none: stage to temporaries, then rename."""
    staged, done = [], []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".partial")
            tmp.write_text(text, encoding="utf-8", newline="\n")
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
            done.append(path)
    except OSError as exc:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        for path in done:
            path.unlink(missing_ok=True)
        raise CliError(f"could not write output: {exc}") from None


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        _write_all({output: text})


def _load_dataset(path: Path, kind: ModelKind):
    try:
        dataset, _ = read_dataset(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except DatasetFormatError as exc:
        raise CliError(f"{path}: {exc}") from None
    try:
        return view_for(kind, dataset)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


def _load_params(path: Path) -> ModelParams:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: {exc}") from None
    for key in ("true_params", "params"):
        if isinstance(obj.get(key), dict):
            obj = obj[key]
            break
    if "theta" not in obj:
        raise CliError(f"{path}: no 'theta' entry")
    try:
        return ModelParams(obj["theta"], obj.get("phi"))
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


# -- commands ------------------------------------------------------------------------------


def cmd_generate(args, parser) -> int:
    missing = [f"--{n}" for n in ("catalog", "slate", "samples") if getattr(args, n) is None]
    if missing:
        parser.error(f"missing required option(s): {', '.join(missing)}")
    if args.slate < 2 or args.slate > args.catalog:
        parser.error(f"--slate must be between 2 and --catalog ({args.catalog}), got {args.slate}")
    if args.samples < 1:
        parser.error("--samples must be >= 1")
    seed = _seed(args)
    spec = GeneratorSpec.standard(args.catalog, args.slate, args.samples, seed)
    dataset = simulate(spec)
    if args.output is None:
        sys.stdout.write(dataset_to_csv(dataset))
        return 0
    meta = {"spec_version": SPEC_VERSION, "catalog_size": dataset.catalog_size,
            "slate_size": dataset.slate_size, "view": dataset.view,
            "num_slates": len(dataset), "sha256": dataset.digest(), **spec.metadata()}
    _write_all({args.output: dataset_to_csv(dataset),
                args.output.with_suffix(".json"): json.dumps(meta, indent=2) + "\n"})
    log.info("wrote %d slates to %s", len(dataset), args.output)
    return 0


def _require_model(args, parser) -> ModelKind:
    if args.model is None:
        parser.error("--model is required")
    return ModelKind.parse(args.model)


def cmd_fit(args, parser) -> int:
    kind = _require_model(args, parser)
    dataset = _load_dataset(args.dataset, kind)
    try:
        result = map_estimate(kind, dataset, _prior(args), _map_config(args))
    except (NumericalFailure, ValueError) as exc:
        raise CliError(f"{args.dataset}: {exc}") from None
    out = result.to_dict()
    out["prior"] = _prior(args).to_dict()
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    if not result.converged:
        log.warning("optimizer did not converge (gradient norm %.3g)", result.final_gradient_norm)
    return 0


def cmd_sample(args, parser) -> int:
    kind = _require_model(args, parser)
    _seed(args)
    dataset = _load_dataset(args.dataset, kind)
    try:
        post = mcmc_sample(kind, dataset, _prior(args), _mcmc_config(args), _map_config(args))
    except (NumericalFailure, ValueError) as exc:
        raise CliError(f"{args.dataset}: {exc}") from None
    fmt = args.format or ("csv" if args.output and args.output.suffix == ".csv" else "json")
    if fmt == "csv":
        text = post.to_csv()
    else:
        d = post.to_dict()
        d["seed"] = args.seed
        text = json.dumps(d) + "\n"
    _emit(text, args.output)
    return 0


def cmd_eval(args, parser) -> int:
    est, truth = _load_params(args.estimate), _load_params(args.truth)
    if est.catalog_size != truth.catalog_size:
        raise CliError("estimate and truth have different catalog sizes")
    if args.dataset is not None:
        try:
            slates = read_dataset(args.dataset)[0].slates
        except (OSError, DatasetFormatError) as exc:
            raise CliError(f"{args.dataset}: {exc}") from None
    else:
        K = args.slate or 2
        if not 2 <= K <= est.catalog_size:
            parser.error(f"--slate must be between 2 and {est.catalog_size}")
        slates = slate_array(est.catalog_size, K)
    out = {"spec_version": SPEC_VERSION, "type": "evaluation", "num_slates": int(len(slates))}
    try:
        if args.metric in ("click_rank", "both"):
            out["click_rank"] = l1_click_rank_error(
                est.theta, truth.theta, slates, all_positions=args.all_positions).value
        if args.metric in ("non_click", "both"):
            if est.phi is None or truth.phi is None:
                if args.metric == "non_click":
                    raise CliError("non-click error needs phi in both files")
            else:
                out["non_click"] = l1_nonclick_error(est, truth, slates).value
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    return 0


def _progress(value, results):
    vals = {k.value: [r.values[k] for r in results] for k in results[0].values}
    summary = ", ".join(f"{k}={sum(v) / len(v):.3f}" for k, v in vals.items()
                        if all(math.isfinite(x) for x in v))
    log.info("cell %s done: %s", value, summary)


def cmd_experiment(args, parser) -> int:
    base_seed = _seed(args)
    prior, map_cfg, mcmc_cfg = _prior(args), _map_config(args), _mcmc_config(args)
    outdir = Path(args.output_dir)
    if args.preset == "violin":
        N = args.catalog or (args.values[0] if args.values else PRESETS["violin"]["catalog_size"])
        K = args.slate or PRESETS["violin"]["slate_size"]
        n = args.samples or PRESETS["violin"]["samples_per_slate"]
        if not 2 <= K <= N:
            parser.error(f"--slate must be between 2 and the catalog size {N}")
        res = run_violin(N, K, n, base_seed, prior, mcmc_cfg, map_cfg)
        cfg = {"prior": prior.to_dict(), "map_config": map_cfg.to_dict(),
               "mcmc_config": mcmc_cfg.to_dict()}
        files = {}
        stem = f"violin_N{N}"
        if args.format in (None, "json"):
            files[outdir / f"{stem}.json"] = json.dumps(res.to_dict(cfg), indent=2) + "\n"
        if args.format in (None, "csv"):
            files[outdir / f"{stem}.csv"] = res.to_csv()
        _write_all(files)
        for k, s in res.summary().items():
            log.info("%s: mean L1 %.4f, std %.4f, acceptance %.3f", k, s["mean"], s["std"],
                     s["acceptance_rate"])
        return 0

    if args.heavy and args.preset != "slate":
        parser.error("--heavy only applies to the slate preset")
    if args.heavy and args.values:
        parser.error("--heavy and --values are mutually exclusive")
    try:
        config = ExperimentConfig.preset(
            args.preset, heavy=args.heavy, values=args.values, catalog_size=args.catalog,
            slate_size=args.slate, samples_per_slate=args.samples,
            replications=args.replications, base_seed=base_seed, prior=prior,
            map_config=map_cfg, mcmc_config=mcmc_cfg, all_positions=args.all_positions)
        for v in config.values:
            N, K, _ = config.cell(v)
            if not 2 <= K <= N:
                raise ValueError(f"slate size {K} invalid for catalog size {N}")
    except ValueError as exc:
        parser.error(str(exc))
    report = run_sweep(config, threads=args.threads, progress=_progress)
    files = {}
    if args.format in (None, "json"):
        files[outdir / f"{args.preset}.json"] = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.format in (None, "csv"):
        files[outdir / f"{args.preset}.csv"] = report.to_csv()
    _write_all(files)
    return 0


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "sample": cmd_sample,
            "eval": cmd_eval, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    try:
        if args.config is not None:
            _load_config(args.config, sub, args)
        _fill_defaults(args)
        level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
        logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args, sub)
    except CliError as exc:
        print(f"slatebayes {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, configparser.Error) as exc:
        print(f"slatebayes {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
