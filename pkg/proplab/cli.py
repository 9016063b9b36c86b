"""Command-line interface: generate, fit, predict, evaluate, simulate, replicate-figures."""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from .eventlog import load_event_log, save_event_log, write_atomic
from .evaluation import (
    BaselineKind,
    BaselinePredictor,
    ModelPredictor,
    SweepConfig,
    feedback_response_curve,
    predict_next,
    training_fraction_sweep,
    write_response_curve,
)
from .exceptions import ProplabArgumentException, ProplabException, ProplabInputException
from .feedback import PoissonFeedback, ReplyNormalizer
from .hdp import DEFAULT_GAMMA, HdpParams, stick_breaking
from .inference import FitConfig, FitResult, Q0Treatment, fit
from .model import LearningParams, ModelParams, RewardFunction
from .simulation import (
    SimConfig,
    aggregate_runs,
    run_repetitions,
    write_aggregates,
    write_trajectories,
)
from .synthetic import generate_synthetic_log
from .version import __version__

_LOGGER = logging.getLogger(__name__)

SEED_ENV = "PROPLAB_SEED"
DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class RunManifest:
    """Everything needed to rerun a command and get the same bytes out."""

    command: str
    argv: List[str]
    config: Dict[str, object] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    version: str = __version__
    outputs: List[str] = field(default_factory=list)

    def add_input(self, path: str):
        self.inputs[path] = file_sha256(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "seeds": dict(sorted(self.seeds.items())),
            "version": self.version,
            "outputs": list(self.outputs),
        }

    def write(self, path: str):
        write_atomic(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def manifest_path(output: str) -> str:
    return output + ".manifest.json"


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def resolve_seed(seed: Optional[int], default: int = 0) -> int:
    """Explicit seed, else the PROPLAB_SEED environment variable, else default."""
    if seed is not None:
        return seed
    value = os.environ.get(SEED_ENV)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError as ex:
        raise ProplabArgumentException(f"{SEED_ENV} must be an integer, got {value!r}") from ex


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as ex:
        raise ProplabInputException(f"{path}: not a JSON document: {ex}") from ex
    except OSError as ex:
        raise ProplabInputException(f"Cannot read {path}: {ex}") from ex


def _load_log(path: str):
    try:
        return load_event_log(path)
    except OSError as ex:
        raise ProplabInputException(f"Cannot read {path}: {ex}") from ex


def _load_fit(path: str) -> FitResult:
    try:
        return FitResult.load(path)
    except OSError as ex:
        raise ProplabInputException(f"Cannot read {path}: {ex}") from ex


def _emit(text: str, output: Optional[str]):
    if output:
        write_atomic(output, text)
    else:
        sys.stdout.write(text)


def _finish(manifest: RunManifest, output: Optional[str]):
    if output:
        manifest.outputs.append(output)
        manifest.write(manifest_path(output))


def cmd_generate(args, argv) -> int:
    seed = resolve_seed(args.seed)
    if args.params:
        params = ModelParams.from_dict(_read_json(args.params))
    else:
        params = ModelParams(
            hdp=HdpParams(
                alpha0=args.alpha0,
                popularity=stick_breaking(args.gamma, args.communities, rng_seed=seed),
            ),
            learning=LearningParams(phi=args.phi, epsilon=args.epsilon),
            reward=RewardFunction(
                w_replies=args.w_replies, w_votes=args.w_votes, w_intercept=args.w_intercept
            ),
        )
    feedback = PoissonFeedback(
        reply_rate=args.reply_rate, vote_mean=args.vote_mean, vote_sd=args.vote_sd
    )
    normalizer = ReplyNormalizer(cap=args.reply_cap)
    log = generate_synthetic_log(
        params, args.users, args.actions, feedback, rng_seed=seed, normalizer=normalizer
    )
    save_event_log(log, args.output)

    manifest = RunManifest(
        command="generate",
        argv=argv,
        config={
            "params": params.to_dict(),
            "feedback_model": feedback.to_dict(),
            "users": args.users,
            "actions": args.actions,
            "reply_cap": normalizer.cap,
        },
        seeds={"rng_seed": seed},
    )
    if args.params:
        manifest.add_input(args.params)
    _finish(manifest, args.output)
    return 0


def _fit_config(args) -> FitConfig:
    payload = _read_json(args.config) if args.config else {}
    if args.samples is not None:
        payload["n_samples"] = args.samples
    n_samples = payload.get("n_samples", FitConfig.n_samples)
    if args.burn_in is not None:
        payload["burn_in"] = args.burn_in
    elif "burn_in" not in payload:
        payload["burn_in"] = n_samples // 4
    payload["rng_seed"] = resolve_seed(args.seed, payload.get("rng_seed", 0))
    if args.q0:
        payload["q0_treatment"] = args.q0
    if args.fix:
        payload["fixed"] = sorted(set(payload.get("fixed", ())) | set(args.fix))
    if args.jobs is not None:
        payload["n_jobs"] = args.jobs
    if args.reply_cap is not None:
        payload["reply_cap"] = args.reply_cap
    try:
        return FitConfig.from_dict(payload)
    except TypeError as ex:
        raise ProplabInputException(f"Invalid fit configuration: {ex}") from ex


def cmd_fit(args, argv) -> int:
    log = _load_log(args.log)
    cfg = _fit_config(args)
    result = fit(log, cfg)
    result.save(args.output)

    manifest = RunManifest(
        command="fit", argv=argv, config=cfg.to_dict(), seeds={"rng_seed": cfg.rng_seed}
    )
    manifest.add_input(args.log)
    if args.config:
        manifest.add_input(args.config)
    _finish(manifest, args.output)
    return 0


def cmd_predict(args, argv) -> int:
    log = _load_log(args.log)
    result = _load_fit(args.fit)
    history = log.history(args.user)
    if not history:
        _LOGGER.warning("User %r has no actions in %s; using the prior", args.user, args.log)
    dist = predict_next(result, history, user=args.user)
    payload = {"user": args.user, "n_actions": len(history), "distribution": dist.as_dict()}
    _emit(json.dumps(payload, indent=2) + "\n", args.output)

    manifest = RunManifest(command="predict", argv=argv, config={"user": args.user})
    manifest.add_input(args.log)
    manifest.add_input(args.fit)
    _finish(manifest, args.output)
    return 0


def _refit_config(result: FitResult, samples: Optional[int]) -> FitConfig:
    if samples is None:
        return result.config
    return replace(result.config, n_samples=samples, burn_in=samples // 4)


def _predictors(args, result: FitResult):
    """
    FullModel plus every baseline. By default the model is refit on each
    training window; --fixed-params keeps the fitted parameters instead.
    """
    if args.fixed_params:
        model = ModelPredictor.from_fit(result)
    else:
        model = ModelPredictor(fit_config=_refit_config(result, args.refit_samples))
    popularity = result.map_params.popularity
    return [model] + [
        BaselinePredictor(
            kind,
            k=args.k,
            smoothing=args.smoothing,
            alpha0=result.map_params.alpha0,
            gamma=popularity.gamma,
        )
        for kind in BaselineKind
    ]


def _sweep_config(args) -> SweepConfig:
    return SweepConfig(
        test_fraction=args.test_fraction,
        min_actions=args.min_actions,
        window=args.window,
        online=not args.offline,
    )


def _sweep_settings(args, cfg: SweepConfig) -> dict:
    return {
        "fractions": list(args.fractions),
        "test_fraction": cfg.test_fraction,
        "min_actions": cfg.min_actions,
        "window": cfg.window,
        "online": cfg.online,
        "k": args.k,
        "smoothing": args.smoothing,
        "fixed_params": args.fixed_params,
        "refit_samples": args.refit_samples,
    }


def cmd_evaluate(args, argv) -> int:
    log = _load_log(args.log)
    result = _load_fit(args.fit)
    cfg = _sweep_config(args)
    predictors = _predictors(args, result)
    sweep = training_fraction_sweep(log, args.fractions, predictors, cfg)
    _emit(sweep.to_csv(), args.output)

    manifest = RunManifest(
        command="evaluate",
        argv=argv,
        config=_sweep_settings(args, cfg),
        seeds={"fit_rng_seed": result.config.rng_seed},
    )
    manifest.add_input(args.log)
    manifest.add_input(args.fit)
    _finish(manifest, args.output)
    return 0


def _sim_config(path: str, seed: Optional[int]) -> SimConfig:
    cfg = SimConfig.from_dict(_read_json(path))
    seed = resolve_seed(seed, cfg.rng_seed)
    return SimConfig.from_dict({**cfg.to_dict(), "rng_seed": seed})


def cmd_simulate(args, argv) -> int:
    cfg = _sim_config(args.config, args.seed)
    runs = run_repetitions(cfg, args.runs, n_jobs=args.jobs)
    write_trajectories(runs, args.output)

    manifest = RunManifest(
        command="simulate",
        argv=argv,
        config={**cfg.to_dict(), "runs": args.runs},
        seeds={"rng_seed": cfg.rng_seed},
    )
    manifest.add_input(args.config)
    _finish(manifest, args.output)
    return 0


def cmd_replicate_figures(args, argv) -> int:
    log = _load_log(args.log)
    result = _load_fit(args.fit)
    sim_cfg = _sim_config(args.sim_config, args.seed)
    os.makedirs(args.outdir, exist_ok=True)
    fig1, fig2, fig3 = (os.path.join(args.outdir, f"fig{i}.csv") for i in (1, 2, 3))

    write_response_curve(feedback_response_curve(log, args.buckets), fig1)

    cfg = _sweep_config(args)
    predictors = _predictors(args, result)
    training_fraction_sweep(log, args.fractions, predictors, cfg).write_csv(fig2)

    runs = run_repetitions(sim_cfg, args.runs, n_jobs=args.jobs)
    write_aggregates(aggregate_runs(runs), fig3)

    manifest = RunManifest(
        command="replicate-figures",
        argv=argv,
        config={
            "buckets": list(args.buckets),
            "sweep": _sweep_settings(args, cfg),
            "simulation": {**sim_cfg.to_dict(), "runs": args.runs},
        },
        seeds={"fit_rng_seed": result.config.rng_seed, "sim_rng_seed": sim_cfg.rng_seed},
        outputs=[fig1, fig2, fig3],
    )
    for path in (args.log, args.fit, args.sim_config):
        manifest.add_input(path)
    manifest.write(os.path.join(args.outdir, "replicate-figures.manifest.json"))
    return 0


def _fractions(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from ex


def _buckets(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from ex


def _add_sweep_arguments(parser):
    parser.add_argument("--fractions", type=_fractions, default=list(DEFAULT_FRACTIONS),
                        help="comma-separated training fractions (default 0.2,...,1.0)")
    parser.add_argument("--test-fraction", type=float, default=0.2,
                        help="final share of each user's actions held out")
    parser.add_argument("--min-actions", type=int, default=10)
    parser.add_argument("--window", choices=("earliest", "latest"), default="earliest",
                        help="which end of the pre-test prefix forms the training window")
    parser.add_argument("--offline", action="store_true",
                        help="do not condition on earlier test events")
    parser.add_argument("--k", type=int, default=10, help="window of the KMax baselines")
    parser.add_argument("--smoothing", type=float, default=0.5)
    parser.add_argument("--fixed-params", action="store_true",
                        help="keep the fitted parameters instead of refitting per window")
    parser.add_argument("--refit-samples", type=int,
                        help="sampler iterations per refit (default: the fit's own)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proplab",
        description="Learning-model inference, prediction benchmarks and seeding simulations.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="write a synthetic JSONL event log")
    gen.add_argument("--users", type=int, required=True)
    gen.add_argument("--actions", type=int, required=True, help="actions per user")
    gen.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then 0")
    gen.add_argument("--params", help="ModelParams JSON; overrides the flags below")
    gen.add_argument("--communities", type=int, default=20)
    gen.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    gen.add_argument("--alpha0", type=float, default=2.0)
    gen.add_argument("--phi", type=float, default=0.1)
    gen.add_argument("--epsilon", type=float, default=0.2)
    gen.add_argument("--w-replies", type=float, default=1.0)
    gen.add_argument("--w-votes", type=float, default=0.5)
    gen.add_argument("--w-intercept", type=float, default=0.0)
    gen.add_argument("--reply-rate", type=float, default=0.5)
    gen.add_argument("--vote-mean", type=float, default=1.0)
    gen.add_argument("--vote-sd", type=float, default=1.0)
    gen.add_argument("--reply-cap", type=float, default=1.0,
                     help="reply count that normalizes to 1 in the rewards")
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(handler=cmd_generate)

    fitp = commands.add_parser("fit", help="fit the model to an event log")
    fitp.add_argument("log")
    fitp.add_argument("--samples", type=int)
    fitp.add_argument("--burn-in", type=int, help="default: a quarter of the samples")
    fitp.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then 0")
    fitp.add_argument("--q0", choices=[t.value for t in Q0Treatment])
    fitp.add_argument("--fix", action="append", help="hold a parameter at its initial value")
    fitp.add_argument("--jobs", type=int)
    fitp.add_argument("--reply-cap", type=float,
                      help="reply normalization cap (default: 99th percentile of the log)")
    fitp.add_argument("--config", help="FitConfig JSON")
    fitp.add_argument("-o", "--output", required=True)
    fitp.set_defaults(handler=cmd_fit)

    pred = commands.add_parser("predict", help="predict a user's next community")
    pred.add_argument("log")
    pred.add_argument("fit")
    pred.add_argument("--user", required=True)
    pred.add_argument("-o", "--output")
    pred.set_defaults(handler=cmd_predict)

    ev = commands.add_parser(
        "evaluate",
        help="training-fraction sweep",
        description="Writes CSV columns: fraction, predictor, mean_score, stderr, "
        "n_test_events, n_users, skipped_users, test_set_hash.",
    )
    ev.add_argument("log")
    ev.add_argument("fit")
    _add_sweep_arguments(ev)
    ev.add_argument("-o", "--output")
    ev.set_defaults(handler=cmd_evaluate)

    sim = commands.add_parser(
        "simulate",
        help="run seeding simulations",
        description="Writes CSV columns: run, round, interest, regime.",
    )
    sim.add_argument("config", help="SimConfig JSON")
    sim.add_argument("--runs", type=int, default=1)
    sim.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then the config")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("-o", "--output", required=True)
    sim.set_defaults(handler=cmd_simulate)

    rep = commands.add_parser(
        "replicate-figures",
        help="write fig1.csv, fig2.csv and fig3.csv",
        description="fig1.csv: bucket, lower, upper, n_events, return_rate, "
        "relative_increase. fig2.csv: the evaluate columns. fig3.csv: regime, "
        "count, round, mean_interest.",
    )
    rep.add_argument("log")
    rep.add_argument("fit")
    rep.add_argument("sim_config")
    _add_sweep_arguments(rep)
    rep.add_argument("--buckets", type=_buckets, default=[0, 1, 2, 3, 5],
                     help="reply-count bucket lower bounds")
    rep.add_argument("--runs", type=int, default=200)
    rep.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then the config")
    rep.add_argument("--jobs", type=int, default=1)
    rep.add_argument("--outdir", default=".")
    rep.set_defaults(handler=cmd_replicate_figures)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return ex.code if isinstance(ex.code, int) else 2

    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args, argv)
    except ProplabException as ex:
        _LOGGER.error("%s failed: %s", args.command, ex)
        return 1


def main():
    sys.exit(cli_main())
