"""Command-line front end: ``bound``, ``posterior``, ``train``, ``verify``, ``report``.

Each subcommand reads an optional JSON run configuration (``--config``),
applies flag overrides (flags win), computes everything in memory and only
then writes its result files plus ``manifest.json`` into ``--out``.

Exit codes: 0 success, 1 certified-claim failure or diverged training,
2 invalid input (an ``{"error": {...}}`` object on stderr, no files written).

Environment defaults (read through python-dotenv): ``PACBAYES_OUT_DIR``,
``PACBAYES_JOBS``, ``PACBAYES_SEED``.
"""

import argparse
import inspect
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import BoundKind, BoundReport, compute_bound, get_bound_calculator
from pacbayes_toolkit.hypothesis_spaces import SampleSet, empirical_losses, loss_table
from pacbayes_toolkit.loader import load_extensions
from pacbayes_toolkit.models import dataset_from_dict, dataset_to_dict, separable_toy_dataset
from pacbayes_toolkit.posteriors import (
    DropoutPosterior,
    GaussianShiftPosterior,
    gibbs_algorithm,
    gibbs_from_losses,
    posterior_to_dict,
    select_lambda,
)
from pacbayes_toolkit.resampling import catoni_chain_experiment, estimate_mean_posterior, train_var_experiment
from pacbayes_toolkit.results import (
    load_bound_reports,
    read_csv,
    read_json,
    write_bound_reports,
    write_csv,
    write_json,
    write_manifest,
)
from pacbayes_toolkit.rng import stream
from pacbayes_toolkit.training import TrainConfig, TrainingDivergedError, sgd_minimize_bound
from pacbayes_toolkit.validity import TrialParams, ValidityReport, list_validity_trials, run_validity_experiment
from pacbayes_toolkit.worlds import draw_sample, load_world, random_world, rare_outlier_world, world_from_dict

logger = logging.getLogger(__name__)

COMMANDS = ("bound", "posterior", "train", "verify", "report")
STOCHASTIC_COMMANDS = {"train", "verify"}
RESAMPLING_KINDS = ("catoni_chain", "train_var")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    """The run configuration is malformed or incomplete."""


@dataclass
class RunConfig:
    command: str
    out_dir: str
    seed: int | None = None
    jobs: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"No command named '{self.command}'")
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ConfigError(f"'{self.command}' is stochastic and needs a seed (--seed or PACBAYES_SEED)")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "params": self.params}


def _env_int(name: str) -> int | None:
    value = os.getenv(name)
    if value in (None, ""):
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < environment < config file < flags."""
    params: dict = {}
    if args.config:
        try:
            with open(args.config) as f:
                params = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {args.config} is not valid JSON: {e}") from None
        if not isinstance(params, dict):
            raise ConfigError("config file must hold a JSON object")

    def pick(flag, key, env):
        from_file = params.pop(key, None)
        if flag is not None:
            return flag
        return from_file if from_file is not None else env

    seed = pick(args.seed, "seed", _env_int("PACBAYES_SEED"))
    jobs = pick(args.jobs, "jobs", _env_int("PACBAYES_JOBS") or cfg.DEFAULT_JOBS)
    out_dir = pick(args.out, "out", os.getenv("PACBAYES_OUT_DIR") or cfg.RESULTS_DIR)

    for flag, key in (("delta", "delta"), ("lambda_", "lambda"), ("alpha", "alpha"), ("trials", "trials")):
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = value
    return RunConfig(command=args.command, out_dir=out_dir, seed=seed, jobs=jobs, params=params)


def _require(params: dict, key: str):
    if key not in params:
        raise ConfigError(f"missing required config key '{key}'")
    return params[key]


def _lambda(params: dict) -> float | None:
    value = params.get("lambda", params.get("lambda_"))
    return None if value is None else float(value)


# ── World and dataset inputs ─────────────────────────────────────────────

def _load_world_spec(params: dict, seed: int | None):
    """A world from ``world`` (path or inline dict) or a generator block."""
    if "world" in params:
        source = params["world"]
        if isinstance(source, str):
            if not os.path.exists(source):
                raise ConfigError(f"world file not found: {source}")
            return load_world(source)
        return world_from_dict(source)
    if "random_world" in params:
        gen = dict(params["random_world"])
        world_seed = gen.pop("seed", seed)
        if world_seed is None:
            raise ConfigError("random_world needs a seed")
        return random_world(stream(world_seed, "world"), seed=world_seed, **gen)
    if "rare_outlier_world" in params:
        gen = dict(params["rare_outlier_world"])
        world_seed = gen.pop("seed", seed)
        if world_seed is None:
            raise ConfigError("rare_outlier_world needs a seed")
        return rare_outlier_world(stream(world_seed, "world"), seed=world_seed, **gen)
    raise ConfigError("config needs one of 'world', 'random_world' or 'rare_outlier_world'")


def _load_sample(params: dict, world, seed: int | None) -> SampleSet:
    if "sample" in params:
        idx = [int(s) for s in params["sample"]]
        if any(not 0 <= s < world.n_situations for s in idx):
            raise ConfigError("sample holds situation indices outside the world")
        return SampleSet(idx)
    n = int(_require(params, "n"))
    if seed is None:
        raise ConfigError("drawing a sample needs a seed")
    return draw_sample(world, n, stream(seed, "sample"))


def _load_dataset(params: dict, seed: int):
    if "dataset" in params:
        source = params["dataset"]
        if isinstance(source, str):
            if not os.path.exists(source):
                raise ConfigError(f"dataset file not found: {source}")
            source = read_json(source)
        return dataset_from_dict(source)
    if "toy" in params:
        toy = dict(params["toy"])
        data = separable_toy_dataset(int(toy.get("n", 200)), stream(seed, "toy"), float(toy.get("margin", 0.2)))
        model = toy.get("model", "binary")
        if model not in ("binary", "multiclass"):
            raise KeyError(f"No toy model named '{model}'")
        labels = (-1, 1) if model == "multiclass" else None
        return dataset_from_dict(dataset_to_dict(data, labels, float(toy.get("beta", 1.0))))
    raise ConfigError("config needs 'dataset' (path or inline) or 'toy'")


# ── bound ────────────────────────────────────────────────────────────────

def _direct_bound(kind: str, params: dict) -> BoundReport:
    inputs = dict(params.get("inputs", {}))
    if "lambda" in inputs:
        inputs["lambda_"] = inputs.pop("lambda")
    if kind in ("l2", "dropout"):
        theta = np.asarray(_require(inputs, "theta"), dtype=float)
        inputs.pop("theta")
        alpha = inputs.pop("alpha", params.get("alpha"))
        if kind == "dropout":
            if alpha is None:
                raise ConfigError("the dropout bound needs alpha")
            inputs["posterior"] = DropoutPosterior(float(alpha), theta)
        else:
            inputs["posterior"] = GaussianShiftPosterior(theta)

    signature = inspect.signature(get_bound_calculator(kind))
    for key, override in (("delta", params.get("delta")), ("lambda_", _lambda(params))):
        if override is not None and key in signature.parameters:
            inputs[key] = override
    try:
        signature.bind(**inputs)
    except TypeError as e:
        raise ConfigError(f"bad inputs for bound '{kind}': {e}") from None
    return compute_bound(kind, **inputs)


def _world_bounds(kind: str, params: dict, seed: int | None) -> list[BoundReport]:
    """Bounds evaluated on a (world, sample) pair."""
    world, space, loss = _load_world_spec(params, seed)
    sample = _load_sample(params, world, seed)
    table = loss_table(loss, space, world)
    l_hat = empirical_losses(table, sample)
    delta = float(params.get("delta", 0.05))
    n = sample.n

    if kind in ("pac_bayes", "catoni_hc"):
        lam = _lambda(params)
        if lam is None:
            raise ConfigError(f"bound '{kind}' needs lambda")
        q = gibbs_from_losses(space, l_hat, n, lam, loss.l_max)
        if kind == "pac_bayes":
            return [compute_bound(kind, l_hat_q=float(q.weights @ l_hat), kl_nats=q.kl(), n=n,
                                  delta=delta, l_max=loss.l_max, lambda_=lam)]
        return [compute_bound(kind, l_hat_q=float(q.weights @ l_hat), n=n, delta=delta,
                              l_max=loss.l_max, lambda_=lam)]
    if kind == "pac_bayes_grid":
        _, _, report = select_lambda(params.get("grid", cfg.DEFAULT_LAMBDA_GRID), sample, space, loss, delta)
        return [report]

    hypotheses = params.get("hypotheses", range(len(space)))
    prior_nats = space.prior_nats()
    reports = []
    for h in hypotheses:
        if kind == "occam":
            reports.append(compute_bound(kind, l_hat=float(l_hat[h]), prior_nats=float(prior_nats[h]),
                                         n=n, delta=delta, l_max=loss.l_max))
        elif kind in ("bernstein_union", "zero_variance"):
            rows = table[h, sample.indices()]
            if kind == "zero_variance" and np.ptp(rows) > 0:
                continue
            if kind == "zero_variance":
                reports.append(compute_bound(kind, l_hat=float(l_hat[h]), prior_nats=float(prior_nats[h]),
                                             n=n, delta=delta, l_max=loss.l_max))
            else:
                reports.append(compute_bound(kind, mu_hat=float(l_hat[h]), sigma2_hat=float(rows.var(ddof=1)),
                                             prior_nats=float(prior_nats[h]), n=n, delta=delta,
                                             l_max=loss.l_max))
        else:
            raise ConfigError(f"bound '{kind}' cannot be evaluated on a world; give 'inputs' instead")
    return reports


def cmd_bound(run: RunConfig) -> tuple[int, dict]:
    kind = _require(run.params, "kind")
    if "inputs" in run.params:
        reports = [_direct_bound(kind, run.params)]
    else:
        reports = _world_bounds(kind, run.params, run.seed)
    for r in reports:
        if r.vacuous:
            logger.warning(f"{BoundKind(r.kind).value} bound {r.value:.6g} exceeds l_max {r.l_max:g} (vacuous)")
    return EXIT_OK, {"bound_reports": reports}


# ── posterior ────────────────────────────────────────────────────────────

def cmd_posterior(run: RunConfig) -> tuple[int, dict]:
    params = run.params
    world, space, loss = _load_world_spec(params, run.seed)
    sample = _load_sample(params, world, run.seed)
    delta = float(params.get("delta", 0.05))
    l_hat = empirical_losses(loss_table(loss, space, world), sample)

    lam = _lambda(params)
    if lam is None:
        lam, posterior, report = select_lambda(params.get("grid", cfg.DEFAULT_LAMBDA_GRID), sample, space, loss, delta)
    else:
        posterior = gibbs_from_losses(space, l_hat, sample.n, lam, loss.l_max)
        report = compute_bound("pac_bayes", l_hat_q=float(posterior.weights @ l_hat), kl_nats=posterior.kl(),
                               n=sample.n, delta=delta, l_max=loss.l_max, lambda_=lam)
    posterior.provenance.update({"n": sample.n, "sample": list(sample.situations), "l_max": loss.l_max})
    logger.info(f"Gibbs posterior at lambda={lam:g}: bound {report.value:.6g}")
    return EXIT_OK, {"posterior": posterior, "bound_reports": [report]}


# ── train ────────────────────────────────────────────────────────────────

def cmd_train(run: RunConfig) -> tuple[int, dict]:
    params = run.params
    data, model = _load_dataset(params, run.seed)
    block = dict(params.get("training", {}))
    for key in ("lambda", "alpha", "delta"):
        if key in params:
            block[key] = params[key]
    block["seed"] = run.seed
    config = TrainConfig.from_dict(block)
    try:
        theta, trace, report = sgd_minimize_bound(data, model, config)
    except TrainingDivergedError as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_FAILURE, {"failure": e.to_dict()}
    if report.vacuous:
        logger.warning(f"Trained bound {report.value:.6g} is vacuous (l_max {report.l_max:g})")
    return EXIT_OK, {
        "theta": {"theta": theta.tolist(), "training": config.to_dict()},
        "trace": trace.to_frame(),
        "bound_reports": [report],
    }


# ── verify ───────────────────────────────────────────────────────────────

def _experiment_specs(params: dict) -> list[dict]:
    if "experiments" in params:
        specs = [dict(e) for e in params["experiments"]]
    else:
        specs = [{k: params[k] for k in ("kind", "n", "delta", "lambda", "grid", "trials") if k in params}]
    for spec in specs:
        for key in ("delta", "lambda", "trials"):
            if key in params and "experiments" in params:
                spec[key] = params[key]
        _require(spec, "kind")
        _require(spec, "n")
    return specs


def _run_resampling(spec: dict, world, space, loss, seed: int, jobs):
    kind = spec["kind"]
    lam = _lambda(spec)
    if lam is None:
        raise ConfigError(f"experiment '{kind}' needs lambda")
    m = int(spec.get("trials", cfg.DEFAULT_TRIALS))
    rng = stream(seed, "verify", kind)
    if kind == "catoni_chain":
        return catoni_chain_experiment(
            world, space, loss, lam, int(spec["n"]), m, rng, delta=float(spec.get("delta", 0.05)), jobs=jobs
        )
    return train_var_experiment(gibbs_algorithm(space, loss, lam), world, space, loss, lam, int(spec["n"]), m, rng)


def _warn_beyond_desk_scale(space, world, specs: list[dict]) -> None:
    limits = cfg.DESK_SCALE
    sizes = {
        "max_hypotheses": len(space),
        "max_situations": world.n_situations,
        "max_n": max(int(s["n"]) for s in specs),
        "max_trials": max(int(s.get("trials", cfg.DEFAULT_TRIALS)) for s in specs),
    }
    for key, size in sizes.items():
        if size > limits[key]:
            logger.warning(f"{key[4:]} = {size} is beyond desk scale ({limits[key]}); expect a long run")


def cmd_verify(run: RunConfig) -> tuple[int, dict]:
    world, space, loss = _load_world_spec(run.params, run.seed)
    specs = _experiment_specs(run.params)
    known = {name for name, _ in list_validity_trials()}
    for spec in specs:
        if spec["kind"] not in known and spec["kind"] not in RESAMPLING_KINDS:
            raise ConfigError(f"No validity experiment named '{spec['kind']}'")
    _warn_beyond_desk_scale(space, world, specs)

    validity: list[ValidityReport] = []
    resampling = []
    for spec in specs:
        kind = spec["kind"]
        if kind in RESAMPLING_KINDS:
            resampling.append((kind, _run_resampling(spec, world, space, loss, run.seed, run.jobs)))
            continue
        m = int(spec.get("trials", cfg.DEFAULT_TRIALS))
        params = TrialParams(
            n=int(spec["n"]), delta=float(spec.get("delta", 0.05)), lambda_=_lambda(spec), grid=spec.get("grid")
        )
        if kind == "local_hc":
            lam = params.require_lambda()
            params.mean_posterior = estimate_mean_posterior(
                gibbs_algorithm(space, loss, lam), world, params.n, m, stream(run.seed, "verify", "mean_posterior")
            )
        validity.append(run_validity_experiment(kind, world, space, loss, params, m, run.seed, jobs=run.jobs))

    failed = [v.kind for v in validity if v.certified and not v.passed]
    failed += [kind for kind, r in resampling if not r.holds]
    for kind, r in resampling:
        if kind == "catoni_chain":
            validity.extend(r.validity)
    if failed:
        logger.warning(f"Certified claims failed: {', '.join(sorted(set(failed)))}")
    return (EXIT_FAILURE if failed else EXIT_OK), {"validity": validity, "resampling": resampling}


# ── report ───────────────────────────────────────────────────────────────

def summarise(out_dir: str) -> str:
    """Plain-text summary of every report found in a results directory."""
    lines = [f"Results in {out_dir}", ""]
    bound_path = os.path.join(out_dir, cfg.BOUND_REPORT_JSON)
    if os.path.exists(bound_path):
        df = pd.DataFrame([r.to_row() for r in load_bound_reports(bound_path)])
        lines += ["Bound reports", df.to_string(index=False), ""]
    validity_path = os.path.join(out_dir, cfg.VALIDITY_REPORT_JSON)
    if os.path.exists(validity_path):
        reports = [ValidityReport.from_dict(d) for d in read_json(validity_path)]
        df = pd.DataFrame([
            {"kind": r.kind, "n": r.n, "m": r.m, "delta": r.delta, "violations": r.violation_count,
             "upper_limit": r.upper_limit, "certified": r.certified, "passed": r.passed}
            for r in reports
        ])
        lines += ["Validity reports", df.to_string(index=False), ""]
    resampling_path = os.path.join(out_dir, cfg.RESAMPLING_JSON)
    if os.path.exists(resampling_path):
        for entry in read_json(resampling_path):
            checks = ", ".join(f"{c['name']}={'ok' if c['holds'] else 'FAIL'}" for c in entry["report"]["checks"])
            lines.append(f"{entry['kind']} (lambda={entry['report']['lambda']:g}): {checks}")
        lines.append("")
    trace_path = os.path.join(out_dir, cfg.TRACE_CSV)
    if os.path.exists(trace_path):
        trace = read_csv(trace_path)
        last = trace.iloc[-1]
        lines += [f"Training: {len(trace)} checkpoints, final step {int(last['step'])}, bound {last['bound']:.6g}", ""]
    if len(lines) == 2:
        raise ConfigError(f"no reports found in {out_dir}")
    return "\n".join(lines)


def cmd_report(run: RunConfig) -> tuple[int, dict]:
    if not os.path.isdir(run.out_dir):
        raise ConfigError(f"results directory not found: {run.out_dir}")
    return EXIT_OK, {"summary": summarise(run.out_dir)}


# ── Writing ──────────────────────────────────────────────────────────────

def write_outputs(run: RunConfig, outputs: dict) -> list[str]:
    out = run.out_dir
    files: list[str] = []
    if "bound_reports" in outputs:
        files += write_bound_reports(out, outputs["bound_reports"])
    if "posterior" in outputs:
        files.append(write_json(os.path.join(out, cfg.POSTERIOR_JSON), posterior_to_dict(outputs["posterior"])))
    if "theta" in outputs:
        files.append(write_json(os.path.join(out, cfg.THETA_JSON), outputs["theta"]))
    if "trace" in outputs:
        files.append(write_csv(os.path.join(out, cfg.TRACE_CSV), outputs["trace"]))
    if "failure" in outputs:
        files.append(write_json(os.path.join(out, cfg.FAILURE_JSON), outputs["failure"]))
    if outputs.get("validity"):
        reports = outputs["validity"]
        files.append(write_json(os.path.join(out, cfg.VALIDITY_REPORT_JSON), [r.to_dict() for r in reports]))
        frames = [r.trials_frame().assign(kind=r.kind) for r in reports]
        files.append(write_csv(os.path.join(out, cfg.TRIALS_CSV), pd.concat(frames, ignore_index=True)))
    if outputs.get("resampling"):
        files.append(write_json(
            os.path.join(out, cfg.RESAMPLING_JSON),
            [{"kind": kind, "report": r.to_dict()} for kind, r in outputs["resampling"]],
        ))
    if "summary" in outputs:
        path = os.path.join(out, cfg.SUMMARY_TXT)
        with open(path, "w") as f:
            f.write(outputs["summary"] + "\n")
        print(outputs["summary"])
        return [path]
    if files:
        files.append(write_manifest(out, run.to_dict(), {"run": run.seed}, files))
    return files


# ── Entry point ──────────────────────────────────────────────────────────

_HANDLERS = {
    "bound": cmd_bound,
    "posterior": cmd_posterior,
    "train": cmd_train,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="PAC-Bayes toolkit - bounds, posteriors, training and validity runs")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=str, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Run seed (unsigned 64-bit)")
    parser.add_argument("--out", type=str, help="Results directory")
    parser.add_argument("--trials", type=int, help="Trials / resamples per experiment")
    parser.add_argument("--delta", type=float, help="Confidence parameter")
    parser.add_argument("--lambda", dest="lambda_", type=float, help="Fixed lambda (> 1/2)")
    parser.add_argument("--alpha", type=float, help="Dropout rate for training / dropout bounds")
    parser.add_argument("--jobs", type=int, help="Parallel trial workers (default: all cores)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def _usage_error(e: Exception) -> int:
    print(json.dumps({"error": {"type": type(e).__name__, "message": str(e).strip("'\"")}}), file=sys.stderr)
    return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s  %(message)s",
        datefmt="%H:%M:%S",
    )
    load_extensions()

    try:
        run = load_run_config(args)
        code, outputs = _HANDLERS[run.command](run)
    except (ValueError, KeyError) as e:
        return _usage_error(e)

    files = write_outputs(run, outputs)
    if files and run.command != "report":
        logger.info(f"Wrote {len(files)} files to {run.out_dir}")
    return code
