"""Batch front end: dataset files, TOML configs, five subcommands.

Disk formats keep volumes on the natural scale (mm^3); logs are internal.
Every stochastic command requires an explicit seed (config ``[mcmc] seed``
or ``--seed``); given the same config, data and seed the outputs are
byte-identical, for any ``--threads`` value.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from tumorsde import bsl, diagnostics, model
from tumorsde.bsl import BslConfig, run_bsl, summarize_dataset, summary_names
from tumorsde.model import (
    Dataset,
    InverseGamma,
    ModelError,
    Normal,
    ObservationDesign,
    PriorSpec,
    SubjectData,
    Theta,
    TruncatedNormal,
    default_priors,
    default_start,
    simulate_dataset,
)
from tumorsde.pmm import Chain, ChainState, InitializationError, McmcConfig, run_pmm
from tumorsde.smc import SmcConfig

DATASET_HEADER = ["subject_id", "day", "volume_mm3"]

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    exit_code = EXIT_USAGE
    prefix = "usage"


class UsageError(CliError):
    exit_code = EXIT_USAGE
    prefix = "usage"


class DataError(CliError):
    exit_code = EXIT_DATA
    prefix = "data"


class NumericalError(CliError):
    exit_code = EXIT_NUMERICAL
    prefix = "numerical"


def _fmt(value) -> str:
    """17 significant digits: lossless float round trip in the CSVs."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

# config prior keys -> Theta field names
_PRIOR_KEYS = {
    "log_beta_bar": "mean_log_beta",
    "log_delta_bar": "mean_log_delta",
    "alpha_bar": "mean_alpha",
    "gamma": "gamma",
    "tau": "tau",
    "sigma_beta": "sigma_beta",
    "sigma_delta": "sigma_delta",
    "sigma_alpha": "sigma_alpha",
    "sigma_eps": "sigma_eps",
}

# config theta keys (natural scale) -> Theta field names + transform
_NATURAL_KEYS = {
    "beta_bar": ("mean_log_beta", math.log),
    "delta_bar": ("mean_log_delta", math.log),
    "alpha_bar": ("mean_alpha", float),
    "gamma": ("gamma", float),
    "tau": ("tau", float),
    "sigma_beta": ("sigma_beta", float),
    "sigma_delta": ("sigma_delta", float),
    "sigma_alpha": ("sigma_alpha", float),
    "sigma_eps": ("sigma_eps", float),
}


@dataclass
class RunConfig:
    """Parsed and validated configuration for the subcommands."""

    model_kind: str = model.TWO_COMPARTMENT
    theta0: Optional[Theta] = None
    design: Optional[ObservationDesign] = None
    priors: PriorSpec = None
    smc: SmcConfig = field(default_factory=SmcConfig)
    bsl_simulations: int = 3000
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    seed: Optional[int] = None
    study_methods: tuple[str, ...] = ("pmm", "bsl")
    study_replicates: int = 30
    ppc_thin: int = 10

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("a seed is required: set [mcmc] seed or pass --seed")
        return self.seed

    def require_design(self) -> ObservationDesign:
        if self.design is None:
            raise UsageError("this command needs a [design] section in the config")
        return self.design

    def require_theta0(self) -> Theta:
        if self.theta0 is None:
            raise UsageError("this command needs a [theta] section in the config")
        return self.theta0


def _theta_from_natural(model_kind: str, table: dict, context: str) -> Theta:
    values = {}
    for key, raw in table.items():
        if key not in _NATURAL_KEYS:
            raise UsageError(f"unknown parameter {key!r} in [{context}]")
        name, transform = _NATURAL_KEYS[key]
        try:
            values[name] = transform(float(raw))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key!r} in [{context}]: {raw!r}") from exc
    try:
        return Theta.from_fields(model_kind, values)
    except ModelError as exc:
        raise UsageError(f"invalid [{context}]: {exc}") from exc


def _prior_from_table(key: str, table: dict) -> object:
    kind = table.get("dist")
    try:
        if kind == "normal":
            return Normal(float(table["mean"]), float(table["sd"]))
        if kind == "truncated_normal":
            return TruncatedNormal(float(table["mean"]), float(table["sd"]),
                                   float(table["lower"]), float(table["upper"]))
        if kind == "inverse_gamma":
            return InverseGamma(float(table["shape"]), float(table["scale"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed prior for {key!r}: {table!r}") from exc
    raise UsageError(f"unknown prior dist {kind!r} for {key!r}")


def _design_from_table(table: dict) -> ObservationDesign:
    if "times" not in table:
        raise UsageError("[design] needs a times entry")
    times = table["times"]
    if times and isinstance(times[0], (list, tuple)):
        per_subject = [np.asarray(t, dtype=float) for t in times]
    else:
        count = table.get("subject_count")
        if count is None:
            raise UsageError("[design] with shared times needs subject_count")
        per_subject = [np.asarray(times, dtype=float) for _ in range(int(count))]
    m = len(per_subject)
    v0 = np.broadcast_to(np.asarray(table.get("v0", 50.0), dtype=float), (m,)).copy()
    threshold = table.get("sacrifice_threshold")
    try:
        return ObservationDesign(m, per_subject, v0,
                                 None if threshold is None else float(threshold))
    except ModelError as exc:
        raise UsageError(f"invalid [design]: {exc}") from exc


def load_config(path, overrides: Optional[argparse.Namespace] = None) -> RunConfig:
    """Read a TOML config and apply command-line overrides."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc

    config = RunConfig()
    config.model_kind = raw.get("model_kind", model.TWO_COMPARTMENT)
    if config.model_kind not in (model.ONE_COMPARTMENT, model.TWO_COMPARTMENT):
        raise UsageError(f"unknown model_kind {config.model_kind!r}")

    if "theta" in raw:
        config.theta0 = _theta_from_natural(config.model_kind, raw["theta"], "theta")
    if "design" in raw:
        config.design = _design_from_table(raw["design"])

    priors = default_priors(config.model_kind)
    if "priors" in raw:
        updates = {}
        for key, table in raw["priors"].items():
            if key not in _PRIOR_KEYS:
                raise UsageError(f"unknown prior key {key!r}")
            name = _PRIOR_KEYS[key]
            if name not in model.param_names(config.model_kind):
                raise UsageError(f"prior {key!r} does not apply to {config.model_kind}")
            updates[name] = _prior_from_table(key, table)
        priors = priors.replace(**updates)
    config.priors = priors

    smc_raw = raw.get("smc", {})
    try:
        config.smc = SmcConfig(
            particles=int(smc_raw.get("particles", 2000)),
            first_stage_particles=int(smc_raw.get("first_stage_particles", 5)),
            filter_kind=smc_raw.get("filter", "auxiliary"),
        )
    except ModelError as exc:
        raise UsageError(f"invalid [smc]: {exc}") from exc

    config.bsl_simulations = int(raw.get("bsl", {}).get("simulations", 3000))
    if config.bsl_simulations < 2:
        raise UsageError("[bsl] simulations must be >= 2")

    mcmc_raw = raw.get("mcmc", {})
    start = None
    if "start" in mcmc_raw:
        start = _theta_from_natural(config.model_kind, mcmc_raw["start"], "mcmc.start")
    try:
        config.mcmc = McmcConfig(
            iterations=int(mcmc_raw.get("iterations", 20000)),
            burnin=int(mcmc_raw.get("burnin", 10000)),
            adapt_start=int(mcmc_raw.get("adapt_start", 500)),
            adapt_scale=mcmc_raw.get("adapt_scale"),
            jitter=float(mcmc_raw.get("jitter", 1e-6)),
            initial_theta=start,
            initial_proposal_sd=float(mcmc_raw.get("initial_proposal_sd", 0.05)),
        )
    except ModelError as exc:
        raise UsageError(f"invalid [mcmc]: {exc}") from exc
    if "seed" in mcmc_raw:
        config.seed = int(mcmc_raw["seed"])

    study_raw = raw.get("study", {})
    methods = tuple(study_raw.get("methods", ["pmm", "bsl"]))
    for method in methods:
        if method not in ("pmm", "bsl"):
            raise UsageError(f"unknown study method {method!r}")
    config.study_methods = methods
    config.study_replicates = int(study_raw.get("replicates", 30))
    config.ppc_thin = int(raw.get("ppc", {}).get("thin", 10))
    if config.ppc_thin < 1:
        raise UsageError("[ppc] thin must be >= 1")

    if overrides is not None:
        _apply_overrides(config, overrides)
    return config


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        config.smc = SmcConfig(
            particles=config.smc.particles,
            first_stage_particles=config.smc.first_stage_particles,
            filter_kind=config.smc.filter_kind,
            threads=args.threads,
        )
    if getattr(args, "burnin", None) is not None:
        if not 0 <= args.burnin < config.mcmc.iterations:
            raise UsageError("--burnin must lie in [0, iterations)")
        config.mcmc = McmcConfig(
            iterations=config.mcmc.iterations, burnin=args.burnin,
            adapt_start=config.mcmc.adapt_start, adapt_scale=config.mcmc.adapt_scale,
            jitter=config.mcmc.jitter, initial_theta=config.mcmc.initial_theta,
            initial_proposal_sd=config.mcmc.initial_proposal_sd,
            init_retries=config.mcmc.init_retries,
        )
    if getattr(args, "replicates", None) is not None:
        if args.replicates < 1:
            raise UsageError("--replicates must be >= 1")
        config.study_replicates = args.replicates


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

def parse_dataset_csv(path) -> Dataset:
    """Read a ``subject_id,day,volume_mm3`` file into a Dataset.

    Rows may arrive in any order; they are sorted by (subject_id, day).
    The log volumes become the observations and each subject's first volume
    becomes its known initial volume.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != DATASET_HEADER:
            raise DataError(
                f"{path}: header must be exactly {','.join(DATASET_HEADER)}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 columns")
            subject_id, day_s, volume_s = row
            try:
                day = float(day_s)
                volume = float(volume_s)
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric day or volume") from None
            if not volume > 0:
                raise DataError(f"{path}:{line_no}: nonpositive volume {volume_s}")
            if not np.isfinite(day):
                raise DataError(f"{path}:{line_no}: non-finite day")
            rows.append((subject_id, day, volume, line_no))

    rows.sort(key=lambda r: (r[0], r[1]))
    by_subject: dict[str, list] = {}
    for subject_id, day, volume, line_no in rows:
        entries = by_subject.setdefault(subject_id, [])
        if entries and entries[-1][0] == day:
            raise DataError(
                f"{path}:{line_no}: duplicate day {day:g} for subject {subject_id}")
        entries.append((day, volume))

    subjects = []
    times_list = []
    v0 = []
    for subject_id in sorted(by_subject):
        entries = by_subject[subject_id]
        if len(entries) < 2:
            raise DataError(f"{path}: subject {subject_id} has fewer than 2 rows")
        days = np.array([e[0] for e in entries])
        volumes = np.array([e[1] for e in entries])
        try:
            subjects.append(SubjectData(subject_id=subject_id, times=days,
                                        y=np.log(volumes)))
        except ModelError as exc:
            raise DataError(f"{path}: subject {subject_id}: {exc}") from exc
        times_list.append(days)
        v0.append(volumes[0])
    design = ObservationDesign(len(subjects), times_list, np.array(v0))
    return Dataset(tuple(subjects), design)


def write_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(DATASET_HEADER)
        for subject in dataset.subjects:
            for day, y in zip(subject.times, subject.y):
                writer.writerow([subject.subject_id, _fmt(day), _fmt(math.exp(y))])


# ---------------------------------------------------------------------------
# Chain CSV
# ---------------------------------------------------------------------------

def write_chain_csv(chain: Chain, path) -> None:
    names = chain.param_names()
    constrained = chain.constrained_draws()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", *names, "log_lik_est", "accepted"])
        for i, state in enumerate(chain.states, start=1):
            writer.writerow([i, *(_fmt(v) for v in constrained[i - 1]),
                             _fmt(state.log_lik_estimate),
                             _fmt(state.accepted)])


def read_chain_csv(path, model_kind: str) -> Chain:
    """Rebuild a Chain from disk (constrained columns -> log scale)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"chain file not found: {path}")
    expected = ["iter", *model.report_names(model_kind), "log_lik_est", "accepted"]
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != expected:
            raise DataError(f"{path}: chain header does not match {model_kind}")
        n_params = len(expected) - 3
        states = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                constrained = np.array([float(v) for v in row[1:1 + n_params]])
                log_lik = float(row[1 + n_params])
                accepted = row[2 + n_params] == "1"
            except (ValueError, IndexError):
                raise DataError(f"{path}:{line_no}: malformed chain row") from None
            if np.any(constrained <= 0):
                raise DataError(f"{path}:{line_no}: nonpositive parameter value")
            states.append(ChainState(theta_unconstrained=np.log(constrained),
                                     log_prior=math.nan,
                                     log_lik_estimate=log_lik,
                                     accepted=accepted))
    if not states:
        raise DataError(f"{path}: no chain rows")
    flags = np.array([s.accepted for s in states])
    config = McmcConfig(iterations=len(states), burnin=0)
    return Chain(states=tuple(states), acceptance_rate=float(flags.mean()),
                 config=config, model_kind=model_kind)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    config = load_config(args.config, args)
    theta = config.require_theta0()
    design = config.require_design()
    seed = config.require_seed()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    try:
        dataset = simulate_dataset(theta, design, rng)
    except ModelError as exc:
        raise DataError(str(exc)) from exc
    write_dataset_csv(dataset, args.out)
    print(f"wrote {dataset.n_subjects} subjects to {args.out}")
    return 0


def _run_fit(args, method: str) -> int:
    config = load_config(args.config, args)
    dataset = parse_dataset_csv(args.data)
    seed = config.require_seed()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    try:
        if method == "pmm":
            chain = run_pmm(dataset, config.priors, config.smc, config.mcmc,
                            rng, seed=seed)
        else:
            chain = run_bsl(dataset, config.priors,
                            BslConfig(simulations=config.bsl_simulations),
                            config.mcmc, rng, seed=seed)
    except InitializationError as exc:
        raise NumericalError(str(exc)) from exc
    except (bsl.SummaryError, ModelError) as exc:
        raise DataError(str(exc)) from exc
    write_chain_csv(chain, args.out)
    print(f"{method}: {len(chain)} iterations, acceptance rate "
          f"{chain.acceptance_rate:.3f}, chain written to {args.out}")
    return 0


def _cmd_fit_pmm(args) -> int:
    return _run_fit(args, "pmm")


def _cmd_fit_bsl(args) -> int:
    return _run_fit(args, "bsl")


def _cmd_diagnose(args) -> int:
    config = load_config(args.config, args)
    chains = [read_chain_csv(path, config.model_kind) for path in args.chains]
    lengths = {len(c) for c in chains}
    if len(lengths) != 1:
        raise DataError("all chains must have equal length for the scale "
                        "reduction factor")
    burnin = config.mcmc.burnin
    if burnin >= len(chains[0]):
        raise UsageError(f"burnin {burnin} leaves no draws "
                         f"(chain length {len(chains[0])})")
    names = model.report_names(config.model_kind)
    summaries = [diagnostics.chain_summary(c, burnin) for c in chains]
    rhat = np.full(len(names), math.nan)
    if len(chains) >= 2:
        stacked = np.stack([c.unconstrained_draws()[burnin:] for c in chains])
        rhat = np.atleast_1d(diagnostics.gelman_rubin(stacked))
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["param", "chain", "mean", "q025", "q975",
                        "acceptance_rate", "rhat"])
        for label, summary in zip(args.chains, summaries):
            for k, name in enumerate(names):
                writer.writerow([name, Path(label).name,
                                 _fmt(summary.means[k]), _fmt(summary.lower[k]),
                                 _fmt(summary.upper[k]),
                                 _fmt(summary.acceptance_rate), ""])
        for k, name in enumerate(names):
            writer.writerow([name, "all", "", "", "", "", _fmt(rhat[k])])
    flagged = [names[k] for k in range(len(names))
               if np.isfinite(rhat[k]) and rhat[k] > 1.1]
    if flagged:
        print(f"warning: scale reduction above 1.1 for: {', '.join(flagged)}")
    print(f"diagnostics written to {args.out}")
    return 0


def _cmd_ppc(args) -> int:
    config = load_config(args.config, args)
    dataset = parse_dataset_csv(args.data)
    chain = read_chain_csv(args.chain, config.model_kind)
    seed = config.require_seed()
    burnin = config.mcmc.burnin
    if burnin >= len(chain):
        raise UsageError(f"burnin {burnin} leaves no draws "
                         f"(chain length {len(chain)})")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    try:
        draws, s_obs = diagnostics.posterior_predictive_draws(
            chain, dataset, BslConfig(simulations=config.bsl_simulations), rng,
            burnin=burnin, thin=config.ppc_thin)
    except (bsl.SummaryError, ModelError) as exc:
        raise DataError(str(exc)) from exc
    names = summary_names(dataset, config.model_kind)
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["kind", "draw", *names])
        writer.writerow(["observed", 0, *(_fmt(v) for v in s_obs)])
        for i, row in enumerate(draws, start=1):
            writer.writerow(["draw", i, *(_fmt(v) for v in row)])
    print(f"{len(draws)} posterior predictive rows written to {args.out}")
    return 0


def _fit_in_memory(dataset: Dataset, config: RunConfig, method: str, rng) -> Chain:
    if method == "pmm":
        return run_pmm(dataset, config.priors, config.smc, config.mcmc, rng)
    return run_bsl(dataset, config.priors,
                   BslConfig(simulations=config.bsl_simulations),
                   config.mcmc, rng)


def _cmd_sim_study(args) -> int:
    config = load_config(args.config, args)
    theta0 = config.require_theta0()
    design = config.require_design()
    seed = config.require_seed()
    names = model.report_names(config.model_kind)
    truth = np.exp(model.reparameterize(theta0))

    replicates = config.study_replicates
    results = {method: np.empty((replicates, len(names)))
               for method in config.study_methods}
    for b in range(replicates):
        data_rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(0, b)))
        try:
            dataset = simulate_dataset(theta0, design, data_rng)
        except ModelError as exc:
            raise DataError(f"replicate {b + 1}: {exc}") from exc
        for m, method in enumerate(config.study_methods):
            fit_rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(1 + m, b)))
            try:
                chain = _fit_in_memory(dataset, config, method, fit_rng)
            except InitializationError as exc:
                raise NumericalError(f"replicate {b + 1} ({method}): {exc}") from exc
            summary = diagnostics.chain_summary(chain, config.mcmc.burnin)
            results[method][b] = summary.means
            print(f"replicate {b + 1}/{replicates} {method}: acceptance "
                  f"{chain.acceptance_rate:.3f}")

    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "record", *names])
        writer.writerow(["truth", "theta0", *(_fmt(v) for v in truth)])
        for method in config.study_methods:
            means = results[method]
            for b in range(replicates):
                writer.writerow([method, f"replicate_{b + 1}",
                                 *(_fmt(v) for v in means[b])])
            bias = np.median(means - truth, axis=0)
            rmse = np.sqrt(np.mean((means - truth) ** 2, axis=0))
            writer.writerow([method, "median_bias", *(_fmt(v) for v in bias)])
            writer.writerow([method, "rmse", *(_fmt(v) for v in rmse)])
    print(f"simulation study written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tumorsde",
        description="Bayesian inference for SDE mixed-effects tumor growth models")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=False, chain=False, chains=False):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int,
                       help="subject-level threads (identical output for all values)")
        p.add_argument("--burnin", type=int, help="override the config burnin")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV")
        if chain:
            p.add_argument("--chain", required=True, help="chain CSV")
        if chains:
            p.add_argument("--chains", required=True, nargs="+",
                           help="two or more chain CSVs")

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV")
    add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit-pmm", help="particle-marginal MCMC fit")
    add_common(p, data=True)
    p.set_defaults(func=_cmd_fit_pmm)

    p = sub.add_parser("fit-bsl", help="Bayesian synthetic likelihood fit")
    add_common(p, data=True)
    p.set_defaults(func=_cmd_fit_bsl)

    p = sub.add_parser("diagnose", help="scale reduction and chain summaries")
    add_common(p, chains=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("ppc", help="posterior predictive summary draws")
    add_common(p, data=True, chain=True)
    p.set_defaults(func=_cmd_ppc)

    p = sub.add_parser("sim-study", help="repeated simulate-fit bias/RMSE study")
    add_common(p)
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.set_defaults(func=_cmd_sim_study)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.prefix}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ModelError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
