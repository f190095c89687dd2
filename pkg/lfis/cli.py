# lfis/cli.py

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import (
    DEFAULT_SEED,
    DEFAULT_TABU_RULE,
    EDA_BETA_START,
    HISTOGRAM_BINS,
    SMC_RESAMPLE_THRESHOLD,
)
from lfis.baselines import anneal, smc_run
from lfis.importance import SweepOrder, lfis_pipeline, lfqgs_select
from lfis.model import build_cube_lattice, build_ising_dense, random_state
from lfis.nfw import nfw_run
from lfis.oracle import EnumerationBudgetError, oracle_record, total_variation
from utils.loaders import (
    load_model,
    model_digest,
    read_json,
    read_jsonl,
    save_model,
    write_json,
    write_jsonl,
)

logger = logging.getLogger(__name__)

METHODS = ("exact", "nfw", "eda", "lfqgs", "lfis", "smc")


# ------------------------------------------------------------
# 1. Configuration
# ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """
    Everything that determines a `run`. Identical configs give identical
    records apart from `elapsed_s`.
    """

    method: str = "lfis"
    model: str | None = None
    betas: list = field(default_factory=lambda: [1.0])
    N: int = 1000
    T: int = 1000
    gamma_min: int | None = None
    gamma_max: int | None = None
    tabu_rule: str = DEFAULT_TABU_RULE
    kernel_betas: list | None = None
    polish_flips: int = 0
    sweep_order: list | None = None
    steps: int = 5000
    beta_start: float = EDA_BETA_START
    resample_threshold: float = SMC_RESAMPLE_THRESHOLD
    moves_per_level: int = 1
    reps: int = 1
    seed: int = DEFAULT_SEED
    threads: int = 1
    bins: int = HISTOGRAM_BINS
    exact_levels: bool = False
    oracle: str | None = None
    oracle_log_z: float | None = None
    out: str | None = None
    csv: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ValueError(f"Unknown method {self.method!r}; expected one of {METHODS}")
        if self.model is None:
            raise ValueError("A model file is required (--model)")
        if not self.betas:
            raise ValueError("At least one beta is required")
        for name in ("N", "T", "steps", "reps", "threads", "bins"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.oracle_log_z is not None and len(self.betas) != 1:
            raise ValueError("--oracle-log-z applies to a single beta; use --oracle for several")
        return self

    def echo(self) -> dict:
        """Config as written into records; execution-only fields left out."""
        return {k: v for k, v in asdict(self).items() if k not in ("threads", "out", "csv")}


def merge_config(file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Config file first, flags on top."""
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ValueError(f"Unknown config keys: {unknown}")
    merged = {**file_values, **{k: v for k, v in flag_values.items() if k in known}}
    return ExperimentConfig(**merged).validate()


def replication_rng(seed: int, beta_index: int, rep: int) -> np.random.Generator:
    """Stream for replication `rep` at the `beta_index`-th beta, independent of every other."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(beta_index, rep)))


def log_likelihood_ratio(mean_a: float, mean_b: float, beta: float) -> float:
    """log10 of exp(-beta * (mean_a - mean_b)), how much likelier the average state of a is."""
    return -beta * (mean_a - mean_b) / math.log(10.0)


# ------------------------------------------------------------
# 2. Replications
# ------------------------------------------------------------

def _energy_functional(model):
    return lambda X: model.energies(model.index_of_batch(X))


def run_replication(cfg: ExperimentConfig, model, beta: float, beta_index: int, rep: int) -> dict:
    """One replication of cfg.method at one beta; returns a JSON-ready record."""
    rng = replication_rng(cfg.seed, beta_index, rep)
    started = time.perf_counter()
    rec = {"method": cfg.method, "beta": float(beta), "rep": rep}

    if cfg.method == "nfw":
        traj = nfw_run(model, beta, random_state(model, rng), cfg.T, rng)
        rec.update(energy=float(traj.energies[-1]) if traj.energies else traj.energy0,
                   num_flips=traj.num_flips, effective_length=traj.effective_length,
                   status=traj.status)
    elif cfg.method == "eda":
        _, E = anneal(model, beta, cfg.steps, rng, beta_start=cfg.beta_start)
        rec.update(energy=E, steps=cfg.steps, beta_start=cfg.beta_start)
    elif cfg.method == "lfqgs":
        sel = lfqgs_select(model, beta, cfg.T, rng, cfg.gamma_min, cfg.gamma_max,
                           tabu_rule=cfg.tabu_rule)
        rec.update(energy=sel.energy, T=cfg.T)
    elif cfg.method == "lfis":
        order = SweepOrder(cfg.sweep_order) if cfg.sweep_order else None
        res = lfis_pipeline(model, beta, cfg.N, cfg.T, cfg.gamma_min, cfg.gamma_max,
                            order=order, rng=rng, tabu_rule=cfg.tabu_rule,
                            kernel_betas=cfg.kernel_betas, polish_flips=cfg.polish_flips,
                            h={"energy": _energy_functional(model)})
        rec.update(res.estimate.to_record())
        rec.update(
            T=cfg.T,
            energy=float(res.selected_energies.mean()),
            sweep_order_digest=res.order.digest,
            selected_energies=res.selected_energies.tolist(),
            moved_energies=res.moved_energies.tolist(),
        )
    elif cfg.method == "smc":
        pop, log_z = smc_run(model, beta, cfg.N, cfg.steps, cfg.resample_threshold, rng,
                             moves_per_level=cfg.moves_per_level)
        w = np.exp(pop.log_weights)
        rec.update(log_Z_hat=log_z, N=cfg.N, steps=cfg.steps, ess=pop.ess,
                   energy=float(w @ pop.energies))
    else:
        raise ValueError(f"Method {cfg.method!r} has no replication runner")

    rec["elapsed_s"] = time.perf_counter() - started
    return rec


def _run_job(args):
    return run_replication(*args)


def run_experiment(cfg: ExperimentConfig) -> tuple[list, dict]:
    """All replications at all betas, in (beta, rep) order, plus the summary."""
    model = load_model(cfg.model)
    digest = model_digest(model)
    config = cfg.echo()

    if cfg.method == "exact":
        records = [oracle_record(model, b, bins=cfg.bins, exact_levels=cfg.exact_levels) for b in cfg.betas]
        for r in records:
            r.update(config=config, seed={"master": cfg.seed})
        return records, summarize(records, cfg, digest)

    jobs = [(cfg, model, float(b), k, r) for k, b in enumerate(cfg.betas) for r in range(cfg.reps)]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]

    for (_, _, _, k, r), rec in zip(jobs, records):
        rec.update(model_digest=digest, config=config,
                   seed={"master": cfg.seed, "spawn_key": [k, r]})
    return records, summarize(records, cfg, digest)


# ------------------------------------------------------------
# 3. Summaries and comparisons
# ------------------------------------------------------------

def oracle_lookup(cfg: ExperimentConfig) -> dict:
    """beta -> exact log Z, from --oracle records or --oracle-log-z."""
    table = {}
    if cfg.oracle:
        for rec in read_jsonl(cfg.oracle):
            if rec.get("method") == "exact":
                table[round(float(rec["beta"]), 12)] = float(rec["log_Z"])
    if cfg.oracle_log_z is not None:
        table[round(float(cfg.betas[0]), 12)] = float(cfg.oracle_log_z)
    return table


def records_frame(records: list) -> pd.DataFrame:
    """Scalar columns of the records, one row per replication."""
    rows = [{k: v for k, v in r.items() if np.isscalar(v) or v is None} for r in records]
    return pd.DataFrame(rows)


def summarize(records: list, cfg: ExperimentConfig, digest: str) -> dict:
    """Mean / variance of log Z_hat and energies per beta, with errors against the oracle."""
    df = records_frame(records)
    oracle = oracle_lookup(cfg)
    by_beta = []
    for beta, g in df.groupby("beta", sort=True):
        row = {"beta": float(beta), "reps": int(len(g))}
        for col in ("log_Z", "log_Z_hat", "energy", "ess"):
            if col in g and g[col].notna().any():
                row[f"{col}_mean"] = float(g[col].mean())
                row[f"{col}_var"] = float(g[col].var(ddof=1)) if len(g) > 1 else 0.0
        ref = oracle.get(round(float(beta), 12))
        if ref is not None and "log_Z_hat" in g:
            err = (g["log_Z_hat"] - ref).abs()
            row.update(log_Z=ref, abs_error_mean=float(err.mean()),
                       abs_error_median=float(err.median()),
                       abs_error_var=float(err.var(ddof=1)) if len(g) > 1 else 0.0)
        by_beta.append(row)
    return {"method": cfg.method, "model_digest": digest, "config": cfg.echo(), "by_beta": by_beta}


def _energies_of(records: list, beta: float) -> np.ndarray:
    out = []
    for r in records:
        if round(float(r["beta"]), 12) != round(beta, 12):
            continue
        if "selected_energies" in r:
            out.extend(r["selected_energies"])
        elif "energy" in r:
            out.append(r["energy"])
        else:
            raise ValueError(f"Record of method {r.get('method')!r} carries no energies")
    return np.asarray(out, dtype=float)


def _histogram(energies: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(np.clip(energies, edges[0], edges[-1]), bins=edges)
    return counts / max(energies.size, 1)


def compare_results(records_a: list, records_b: list, oracle_records: list | None = None,
                    bins: int = HISTOGRAM_BINS) -> dict:
    """
    Join two result sets per beta: log Z errors, mean energies, energy
    histograms with their total-variation distance, and the log10
    likelihood ratio between the methods' mean energies.
    """
    for name, recs in (("first", records_a), ("second", records_b)):
        if not recs or any("beta" not in r or "method" not in r for r in recs):
            raise ValueError(f"The {name} result set is empty or lacks method/beta fields")

    oracle = {round(float(r["beta"]), 12): r for r in (oracle_records or []) if r.get("method") == "exact"}
    betas_a = {round(float(r["beta"]), 12) for r in records_a}
    betas_b = {round(float(r["beta"]), 12) for r in records_b}
    shared = sorted(betas_a & betas_b)
    if not shared:
        raise ValueError("The result sets share no beta")

    rows = []
    for beta in shared:
        Ea, Eb = _energies_of(records_a, beta), _energies_of(records_b, beta)
        exact = oracle.get(beta)
        if exact is not None and "bins" in exact:
            edges = np.asarray(exact["bins"]["edges"], dtype=float)
        else:
            lo, hi = float(min(Ea.min(), Eb.min())), float(max(Ea.max(), Eb.max()))
            edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo - 0.5, hi + 0.5])
        ha, hb = _histogram(Ea, edges), _histogram(Eb, edges)

        row = {
            "beta": beta,
            "methods": [records_a[0]["method"], records_b[0]["method"]],
            "mean_energy": [float(Ea.mean()), float(Eb.mean())],
            "energy_var": [float(Ea.var(ddof=1)) if Ea.size > 1 else 0.0,
                           float(Eb.var(ddof=1)) if Eb.size > 1 else 0.0],
            "log10_likelihood_ratio": log_likelihood_ratio(float(Ea.mean()), float(Eb.mean()), beta),
            "histograms": {"edges": edges.tolist(), "first": ha.tolist(), "second": hb.tolist()},
            "tv_distance": total_variation(ha, hb),
        }
        if exact is not None:
            row["log_Z"] = float(exact["log_Z"])
            errs = []
            for recs in (records_a, records_b):
                est = [r["log_Z_hat"] for r in recs
                       if "log_Z_hat" in r and round(float(r["beta"]), 12) == beta]
                errs.append(float(np.mean(np.abs(np.asarray(est) - row["log_Z"]))) if est else None)
            row["abs_error_mean"] = errs
            if "bins" in exact:
                masses = np.asarray(exact["bins"]["masses"], dtype=float)
                row["histograms"]["exact"] = masses.tolist()
                row["tv_to_exact"] = [total_variation(ha, masses), total_variation(hb, masses)]
        rows.append(row)
    return {"comparisons": rows}


# ------------------------------------------------------------
# 4. Commands
# ------------------------------------------------------------

def cmd_build_model(args) -> Path:
    if args.family == "ising-dense":
        if args.m is None:
            raise ValueError("--m is required for --family ising-dense")
        model = build_ising_dense(args.m, args.seed)
    else:
        if not args.dims or len(args.dims) != 3:
            raise ValueError("--dims takes three integers for --family cube")
        model = build_cube_lattice(tuple(args.dims), args.seed, scale_couplings=not args.unscaled)
    path = save_model(model, args.out)
    logger.info("Wrote %s: M=%d, %d edges", path, model.num_variables, model.num_edges)
    print(f"{path}  M={model.num_variables}  edges={model.num_edges}")
    return path


def cmd_run(args) -> dict:
    file_values = read_json(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level", "func")}
    cfg = merge_config(file_values, flags)

    records, summary = run_experiment(cfg)
    if cfg.out:
        out = Path(cfg.out)
        write_jsonl(records, out)
        write_json(summary, out.with_suffix(".summary.json"))
        logger.info("Wrote %d records to %s", len(records), out)
    if cfg.csv:
        records_frame(records).to_csv(cfg.csv, index=False)

    print(pd.DataFrame(summary["by_beta"]).to_string(index=False))
    return summary


def cmd_compare(args) -> dict:
    oracle = read_jsonl(args.oracle) if args.oracle else None
    report = compare_results(read_jsonl(args.first), read_jsonl(args.second), oracle, bins=args.bins)
    if args.out:
        write_json(report, args.out)
    table = pd.DataFrame([
        {
            "beta": r["beta"],
            "mean_E": r["mean_energy"],
            "var_E": r["energy_var"],
            "tv": r["tv_distance"],
            "log10_ratio": r["log10_likelihood_ratio"],
        }
        for r in report["comparisons"]
    ])
    print(table.to_string(index=False))
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfis", description="Large-flip importance sampling experiments")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a model file")
    b.add_argument("--family", choices=["ising-dense", "cube"], required=True)
    b.add_argument("--m", type=int)
    b.add_argument("--dims", type=int, nargs=3)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--unscaled", action="store_true", help="cube couplings without the 1/sqrt(M) factor")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_model)

    # Unset run flags stay out of the namespace so config-file values survive.
    S = argparse.SUPPRESS
    r = sub.add_parser("run", help="run a method", argument_default=S)
    r.add_argument("method", choices=METHODS)
    r.add_argument("--config", default=None)
    r.add_argument("--model")
    r.add_argument("--beta", "--beta-max", dest="betas", type=float, nargs="+")
    r.add_argument("--n", dest="N", type=int)
    r.add_argument("--t", dest="T", type=int)
    r.add_argument("--gamma-min", type=int)
    r.add_argument("--gamma-max", type=int)
    r.add_argument("--tabu-rule", choices=["masked-assumed", "masked-previous"])
    r.add_argument("--kernel-betas", type=float, nargs="+")
    r.add_argument("--polish-flips", type=int)
    r.add_argument("--sweep-order", type=int, nargs="+")
    r.add_argument("--steps", type=int)
    r.add_argument("--beta-start", type=float)
    r.add_argument("--resample-threshold", type=float)
    r.add_argument("--moves-per-level", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--bins", type=int)
    r.add_argument("--exact-levels", action="store_true")
    r.add_argument("--oracle")
    r.add_argument("--oracle-log-z", type=float)
    r.add_argument("--out")
    r.add_argument("--csv")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare two result files")
    c.add_argument("first")
    c.add_argument("second")
    c.add_argument("--oracle")
    c.add_argument("--bins", type=int, default=HISTOGRAM_BINS)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        # EnumerationBudgetError is a ValueError
        kind = "budget" if isinstance(exc, EnumerationBudgetError) else "error"
        print(f"lfis {args.command}: {kind}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
