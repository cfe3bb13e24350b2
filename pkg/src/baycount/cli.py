"""Command-line entry point: ``baycount {simulate,fit,select-k,summarize}``.

Settings resolve as command-line flag, then ``--config`` file, then the
built-in default. ``--threads`` falls back to ``BAYCOUNT_THREADS`` before
its default of 1; 0 means every core.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .formats import (FormatError, load_chain, read_config, read_counts, save_chain, write_counts,
                      write_json, write_table)
from .gibbs import ChainConfig, run_chain
from .model import CountMatrix, Hyperparameters
from .posterior import cluster_table, gene_sd, rank_de_genes, summarize
from .selection import ChainFailure, resolve_threads, run_grid, report_from_chains
from .synthetic import generate_scenario1, generate_scenario2

logger = logging.getLogger("baycount")


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_HP_DEFAULTS = Hyperparameters().as_dict()

# name -> (converter, default); shared by flags and config files
_SETTINGS = {
    "input": (str, None),
    "out": (str, None),
    "format": (str, "tsv"),
    "seed": (int, 0),
    "burn_in": (int, 1000),
    "iters": (int, 2000),
    "thin": (int, 1),
    "store_draws": (_bool, True),
    "init": (str, "nmf"),
    "threads": (int, None),
    "k": (int, None),
    "k_min": (int, 2),
    "k_max": (int, 10),
    "scenario": (str, None),
    "G": (int, 100),
    "S": (int, 20),
    "K0": (int, 3),
    "chain": (str, None),
    "level": (float, 0.95),
    "de_threshold": (float, None),
    "de_top": (int, None),
    **{name: (float, value) for name, value in _HP_DEFAULTS.items()},
}


class UsageError(Exception):
    pass


def _resolve(args) -> dict:
    """Merge flags over config-file values over defaults."""
    file_vals = read_config(args.config) if args.config else {}
    unknown = sorted(set(file_vals) - set(_SETTINGS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    out = {}
    for name, (conv, default) in _SETTINGS.items():
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in file_vals:
            try:
                out[name] = conv(file_vals[name])
            except ValueError as exc:
                raise UsageError(f"config key {name}: {exc}") from None
        else:
            out[name] = default
    if out["threads"] is None:
        out["threads"] = resolve_threads(None)
    out["threads"] = resolve_threads(out["threads"])
    return out


def _hyper(conf) -> Hyperparameters:
    return Hyperparameters(**{f.name: conf[f.name] for f in fields(Hyperparameters)})


def _chain_config(conf) -> ChainConfig:
    return ChainConfig(burn_in=conf["burn_in"], total_iterations=conf["iters"], thin=conf["thin"],
                       seed=conf["seed"], store_draws=conf["store_draws"], init=conf["init"])


def _outdir(conf) -> Path:
    if not conf["out"]:
        raise UsageError("--out is required")
    out = Path(conf["out"])
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _input(conf) -> CountMatrix:
    if not conf["input"]:
        raise UsageError("--input is required")
    return read_counts(conf["input"], conf["format"])


def _echo(conf) -> dict:
    # threads never changes results, so it stays out of the outputs
    return {k: v for k, v in conf.items() if v is not None and k != "threads"}


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cli_simulate(conf) -> int:
    out = _outdir(conf)
    scen = conf["scenario"]
    if scen not in ("1", "2", "I", "II"):
        raise UsageError("--scenario must be 1 or 2")
    gen = generate_scenario1 if scen in ("1", "I") else generate_scenario2
    truth = gen(conf["G"], conf["S"], conf["K0"], conf["seed"])
    Y = truth.Y
    name = "counts.tsv" if conf["format"] == "tsv" else "counts.mtx"
    write_counts(out / name, Y, conf["format"])
    fcols = [f"factor_{k + 1}" for k in range(truth.K0)]
    write_table(out / "truth_phi.csv", "truth_phi", ["gene_id", *fcols],
                [(g, *row) for g, row in zip(Y.gene_ids, truth.Phi_true)])
    write_table(out / "truth_theta.csv", "truth_theta", ["sample_id", *fcols],
                [(s, *col) for s, col in zip(Y.sample_ids, truth.Theta_true.T)])
    write_json(out / "truth.json", "truth", {
        "scenario": truth.scenario, "seed": truth.seed, "G": Y.n_genes, "S": Y.n_samples,
        "K0": truth.K0, "lambda": truth.lambda_true, "alpha": truth.alpha_true,
        "zeta": truth.zeta_true, "p": truth.p_true,
        "phi_is_normalized": truth.scenario == "I"})
    print(out / name)
    return 0


def cli_fit(conf) -> int:
    if conf["k"] is None:
        raise UsageError("--k is required")
    Y = _input(conf)
    out = _outdir(conf)
    hp, cfg = _hyper(conf), _chain_config(conf)
    t0 = time.perf_counter()
    chain = run_chain(Y, conf["k"], hp, cfg)
    elapsed = time.perf_counter() - t0
    save_chain(out / "chain.npz", chain, Y.gene_ids, Y.sample_ids)
    write_table(out / "loglik.csv", "loglik", ["iteration", "loglik"],
                zip(chain.kept_iterations.tolist(), chain.loglik_trace))
    write_json(out / "fit.json", "fit", {
        "K": conf["k"], "seed": cfg.seed, "n_kept": chain.n_kept, "config": _echo(conf),
        "timings": {"total_seconds": elapsed, "mean_sweep_seconds": float(chain.timing.mean())}})
    print(out / "chain.npz")
    return 0


def cli_select_k(conf) -> int:
    k_min, k_max = conf["k_min"], conf["k_max"]
    if k_min < 1 or k_max < k_min + 2:
        raise UsageError("need 1 <= k-min and k-min + 2 <= k-max")
    Y = _input(conf)
    out = _outdir(conf)
    hp, cfg = _hyper(conf), _chain_config(conf)
    t0 = time.perf_counter()
    chains = run_grid(Y, range(k_min, k_max + 1), hp, cfg, threads=conf["threads"])
    elapsed = time.perf_counter() - t0
    report = report_from_chains(chains)
    write_table(out / "selection.csv", "selection", ["K", "loglik_mean", "ci_lo", "ci_hi", "delta2"],
                [(k, m, lo, hi, "" if np.isnan(d) else d) for k, m, lo, hi, d in report.rows()])
    write_json(out / "selection.json", "selection", {
        "k_hat": report.k_hat, "seed": cfg.seed, "config": _echo(conf),
        "timings": {"total_seconds": elapsed,
                    "per_k_seconds": {str(k): float(c.timing.sum()) for k, c in chains.items()}}})
    print(f"K_hat = {report.k_hat}")
    return 0


def cli_summarize(conf) -> int:
    if not conf["chain"]:
        raise UsageError("--chain is required")
    if conf["de_threshold"] is not None and conf["de_top"] is not None:
        raise UsageError("give at most one of --de-threshold and --de-top")
    t0 = time.perf_counter()
    chain, genes, samples = load_chain(conf["chain"])
    out = _outdir(conf)
    s = summarize(chain, level=conf["level"])
    G, K = s.phi_mean.shape
    S = s.theta_mean.shape[1]
    genes = genes or [f"gene{i + 1}" for i in range(G)]
    samples = samples or [f"sample{j + 1}" for j in range(S)]
    write_summary_tables(out, s, genes, samples, conf["de_threshold"], conf["de_top"])
    write_json(out / "summary.json", "summary", {
        "K": K, "draw_count": s.draw_count, "level": s.level, "interval_method": s.interval_method,
        "seed": chain.config.seed, "chain_factor_index": s.factor_order,
        "lambda_mean": s.lambda_mean, "zeta_mean": s.zeta_mean, "p_mean": s.p_mean,
        "r_mean": s.r_mean, "hyperparameters": chain.hyperparameters.as_dict(),
        "config": _echo(conf), "timings": {"total_seconds": time.perf_counter() - t0}})
    print(out / "summary.json")
    return 0


def write_summary_tables(out: Path, s, genes, samples, de_threshold=None, de_top=None) -> None:
    """The five summary CSVs; factors are named ``factor_1..K`` in display order."""
    K = s.phi_mean.shape[1]
    fcols = [f"factor_{k + 1}" for k in range(K)]
    write_table(out / "phi_mean.csv", "phi_mean", ["gene_id", *fcols],
                [(g, *row) for g, row in zip(genes, s.phi_mean)])
    write_table(out / "theta_mean.csv", "theta_mean", ["sample_id", *fcols],
                [(smp, *col) for smp, col in zip(samples, s.theta_mean.T)])
    write_table(out / "theta_ci.csv", "theta_ci", ["sample_id", "factor", "mean", "lower", "upper"],
                [(smp, fcols[k], s.theta_mean[k, j], s.theta_ci[0, k, j], s.theta_ci[1, k, j])
                 for j, smp in enumerate(samples) for k in range(K)])
    labels, props = cluster_table(s.theta_mean)
    write_table(out / "clusters.csv", "clusters", ["sample_id", "dominant_factor", "proportion"],
                [(smp, fcols[lab], pr) for smp, lab, pr in zip(samples, labels, props)])
    if K >= 2:
        if de_top is not None:
            idx = rank_de_genes(s.phi_mean, top_n=de_top)
        else:
            idx = rank_de_genes(s.phi_mean, threshold=0.0 if de_threshold is None else de_threshold)
        sd = gene_sd(s.phi_mean)
        rows = [(rank + 1, genes[i], sd[i]) for rank, i in enumerate(idx)]
    else:
        rows = []
    write_table(out / "de_genes.csv", "de_genes", ["rank", "gene_id", "sd"], rows)


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

def _add_chain_flags(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int, help="burn-in sweeps (default 1000)")
    p.add_argument("--iters", type=int, help="total sweeps including burn-in (default 2000)")
    p.add_argument("--thin", type=int)
    p.add_argument("--store-draws", dest="store_draws", action="store_const", const=True,
                   help="keep every post-burn-in draw (default)")
    p.add_argument("--no-store-draws", dest="store_draws", action="store_const", const=False,
                   help="keep only streaming means and variances")
    p.add_argument("--init", choices=["nmf", "prior"])
    for name in _HP_DEFAULTS:
        p.add_argument(f"--{name}", type=float, help=f"hyperparameter (default {_HP_DEFAULTS[name]:g})")


def _add_io_flags(p, need_input=True):
    if need_input:
        p.add_argument("--input", help="count matrix file")
    p.add_argument("--format", choices=["tsv", "matrix-market"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--threads", type=int, help="worker threads; 0 = all cores")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="baycount", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"baycount {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic data set and its truth")
    _add_io_flags(p, need_input=False)
    p.add_argument("--scenario", choices=["1", "2"])
    p.add_argument("--G", type=int)
    p.add_argument("--S", type=int)
    p.add_argument("--K0", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cli_simulate)

    p = sub.add_parser("fit", help="run one chain at fixed K")
    _add_io_flags(p)
    p.add_argument("--k", type=int)
    _add_chain_flags(p)
    p.set_defaults(func=cli_fit)

    p = sub.add_parser("select-k", help="run the K grid and pick K")
    _add_io_flags(p)
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    _add_chain_flags(p)
    p.set_defaults(func=cli_select_k)

    p = sub.add_parser("summarize", help="posterior tables from a stored chain")
    _add_io_flags(p, need_input=False)
    p.add_argument("--chain", help="chain.npz written by fit")
    p.add_argument("--level", type=float)
    p.add_argument("--de-threshold", dest="de_threshold", type=float)
    p.add_argument("--de-top", dest="de_top", type=int)
    p.set_defaults(func=cli_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        conf = _resolve(args)
        return args.func(conf)
    except (UsageError, FormatError, FileNotFoundError, ChainFailure, ValueError, OSError) as exc:
        print(f"baycount {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
