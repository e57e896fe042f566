"""Command-line interface.

Subcommands: preanalyze (WSS elbow over an imputed panel and dataset
selection), fit (run the chains, write draws + metadata), partition
(similarity matrix, Binder partition and report tables), summarize
(posterior summary table), simulate (write a synthetic dataset), and
sbc (calibration run).  Exit codes: 0 success, 1 validation or usage
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import glob as globmod
import os
import sys

import numpy as np
import pandas as pd

from . import clustering, diagnostics, io, simulate as sim
from .data import DatasetError
from .sampler import McmcConfig, NumericalError, fit as run_fit
from .io import RunConfig, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_args(sp):
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--k", type=int)


def _add_chain_args(sp):
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--thin", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--no-standardize-covariates",
                    dest="standardize_covariates", action="store_false",
                    default=None)
    sp.add_argument("--no-standardize-lc50", dest="standardize_lc50",
                    action="store_false", default=None)
    sp.add_argument("--lc50-log10", dest="lc50_log10", action="store_true",
                    default=None)


def build_parser():
    parser = _Parser(prog="mrdmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preanalyze",
                        help="WSS elbow profile over an imputed panel")
    sp.add_argument("--panel", required=True,
                    help="glob matching the panel CSV files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--k-min", type=int, default=1)
    sp.add_argument("--k-max", type=int, default=10)
    sp.add_argument("--restarts", type=int)
    _add_config_args(sp)
    sp.set_defaults(func=cmd_preanalyze)

    sp = sub.add_parser("fit", help="run the MCMC and write draws")
    sp.add_argument("--data", required=True)
    sp.add_argument("--panel", help="imputed panel glob (required when "
                                    "LC50 cells are missing)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--restarts", type=int)
    _add_chain_args(sp)
    _add_config_args(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("partition",
                        help="similarity matrix, Binder partition, reports")
    sp.add_argument("--run", required=True,
                    help="directory written by fit")
    sp.add_argument("--data", required=True)
    sp.add_argument("--panel")
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-clusters", dest="max_clusters", type=int)
    sp.add_argument("--binder-orders", dest="binder_orders", type=int)
    sp.add_argument("--censored-at-limit", dest="censored_at_limit",
                    action="store_true", default=None)
    _add_config_args(sp)
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("summarize", help="posterior summary table")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--include-latent", action="store_true")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("simulate", help="write a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=788)
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--separation", type=float, default=3.0)
    sp.add_argument("--strict-monotone", action="store_true")
    _add_config_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sbc", help="simulation-based calibration")
    sp.add_argument("--out", required=True)
    sp.add_argument("--replicates", type=int, default=200)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--p", type=int, default=3)
    sp.add_argument("--n-jobs", dest="n_jobs", type=int, default=1)
    _add_chain_args(sp)
    _add_config_args(sp)
    sp.set_defaults(func=cmd_sbc)
    return parser


def _merge_config(args):
    """RunConfig from optional file, overridden by present CLI flags."""
    config = RunConfig.from_file(args.config) if getattr(args, "config",
                                                         None) else RunConfig()
    overrides = {
        "iterations": getattr(args, "iterations", None),
        "burn_in": getattr(args, "burn_in", None),
        "thin": getattr(args, "thin", None),
        "chains": getattr(args, "chains", None),
        "seed": getattr(args, "seed", None),
        "k": getattr(args, "k", None),
        "standardize_covariates": getattr(args, "standardize_covariates",
                                          None),
        "standardize_lc50": getattr(args, "standardize_lc50", None),
        "lc50_log10": getattr(args, "lc50_log10", None),
        "kmeans_restarts": getattr(args, "restarts", None),
        "binder_orders": getattr(args, "binder_orders", None),
        "max_clusters": getattr(args, "max_clusters", None),
        "censored_at_limit": getattr(args, "censored_at_limit", None),
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(config, key, val)
    return config


def _mcmc_config(config):
    return McmcConfig(iterations=config.iterations, burn_in=config.burn_in,
                      thin=config.thin, chains=config.chains,
                      seed=config.seed, k=config.k)


def _load_records(args, config):
    records, report = io.parse_dataset(
        args.data, lc50_log10=config.lc50_log10,
        allow_missing_lc50=args.panel is not None,
        merge=config.merge_subtypes,
        min_subtype_count=config.min_subtype_count)
    for line in report.lines():
        print(line)
    if args.panel:
        panel = io.read_panel(args.panel, ids=[r.id for r in records],
                              lc50_log10=config.lc50_log10)
        mi = clustering.select_dataset(panel, k=config.k,
                                       restarts=config.kmeans_restarts,
                                       seed=config.seed)
        print(f"selected imputed dataset {mi} ({panel.tags[mi]})")
        records = io.complete_records(records, panel.matrices[mi])
    return records, report


def cmd_preanalyze(args):
    config = _merge_config(args)
    panel = io.read_panel(args.panel, lc50_log10=config.lc50_log10)
    os.makedirs(args.out, exist_ok=True)
    profile = clustering.wss_profile(
        panel, k_values=range(args.k_min, args.k_max + 1),
        restarts=config.kmeans_restarts, seed=config.seed)
    profile.to_csv(os.path.join(args.out, "wss_profile.csv"))
    mi = clustering.select_dataset(panel, k=config.k,
                                   restarts=config.kmeans_restarts,
                                   seed=config.seed, profile=profile
                                   if config.k in profile.columns else None)
    with open(os.path.join(args.out, "selected_dataset.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"index={mi}\ntag={panel.tags[mi]}\nk={config.k}\n")
    io.append_manifest(args.out, "preanalyze", config,
                       sorted(globmod.glob(args.panel)))
    print(profile.round(3).to_string())
    print(f"selected dataset {mi} ({panel.tags[mi]}) at k={config.k}")
    return 0


def cmd_fit(args):
    config = _merge_config(args)
    records, _ = _load_records(args, config)
    store = run_fit(records, _mcmc_config(config),
                    standardize_covariates=config.standardize_covariates,
                    lc50_standardize=config.standardize_lc50)
    os.makedirs(args.out, exist_ok=True)
    io.write_draws(store, os.path.join(args.out, "draws.jsonl"))
    io.write_draws_csv(store, os.path.join(args.out, "draws.csv"))
    io.write_metadata(store, os.path.join(args.out, "metadata.txt"),
                      extra={"data_sha256": io.sha256_file(args.data)})
    inputs = [args.data]
    if args.panel:
        inputs += sorted(globmod.glob(args.panel))
    io.append_manifest(args.out, "fit", config, inputs)
    print(f"retained {store.n_retained} draws x {store.n_chains} chains "
          f"-> {args.out}")
    return 0


def cmd_partition(args):
    config = _merge_config(args)
    store = io.read_draws(os.path.join(args.run, "draws.jsonl"))
    records, _ = _load_records(args, config)
    if [r.id for r in records] != store.labels["ids"]:
        raise DatasetError("dataset ids do not match the fitted run")
    draws = store.pooled("c")
    sim_mat = clustering.similarity_matrix(draws)
    labels = clustering.binder_partition(
        sim_mat, max_k=config.max_clusters, candidates=draws,
        n_orders=config.binder_orders, seed=config.seed)
    loss = clustering.binder_loss(labels, sim_mat)

    os.makedirs(args.out, exist_ok=True)
    ids = [r.id for r in records]
    pd.DataFrame(sim_mat, index=ids, columns=ids).to_csv(
        os.path.join(args.out, "similarity.csv"))
    pd.DataFrame({"id": ids, "cluster": labels}).to_csv(
        os.path.join(args.out, "partition.csv"), index=False)
    summary = clustering.cluster_summary(
        labels, np.array([r.lc50 for r in records]),
        [r.subtype for r in records])
    summary.sizes.to_csv(os.path.join(args.out, "cluster_sizes.csv"))
    summary.lc50_means.to_csv(os.path.join(args.out, "cluster_means.csv"))
    summary.composition_pct.to_csv(
        os.path.join(args.out, "cluster_composition.csv"))
    summary.lc50_quartiles.to_csv(
        os.path.join(args.out, "lc50_quartiles.csv"))
    pearson = clustering.pearson_by_subtype(
        records, censored_at_limit=config.censored_at_limit)
    pearson.to_csv(os.path.join(args.out, "pearson_by_subtype.csv"),
                   index=False)
    io.append_manifest(args.out, "partition", config, [args.data])
    print(f"binder partition: {labels.max()} clusters, loss {loss:.2f}, "
          f"sizes {summary.sizes.to_dict()}")
    return 0


def cmd_summarize(args):
    store = io.read_draws(os.path.join(args.run, "draws.jsonl"))
    summaries = diagnostics.summarize(store,
                                      include_latent=args.include_latent)
    frame = diagnostics.summary_frame(summaries)
    os.makedirs(args.out, exist_ok=True)
    frame.to_csv(os.path.join(args.out, "summary.csv"))
    with pd.option_context("display.max_rows", 40):
        print(frame.round(4).to_string())
    return 0


def cmd_simulate(args):
    config = _merge_config(args)
    settings = sim.CovariateSettings(n=args.n)
    p = 3 + 2 + (len(settings.subtype_freqs) - 1)
    truth = sim.default_truth(p, k=config.k, rho=args.rho,
                              separation=args.separation)
    result = sim.simulate_dataset(truth, settings, config.seed,
                                  strict_monotone=args.strict_monotone)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.csv")
    io.write_dataset(result.records, path)
    np.savetxt(os.path.join(args.out, "allocations.csv"),
               result.allocations, fmt="%d", header="cluster", comments="")
    io.append_manifest(args.out, "simulate", config, [path])
    flips = result.monotone_violations if args.strict_monotone else 0
    print(f"wrote {len(result.records)} records to {path} "
          f"({flips} day-42 values forced censored)")
    return 0


def cmd_sbc(args):
    config = _merge_config(args)
    iterations = args.iterations or 2000
    burn_in = args.burn_in or 500
    thin = args.thin or 3
    report = sim.sbc_run(replicates=args.replicates, n=args.n, p=args.p,
                         k=config.k, iterations=iterations, burn_in=burn_in,
                         thin=thin, seed=config.seed, n_jobs=args.n_jobs)
    os.makedirs(args.out, exist_ok=True)
    report.to_frame().to_csv(os.path.join(args.out, "sbc_report.csv"))
    pd.DataFrame(report.ranks).to_csv(
        os.path.join(args.out, "sbc_ranks.csv"), index=False)
    io.append_manifest(args.out, "sbc", config, [])
    print(report.to_frame().round(4).to_string())
    print(f"failures: {report.failures}/{report.replicates}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        kind = "numerical failure" if isinstance(exc, NumericalError) \
            else "runtime failure"
        print(f"{kind}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
