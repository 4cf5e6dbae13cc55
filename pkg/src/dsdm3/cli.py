"""Command-line entry point: ``dsdm3 {simulate,fit,summarize,ari,diversity}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
4 numerical failure in the sampler.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import fit_chains
from .inference import (
    adjusted_rand_index,
    coclustering,
    diversity,
    posterior_cluster_abundances,
    salso_search,
)
from .io import (
    RunConfig,
    ValidationError,
    _ensure_dir,
    fmt_float,
    manifest,
    parse_set,
    read_counts,
    read_draws,
    read_json,
    read_labels,
    read_xi,
    write_counts,
    write_draws,
    write_json,
    write_labels,
    write_xi,
)
from .model import Hyperparams, prior_mean_from_data
from .newick import read_newick
from .sampler import NumericalError, PosteriorDraws
from .simgen import generate_dtm, generate_scenario, scenario

log = logging.getLogger("dsdm3")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


def bundled_tree_path() -> Path:
    return Path(str(resources.files("dsdm3") / "data" / "genus79.nwk"))


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _open(path):
    return open(path, "w", encoding="utf-8", newline="")


# ---- subcommands ---------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    out = _ensure_dir(cfg.out)
    if cfg.scenario == "dtm":
        tree_path = cfg.tree or bundled_tree_path()
        tree = read_newick(tree_path)
        data, labels = generate_dtm(
            tree, cfg.dtm_K, cfg.dtm_N_per_cluster, cfg.dtm_depth,
            at_risk_prob=cfg.dtm_at_risk_prob, seed=cfg.seed, spread=cfg.dtm_spread,
        )
        spec = {
            "kind": "dtm", "tree": Path(tree_path).name, "K": cfg.dtm_K,
            "N_per_cluster": list(cfg.dtm_N_per_cluster), "depth": cfg.dtm_depth,
            "at_risk_prob": cfg.dtm_at_risk_prob, "spread": cfg.dtm_spread,
        }
    else:
        sc = scenario(int(cfg.scenario), seed=cfg.seed)
        data, labels = generate_scenario(sc)
        spec = {"kind": f"scenario{cfg.scenario}", **asdict(sc)}
        spec["N_per_cluster"] = list(sc.N_per_cluster)
    write_counts(out / "counts.csv", data)
    write_labels(out / "labels.csv", data.sample_ids, labels)
    write_json(out / "manifest.json", manifest(
        "simulate", cfg, simulation=spec,
        n_samples=data.n_samples, n_taxa=data.n_taxa,
        zero_fraction=round(data.zero_fraction, 6),
    ))
    print(f"wrote {data.n_samples}x{data.n_taxa} counts (zero fraction "
          f"{data.zero_fraction:.3f}) to {out}")
    return EXIT_OK


def _hyper(cfg: RunConfig, data) -> Hyperparams:
    return cfg.hyperparams(prior_mean_from_data(data, cfg.s))


def cmd_fit(cfg: RunConfig) -> int:
    if not cfg.counts:
        raise ValidationError("fit needs a counts file (--counts or counts=...)")
    data = read_counts(cfg.counts)
    hyper = _hyper(cfg, data)
    out = _ensure_dir(cfg.out)
    chains = fit_chains(data, hyper, cfg.sampler_config(), cfg.chains)
    write_draws(out / "draws.csv", chains)
    if cfg.record_xi:
        write_xi(out / "xi.bin", np.concatenate([c.xi for c in chains]))
    with _open(out / "trace.csv") as fh:
        w = _csv_writer(fh)
        w.writerow(["chain", "iteration", "log_density"])
        for ch, d in enumerate(chains, start=1):
            for it, lp in enumerate(d.trace_log_density, start=1):
                w.writerow([ch, it, fmt_float(lp)])
    write_json(out / "manifest.json", manifest(
        "fit", cfg,
        sample_ids=list(data.sample_ids),
        taxon_ids=list(data.taxon_ids),
        records_per_chain=[len(d) for d in chains],
        interrupted=any(d.interrupted for d in chains),
        mean_acceptance=[round(float(d.acceptance[d.acceptance > 0].mean()), 6)
                         if np.any(d.acceptance > 0) else 0.0 for d in chains],
    ))
    # wall time varies run to run, so it lives apart from the reproducible outputs
    write_json(out / "timing.json", {"wall_time_seconds": [d.wall_time for d in chains]})
    pooled = PosteriorDraws.concatenate(chains)
    freq = pooled.kplus_frequencies() if len(pooled) else {}
    print(f"{len(pooled)} draws from {cfg.chains} chain(s); K+ frequencies "
          + ", ".join(f"{k}:{v:.3f}" for k, v in freq.items()))
    return EXIT_OK


def _load_fit(draws_dir: Path):
    fit_manifest = read_json(draws_dir / "manifest.json")
    fit_cfg = fit_manifest.get("config", {})
    chains = read_draws(draws_dir / "draws.csv", K_m=fit_cfg.get("K_m"))
    xi_path = draws_dir / "xi.bin"
    if xi_path.exists():
        xi = read_xi(xi_path)
        start = 0
        for d in chains:
            d.xi = xi[start: start + len(d)]
            start += len(d)
        if start != xi.shape[0]:
            raise ValidationError(f"{xi_path}: {xi.shape[0]} records but draws.csv has {start}")
    return fit_manifest, chains


def _trim(chains, burn):
    out = []
    for ch, d in enumerate(chains, start=1):
        if burn >= len(d):
            raise ValidationError(
                f"summary_burn_in={burn} leaves no draws in chain {ch} ({len(d)} available)"
            )
        out.append(PosteriorDraws(
            iteration=d.iteration[burn:], c=d.c[burn:], K=d.K[burn:], K_plus=d.K_plus[burn:],
            weights=d.weights[burn:], log_density=d.log_density[burn:],
            xi=None if d.xi is None else d.xi[burn:],
        ))
    return out


def _write_diversity(path, data) -> None:
    with _open(path) as fh:
        w = _csv_writer(fh)
        w.writerow(["sample_id", "richness", "shannon"])
        for sid, row in zip(data.sample_ids, data.counts):
            rich, sh = diversity(row)
            w.writerow([sid, rich, fmt_float(sh)])


def cmd_summarize(cfg: RunConfig) -> int:
    if not cfg.draws:
        raise ValidationError("summarize needs the fit output directory (--draws or draws=...)")
    draws_dir = Path(cfg.draws)
    fit_manifest, chains = _load_fit(draws_dir)
    if not chains:
        raise ValidationError(f"{draws_dir / 'draws.csv'}: no draws")
    draws = PosteriorDraws.concatenate(_trim(chains, cfg.summary_burn_in))
    sample_ids = fit_manifest.get("sample_ids") or [f"S{i + 1}" for i in range(draws.c.shape[1])]
    if len(sample_ids) != draws.c.shape[1]:
        raise ValidationError("fit manifest and draws disagree on the number of samples")
    out = _ensure_dir(cfg.out)

    P = coclustering(draws)
    best = salso_search(P, runs=cfg.salso_runs, seed=cfg.seed,
                        max_blocks=int(draws.K_plus.max()) + 1)
    write_labels(out / "partition.csv", sample_ids, best.partition)
    with _open(out / "coclustering.csv") as fh:
        w = _csv_writer(fh)
        w.writerow(["sample_id", *sample_ids])
        for sid, row in zip(sample_ids, P):
            w.writerow([sid, *(fmt_float(x) for x in row)])
    freq = draws.kplus_frequencies()
    with _open(out / "kplus.csv") as fh:
        w = _csv_writer(fh)
        w.writerow(["K_plus", "frequency"])
        for k, f in freq.items():
            w.writerow([k, fmt_float(f)])
    sizes = np.bincount(best.partition)[1:]
    with _open(out / "cluster_sizes.csv") as fh:
        w = _csv_writer(fh)
        w.writerow(["cluster", "size"])
        for k, n in enumerate(sizes, start=1):
            w.writerow([k, int(n)])
    has_xi = draws.xi is not None
    if has_xi:
        taxa = fit_manifest.get("taxon_ids")
        with _open(out / "abundance.csv") as fh:
            w = _csv_writer(fh)
            w.writerow(["cluster", "size", "taxon", "mean", "lower95", "upper95"])
            for ab in posterior_cluster_abundances(draws, best.partition, taxon_ids=taxa):
                for t, name in enumerate(ab.names):
                    w.writerow([ab.cluster, ab.size, name, fmt_float(ab.mean[t]),
                                fmt_float(ab.lower[t]), fmt_float(ab.upper[t])])
    counts_path = cfg.counts or fit_manifest.get("config", {}).get("counts")
    has_div = bool(counts_path) and Path(counts_path).exists()
    if has_div:
        _write_diversity(out / "diversity.csv", read_counts(counts_path))
    else:
        log.warning("counts file not found; skipping the diversity table")
    write_json(out / "manifest.json", manifest(
        "summarize", cfg,
        fit_version=fit_manifest.get("version"),
        fit_seed=fit_manifest.get("seed"),
        n_draws=len(draws),
        n_clusters=int(best.partition.max()),
        vi_bound=round(best.objective, 12),
        kplus_mode=draws.kplus_mode(),
        abundance="xi" if has_xi else "allocation-only",
        diversity=has_div,
    ))
    print(f"salso: {int(best.partition.max())} clusters; K+ posterior mode {draws.kplus_mode()}")
    return EXIT_OK


def cmd_ari(path_a, path_b) -> int:
    a = read_labels(path_a)
    b = read_labels(path_b)
    only_a = sorted(set(a) - set(b))
    only_b = sorted(set(b) - set(a))
    if only_a or only_b:
        parts = []
        if only_a:
            parts.append(f"missing from {path_b}: {', '.join(only_a)}")
        if only_b:
            parts.append(f"missing from {path_a}: {', '.join(only_b)}")
        raise ValidationError("sample ids differ; " + "; ".join(parts))
    ids = sorted(a)
    ari = adjusted_rand_index([a[i] for i in ids], [b[i] for i in ids])
    if abs(ari) < 5e-5:
        ari = 0.0
    print(f"{ari:.4f}")
    return EXIT_OK


def cmd_diversity(cfg: RunConfig) -> int:
    if not cfg.counts:
        raise ValidationError("diversity needs a counts file (--counts or counts=...)")
    data = read_counts(cfg.counts)
    out = _ensure_dir(cfg.out)
    _write_diversity(out / "diversity.csv", data)
    write_json(out / "manifest.json", manifest("diversity", cfg, n_samples=data.n_samples))
    print(f"wrote diversity for {data.n_samples} samples to {out}")
    return EXIT_OK


# ---- argument handling ---------------------------------------------------

def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsdm3", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat JSON configuration")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=_u64, help="random seed (unsigned 64-bit)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--scenario", choices=["1", "2", "3", "4", "5", "dtm"])
    p.add_argument("--tree", metavar="PATH", help="Newick tree for --scenario dtm")

    p = sub.add_parser("fit", parents=[common], help="run the MCMC sampler")
    p.add_argument("--counts", metavar="PATH")
    p.add_argument("--chains", type=_positive, metavar="M")

    p = sub.add_parser("summarize", parents=[common], help="point partition and posterior tables")
    p.add_argument("--draws", metavar="DIR", help="directory written by fit")
    p.add_argument("--counts", metavar="PATH", help="counts for the diversity table")

    p = sub.add_parser("ari", help="adjusted Rand index of two labels files")
    p.add_argument("labels_a")
    p.add_argument("labels_b")

    p = sub.add_parser("diversity", parents=[common], help="per-sample richness and Shannon index")
    p.add_argument("--counts", metavar="PATH")
    return parser


def _config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    base.update(parse_set(args.set))
    for key in ("seed", "out", "scenario", "tree", "counts", "chains", "draws"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        if args.command == "ari":
            return cmd_ari(args.labels_a, args.labels_b)
        cfg = _config_from_args(args)
        handler = {
            "simulate": cmd_simulate,
            "fit": cmd_fit,
            "summarize": cmd_summarize,
            "diversity": cmd_diversity,
        }[args.command]
        return handler(cfg)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
