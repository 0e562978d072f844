"""Command-line front door wiring the pipeline together.

Subcommands: simulate, cluster, tgamma, search, oracle, report, pipeline.
Every stage takes --seed; the pipeline derives stage seeds from one global
seed with fixed offsets (simulate +0, cluster +1, search +2, run r of a
multi-run search +2+r) so a config document pins the whole run.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, dpcluster, loglinear, oracle, profiles, search, simulate, tgamma
from .errors import ConfigError, NumericalError

SIMULATE_OFFSET = 0
CLUSTER_OFFSET = 1
SEARCH_OFFSET = 2


# ---------------------------------------------------------------------------
# rendering helpers
# ---------------------------------------------------------------------------

def render_profile_text(table: profiles.ProfileTable) -> str:
    """Aligned cluster-profile block: median selection probabilities on top,
    one symbol row per representative cluster."""
    names = table.names
    width = max(6, max(len(s) for s in names) + 1, max(table.levels) + 1)
    head = "".rjust(18) + "".join(s.rjust(width) for s in names)
    lines = [head]
    med = "Median(rho)".ljust(18) + "".join(
        f"{v:.2f}".rjust(width) for v in table.rho_median
    )
    lines.append(med)
    for k in range(table.symbols.shape[0]):
        label = f"Cluster {k + 1} ({int(table.sizes[k])})".ljust(18)
        cells = []
        for p in range(len(names)):
            cells.append("".join(table.symbols[k, p, : table.levels[p]]).rjust(width))
        lines.append(label + "".join(cells))
    return "\n".join(lines)


def write_profile_csv(table: profiles.ProfileTable, path: Path) -> None:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["cluster", "size", "covariate", "level", "symbol",
                     "ci_lo", "ci_hi", "rho_median"])
        for k in range(table.symbols.shape[0]):
            for p, name in enumerate(table.names):
                for m in range(table.levels[p]):
                    wr.writerow([
                        k + 1, int(table.sizes[k]), name, m,
                        table.symbols[k, p, m],
                        repr(float(table.ci_lo[k, p, m])),
                        repr(float(table.ci_hi[k, p, m])),
                        repr(float(table.rho_median[p])),
                    ])


def render_mixing_text(summaries: list[dict]) -> str:
    lines = [
        f"{'strategy':<18}{'accept %':>10}{'median iters':>14}"
        f"{'(Q1, Q3)':>18}{'best freq':>11}"
    ]
    for s in summaries:
        lines.append(
            f"{s['strategy']:<18}{s['acceptance_pct']:>10.2f}"
            f"{s['median_iters_to_best']:>14.0f}"
            f"{'(%.0f, %.0f)' % (s['q1_iters_to_best'], s['q3_iters_to_best']):>18}"
            f"{s['best_frequency']:>11.3f}"
        )
    return "\n".join(lines)


def write_mixing_csv(summaries: list[dict], path: Path) -> None:
    cols = ["strategy", "kernel", "runs", "acceptance_pct",
            "median_iters_to_best", "q1_iters_to_best", "q3_iters_to_best",
            "missed_runs", "best_key", "best_frequency"]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for s in summaries:
            wr.writerow([s[c] for c in cols])


def key_to_model_string(key: str, names: tuple[str, ...]) -> str:
    edges = []
    if key != "-":
        for part in key.split(";"):
            a, b = part.split("-")
            edges.append((int(a), int(b)))
    graph = loglinear.Graph(len(names), tuple(edges))
    return loglinear.model_string(graph, names)


def write_top_models_csv(
    traces: list[search.SearchTrace], names: tuple[str, ...], path: Path, k: int = 3
) -> list[tuple[str, float]]:
    pooled: dict[str, int] = {}
    total = 0
    for tr in traces:
        for key, cnt in tr.visit_counts().items():
            pooled[key] = pooled.get(key, 0) + cnt
            total += cnt
    top = sorted(pooled.items(), key=lambda kv: -kv[1])[:k]
    rows = [(key_to_model_string(key, names), cnt / total) for key, cnt in top]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rank", "model", "edges", "frequency"])
        for rank, ((model, freq), (key, _)) in enumerate(zip(rows, top), start=1):
            wr.writerow([rank, model, key, repr(float(freq))])
    return rows


def write_runs_csv(traces: list[search.SearchTrace], best_key: str, path: Path) -> None:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run", "seed", "acceptance_pct", "iters_to_best"])
        for i, tr in enumerate(traces):
            hit = tr.first_hit(best_key)
            wr.writerow([
                i, tr.config.seed, repr(tr.acceptance_rate()),
                "" if hit is None else hit,
            ])


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    if args.preset:
        specs = simulate.builtin_specs()
        if args.preset not in specs:
            raise ConfigError(
                f"unknown preset {args.preset!r}; have {sorted(specs)}"
            )
        spec = specs[args.preset]
    else:
        spec = simulate.spec_from_json(args.spec)
    if args.seed is not None:
        spec = simulate.with_seed(spec, args.seed)
    ds = simulate.generate(spec)
    data.write_dataset_csv(ds, args.out)
    print(f"wrote {ds.n} x {ds.p_count} dataset to {args.out} (seed {spec.seed})")
    return 0


def _load_dataset(path: str) -> data.CategoricalDataset:
    return data.read_dataset_csv(path)


def _priors_from_args(args) -> dpcluster.PriorConfig:
    return dpcluster.PriorConfig(
        lam=args.lam, c_max=args.c_max,
        a_rho=args.a_rho, b_rho=args.b_rho,
    )


def _cmd_cluster(args) -> int:
    ds = _load_dataset(args.data)
    priors = _priors_from_args(args)
    trace = dpcluster.run_chain(
        ds, priors, burnin=args.burnin, iters=args.iters,
        thin=args.thin, seed=args.seed,
    )
    paths = dpcluster.save_trace(trace, args.out)
    summ = dpcluster.posterior_rho_summary(trace)
    names = ds.column_names()
    print("posterior median selection probability per covariate:")
    for name, med in zip(names, summ["median"]):
        print(f"  {name:>8}  {med:.3f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_tgamma(args) -> int:
    trace = dpcluster.load_trace(args.trace)
    matrix = tgamma.accumulate(trace)
    tgamma.save_matrix(matrix, args.out)
    names = matrix.column_names()
    a, b = matrix.max_pair
    print(f"max co-selection pair: ({names[a]}, {names[b]})")
    print(f"wrote {args.out} and {args.out}.raw.csv")
    return 0


def _search_source(args):
    if args.table:
        return data.read_counts_csv(args.table)
    if args.data:
        return data.build_table(_load_dataset(args.data))
    raise ConfigError("search needs --table or --data")


def _cmd_search(args) -> int:
    table = _search_source(args)
    matrix = tgamma.load_matrix(args.tgamma) if args.tgamma else None
    config = search.SearchConfig(
        iters=args.iters, strategy=args.strategy, tgamma=matrix,
        burnin=args.burnin, seed=args.seed, kernel=args.kernel,
    )
    traces = search.run_many(table, config, args.runs)
    best_key = search.aggregate_best_key(traces)
    summary = search.mixing_summary(traces, best_key)
    names = table.column_names()
    summary["best_model"] = key_to_model_string(best_key, names)

    out = Path(args.out)
    write_mixing_csv([summary], out.with_name(out.name + ".mixing.csv"))
    write_runs_csv(traces, best_key, out.with_name(out.name + ".runs.csv"))
    write_top_models_csv(traces, names, out.with_name(out.name + ".top_models.csv"))
    out.with_name(out.name + ".summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True)
    )
    print(render_mixing_text([summary]))
    print(f"best model: {summary['best_model']}")
    return 0


def _cmd_oracle(args) -> int:
    if args.enumerate:
        if not args.table:
            raise ConfigError("--enumerate needs --table")
        table = data.read_counts_csv(args.table)
        result = oracle.exhaustive_model_posterior(table, max_nodes=args.max_nodes)
        names = table.column_names()
        order = np.argsort(-result["probability"])[:10]
        print("top graphs by exhaustive Laplace posterior:")
        for i in order:
            graph = result["graphs"][int(i)]
            print(f"  {loglinear.model_string(graph, names):<40}"
                  f"{result['probability'][int(i)]:.4f}")
        return 0
    if not args.theorem:
        raise ConfigError("oracle needs --theorem or --enumerate")
    if args.theorem == "1":
        res = oracle.pairwise_trials(args.trials, seed=args.seed)
        print(f"pairwise trials: {args.trials}")
        print(f"max dependence gap: {res['max_gap']:.3e}")
        print(f"max pivotal-identity residual: {res['max_residual']:.3e}")
    else:
        corollary = args.theorem == "corollary"
        res = oracle.set_trials(args.trials, seed=args.seed, corollary=corollary)
        print(f"set-independence trials: {args.trials}")
        print(f"max set gap: {res['max_gap']:.3e}")
    return 0


def _cmd_report(args) -> int:
    blocks = []
    if args.cluster_trace:
        trace = dpcluster.load_trace(args.cluster_trace)
        part = profiles.representative_partition(trace)
        table = profiles.profile_table(trace, part, trace.reference_marginals())
        blocks.append(render_profile_text(table))
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_profile_csv(table, out / "profile.csv")
    summaries = []
    for path in args.search_summary or []:
        summaries.append(json.loads(Path(path).read_text()))
    if summaries:
        blocks.append(render_mixing_text(summaries))
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_mixing_csv(summaries, out / "mixing.csv")
    if not blocks:
        raise ConfigError("report needs --cluster-trace and/or --search-summary")
    print("\n\n".join(blocks))
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def run_pipeline(config: dict, out_dir: str | Path) -> dict:
    """Simulate/load -> cluster -> reduce -> co-selection -> search -> report.

    Covariates whose posterior median selection probability falls below the
    reduction threshold are dropped before the model search.  Returns the
    manifest (also written to out_dir/manifest.json) recording stage seeds,
    dropped covariates and a content hash per output file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(config.get("seed", 0))
    files: dict[str, str] = {}

    # data stage
    data_cfg = config.get("data", {})
    if "preset" in data_cfg:
        specs = simulate.builtin_specs()
        name = data_cfg["preset"]
        if name not in specs:
            raise ConfigError(f"unknown preset {name!r}")
        spec = simulate.with_seed(specs[name], seed + SIMULATE_OFFSET)
        ds = simulate.generate(spec)
        data.write_dataset_csv(ds, out / "data.csv")
    elif "csv" in data_cfg:
        ds = data.read_dataset_csv(data_cfg["csv"])
    elif "counts" in data_cfg:
        ds = data.expand_table(data.read_counts_csv(data_cfg["counts"]))
    else:
        raise ConfigError("pipeline config needs data.preset, data.csv or data.counts")

    # cluster stage
    cl = config.get("cluster", {})
    priors = dpcluster.PriorConfig(
        lam=float(cl.get("lam", 0.5)), c_max=int(cl.get("c_max", 50)),
        a_rho=float(cl.get("a_rho", 1.0)), b_rho=float(cl.get("b_rho", 1.0)),
    )
    trace = dpcluster.run_chain(
        ds, priors,
        burnin=int(cl.get("burnin", 500)), iters=int(cl.get("iters", 500)),
        thin=int(cl.get("thin", 1)), seed=seed + CLUSTER_OFFSET,
    )
    dpcluster.save_trace(trace, out / "trace")
    rho = dpcluster.posterior_rho_summary(trace)

    # reduction stage
    threshold = float(config.get("reduce", {}).get("rho_threshold", 0.01))
    names = ds.column_names()
    keep = [p for p in range(ds.p_count) if rho["median"][p] >= threshold]
    dropped = [names[p] for p in range(ds.p_count) if p not in keep]
    if not keep:
        raise ConfigError(f"no covariates remain (rho threshold {threshold})")
    if len(keep) < 2:
        raise ConfigError(
            f"covariate reduction left fewer than two covariates "
            f"(rho threshold {threshold})"
        )

    matrix = tgamma.restrict(tgamma.accumulate(trace), keep)
    tgamma.save_matrix(matrix, out / "tgamma.csv")

    # search stage
    se = config.get("search", {})
    strategy = se.get("strategy", "d")
    search_cfg = search.SearchConfig(
        iters=int(se.get("iters", 20000)),
        strategy=strategy,
        tgamma=None if search.STRATEGY_ALIASES.get(strategy, strategy) == "uniform"
        else matrix,
        burnin=int(se.get("burnin", 1000)),
        seed=seed + SEARCH_OFFSET,
        kernel=se.get("kernel", "marginal"),
    )
    reduced = ds.select(keep)
    table = data.build_table(reduced)
    traces = search.run_many(table, search_cfg, int(se.get("runs", 1)))
    best_key = search.aggregate_best_key(traces)
    summary = search.mixing_summary(traces, best_key)
    summary["best_model"] = key_to_model_string(best_key, reduced.column_names())
    write_mixing_csv([summary], out / "search.mixing.csv")
    write_runs_csv(traces, best_key, out / "search.runs.csv")
    write_top_models_csv(traces, reduced.column_names(), out / "search.top_models.csv")
    (out / "search.summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True)
    )

    # profile report
    part = profiles.representative_partition(trace)
    prof = profiles.profile_table(trace, part, data.marginals(ds))
    write_profile_csv(prof, out / "profile.csv")
    (out / "profile.txt").write_text(render_profile_text(prof) + "\n")

    for path in sorted(out.iterdir()):
        if path.is_file() and path.name != "manifest.json":
            files[path.name] = _sha256(path)
    manifest = {
        "config": config,
        "stage_seeds": {
            "simulate": seed + SIMULATE_OFFSET,
            "cluster": seed + CLUSTER_OFFSET,
            "search": [seed + SEARCH_OFFSET + r for r in range(len(traces))],
        },
        "rho_threshold": threshold,
        "dropped_covariates": dropped,
        "kept_covariates": [names[p] for p in keep],
        "best_model": summary["best_model"],
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _cmd_pipeline(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise ConfigError(f"no such config file: {cfg_path}")
    config = json.loads(cfg_path.read_text())
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = args.out or config.get("out_dir")
    if not out_dir:
        raise ConfigError("pipeline needs --out or out_dir in the config")
    manifest = run_pipeline(config, out_dir)
    print(f"kept covariates: {', '.join(manifest['kept_covariates'])}")
    if manifest["dropped_covariates"]:
        print(f"dropped: {', '.join(manifest['dropped_covariates'])}")
    print(f"best model: {manifest['best_model']}")
    print(f"manifest: {Path(out_dir) / 'manifest.json'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catdep",
        description="categorical dependence: clustering-informed log-linear model search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help="builtin preset name (sim1..sim5, ...)")
    group.add_argument("--spec", help="generator spec JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("cluster", help="run the clustering chain")
    p.add_argument("--data", required=True, help="subjects CSV")
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c-max", type=int, default=50)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--a-rho", type=float, default=1.0)
    p.add_argument("--b-rho", type=float, default=1.0)
    p.add_argument("--out", required=True, help="trace base path")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("tgamma", help="co-selection matrix from a trace")
    p.add_argument("--trace", required=True, help="trace base path")
    p.add_argument("--out", required=True, help="matrix CSV path")
    p.set_defaults(func=_cmd_tgamma)

    p = sub.add_parser("search", help="model-space MCMC over graphs")
    p.add_argument("--table", help="cell-count CSV")
    p.add_argument("--data", help="subjects CSV")
    p.add_argument("--strategy", default="a",
                   help="a|uniform, b|cluster_specific, c|combined_30_10, d|combined_20_20")
    p.add_argument("--tgamma", help="co-selection matrix CSV")
    p.add_argument("--kernel", default="marginal", choices=["marginal", "rj"])
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", required=True, help="report base path")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("oracle", help="exact independence checks and enumeration")
    p.add_argument("--theorem", choices=["1", "2", "corollary"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--enumerate", action="store_true")
    p.add_argument("--table", help="cell-count CSV for --enumerate")
    p.add_argument("--max-nodes", type=int, default=5)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("report", help="render profile and mixing reports")
    p.add_argument("--cluster-trace", help="trace base path")
    p.add_argument("--search-summary", nargs="*", help="search summary JSON files")
    p.add_argument("--out", help="directory for CSV output")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("pipeline", help="run the full pipeline from a config")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", help="override the config out_dir")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
