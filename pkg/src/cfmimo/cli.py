"""Command-line interface.

Subcommands: ``simulate`` (Monte Carlo campaign), ``deploy-ga`` (partition
optimization), ``associate-ql`` (association learning for one drop), and
``sweep`` (vary the EDU count or the deployment mode). Errors exit nonzero
with a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .association import EduSinrTable, QlConfig, ql_associate
from .channel import build_statistics
from .deployment import GaConfig, ga_optimize
from .harness import (
    DropOptions,
    _config_header,
    resolve_partition,
    run_campaign,
)
from .power import uplink_power
from .scenario import (
    VALID_SCHEMES,
    ConfigError,
    ScenarioConfig,
    build_topology,
    load_config,
    rng_stream,
)

USAGE_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(message, self.format_usage())


def _fail(message: str, usage: str | None = None) -> None:
    record = {"error": "usage", "detail": message}
    if usage:
        sys.stderr.write(usage)
    sys.stderr.write(json.dumps(record) + "\n")
    raise SystemExit(USAGE_EXIT)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON scenario config file")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", default="out", help="output directory")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--drops", type=int, help="override mc_drops")
    p.add_argument("--schemes", help="comma-separated scheme tags")
    p.add_argument(
        "--deployment",
        choices=("ga", "clustered", "file"),
        default="ga",
        help="how O-RUs are grouped into EDUs",
    )
    p.add_argument("--partition-file", help="partition CSV/JSON for --deployment file")
    p.add_argument(
        "--association",
        choices=("all", "ql", "file"),
        default="all",
        help="dynamic-cluster association source",
    )
    p.add_argument("--association-file", help="CSV for --association file")
    p.add_argument("--phase-drift-deg", type=float, default=0.0)
    p.add_argument("--quant-bits", help='integer or "infinite"')
    p.add_argument("--links", default="ul,dl", help="subset of ul,dl")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> _Parser:
    parser = _Parser(prog="cfmimo", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    _add_common(p_sim)
    _add_sim_flags(p_sim)

    p_ga = sub.add_parser("deploy-ga", help="optimize the O-RU to EDU partition")
    _add_common(p_ga)
    p_ga.add_argument("--generations", type=int)
    p_ga.add_argument("--population", type=int)

    p_ql = sub.add_parser("associate-ql", help="learn the UE-EDU association")
    _add_common(p_ql)
    p_ql.add_argument("--drop", type=int, default=0)
    p_ql.add_argument("--episodes", type=int)
    p_ql.add_argument(
        "--deployment", choices=("ga", "clustered", "file"), default="clustered"
    )
    p_ql.add_argument("--partition-file")

    p_sweep = sub.add_parser("sweep", help="run campaigns over a parameter range")
    _add_common(p_sweep)
    _add_sim_flags(p_sweep)
    p_sweep.add_argument(
        "--param", choices=("num_edu", "deployment"), default="num_edu"
    )
    p_sweep.add_argument("--values", help="comma list, e.g. 1,2,4,8")
    return parser


def _load(args) -> ScenarioConfig:
    if not os.path.exists(args.config):
        _fail(f"config file not found: {args.config}")
    try:
        cfg = load_config(args.config)
    except (ConfigError, json.JSONDecodeError) as exc:
        _fail(str(exc))
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _apply_sim_overrides(cfg: ScenarioConfig, args) -> tuple[ScenarioConfig, DropOptions]:
    if args.drops is not None:
        cfg.mc_drops = args.drops
    if args.schemes:
        tags = tuple(t.strip() for t in args.schemes.split(",") if t.strip())
        bad = [t for t in tags if t not in VALID_SCHEMES]
        if bad:
            _fail(
                f"unknown schemes {bad}; valid tags: {', '.join(VALID_SCHEMES)}"
            )
        cfg.schemes = tags
    links = tuple(t.strip() for t in args.links.split(",") if t.strip())
    if any(l not in ("ul", "dl") for l in links) or not links:
        _fail("--links must be a subset of ul,dl")
    qbits = None
    if args.quant_bits is not None:
        qbits = "infinite" if args.quant_bits == "infinite" else None
        if qbits is None:
            try:
                qbits = int(args.quant_bits)
            except ValueError:
                _fail('--quant-bits must be an integer or "infinite"')
    assoc_delta = None
    if args.association == "file":
        if not args.association_file:
            _fail("--association file requires --association-file")
        assoc_delta = _read_association_csv(
            args.association_file, cfg.num_ue, cfg.num_oru, cfg.num_edu
        )
    options = DropOptions(
        links=links,
        association_mode=args.association,
        association_delta=assoc_delta,
        phase_drift_deg=args.phase_drift_deg,
        quantizer_bits=qbits,
    )
    return cfg, options


def _read_association_csv(path: str, K: int, L: int, M: int) -> np.ndarray:
    """ue_index,edu_index,served rows expanded through the active partition."""
    delta_km = np.zeros((K, M), dtype=bool)
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        for row in reader:
            if not row or row[0] == "ue_index":
                continue
            k, m, served = int(row[0]), int(row[1]), int(row[2])
            delta_km[k, m] = bool(served)
    # Expansion to (K, L) happens against the campaign partition later; the
    # file therefore pins EDU-granularity associations.
    return delta_km


def cmd_simulate(args) -> int:
    cfg = _load(args)
    cfg, options = _apply_sim_overrides(cfg, args)
    if options.association_delta is not None:
        genome, _ = resolve_partition(
            cfg, args.deployment, genome_file=args.partition_file
        )
        options.association_delta = options.association_delta[:, genome]
    campaign = run_campaign(
        cfg,
        out_dir=args.out,
        deployment_mode=args.deployment,
        options=options,
        genome_file=args.partition_file,
        workers=args.workers,
    )
    print(f"wrote {args.out}/summary.json ({len(campaign.drops)} drops)")
    if campaign.failures:
        print(f"{len(campaign.failures)} drop(s) failed; see summary.json")
    return 0


def cmd_deploy_ga(args) -> int:
    cfg = _load(args)
    topo = build_topology(cfg, 0)
    ga_cfg = GaConfig()
    if args.generations:
        ga_cfg.generations = args.generations
    if args.population:
        ga_cfg.population_size = args.population
    result = ga_optimize(
        topo.oru_pairwise,
        cfg.num_edu,
        ga_cfg,
        rng_stream(cfg.master_seed, 0, "ga"),
    )
    os.makedirs(args.out, exist_ok=True)
    genome = result.partition.genome
    with open(os.path.join(args.out, "partition.json"), "w", encoding="utf-8") as fh:
        json.dump({str(i): int(m) for i, m in enumerate(genome)}, fh, indent=2)
        fh.write("\n")
    with open(
        os.path.join(args.out, "partition.csv"), "w", encoding="utf-8", newline=""
    ) as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["oru_index", "edu_index"])
        for i, m in enumerate(genome):
            writer.writerow([i, int(m)])
    with open(
        os.path.join(args.out, "fitness_trajectory.csv"), "w", encoding="utf-8", newline=""
    ) as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness"])
        for g, f in enumerate(result.history):
            writer.writerow([g, f"{f:.10e}"])
    print(
        f"partition fitness {result.partition.fitness:.6e}; wrote {args.out}/partition.json"
    )
    return 0


def cmd_associate_ql(args) -> int:
    cfg = _load(args)
    genome, _ = resolve_partition(
        cfg, args.deployment, genome_file=args.partition_file
    )
    topo = build_topology(cfg, args.drop).with_partition(genome)
    stats = build_statistics(cfg, topo, args.drop)
    table = EduSinrTable.from_statistics(
        stats, genome, uplink_power(cfg.num_ue, cfg.ul_power_mw), stats.noise_mw
    )
    qcfg = QlConfig(fronthaul_ue_cap=cfg.fronthaul_ue_cap)
    if args.episodes:
        qcfg.episodes = args.episodes
    result = ql_associate(
        table.r_sum,
        cfg.num_ue,
        cfg.num_edu,
        qcfg,
        rng_stream(cfg.master_seed, args.drop, "ql"),
    )
    os.makedirs(args.out, exist_ok=True)
    with open(
        os.path.join(args.out, "association.csv"), "w", encoding="utf-8", newline=""
    ) as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["ue_index", "edu_index", "served"])
        for k in range(cfg.num_ue):
            for m in range(cfg.num_edu):
                writer.writerow([k, m, int(result.best_delta[k, m])])
    with open(
        os.path.join(args.out, "reward_trajectory.csv"), "w", encoding="utf-8", newline=""
    ) as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_reward", "best_r_sum"])
        for e, (r, b) in enumerate(zip(result.episode_rewards, result.episode_best)):
            writer.writerow([e, f"{r:.6e}", f"{b:.6f}"])
    qstats = {
        "config": cfg.to_dict(),
        "q_table_sizes": result.q_table_sizes,
        "best_r_sum": result.best_r_sum,
        "r_sum_all": result.r_sum_all,
    }
    with open(os.path.join(args.out, "qtable_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(qstats, fh, indent=2)
        fh.write("\n")
    print(
        f"best R_sum {result.best_r_sum:.4f} of all-serve {result.r_sum_all:.4f}; "
        f"wrote {args.out}/association.csv"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    cfg, options = _apply_sim_overrides(cfg, args)
    summaries = {}
    if args.param == "num_edu":
        if not args.values:
            _fail("--param num_edu requires --values")
        try:
            values = [int(v) for v in args.values.split(",")]
        except ValueError:
            _fail("--values must be a comma list of integers")
        for m in values:
            sub_cfg = ScenarioConfig(**{**cfg.to_dict(), "num_edu": m})
            sub_cfg.schemes = cfg.schemes
            out = os.path.join(args.out, f"num_edu={m}")
            campaign = run_campaign(
                sub_cfg,
                out_dir=out,
                deployment_mode=args.deployment,
                options=options,
                workers=args.workers,
            )
            summaries[f"num_edu={m}"] = campaign.summary
    else:
        for mode in ("ga", "clustered"):
            out = os.path.join(args.out, f"deployment={mode}")
            campaign = run_campaign(
                cfg, out_dir=out, deployment_mode=mode, options=options,
                workers=args.workers,
            )
            summaries[f"deployment={mode}"] = campaign.summary
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summaries, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}/sweep_summary.json")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "deploy-ga": cmd_deploy_ga,
        "associate-ql": cmd_associate_ql,
        "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except SystemExit:
        raise
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": "config", "detail": str(exc)}) + "\n")
        return USAGE_EXIT
    except Exception as exc:  # operational failure, not usage
        sys.stderr.write(json.dumps({"error": "runtime", "detail": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
