"""Campaign orchestration: drops, scheme sweeps, CDF aggregation, file output.

A drop is one UE placement plus its shadowing; within a drop the SINR
expectations are estimated over ``mc_realizations`` small-scale channel
draws. Campaigns aggregate per-drop sum SE into CDFs and summary statistics.
Everything is a pure function of (master_seed, drop_index, stream tag), so
drops can run in any order or in parallel without changing results.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .association import EduSinrTable, QlConfig, ql_associate
from .channel import build_statistics, sample_drop_channels
from .deployment import GaConfig, clustered_baseline, ga_optimize
from .power import uplink_power
from .scenario import ScenarioConfig, Topology, build_topology, rng_stream
from .transceiver import (
    SCHEMES,
    Association,
    SinrReport,
    downlink_sinr,
    uplink_sinr,
)

LINKS = ("ul", "dl")


@dataclass
class DropOptions:
    """Per-drop behavior switches shared by the CLI and campaign loop."""

    links: tuple[str, ...] = LINKS
    association_mode: str = "all"  # "all" | "ql" | "file"
    association_delta: np.ndarray | None = None  # (K, L) for "file"
    phase_drift_deg: float = 0.0
    quantizer_bits: int | str | None = None  # None -> config value
    ql_config: QlConfig | None = None


@dataclass
class DropResult:
    drop_index: int
    reports: dict[str, dict[str, SinrReport]]  # scheme -> link -> report
    genome: np.ndarray
    association_delta: np.ndarray  # (K, L) DCC association used
    metadata: dict = field(default_factory=dict)


def _dcc_association(
    config: ScenarioConfig,
    topology: Topology,
    stats,
    options: DropOptions,
    drop_index: int,
) -> tuple[Association, dict]:
    K, L = config.num_ue, config.num_oru
    if options.association_mode == "all":
        return Association.all_serve(K, L), {}
    if options.association_mode == "file":
        if options.association_delta is None:
            raise ValueError("association_mode 'file' needs association_delta")
        return Association(options.association_delta), {}
    if options.association_mode == "ql":
        genome = topology.edu_partition
        table = EduSinrTable.from_statistics(
            stats, genome, uplink_power(K, config.ul_power_mw), stats.noise_mw
        )
        qcfg = options.ql_config or QlConfig(fronthaul_ue_cap=config.fronthaul_ue_cap)
        result = ql_associate(
            table.r_sum,
            K,
            topology.num_edu,
            qcfg,
            rng_stream(config.master_seed, drop_index, "ql"),
        )
        assoc = Association.from_edu(result.best_delta, genome)
        meta = {
            "ql_best_r_sum": result.best_r_sum,
            "ql_r_sum_all": result.r_sum_all,
        }
        return assoc, meta
    raise ValueError(f"unknown association mode {options.association_mode!r}")


def run_drop(
    config: ScenarioConfig,
    drop_index: int,
    genome: np.ndarray | None = None,
    options: DropOptions | None = None,
) -> DropResult:
    """Simulate one drop for every enabled scheme.

    Builds topology and channel statistics, resolves the dynamic-cluster
    association, draws the realization batch, and evaluates uplink and/or
    downlink SINR per scheme. Deterministic in (master_seed, drop_index).
    """
    options = options or DropOptions()
    try:
        topology = build_topology(config, drop_index)
        if genome is not None:
            topology = topology.with_partition(genome)
        stats = build_statistics(config, topology, drop_index)
        all_serve = Association.all_serve(config.num_ue, config.num_oru)
        dcc, meta = _dcc_association(config, topology, stats, options, drop_index)

        h, hhat = sample_drop_channels(
            stats, config.mc_realizations, config, drop_index
        )
        p_ul = uplink_power(config.num_ue, config.ul_power_mw)
        qbits = (
            config.quantizer_bits
            if options.quantizer_bits is None
            else options.quantizer_bits
        )

        reports: dict[str, dict[str, SinrReport]] = {}
        for scheme in config.schemes:
            assoc = dcc if SCHEMES[scheme].dcc else all_serve
            per_link: dict[str, SinrReport] = {}
            if "ul" in options.links:
                per_link["ul"] = uplink_sinr(
                    scheme,
                    h,
                    hhat,
                    stats.C,
                    assoc,
                    topology.edu_partition,
                    p_ul,
                    stats.noise_mw,
                    quantizer_bits=qbits,
                )
            if "dl" in options.links:
                drift_rng = rng_stream(config.master_seed, drop_index, "phase-drift")
                dl = downlink_sinr(
                    scheme,
                    h,
                    hhat,
                    stats.C,
                    assoc,
                    topology.edu_partition,
                    stats.beta,
                    p_ul,
                    stats.noise_mw,
                    stats.noise_mw,
                    config.dl_pmax_mw,
                    phase_drift_deg=options.phase_drift_deg,
                    drift_rng=drift_rng,
                )
                per_link["dl"] = dl.report
            reports[scheme] = per_link

        meta["placement"] = topology.placement
        return DropResult(
            drop_index=drop_index,
            reports=reports,
            genome=topology.edu_partition.copy(),
            association_delta=dcc.delta.copy(),
            metadata=meta,
        )
    except Exception as exc:
        raise RuntimeError(f"drop {drop_index} failed: {exc}") from exc


def resolve_partition(
    config: ScenarioConfig,
    deployment_mode: str = "clustered",
    ga_config: GaConfig | None = None,
    genome_file: str | None = None,
) -> tuple[np.ndarray, dict]:
    """Compute the O-RU to EDU partition once per campaign.

    The O-RU layout does not depend on the drop index, so the partition is
    shared by all drops.
    """
    topology = build_topology(config, 0)
    if deployment_mode == "clustered":
        part = clustered_baseline(
            topology.oru_positions[:, :2],
            config.num_edu,
            rng_stream(config.master_seed, 0, "clustering"),
        )
        return part.genome, {"deployment": "clustered"}
    if deployment_mode == "ga":
        result = ga_optimize(
            topology.oru_pairwise,
            config.num_edu,
            ga_config or GaConfig(),
            rng_stream(config.master_seed, 0, "ga"),
        )
        return result.partition.genome, {
            "deployment": "ga",
            "fitness": result.partition.fitness,
            "history": result.history.tolist(),
        }
    if deployment_mode == "file":
        if genome_file is None:
            raise ValueError("deployment 'file' needs a partition file")
        genome = _load_partition_file(genome_file, config.num_oru)
        return genome, {"deployment": "file", "path": genome_file}
    raise ValueError(f"unknown deployment mode {deployment_mode!r}")


def _load_partition_file(path: str, num_oru: int) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        if path.endswith(".json"):
            mapping = json.load(fh)
            genome = np.zeros(num_oru, dtype=int)
            for oru, edu in mapping.items():
                genome[int(oru)] = int(edu)
            return genome
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        rows = [r for r in reader if r and r[0] != "oru_index"]
    genome = np.zeros(num_oru, dtype=int)
    for oru, edu in rows:
        genome[int(oru)] = int(edu)
    return genome


@dataclass
class CampaignResult:
    config: ScenarioConfig
    genome: np.ndarray
    drops: list[DropResult]
    failures: list[tuple[int, str]]
    summary: dict

    def sum_se(self, scheme: str, link: str) -> np.ndarray:
        return np.array(
            [d.reports[scheme][link].sum_se for d in self.drops if scheme in d.reports]
        )


def _cdf_grid(samples: np.ndarray) -> dict:
    xs = np.sort(samples)
    ps = np.arange(1, xs.size + 1) / xs.size
    return {"x": xs.tolist(), "p": ps.tolist()}


def summarize(
    config: ScenarioConfig, drops: list[DropResult], failures
) -> dict:
    """Per-scheme/link summary of per-drop sum SE distributions."""
    schemes = list(config.schemes)
    links = sorted({link for d in drops for r in d.reports.values() for link in r})
    out: dict = {
        "config": config.to_dict(),
        "code_version": __version__,
        "drops_completed": len(drops),
        "failures": [{"drop": i, "error": msg} for i, msg in failures],
        "schemes": {},
    }
    medians: dict[tuple[str, str], float] = {}
    for scheme in schemes:
        out["schemes"][scheme] = {}
        for link in links:
            sums = np.array(
                [d.reports[scheme][link].sum_se for d in drops if scheme in d.reports]
            )
            if sums.size == 0:
                continue
            medians[(scheme, link)] = float(np.median(sums))
            out["schemes"][scheme][link] = {
                "sum_se_per_drop": sums.tolist(),
                "median_sum_se": float(np.median(sums)),
                "mean_sum_se": float(np.mean(sums)),
                "p5_sum_se": float(np.percentile(sums, 5)),
                "p95_sum_se": float(np.percentile(sums, 95)),
                "cdf": _cdf_grid(sums),
            }
    for (scheme, link), med in medians.items():
        ref = medians.get(("joint-mmse", link))
        if ref:
            out["schemes"][scheme][link]["ratio_to_joint_mmse_median"] = med / ref
    return out


def _run_drop_task(args):
    config_dict, drop_index, genome, options = args
    from .scenario import config_from_dict

    try:
        return run_drop(config_from_dict(config_dict), drop_index, genome, options)
    except Exception as exc:
        return (drop_index, str(exc))


def run_campaign(
    config: ScenarioConfig,
    out_dir: str | None = None,
    deployment_mode: str = "ga",
    options: DropOptions | None = None,
    ga_config: GaConfig | None = None,
    genome_file: str | None = None,
    workers: int = 1,
) -> CampaignResult:
    """Execute all drops, aggregate CDFs, and optionally write result files.

    Individual drop failures are recorded and the campaign continues.
    """
    options = options or DropOptions()
    genome, deploy_meta = resolve_partition(
        config, deployment_mode, ga_config, genome_file
    )

    results: list[DropResult] = []
    failures: list[tuple[int, str]] = []
    indices = list(range(config.mc_drops))
    if workers > 1:
        tasks = [(config.to_dict(), i, genome, options) for i in indices]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for outcome in pool.map(_run_drop_task, tasks):
                if isinstance(outcome, DropResult):
                    results.append(outcome)
                else:
                    failures.append(outcome)
    else:
        for i in indices:
            try:
                results.append(run_drop(config, i, genome, options))
            except Exception as exc:
                failures.append((i, str(exc)))
    results.sort(key=lambda d: d.drop_index)

    summary = summarize(config, results, failures)
    summary["deployment"] = deploy_meta
    campaign = CampaignResult(
        config=config,
        genome=genome,
        drops=results,
        failures=failures,
        summary=summary,
    )
    if out_dir is not None:
        write_outputs(campaign, out_dir)
    return campaign


def _config_header(config: ScenarioConfig) -> list[str]:
    return [
        f"# cfmimo {__version__}",
        f"# config: {json.dumps(config.to_dict(), sort_keys=True)}",
        f"# master_seed: {config.master_seed}",
    ]


def write_outputs(campaign: CampaignResult, out_dir: str) -> dict[str, str]:
    """Write raw samples CSV, summary JSON, and the partition files."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "raw": os.path.join(out_dir, "raw_samples.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "partition_csv": os.path.join(out_dir, "partition.csv"),
        "partition_json": os.path.join(out_dir, "partition.json"),
    }
    cfg = campaign.config
    with open(paths["raw"], "w", encoding="utf-8", newline="") as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["drop", "scheme", "ue", "link", "sinr_db", "se_bpshz"])
        for drop in campaign.drops:
            for scheme, per_link in drop.reports.items():
                for link, report in per_link.items():
                    for k in range(report.se.size):
                        sinr_db = (
                            10.0 * np.log10(report.gamma[k])
                            if report.gamma[k] > 0
                            else ""
                        )
                        writer.writerow(
                            [
                                drop.drop_index,
                                scheme,
                                k,
                                link,
                                f"{sinr_db:.6f}" if sinr_db != "" else "",
                                f"{report.se[k]:.6f}",
                            ]
                        )
                    writer.writerow(
                        [drop.drop_index, scheme, "sum", link, "", f"{report.sum_se:.6f}"]
                    )
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(campaign.summary, fh, indent=2)
        fh.write("\n")
    with open(paths["partition_csv"], "w", encoding="utf-8", newline="") as fh:
        for line in _config_header(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["oru_index", "edu_index"])
        for i, m in enumerate(campaign.genome):
            writer.writerow([i, int(m)])
    with open(paths["partition_json"], "w", encoding="utf-8") as fh:
        json.dump({str(i): int(m) for i, m in enumerate(campaign.genome)}, fh, indent=2)
        fh.write("\n")
    return paths
