"""Scenario construction: geometry, radio constants, scheme selection, seeding.

Every randomized quantity in the simulator is drawn from a named stream so
that enabling one feature (e.g. shadowing) never perturbs the draws of
another (e.g. UE positions).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

VALID_SCHEMES = (
    "joint-mmse",
    "joint-mrc",
    "l-mmse",
    "p-mmse",
    "lp-mmse",
    "lp-mrc",
    "edu-mmse",
    "edu-pmmse",
)

# Fixed stream ids: adding a stream must never renumber existing ones.
_STREAM_IDS = {
    "oru-positions": 0,
    "ue-positions": 1,
    "shadowing": 2,
    "small-scale": 3,
    "estimation-noise": 4,
    "ga": 5,
    "ql": 6,
    "clustering": 7,
    "phase-drift": 8,
}


class ConfigError(ValueError):
    """Raised when a scenario configuration cannot be used."""


def rng_stream(master_seed: int, drop_index: int, tag: str) -> np.random.Generator:
    """Independent, reproducible generator for one concern of one drop."""
    if tag not in _STREAM_IDS:
        raise KeyError(f"unknown rng stream tag {tag!r}")
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(int(drop_index), _STREAM_IDS[tag])
    )
    return np.random.default_rng(seq)


@dataclass
class ScenarioConfig:
    """All simulation parameters. Defaults follow the dense urban setup.

    ``dl_pmax_mw`` is an assumption (no downlink budget is standard for this
    setup); it is applied as a per-O-RU radiated power cap.
    """

    area_side_m: float = 200.0
    num_oru: int = 100
    antennas_per_oru: int = 4
    num_ue: int = 24
    num_edu: int = 8
    carrier_hz: float = 2.0e9
    bandwidth_hz: float = 20.0e6
    noise_psd_dbm_hz: float = -174.0
    ul_power_mw: float = 200.0
    dl_pmax_mw: float = 200.0
    pathloss_model: str = "log-distance"  # or "power-law"
    pathloss_exponent: float = 3.67
    pathloss_intercept_db: float = -30.5
    shadow_sigma_db: float = 4.0
    asd_azimuth_deg: float = 15.0
    asd_elevation_deg: float = 15.0
    antenna_height_m: float = 10.0
    pilot_count: int = 24
    quantizer_bits: int | str = "infinite"
    fronthaul_ue_cap: int = 24
    mc_drops: int = 50
    mc_realizations: int = 100
    master_seed: int = 1
    schemes: tuple[str, ...] = ("joint-mmse", "joint-mrc", "l-mmse", "edu-mmse")

    def noise_power_mw(self) -> float:
        """Thermal noise power over the transmission bandwidth, in mW."""
        return 10.0 ** (self.noise_psd_dbm_hz / 10.0) * self.bandwidth_hz

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = list(self.schemes)
        return d


@dataclass
class Topology:
    """Geometric ground truth for one drop."""

    oru_positions: np.ndarray  # (L, 3), z = antenna height
    ue_positions: np.ndarray  # (K, 3), z = 0
    distance_matrix: np.ndarray  # (K, L), 3-D distances
    oru_pairwise: np.ndarray  # (L, L)
    edu_partition: np.ndarray  # (L,) EDU index per O-RU
    placement: str = "grid"  # "grid" or "random" (fallback)
    grid_shape: tuple[int, int] | None = None

    @property
    def num_oru(self) -> int:
        return self.oru_positions.shape[0]

    @property
    def num_ue(self) -> int:
        return self.ue_positions.shape[0]

    @property
    def num_edu(self) -> int:
        return int(self.edu_partition.max()) + 1

    def with_partition(self, genome: np.ndarray) -> "Topology":
        genome = np.asarray(genome, dtype=int)
        if genome.shape != (self.num_oru,):
            raise ValueError("partition genome length must equal the number of O-RUs")
        return replace(self, edu_partition=genome.copy())


def _grid_dims(L: int) -> tuple[int, int] | None:
    """Most-square (rows, cols) factorization of L, or None if only a
    degenerate 1-row strip exists for L >= 4."""
    best = None
    for r in range(1, int(math.isqrt(L)) + 1):
        if L % r == 0:
            best = (r, L // r)
    if best is None:
        return None
    if best[0] == 1 and L >= 4:
        return None
    return best


def validate_config(config: ScenarioConfig) -> list[str]:
    """Return every violated invariant as a message; empty list means ok."""
    errors: list[str] = []
    c = config
    if c.num_oru < 1:
        errors.append("num_oru must be >= 1")
    if c.num_edu < 1:
        errors.append("num_edu must be >= 1")
    if c.num_oru < c.num_edu:
        errors.append("num_oru must be >= num_edu")
    if c.num_ue < 1:
        errors.append("num_ue must be >= 1")
    if c.num_ue > c.pilot_count:
        errors.append(
            f"pilot shortage: num_ue={c.num_ue} exceeds pilot_count={c.pilot_count}"
        )
    if c.antennas_per_oru < 1:
        errors.append("antennas_per_oru must be >= 1")
    for name in ("ul_power_mw", "dl_pmax_mw", "bandwidth_hz", "carrier_hz", "area_side_m"):
        if getattr(c, name) <= 0:
            errors.append(f"{name} must be > 0")
    if c.shadow_sigma_db < 0:
        errors.append("shadow_sigma_db must be >= 0")
    if c.antenna_height_m <= 0:
        errors.append("antenna_height_m must be > 0")
    if c.pathloss_model not in ("log-distance", "power-law"):
        errors.append(f"unknown pathloss_model {c.pathloss_model!r}")
    if c.mc_drops < 1:
        errors.append("mc_drops must be >= 1")
    if c.mc_realizations < 1:
        errors.append("mc_realizations must be >= 1")
    if c.fronthaul_ue_cap < 0:
        errors.append("fronthaul_ue_cap must be >= 0")
    if c.quantizer_bits != "infinite":
        if not isinstance(c.quantizer_bits, int) or c.quantizer_bits < 1:
            errors.append('quantizer_bits must be an integer >= 1 or "infinite"')
    bad = [s for s in c.schemes if s not in VALID_SCHEMES]
    if bad:
        errors.append(
            f"unknown schemes {bad}; valid tags: {', '.join(VALID_SCHEMES)}"
        )
    if not c.schemes:
        errors.append("schemes must not be empty")
    return errors


def build_topology(config: ScenarioConfig, drop_index: int) -> Topology:
    """Place O-RUs and UEs and derive the distance matrices.

    O-RUs sit on a centered regular grid (cell centers of the most-square
    subdivision of the area); if no 2-D grid exists for L, placement falls
    back to uniform random and is flagged. O-RU placement does not depend on
    drop_index: the infrastructure is fixed, only UEs are re-dropped.
    """
    errors = validate_config(config)
    if errors:
        raise ConfigError("; ".join(errors))

    L, K = config.num_oru, config.num_ue
    side = config.area_side_m
    height = config.antenna_height_m

    dims = _grid_dims(L)
    if dims is not None:
        rows, cols = dims
        xs = (np.arange(cols) + 0.5) * side / cols
        ys = (np.arange(rows) + 0.5) * side / rows
        gx, gy = np.meshgrid(xs, ys)
        oru = np.column_stack([gx.ravel(), gy.ravel(), np.full(L, height)])
        placement, grid_shape = "grid", (rows, cols)
    else:
        rng = rng_stream(config.master_seed, 0, "oru-positions")
        xy = rng.uniform(0.0, side, size=(L, 2))
        oru = np.column_stack([xy, np.full(L, height)])
        placement, grid_shape = "random", None

    rng_ue = rng_stream(config.master_seed, drop_index, "ue-positions")
    ue_xy = rng_ue.uniform(0.0, side, size=(K, 2))
    ue = np.column_stack([ue_xy, np.zeros(K)])

    diff = ue[:, None, :] - oru[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    odiff = oru[:, None, :] - oru[None, :, :]
    opair = np.linalg.norm(odiff, axis=-1)

    # Default partition: balanced geographic clustering, replaced by the GA
    # when interleaved deployment is requested.
    from .deployment import clustered_baseline

    genome = clustered_baseline(
        oru[:, :2], config.num_edu, rng_stream(config.master_seed, 0, "clustering")
    ).genome

    return Topology(
        oru_positions=oru,
        ue_positions=ue,
        distance_matrix=dist,
        oru_pairwise=opair,
        edu_partition=genome,
        placement=placement,
        grid_shape=grid_shape,
    )


def load_config(path: str) -> ScenarioConfig:
    """Load a JSON config file using the exact ScenarioConfig field names."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ScenarioConfig:
    known = {f for f in ScenarioConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "schemes" in raw:
        raw = dict(raw)
        raw["schemes"] = tuple(raw["schemes"])
    cfg = ScenarioConfig(**raw)
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def save_config(config: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
