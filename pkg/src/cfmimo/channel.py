"""Large-scale fading, spatial correlation, correlated Rayleigh channels, and
MMSE channel estimation with error covariances.

Conventions: powers in mW, gains linear, one (UE k, O-RU l) block per N
antennas. Arrays are indexed (k, l) or (realization, k, l).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig, Topology, rng_stream

QUAD_NODES = 40  # Gauss-Legendre nodes per angular axis
ANGLE_TRUNC_SIGMAS = 4.0  # angular densities truncated at +/- 4 std


def pathloss_db(d, exponent: float = 3.67, intercept_db: float = -30.5):
    """Distance-dependent channel gain in dB: intercept + slope*log10(d)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("pathloss requires d > 0")
    return intercept_db - 10.0 * exponent * np.log10(d)


def pathloss_linear(d, exponent: float = 3.67, intercept_db: float = -30.5):
    """Linear version of :func:`pathloss_db`."""
    return 10.0 ** (pathloss_db(d, exponent, intercept_db) / 10.0)


def powerlaw_gain(d, exponent: float = 3.67):
    """Alternative bare power-law gain d**(-exponent)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("power-law gain requires d > 0")
    return d ** (-exponent)


def sample_shadowing(shape, sigma_db: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. zero-mean Gaussian shadow fading in dB."""
    if sigma_db < 0:
        raise ValueError("sigma_db must be >= 0")
    return rng.normal(0.0, sigma_db, size=shape) if sigma_db > 0 else np.zeros(shape)


def large_scale_gain(
    dist: np.ndarray,
    shadow_db: np.ndarray,
    model: str = "log-distance",
    exponent: float = 3.67,
    intercept_db: float = -30.5,
) -> np.ndarray:
    """Linear channel gain beta from distance and shadow fading."""
    if model == "log-distance":
        pl = pathloss_db(dist, exponent, intercept_db)
        return 10.0 ** ((pl + shadow_db) / 10.0)
    if model == "power-law":
        return powerlaw_gain(dist, exponent) * 10.0 ** (shadow_db / 10.0)
    raise ValueError(f"unknown pathloss model {model!r}")


def _axis_nodes(center: np.ndarray, std: float, n_nodes: int):
    """Quadrature nodes/weights for a Gaussian axis truncated at +/-4 std.

    Returns nodes (P, n) and unnormalized weights (P, n) for P centers.
    A zero std collapses to a single point mass at the center.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if std == 0.0:
        return center[:, None], np.ones((center.size, 1))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = ANGLE_TRUNC_SIGMAS * std
    nodes = center[:, None] + half * x[None, :]
    pdf = np.exp(-0.5 * ((nodes - center[:, None]) / std) ** 2)
    weights = w[None, :] * pdf
    return nodes, weights


def spatial_correlation_batch(
    nominal_azimuth: np.ndarray,
    nominal_elevation: np.ndarray,
    asd_azimuth: float,
    asd_elevation: float,
    num_antennas: int,
    beta: np.ndarray,
    n_nodes: int = QUAD_NODES,
) -> np.ndarray:
    """Spatial correlation matrices for a batch of (UE, O-RU) links.

    Entry (m, n) of each matrix is
    ``beta * E[exp(j*pi*(m-n)*sin(az)*cos(el))]`` with independent Gaussian
    azimuth/elevation scattering around the nominal geometric angles,
    evaluated by fixed-node Gauss-Legendre quadrature on the truncated
    supports. Weights are normalized so the diagonal is exactly beta, making
    trace(R) = N*beta by construction.

    Returns an array of shape (P, N, N), Hermitian PSD.
    """
    az = np.atleast_1d(np.asarray(nominal_azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(nominal_elevation, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el)) and np.all(np.isfinite(beta))):
        raise ValueError("non-finite input to spatial correlation")
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    P = az.size
    N = num_antennas

    az_nodes, az_w = _axis_nodes(az, asd_azimuth, n_nodes)
    el_nodes, el_w = _axis_nodes(el, asd_elevation, n_nodes)

    # Joint weights over the 2-D grid, normalized per link.
    w2 = az_w[:, :, None] * el_w[:, None, :]
    w2 /= w2.sum(axis=(1, 2), keepdims=True)

    # Effective horizontal wavenumber term sin(az)*cos(el) per node pair.
    sc = np.sin(az_nodes)[:, :, None] * np.cos(el_nodes)[:, None, :]

    offsets = np.arange(N)
    # r[p, d] = E[exp(j*pi*d*sin(az)*cos(el))] for antenna offset d
    r = np.empty((P, N), dtype=complex)
    for d in offsets:
        r[:, d] = (w2 * np.exp(1j * np.pi * d * sc)).sum(axis=(1, 2))

    idx = offsets[:, None] - offsets[None, :]  # (N, N) of m-n
    R = np.where(idx >= 0, r[:, np.abs(idx)], np.conj(r[:, np.abs(idx)]))
    R = R * beta[:, None, None]
    return 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))


def spatial_correlation(
    nominal_azimuth: float,
    nominal_elevation: float,
    asd_azimuth: float,
    asd_elevation: float,
    num_antennas: int,
    beta: float,
    n_nodes: int = QUAD_NODES,
) -> np.ndarray:
    """Single-link convenience wrapper around :func:`spatial_correlation_batch`."""
    return spatial_correlation_batch(
        np.array([nominal_azimuth]),
        np.array([nominal_elevation]),
        asd_azimuth,
        asd_elevation,
        num_antennas,
        np.array([beta]),
        n_nodes,
    )[0]


def correlation_factor(R: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root of R (batched over leading axes)."""
    vals, vecs = np.linalg.eigh(R)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals).all(axis=-1))
        raise ValueError(f"correlation factorization failed for block {bad[0]}")
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)[..., None, :] @ np.conj(np.swapaxes(vecs, -1, -2))


def sample_channel(
    sqrt_R: np.ndarray, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Correlated circular-Gaussian channel draws h = R^(1/2) g.

    ``sqrt_R`` has shape (..., N, N); returns (..., N) or (size, ..., N).
    """
    shape = sqrt_R.shape[:-1]
    if size is not None:
        shape = (size,) + shape
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    if size is None:
        return np.einsum("...nm,...m->...n", sqrt_R, g)
    return np.einsum("...nm,t...m->t...n", sqrt_R, g)


def mmse_filters(
    R: np.ndarray, pilot_power_mw: float, pilot_len: int, noise_mw: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-link MMSE estimation filter and second-order statistics.

    With pilot observation y = sqrt(p*tau)h + n, n ~ CN(0, noise*I):
    returns (W, Phi, C) where hhat = W @ y, Phi = Cov(hhat) and
    C = R - Phi is the error covariance.
    """
    if noise_mw <= 0:
        raise ValueError("noise power must be > 0")
    ptau = pilot_power_mw * pilot_len
    N = R.shape[-1]
    A = ptau * R + noise_mw * np.eye(N)
    Ainv_R = np.linalg.solve(A, R)  # (p*tau*R + s2 I)^{-1} R, batched
    W = np.sqrt(ptau) * np.swapaxes(np.conj(Ainv_R), -1, -2)
    # R Hermitian makes R A^{-1} R = (A^{-1} R)^H R
    Phi = ptau * np.swapaxes(np.conj(Ainv_R), -1, -2) @ R
    Phi = 0.5 * (Phi + np.conj(np.swapaxes(Phi, -1, -2)))
    C = R - Phi
    C = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
    return W, Phi, C


def estimate_channels(
    h: np.ndarray,
    W: np.ndarray,
    pilot_power_mw: float,
    pilot_len: int,
    noise_mw: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """MMSE channel estimates from noisy pilot observations.

    ``h`` has shape (T, K, L, N) and ``W`` (K, L, N, N); the pilot noise is
    drawn fresh per realization.
    """
    ptau = pilot_power_mw * pilot_len
    noise = (
        rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    ) * np.sqrt(noise_mw / 2.0)
    y = np.sqrt(ptau) * h + noise
    return np.einsum("klnm,tklm->tkln", W, y)


def apply_phase_drift(
    h: np.ndarray, max_deg: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate every O-RU's antenna block by a common random phase.

    Models per-O-RU oscillator drift of the calibration state: each O-RU l
    gets theta_l ~ U[-max_deg, +max_deg] applied to its whole N-antenna
    block. Accepts (K, L, N) for a single realization (one theta per O-RU)
    or (T, K, L, N) for a batch (independent thetas per realization).
    Returns the rotated copy and the drawn angles in radians.
    """
    if max_deg < 0:
        raise ValueError("max_deg must be >= 0")
    h = np.asarray(h)
    max_rad = np.deg2rad(max_deg)
    if h.ndim == 3:
        L = h.shape[1]
        theta = rng.uniform(-max_rad, max_rad, size=L) if max_rad > 0 else np.zeros(L)
        return h * np.exp(1j * theta)[None, :, None], theta
    if h.ndim == 4:
        T, _, L, _ = h.shape
        theta = (
            rng.uniform(-max_rad, max_rad, size=(T, L))
            if max_rad > 0
            else np.zeros((T, L))
        )
        return h * np.exp(1j * theta)[:, None, :, None], theta
    raise ValueError("expected (K, L, N) or (T, K, L, N) channel array")


@dataclass
class ChannelStatistics:
    """Second-order channel state for one drop."""

    beta: np.ndarray  # (K, L) linear gains
    shadow_db: np.ndarray  # (K, L)
    R: np.ndarray  # (K, L, N, N) spatial correlation
    sqrt_R: np.ndarray  # (K, L, N, N)
    W: np.ndarray  # (K, L, N, N) MMSE estimation filters
    Phi: np.ndarray  # (K, L, N, N) estimate covariance
    C: np.ndarray  # (K, L, N, N) estimation error covariance
    pilot_power_mw: float
    pilot_len: int
    noise_mw: float

    @property
    def num_ue(self) -> int:
        return self.beta.shape[0]

    @property
    def num_oru(self) -> int:
        return self.beta.shape[1]

    @property
    def antennas_per_oru(self) -> int:
        return self.R.shape[-1]


def build_statistics(
    config: ScenarioConfig, topology: Topology, drop_index: int
) -> ChannelStatistics:
    """Large-scale gains, correlation matrices, and estimation filters for a drop.

    Nominal scattering angles follow the geometry: azimuth is the UE bearing
    seen from the O-RU, elevation the (negative) depression angle set by the
    antenna height. Pilot power equals the uplink data power and the pilot
    length equals the number of orthogonal pilots.
    """
    K, L, N = config.num_ue, config.num_oru, config.antennas_per_oru
    rng_sh = rng_stream(config.master_seed, drop_index, "shadowing")
    shadow = sample_shadowing((K, L), config.shadow_sigma_db, rng_sh)
    beta = large_scale_gain(
        topology.distance_matrix,
        shadow,
        model=config.pathloss_model,
        exponent=config.pathloss_exponent,
        intercept_db=config.pathloss_intercept_db,
    )

    d_xy = topology.ue_positions[:, None, :2] - topology.oru_positions[None, :, :2]
    horiz = np.linalg.norm(d_xy, axis=-1)
    azimuth = np.arctan2(d_xy[..., 1], d_xy[..., 0])
    dz = topology.ue_positions[:, None, 2] - topology.oru_positions[None, :, 2]
    elevation = np.arctan2(dz, horiz)

    R = spatial_correlation_batch(
        azimuth.ravel(),
        elevation.ravel(),
        np.deg2rad(config.asd_azimuth_deg),
        np.deg2rad(config.asd_elevation_deg),
        N,
        beta.ravel(),
    ).reshape(K, L, N, N)

    sqrt_R = correlation_factor(R)
    noise = config.noise_power_mw()
    W, Phi, C = mmse_filters(R, config.ul_power_mw, config.pilot_count, noise)
    return ChannelStatistics(
        beta=beta,
        shadow_db=shadow,
        R=R,
        sqrt_R=sqrt_R,
        W=W,
        Phi=Phi,
        C=C,
        pilot_power_mw=config.ul_power_mw,
        pilot_len=config.pilot_count,
        noise_mw=noise,
    )


def sample_drop_channels(
    stats: ChannelStatistics,
    num_realizations: int,
    config: ScenarioConfig,
    drop_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Channel realizations and their MMSE estimates, (T, K, L, N) each."""
    rng_h = rng_stream(config.master_seed, drop_index, "small-scale")
    h = sample_channel(stats.sqrt_R, rng_h, size=num_realizations)
    rng_e = rng_stream(config.master_seed, drop_index, "estimation-noise")
    hhat = estimate_channels(
        h, stats.W, stats.pilot_power_mw, stats.pilot_len, stats.noise_mw, rng_e
    )
    return h, hhat


def dump_statistics_csv(stats: ChannelStatistics, path: str) -> None:
    """Debug dump of the large-scale gain matrix (row = UE, col = O-RU)."""
    header = (
        f"# large-scale linear gains, {stats.num_ue} UEs x {stats.num_oru} O-RUs\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        np.savetxt(fh, stats.beta, delimiter=",")


def dump_correlation_npz(stats: ChannelStatistics, path: str) -> None:
    """Binary dump of the correlation blocks for debugging.

    Stores ``R`` with shape (num_ue, num_oru, N, N), row-major, plus the
    ``beta`` matrix; load with ``numpy.load``.
    """
    np.savez_compressed(path, R=stats.R, beta=stats.beta)
