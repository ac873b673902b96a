"""Combiners, precoders, and use-and-then-forget SINR evaluation.

Every scheme produces a stacked (K, L, N) combiner/precoder per realization;
detection units (the blocks) are the full array, the EDUs, or single O-RUs
depending on the scheme. SINR expectations are estimated by sample means
over the realization batch, with the transceivers recomputed per realization
from that realization's channel estimates only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import apply_phase_drift
from .power import downlink_power

COND_LIMIT = 1e12  # conditioning guard for the regularized Gram solves


@dataclass(frozen=True)
class SchemeSpec:
    granularity: str  # "joint" | "edu" | "oru"
    rule: str  # "mmse" | "mrc"
    dcc: bool  # uses the dynamic-cluster association instead of all-serve


SCHEMES: dict[str, SchemeSpec] = {
    "joint-mmse": SchemeSpec("joint", "mmse", False),
    "joint-mrc": SchemeSpec("joint", "mrc", False),
    "l-mmse": SchemeSpec("oru", "mmse", False),
    "p-mmse": SchemeSpec("joint", "mmse", True),
    "lp-mmse": SchemeSpec("oru", "mmse", True),
    "lp-mrc": SchemeSpec("oru", "mrc", True),
    "edu-mmse": SchemeSpec("edu", "mmse", False),
    "edu-pmmse": SchemeSpec("edu", "mmse", True),
}


@dataclass(frozen=True)
class Association:
    """Binary UE-O-RU service indicators and derived serving sets."""

    delta: np.ndarray  # (K, L) bool

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=bool))

    @classmethod
    def all_serve(cls, num_ue: int, num_oru: int) -> "Association":
        return cls(np.ones((num_ue, num_oru), dtype=bool))

    @classmethod
    def from_edu(cls, delta_km: np.ndarray, genome: np.ndarray) -> "Association":
        """Expand an EDU-granularity (K, M) association to O-RU granularity."""
        delta_km = np.asarray(delta_km, dtype=bool)
        genome = np.asarray(genome, dtype=int)
        return cls(delta_km[:, genome])

    @property
    def num_ue(self) -> int:
        return self.delta.shape[0]

    @property
    def num_oru(self) -> int:
        return self.delta.shape[1]

    def serving_orus(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.delta[k])

    def served_ues(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.delta[:, l])

    def edu_consistent(self, genome: np.ndarray) -> bool:
        """True if every UE's indicator is constant over each EDU's O-RUs."""
        genome = np.asarray(genome, dtype=int)
        for m in range(genome.max() + 1):
            cols = self.delta[:, genome == m]
            if cols.size and np.any(cols.any(axis=1) != cols.all(axis=1)):
                return False
        return True


@dataclass
class SinrReport:
    """Per-UE SINR decomposition for one scheme and link direction."""

    scheme: str
    link: str  # "ul" | "dl"
    signal: np.ndarray  # (K,) coherent numerator terms
    interference: np.ndarray  # (K,)
    noise: np.ndarray  # (K,)
    gamma: np.ndarray  # (K,)
    se: np.ndarray  # (K,) bits/s/Hz

    @property
    def sum_se(self) -> float:
        return float(self.se.sum())


def se_from_sinr(gamma):
    """Spectral efficiency log2(1 + gamma), no overhead prefactor."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR must be >= 0")
    return np.log2(1.0 + gamma)


def quantize(samples: np.ndarray, bits: int | str) -> np.ndarray:
    """Uniform mid-rise quantizer applied per real/imag component.

    The +/-4-standard-deviation range of the batch sets the step size
    (2^bits cells across it); values beyond the range snap to the nearest
    lattice point rather than saturating, so the reconstruction error is at
    most half a step everywhere. ``bits="infinite"`` is the identity, as is
    a batch whose spread is negligible against its magnitude.
    """
    if bits == "infinite":
        return samples
    bits = int(bits)
    if bits < 1:
        raise ValueError("bits must be >= 1 or 'infinite'")
    x = np.asarray(samples)

    def _q(v: np.ndarray) -> np.ndarray:
        sigma = v.std()
        step = 8.0 * sigma / (2**bits)
        peak = np.abs(v).max() if v.size else 0.0
        if sigma == 0.0 or step * 2.0**52 <= peak:
            return v
        return (np.floor(v / step) + 0.5) * step

    if np.iscomplexobj(x):
        return _q(x.real) + 1j * _q(x.imag)
    return _q(x)


def scheme_blocks(granularity: str, genome: np.ndarray, num_oru: int) -> list[np.ndarray]:
    """O-RU index groups forming the detection/precoding units of a scheme."""
    if granularity == "joint":
        return [np.arange(num_oru)]
    if granularity == "oru":
        return [np.array([l]) for l in range(num_oru)]
    if granularity == "edu":
        genome = np.asarray(genome, dtype=int)
        return [np.flatnonzero(genome == m) for m in range(genome.max() + 1)]
    raise ValueError(f"unknown granularity {granularity!r}")


def _solve_regularized(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for the noise-regularized Gram matrix A.

    The sigma^2 ridge makes singularity unreachable in exact arithmetic; if a
    factorization still fails, a diagonal jitter of 1e-12 * trace/N is added
    once and the event reported.
    """
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        n = A.shape[-1]
        jitter = 1e-12 * np.trace(A).real / n
        warnings.warn(
            f"ill-conditioned combiner solve (cond > {COND_LIMIT:.0e}); "
            f"added diagonal jitter {jitter:.3e}"
        )
        return np.linalg.solve(A + jitter * np.eye(n), B)


class CombinerWorkspace:
    """Per-drop preparation shared across realizations for one scheme.

    Precomputes the block antenna layout, the association masks, and the
    power-weighted error-covariance sums so each realization only pays for
    the Gram assembly and solve.
    """

    def __init__(
        self,
        spec: SchemeSpec,
        association: Association,
        genome: np.ndarray,
        C: np.ndarray,
        p_mw: np.ndarray,
        noise_mw: float,
    ):
        self.spec = spec
        self.assoc = association
        K, L = association.delta.shape
        self.K, self.L = K, L
        self.N = C.shape[-1]
        self.p = np.asarray(p_mw, dtype=float)
        self.noise = float(noise_mw)
        self.blocks = scheme_blocks(spec.granularity, genome, L)
        self.num_units = len(self.blocks)
        # Membership matrix mapping O-RU partial sums onto detection units.
        self.unit_of = np.empty(L, dtype=int)
        for m, b in enumerate(self.blocks):
            self.unit_of[b] = m
        self.Emat = np.zeros((L, self.num_units))
        self.Emat[np.arange(L), self.unit_of] = 1.0

        if spec.rule == "mmse":
            # sum_i p_i C_{i,l}: the mask acts identically on every term, so
            # the masked error-covariance sum is a submatrix of this.
            self.Csum = np.einsum("i,ilnm->lnm", self.p, C)
            self._prepare_mmse_layout()

    def _prepare_mmse_layout(self):
        delta = self.assoc.delta
        self.block_plans = []
        for b in self.blocks:
            sub = delta[:, b]  # (K, |b|)
            rows_uniform = np.all(sub.any(axis=1) == sub.all(axis=1))
            all_on = bool(sub.all())
            served = np.flatnonzero(sub.any(axis=1))
            self.block_plans.append(
                {
                    "orus": b,
                    "shared": all_on or rows_uniform,
                    "served": served,
                    "sub": sub,
                }
            )

    def _block_csum(self, orus: np.ndarray) -> np.ndarray:
        A = orus.size * self.N
        out = np.zeros((A, A), dtype=complex)
        for j, l in enumerate(orus):
            s = j * self.N
            out[s : s + self.N, s : s + self.N] = self.Csum[l]
        return out

    def combiners(self, hhat_t: np.ndarray) -> np.ndarray:
        """Stacked combiner/precoder vectors (K, L, N) for one realization."""
        if self.spec.rule == "mrc":
            return np.where(self.assoc.delta[:, :, None], hhat_t, 0.0)
        return self._mmse_combiners(hhat_t)

    def _mmse_combiners(self, hhat_t: np.ndarray) -> np.ndarray:
        K, N = self.K, self.N
        v = np.zeros_like(hhat_t)
        for plan in self.block_plans:
            orus = plan["orus"]
            A_dim = orus.size * N
            Hb = hhat_t[:, orus, :].reshape(K, A_dim).T  # (A, K)
            if plan["shared"]:
                served = plan["served"]
                if served.size == 0:
                    continue
                G = (Hb * self.p) @ np.conj(Hb.T)
                G += self._block_csum(orus)
                G[np.diag_indices_from(G)] += self.noise
                sol = _solve_regularized(G, Hb[:, served])
                sol = sol * self.p[served]
                v[served[:, None], orus[None, :], :] += sol.T.reshape(
                    served.size, orus.size, N
                )
            else:
                # Per-UE antenna subsets inside the block.
                csum_full = self._block_csum(orus)
                for k in range(K):
                    mask = np.repeat(plan["sub"][k], N)
                    if not mask.any():
                        continue
                    Hs = Hb[mask]
                    G = (Hs * self.p) @ np.conj(Hs.T)
                    G += csum_full[np.ix_(mask, mask)]
                    G[np.diag_indices_from(G)] += self.noise
                    sol = self.p[k] * _solve_regularized(G, Hs[:, k])
                    full = np.zeros(A_dim, dtype=complex)
                    full[mask] = sol
                    v[k, orus, :] = full.reshape(orus.size, N)
        return v


def mrc_combiner(hhat_t: np.ndarray, association: Association) -> np.ndarray:
    """Association-masked conjugate matched filter, stacked (K, L, N)."""
    return np.where(association.delta[:, :, None], hhat_t, 0.0)


def mmse_combiner_edu(
    hhat_t: np.ndarray,
    C: np.ndarray,
    association: Association,
    genome: np.ndarray,
    p_mw: np.ndarray,
    noise_mw: float,
    granularity: str = "edu",
) -> np.ndarray:
    """Per-unit regularized MMSE combiners for one realization.

    The Gram matrix sums the estimate outer products and error covariances of
    all UEs, masked to the target UE's serving antennas within the unit; a
    single unit spanning all O-RUs yields the centralized joint solution and
    per-O-RU units the fully distributed one.
    """
    spec = SchemeSpec(granularity, "mmse", False)
    ws = CombinerWorkspace(spec, association, genome, C, p_mw, noise_mw)
    return ws.combiners(hhat_t)


def _unit_coefficients(
    v_t: np.ndarray, h_t: np.ndarray, Emat: np.ndarray
) -> np.ndarray:
    """Per-unit detection coefficients g[k, i, m] = v_k(m)^H h_i(m)."""
    per_oru = np.einsum("kln,iln->kil", np.conj(v_t), h_t)
    return per_oru @ Emat


def uplink_sinr(
    scheme: str,
    h: np.ndarray,
    hhat: np.ndarray,
    C: np.ndarray,
    association: Association,
    genome: np.ndarray,
    p_mw: np.ndarray,
    noise_mw: float,
    quantizer_bits: int | str = "infinite",
) -> SinrReport:
    """Uplink use-and-then-forget SINR/SE per UE, Monte Carlo over realizations.

    Per realization the combiners are rebuilt from that realization's
    estimates, the per-unit detected-symbol coefficients are (optionally)
    quantized, summed over units, and the coherent/interference/noise
    moments accumulated.
    """
    spec = SCHEMES[scheme]
    T, K = h.shape[0], h.shape[1]
    if T < 2:
        raise ValueError("need at least 2 realizations")
    p = np.asarray(p_mw, dtype=float)
    ws = CombinerWorkspace(spec, association, genome, C, p, noise_mw)

    num = np.zeros(K, dtype=complex)
    isq = np.zeros((K, K))
    nrm = np.zeros(K)
    for t in range(T):
        v = ws.combiners(hhat[t])
        g = _unit_coefficients(v, h[t], ws.Emat)
        if quantizer_bits != "infinite":
            g = quantize(g, quantizer_bits)
        s = g.sum(axis=-1)
        num += np.diag(s)
        isq += np.abs(s) ** 2
        nrm += np.einsum("kln->k", np.abs(v) ** 2)
    num /= T
    isq /= T
    nrm /= T

    signal = p * np.abs(num) ** 2
    interference = (isq * p[None, :]).sum(axis=1) - p * isq[np.arange(K), np.arange(K)]
    noise = noise_mw * nrm
    denom = interference + noise
    served = association.delta.any(axis=1)
    if np.any(denom[served] <= 0):
        raise AssertionError("nonpositive SINR denominator for a served UE")
    gamma = np.zeros(K)
    gamma[served] = signal[served] / denom[served]
    return SinrReport(
        scheme=scheme,
        link="ul",
        signal=signal,
        interference=interference,
        noise=noise,
        gamma=gamma,
        se=se_from_sinr(gamma),
    )


def normalize_precoders(
    w_prime: np.ndarray, association: Association
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scale raw precoders to unit average total power per UE.

    ``w_prime`` has shape (T, K, L, N). Returns (w_bar, omega, excluded)
    where omega[k] is the largest per-O-RU share of the normalized precoder
    energy over the UE's serving set, and excluded flags UEs whose raw
    precoder has zero norm (served by nobody).
    """
    T, K, L, N = w_prime.shape
    slice_energy = np.einsum("tkln->kl", np.abs(w_prime) ** 2) / T
    total = slice_energy.sum(axis=1)
    excluded = total <= 0
    if np.any(excluded):
        warnings.warn(
            f"{int(excluded.sum())} UE(s) have zero-norm precoders and are "
            "excluded from the downlink"
        )
    scale = np.sqrt(np.where(excluded, 1.0, total))
    w_bar = w_prime / scale[None, :, None, None]
    w_bar[:, excluded] = 0.0

    bar_energy = slice_energy / np.where(total <= 0, 1.0, total)[:, None]
    omega = np.zeros(K)
    for k in range(K):
        serving = association.serving_orus(k)
        if serving.size and not excluded[k]:
            omega[k] = bar_energy[k, serving].max()
    return w_bar, omega, excluded


@dataclass
class DownlinkResult:
    report: SinrReport
    dl_power_mw: np.ndarray  # (K,)
    omega: np.ndarray  # (K,)
    per_oru_radiated_mw: np.ndarray  # (L,)
    excluded_ues: np.ndarray  # bool (K,)


def downlink_sinr(
    scheme: str,
    h: np.ndarray,
    hhat: np.ndarray,
    C: np.ndarray,
    association: Association,
    genome: np.ndarray,
    beta: np.ndarray,
    p_ul_mw: np.ndarray,
    noise_ul_mw: float,
    noise_dl_mw: float,
    p_max_mw: float,
    phase_drift_deg: float = 0.0,
    drift_rng: np.random.Generator | None = None,
) -> DownlinkResult:
    """Downlink use-and-then-forget SINR/SE with heuristic power allocation.

    Raw precoders reuse the uplink combiner construction (duality, with the
    uplink noise level as printed in the design), are normalized to unit
    average energy per UE, and carry the per-UE downlink powers allocated
    from large-scale gains and the per-O-RU cap. Optional per-O-RU phase
    drift rotates the true channels used for reception while the precoders
    stay matched to the undrifted estimates.
    """
    spec = SCHEMES[scheme]
    T, K, L, N = h.shape
    if T < 2:
        raise ValueError("need at least 2 realizations")
    p_ul = np.asarray(p_ul_mw, dtype=float)
    ws = CombinerWorkspace(spec, association, genome, C, p_ul, noise_ul_mw)

    w_prime = np.empty_like(hhat)
    for t in range(T):
        w_prime[t] = ws.combiners(hhat[t])

    w_bar, omega, excluded = normalize_precoders(w_prime, association)
    p_dl, power_excluded = downlink_power(
        beta, omega, association.delta & ~excluded[:, None], p_max_mw
    )
    p_dl = np.where(excluded, 0.0, p_dl)

    h_rx = h
    if phase_drift_deg > 0:
        if drift_rng is None:
            raise ValueError("phase drift requires an rng")
        h_rx, _ = apply_phase_drift(h, phase_drift_deg, drift_rng)

    amp = np.sqrt(p_dl)
    num = np.zeros(K, dtype=complex)
    isq = np.zeros((K, K))
    for t in range(T):
        w_t = w_bar[t] * amp[:, None, None]
        g = _unit_coefficients(h_rx[t], w_t, ws.Emat)  # g[k, i, m] = h_k^H w_i
        s = g.sum(axis=-1)
        num += np.diag(s)
        isq += np.abs(s) ** 2
    num /= T
    isq /= T

    signal = np.abs(num) ** 2
    total_i = isq.sum(axis=1)
    interference = np.maximum(total_i - signal, 0.0)
    gamma = signal / (interference + noise_dl_mw)
    report = SinrReport(
        scheme=scheme,
        link="dl",
        signal=signal,
        interference=interference,
        noise=np.full(K, noise_dl_mw),
        gamma=gamma,
        se=se_from_sinr(gamma),
    )

    slice_energy = np.einsum("tkln->kl", np.abs(w_bar) ** 2) / T
    per_oru = (p_dl[:, None] * slice_energy).sum(axis=0)
    return DownlinkResult(
        report=report,
        dl_power_mw=p_dl,
        omega=omega,
        per_oru_radiated_mw=per_oru,
        excluded_ues=excluded | power_excluded,
    )
