"""Deterministic BS-RIS channels, Ricean user channels, Swerling I target returns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import SPEED_OF_LIGHT, ArrayGeometry, Scenario, steering_vector


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator derived from the master seed and integer keys."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    s = np.sqrt(variance / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class ChannelSet:
    g_tx: np.ndarray  # (N_sub, D_ris, D_tx)
    g_rx: np.ndarray  # (N_sub, D_rx, D_ris)
    h: np.ndarray  # (N_sub, D_tx, K)
    sigma_r2: float
    sigma_k2: float

    def __post_init__(self):
        n_sub, d_ris, d_tx = self.g_tx.shape
        if self.g_rx.shape[0] != n_sub or self.g_rx.shape[2] != d_ris:
            raise ValueError("G_rx shape does not match G_tx")
        if self.h.shape[:2] != (n_sub, d_tx):
            raise ValueError("H shape does not match G_tx")

    @property
    def n_sub(self) -> int:
        return self.g_tx.shape[0]

    @property
    def n_users(self) -> int:
        return self.h.shape[2]

    def with_users(self, h: np.ndarray) -> "ChannelSet":
        return ChannelSet(self.g_tx, self.g_rx, h, self.sigma_r2, self.sigma_k2)


def link_matrix(src: ArrayGeometry, dst: ArrayGeometry, freqs: np.ndarray) -> np.ndarray:
    """Element-wise far-field link from ``src`` elements to ``dst`` elements.

    Entry (q, i, j) couples source element j to destination element i with
    amplitude sqrt(G_src G_dst) * lambda_q / (4 pi d_ij) and phase -2 pi f_q d_ij / c.
    """
    vec = dst.positions[:, None, :] - src.positions[None, :, :]
    d = np.linalg.norm(vec, axis=-1)
    if np.any(d <= 0):
        raise ValueError("coincident elements: zero inter-element distance")
    gain = np.sqrt(src.element_gain(vec) * dst.element_gain(-vec))
    freqs = np.asarray(freqs, dtype=float)[:, None, None]
    lam = SPEED_OF_LIGHT / freqs
    return gain * lam / (4 * np.pi * d) * np.exp(-2j * np.pi * freqs * d / SPEED_OF_LIGHT)


def build_bs_ris_channels(scn: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Return (G_tx, G_rx) for every employed subcarrier."""
    freqs = scn.ofdm.subcarrier_freqs
    g_tx = link_matrix(scn.tx_array, scn.ris_array, freqs)
    g_rx = link_matrix(scn.ris_array, scn.rx_array, freqs)
    return g_tx, g_rx


def user_los(scn: Scenario, users: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic LoS part of the user channels and its per-entry amplitude.

    Returns ``(los, amp)`` with ``los`` of shape (N_sub, D_tx, K) and ``amp``
    of shape (N_sub, K). User antennas are assumed to face the BS.
    """
    users = scn.users[: scn.n_users] if users is None else np.atleast_2d(users)
    tx = scn.tx_array
    freqs = scn.ofdm.subcarrier_freqs
    vec = users - tx.center
    d = np.linalg.norm(vec, axis=1)
    g = np.sqrt(tx.element_gain(vec) * np.pi)
    lam = SPEED_OF_LIGHT / freqs[:, None]
    amp = g * lam / (4 * np.pi * d)
    phase = np.exp(-2j * np.pi * freqs[:, None] * d / SPEED_OF_LIGHT)
    steer = steering_vector(tx, tx.direction_of(vec), freqs)  # (N_sub, K, D_tx)
    los = (amp * phase)[:, :, None] * steer
    return np.transpose(los, (0, 2, 1)), amp


def sample_user_channels(scn: Scenario, rng: np.random.Generator, users: np.ndarray | None = None) -> np.ndarray:
    """Ricean downlink channels H_q (N_sub, D_tx, K).

    Multipath is drawn independently per subcarrier with per-entry variance
    equal to the LoS per-entry power divided by the Ricean factor.
    """
    los, amp = user_los(scn, users)
    var = amp**2 / scn.ricean_factor
    n_sub, d_tx, k = los.shape
    # one draw per user in turn, so the first K users do not depend on how many follow
    mp = np.stack([complex_normal(rng, (n_sub, d_tx)) for _ in range(k)], axis=-1)
    h = los + mp * np.sqrt(var)[:, None, :]
    check_full_rank(h)
    return h


def check_full_rank(h: np.ndarray, rtol: float = 1e-10) -> None:
    if h.shape[-1] == 0:
        return
    s = np.linalg.svd(h, compute_uv=False)
    if np.any(s[..., -1] <= rtol * s[..., 0]):
        raise np.linalg.LinAlgError("user channel matrix is rank deficient")


def build_channels(scn: Scenario, rng: np.random.Generator | None = None, n_users: int | None = None) -> ChannelSet:
    """Full channel set; user channels come from the scenario's user stream."""
    g_tx, g_rx = build_bs_ris_channels(scn)
    k = scn.n_users if n_users is None else n_users
    if rng is None:
        rng = rng_stream(scn.seed, 1)
    if k:
        h = sample_user_channels(scn, rng, scn.users[:k])
    else:
        h = np.zeros((scn.ofdm.n_sub, scn.tx_array.size, 0), dtype=complex)
    return ChannelSet(g_tx, g_rx, h, scn.radar_noise, scn.user_noise)


# ---------------------------------------------------------------------------
# Target
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TargetState:
    position: np.ndarray
    velocity: np.ndarray
    rcs: float

    def at(self, t: float) -> "TargetState":
        return TargetState(self.position + self.velocity * t, self.velocity, self.rcs)

    def range_from(self, origin) -> float:
        return float(np.linalg.norm(self.position - origin))

    def delay(self, scn: Scenario) -> float:
        """Round-trip RIS-target-RIS delay."""
        return 2.0 * self.range_from(scn.ris_array.center) / SPEED_OF_LIGHT

    def doppler(self, scn: Scenario) -> float:
        rel = self.position - scn.ris_array.center
        u = rel / np.linalg.norm(rel)
        return 2.0 * float(self.velocity @ u) / scn.ofdm.wavelength

    def direction(self, scn: Scenario) -> np.ndarray:
        return scn.ris_array.direction_of(self.position - scn.ris_array.center)


def amplitude_variance(scn: Scenario, target: TargetState) -> float:
    """E|alpha|^2 from the radar equation with the RIS element gain."""
    rel = target.position - scn.ris_array.center
    d = np.linalg.norm(rel)
    g = scn.ris_array.element_gain(rel)
    lam = scn.ofdm.wavelength
    return float(g**2 * target.rcs * lam**2 / ((4 * np.pi) ** 3 * d**4))


def sample_target_amplitude(scn: Scenario, target: TargetState, rng: np.random.Generator, size=None):
    """Swerling I amplitude(s): one independent CN draw per scan."""
    return complex_normal(rng, size, amplitude_variance(scn, target))


def calibrate_rcs(scn: Scenario, omega: np.ndarray, f_mats: np.ndarray, gammas: np.ndarray,
                  channels: ChannelSet, reference: np.ndarray | None = None) -> float:
    """RCS giving the configured nominal SNR for the reference target.

    ``omega``, ``f_mats`` and ``gammas`` describe the beamformers of the
    subvolume containing the reference target, normally designed with all
    power on the radar stream.
    """
    from .beampattern import bp_at

    if reference is None:
        reference = reference_position(scn)
    ris = scn.ris_array
    direction = ris.direction_of(reference - ris.center)
    bp = bp_at(scn, direction, omega, f_mats, gammas, channels).bp
    if not bp > 0:
        raise ValueError("beampattern vanishes in the reference direction")
    unit = TargetState(np.asarray(reference, dtype=float), np.zeros(3), 1.0)
    per_rcs = amplitude_variance(scn, unit)
    snr = 10 ** (scn.doc["target"]["nominal_snr_db"] / 10)
    o = scn.ofdm
    return float(snr * channels.sigma_r2 / (o.n_sym * o.power * bp * per_rcs))


def reference_position(scn: Scenario) -> np.ndarray:
    t = scn.doc["target"]
    i = t["reference_pointing"]
    return scn.ris_position(t["reference_range"], scn.grids.pointing[i])
