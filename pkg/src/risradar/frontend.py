"""CPI simulation and the bank of normalised correlators.

Two simulation paths are provided. ``simulate_cpi`` builds the full received
vectors y_q(n) of length D_rx; ``ScanSimulator`` works directly on the
receive-combined samples a^H y / ||a|| of each illuminated direction, which is
all the correlator ever looks at. Both produce the same statistics for the
same echo and noise realisation (the fast path draws the projected noise
directly, which has the same CN(0, sigma^2) law).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelSet, TargetState, complex_normal
from .precoding import BeamformerSet, draw_symbols
from .scenario import Scenario, steering_vector


class FrontendError(ValueError):
    """Degenerate correlator normaliser or an echo beyond the cyclic prefix."""


@dataclass(frozen=True)
class Echo:
    """One point scatterer as seen during a CPI."""

    alpha: complex
    delay: float
    doppler: float
    direction: np.ndarray  # (2,) az/el degrees, RIS frame


def echo_from_target(scn: Scenario, target: TargetState, alpha: complex) -> Echo:
    return Echo(complex(alpha), target.delay(scn), target.doppler(scn), target.direction(scn))


@dataclass(frozen=True, eq=False)
class CpiObservation:
    y: np.ndarray  # (N_sub, N_sym, D_rx)
    s: np.ndarray  # (N_sub, N_sym, D_tx) transmitted samples
    hypothesis: int = 0


@dataclass(frozen=True, eq=False)
class StatisticArray:
    values: np.ndarray  # (N_dir, N_del, N_dop)
    scan: int
    timestamps: np.ndarray  # (N_dir,) illumination start times

    def __post_init__(self):
        if self.values.ndim != 3 or len(self.timestamps) != self.values.shape[0]:
            raise ValueError("statistic array and timestamps are inconsistent")

    def dump(self, path: str | Path) -> None:
        """Raw dump: three int64 dimensions, then row-major float64 values."""
        with open(path, "wb") as fh:
            np.asarray(self.values.shape, dtype="<i8").tofile(fh)
            np.ascontiguousarray(self.values, dtype="<f8").tofile(fh)

    @staticmethod
    def load_values(path: str | Path) -> np.ndarray:
        with open(path, "rb") as fh:
            shape = tuple(np.fromfile(fh, dtype="<i8", count=3))
            return np.fromfile(fh, dtype="<f8").reshape(shape)


def uniform_weights(n_sub: int, n_sym: int) -> np.ndarray:
    return np.full((n_sub, n_sym), 1.0 / np.sqrt(n_sub * n_sym))


def _check_weights(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs((w**2).sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative with unit energy")
    return w


def _delay_phase(scn: Scenario, delay) -> np.ndarray:
    """exp(-i 2 pi q W_sub tau), shape (..., N_sub)."""
    q = scn.ofdm.subcarrier_indices
    return np.exp(-2j * np.pi * np.multiply.outer(np.asarray(delay), q) * scn.ofdm.sub_spacing)


def _doppler_phase(scn: Scenario, doppler) -> np.ndarray:
    """exp(-i 2 pi nu n T_sym), shape (..., N_sym)."""
    n = np.arange(1, scn.ofdm.n_sym + 1)
    return np.exp(-2j * np.pi * np.multiply.outer(np.asarray(doppler), n) * scn.ofdm.symbol_duration)


def _cascade(scn: Scenario, omega, channels: ChannelSet, direction):
    """Receive vector a_q = G_rx diag(w) t_q (N_sub, D_rx) and transmit row
    t_q^T diag(w) G_tx (N_sub, D_tx) toward one direction."""
    t = steering_vector(scn.ris_array, direction, scn.ofdm.subcarrier_freqs)  # (N_sub, D_ris)
    e = t * omega
    a = np.einsum("qrd,qd->qr", channels.g_rx, e)
    b = np.einsum("qd,qdt->qt", e, channels.g_tx)
    return a, b


def transmit_samples(scn: Scenario, bf: BeamformerSet, x: np.ndarray) -> np.ndarray:
    """s_q(n) = sqrt(P) F_q x_q(n) for symbols x (N_sub, K+1, N_sym); returns (N_sub, N_sym, D_tx)."""
    s = np.sqrt(scn.ofdm.power) * (bf.f @ x)
    return np.swapaxes(s, 1, 2)


def simulate_cpi(scn: Scenario, bf: BeamformerSet, channels: ChannelSet, echoes: Sequence[Echo] = (),
                 rng: np.random.Generator | None = None, *, noise: bool = True,
                 symbols: np.ndarray | None = None) -> CpiObservation:
    """Full received vectors for one CPI with any number of point echoes."""
    o = scn.ofdm
    if symbols is None:
        if rng is None:
            raise ValueError("an rng is required to draw symbols")
        symbols = draw_symbols(rng, bf.gammas, o.n_sym)
    s = transmit_samples(scn, bf, symbols)
    y = np.zeros((o.n_sub, o.n_sym, channels.g_rx.shape[1]), dtype=complex)
    for ec in echoes:
        if ec.delay > o.cyclic_prefix:
            raise FrontendError("echo delay exceeds the cyclic prefix")
        a, b = _cascade(scn, bf.omega, channels, ec.direction)
        scalar = np.einsum("qt,qnt->qn", b, s)
        phase = _delay_phase(scn, ec.delay)[:, None] * _doppler_phase(scn, ec.doppler)[None, :]
        y += ec.alpha * (phase * scalar)[..., None] * a[:, None, :]
    if noise:
        if rng is None:
            raise ValueError("an rng is required to draw noise")
        y += complex_normal(rng, y.shape, channels.sigma_r2)
    return CpiObservation(y, s, int(bool(echoes)))


def correlator_taps(scn: Scenario, bf: BeamformerSet, channels: ChannelSet, s: np.ndarray,
                    direction, delay: float, doppler: float, weights=None) -> np.ndarray:
    """Taps u_q(n) of the correlator matched to (direction, delay, doppler), (N_sub, N_sym, D_rx)."""
    o = scn.ofdm
    w = _check_weights(uniform_weights(o.n_sub, o.n_sym) if weights is None else weights)
    a, b = _cascade(scn, bf.omega, channels, direction)
    an = np.linalg.norm(a, axis=1)
    scalar = np.einsum("qt,qnt->qn", b, s)
    bn = np.abs(scalar)
    if np.any(an == 0) or np.any(bn == 0):
        raise FrontendError("zero correlator normaliser")
    phase = _delay_phase(scn, delay)[:, None] * _doppler_phase(scn, doppler)[None, :]
    return (w * phase * scalar / bn)[..., None] * (a / an[:, None])[:, None, :]


def statistic(scn: Scenario, obs: CpiObservation, bf: BeamformerSet, channels: ChannelSet,
              direction, delay: float, doppler: float, weights=None) -> float:
    """Normalised correlator output |sum u^H y|^2 / sigma_r^2 for one triplet."""
    u = correlator_taps(scn, bf, channels, obs.s, direction, delay, doppler, weights)
    return float(np.abs(np.vdot(u, obs.y)) ** 2 / channels.sigma_r2)


class CorrelatorBank:
    """Delay/Doppler bank for one direction, evaluated as two matrix products."""

    def __init__(self, scn: Scenario, weights=None):
        o = scn.ofdm
        g = scn.grids
        self.weights = _check_weights(uniform_weights(o.n_sub, o.n_sym) if weights is None else weights)
        # conj of the phases in u: u^H y picks up exp(+i ...)
        self.e_del = np.conj(_delay_phase(scn, g.delays))  # (N_del, N_sub)
        self.e_dop = np.conj(_doppler_phase(scn, g.dopplers)).T  # (N_sym, N_dop)

    def __call__(self, z: np.ndarray, sigma2: float) -> np.ndarray:
        """``z`` (..., N_sub, N_sym) holds conj(b/|b|) a^H y / ||a|| per sample."""
        out = self.e_del @ (self.weights * z) @ self.e_dop
        return np.abs(out) ** 2 / sigma2


def combine_observation(scn: Scenario, obs: CpiObservation, bf: BeamformerSet, channels: ChannelSet,
                        direction) -> np.ndarray:
    """Receive-combined, symbol-derotated samples for the bank, (N_sub, N_sym)."""
    a, b = _cascade(scn, bf.omega, channels, direction)
    an = np.linalg.norm(a, axis=1)
    scalar = np.einsum("qt,qnt->qn", b, obs.s)
    bn = np.abs(scalar)
    if np.any(an == 0) or np.any(bn == 0):
        raise FrontendError("zero correlator normaliser")
    proj = np.einsum("qr,qnr->qn", np.conj(a), obs.y) / an[:, None]
    return np.conj(scalar) / bn * proj


class ScanSimulator:
    """Statistic arrays for whole scans, one beamformer set per direction.

    ``fast=True`` simulates the receive-combined samples directly; with
    ``fast=False`` every CPI goes through ``simulate_cpi``.
    """

    def __init__(self, scn: Scenario, channels: ChannelSet, beamformers: Sequence[BeamformerSet],
                 weights=None, fast: bool = True):
        if len(beamformers) != len(scn.grids.pointing):
            raise ValueError("one beamformer set per pointing direction is required")
        self.scn = scn
        self.channels = channels
        self.bfs = list(beamformers)
        self.bank = CorrelatorBank(scn, weights)
        self.fast = fast
        spec = scn.specs
        self.t_dir = spec.dwell_duration
        self.t_scan = spec.scan_duration
        self._match = []
        for bf, d in zip(self.bfs, scn.grids.pointing):
            a, b = _cascade(scn, bf.omega, channels, d)
            an = np.linalg.norm(a, axis=1)
            if np.any(an == 0):
                raise FrontendError("zero receive normaliser")
            # b F_q: transmit row onto the stream space
            self._match.append((a / an[:, None], b[:, None, :] @ bf.f))

    def timestamps(self, scan: int) -> np.ndarray:
        return scan * self.t_scan + np.arange(len(self.bfs)) * self.t_dir

    def scan(self, rng: np.random.Generator, scan: int = 0, targets: Sequence[TargetState] = (),
             alphas: Sequence[complex] = (), noise: bool = True) -> StatisticArray:
        """One scan; ``alphas`` holds each target's amplitude for this scan."""
        scn, o = self.scn, self.scn.ofdm
        times = self.timestamps(scan)
        sigma2 = self.channels.sigma_r2
        shape = (len(self.bfs), o.n_sub, o.n_sym)
        if not targets and self.fast:
            # derotation by unit-modulus symbols leaves white noise white
            z = complex_normal(rng, shape, sigma2) if noise else np.zeros(shape, complex)
            return StatisticArray(self.bank(z, sigma2), scan, times)
        out = np.empty(scn.grids.shape)
        for i, bf in enumerate(self.bfs):
            echoes = [echo_from_target(scn, tg.at(times[i]), al) for tg, al in zip(targets, alphas)]
            if self.fast:
                z = self._fast_samples(i, rng, echoes, noise)
            else:
                obs = simulate_cpi(scn, bf, self.channels, echoes, rng, noise=noise)
                z = combine_observation(scn, obs, bf, self.channels, scn.grids.pointing[i])
            out[i] = self.bank(z, sigma2)
        return StatisticArray(out, scan, times)

    def _fast_samples(self, i: int, rng, echoes: Sequence[Echo], noise: bool) -> np.ndarray:
        scn, o = self.scn, self.scn.ofdm
        bf = self.bfs[i]
        a_hat, v_match = self._match[i]
        x = draw_symbols(rng, bf.gammas, o.n_sym)
        sq = np.sqrt(o.power)
        b_match = sq * (v_match @ x)[:, 0, :]  # (N_sub, N_sym)
        bn = np.abs(b_match)
        if np.any(bn == 0):
            raise FrontendError("zero transmit normaliser")
        z = np.zeros((o.n_sub, o.n_sym), dtype=complex)
        for ec in echoes:
            if ec.delay > o.cyclic_prefix:
                raise FrontendError("echo delay exceeds the cyclic prefix")
            a, b = _cascade(scn, bf.omega, self.channels, ec.direction)
            gain = np.einsum("qr,qr->q", np.conj(a_hat), a)
            b_tgt = sq * ((b[:, None, :] @ bf.f) @ x)[:, 0, :]
            phase = _delay_phase(scn, ec.delay)[:, None] * _doppler_phase(scn, ec.doppler)[None, :]
            z += ec.alpha * phase * gain[:, None] * b_tgt
        if noise:
            z += complex_normal(rng, z.shape, self.channels.sigma_r2)
        return np.conj(b_match) / bn * z
