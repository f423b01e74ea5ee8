"""Transmit, receive and two-way beampatterns of the RIS cascade."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelSet, TargetState, amplitude_variance
from .scenario import Scenario, as_angles, box_directions, steering_vector


@dataclass(frozen=True, eq=False)
class BeampatternSample:
    directions: np.ndarray  # (..., 2)
    bp_tx_q: np.ndarray  # (N_sub, ...)
    bp_rx_q: np.ndarray  # (N_sub, ...)

    @property
    def bp_q(self) -> np.ndarray:
        return self.bp_tx_q * self.bp_rx_q

    @property
    def bp_tx(self) -> np.ndarray:
        return self.bp_tx_q.sum(axis=0)

    @property
    def bp_rx(self) -> np.ndarray:
        return self.bp_rx_q.sum(axis=0)

    @property
    def bp(self) -> np.ndarray:
        return self.bp_q.sum(axis=0)


def tx_effective(channels: ChannelSet, f_mats: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """G_tx F diag(gamma)^(1/2), shape (N_sub, D_ris, K+1)."""
    return (channels.g_tx @ f_mats) * np.sqrt(gammas)[:, None, :]


def bp_at(scn: Scenario, direction, omega, f_mats, gammas, channels: ChannelSet) -> BeampatternSample:
    """Beampatterns towards one direction or an (..., 2) array of directions."""
    ang = as_angles(direction)
    freqs = scn.ofdm.subcarrier_freqs
    t = steering_vector(scn.ris_array, ang, freqs)  # (N_sub, ..., D_ris)
    lead = t.shape[1:-1]
    e = (t * omega).reshape(len(freqs), -1, t.shape[-1])
    if channels.g_rx.shape[1:] != (channels.g_rx.shape[1], e.shape[-1]):
        raise ValueError("RIS size mismatch")
    rx = e @ np.swapaxes(channels.g_rx, 1, 2)
    tx = e @ tx_effective(channels, f_mats, gammas)
    bp_rx = (np.abs(rx) ** 2).sum(-1).reshape((len(freqs),) + lead)
    bp_tx = (np.abs(tx) ** 2).sum(-1).reshape((len(freqs),) + lead)
    return BeampatternSample(ang, bp_tx, bp_rx)


def target_snr(scn: Scenario, omega, f_mats, gammas, channels: ChannelSet, target: TargetState) -> float:
    """N_sym P BP(phi) E|alpha|^2 / sigma_r^2 for the target's current position."""
    bp = float(bp_at(scn, target.direction(scn), omega, f_mats, gammas, channels).bp)
    o = scn.ofdm
    return o.n_sym * o.power * bp * amplitude_variance(scn, target) / channels.sigma_r2


def pattern_grid(scn: Scenario, omega, f_mats, gammas, channels: ChannelSet,
                 az=(-60.0, 60.0), el=(-30.0, 45.0), step: float = 0.5) -> BeampatternSample:
    dirs = box_directions(az, el, step)
    out = []
    for chunk in np.array_split(dirs, max(1, len(dirs) // 2000)):
        out.append(bp_at(scn, chunk, omega, f_mats, gammas, channels))
    return BeampatternSample(
        dirs,
        np.concatenate([o.bp_tx_q for o in out], axis=1),
        np.concatenate([o.bp_rx_q for o in out], axis=1),
    )


def write_pattern_csv(path: str | Path, sample: BeampatternSample) -> None:
    """CSV rows (az, el, BP_tx, BP_rx, BP) for heat-map plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["az_deg", "el_deg", "bp_tx", "bp_rx", "bp"])
        for (a, e), t, r, b in zip(sample.directions, sample.bp_tx, sample.bp_rx, sample.bp):
            w.writerow([f"{a:.2f}", f"{e:.2f}", f"{t:.9e}", f"{r:.9e}", f"{b:.9e}"])
