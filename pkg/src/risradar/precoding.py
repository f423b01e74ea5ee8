"""Zero-forcing downlink beamformers, radar null-space basis and user rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NULL_RTOL = 1e-10


class IllPosedUsers(np.linalg.LinAlgError):
    """The user set leaves no valid precoder (rank deficiency or K >= D_tx)."""


def zero_forcing(h: np.ndarray) -> np.ndarray:
    """Unit-norm ZF beamformers, columns of pinv(H^H) normalised.

    Works on a single (D_tx, K) matrix or a stack (..., D_tx, K).
    """
    h = np.asarray(h)
    s = np.linalg.svd(h, compute_uv=False)
    if h.shape[-1] and np.any(s[..., -1] <= NULL_RTOL * s[..., 0]):
        raise IllPosedUsers("rank-deficient user channel matrix")
    gram = np.conj(np.swapaxes(h, -1, -2)) @ h
    f = h @ np.linalg.inv(gram)
    return f / np.linalg.norm(f, axis=-2, keepdims=True)


def null_space_basis(h: np.ndarray) -> np.ndarray:
    """Orthonormal basis (..., D_tx, D_tx - K) of the complement of span(H).

    Every column u satisfies H^H u = 0, which is the orthogonality condition
    keeping the radar stream out of the users' receivers.
    """
    h = np.asarray(h)
    d_tx, k = h.shape[-2:]
    if k >= d_tx:
        raise IllPosedUsers("no radar dimension left: K >= D_tx")
    if k == 0:
        return np.broadcast_to(np.eye(d_tx, dtype=complex), h.shape[:-2] + (d_tx, d_tx)).copy()
    u, s, _ = np.linalg.svd(h, full_matrices=True)
    if np.any(s[..., -1] <= NULL_RTOL * s[..., 0]):
        raise IllPosedUsers("rank-deficient user channel matrix")
    return u[..., :, k:]


def power_vectors(gamma_r: float, n_users: int, n_sub: int) -> np.ndarray:
    """Uniform allocation: (1 - gamma_r)/K per user, gamma_r for radar."""
    if not 0.0 <= gamma_r <= 1.0:
        raise ValueError("gamma_r must lie in [0, 1]")
    if n_users == 0:
        if gamma_r != 1.0:
            raise ValueError("without users all power goes to the radar stream")
        return np.ones((n_sub, 1))
    g = np.full(n_users + 1, (1.0 - gamma_r) / n_users)
    g[-1] = gamma_r
    return np.tile(g, (n_sub, 1))


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    f: np.ndarray  # (N_sub, D_tx, K+1); last column is the radar beamformer
    gammas: np.ndarray  # (N_sub, K+1)
    omega: np.ndarray  # (D_ris,)

    def __post_init__(self):
        norms = np.linalg.norm(self.f, axis=1)
        if np.any(np.abs(norms - 1) > 1e-8):
            raise ValueError("beamformer columns must have unit norm")
        if np.any(self.gammas < 0) or np.any(np.abs(self.gammas.sum(axis=1) - 1) > 1e-12):
            raise ValueError("power vectors must be non-negative and sum to one")
        if np.any(np.abs(np.abs(self.omega) - 1) > 1e-8):
            raise ValueError("RIS response must be unit-modulus")

    @property
    def n_users(self) -> int:
        return self.f.shape[2] - 1


def assemble(f_comm: np.ndarray, f_radar: np.ndarray, gammas: np.ndarray, omega: np.ndarray) -> BeamformerSet:
    """Stack communication columns (N_sub, D_tx, K) with radar (N_sub, D_tx)."""
    f = np.concatenate([f_comm, f_radar[:, :, None]], axis=2)
    return BeamformerSet(f, gammas, omega)


def draw_symbols(rng: np.random.Generator, gammas: np.ndarray, n_sym: int) -> np.ndarray:
    """Unit-modulus random-phase symbols scaled to covariance diag(gamma).

    Returns x of shape (N_sub, K+1, N_sym).
    """
    n_sub, m = gammas.shape
    phase = np.exp(2j * np.pi * rng.random((n_sub, m, n_sym)))
    return np.sqrt(gammas)[:, :, None] * phase


def comm_metrics(h: np.ndarray, bf: BeamformerSet, power: float, sigma_k2: float):
    """Per-subcarrier SINR (N_sub, K), per-user rates R_k and the sum-rate.

    Interference includes the other users' streams and the radar stream.
    """
    k = h.shape[2]
    if k == 0:
        return np.zeros((h.shape[0], 0)), np.zeros(0), 0.0
    # gains[q, k, m] = |h_{q,k}^H f_{q,m}|^2 gamma_{q,m}
    cross = np.conj(np.swapaxes(h, 1, 2)) @ bf.f
    gains = np.abs(cross) ** 2 * bf.gammas[:, None, :]
    useful = gains[:, np.arange(k), np.arange(k)]
    interference = gains.sum(axis=2) - useful
    sinr = useful / (interference + sigma_k2 / power)
    rates = np.log2(1 + sinr).sum(axis=0)
    return sinr, rates, float(rates.sum())
