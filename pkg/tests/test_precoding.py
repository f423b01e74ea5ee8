import numpy as np
import pytest

from risradar.channel import complex_normal
from risradar.precoding import (
    IllPosedUsers, assemble, comm_metrics, draw_symbols, null_space_basis, power_vectors, zero_forcing,
)


def _random_setup(rng, n_sub=4, d_tx=6, k=3):
    h = complex_normal(rng, (n_sub, d_tx, k))
    return h


def test_zero_forcing_nulls_cross_user_terms(rng):
    h = _random_setup(rng)
    f = zero_forcing(h)
    g = np.conj(np.swapaxes(h, 1, 2)) @ f
    off = g - np.einsum("qkk->qk", g)[:, :, None] * np.eye(3)
    assert np.max(np.abs(off)) < 1e-10 * np.max(np.abs(g))
    np.testing.assert_allclose(np.linalg.norm(f, axis=1), 1.0)


def test_null_space_is_orthogonal(rng):
    h = _random_setup(rng)
    u = null_space_basis(h)
    assert u.shape == (4, 6, 3)
    assert np.max(np.abs(np.conj(np.swapaxes(h, 1, 2)) @ u)) < 1e-10
    np.testing.assert_allclose(np.conj(np.swapaxes(u, 1, 2)) @ u, np.broadcast_to(np.eye(3), (4, 3, 3)), atol=1e-12)


def test_ill_posed_users(rng):
    h = _random_setup(rng)
    h[:, :, 2] = h[:, :, 0]
    with pytest.raises(IllPosedUsers):
        zero_forcing(h)
    with pytest.raises(IllPosedUsers):
        null_space_basis(complex_normal(rng, (2, 3, 3)))


def test_power_vectors():
    g = power_vectors(0.4, 3, 5)
    assert g.shape == (5, 4)
    np.testing.assert_allclose(g[:, -1], 0.4)
    np.testing.assert_allclose(g[:, :3], 0.2)
    with pytest.raises(ValueError):
        power_vectors(1.2, 3, 5)


def _bf(h, gamma_r, f_radar, omega_size=4):
    n_sub, d_tx, k = h.shape
    return assemble(zero_forcing(h), f_radar, power_vectors(gamma_r, k, n_sub), np.ones(omega_size, dtype=complex))


def _unit_radar(rng, h, orth=True):
    n_sub, d_tx, k = h.shape
    if orth:
        u = null_space_basis(h)
        v = np.einsum("qij,qj->qi", u, complex_normal(rng, (n_sub, d_tx - k)))
    else:
        v = complex_normal(rng, (n_sub, d_tx))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_sum_rate_invariant_to_radar_beam_in_null_space(rng):
    h = _random_setup(rng)
    rates = []
    for _ in range(5):
        bf = _bf(h, 0.5, _unit_radar(rng, h))
        sinr, _, r = comm_metrics(h, bf, 1.0, 1e-2)
        rates.append(r)
        # with orthogonality the radar term in the interference is zero
        cross = np.abs(np.conj(np.swapaxes(h, 1, 2)) @ bf.f[:, :, -1:]) ** 2
        assert np.max(cross) < 1e-20
    np.testing.assert_allclose(rates, rates[0], rtol=1e-10)


def test_free_radar_beam_hurts_users(rng):
    h = _random_setup(rng)
    _, _, on = comm_metrics(h, _bf(h, 0.5, _unit_radar(rng, h)), 100.0, 1e-2)
    _, _, off = comm_metrics(h, _bf(h, 0.5, _unit_radar(rng, h, orth=False)), 100.0, 1e-2)
    assert off < on


def test_sum_rate_non_increasing_in_gamma(rng):
    h = _random_setup(rng)
    f_r = _unit_radar(rng, h)
    rates = [comm_metrics(h, _bf(h, g, f_r), 10.0, 1e-2)[2] for g in np.linspace(0, 1, 11)]
    assert np.all(np.diff(rates) <= 1e-12)
    assert rates[-1] == 0.0


def test_symbol_covariance(rng):
    gam = power_vectors(0.25, 3, 2)
    x = draw_symbols(rng, gam, 20_000)
    cov = np.einsum("qkn,qln->qkl", x, np.conj(x)) / x.shape[2]
    np.testing.assert_allclose(np.real(np.einsum("qkk->qk", cov)), gam, rtol=1e-12)
    off = cov - np.einsum("qkk->qk", cov)[:, :, None] * np.eye(4)
    assert np.max(np.abs(off)) < 0.02
