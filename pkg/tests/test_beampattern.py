import numpy as np
import pytest

from risradar.beampattern import bp_at, pattern_grid, write_pattern_csv
from risradar.channel import complex_normal
from risradar.frontend import _cascade, transmit_samples
from risradar.precoding import assemble, draw_symbols, power_vectors, zero_forcing


@pytest.fixture(scope="module")
def bf(reference, channels):
    rng = np.random.default_rng(5)
    n_sub = reference.ofdm.n_sub
    h = channels.h[:, :, :3]
    f_r = complex_normal(rng, (n_sub, reference.tx_array.size))
    f_r /= np.linalg.norm(f_r, axis=1, keepdims=True)
    omega = np.exp(2j * np.pi * rng.random(reference.ris_array.size))
    return assemble(zero_forcing(h), f_r, power_vectors(0.5, 3, n_sub), omega)


def test_pattern_is_expected_received_power(reference, channels, bf):
    # BP_q(theta) = E|received cascade applied to s_q(n)|^2 / P
    direction = (5.0, 8.0)
    rng = np.random.default_rng(0)
    x = draw_symbols(rng, bf.gammas, 10_000)
    s = transmit_samples(reference, bf, x)
    a, b = _cascade(reference, bf.omega, channels, direction)
    rx = np.linalg.norm(a, axis=1) ** 2
    power = rx[:, None] * np.abs(np.einsum("qt,qnt->qn", b, s)) ** 2
    mc = power.mean(axis=1) / reference.ofdm.power
    exact = bp_at(reference, direction, bf.omega, bf.f, bf.gammas, channels).bp_q
    np.testing.assert_allclose(mc, exact, rtol=0.03)


def test_patterns_nonnegative_and_phase_invariant(reference, channels, bf):
    dirs = np.array([[a, e] for a in (-30, 0, 20) for e in (-10, 10, 30)], dtype=float)
    p = bp_at(reference, dirs, bf.omega, bf.f, bf.gammas, channels)
    q = bp_at(reference, dirs, bf.omega * np.exp(0.7j), bf.f, bf.gammas, channels)
    for name in ("bp", "bp_tx", "bp_rx"):
        assert np.all(getattr(p, name) >= 0)
        np.testing.assert_allclose(getattr(q, name), getattr(p, name), rtol=1e-10)


def test_pattern_grid_csv(tmp_path, reference, channels, bf):
    g = pattern_grid(reference, bf.omega, bf.f, bf.gammas, channels, az=(-4, 4), el=(0, 2), step=2.0)
    assert g.bp.shape == (10,)
    path = tmp_path / "p.csv"
    write_pattern_csv(path, g)
    lines = path.read_text().splitlines()
    assert lines[0] == "az_deg,el_deg,bp_tx,bp_rx,bp"
    assert len(lines) == 11
