import numpy as np
import pytest

from risradar.scenario import (
    ArrayGeometry, Scenario, ScenarioError, apply_overrides, default_document,
    steering_vector, validate_scenario,
)


def test_reference_document_is_valid(reference):
    assert validate_scenario(reference) == []


def test_derived_specs(reference):
    sp = reference.specs
    assert sp.range_resolution == pytest.approx(6.51, abs=0.01)
    assert sp.velocity_resolution == pytest.approx(9.37, abs=0.01)
    assert sp.unambiguous_range == pytest.approx(208.19, abs=0.01)
    assert sp.unambiguous_velocity == pytest.approx(299.79, abs=0.01)
    assert sp.max_range_cp == pytest.approx(713.79, abs=0.01)
    assert sp.scan_duration == pytest.approx(0.06, abs=0.01)


def test_specs_scale_with_grid_sizes(reference):
    base = reference.specs
    doubled = Scenario.reference([f"ofdm.n_sub={2 * reference.ofdm.n_sub}"]).specs
    assert doubled.range_resolution == pytest.approx(base.range_resolution / 2)
    doubled = Scenario.reference([f"ofdm.n_sym={2 * reference.ofdm.n_sym}"]).specs
    assert doubled.velocity_resolution == pytest.approx(base.velocity_resolution / 2)


def test_pointing_directions_on_grid(reference):
    p = reference.grids.pointing
    assert p.shape == (6, 2)
    np.testing.assert_allclose(p[:, 0], [-18.75, -11.25, -3.75, 3.75, 11.25, 18.75])
    np.testing.assert_allclose(p[:, 1], 10.0)


def test_steering_vector_unit_modulus_and_conjugation(reference, rng):
    ris = reference.ris_array
    f = reference.ofdm.carrier_freq
    for _ in range(10):
        az, el = rng.uniform(-60, 60), rng.uniform(-40, 40)
        a = steering_vector(ris, (az, el), f)
        np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)
        b = steering_vector(ris, (-az, -el), f)
        np.testing.assert_allclose(b, np.conj(a), atol=1e-9)


def test_planar_geometry_roundtrip(rng):
    g = ArrayGeometry.planar([1.0, 2.0, 3.0], [1.0, 1.0, 0.0], 4, 2, 0.01)
    assert g.size == 8
    v = rng.normal(size=3)
    np.testing.assert_allclose(g.to_global(g.to_local(v)), v, atol=1e-12)


def test_overrides_and_digest(reference):
    other = reference.with_overrides("detection.eta_plot=6")
    assert other.doc["detection"]["eta_plot"] == 6
    assert other.digest() != reference.digest()
    # detector settings do not touch the designs
    assert other.design_digest() == reference.design_digest()
    moved = reference.with_overrides("regions.eps_sl=2e-8")
    assert moved.design_digest() != reference.design_digest()


def test_bad_override_rejected():
    with pytest.raises(ScenarioError):
        apply_overrides(default_document(), ["no.such.key=1"])
    with pytest.raises(ScenarioError):
        apply_overrides(default_document(), ["ofdm.n_sub"])


def test_validation_flags_bad_values(reference):
    with pytest.raises(ScenarioError):
        reference.with_overrides("ofdm.n_sub=-4")
    assert validate_scenario(reference.with_overrides("powers.n_users=9"))
    assert any("T_o" in v for v in validate_scenario(reference.with_overrides("grids.volume.range=[20, 900]")))
