import json

import numpy as np
import pytest

from risradar.designer import DesignOptions
from risradar.experiments import (
    Campaign, auto_gate_margin, position_rmse, read_points_csv, sample_target, wilson_interval,
    write_manifest, write_points_csv,
)

TINY = ["campaign.n_users=[3]", "detection.p_fa=0.1"]
FAST = DesignOptions(outer_max=1, inner_max=2)


@pytest.fixture(scope="module")
def camp(tmp_path_factory, reference):
    return Campaign(reference.with_overrides(*TINY), tmp_path_factory.mktemp("cache"), FAST)


def test_wilson_interval():
    lo, hi = wilson_interval(45, 100)
    assert lo == pytest.approx(0.3561, abs=1e-3) and hi == pytest.approx(0.5475, abs=1e-3)
    assert wilson_interval(0, 10)[0] == 0.0


def test_position_rmse():
    est = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
    assert position_rmse(est, np.zeros((2, 3))) == pytest.approx(np.sqrt(12.5))
    assert np.isnan(position_rmse(np.zeros((0, 3)), np.zeros((0, 3))))


def test_gate_margin_covers_beam_spacing(reference):
    # range cell plus the chord between adjacent beams at the far edge
    assert auto_gate_margin(reference) == pytest.approx(3.25 + 2 * 200 * np.sin(np.radians(3.75)), rel=0.01)


def test_targets_stay_in_volume(reference):
    rng = np.random.default_rng(0)
    vol, ris = reference.volume, reference.ris_array
    for _ in range(200):
        tgt = sample_target(reference, rng, 1.0, t_ref=0.5)
        p = tgt.at(0.5).position - ris.center
        az, el = ris.direction_of(p)
        assert vol["range"][0] - 1e-9 <= np.linalg.norm(p) <= vol["range"][1] + 1e-9
        assert vol["az"][0] - 1e-9 <= az <= vol["az"][1] + 1e-9
        assert vol["el"][0] - 1e-9 <= el <= vol["el"][1] + 1e-9
        assert np.linalg.norm(tgt.velocity) <= reference.doc["target"]["max_speed"] + 1e-9


def test_calibration_is_cached_and_design_free(camp):
    a = camp.calibrate(2, 200)
    b = camp.calibrate(2, 200)
    assert np.array_equal(a.scores, b.scores)
    assert len(list(camp.cache_dir.glob("h0_*.npy"))) == 1
    assert np.mean(a.scores > a.threshold) == pytest.approx(0.1, abs=0.01)


def test_operating_points_reproducible(tmp_path, camp, reference):
    pts = camp.operating_points(0.5, 3, [1, 3], 200, 20)
    other = Campaign(reference.with_overrides(*TINY), tmp_path, FAST, threads=2)
    again = other.operating_points(0.5, 3, [1, 3], 200, 20)
    assert [p.row() for p in pts] == [p.row() for p in again]
    for p in pts:
        assert p.pd_low <= p.pd <= p.pd_high
        assert p.h1_trials == 20 and p.sum_rate > 0


def test_sum_rate_non_increasing_in_gamma(camp):
    rates = [camp.sum_rate(g, 3) for g in (0.0, 0.5, 1.0)]
    assert rates[0] >= rates[1] >= rates[2] == 0.0


def test_orthogonality_protects_users(camp):
    assert camp.sum_rate(0.5, 3, True) > 5 * camp.sum_rate(0.5, 3, False)


def test_points_csv_and_manifest(tmp_path, camp):
    pts = camp.operating_points(0.5, 3, [1], 200, 10)
    write_points_csv(tmp_path / "p.csv", pts)
    back = read_points_csv(tmp_path / "p.csv")
    for a, b in zip(back, pts):
        # the CSV keeps ten significant digits
        for k, v in b.row().items():
            assert getattr(a, k) == (pytest.approx(v, rel=1e-9) if isinstance(v, float) else v)
    m = write_manifest(tmp_path, camp.scn, "sweep", ["p.csv"], {"note": 1})
    write_manifest(tmp_path, camp.scn, "report", [], None)
    doc = json.loads(m.read_text())
    assert [r["command"] for r in doc["runs"]] == ["sweep", "report"]
    assert doc["seed"] == camp.seed
