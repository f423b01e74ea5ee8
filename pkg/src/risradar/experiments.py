"""Monte Carlo campaigns: detection/rate operating points and the orthogonality study."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import __version__
from .channel import (ChannelSet, TargetState, amplitude_variance, build_channels, calibrate_rcs,
                      complex_normal, rng_stream)
from .designer import DesignCase, DesignOptions, beamformer_set, design_case
from .detection import (Calibration, PlotList, best_trajectory, extract_plots, smooth_trajectory,
                        threshold_from_scores)
from .frontend import ScanSimulator
from .precoding import BeamformerSet, assemble, comm_metrics
from .scenario import Scenario

log = logging.getLogger(__name__)

# sub-stream keys under the scenario seed
STREAM_USERS = 1
STREAM_H0 = 2
STREAM_TARGET = 3
STREAM_H1 = 4


def default_cache_dir() -> Path:
    return Path(os.environ.get("RISRADAR_CACHE", Path.home() / ".cache" / "risradar"))


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def position_rmse(estimates, truths) -> float:
    """Root-mean-square Euclidean error; NaN when there is nothing to average."""
    est = np.asarray(estimates, dtype=float).reshape(-1, 3)
    tru = np.asarray(truths, dtype=float).reshape(-1, 3)
    if len(est) == 0:
        return float("nan")
    return float(np.sqrt(np.mean(np.sum((est - tru) ** 2, axis=1))))


def auto_gate_margin(scn: Scenario) -> float:
    """Measurement slack added to the kinematic gate: one range cell plus the
    chord between adjacent beam directions at the far edge of the volume."""
    g = scn.grids
    cell = float(np.diff(g.ranges).mean()) if len(g.ranges) > 1 else 0.0
    az = np.sort(np.unique(g.pointing[:, 0]))
    step = float(np.diff(az).min()) if len(az) > 1 else 0.0
    return cell + 2.0 * g.ranges.max() * np.sin(np.radians(step) / 2)


@dataclass(frozen=True)
class DetectorSettings:
    eta_plot: float
    neighborhood: object
    v_max: float
    gate_margin: float
    p_fa: float

    @classmethod
    def from_scenario(cls, scn: Scenario, p_fa: float | None = None) -> "DetectorSettings":
        d = scn.doc["detection"]
        margin = d["gate_margin"]
        return cls(d["eta_plot"], d["neighborhood"], d["v_max"],
                   auto_gate_margin(scn) if margin is None else float(margin),
                   d["p_fa"] if p_fa is None else p_fa)

    def plots(self, arr, scn) -> PlotList:
        return extract_plots(arr, self.eta_plot, scn, self.neighborhood)


@dataclass
class OperatingPoint:
    gamma_r: float
    n_scan: int
    n_users: int
    orthogonality: bool
    pd: float
    pd_low: float
    pd_high: float
    rmse: float
    raw_rmse: float
    sum_rate: float
    threshold: float
    p_fa: float
    h0_trials: int
    h1_trials: int
    detections: int
    seed: int

    def row(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Target generation
# ---------------------------------------------------------------------------


def sample_target(scn: Scenario, rng: np.random.Generator, rcs: float, t_ref: float = 0.0) -> TargetState:
    """Constant-velocity target whose position at ``t_ref`` is uniform in the
    monitored volume and whose speed is at most the configured maximum."""
    vol = scn.volume
    r0, r1 = vol["range"]
    r = (rng.uniform(r0**3, r1**3)) ** (1 / 3)
    az = rng.uniform(*vol["az"])
    s0, s1 = np.sin(np.radians(vol["el"]))
    el = np.degrees(np.arcsin(rng.uniform(s0, s1)))
    pos = scn.ris_position(r, np.array([az, el]))
    vmax = scn.doc["target"]["max_speed"]
    v = rng.standard_normal(3)
    v *= vmax * rng.random() ** (1 / 3) / np.linalg.norm(v)
    return TargetState(pos - v * t_ref, v, rcs)


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------


class Campaign:
    """Shared state of one set of experiments: channels, cached designs, RCS."""

    def __init__(self, scn: Scenario, cache_dir: str | Path | None = None,
                 design_options: DesignOptions | None = None, seed: int | None = None,
                 threads: int = 1, p_fa: float | None = None):
        if seed is not None:
            scn = scn.with_overrides(f"seed={int(seed)}")
        self.scn = scn
        self.seed = scn.seed
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        if design_options is None:
            # campaigns may cap the optimiser budget; the bounds and beta are unchanged
            budget = scn.doc.get("campaign", {}).get("design", {})
            design_options = DesignOptions.from_doc(scn.doc["design"], **budget)
        self.options = design_options
        self.threads = max(1, int(threads))
        self.detector = DetectorSettings.from_scenario(scn, p_fa)
        k_max = max([scn.n_users, *scn.doc.get("campaign", {}).get("n_users", [0])])
        # users are static: one draw for the whole campaign, K users = first K columns
        self.channels = build_channels(scn, rng_stream(scn.seed, STREAM_USERS), n_users=k_max)
        self._bfs: dict[DesignCase, list[BeamformerSet]] = {}
        self._rcs: float | None = None

    # -- designs -------------------------------------------------------------

    def case(self, subvolume: int, gamma_r: float, n_users: int, orthogonality: bool = True) -> DesignCase:
        if gamma_r >= 1.0:
            # no user power: the radar stream owns the whole space regardless of K
            return DesignCase(subvolume, 1.0, 0, True)
        return DesignCase(subvolume, float(gamma_r), int(n_users), bool(orthogonality))

    def channels_for(self, n_users: int) -> ChannelSet:
        return self.channels.with_users(self.channels.h[:, :, :n_users])

    def beamformers(self, gamma_r: float, n_users: int, orthogonality: bool = True) -> list[BeamformerSet]:
        key = self.case(0, gamma_r, n_users, orthogonality)
        if key not in self._bfs:
            ch = self.channels_for(key.n_users)
            out = []
            for i in range(len(self.scn.grids.pointing)):
                case = replace(key, subvolume=i)
                res = design_case(self.scn, ch, case, self.options, self.cache_dir)
                out.append(beamformer_set(ch, case, res))
            self._bfs[key] = out
        return self._bfs[key]

    def sum_rate(self, gamma_r: float, n_users: int, orthogonality: bool = True) -> float:
        """Sum-rate averaged over the subvolume illuminations of a scan."""
        if gamma_r >= 1.0 or n_users == 0:
            return 0.0
        ch = self.channels_for(n_users)
        rates = [comm_metrics(ch.h, bf, self.scn.ofdm.power, ch.sigma_k2)[2]
                 for bf in self.beamformers(gamma_r, n_users, orthogonality)]
        return float(np.mean(rates))

    @property
    def rcs(self) -> float:
        """Target RCS giving the nominal SNR at the reference point with all
        power on the radar stream."""
        if self._rcs is None:
            v = self.scn.doc["target"]["rcs"]
            if v is not None:
                self._rcs = float(v)
            else:
                i = self.scn.doc["target"]["reference_pointing"]
                case = self.case(i, 1.0, 0)
                ch = self.channels_for(0)
                res = design_case(self.scn, ch, case, self.options, self.cache_dir)
                bf = beamformer_set(ch, case, res)
                self._rcs = calibrate_rcs(self.scn, bf.omega, bf.f, bf.gammas, ch)
        return self._rcs

    # -- detection -----------------------------------------------------------

    def simulator(self, gamma_r: float, n_users: int, orthogonality: bool = True) -> ScanSimulator:
        return ScanSimulator(self.scn, self.channels_for(self.case(0, gamma_r, n_users).n_users),
                             self.beamformers(gamma_r, n_users, orthogonality))

    def calibrate(self, n_scan: int, trials: int, p_fa: float | None = None) -> Calibration:
        """H0 threshold for ``n_scan`` scans.

        Under H0 the receive-combined samples are white whatever the
        beamformers, so one calibration serves every operating point.
        """
        p_fa = self.detector.p_fa if p_fa is None else p_fa
        if trials < 10 / p_fa:
            raise ValueError("at least 10/P_fa trials are required")
        d = self.detector
        tag = _digest({"scn": self.scn.digest(("ofdm", "grids", "powers", "seed")), "n": n_scan,
                       "trials": trials, "eta": d.eta_plot, "nb": d.neighborhood, "v": d.v_max,
                       "gm": d.gate_margin, "v2": 1})
        path = self.cache_dir / f"h0_{tag}.npy"
        if path.exists():
            scores = np.load(path)
        else:
            scores = self._map(_h0_chunk, trials, n_scan)
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, scores)
        return Calibration(threshold_from_scores(scores, p_fa), p_fa, n_scan, scores)

    def h0_scores(self, n_scan: int, trials: int, offset: int) -> np.ndarray:
        """Fresh H0 scores from trial indices disjoint from the calibration set."""
        return self._map(_h0_chunk, trials, n_scan, offset)

    def h1_trials(self, gamma_r: float, n_users: int, n_scans: Sequence[int], trials: int,
                  orthogonality: bool = True) -> dict:
        """Per-trial TBD outcomes for several window lengths ending at the same scan.

        Trials share their target and noise seeds across operating points
        (common random numbers), so trends are not masked by sampling noise.
        """
        self.beamformers(gamma_r, n_users, orthogonality)
        _ = self.rcs
        res = self._map(_h1_chunk, trials, (gamma_r, n_users, orthogonality, tuple(n_scans)))
        return _merge_h1(res, n_scans)

    def operating_points(self, gamma_r: float, n_users: int, n_scans: Sequence[int], h0_trials: int,
                         h1_trials: int, orthogonality: bool = True) -> list[OperatingPoint]:
        out = []
        h1 = self.h1_trials(gamma_r, n_users, n_scans, h1_trials, orthogonality)
        rate = self.sum_rate(gamma_r, n_users, orthogonality)
        for n in n_scans:
            cal = self.calibrate(n, h0_trials)
            score = h1[n]["score"]
            det = score > cal.threshold
            k = int(det.sum())
            low, high = wilson_interval(k, len(det))
            out.append(OperatingPoint(
                gamma_r=float(gamma_r), n_scan=int(n), n_users=int(n_users), orthogonality=bool(orthogonality),
                pd=k / len(det), pd_low=low, pd_high=high,
                rmse=position_rmse(h1[n]["smoothed"][det], h1[n]["truth"][det]),
                raw_rmse=position_rmse(h1[n]["raw"][det], h1[n]["truth_raw"][det]),
                sum_rate=rate, threshold=cal.threshold, p_fa=cal.p_fa, h0_trials=cal.trials,
                h1_trials=len(det), detections=k, seed=self.seed,
            ))
        return out

    def _h0_simulator(self) -> ScanSimulator:
        sim = getattr(self, "_h0_sim", None)
        if sim is None:
            # any valid beamformer works: noise-only scans ignore the design
            o, n = self.scn.ofdm, len(self.scn.grids.pointing)
            d_ris, d_tx = self.channels.g_tx.shape[1:]
            f = np.zeros((o.n_sub, d_tx), dtype=complex)
            f[:, 0] = 1.0
            bf = assemble(np.zeros((o.n_sub, d_tx, 0), dtype=complex), f, np.ones((o.n_sub, 1)),
                          np.ones(d_ris, dtype=complex))
            sim = self._h0_sim = ScanSimulator(self.scn, self.channels_for(0), [bf] * n)
        return sim

    # -- parallel plumbing ---------------------------------------------------

    def _map(self, fn, trials: int, arg, offset: int = 0):
        chunks = _chunks(offset, trials, max(1, min(self.threads * 4, trials)))
        if self.threads == 1:
            parts = [fn(self, lo, hi, arg) for lo, hi in chunks]
        else:
            with ProcessPoolExecutor(self.threads, initializer=_init_worker, initargs=(self,)) as ex:
                parts = list(ex.map(_worker_call, [(fn, lo, hi, arg) for lo, hi in chunks]))
        if isinstance(parts[0], np.ndarray):
            return np.concatenate(parts)
        return [p for part in parts for p in part]


def _chunks(offset: int, n: int, k: int):
    edges = np.linspace(offset, offset + n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


_WORKER: Campaign | None = None


def _init_worker(campaign: Campaign) -> None:
    global _WORKER
    _WORKER = campaign


def _worker_call(job):
    fn, lo, hi, arg = job
    return fn(_WORKER, lo, hi, arg)


def _h0_chunk(camp: Campaign, lo: int, hi: int, n_scan: int) -> np.ndarray:
    # noise-only scans do not depend on the beamformers
    sim = camp._h0_simulator()
    d = camp.detector
    out = np.empty(hi - lo)
    for t in range(lo, hi):
        rng = rng_stream(camp.seed, STREAM_H0, n_scan, t)
        lists = [d.plots(sim.scan(rng, s), camp.scn) for s in range(n_scan)]
        out[t - lo] = best_trajectory(lists, d.v_max, d.gate_margin)[0]
    return out


def _h1_chunk(camp: Campaign, lo: int, hi: int, arg) -> list:
    gamma_r, n_users, orth, n_scans = arg
    sim = camp.simulator(gamma_r, n_users, orth)
    scn, d = camp.scn, camp.detector
    total = max(n_scans)
    t_last = (total - 1) * sim.t_scan
    out = []
    for t in range(lo, hi):
        target = sample_target(scn, rng_stream(camp.seed, STREAM_TARGET, t), camp.rcs, t_last)
        rng = rng_stream(camp.seed, STREAM_H1, t)
        lists = []
        for s in range(total):
            state = target.at(s * sim.t_scan)
            alpha = complex_normal(rng, (), amplitude_variance(scn, state))
            lists.append(d.plots(sim.scan(rng, s, [target], [alpha]), scn))
        rec = {}
        for n in n_scans:
            window = lists[total - n:]
            score, traj = best_trajectory(window, d.v_max, d.gate_margin)
            nan3 = np.full(3, np.nan)
            smoothed = raw = truth = truth_raw = nan3
            if traj is not None:
                sm = smooth_trajectory(traj, window)
                smoothed = sm.final_position
                truth = target.at(sm.final_time).position
                i, k = traj.observed()[-1]
                raw = window[i].xyz[k]
                truth_raw = target.at(window[i].times[k]).position
            rec[n] = (score, smoothed, raw, truth, truth_raw)
        out.append(rec)
    return out


def _merge_h1(records: list, n_scans) -> dict:
    out = {}
    for n in n_scans:
        out[n] = {
            "score": np.array([r[n][0] for r in records]),
            "smoothed": np.array([r[n][1] for r in records]).reshape(-1, 3),
            "raw": np.array([r[n][2] for r in records]).reshape(-1, 3),
            "truth": np.array([r[n][3] for r in records]).reshape(-1, 3),
            "truth_raw": np.array([r[n][4] for r in records]).reshape(-1, 3),
        }
    return out


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Campaign drivers
# ---------------------------------------------------------------------------


def run_sweep(camp: Campaign, gamma_grid: Sequence[float], n_scans: Sequence[int], n_users: Sequence[int],
              h0_trials: int, h1_trials: int, orthogonality: bool = True) -> list[OperatingPoint]:
    pts = []
    for k in n_users:
        for g in gamma_grid:
            log.info("operating points gamma_r=%.3f K=%d orth=%s", g, k, orthogonality)
            pts += camp.operating_points(g, k, n_scans, h0_trials, h1_trials, orthogonality)
    return pts


def run_orthogonality_study(camp: Campaign, gamma_grid: Sequence[float], n_users: Sequence[int],
                            n_scans: Sequence[int], h0_trials: int, h1_trials: int):
    """Paired operating points with the radar stream confined to the users'
    null space (on) and free over the whole space (off)."""
    on = run_sweep(camp, gamma_grid, n_scans, n_users, h0_trials, h1_trials, True)
    off = run_sweep(camp, gamma_grid, n_scans, n_users, h0_trials, h1_trials, False)
    return list(zip(on, off))


def trajectory_case(camp: Campaign, gamma_r: float, n_users: int, n_scan: int, trial: int = 0):
    """One H1 window with its plot lists, best trajectory, smoothed track and truth."""
    sim = camp.simulator(gamma_r, n_users)
    scn, d = camp.scn, camp.detector
    t_last = (n_scan - 1) * sim.t_scan
    target = sample_target(scn, rng_stream(camp.seed, STREAM_TARGET, trial), camp.rcs, t_last)
    rng = rng_stream(camp.seed, STREAM_H1, trial)
    lists = []
    for s in range(n_scan):
        alpha = complex_normal(rng, (), amplitude_variance(scn, target.at(s * sim.t_scan)))
        lists.append(d.plots(sim.scan(rng, s, [target], [alpha]), scn))
    score, traj = best_trajectory(lists, d.v_max, d.gate_margin)
    smoothed = smooth_trajectory(traj, lists) if traj is not None else None
    return {"target": target, "lists": lists, "score": score, "trajectory": traj, "smoothed": smoothed}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

FIELDS = list(OperatingPoint.__dataclass_fields__)


def write_points_csv(path: str | Path, points: Sequence[OperatingPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        for p in points:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in p.row().items()})


def read_points_csv(path: str | Path) -> list[OperatingPoint]:
    types = {k: f.type for k, f in OperatingPoint.__dataclass_fields__.items()}
    conv = {"float": float, "int": int, "bool": lambda s: s == "True"}
    with open(path, newline="") as fh:
        return [OperatingPoint(**{k: conv[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(fh)]


def build_info() -> dict:
    import subprocess

    info = {"version": __version__, "python": platform.python_version(), "numpy": np.__version__}
    try:
        info["git"] = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                                     text=True, cwd=Path(__file__).parent, timeout=5).stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        info["git"] = None
    return info


def write_manifest(out_dir: str | Path, scn: Scenario, command: str, files: Sequence[str], extra: dict | None = None) -> Path:
    """manifest.json describing one command's outputs. Merges with an existing manifest."""
    path = Path(out_dir) / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {"runs": []}
    man["scenario_digest"] = scn.digest()
    man["design_digest"] = scn.design_digest()
    man["seed"] = scn.seed
    man["build"] = build_info()
    entry = {"command": command, "files": sorted(files)}
    if extra:
        entry.update(extra)
    man["runs"] = [r for r in man["runs"] if r.get("command") != command] + [entry]
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=str))
    return path
