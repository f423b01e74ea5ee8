"""Plot extraction and the multi-frame track-before-detect processor."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .frontend import StatisticArray
from .scenario import Scenario


@dataclass(frozen=True)
class Plot:
    value: float
    range: float
    azimuth: float
    elevation: float
    time: float


@dataclass(frozen=True, eq=False)
class PlotList:
    """Plots of one scan stored column-wise; ``xyz`` are global positions."""

    values: np.ndarray
    ranges: np.ndarray
    angles: np.ndarray  # (n, 2) az/el degrees
    times: np.ndarray
    xyz: np.ndarray  # (n, 3)
    scan: int = 0

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> Plot:
        return Plot(float(self.values[k]), float(self.ranges[k]), float(self.angles[k, 0]),
                    float(self.angles[k, 1]), float(self.times[k]))

    @classmethod
    def empty(cls, scan: int = 0) -> "PlotList":
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)), scan)

    @classmethod
    def from_plots(cls, plots: Sequence[Plot], scn: Scenario, scan: int = 0) -> "PlotList":
        if not plots:
            return cls.empty(scan)
        v = np.array([p.value for p in plots])
        r = np.array([p.range for p in plots])
        ang = np.array([[p.azimuth, p.elevation] for p in plots])
        t = np.array([p.time for p in plots])
        return cls(v, r, ang, t, scn.ris_position(r, ang), scan)

    def without(self, rows: Iterable[int]) -> "PlotList":
        keep = np.ones(len(self), dtype=bool)
        keep[list(rows)] = False
        return PlotList(self.values[keep], self.ranges[keep], self.angles[keep], self.times[keep],
                        self.xyz[keep], self.scan)

    def to_json(self) -> dict:
        return {"scan": self.scan,
                "plots": [[float(v), float(r), float(a), float(e), float(t)]
                          for v, r, (a, e), t in zip(self.values, self.ranges, self.angles, self.times)]}


def write_plot_lists(path: str | Path, lists: Sequence[PlotList]) -> None:
    """JSON lines, one scan per line; each plot is [value, range, az, el, time]."""
    with open(path, "w") as fh:
        for pl in lists:
            fh.write(json.dumps(pl.to_json()) + "\n")


def read_plot_lists(path: str | Path, scn: Scenario) -> list[PlotList]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(PlotList.from_plots([Plot(*row) for row in d["plots"]], scn, d["scan"]))
    return out


def peak_window(neighborhood, shape) -> tuple[int, int, int]:
    """Odd per-axis window sizes of the peak test.

    ``neighborhood`` is one odd size for all three axes or a per-axis list;
    0 on an axis spans the whole axis from any bin.
    """
    sizes = [neighborhood] * 3 if np.isscalar(neighborhood) else list(neighborhood)
    if len(sizes) != 3:
        raise ValueError("neighborhood needs three axis sizes")
    sizes = [2 * n - 1 if s == 0 else int(s) for s, n in zip(sizes, shape)]
    if any(s < 1 or s % 2 == 0 for s in sizes):
        raise ValueError("neighborhood sizes must be odd (or 0 for a full axis)")
    return tuple(sizes)


def extract_plots(arr: StatisticArray, eta_plot: float, scn: Scenario, neighborhood=3) -> PlotList:
    """One plot per strict local maximum of the array above ``eta_plot``.

    The window is truncated at the array boundary.
    """
    if eta_plot <= 0:
        raise ValueError("eta_plot must be positive")
    v = arr.values
    size = peak_window(neighborhood, v.shape)
    # the box maximum is separable; strictness is then checked on the few candidates
    top = ndimage.maximum_filter(v, size=size, mode="constant", cval=-np.inf)
    cand = np.argwhere((v >= top) & (v > eta_plot))
    keep = []
    for c in cand:
        sl = tuple(slice(max(0, x - s // 2), x + s // 2 + 1) for x, s in zip(c, size))
        if np.count_nonzero(v[sl] == v[tuple(c)]) == 1:
            keep.append(c)
    i, j, d = np.asarray(keep, dtype=int).reshape(-1, 3).T
    g = scn.grids
    ranges = g.ranges[j]
    angles = g.pointing[i]
    return PlotList(v[i, j, d], ranges, angles, arr.timestamps[i], scn.ris_position(ranges, angles), arr.scan)


# ---------------------------------------------------------------------------
# Track-before-detect
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    xi: np.ndarray  # (N_scan,) 1-based plot rows, 0 = not observed
    score: float

    def observed(self):
        """(scan index, row) pairs of the observed plots."""
        return [(i, int(k) - 1) for i, k in enumerate(self.xi) if k]


@dataclass(eq=False)
class TbdResult:
    declared: bool
    score: float
    trajectory: Trajectory | None


def _gate(lists: Sequence[PlotList], i: int, j: int, v_max: float, margin: float) -> np.ndarray:
    """Feasibility matrix between plots of scan j (rows) and a later scan i (cols)."""
    a, b = lists[j], lists[i]
    dist = np.linalg.norm(a.xyz[:, None, :] - b.xyz[None, :, :], axis=-1)
    dt = b.times[None, :] - a.times[:, None]
    return (dt > 0) & (dist <= v_max * dt + margin)


def best_trajectory(lists: Sequence[PlotList], v_max: float, gate_margin: float = 0.0) -> tuple[float, Trajectory | None]:
    """Dynamic programme over 'last observed plot' states.

    best[i][p] = value(p) + max(0, best[j][p'] over gate-compatible p' in scans j < i).
    """
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    n = len(lists)
    if n == 0:
        raise ValueError("at least one scan is required")
    best: list[np.ndarray] = []
    back: list[np.ndarray] = []  # (scan, row) of predecessor, -1 if none
    for i, pl in enumerate(lists):
        score = pl.values.astype(float).copy()
        prev = np.full((len(pl), 2), -1, dtype=int)
        for j in range(i):
            if not len(lists[j]) or not len(pl):
                continue
            ok = _gate(lists, i, j, v_max, gate_margin)
            cand = np.where(ok, best[j][:, None], -np.inf)
            k = cand.argmax(axis=0)
            c = cand[k, np.arange(len(pl))]
            gain = pl.values + c
            upd = gain > score
            score[upd] = gain[upd]
            prev[upd] = np.stack([np.full(upd.sum(), j), k[upd]], axis=1)
        best.append(score)
        back.append(prev)
    last = best[-1]
    if not len(last):
        return 0.0, None
    p = int(last.argmax())
    xi = np.zeros(n, dtype=int)
    i = n - 1
    while p >= 0:
        xi[i] = p + 1
        i, p = back[i][p]
    return float(last.max()), Trajectory(xi, float(last.max()))


def tbd_detect(lists: Sequence[PlotList], v_max: float, eta_tbd: float, gate_margin: float = 0.0) -> TbdResult:
    score, traj = best_trajectory(lists, v_max, gate_margin)
    declared = traj is not None and score > eta_tbd
    return TbdResult(declared, score, traj)


def brute_force_tbd(lists: Sequence[PlotList], v_max: float, gate_margin: float = 0.0,
                    limit: int = 10**6) -> tuple[float, Trajectory | None]:
    """Exhaustive search over every trajectory ending in the current scan."""
    sizes = [len(pl) + 1 for pl in lists]
    if np.prod(sizes, dtype=float) > limit:
        raise ValueError("instance too large for exhaustive search")
    best, arg = -np.inf, None
    for xi in itertools.product(*(range(s) for s in sizes)):
        if xi[-1] == 0:
            continue
        obs = [(i, k - 1) for i, k in enumerate(xi) if k]
        feasible = True
        for (i0, k0), (i1, k1) in zip(obs, obs[1:]):
            a, b = lists[i0], lists[i1]
            dt = b.times[k1] - a.times[k0]
            if not (dt > 0 and np.linalg.norm(b.xyz[k1] - a.xyz[k0]) <= v_max * dt + gate_margin):
                feasible = False
                break
        if not feasible:
            continue
        s = sum(float(lists[i].values[k]) for i, k in obs)
        if s > best:
            best, arg = s, np.array(xi)
    if arg is None:
        return 0.0, None
    return best, Trajectory(arg, best)


def cancel_tracks(lists: Sequence[PlotList], v_max: float, eta_tbd: float, max_targets: int = 1,
                  gate_margin: float = 0.0) -> list[Trajectory]:
    """Successive track cancellation: detect, strip the track's plots, repeat.

    Returned trajectories index into the original lists.
    """
    if max_targets < 1:
        raise ValueError("max_targets must be at least 1")
    work = list(lists)
    # row maps from the reduced lists back to the originals
    maps = [np.arange(len(pl)) for pl in lists]
    found = []
    while len(found) < max_targets:
        res = tbd_detect(work, v_max, eta_tbd, gate_margin)
        if not res.declared:
            break
        xi = np.zeros(len(work), dtype=int)
        for i, k in res.trajectory.observed():
            xi[i] = maps[i][k] + 1
        found.append(Trajectory(xi, res.score))
        for i, k in res.trajectory.observed():
            work[i] = work[i].without([k])
            maps[i] = np.delete(maps[i], k)
    return found


def threshold_from_scores(scores: np.ndarray, p_fa: float) -> float:
    """Threshold whose strict exceedance rate over ``scores`` is about ``p_fa``."""
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    if not 0 < p_fa <= 1:
        raise ValueError("p_fa must lie in (0, 1]")
    m = int(np.floor(p_fa * len(s)))
    if m >= len(s):
        return float(np.nextafter(s[-1], -np.inf))
    return float(s[m])


@dataclass(eq=False)
class Calibration:
    threshold: float
    p_fa: float
    n_scan: int
    scores: np.ndarray = field(repr=False)

    @property
    def trials(self) -> int:
        return len(self.scores)


def calibrate_tbd_threshold(simulator, n_scan: int, p_fa: float, trials: int, rng: np.random.Generator,
                            eta_plot: float, v_max: float, gate_margin: float = 0.0,
                            neighborhood=3) -> Calibration:
    """Empirical (1 - P_fa) quantile of the H0 TBD score over disjoint windows."""
    if trials < 10 / p_fa:
        raise ValueError("at least 10/P_fa trials are required")
    scn = simulator.scn
    scores = np.empty(trials)
    for t in range(trials):
        lists = [extract_plots(simulator.scan(rng, s), eta_plot, scn, neighborhood) for s in range(n_scan)]
        scores[t] = best_trajectory(lists, v_max, gate_margin)[0]
    return Calibration(threshold_from_scores(scores, p_fa), p_fa, n_scan, scores)


# ---------------------------------------------------------------------------
# Smoothing
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SmoothedTrack:
    times: np.ndarray
    positions: np.ndarray  # (m, 3) at the observed timestamps
    velocity: np.ndarray
    degree: int
    raw: bool = False

    @property
    def final_position(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


def smooth_trajectory(traj: Trajectory, lists: Sequence[PlotList], max_degree: int = 2) -> SmoothedTrack:
    """Least-squares polynomial fit of x, y, z against time over the observed plots."""
    obs = traj.observed()
    t = np.array([lists[i].times[k] for i, k in obs])
    p = np.array([lists[i].xyz[k] for i, k in obs])
    if len(obs) < 2:
        return SmoothedTrack(t, p, np.zeros(3), 0, raw=True)
    deg = min(max_degree, len(obs) - 1)
    t0 = t[-1]
    coef = np.polynomial.polynomial.polyfit(t - t0, p, deg)  # (deg+1, 3)
    fitted = np.polynomial.polynomial.polyval(t - t0, coef).T
    # derivative at the final timestamp (t - t0 = 0) is the linear coefficient
    return SmoothedTrack(t, fitted, coef[1].copy(), deg)
