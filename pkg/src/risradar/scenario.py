"""Scenario configuration, array geometry, radar grids and steering vectors.

A scenario is loaded from a JSON document (see ``data/scenario.schema.json``)
with sections ``ofdm``, ``arrays``, ``geometry``, ``grids``, ``regions`` and
``powers``, plus the optional ``target``, ``detection``, ``design`` and
``seed`` sections. All units are SI, angles are in degrees.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23

_UP = np.array([0.0, 0.0, 1.0])


class ScenarioError(ValueError):
    """Raised for malformed scenario documents or bad overrides."""


# ---------------------------------------------------------------------------
# Directions and arrays
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Direction:
    """Azimuth/elevation pair in degrees, measured in an array's local frame."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (-90.0 <= self.azimuth <= 90.0 and -90.0 <= self.elevation <= 90.0):
            raise ValueError(f"direction out of range: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.azimuth, self.elevation])


def local_unit_vectors(az_deg, el_deg) -> np.ndarray:
    """Unit vectors (..., 3) in local (horizontal, vertical, boresight) coordinates."""
    az = np.deg2rad(np.asarray(az_deg, dtype=float))
    el = np.deg2rad(np.asarray(el_deg, dtype=float))
    return np.stack(
        [np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)], axis=-1
    )


def as_angles(directions) -> np.ndarray:
    """Coerce a Direction, a list of Directions or an (..., 2) array to degrees."""
    if isinstance(directions, Direction):
        return directions.as_array()
    if isinstance(directions, (list, tuple)) and directions and isinstance(directions[0], Direction):
        return np.array([d.as_array() for d in directions])
    return np.asarray(directions, dtype=float)


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Planar (or arbitrary) array placed in the global frame.

    ``offsets`` are the element positions relative to ``center`` expressed in
    global coordinates; ``boresight`` and ``horizontal`` fix the local frame
    in which directions are measured.
    """

    center: np.ndarray
    boresight: np.ndarray
    horizontal: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        if self.offsets.ndim != 2 or self.offsets.shape[1] != 3 or len(self.offsets) < 1:
            raise ValueError("offsets must be an (N, 3) array with N >= 1")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("element positions must be finite")

    @classmethod
    def planar(cls, center, boresight, n_horizontal: int, n_vertical: int, spacing: float):
        center = np.asarray(center, dtype=float)
        n = np.asarray(boresight, dtype=float)
        n = n / np.linalg.norm(n)
        h = np.cross(n, _UP)
        if np.linalg.norm(h) < 1e-12:
            raise ValueError("boresight must not be vertical")
        h = h / np.linalg.norm(h)
        v = np.cross(h, n)
        ih = (np.arange(n_horizontal) - (n_horizontal - 1) / 2) * spacing
        iv = (np.arange(n_vertical) - (n_vertical - 1) / 2) * spacing
        # vertical index runs fastest
        hh, vv = np.meshgrid(ih, iv, indexing="ij")
        offsets = hh.reshape(-1, 1) * h + vv.reshape(-1, 1) * v
        return cls(center, n, h, offsets)

    @property
    def vertical(self) -> np.ndarray:
        return np.cross(self.horizontal, self.boresight)

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def positions(self) -> np.ndarray:
        return self.center + self.offsets

    @cached_property
    def aperture(self) -> float:
        """Largest distance between any pair of elements."""
        diff = self.offsets[:, None, :] - self.offsets[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    def to_global(self, local: np.ndarray) -> np.ndarray:
        """Rotate (..., 3) local (h, v, n) vectors into the global frame."""
        basis = np.stack([self.horizontal, self.vertical, self.boresight])
        return np.asarray(local) @ basis

    def to_local(self, vec: np.ndarray) -> np.ndarray:
        basis = np.stack([self.horizontal, self.vertical, self.boresight])
        return np.asarray(vec) @ basis.T

    def direction_of(self, vec) -> np.ndarray:
        """Azimuth/elevation (deg) of global vector(s) ``vec`` in the local frame."""
        loc = self.to_local(vec)
        loc = loc / np.linalg.norm(loc, axis=-1, keepdims=True)
        el = np.rad2deg(np.arcsin(np.clip(loc[..., 1], -1.0, 1.0)))
        az = np.rad2deg(np.arctan2(loc[..., 0], loc[..., 2]))
        return np.stack([az, el], axis=-1)

    def element_gain(self, vec) -> np.ndarray:
        """pi*cos(az)*cos(el) towards global vector(s) ``vec``, zero behind the array."""
        vec = np.asarray(vec, dtype=float)
        cosine = (vec @ self.boresight) / np.linalg.norm(vec, axis=-1)
        return np.pi * np.maximum(cosine, 0.0)


def steering_vector(geometry: ArrayGeometry, direction, freq) -> np.ndarray:
    """Far-field steering vector(s) of ``geometry``.

    ``direction`` may be a Direction or an (..., 2) array of az/el degrees and
    ``freq`` a scalar or a 1-D array of frequencies. The result has shape
    ``freq.shape + direction.shape[:-1] + (n_elements,)``.
    """
    ang = as_angles(direction)
    u = geometry.to_global(local_unit_vectors(ang[..., 0], ang[..., 1]))
    proj = u @ geometry.offsets.T
    freq = np.asarray(freq, dtype=float)
    k = 2.0 * np.pi * freq / SPEED_OF_LIGHT
    phase = k.reshape(k.shape + (1,) * proj.ndim) * proj
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# OFDM and grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OfdmConfig:
    carrier_freq: float
    subcarrier_spacing: float
    n_available: int
    cyclic_prefix: float
    n_sub: int
    sub_spacing: float
    n_sym: int
    n_guard: int
    power: float

    def __post_init__(self):
        ratio = self.sub_spacing / self.subcarrier_spacing
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("employed subcarrier spacing must be an integer multiple of W_o")
        for name in ("n_available", "n_sub", "n_sym"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_guard < 0:
            raise ValueError("n_guard must be non-negative")

    @property
    def symbol_duration(self) -> float:
        return 1.0 / self.subcarrier_spacing + self.cyclic_prefix

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def lambda_minus(self) -> float:
        """Band-edge wavelength c/(f_o - N_o W_o/2) used for element spacing and far-field."""
        return SPEED_OF_LIGHT / (self.carrier_freq - 0.5 * self.n_available * self.subcarrier_spacing)

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        q = np.arange(self.n_sub)
        return self.carrier_freq + (q - (self.n_sub - 1) / 2) * self.sub_spacing

    @property
    def subcarrier_indices(self) -> np.ndarray:
        """1-based subcarrier index q used in the delay phase."""
        return np.arange(1, self.n_sub + 1)


@dataclass(frozen=True, eq=False)
class RadarGrids:
    pointing: np.ndarray  # (N_dir, 2) az/el degrees
    delays: np.ndarray  # (N_del,) seconds
    dopplers: np.ndarray  # (N_dop,) Hz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.pointing), len(self.delays), len(self.dopplers))

    @property
    def ranges(self) -> np.ndarray:
        return SPEED_OF_LIGHT * self.delays / 2.0

    def pointing_directions(self) -> list[Direction]:
        return [Direction(float(a), float(e)) for a, e in self.pointing]


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """Direction sets used by the beampattern synthesis, one mainlobe and
    sidelobe set per pointing direction."""

    mainlobe: list[np.ndarray]
    sidelobe: list[np.ndarray]
    eavesdropper: np.ndarray
    jammer: np.ndarray
    eps_sl: float
    eps_ev: float
    eps_ja: float

    def __post_init__(self):
        if len(self.mainlobe) != len(self.sidelobe):
            raise ValueError("one sidelobe set per mainlobe set is required")
        for s in [*self.mainlobe, *self.sidelobe]:
            if len(s) == 0:
                raise ValueError("empty direction set")
        if min(self.eps_sl, self.eps_ev, self.eps_ja) <= 0:
            raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class RadarSpecs:
    range_resolution: float
    velocity_resolution: float
    max_range_cp: float
    unambiguous_range: float
    unambiguous_velocity: float
    scan_duration: float
    dwell_duration: float


def derived_radar_specs(ofdm: OfdmConfig, grids: RadarGrids) -> RadarSpecs:
    c = SPEED_OF_LIGHT
    t_sym = ofdm.symbol_duration
    t_dir = (ofdm.n_sym + ofdm.n_guard) * t_sym
    return RadarSpecs(
        range_resolution=c / (2 * ofdm.n_sub * ofdm.sub_spacing),
        velocity_resolution=ofdm.wavelength / (2 * ofdm.n_sym * t_sym),
        max_range_cp=c * ofdm.cyclic_prefix / 2,
        unambiguous_range=c / (2 * ofdm.sub_spacing),
        unambiguous_velocity=ofdm.wavelength / (4 * t_sym),
        scan_duration=len(grids.pointing) * t_dir,
        dwell_duration=t_dir,
    )


def box_directions(az_range, el_range, step: float) -> np.ndarray:
    """Uniform az/el samples (M, 2) covering a closed box."""
    az = np.arange(az_range[0], az_range[1] + 1e-9, step)
    el = np.arange(el_range[0], el_range[1] + 1e-9, step)
    aa, ee = np.meshgrid(az, el, indexing="ij")
    return np.stack([aa.ravel(), ee.ravel()], axis=-1)


def _in_box(dirs: np.ndarray, az_range, el_range) -> np.ndarray:
    return (
        (dirs[:, 0] >= az_range[0] - 1e-9)
        & (dirs[:, 0] <= az_range[1] + 1e-9)
        & (dirs[:, 1] >= el_range[0] - 1e-9)
        & (dirs[:, 1] <= el_range[1] + 1e-9)
    )


# ---------------------------------------------------------------------------
# Scenario document
# ---------------------------------------------------------------------------

DATA_DIR = resources.files("risradar") / "data"


def default_document() -> dict:
    return json.loads((DATA_DIR / "reference_scenario.json").read_text())


def schema_document() -> dict:
    return json.loads((DATA_DIR / "scenario.schema.json").read_text())


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; unknown keys are an error."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ScenarioError(f"unknown scenario key: {key}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ScenarioError(f"unknown scenario key: {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[parts[-1]] = value
    return doc


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable view over a validated scenario document."""

    doc: dict = field(repr=False)

    def __post_init__(self):
        import jsonschema

        try:
            jsonschema.validate(self.doc, schema_document())
        except jsonschema.ValidationError as exc:
            path = ".".join(str(p) for p in exc.absolute_path)
            raise ScenarioError(f"{path or '<root>'}: {exc.message}") from None

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Sequence[str] = ()) -> "Scenario":
        doc = default_document() if path is None else json.loads(Path(path).read_text())
        return cls(apply_overrides(doc, overrides))

    @classmethod
    def reference(cls, overrides: Sequence[str] = ()) -> "Scenario":
        return cls.load(None, overrides)

    def with_overrides(self, *overrides: str) -> "Scenario":
        return Scenario(apply_overrides(self.doc, overrides))

    def section(self, name: str) -> dict:
        return self.doc[name]

    # -- hashing ----------------------------------------------------------------

    def digest(self, sections: Sequence[str] | None = None) -> str:
        doc = self.doc if sections is None else {k: self.doc[k] for k in sections if k in self.doc}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def design_digest(self) -> str:
        return self.digest(("ofdm", "arrays", "geometry", "grids", "regions", "powers", "design", "seed"))

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    # -- components -------------------------------------------------------------

    @cached_property
    def ofdm(self) -> OfdmConfig:
        o = self.doc["ofdm"]
        return OfdmConfig(
            carrier_freq=o["carrier_freq"],
            subcarrier_spacing=o["subcarrier_spacing"],
            n_available=o["n_available"],
            cyclic_prefix=o["cyclic_prefix"],
            n_sub=o["n_sub"],
            sub_spacing=o["sub_spacing"],
            n_sym=o["n_sym"],
            n_guard=o["n_guard"],
            power=o["power"],
        )

    @property
    def element_spacing(self) -> float:
        s = self.doc["arrays"]["spacing"]
        return self.ofdm.lambda_minus / 2 if s is None else float(s)

    def _array(self, name: str, center_key: str, boresight_key: str) -> ArrayGeometry:
        nh, nv = self.doc["arrays"][name]
        g = self.doc["geometry"]
        return ArrayGeometry.planar(g[center_key], g[boresight_key], nh, nv, self.element_spacing)

    @cached_property
    def tx_array(self) -> ArrayGeometry:
        return self._array("tx", "bs_tx_center", "bs_boresight")

    @cached_property
    def rx_array(self) -> ArrayGeometry:
        return self._array("rx", "bs_rx_center", "bs_boresight")

    @cached_property
    def ris_array(self) -> ArrayGeometry:
        return self._array("ris", "ris_center", "ris_boresight")

    @property
    def users(self) -> np.ndarray:
        return np.asarray(self.doc["geometry"]["users"], dtype=float)

    @property
    def n_users(self) -> int:
        return int(self.doc["powers"]["n_users"])

    @cached_property
    def grids(self) -> RadarGrids:
        gr = self.doc["grids"]
        pointing = np.asarray(gr["pointing"], dtype=float)
        r0, r1 = gr["range"]
        delays = 2.0 * np.linspace(r0, r1, gr["n_delay"]) / SPEED_OF_LIGHT
        vmax = gr["velocity_max"]
        velocities = np.linspace(-vmax, vmax, gr["n_doppler"])
        dopplers = 2.0 * velocities / self.ofdm.wavelength
        return RadarGrids(pointing, delays, dopplers)

    @property
    def volume(self) -> dict:
        return self.doc["grids"]["volume"]

    @cached_property
    def regions(self) -> RegionSpec:
        r = self.doc["regions"]
        step = r["step_deg"]
        half_az, half_el = r["mainlobe_half_width"]
        guard = r["transition"]
        sl_box = r["sidelobe_box"]
        sl_all = box_directions(sl_box["az"], sl_box["el"], step)
        mains, sides = [], []
        for az, el in self.grids.pointing:
            main_az = (az - half_az, az + half_az)
            main_el = (el - half_el, el + half_el)
            main = box_directions(main_az, main_el, step)
            # centred sampling so that the set is symmetric about the pointing
            main = main - main.mean(axis=0) + np.array([az, el])
            mains.append(main)
            excl = _in_box(
                sl_all,
                (main_az[0] - guard, main_az[1] + guard),
                (main_el[0] - guard, main_el[1] + guard),
            )
            sides.append(sl_all[~excl])
        ev = np.concatenate([box_directions(b["az"], b["el"], step) for b in r["eavesdropper_boxes"]])
        ja = np.concatenate([box_directions(b["az"], b["el"], step) for b in r["jammer_boxes"]])
        return RegionSpec(mains, sides, ev, ja, r["eps_sl"], r["eps_ev"], r["eps_ja"])

    @property
    def specs(self) -> RadarSpecs:
        return derived_radar_specs(self.ofdm, self.grids)

    @property
    def thermal_noise(self) -> float:
        p = self.doc["powers"]
        f = 10 ** (p["noise_figure_db"] / 10)
        return f * BOLTZMANN * p["temperature"] * self.ofdm.subcarrier_spacing

    @property
    def radar_noise(self) -> float:
        v = self.doc["powers"]["sigma_r2"]
        return self.thermal_noise if v is None else float(v)

    @property
    def user_noise(self) -> float:
        v = self.doc["powers"]["sigma_k2"]
        return self.thermal_noise if v is None else float(v)

    @property
    def gamma_r(self) -> float:
        return float(self.doc["powers"]["gamma_r"])

    @property
    def ricean_factor(self) -> float:
        return 10 ** (self.doc["powers"]["ricean_factor_db"] / 10)

    def ris_position(self, range_m, direction) -> np.ndarray:
        """Global point at ``range_m`` from the RIS centre towards ``direction``."""
        ang = as_angles(direction)
        u = self.ris_array.to_global(local_unit_vectors(ang[..., 0], ang[..., 1]))
        return self.ris_array.center + np.asarray(range_m)[..., None] * u


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_scenario(scn: Scenario) -> list[str]:
    """Return a list of physical-consistency violations (empty when valid)."""
    out: list[str] = []
    o = scn.ofdm
    c = SPEED_OF_LIGHT
    c_over_w = c / o.subcarrier_spacing
    apertures = scn.tx_array.aperture + scn.rx_array.aperture + scn.ris_array.aperture
    if apertures / c_over_w >= 0.1:
        out.append(
            f"narrowband: array apertures {apertures:.3g} m not << c/W_o = {c_over_w:.3g} m"
        )

    r_min, r_max = scn.volume["range"]
    far = 2 * scn.ris_array.aperture**2 / o.lambda_minus
    if r_min < far:
        out.append(f"far-field: R_min = {r_min:g} m < 2*D^2/lambda = {far:.3g} m")

    g = scn.grids
    if np.any(g.delays > o.cyclic_prefix):
        out.append(f"cyclic prefix: delay grid reaches {g.delays.max():.3g} s > T_o = {o.cyclic_prefix:.3g} s")
    ris = scn.ris_array.center
    bs_ris = np.linalg.norm(scn.tx_array.center - ris) + np.linalg.norm(scn.rx_array.center - ris)
    tau_target = (bs_ris + 2 * r_max) / c
    if tau_target > o.cyclic_prefix:
        out.append(f"cyclic prefix: BS-RIS-target path delay {tau_target:.3g} s > T_o")
    if len(scn.users):
        tau_user = np.linalg.norm(scn.users - scn.tx_array.center, axis=1).max() / c
        if tau_user > o.cyclic_prefix:
            out.append(f"cyclic prefix: BS-user delay {tau_user:.3g} s > T_o")

    # users must sit outside the radar volume as seen from the RIS
    vol = scn.volume
    if len(scn.users):
        rel = scn.users - ris
        dist = np.linalg.norm(rel, axis=1)
        ang = scn.ris_array.direction_of(rel)
        front = rel @ scn.ris_array.boresight > 0
        inside = (
            front
            & (dist >= vol["range"][0]) & (dist <= vol["range"][1])
            & (ang[:, 0] >= vol["az"][0]) & (ang[:, 0] <= vol["az"][1])
            & (ang[:, 1] >= vol["el"][0]) & (ang[:, 1] <= vol["el"][1])
        )
        if np.any(inside):
            out.append(f"volumes overlap: users {np.flatnonzero(inside).tolist()} inside V_r")
    if scn.n_users > len(scn.users):
        out.append(f"n_users = {scn.n_users} exceeds the {len(scn.users)} listed user positions")
    if scn.n_users >= scn.tx_array.size:
        out.append("n_users must be smaller than the number of TX elements")
    return out
