"""Penalty-method beampattern synthesis for the RIS response and radar beamformers.

The problem maximises the two-way pattern summed over the inspected
directions while penalising, with the quadratic penalty g(x) = max(0, x)^2,

* the two-way pattern above ``eps_sl`` on the sidelobe directions,
* the transmit pattern above ``eps_ev`` towards eavesdroppers,
* the receive pattern above ``eps_ja`` towards jammers.

The RIS response is unit-modulus and each radar beamformer lives in the
null space of the users' channels (f_r = U f_tilde, ||f_r|| = 1). The
solver is a block-coordinate ascent alternating projected-gradient loops on
omega and on the radar coefficients, each with a backtracking Armijo search.

Gradients follow the Wirtinger convention 2 * d(objective)/d(conj(x)), which
equals d/dRe + i d/dIm and is used directly as the ascent direction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# region labels used for the stacked direction axis
MAIN, SIDE, EAVES, JAM = 0, 1, 2, 3

# bumped whenever the objective changes, so cached designs are never reused across formulations
CACHE_VERSION = "v2"
REGION_NAMES = ("mainlobe", "sidelobe", "eavesdropper", "jammer")


class DesignError(RuntimeError):
    pass


def penalty(x):
    return np.maximum(0.0, x) ** 2


def penalty_slope(x):
    return 2.0 * np.maximum(0.0, x)


@dataclass(frozen=True)
class DesignOptions:
    beta: float = 1e4
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    step0: float = 1.0
    inner_tol: float = 1e-6
    inner_max: int = 200
    outer_tol: float = 1e-5
    outer_max: int = 50
    phase_states: int | None = None

    @classmethod
    def from_doc(cls, d: dict, **kw) -> "DesignOptions":
        keys = ("beta", "c1", "backtrack", "max_backtracks", "inner_tol", "inner_max",
                "outer_tol", "outer_max", "phase_states")
        args = {k: d[k] for k in keys if k in d}
        args.update(kw)
        return cls(**args)


@dataclass(eq=False)
class PenaltyProblem:
    """All fixed data of one synthesis problem.

    Attributes
    ----------
    steer : (N_sub, N_theta, D_ris) RIS steering vectors for the stacked
        direction sets, grouped by ``labels``.
    labels : (N_theta,) region label per direction (MAIN, SIDE, EAVES, JAM).
    g_rx : (N_sub, D_rx, D_ris)
    tx_comm : (N_sub, D_ris, K) communication part G_tx F_c diag(gamma_c)^(1/2).
    tx_radar : (N_sub, D_ris, D_tx - K) radar part sqrt(gamma_r) G_tx U.
    basis : (N_sub, D_tx, D_tx - K) orthonormal radar basis U.
    eps : bounds (eps_sl, eps_ev, eps_ja), in units of ``scale``.
    scale, scale_tx, scale_rx : the two-way, transmit and receive patterns
        are divided by these before entering the objective.
    """

    steer: np.ndarray
    labels: np.ndarray
    g_rx: np.ndarray
    tx_comm: np.ndarray
    tx_radar: np.ndarray
    basis: np.ndarray
    eps: tuple[float, float, float]
    beta: float
    scale: float = 1.0
    scale_tx: float = 1.0
    scale_rx: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if min(self.eps) <= 0:
            raise ValueError("bounds must be positive")
        self.labels = np.asarray(self.labels)
        if not np.any(self.labels == MAIN):
            raise ValueError("the mainlobe set must not be empty")

    @property
    def n_sub(self) -> int:
        return self.steer.shape[0]

    @property
    def d_ris(self) -> int:
        return self.steer.shape[2]

    @property
    def radar_dim(self) -> int:
        return self.tx_radar.shape[2]

    def with_beta(self, beta: float) -> "PenaltyProblem":
        return replace(self, beta=beta)

    # -- forward model ----------------------------------------------------

    def patterns(self, omega, f_tilde):
        """Per-subcarrier receive/transmit patterns (N_sub, N_theta) plus intermediates."""
        last = getattr(self, "_last", None)
        if last is not None and last[0] is omega and last[1] is f_tilde:
            return last[2]
        out = self._patterns(omega, f_tilde)
        # the line search evaluates the accepted point just before its gradient
        self._last = (omega, f_tilde, out)
        return out

    def _patterns(self, omega, f_tilde):
        e = self.steer * omega
        rx = e @ np.swapaxes(self.g_rx, 1, 2)
        tx_c = e @ self.tx_comm
        m_r = np.einsum("qdj,qj->qd", self.tx_radar, f_tilde)
        tx_r = np.einsum("qtd,qd->qt", e, m_r)
        bp_rx = (np.abs(rx) ** 2).sum(-1)
        bp_tx = (np.abs(tx_c) ** 2).sum(-1) + np.abs(tx_r) ** 2
        return bp_rx, bp_tx, (e, rx, tx_c, tx_r)

    def _args(self, bp_two, bp_tx, bp_rx):
        """Scaled penalty arguments for every direction (inactive ones are 0)."""
        eps = np.array([np.inf, *self.eps])
        lab = self.labels
        sc = np.array([self.scale, self.scale, self.scale_tx, self.scale_rx])[lab]
        val = np.where(lab == SIDE, bp_two, np.where(lab == EAVES, bp_tx, bp_rx)) / sc
        bound = eps[lab]
        x = np.where(lab == MAIN, -1.0, val - bound)
        return x, np.where(lab == MAIN, 0.0, 1.0 / sc)

    def objective_from_patterns(self, bp_rx, bp_tx) -> float:
        two = (bp_rx * bp_tx).sum(0)
        main = two[self.labels == MAIN].sum() / self.scale
        if self.beta == 0:
            return float(main)
        x, _ = self._args(two, bp_tx.sum(0), bp_rx.sum(0))
        return float(main - self.beta * penalty(x).sum())

    def objective(self, omega, f_tilde) -> float:
        bp_rx, bp_tx, _ = self.patterns(omega, f_tilde)
        return self.objective_from_patterns(bp_rx, bp_tx)

    def _weights(self, bp_rx, bp_tx):
        """d(objective)/d(BP_two), d/d(BP_tx), d/d(BP_rx) per direction."""
        two = (bp_rx * bp_tx).sum(0)
        lab = self.labels
        x, dx = self._args(two, bp_tx.sum(0), bp_rx.sum(0))
        slope = -self.beta * penalty_slope(x) * dx
        w_two = np.where(lab == MAIN, 1.0 / self.scale, np.where(lab == SIDE, slope, 0.0))
        w_tx = np.where(lab == EAVES, slope, 0.0)
        w_rx = np.where(lab == JAM, slope, 0.0)
        return w_two, w_tx, w_rx

    # -- gradients --------------------------------------------------------

    def grad_omega(self, omega, f_tilde) -> np.ndarray:
        bp_rx, bp_tx, (e, rx, tx_c, tx_r) = self.patterns(omega, f_tilde)
        w_two, w_tx, w_rx = self._weights(bp_rx, bp_tx)
        # coefficients multiplying A_q(theta) omega and B_q(theta) omega
        a = w_two * bp_tx + w_rx
        b = w_two * bp_rx + w_tx
        m_r = np.einsum("qdj,qj->qd", self.tx_radar, f_tilde)
        y = (a[..., None] * rx) @ np.conj(self.g_rx)
        y += (b[..., None] * tx_c) @ np.conj(np.swapaxes(self.tx_comm, 1, 2))
        y += (b * tx_r)[..., None] * np.conj(m_r)[:, None, :]
        return 2.0 * (np.conj(self.steer) * y).sum(axis=(0, 1))

    def grad_radar(self, omega, f_tilde) -> np.ndarray:
        """Gradients for all subcarriers at once, shape (N_sub, D_tx - K)."""
        bp_rx, bp_tx, (e, rx, tx_c, tx_r) = self.patterns(omega, f_tilde)
        w_two, w_tx, _ = self._weights(bp_rx, bp_tx)
        c = w_two * bp_rx + w_tx
        v = np.einsum("qt,qtd->qd", c * tx_r, np.conj(e))
        return 2.0 * np.einsum("qdj,qd->qj", np.conj(self.tx_radar), v)

    def radar_vectors(self, f_tilde) -> np.ndarray:
        return np.einsum("qij,qj->qi", self.basis, f_tilde)

    # -- audit ------------------------------------------------------------

    def residuals(self, omega, f_tilde) -> dict:
        """Worst pattern-to-bound ratio per constrained region (<= 1 is feasible)."""
        bp_rx, bp_tx, _ = self.patterns(omega, f_tilde)
        two = (bp_rx * bp_tx).sum(0) / self.scale
        tx = bp_tx.sum(0) / self.scale_tx
        rx = bp_rx.sum(0) / self.scale_rx
        out = {"mainlobe_power": float(two[self.labels == MAIN].sum())}
        for lab, name, val, eps in ((SIDE, "sidelobe", two, self.eps[0]),
                                    (EAVES, "eavesdropper", tx, self.eps[1]),
                                    (JAM, "jammer", rx, self.eps[2])):
            sel = self.labels == lab
            out[name] = float(val[sel].max() / eps) if np.any(sel) else 0.0
        return out


# ---------------------------------------------------------------------------
# Projections and line search
# ---------------------------------------------------------------------------


def project_unit_modulus(omega: np.ndarray, phase_states: int | None = None) -> np.ndarray:
    """Nearest point on the unit circle, or on a uniform phase alphabet."""
    mag = np.abs(omega)
    out = np.where(mag > 0, omega / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    if phase_states:
        step = 2 * np.pi / phase_states
        out = np.exp(1j * step * np.round(np.angle(out) / step))
    return out


def project_radar(problem: PenaltyProblem, f_tilde: np.ndarray) -> np.ndarray:
    """Scale each f_tilde_q so that ||U_q f_tilde_q|| = 1."""
    norms = np.linalg.norm(problem.radar_vectors(f_tilde), axis=1, keepdims=True)
    return f_tilde / np.where(norms > 0, norms, 1.0)


@dataclass
class LineSearchStats:
    accepted: int = 0
    rejected: int = 0
    # (f_old, f_new, c1 * <grad, step>) for every accepted step
    log: list = field(default_factory=list)


def armijo_step(fun, project, x, fx, grad, opts: DesignOptions, stats: LineSearchStats):
    """Backtracking Armijo search along the projection arc.

    Accepts the first lambda with f(P(x + lambda g)) >= f(x) + c1 Re<g, P(x + lambda g) - x>
    and a positive directional term. Returns (x_new, f_new) or None.
    """
    gnorm = np.linalg.norm(grad)
    if not np.isfinite(gnorm):
        raise DesignError("non-finite gradient")
    if gnorm == 0:
        return None
    lam = opts.step0 / gnorm
    for _ in range(opts.max_backtracks):
        x_new = project(x + lam * grad)
        decrease = float(np.real(np.vdot(grad, x_new - x)))
        if decrease > 0:
            f_new = fun(x_new)
            if not np.isfinite(f_new):
                raise DesignError("non-finite objective during line search")
            if f_new >= fx + opts.c1 * decrease and f_new > fx:
                stats.accepted += 1
                stats.log.append((fx, f_new, opts.c1 * decrease))
                return x_new, f_new
        lam *= opts.backtrack
    stats.rejected += 1
    return None


# ---------------------------------------------------------------------------
# Block-coordinate ascent
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DesignResult:
    omega: np.ndarray
    f_tilde: np.ndarray
    f_radar: np.ndarray
    trace: list
    residuals: dict
    scale: float
    iterations: int
    converged: bool
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        ft = self.f_tilde
        return {
            "omega_phase": np.angle(self.omega).tolist(),
            "f_tilde": np.stack([ft.real, ft.imag], axis=-1).reshape(ft.shape[0], -1).tolist(),
            "f_radar": np.stack([self.f_radar.real, self.f_radar.imag], axis=-1)
            .reshape(self.f_radar.shape[0], -1).tolist(),
            "trace": list(map(float, self.trace)),
            "residuals": self.residuals,
            "scale": self.scale,
            "iterations": self.iterations,
            "converged": self.converged,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DesignResult":
        def cplx(rows):
            a = np.asarray(rows, dtype=float)
            return a[:, 0::2] + 1j * a[:, 1::2]

        return cls(
            omega=np.exp(1j * np.asarray(d["omega_phase"])),
            f_tilde=cplx(d["f_tilde"]),
            f_radar=cplx(d["f_radar"]),
            trace=list(d["trace"]),
            residuals=dict(d["residuals"]),
            scale=float(d["scale"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            meta=dict(d.get("meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "DesignResult":
        return cls.from_json(json.loads(Path(path).read_text()))


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-300)


def design(problem: PenaltyProblem, omega0, f_tilde0, options: DesignOptions | None = None,
           callback=None) -> DesignResult:
    """Alternate projected-gradient loops on omega and on the radar coefficients."""
    opts = options or DesignOptions()
    omega = project_unit_modulus(np.asarray(omega0, dtype=complex))
    f_tilde = project_radar(problem, np.asarray(f_tilde0, dtype=complex))
    fval = problem.objective(omega, f_tilde)
    if not np.isfinite(fval):
        raise DesignError("non-finite objective at the initial point")
    trace = [fval]
    stats = LineSearchStats()
    converged = False
    has_radar = problem.radar_dim > 0 and np.any(problem.tx_radar)
    outer = 0
    for outer in range(1, opts.outer_max + 1):
        start = fval
        for _ in range(opts.inner_max):
            g = problem.grad_omega(omega, f_tilde)
            step = armijo_step(lambda w: problem.objective(w, f_tilde), project_unit_modulus,
                               omega, fval, g, opts, stats)
            if step is None:
                break
            omega, f_new = step
            done = _rel_change(f_new, fval) < opts.inner_tol
            fval = f_new
            if done:
                break
        if has_radar:
            fval, f_tilde = _radar_block(problem, omega, f_tilde, fval, opts, stats)
        trace.append(fval)
        log.debug("outer %d: objective %.6g (%d steps)", outer, fval, stats.accepted)
        if callback is not None:
            callback(outer, fval)
        if _rel_change(fval, start) < opts.outer_tol:
            converged = True
            break
    if opts.phase_states:
        omega = project_unit_modulus(omega, opts.phase_states)
        fval = problem.objective(omega, f_tilde)
    res = problem.residuals(omega, f_tilde)
    res["objective"] = fval
    return DesignResult(
        omega=omega,
        f_tilde=f_tilde,
        f_radar=problem.radar_vectors(f_tilde),
        trace=trace,
        residuals=res,
        scale=problem.scale,
        iterations=outer,
        converged=converged,
        meta={"accepted_steps": stats.accepted, "failed_searches": stats.rejected,
              "scale_tx": problem.scale_tx, "scale_rx": problem.scale_rx},
    )


def _radar_block(problem: PenaltyProblem, omega, f_tilde, fval, opts, stats):
    # omega is fixed here, so the patterns reduce to cheap products with f_tilde
    bp_rx, _, (e, _, tx_c, _) = problem.patterns(omega, f_tilde)
    p = e @ problem.tx_radar  # (N_sub, N_theta, D_tx - K)
    bp_tx_c = (np.abs(tx_c) ** 2).sum(-1)

    def parts(ft):
        tx_r = np.einsum("qtj,qj->qt", p, ft)
        return bp_tx_c + np.abs(tx_r) ** 2, tx_r

    def fun(ft):
        return problem.objective_from_patterns(bp_rx, parts(ft)[0])

    def grad(ft):
        bp_tx, tx_r = parts(ft)
        w_two, w_tx, _ = problem._weights(bp_rx, bp_tx)
        c = w_two * bp_rx + w_tx
        return 2.0 * np.einsum("qt,qtj->qj", c * tx_r, np.conj(p))

    for _ in range(opts.inner_max):
        g = grad(f_tilde)
        step = armijo_step(fun, lambda ft: project_radar(problem, ft), f_tilde, fval, g, opts, stats)
        if step is None:
            break
        f_tilde, f_new = step
        done = _rel_change(f_new, fval) < opts.inner_tol
        fval = f_new
        if done:
            break
    return fval, f_tilde


# ---------------------------------------------------------------------------
# Scenario glue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignCase:
    """Identifies one cached design: subvolume, power split, users, constraint."""

    subvolume: int
    gamma_r: float
    n_users: int
    orthogonality: bool = True

    def key(self) -> str:
        o = "orth" if self.orthogonality else "free"
        return f"sv{self.subvolume}_g{self.gamma_r:.4f}_k{self.n_users}_{o}"


def radar_basis(h: np.ndarray, gamma_r: float, orthogonality: bool) -> np.ndarray:
    """U_q for the radar stream; the full space when unconstrained or when no
    power goes to the users."""
    from .precoding import null_space_basis

    n_sub, d_tx, k = h.shape
    if not orthogonality or k == 0 or gamma_r >= 1.0:
        return np.broadcast_to(np.eye(d_tx, dtype=complex), (n_sub, d_tx, d_tx)).copy()
    return null_space_basis(h)


def build_problem(scn, channels, case: DesignCase, beta: float | None = None,
                  scale: float | None = None):
    """Penalty problem for one subvolume plus its matched initial point.

    Returns ``(problem, omega0, f_tilde0)``. Unless given, ``scale`` is the
    two-way mainlobe power of the matched initial point.
    """
    from .precoding import power_vectors, zero_forcing
    from .scenario import steering_vector

    reg = scn.regions
    i = case.subvolume
    sets = [reg.mainlobe[i], reg.sidelobe[i], reg.eavesdropper, reg.jammer]
    labels = np.concatenate([np.full(len(s), lab) for lab, s in zip((MAIN, SIDE, EAVES, JAM), sets)])
    dirs = np.concatenate(sets)
    freqs = scn.ofdm.subcarrier_freqs
    steer = steering_vector(scn.ris_array, dirs, freqs)

    h = channels.h[:, :, : case.n_users]
    n_sub = scn.ofdm.n_sub
    gammas = power_vectors(case.gamma_r, case.n_users, n_sub)
    if case.n_users:
        f_comm = zero_forcing(h)
    else:
        f_comm = np.zeros((n_sub, scn.tx_array.size, 0), dtype=complex)
    basis = radar_basis(h, case.gamma_r, case.orthogonality)
    g_tx = channels.g_tx
    tx_comm = (g_tx @ f_comm) * np.sqrt(gammas[:, None, :-1])
    tx_radar = np.sqrt(gammas[:, -1])[:, None, None] * (g_tx @ basis)

    r = scn.doc["regions"]
    eps = (r["eps_sl"], r["eps_ev"], r["eps_ja"])
    if beta is None:
        beta = scn.doc["design"]["beta"]
    problem = PenaltyProblem(steer, labels, channels.g_rx, tx_comm, tx_radar, basis, eps, beta,
                             1.0)
    omega0, f0 = matched_init(problem, g_tx, scn.grids.pointing[i], scn)
    if scale is None:
        bp_rx, bp_tx, _ = problem.patterns(omega0, f0)
        scale = float((bp_rx * bp_tx).sum(0)[labels == MAIN].sum())
        if not scale > 0:
            scale = 1.0
    # one divisor for all three patterns, so the bounds share their units
    problem.scale = problem.scale_tx = problem.scale_rx = scale
    return problem, omega0, f0


def beamformer_set(channels, case: DesignCase, result: DesignResult):
    """Communication ZF beams plus the designed radar beam as a BeamformerSet."""
    from .precoding import assemble, power_vectors, zero_forcing

    n_sub, d_tx = channels.g_tx.shape[0], channels.g_tx.shape[2]
    h = channels.h[:, :, : case.n_users]
    f_comm = zero_forcing(h) if case.n_users else np.zeros((n_sub, d_tx, 0), dtype=complex)
    f_radar = result.f_radar / np.linalg.norm(result.f_radar, axis=1, keepdims=True)
    return assemble(f_comm, f_radar, power_vectors(case.gamma_r, case.n_users, n_sub), result.omega)


def matched_init(problem: PenaltyProblem, g_tx: np.ndarray, pointing, scn):
    """Radar coefficients along the strongest BS-to-RIS mode, projected on U_q,
    and RIS phases conjugate-matched to the illumination toward ``pointing``
    at the centre subcarrier."""
    from .scenario import steering_vector

    _, _, vh = np.linalg.svd(g_tx)
    best = np.conj(vh[:, 0, :])  # right singular vector, (N_sub, D_tx)
    f0 = np.einsum("qij,qi->qj", np.conj(problem.basis), best)
    bad = np.linalg.norm(f0, axis=1) < 1e-12
    f0[bad, 0] = 1.0
    f0 = project_radar(problem, f0)

    qc = problem.n_sub // 2
    m = np.concatenate([problem.tx_comm[qc], (problem.tx_radar[qc] @ f0[qc])[:, None]], axis=1)
    u, _, _ = np.linalg.svd(m, full_matrices=False)
    illum = u[:, 0]
    t = steering_vector(scn.ris_array, pointing, scn.ofdm.subcarrier_freqs[qc])
    omega0 = np.exp(-1j * np.angle(t * illum))
    return omega0, f0


def design_case(scn, channels, case: DesignCase, options: DesignOptions | None = None,
                cache_dir: str | Path | None = None, beta: float | None = None) -> DesignResult:
    """Design (or load from cache) the beamformers for one case."""
    opts = options or DesignOptions.from_doc(scn.doc["design"])
    if beta is not None:
        opts = replace(opts, beta=beta)
    path = None
    if cache_dir is not None:
        tag = f"{scn.design_digest()}_{case.key()}_b{opts.beta:g}_{_options_tag(opts)}_{CACHE_VERSION}"
        path = Path(cache_dir) / f"design_{tag}.json"
        if path.exists():
            return DesignResult.load(path)
    problem, omega0, f0 = build_problem(scn, channels, case, beta=opts.beta)
    log.info("designing %s (%d directions)", case.key(), problem.labels.size)
    res = design(problem, omega0, f0, opts)
    res.meta.update({"case": case.key(), "beta": opts.beta})
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        res.save(path)
    return res


def _options_tag(opts: DesignOptions) -> str:
    import hashlib

    blob = json.dumps(opts.__dict__, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:8]
