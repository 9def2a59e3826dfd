"""Single-user pipeline: average-power quadratic form, PDD / BCD / brute-force
phase solvers and MRT precoding.

The long-term objective is the expected squared norm of the effective channel,
which for K = 1 reduces exactly to  v^H Phi v + 2 Re{v^H b} + const  in the
reflection vector v. All solvers maximize the v-dependent part.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    CONTINUOUS,
    PhaseConfig,
    StatisticalCsi,
    phase_vector,
    quantize_phases,
)


@dataclass
class QuadraticForm:
    """Hermitian-PSD quadratic description of E{ ||h_eff(v)||^2 }."""

    phi: np.ndarray                 # (N, N) complex Hermitian PSD
    b: np.ndarray                   # (N,) complex
    const_term: float               # v-independent part, >= 0
    phi_d_eigs: np.ndarray | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=complex)
        self.b = np.asarray(self.b, dtype=complex).reshape(-1)
        if not np.allclose(self.phi, self.phi.conj().T, atol=1e-10):
            raise ValueError("quadratic form matrix must be Hermitian")
        if self.const_term < 0:
            raise ValueError("constant term must be non-negative")

    @property
    def size(self) -> int:
        return self.b.shape[0]

    def quadratic(self, v) -> float:
        """v^H Phi v + 2 Re{v^H b} (the part the solvers maximize)."""
        vv = phase_vector(v)
        return float(np.real(vv.conj() @ self.phi @ vv) + 2.0 * np.real(vv.conj() @ self.b))

    def expected_gain(self, v) -> float:
        """E{ ||h_eff(v)||^2 } = quadratic(v) + const_term."""
        return self.quadratic(v) + self.const_term


def build_quadratic_form(scsi: StatisticalCsi) -> QuadraticForm:
    """Assemble the K = 1 average-power quadratic form from statistical CSI."""
    if scsi.num_users != 1:
        raise ValueError("quadratic form is defined for single-user CSI only")
    zr = scsi.zbar_r[0]
    zd = scsi.zbar_d[0]
    fbar = scsi.fbar
    s_ai2 = scsi.s_ai ** 2
    s_iu2 = float(scsi.s_iu[0] ** 2)
    s_au2 = float(scsi.s_au[0] ** 2)
    phi_d_eigs = np.linalg.eigvalsh(scsi.phi_d)
    lam_sum = float(phi_d_eigs.sum())
    phi_ru = scsi.phi_rk[0]

    ff = fbar @ fbar.conj().T
    dz = zr.conj()[:, None]          # diag(zbar_r^H) as a column scaling
    phi = (
        dz * ff * zr[None, :]
        + s_ai2 * lam_sum * (dz * scsi.phi_r * zr[None, :])
        + s_iu2 * (phi_ru * ff)
        + lam_sum * s_ai2 * s_iu2 * (phi_ru * scsi.phi_r)
    )
    b = zr.conj() * (fbar @ zd)
    const = float(np.real(zd.conj() @ zd)) + s_au2 * float(np.trace(scsi.phi_d))
    return QuadraticForm(phi=phi, b=b, const_term=const, phi_d_eigs=phi_d_eigs)


def rate_upper_bound(qf: QuadraticForm, v, power: float, noise: float) -> float:
    """log2(1 + P * E{||h_eff||^2} / sigma^2), a Jensen bound on the average rate."""
    gain = qf.expected_gain(v)
    if gain < -1e-9:
        raise ValueError(f"expected channel gain is negative ({gain:.3e}); form not PSD")
    return float(np.log2(1.0 + power * max(gain, 0.0) / noise))


def mrt_precoder(h_eff: np.ndarray, power: float) -> np.ndarray:
    """Maximum-ratio transmission: sqrt(P) * h / ||h||."""
    h_eff = np.asarray(h_eff, dtype=complex).reshape(-1)
    norm = np.linalg.norm(h_eff)
    if norm == 0.0:
        warnings.warn("zero effective channel: returning zero precoder")
        return np.zeros_like(h_eff)
    return np.sqrt(power) * h_eff / norm


def mrt_rate(h_eff: np.ndarray, power: float, noise: float) -> float:
    """Instantaneous rate achieved by MRT on the given channel."""
    gain = float(np.real(np.vdot(h_eff, h_eff)))
    return float(np.log2(1.0 + power * gain / noise))


# ---------------------------------------------------------------------------
# penalty dual decomposition
# ---------------------------------------------------------------------------

@dataclass
class PddParams:
    """Knobs of the double-loop penalty solver."""

    levels: int = CONTINUOUS
    rho0: float | None = None      # None -> 10 / (2 * lambda_max(Phi))
    c: float = 0.95                # penalty shrink factor per outer iteration
    eps_in: float = 1e-4           # relative AL decrease threshold (inner)
    eps_out: float = 1e-6          # max |v - u| threshold (outer)
    max_inner: int = 200
    max_outer: int = 500

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ValueError("penalty factor c must lie in (0, 1)")
        if self.eps_in <= 0 or self.eps_out <= 0:
            raise ValueError("tolerances must be positive")
        if self.rho0 is not None and self.rho0 <= 0:
            raise ValueError("rho0 must be positive")


@dataclass
class PddState:
    """Iterate of the penalty solver: continuous block v, grid block u, dual lam."""

    v: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    rho: float
    al_objective: float = np.nan


def pdd_v_step(state: PddState, qf: QuadraticForm) -> np.ndarray:
    """Minimize the linearized augmented Lagrangian over the ball ||v||^2 <= N.

    With the quadratic part linearized at the current v, the minimizer is
    c = u - rho*lam + 2*rho*(Phi v + b), projected onto the ball.
    """
    n = state.v.shape[0]
    c = state.u - state.rho * state.lam + 2.0 * state.rho * (qf.phi @ state.v + qf.b)
    nrm2 = float(np.real(np.vdot(c, c)))
    if nrm2 <= n:
        return c
    return c / np.sqrt(nrm2 / n)


def pdd_u_step(state: PddState, levels: int) -> np.ndarray:
    """Per-element minimizer of ||v - u + rho*lam||^2 over the phase grid."""
    target = state.v + state.rho * state.lam
    return quantize_phases(np.angle(target), levels)


def _al_value(qf: QuadraticForm, v: np.ndarray, u: np.ndarray, lam: np.ndarray, rho: float) -> float:
    resid = v - u + rho * lam
    return -qf.quadratic(v) + float(np.real(np.vdot(resid, resid))) / (2.0 * rho)


@dataclass
class PddResult:
    config: PhaseConfig
    objective: float
    converged: bool
    violation: float
    outer_iterations: int
    trace: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    # trace rows: (outer_iter, inner_iter, al_value, objective_at_u, violation_inf_norm)


def default_rho0(qf: QuadraticForm) -> float:
    """1/(2*lambda_max) scaled up 10x; the ball constraint keeps any rho0 valid."""
    lam_max = float(np.linalg.eigvalsh(qf.phi)[-1]) if qf.size else 0.0
    if lam_max <= 0.0:
        return 1.0
    return 10.0 / (2.0 * lam_max)


def pdd_solve(
    qf: QuadraticForm,
    params: PddParams,
    v0: np.ndarray | None = None,
    record_trace: bool = False,
) -> PddResult:
    """Double-loop penalty solver for the grid-constrained quadratic maximization.

    Inner loop: block updates of v (ball-constrained, linearized) and u (grid)
    until the relative decrease of the augmented Lagrangian falls below eps_in.
    Outer loop: dual ascent lam += (v - u)/rho and penalty shrink rho *= c until
    the consensus violation ||v - u||_inf falls below eps_out. The relative
    decrease test makes the iterate sequence invariant to positive rescaling
    of (Phi, b).
    """
    n = qf.size
    phi, b = qf.phi, qf.b
    v = np.ones(n, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex).copy()
    u = quantize_phases(np.angle(v), params.levels)
    lam = np.zeros(n, dtype=complex)
    rho = params.rho0 if params.rho0 is not None else default_rho0(qf)

    best_obj = qf.quadratic(u)
    best_u = u.copy()
    trace: list[tuple[int, int, float, float, float]] = []
    converged = False
    violation = float(np.max(np.abs(v - u)))
    outer = 0
    for outer in range(1, params.max_outer + 1):
        phi_v = phi @ v
        resid = v - u + rho * lam
        al_prev = (-float(np.real(np.vdot(v, phi_v)) + 2.0 * np.real(np.vdot(v, b)))
                   + float(np.real(np.vdot(resid, resid))) / (2.0 * rho))
        for inner in range(1, params.max_inner + 1):
            c = u - rho * lam + 2.0 * rho * (phi_v + b)
            nrm2 = float(np.real(np.vdot(c, c)))
            v = c if nrm2 <= n else c / np.sqrt(nrm2 / n)
            u = quantize_phases(np.angle(v + rho * lam), params.levels)
            phi_v = phi @ v
            resid = v - u + rho * lam
            al_new = (-float(np.real(np.vdot(v, phi_v)) + 2.0 * np.real(np.vdot(v, b)))
                      + float(np.real(np.vdot(resid, resid))) / (2.0 * rho))
            if record_trace:
                trace.append((outer, inner, al_new, qf.quadratic(u),
                              float(np.max(np.abs(v - u)))))
            if abs(al_prev - al_new) <= params.eps_in * max(abs(al_prev), 1e-300):
                break
            al_prev = al_new
        obj_u = qf.quadratic(u)
        if obj_u > best_obj:
            best_obj = obj_u
            best_u = u.copy()
        lam = lam + (v - u) / rho
        violation = float(np.max(np.abs(v - u)))
        if violation < params.eps_out:
            converged = True
            break
        rho *= params.c

    # every iterate u lies on the grid, so the best one seen is always a valid
    # answer and never worse than the final consensus point
    return PddResult(
        config=PhaseConfig(best_u, levels=params.levels),
        objective=best_obj,
        converged=converged,
        violation=violation,
        outer_iterations=outer,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# coordinate descent and exhaustive search
# ---------------------------------------------------------------------------

@dataclass
class BcdResult:
    config: PhaseConfig
    objective: float
    sweep_objectives: list[float]


def bcd_solve(
    qf: QuadraticForm,
    levels: int,
    v0: np.ndarray | None = None,
    rel_tol: float = 1e-8,
    max_sweeps: int = 1000,
) -> BcdResult:
    """One-at-a-time exact coordinate maximization over the phase grid.

    Each coordinate update maximizes 2 Re{v_n^* q_n} with
    q_n = sum_{j != n} Phi(n, j) v_j + b_n, so the objective never decreases.
    """
    n = qf.size
    v = np.ones(n, dtype=complex) if v0 is None else phase_vector(v0).copy()
    if levels != CONTINUOUS:
        on_grid = quantize_phases(np.angle(v), levels)
        if np.max(np.abs(on_grid - v)) > 1e-9:
            raise ValueError("v0 must lie on the phase grid")
        v = on_grid
    obj = qf.quadratic(v)
    history = [obj]
    for _ in range(max_sweeps):
        for i in range(n):
            q = qf.phi[i] @ v - qf.phi[i, i] * v[i] + qf.b[i]
            if q == 0:
                continue
            v[i] = quantize_phases(np.array([np.angle(q)]), levels)[0]
        new_obj = qf.quadratic(v)
        history.append(new_obj)
        if new_obj - obj <= rel_tol * max(abs(obj), 1e-300):
            obj = new_obj
            break
        obj = new_obj
    return BcdResult(config=PhaseConfig(v, levels=levels), objective=obj, sweep_objectives=history)


def _batch_quad(phis: np.ndarray, bs: np.ndarray, x: np.ndarray) -> np.ndarray:
    phi_x = (phis @ x[..., None])[..., 0]
    return (np.einsum("sn,sn->s", x.conj(), phi_x).real
            + 2.0 * np.einsum("sn,sn->s", x.conj(), bs).real)


def pdd_solve_batch(
    phis: np.ndarray, bs: np.ndarray, params: PddParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the penalty solver on many independent quadratic forms at once.

    `phis` is (S, N, N), `bs` is (S, N). Each slot follows the iterate sequence
    it would under `pdd_solve`; slots that hit a stopping rule drop out of the
    working set so slow slots do not cost full-batch compute. Returns
    (u, objectives, converged) with shapes (S, N), (S,), (S,).
    """
    phis = np.asarray(phis, dtype=complex)
    bs = np.asarray(bs, dtype=complex)
    s, n = bs.shape

    v_all = np.ones((s, n), dtype=complex)
    u_all = quantize_phases(np.angle(v_all), params.levels)
    lam_all = np.zeros((s, n), dtype=complex)
    if params.rho0 is not None:
        rho_all = np.full(s, params.rho0)
    else:
        lam_max = np.linalg.eigvalsh(phis)[:, -1]
        rho_all = np.where(lam_max > 0, 10.0 / (2.0 * np.maximum(lam_max, 1e-300)), 1.0)

    best_obj = _batch_quad(phis, bs, u_all)
    best_u = u_all.copy()
    pending = np.ones(s, dtype=bool)
    converged = np.zeros(s, dtype=bool)

    for _ in range(params.max_outer):
        if not pending.any():
            break
        idx = np.flatnonzero(pending)
        ph, b = phis[idx], bs[idx]
        v, u, lam, rho = v_all[idx], u_all[idx], lam_all[idx], rho_all[idx]

        def al_of(vv, uu, rr, ll, pph, bb):
            resid = vv - uu + rr[:, None] * ll
            return (-_batch_quad(pph, bb, vv)
                    + np.einsum("sn,sn->s", resid.conj(), resid).real / (2.0 * rr))

        phi_v = (ph @ v[..., None])[..., 0]
        al_prev = al_of(v, u, rho, lam, ph, b)
        live = np.arange(idx.size)         # positions within idx still iterating
        for _ in range(params.max_inner):
            c = u - rho[:, None] * lam + 2.0 * rho[:, None] * (phi_v + b)
            nrm2 = np.einsum("sn,sn->s", c.conj(), c).real
            scale = np.where(nrm2 <= n, 1.0, np.sqrt(n / np.maximum(nrm2, 1e-300)))
            v = c * scale[:, None]
            u = quantize_phases(np.angle(v + rho[:, None] * lam), params.levels)
            phi_v = (ph @ v[..., None])[..., 0]
            al_new = al_of(v, u, rho, lam, ph, b)
            done = np.abs(al_prev - al_new) <= params.eps_in * np.maximum(np.abs(al_prev), 1e-300)
            if done.any():
                fin = np.flatnonzero(done)
                v_all[idx[live[fin]]] = v[fin]
                u_all[idx[live[fin]]] = u[fin]
                keep = ~done
                if not keep.any():
                    live = live[:0]
                    break
                live = live[keep]
                v, u, lam, rho = v[keep], u[keep], lam[keep], rho[keep]
                ph, b, phi_v, al_prev = ph[keep], b[keep], phi_v[keep], al_new[keep]
            else:
                al_prev = al_new
        if live.size:
            v_all[idx[live]] = v
            u_all[idx[live]] = u

        vv, uu = v_all[idx], u_all[idx]
        obj_u = _batch_quad(phis[idx], bs[idx], uu)
        better = obj_u > best_obj[idx]
        best_obj[idx] = np.where(better, obj_u, best_obj[idx])
        best_u[idx] = np.where(better[:, None], uu, best_u[idx])
        lam_all[idx] += (vv - uu) / rho_all[idx][:, None]
        viol = np.max(np.abs(vv - uu), axis=1)
        newly = viol < params.eps_out
        converged[idx[newly]] = True
        pending[idx[newly]] = False
        rho_all[idx[~newly]] *= params.c

    return best_u, best_obj.copy(), converged


MAX_BRUTE_FORCE = 2 ** 20


def brute_force_solve(qf: QuadraticForm, levels: int, batch: int = 16384) -> PddResult:
    """Exhaustive search over all levels^N grid vectors (global optimum oracle)."""
    if levels < 1:
        raise ValueError("brute force requires a finite phase grid")
    n = qf.size
    total = levels ** n
    if total > MAX_BRUTE_FORCE:
        raise ValueError(f"search space {levels}^{n} exceeds {MAX_BRUTE_FORCE}")
    phases = np.exp(2j * np.pi * np.arange(levels) / levels)
    weights = levels ** np.arange(n - 1, -1, -1)  # first element most significant
    best_val = -np.inf
    best_idx = 0
    for start in range(0, total, batch):
        idx = np.arange(start, min(start + batch, total))
        digits = (idx[:, None] // weights[None, :]) % levels
        cand = phases[digits]
        vals = np.einsum("bn,nm,bm->b", cand.conj(), qf.phi, cand).real
        vals += 2.0 * (cand.conj() @ qf.b).real
        loc = int(np.argmax(vals))
        if vals[loc] > best_val:
            best_val = float(vals[loc])
            best_idx = int(idx[loc])
    digits = (best_idx // weights) % levels
    v = phases[digits]
    return PddResult(
        config=PhaseConfig(v, levels=levels),
        objective=best_val,
        converged=True,
        violation=0.0,
        outer_iterations=0,
    )
