"""Monte-Carlo experiment runner: sweeps, trials, slot averaging, CSV output.

One trial = one statistical-CSI draw followed by `slots` channel realizations.
All randomness comes from named substreams of the master seed (per trial, per
slot, per scheme where needed), so results do not depend on scheduling and a
fixed (config, seed) pair reproduces the output byte for byte.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import baselines
from .channel import Scenario, build_scsi, effective_channels, sample_instantaneous
from .config import ExperimentSpec, db_to_linear, dbm_to_watts, levels_for_bits
from .multi_user import instantaneous_rates, ssca_run, wmmse_solve
from .rng import substream
from .single_user import (
    PddParams,
    build_quadratic_form,
    mrt_rate,
    pdd_solve,
    pdd_solve_batch,
)

log = logging.getLogger("ttsbeam")

MAX_FAILURE_FRACTION = 0.05

Q_INSENSITIVE_SCHEMES = ("no-irs",)


class ExperimentError(RuntimeError):
    """Raised when too many trials fail or a scheme is misconfigured."""


@dataclass
class ResultRecord:
    """Aggregated outcome of one (sweep value, scheme, resolution) cell."""

    sweep_value: float | None
    scheme: str
    q_bits: int
    user_rates: np.ndarray        # (K,) mean per-user rate, bits/s/Hz
    weighted_sum_rate: float
    std_error: float              # std error of the per-trial weighted rates
    wall_time: float              # seconds spent on the whole sweep point
    trials_used: int
    failures: int


@dataclass
class PointStats:
    """Per-trial outcomes at a single sweep point (used for paired tests)."""

    weighted: np.ndarray          # (trials,)
    per_user: np.ndarray          # (trials, K)

    @property
    def mean(self) -> float:
        return float(self.weighted.mean())

    @property
    def std_error(self) -> float:
        if self.weighted.size < 2:
            return 0.0
        return float(self.weighted.std(ddof=1) / np.sqrt(self.weighted.size))


def apply_sweep(scenario: Scenario, variable: str, value: float) -> Scenario:
    """Scenario with one swept quantity replaced.

    ap_user_distance moves every user to y = value (meters); rician_beta sets
    the two cascaded-link factors from a dB value; transmit_power takes dBm.
    """
    if variable == "ap_user_distance":
        positions = scenario.user_positions.copy()
        positions[:, 1] = value
        return replace(scenario, user_positions=positions)
    if variable == "rician_beta":
        lin = db_to_linear(value)
        return replace(scenario, rician=replace(scenario.rician, beta_ai=lin, beta_iu=lin))
    if variable == "r_r":
        return replace(scenario, correlation=replace(scenario.correlation, r_r=float(value)))
    if variable == "r_rk":
        corr = replace(scenario.correlation, r_rk=(float(value),) * scenario.num_users)
        return replace(scenario, correlation=corr)
    if variable == "transmit_power":
        return replace(scenario, transmit_power=dbm_to_watts(value))
    raise ExperimentError(f"unknown sweep variable '{variable}'")


def _scheme_cells(spec: ExperimentSpec) -> list[tuple[str, int]]:
    cells = []
    for scheme in spec.schemes:
        if scheme in Q_INSENSITIVE_SCHEMES:
            cells.append((scheme, 0))
        else:
            cells.extend((scheme, q) for q in spec.q_bits)
    return sorted(set(cells))


def _su_rate(v, ch, power, noise) -> np.ndarray:
    h = effective_channels(v, ch)
    return np.array([mrt_rate(h[0], power, float(noise[0]))])


def _short_term_rates(v, ch, power, noise, weights) -> np.ndarray:
    """Per-slot rates with phases frozen and precoders re-optimized."""
    if ch.num_users == 1:
        return _su_rate(v, ch, power, noise)
    h = effective_channels(v, ch)
    state = wmmse_solve(h, weights, power, noise)
    rates, _ = instantaneous_rates(v, state.w, ch, noise)
    return rates


# per-slot instantaneous designs re-solve a full problem 200+ times per trial;
# the faster penalty schedule is inside the range the solver tolerates without
# measurable quality loss and keeps sweep runtimes practical
def _icsi_pdd_params(levels: int) -> PddParams:
    return PddParams(levels=levels, c=0.8, max_inner=30)


def _long_term_configs(
    scsi, scenario: Scenario, spec: ExperimentSpec, trial: int, cells
) -> dict[tuple[str, int], object]:
    seed = spec.seed
    power, noise, weights = scenario.transmit_power, scenario.noise_powers, spec.weights
    su = scenario.num_users == 1
    qf = None
    if su and any(s in ("tts-pdd", "single-timescale") for s, _ in cells):
        qf = build_quadratic_form(scsi)

    frozen: dict[tuple[str, int], object] = {}
    for scheme, q in cells:
        levels = levels_for_bits(q)
        if scheme == "tts-pdd":
            if not su:
                raise ExperimentError("tts-pdd is the single-user long-term scheme")
            frozen[(scheme, q)] = pdd_solve(qf, PddParams(levels=levels)).config.v
        elif scheme == "tts-ssca":
            res = ssca_run(scsi, power, noise, weights, spec.ssca, levels=levels,
                           rng=substream(seed, "ssca", trial, q))
            frozen[(scheme, q)] = res.config.v
        elif scheme == "naive-icsi":
            first = sample_instantaneous(scsi, substream(seed, "samples", trial, 0))
            frozen[(scheme, q)] = baselines.naive_icsi(
                first, levels, weights, power, noise,
                pdd_params=_icsi_pdd_params(levels)).v
        elif scheme == "single-timescale":
            if su:
                cfg = pdd_solve(qf, PddParams(levels=levels)).config
                h_mean = scsi.mean_effective_channels(cfg.v)
                nrm = np.linalg.norm(h_mean[0])
                w = np.zeros_like(h_mean) if nrm == 0 else np.sqrt(power) * h_mean / nrm
            else:
                cfg, w = baselines.single_timescale(
                    scsi, levels, power, noise, weights,
                    ssca_params=spec.ssca, rng=substream(seed, "ssca", trial, q, "st"))
            frozen[(scheme, q)] = (cfg.v, w)
    return frozen


def _run_trial_single_user(
    scenario: Scenario, spec: ExperimentSpec, trial: int
) -> dict[tuple[str, int], np.ndarray]:
    """Single-user trial with all per-slot evaluations vectorized over slots."""
    seed = spec.seed
    n = scenario.num_elements
    power = scenario.transmit_power
    noise = float(scenario.noise_powers[0])
    cells = _scheme_cells(spec)
    scsi = build_scsi(scenario, substream(seed, "scsi", trial))
    frozen = _long_term_configs(scsi, scenario, spec, trial, cells)

    slots = spec.slots
    chs = [sample_instantaneous(scsi, substream(seed, "samples", trial, s)) for s in range(slots)]
    g = np.stack([c.g for c in chs])            # (S, N, M)
    h_r = np.stack([c.h_r[0] for c in chs])     # (S, N)
    h_d = np.stack([c.h_d[0] for c in chs])     # (S, M)

    def mrt_rates_for(v_slots: np.ndarray) -> np.ndarray:
        # v_slots: (N,) shared or (S, N) per slot
        if v_slots.ndim == 1:
            v_slots = np.broadcast_to(v_slots, h_r.shape)
        h_eff = np.einsum("sn,snm->sm", h_r * v_slots, g.conj()) + h_d
        gains = np.einsum("sm,sm->s", h_eff.conj(), h_eff).real
        return np.log2(1.0 + power * gains / noise)

    out: dict[tuple[str, int], np.ndarray] = {}
    for scheme, q in cells:
        levels = levels_for_bits(q)
        if scheme in ("tts-pdd", "tts-ssca", "naive-icsi"):
            rates = mrt_rates_for(np.asarray(frozen[(scheme, q)]))
        elif scheme == "single-timescale":
            v, w = frozen[(scheme, q)]
            h_eff = np.einsum("sn,snm->sm", h_r * np.asarray(v), g.conj()) + h_d
            sig = np.abs(h_eff.conj() @ w[0]) ** 2
            rates = np.log2(1.0 + sig / noise)
        elif scheme == "random-phase":
            v_slots = np.stack([
                baselines.random_phase(levels, n, substream(seed, "phase", trial, s, q)).v
                for s in range(slots)
            ])
            rates = mrt_rates_for(v_slots)
        elif scheme == "no-irs":
            gains = np.einsum("sm,sm->s", h_d.conj(), h_d).real
            rates = np.log2(1.0 + power * gains / noise)
        elif scheme == "icsi-per-slot":
            gg = g @ g.conj().transpose(0, 2, 1)
            phis = h_r.conj()[:, :, None] * gg * h_r[:, None, :]
            bs = h_r.conj() * np.einsum("snm,sm->sn", g, h_d)
            u, _, _ = pdd_solve_batch(phis, bs, _icsi_pdd_params(levels))
            rates = mrt_rates_for(u)
        else:
            raise ExperimentError(f"unknown scheme tag '{scheme}'")
        out[(scheme, q)] = np.array([rates.mean()])
    return out


def _run_trial_multi_user(
    scenario: Scenario, spec: ExperimentSpec, trial: int
) -> dict[tuple[str, int], np.ndarray]:
    seed = spec.seed
    k = scenario.num_users
    n = scenario.num_elements
    power = scenario.transmit_power
    noise = scenario.noise_powers
    weights = spec.weights
    cells = _scheme_cells(spec)
    scsi = build_scsi(scenario, substream(seed, "scsi", trial))
    frozen = _long_term_configs(scsi, scenario, spec, trial, cells)

    sums = {cell: np.zeros(k) for cell in cells}
    for slot in range(spec.slots):
        ch = sample_instantaneous(scsi, substream(seed, "samples", trial, slot))
        for scheme, q in cells:
            levels = levels_for_bits(q)
            if scheme in ("tts-pdd", "tts-ssca", "naive-icsi"):
                rates = _short_term_rates(frozen[(scheme, q)], ch, power, noise, weights)
            elif scheme == "single-timescale":
                v, w = frozen[(scheme, q)]
                rates, _ = instantaneous_rates(v, w, ch, noise)
            elif scheme == "random-phase":
                cfg = baselines.random_phase(levels, n, substream(seed, "phase", trial, slot, q))
                rates = _short_term_rates(cfg.v, ch, power, noise, weights)
            elif scheme == "no-irs":
                rates = baselines.no_irs_rate(ch, weights, power, noise)
            elif scheme == "icsi-per-slot":
                cfg, w = baselines.icsi_per_slot(ch, levels, weights, power, noise)
                rates, _ = instantaneous_rates(cfg.v, w, ch, noise)
            else:
                raise ExperimentError(f"unknown scheme tag '{scheme}'")
            sums[(scheme, q)] += rates
    return {cell: sums[cell] / spec.slots for cell in cells}


def _run_trial(scenario: Scenario, spec: ExperimentSpec, trial: int) -> dict[tuple[str, int], np.ndarray]:
    if scenario.num_users == 1:
        return _run_trial_single_user(scenario, spec, trial)
    return _run_trial_multi_user(scenario, spec, trial)


def simulate_point(
    scenario: Scenario, spec: ExperimentSpec, threads: int | None = None
) -> tuple[dict[tuple[str, int], PointStats], int]:
    """Run all trials at one sweep point; returns per-trial stats and failure count."""
    threads = threads if threads is not None else spec.threads
    cells = _scheme_cells(spec)
    results: list[dict | None] = [None] * spec.trials
    failures = 0

    def work(trial: int):
        try:
            return _run_trial(scenario, spec, trial)
        except ExperimentError:
            raise
        except Exception as exc:  # per-trial numerical failures are tolerated
            log.warning("trial %d failed: %s", trial, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(spec.trials)))
    else:
        results = [work(t) for t in range(spec.trials)]

    kept = [r for r in results if r is not None]
    failures = spec.trials - len(kept)
    if failures > MAX_FAILURE_FRACTION * spec.trials:
        raise ExperimentError(
            f"{failures}/{spec.trials} trials failed (more than {MAX_FAILURE_FRACTION:.0%})"
        )
    if failures:
        log.warning("%d/%d trials failed and were excluded", failures, spec.trials)

    stats = {}
    for cell in cells:
        per_user = np.stack([r[cell] for r in kept])
        weighted = per_user @ spec.weights
        stats[cell] = PointStats(weighted=weighted, per_user=per_user)
    return stats, failures


def run_experiment(spec: ExperimentSpec) -> list[ResultRecord]:
    """Full experiment: every sweep value x scheme x resolution cell."""
    records: list[ResultRecord] = []
    sweep_values: list[float | None]
    if spec.sweep is None:
        sweep_values = [None]
    else:
        sweep_values = list(spec.sweep.grid)
    for value in sweep_values:
        scenario = spec.scenario if value is None else apply_sweep(
            spec.scenario, spec.sweep.variable, value)
        t0 = time.perf_counter()
        stats, failures = simulate_point(scenario, spec)
        elapsed = time.perf_counter() - t0
        for (scheme, q) in sorted(stats):
            ps = stats[(scheme, q)]
            records.append(ResultRecord(
                sweep_value=value,
                scheme=scheme,
                q_bits=q,
                user_rates=ps.per_user.mean(axis=0),
                weighted_sum_rate=ps.mean,
                std_error=ps.std_error,
                wall_time=elapsed,
                trials_used=ps.weighted.size,
                failures=failures,
            ))
        log.info("sweep point %s done in %.1fs (%d failures)", value, elapsed, failures)
    records.sort(key=lambda r: (r.sweep_value if r.sweep_value is not None else 0.0,
                                r.scheme, r.q_bits))
    return records


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def emit_csv(records: list[ResultRecord], path: str) -> None:
    """Write records deterministically; six significant digits per float.

    Wall time is intentionally not serialized so that identical (config, seed)
    runs produce identical files.
    """
    k = records[0].user_rates.shape[0] if records else 0
    user_cols = [f"rate_user{i + 1}" for i in range(k)]
    header = ["sweep_value", "scheme", "q_bits", *user_cols, "weighted_sum_rate",
              "std_error", "trials_used"]
    lines = [",".join(header)]
    for rec in records:
        sweep = "" if rec.sweep_value is None else _fmt(rec.sweep_value)
        fields = [sweep, rec.scheme, str(rec.q_bits),
                  *(_fmt(x) for x in rec.user_rates),
                  _fmt(rec.weighted_sum_rate), _fmt(rec.std_error),
                  str(rec.trials_used)]
        lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
