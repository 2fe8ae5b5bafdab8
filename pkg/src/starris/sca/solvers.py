"""SCA drivers for the three AO blocks and the alternating outer loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..channel import ChannelRealization, substream
from ..config import SystemConfig
from ..system import BeamformingMatrix, StarRisState, random_precoder, sum_rate
from .interior_point import solve_convex_subproblem
from .subproblem import (
    ScaSubproblem,
    build_amplitude_subproblem,
    build_phase_subproblem,
    build_precoder_subproblem,
    phase_from_variables,
    precoder_from_variables,
)


@dataclass
class ScaOptions:
    """Knobs shared by all SCA blocks.

    ``penalty_schedule`` is the sequence of penalty weights used by the
    phase block; each stage runs SCA to convergence with a fixed weight,
    warm-started from the previous stage.  ``(1e4,)`` is the single-weight
    scheme.
    """

    penalty: float = 1e4
    penalty_schedule: tuple[float, ...] = (1.0, 10.0, 1e2, 1e3, 1e4)
    eps: float = 1e-3
    max_iter: int = 200
    inner_tol: float = 1e-10
    inner_max_iter: int = 200
    outer_eps: float = 1e-3
    outer_max_iter: int = 50
    order: tuple[str, ...] = ("phase", "amplitude", "precoder")

    def __post_init__(self):
        if self.penalty <= 0 or any(c <= 0 for c in self.penalty_schedule):
            raise ValueError("penalty weights must be positive")
        if not set(self.order) <= {"phase", "amplitude", "precoder"}:
            raise ValueError(f"unknown block in order {self.order}")

    @property
    def schedule(self) -> tuple[float, ...]:
        sched = tuple(c for c in self.penalty_schedule if c < self.penalty) + (self.penalty,)
        return sched


@dataclass
class ScaTrace:
    """Penalized objective and unit-modulus violation per SCA iterate.

    A staged run stores one child trace per penalty weight in ``stages``;
    the objective is only comparable within a stage.
    """

    objective: list[float] = field(default_factory=list)
    modulus_violation: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    status: str = ""
    inner_status: list[str] = field(default_factory=list)
    penalty: float = 0.0
    stages: list["ScaTrace"] = field(default_factory=list)
    rate_before: float = float("nan")
    rate_after: float = float("nan")
    projection_delta: float = 0.0
    reverted: bool = False

    def segments(self) -> list["ScaTrace"]:
        return self.stages if self.stages else [self]

    def is_monotone(self, slack: float = 1e-6) -> bool:
        return all(np.all(np.diff(s.objective) >= -slack) for s in self.segments())

    @property
    def final_modulus_violation(self) -> float:
        segs = self.segments()
        return segs[-1].modulus_violation[-1] if segs[-1].modulus_violation else 0.0


def _modulus_violation(sub: ScaSubproblem, z) -> float:
    if sub.kind != "phase":
        return 0.0
    half = z.size // 2
    return float(np.max(np.abs(np.hypot(z[:half], z[half:]) - 1.0)))


def run_sca(sub: ScaSubproblem, opts: ScaOptions) -> tuple[np.ndarray, ScaTrace]:
    """Iterate surrogate solves from ``sub``'s linearization point.

    Slacks are re-tightened to the true SINR/interference after every solve,
    which keeps each new surrogate a valid majorizer and can only raise the
    penalized objective.  A solve that fails to improve is discarded.
    """
    sub = sub.tight()
    trace = ScaTrace(penalty=sub.penalty)
    obj = sub.penalized_objective(sub.z, sub.eta)
    trace.objective.append(obj)
    trace.modulus_violation.append(_modulus_violation(sub, sub.z))
    trace.status = "max-iter"
    for _ in range(opts.max_iter):
        res = solve_convex_subproblem(sub, tol=opts.inner_tol, max_iter=opts.inner_max_iter)
        trace.inner_status.append(res.status)
        nxt = sub.tight(res.z)
        new_obj = nxt.penalized_objective(nxt.z, nxt.eta)
        if not np.isfinite(new_obj) or new_obj < obj:
            trace.converged = True
            trace.status = "no-progress" if res.status == "optimal" else f"inner-{res.status}"
            break
        trace.iterations += 1
        trace.objective.append(new_obj)
        trace.modulus_violation.append(_modulus_violation(nxt, nxt.z))
        gain = (new_obj - obj) / max(abs(obj), 1e-12)
        sub, obj = nxt, new_obj
        if gain < opts.eps:
            trace.converged = True
            trace.status = "converged"
            break
    return sub.z, trace


def _as_w(w) -> np.ndarray:
    return w.w if isinstance(w, BeamformingMatrix) else np.asarray(w)


def sca_phase(chan: ChannelRealization, ris: StarRisState, w, cfg: SystemConfig, opts: ScaOptions | None = None):
    """Penalty-relaxed SCA over the unit-modulus coefficients of both regions."""
    opts = opts or ScaOptions()
    w = _as_w(w)
    before = sum_rate(chan, ris, w, cfg.noise_power)
    trace = ScaTrace(penalty=opts.penalty, rate_before=before)
    z = None
    for c in opts.schedule:
        sub = build_phase_subproblem(chan, ris, w, cfg.noise_power, penalty=c, z=z)
        z, stage = run_sca(sub, opts)
        trace.stages.append(stage)
        trace.iterations += stage.iterations
        trace.inner_status += stage.inner_status
    trace.objective = trace.stages[-1].objective
    trace.modulus_violation = trace.stages[-1].modulus_violation
    trace.converged = trace.stages[-1].converged
    trace.status = trace.stages[-1].status

    s_t, s_r = phase_from_variables(z, chan.n_elems)
    relaxed = StarRisState.from_coefficients(s_t * ris.amp_t.ravel(), s_r * ris.amp_r.ravel(), ris.shape)
    out = ris.with_phases(np.angle(s_t), np.angle(s_r))
    after = sum_rate(chan, out, w, cfg.noise_power)
    relaxed_rate = sum_rate(chan, relaxed, w, cfg.noise_power)
    trace.projection_delta = abs(after - relaxed_rate) / max(relaxed_rate, 1e-12)
    if after < before:
        out, after, trace.reverted = ris, before, True
    trace.rate_after = after
    return out, trace


def sca_amplitude(chan: ChannelRealization, ris: StarRisState, w, cfg: SystemConfig, opts: ScaOptions | None = None):
    """SCA over the energy split ``(a_t, a_r)`` with phases and precoder fixed."""
    opts = opts or ScaOptions()
    w = _as_w(w)
    before = sum_rate(chan, ris, w, cfg.noise_power)
    z, trace = run_sca(build_amplitude_subproblem(chan, ris, w, cfg.noise_power), opts)
    n = chan.n_elems
    a_t, a_r = np.clip(z[:n], 0.0, 1.0), np.clip(z[n:], 0.0, 1.0)
    scale = np.maximum(1.0, np.hypot(a_t, a_r))
    out = ris.with_amplitudes(a_t / scale, a_r / scale)
    after = sum_rate(chan, out, w, cfg.noise_power)
    if after < before:
        out, after, trace.reverted = ris, before, True
    trace.rate_before, trace.rate_after = before, after
    return out, trace


def sca_precoder(chan: ChannelRealization, ris: StarRisState, w, cfg: SystemConfig, opts: ScaOptions | None = None):
    """SCA over the precoder inside the power ball, surface fixed."""
    opts = opts or ScaOptions()
    w = _as_w(w)
    before = sum_rate(chan, ris, w, cfg.noise_power)
    sub = build_precoder_subproblem(chan, ris, w, cfg.noise_power, cfg.p_max)
    z, trace = run_sca(sub, opts)
    w_new = precoder_from_variables(z, chan.n_tx, chan.n_users, cfg.p_max)
    power = float(np.sum(np.abs(w_new) ** 2))
    if power > cfg.p_max:
        w_new = w_new * np.sqrt(cfg.p_max / power)
    after = sum_rate(chan, ris, w_new, cfg.noise_power)
    if after < before:
        w_new, after, trace.reverted = w, before, True
    trace.rate_before, trace.rate_after = before, after
    return BeamformingMatrix(w_new), trace


# -- alternating optimization --------------------------------------------------


@dataclass
class AoTrace:
    sum_rate: list[float] = field(default_factory=list)
    block_iterations: dict = field(default_factory=lambda: {"phase": 0, "amplitude": 0, "precoder": 0})
    block_traces: list[tuple[str, ScaTrace]] = field(default_factory=list)
    outer_iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0

    @property
    def max_modulus_violation(self) -> float:
        vals = [t.final_modulus_violation for name, t in self.block_traces if name == "phase"]
        return max(vals, default=0.0)

    @property
    def max_projection_delta(self) -> float:
        vals = [t.projection_delta for name, t in self.block_traces if name == "phase"]
        return max(vals, default=0.0)


def random_init(chan: ChannelRealization, cfg: SystemConfig, rng: np.random.Generator):
    """Uniform phases, equal energy split and a power-projected Gaussian precoder."""
    ris = StarRisState.uniform_random(chan.n_ris, chan.n_elems_per_ris, rng)
    w = random_precoder(chan.n_tx, chan.n_users, cfg.p_max, rng)
    return ris, w


_BLOCKS = {"phase": sca_phase, "amplitude": sca_amplitude}


def ao_optimize(
    chan: ChannelRealization,
    cfg: SystemConfig,
    init: tuple[StarRisState, BeamformingMatrix] | None = None,
    opts: ScaOptions | None = None,
    seed: int = 0,
):
    """Cycle the blocks in ``opts.order`` until the fractional sum-rate gain drops below ``opts.outer_eps``."""
    opts = opts or ScaOptions()
    t0 = time.perf_counter()
    ris, w = init if init is not None else random_init(chan, cfg, substream(seed, 0))
    w = _as_w(w)
    trace = AoTrace()
    rate = sum_rate(chan, ris, w, cfg.noise_power)
    trace.sum_rate.append(rate)
    for _ in range(opts.outer_max_iter):
        for block in opts.order:
            if block == "precoder":
                bm, bt = sca_precoder(chan, ris, w, cfg, opts)
                w = bm.w
            else:
                ris, bt = _BLOCKS[block](chan, ris, w, cfg, opts)
            trace.block_iterations[block] += bt.iterations
            trace.block_traces.append((block, bt))
        new_rate = sum_rate(chan, ris, w, cfg.noise_power)
        trace.outer_iterations += 1
        trace.sum_rate.append(new_rate)
        gain = (new_rate - rate) / max(abs(rate), 1e-12)
        rate = new_rate
        if gain < opts.outer_eps:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - t0
    return ris, BeamformingMatrix(w), trace


def ao_exhaustive(chan: ChannelRealization, cfg: SystemConfig, n_starts: int = 16, opts: ScaOptions | None = None, seed: int = 0):
    """Best of ``n_starts`` AO runs; start ``i`` draws its init from substream ``(seed, i)``.

    Ties keep the lowest start index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    best = None
    for i in range(n_starts):
        init = random_init(chan, cfg, substream(seed, i))
        ris, w, trace = ao_optimize(chan, cfg, init, opts)
        rate = trace.sum_rate[-1]
        if best is None or rate > best[2]:
            best = (ris, w, rate, trace, i)
    return best
