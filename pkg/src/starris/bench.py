"""Experiment runner: baselines, parameter sweeps, permutation audits and timing probes.

``results.csv`` holds only deterministic columns so that re-running a spec
reproduces it byte for byte; per-row wall times go to ``row_times.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .bhgnn import BHGNN, load_params
from .channel import ChannelRealization, sample_channels, substream
from .config import SystemConfig, dbm_to_watt, parse_config_text
from .sca import ScaOptions, ao_exhaustive, ao_optimize, sca_precoder
from .system import StarRisState, check_feasibility, random_precoder, sinr

METHODS = ("ao", "ao-exh", "bhgnn", "random-phase")  # fixed output order
AXES = ("elements", "users", "region", "power")


def baseline_random_phase(chan: ChannelRealization, cfg: SystemConfig, n_draws: int = 8, opts: ScaOptions | None = None, seed: int = 0):
    """Best of ``n_draws`` random surfaces (uniform phases, equal split), each with an SCA precoder."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    best = None
    for i in range(n_draws):
        rng = substream(seed, i)
        ris = StarRisState.uniform_random(chan.n_ris, chan.n_elems_per_ris, rng)
        w0 = random_precoder(chan.n_tx, chan.n_users, cfg.p_max, rng)
        w, trace = sca_precoder(chan, ris, w0, cfg, opts)
        rate = trace.rate_after
        if best is None or rate > best[2]:
            best = (ris, w, rate, trace.iterations)
    return best


@dataclass
class ExperimentSpec:
    methods: tuple[str, ...] = ("ao", "random-phase")
    axis: str = "elements"
    values: tuple[float, ...] = (8,)
    trials: int = 10
    seed: int = 0
    base: SystemConfig = field(default_factory=SystemConfig)
    model: str | None = None
    starts: int = 16
    draws: int = 8
    qos_target: float = 0.0
    timing_reps: int = 0  # 0 skips timing.csv content
    pe_perms: int = 0  # 0 skips pe_audit.csv content

    def __post_init__(self):
        if not self.methods:
            raise ValueError("need at least one method")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.values:
            raise ValueError("need at least one axis value")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.timing_reps < 0 or self.pe_perms < 0:
            raise ValueError("timing_reps and pe_perms must be >= 0")
        self.methods = tuple(m for m in METHODS if m in self.methods)

    @classmethod
    def from_text(cls, text: str, source: str = "<spec>") -> "ExperimentSpec":
        base, rest = parse_config_text(text, source)
        kw: dict = {"base": base}
        if "methods" in rest:
            kw["methods"] = tuple(m.strip() for m in rest["methods"].split(","))
        if "axis" in rest:
            kw["axis"] = rest["axis"].strip()
        if "values" in rest:
            kw["values"] = tuple(float(v) for v in rest["values"].split(","))
        for key in ("trials", "seed", "starts", "draws", "timing_reps", "pe_perms"):
            if key in rest:
                kw[key] = int(rest[key])
        if "model" in rest:
            kw["model"] = rest["model"].strip()
        if "qos_target" in rest:
            kw["qos_target"] = float(rest["qos_target"])
        return cls(**kw)

    def config_for(self, value: float) -> SystemConfig:
        """System config at one sweep point (values are labelled per axis)."""
        b = self.base
        if self.axis == "elements":  # total element count L*M, split evenly over panels
            m = int(value) // b.n_ris
            if m * b.n_ris != int(value):
                raise ValueError(f"{value} elements do not split evenly over {b.n_ris} panels")
            return b.replace(n_elems_per_ris=m)
        if self.axis == "users":  # half the users (rounded up) in the T region
            k = int(value)
            return b.replace(n_users=k, n_users_t_region=max(1, (k + 1) // 2))
        if self.axis == "region":  # side length of both square user regions
            x0t, _, y0t, _ = b.user_region_t
            _, x1r, y0r, _ = b.user_region_r
            return b.replace(
                user_region_t=(x0t, x0t + value, y0t, y0t + value),
                user_region_r=(x1r - value, x1r, y0r, y0r + value),
            )
        return b.replace(p_max=dbm_to_watt(value))


@dataclass
class ResultRow:
    method: str
    axis_value: float
    trial_seed: int
    sum_rate: float
    min_sinr: float
    qos_violation: float
    wall_ms: float
    iterations: int
    rel_to_ao: float = float("nan")

    DETERMINISTIC = ("method", "axis_value", "trial_seed", "sum_rate", "min_sinr", "qos_violation", "iterations", "rel_to_ao")


def _solve_cell(method: str, chan, cfg: SystemConfig, spec: ExperimentSpec, trial_seed: int, model):
    opts = ScaOptions()
    t0 = time.perf_counter()
    iters = 0
    if method == "ao":
        ris, w, tr = ao_optimize(chan, cfg, opts=opts, seed=trial_seed)
        iters = tr.outer_iterations
    elif method == "ao-exh":
        ris, w, _, tr, _ = ao_exhaustive(chan, cfg, spec.starts, opts, seed=trial_seed)
        iters = tr.outer_iterations
    elif method == "random-phase":
        ris, w, _, iters = baseline_random_phase(chan, cfg, spec.draws, opts, seed=trial_seed)
    else:
        ris, w = model.predict(chan, cfg.p_max, cfg.noise_power)
    wall = (time.perf_counter() - t0) * 1e3
    return ris, w, wall, iters


def run_experiment(spec: ExperimentSpec, out_dir=None, model: BHGNN | None = None) -> dict:
    """Methods x axis values x trials.  Returns rows, summary and skipped cells."""
    skipped: list[str] = []
    if "bhgnn" in spec.methods and model is None:
        if spec.model and Path(spec.model).exists():
            model = load_params(spec.model)
        else:
            skipped.append(f"bhgnn: model file {spec.model!r} not found")
    rows: list[ResultRow] = []
    for value in spec.values:
        cfg = spec.config_for(value)
        for trial in range(spec.trials):
            trial_seed = spec.seed * 1_000_003 + trial
            chan = sample_channels(cfg.replace(rng_seed=spec.seed), index=trial)
            ao_rate = None
            for method in spec.methods:
                if method == "bhgnn" and model is None:
                    continue
                if method == "bhgnn" and model.n_tx != cfg.n_tx:
                    skipped.append(f"bhgnn at {value}: model N_t={model.n_tx} != {cfg.n_tx}")
                    continue
                ris, w, wall, iters = _solve_cell(method, chan, cfg, spec, trial_seed, model)
                feas = check_feasibility(ris, w, cfg.p_max)
                if not feas.feasible():
                    raise RuntimeError(f"{method} produced an infeasible point at {value}/{trial}: {feas}")
                rep = sinr(chan, ris, w, cfg.noise_power)
                viol = float(np.mean(np.maximum(spec.qos_target - rep.sinr, 0.0)))
                row = ResultRow(method, float(value), trial_seed, rep.sum_rate, rep.min_sinr, viol, wall, int(iters))
                if method == "ao":
                    ao_rate = rep.sum_rate
                rows.append(row)
            if ao_rate is not None:
                for r in rows:
                    if r.axis_value == float(value) and r.trial_seed == trial_seed:
                        r.rel_to_ao = 100.0 * (r.sum_rate / ao_rate) if ao_rate > 0 else float("nan")
    summary = summarize(rows)
    result = {"rows": rows, "summary": summary, "skipped": skipped}
    if out_dir is not None:
        write_results(Path(out_dir), spec, result)
    return result


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Per (method, axis value): mean, 95% normal-approximation CI and mean relative-to-AO."""
    out = []
    keys = []
    for r in rows:
        if (r.method, r.axis_value) not in keys:
            keys.append((r.method, r.axis_value))
    for method, value in keys:
        sel = [r for r in rows if r.method == method and r.axis_value == value]
        rates = np.array([r.sum_rate for r in sel])
        half = 1.96 * rates.std(ddof=1) / math.sqrt(len(rates)) if len(rates) > 1 else float("nan")
        rel = np.array([r.rel_to_ao for r in sel])
        out.append(
            {
                "method": method,
                "axis_value": value,
                "n": len(sel),
                "mean_sum_rate": float(rates.mean()),
                "ci95_low": float(rates.mean() - half),
                "ci95_high": float(rates.mean() + half),
                "mean_rel_to_ao": float(np.mean(rel)) if np.all(np.isfinite(rel)) else float("nan"),
            }
        )
    return out


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_results(out: Path, spec: ExperimentSpec, result: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ResultRow.DETERMINISTIC)
        for r in result["rows"]:
            w.writerow([_fmt(getattr(r, c)) for c in ResultRow.DETERMINISTIC])
    with open(out / "row_times.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "axis_value", "trial_seed", "wall_ms"])
        for r in result["rows"]:
            w.writerow([r.method, _fmt(r.axis_value), r.trial_seed, f"{r.wall_ms:.3f}"])
    with open(out / "summary.csv", "w", newline="") as fh:
        if result["summary"]:
            w = csv.DictWriter(fh, fieldnames=list(result["summary"][0]))
            w.writeheader()
            for s in result["summary"]:
                w.writerow({k: _fmt(v) for k, v in s.items()})
    write_manifest(out, spec, result["skipped"])


def code_version() -> str:
    try:
        from importlib.metadata import version

        ver = version("artifact")
    except Exception:  # pragma: no cover - metadata missing in odd installs
        ver = "unknown"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5
        ).stdout.strip()
    except Exception:  # pragma: no cover
        rev = ""
    return f"{ver}+{rev}" if rev else ver


def write_manifest(out: Path, spec: ExperimentSpec, skipped=()) -> None:
    d = asdict(spec)
    d["base"] = spec.base.to_dict()
    manifest = {"spec": d, "seeds": {"spec": spec.seed}, "code_version": code_version(), "skipped": list(skipped)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- permutation audit ---------------------------------------------------------


@dataclass
class PeAuditReport:
    n_perms: int
    max_elementwise_deviation: float
    max_sum_rate_deviation: float
    rows: list[tuple[int, float, float]]


def pe_audit(model: BHGNN, chan: ChannelRealization, n_perms: int = 100, p_max: float = 1.0, noise_power: float = 1e-16, seed: int = 0, identity: bool = False) -> PeAuditReport:
    """Compare model outputs on relabelled inputs with relabelled outputs.

    Users are permuted together with their region tags and elements together
    with their channel rows; deviations are exact differences.
    """
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    rng = np.random.default_rng(seed)
    h = torch.as_tensor(chan.h_equiv)[None]
    is_t = torch.as_tensor(chan.is_t_user)[None]
    with torch.no_grad():
        base = model(h, is_t, p_max, noise_power)
    rows = []
    for i in range(n_perms):
        p1 = np.arange(chan.n_elems) if identity else rng.permutation(chan.n_elems)
        p2 = np.arange(chan.n_users) if identity else rng.permutation(chan.n_users)
        with torch.no_grad():
            out = model(h[:, p1][:, :, p2], is_t[:, p2], p_max, noise_power)
        dev = max(
            float((out.w - base.w[:, :, p2]).abs().max()),
            float((out.theta_t - base.theta_t[:, p1]).abs().max()),
            float((out.theta_r - base.theta_r[:, p1]).abs().max()),
            float((out.amp_t - base.amp_t[:, p1]).abs().max()),
            float((out.amp_r - base.amp_r[:, p1]).abs().max()),
            float((out.state.u - base.state.u[:, p2]).abs().max()),
            float((out.state.b - base.state.b[:, p1]).abs().max()),
        )
        rate_dev = float((out.sum_rate - base.sum_rate).abs().max())
        rows.append((i, dev, rate_dev))
    return PeAuditReport(n_perms, max(r[1] for r in rows), max(r[2] for r in rows), rows)


# -- timing --------------------------------------------------------------------


@dataclass
class TimingRow:
    method: str
    label: str
    reps: int
    median_ms: float
    iqr_ms: float


def _time_it(fn, reps: int, warmup: int = 1) -> np.ndarray:
    for _ in range(warmup):
        fn(-1)
    out = []
    for i in range(reps):
        t0 = time.perf_counter()
        fn(i)
        out.append((time.perf_counter() - t0) * 1e3)
    return np.array(out)


def timing_probe(methods, configs: dict[str, SystemConfig], reps: int = 20, seed: int = 0, model: BHGNN | None = None, opts: ScaOptions | None = None):
    """Median/IQR wall time per (method, config); rep ``i`` solves channel ``i``.

    Returns ``(rows, ratios)`` with ``ratios[label] = median(ao) / median(bhgnn)``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rows = []
    for label, cfg in configs.items():
        chans = [sample_channels(cfg.replace(rng_seed=seed), index=i + 1) for i in range(reps)]
        warm = sample_channels(cfg.replace(rng_seed=seed), index=0)
        pick = lambda i: warm if i < 0 else chans[i]  # noqa: E731
        for method in methods:
            if method == "ao":
                fn = lambda i: ao_optimize(pick(i), cfg, opts=opts, seed=seed)  # noqa: E731
            elif method == "bhgnn":
                net = model if model is not None and model.n_tx == cfg.n_tx else BHGNN(cfg.n_tx, seed=seed)

                def fn(i, net=net):
                    c = pick(i)
                    with torch.no_grad():
                        net(c.h_equiv, c.is_t_user, cfg.p_max, cfg.noise_power)

            else:
                raise ValueError(f"timing not supported for {method}")
            t = _time_it(fn, reps)
            q1, med, q3 = np.percentile(t, [25, 50, 75])
            rows.append(TimingRow(method, label, reps, float(med), float(q3 - q1)))
    ratios = {}
    for label in configs:
        med = {r.method: r.median_ms for r in rows if r.label == label}
        if "ao" in med and "bhgnn" in med:
            ratios[label] = med["ao"] / med["bhgnn"]
    return rows, ratios


def write_timing(path, rows, ratios) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "config", "reps", "median_ms", "iqr_ms", "ao_over_bhgnn"])
        for r in rows:
            w.writerow([r.method, r.label, r.reps, f"{r.median_ms:.3f}", f"{r.iqr_ms:.3f}", f"{ratios.get(r.label, float('nan')):.3f}"])


def write_pe_audit(path, report: PeAuditReport | None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perm", "max_elementwise_deviation", "sum_rate_deviation"])
        for i, d, r in report.rows if report is not None else ():
            w.writerow([i, repr(d), repr(r)])


def run_bench(spec: ExperimentSpec, out_dir, model: BHGNN | None = None) -> dict:
    """Everything ``bench`` emits: results, timing, permutation audit and manifest."""
    out = Path(out_dir)
    if model is None and spec.model and Path(spec.model).exists():
        model = load_params(spec.model)
    result = run_experiment(spec, out, model)
    rows, ratios = [], {}
    timed = [m for m in ("ao", "bhgnn") if m in spec.methods]
    if spec.timing_reps > 0 and timed:
        configs = {f"{spec.axis}={v:g}": spec.config_for(v) for v in spec.values}
        rows, ratios = timing_probe(timed, configs, spec.timing_reps, spec.seed, model)
    write_timing(out / "timing.csv", rows, ratios)
    report = None
    if spec.pe_perms > 0 and model is not None:
        cfg = spec.config_for(spec.values[0])
        if model.n_tx == cfg.n_tx:
            chan = sample_channels(cfg.replace(rng_seed=spec.seed), index=0)
            report = pe_audit(model, chan, spec.pe_perms, cfg.p_max, cfg.noise_power, seed=spec.seed)
    write_pe_audit(out / "pe_audit.csv", report)
    result.update(timing=rows, ratios=ratios, pe_audit=report)
    return result
