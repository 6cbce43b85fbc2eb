"""Trajectory simulation, filter execution, and Monte Carlo benchmarking.

Scenario configuration, truth simulation, filter runs over recorded
observations, error statistics, and the two consistency studies (linear
Kalman equivalence and coordinate-invariance scaling) live here, together
with deterministic CSV/JSON output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import __version__
from .ekf import EkfEstimate, ekf_step
from .errors import FilterNumericsError
from .filter import FilterConfig, FilterDiagnostics, StateEstimate, filter_step
from .flow import DiffusionModel
from .geometry import ConnectorField, SymTensor2, flat_connector
from .models.cubic1d import Cubic1DParams, cubic1d_build
from .models.linear import LinearParams, linear_build
from .models.tracking import (
    Tracking9DParams,
    constant_velocity_missile,
    tracking_diffusion,
    tracking_observation,
)
from .observation import ObservationEvent, ObservationModel, sample_observation

KNOWN_MODELS = ("cubic1d", "tracking9d", "linear")
KNOWN_FILTERS = ("gif", "ekf")

HISTOGRAM_BINS = 50
DEFAULT_SIM_SUBSTEPS = 20
MAX_REFINEMENTS = 8


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one benchmark or simulation scenario."""

    model: str = "cubic1d"
    model_params: dict = field(default_factory=dict)
    delta: float = 1.0
    n_obs: int = 100
    n_substeps: int = 8
    sim_substeps: int = DEFAULT_SIM_SUBSTEPS
    seed: int = 0
    filters: tuple = ("gif", "ekf")
    collar_enabled: bool = True
    quadratic_enabled: bool = True
    jitter: float = 0.0
    mu0: Optional[list] = None
    sigma0: Optional[list] = None
    x0: Optional[list] = None
    n_runs: int = 1
    tail_quantile: float = 0.95
    max_refinements: int = MAX_REFINEMENTS

    def __post_init__(self):
        if self.model not in KNOWN_MODELS:
            raise ValueError(f"unknown model '{self.model}' (expected one of {KNOWN_MODELS})")
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        if self.n_runs < 1 or self.n_obs % self.n_runs != 0:
            raise ValueError("n_runs must divide n_obs")
        for f in self.filters:
            if f not in KNOWN_FILTERS:
                raise ValueError(f"unknown filter '{f}' (expected subset of {KNOWN_FILTERS})")

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            delta=self.delta,
            n_substeps=self.n_substeps,
            collar_enabled=self.collar_enabled,
            quadratic_enabled=self.quadratic_enabled,
            jitter=self.jitter,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["filters"] = list(self.filters)
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


REQUIRED_CONFIG_FIELDS = ("model", "n_obs")


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from parsed JSON, naming any missing field."""
    for name in REQUIRED_CONFIG_FIELDS:
        if name not in raw:
            raise ValueError(f"missing config field: {name}")
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    clean = dict(raw)
    if "filters" in clean:
        clean["filters"] = tuple(clean["filters"])
    return ScenarioConfig(**clean)


@dataclass
class Scenario:
    """Materialized models plus initial conditions for one scenario."""

    config: ScenarioConfig
    diffusion: DiffusionModel
    observation_at: Callable[[float], ObservationModel]
    x0: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray


def build_scenario(config: ScenarioConfig) -> Scenario:
    params = dict(config.model_params)
    if config.model == "cubic1d":
        cp = Cubic1DParams(delta=config.delta, **params)
        diffusion, obs = cubic1d_build(cp)
        observation_at = lambda t: obs
        # stationary benchmark defaults: start truth and estimate at 0.3,
        # prior variance equal to the process noise rate
        x0 = np.array([0.3])
        sigma0 = np.array([[cp.alpha]])
    elif config.model == "linear":
        lp = LinearParams(
            a_mat=np.asarray(params["a_mat"], dtype=float),
            sigma_mat=np.asarray(params["sigma_mat"], dtype=float),
            j_mat=np.asarray(params["j_mat"], dtype=float),
            b_mat=np.asarray(params["b_mat"], dtype=float),
        )
        diffusion, obs = linear_build(lp)
        observation_at = lambda t: obs
        x0 = np.zeros(lp.state_dim)
        sigma0 = np.eye(lp.state_dim)
    else:  # tracking9d
        missile_p0 = np.asarray(params.pop("missile_p0", [0.0, 0.0, 0.0]), dtype=float)
        missile_v0 = np.asarray(params.pop("missile_v0", [250.0, 0.0, 0.0]), dtype=float)
        tp = Tracking9DParams(
            missile=constant_velocity_missile(missile_p0, missile_v0), **params
        )
        diffusion = tracking_diffusion(tp)
        observation_at = lambda t: tracking_observation(tp, t)
        x0 = np.array([9000.0, 2000.0, 3000.0, -200.0, 80.0, 0.0, 0.0, 0.0, 20.0])
        sigma0 = np.diag([100.0, 100.0, 100.0, 25.0, 25.0, 25.0, 4.0, 4.0, 4.0])

    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float)
    mu0 = x0.copy() if config.mu0 is None else np.asarray(config.mu0, dtype=float)
    if config.sigma0 is not None:
        sigma0 = np.asarray(config.sigma0, dtype=float)
        if sigma0.ndim == 1:
            sigma0 = np.diag(sigma0)
    return Scenario(config, diffusion, observation_at, x0, mu0, sigma0)


def trajectory_rng(seed: int, run_index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, run index): parallel-safe and
    identical regardless of execution order."""
    key = np.array([seed % 2 ** 64, run_index % 2 ** 64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class TrajectoryRecord:
    """Per-cycle truth, observations, and (once filtered) estimates."""

    times: np.ndarray
    truth: np.ndarray
    observations: np.ndarray
    diverged_at: Optional[int] = None
    estimates: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    aborted: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.times.size

    @property
    def n_valid(self) -> int:
        return self.n_obs if self.diverged_at is None else self.diverged_at


def simulate_sde(
    scenario: Scenario, rng: np.random.Generator, n_obs: Optional[int] = None
) -> TrajectoryRecord:
    """Euler-Maruyama truth simulation plus noisy observations at each cycle.

    Noise is loaded through the model's sigma(x) when available, otherwise
    through the symmetric square root of alpha(x); constrained models are
    re-projected after every substep.  A non-finite state marks the row and
    stops the simulation early.
    """
    config = scenario.config
    model = scenario.diffusion
    n = config.n_obs if n_obs is None else n_obs
    dt = config.delta / config.sim_substeps
    sqrt_dt = math.sqrt(dt)
    x = np.array(scenario.x0, dtype=float)
    ref = x.copy()
    times = config.delta * np.arange(1, n + 1)
    q = scenario.observation_at(float(times[0])).dim_obs
    truth = np.full((n, model.dim), np.nan)
    observations = np.full((n, q), np.nan)
    diverged_at = None

    use_noise_matrix = model.noise_matrix is not None
    # overflow surfaces as the explicit divergence marker, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            for _ in range(config.sim_substeps):
                if use_noise_matrix:
                    load = model.noise_matrix(x)
                    shock = load @ rng.standard_normal(load.shape[1])
                else:
                    alpha = model.alpha(x)
                    eigs, vecs = np.linalg.eigh(0.5 * (alpha + alpha.T))
                    root = (vecs * np.sqrt(np.clip(eigs, 0.0, None))) @ vecs.T
                    shock = root @ rng.standard_normal(model.dim)
                x = x + model.drift_b(x) * dt + shock * sqrt_dt
                if not np.all(np.isfinite(x)):
                    diverged_at = k
                    break
                if model.constrain is not None:
                    x = model.constrain(x, ref)
            if diverged_at is not None:
                break
            truth[k] = x
            obs_model = scenario.observation_at(float(times[k]))
            event = sample_observation(obs_model, x, rng, time=float(times[k]))
            observations[k] = event.y
    return TrajectoryRecord(times=times, truth=truth, observations=observations,
                            diverged_at=diverged_at)


def _step_with_refinement(step_fn, base_substeps: int, max_refinements: int):
    """Retry a filter step on stiff intervals with a progressively finer grid.

    The one-step flow schemes are explicit; when an update throws an estimate
    far from equilibrium the fixed default grid can leave the scheme outside
    its stability region even though the underlying flow contracts.  Doubling
    the subdivision restores stability deterministically.  Returns
    (result or None, refinements used).
    """
    last_error = None
    for k in range(max_refinements + 1):
        try:
            return step_fn(base_substeps * (2 ** k)), k
        except FilterNumericsError as err:
            last_error = err
    return None, max_refinements


def run_filters(scenario: Scenario, record: TrajectoryRecord) -> TrajectoryRecord:
    """Run every enabled filter over the recorded observations.

    A step that fails all refinement attempts is recorded as aborted and the
    filter keeps its previous estimate.  Errors are chart-norm distances
    between estimate and truth.
    """
    config = scenario.config
    model = scenario.diffusion
    n = record.n_valid
    base_cfg = config.filter_config()

    for name in config.filters:
        diag = FilterDiagnostics()
        est_rows = np.full((record.n_obs, model.dim), np.nan)
        err_rows = np.full(record.n_obs, np.nan)
        aborted = np.zeros(record.n_obs, dtype=bool)
        if name == "gif":
            state = StateEstimate(scenario.mu0.copy(),
                                  SymTensor2(scenario.mu0, scenario.sigma0.copy()))
        else:
            state = EkfEstimate(scenario.mu0.copy(),
                                SymTensor2(scenario.mu0, scenario.sigma0.copy()))
        for k in range(n):
            event = ObservationEvent(time=float(record.times[k]),
                                     y=record.observations[k])
            obs_model = scenario.observation_at(float(record.times[k]))
            if name == "gif":
                def one(nsub, _ev=event, _obs=obs_model, _st=state):
                    cfg = dataclasses.replace(base_cfg, n_substeps=nsub)
                    return filter_step(model, _obs, _st, _ev, cfg, diag=diag)
            else:
                def one(nsub, _ev=event, _obs=obs_model, _st=state):
                    return ekf_step(model, _obs, _st, _ev, config.delta, nsub, diag=diag)
            result, _ = _step_with_refinement(one, config.n_substeps,
                                              config.max_refinements)
            if result is None:
                aborted[k] = True
                diag.record_abort(f"{name} step {k} failed at max grid refinement")
            else:
                state = result
            mean = state.mu_hat if name == "gif" else state.mean
            est_rows[k] = mean
            err_rows[k] = float(np.linalg.norm(mean - record.truth[k]))
        record.estimates[name] = est_rows
        record.errors[name] = err_rows
        record.aborted[name] = aborted
        record.diagnostics[name] = diag
    return record


@dataclass
class BenchmarkSummary:
    """Aggregated per-filter error statistics for one benchmark run."""

    config: ScenarioConfig
    n_scored: int
    bin_edges: np.ndarray
    per_filter: dict  # name -> dict of statistics

    def to_dict(self) -> dict:
        return {
            "metadata": {
                "config": self.config.to_dict(),
                "config_hash": self.config.config_hash(),
                "seed": self.config.seed,
                "version": __version__,
            },
            "n_scored": self.n_scored,
            "bin_edges": [float(v) for v in self.bin_edges],
            "filters": {
                name: {
                    key: (int(val) if isinstance(val, (bool, np.integer, int)) else
                          [float(v) for v in val] if isinstance(val, np.ndarray) else
                          float(val))
                    for key, val in stats.items()
                }
                for name, stats in self.per_filter.items()
            },
        }


def summarize(config: ScenarioConfig, records: list[TrajectoryRecord]) -> BenchmarkSummary:
    """Pool errors across runs and compute the benchmark statistics."""
    pooled = {}
    aborted_counts = {}
    repairs = {}
    for name in config.filters:
        chunks = [rec.errors[name][: rec.n_valid] for rec in records]
        errs = np.concatenate(chunks) if chunks else np.zeros(0)
        pooled[name] = errs[np.isfinite(errs)]
        aborted_counts[name] = int(sum(rec.aborted[name][: rec.n_valid].sum()
                                       for rec in records))
        repairs[name] = int(sum(rec.diagnostics[name].psd_repairs for rec in records))
    all_errs = (np.concatenate([pooled[n] for n in config.filters])
                if config.filters else np.zeros(0))
    n_scored = min((pooled[n].size for n in config.filters), default=0)
    max_err = float(all_errs.max()) if all_errs.size else 1.0
    edges = np.linspace(0.0, max_err if max_err > 0 else 1.0, HISTOGRAM_BINS + 1)
    tail_threshold = float(np.quantile(all_errs, config.tail_quantile)) if all_errs.size else 0.0

    per_filter = {}
    for name in config.filters:
        errs = pooled[name]
        counts, _ = np.histogram(errs, bins=edges)
        per_filter[name] = {
            "mean_abs_error": float(errs.mean()) if errs.size else float("nan"),
            "median_abs_error": float(np.median(errs)) if errs.size else float("nan"),
            "max_abs_error": float(errs.max()) if errs.size else float("nan"),
            "tail_threshold": tail_threshold,
            "tail_frequency": float(np.mean(errs > tail_threshold)) if errs.size else 0.0,
            "histogram_counts": counts,
            "psd_repairs": repairs[name],
            "aborted_steps": aborted_counts[name],
        }
    return BenchmarkSummary(config=config, n_scored=int(n_scored),
                            bin_edges=edges, per_filter=per_filter)


def run_benchmark(
    config: ScenarioConfig, out_dir: Optional[Path] = None
) -> tuple[BenchmarkSummary, list[TrajectoryRecord]]:
    """Simulate, filter, aggregate, and (optionally) write output files.

    With n_runs == 1 this is one long stationary run; otherwise the n_obs
    cycles are split over independent runs with independent random streams,
    aggregated in run order.
    """
    scenario = build_scenario(config)
    per_run = config.n_obs // config.n_runs
    records = []
    for run_idx in range(config.n_runs):
        rng = trajectory_rng(config.seed, run_idx)
        record = simulate_sde(scenario, rng, n_obs=per_run)
        record = run_filters(scenario, record)
        records.append(record)
    summary = summarize(config, records)
    if out_dir is not None:
        write_outputs(summary, records, Path(out_dir))
    return summary, records


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(records: list[TrajectoryRecord], filters: tuple, path: Path) -> None:
    p = records[0].truth.shape[1]
    q = records[0].observations.shape[1]
    cols = ["run", "time"]
    cols += [f"x_true_{i}" for i in range(p)]
    cols += [f"y_{i}" for i in range(q)]
    for name in filters:
        cols += [f"est_{name}_{i}" for i in range(p)]
        cols += [f"err_{name}", f"aborted_{name}"]
    cols += ["diverged"]
    lines = [",".join(cols)]
    for run_idx, rec in enumerate(records):
        for k in range(rec.n_obs):
            diverged = rec.diverged_at is not None and k >= rec.diverged_at
            row = [str(run_idx), _fmt(float(rec.times[k]))]
            row += [_fmt(v) for v in rec.truth[k]]
            row += [_fmt(v) for v in rec.observations[k]]
            for name in filters:
                if name in rec.estimates:
                    row += [_fmt(v) for v in rec.estimates[name][k]]
                    row += [_fmt(float(rec.errors[name][k])),
                            str(int(rec.aborted[name][k]))]
                else:
                    row += ["nan"] * (p + 1) + ["0"]
            row.append(str(int(diverged)))
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_outputs(summary: BenchmarkSummary, records: list[TrajectoryRecord],
                  out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(records, summary.config.filters, out_dir / "trajectory.csv")
    (out_dir / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    edges = summary.bin_edges
    lines = ["bin_left,bin_right," + ",".join(f"count_{n}" for n in summary.config.filters)]
    for b in range(edges.size - 1):
        row = [_fmt(float(edges[b])), _fmt(float(edges[b + 1]))]
        for name in summary.config.filters:
            row.append(str(int(summary.per_filter[name]["histogram_counts"][b])))
        lines.append(",".join(row))
    (out_dir / "histogram.csv").write_text("\n".join(lines) + "\n")


# --- linear equivalence study ------------------------------------------------


def van_loan_discretization(a_mat: np.ndarray, q_mat: np.ndarray, dt: float):
    """Exact discrete transition and process noise of a linear SDE."""
    n = a_mat.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -a_mat
    block[:n, n:] = q_mat
    block[n:, n:] = a_mat.T
    emat = scipy.linalg.expm(block * dt)
    fmat = emat[n:, n:].T
    qd = fmat @ emat[:n, n:]
    return fmat, 0.5 * (qd + qd.T)


def kalman_reference_run(params: LinearParams, mu0, p0, observations, delta: float):
    """Textbook discrete Kalman recursion with exact discretization."""
    fmat, qd = van_loan_discretization(params.a_mat,
                                       params.sigma_mat @ params.sigma_mat.T, delta)
    j = params.j_mat
    b = params.b_mat
    means = []
    covs = []
    x = np.array(mu0, dtype=float)
    p = np.array(p0, dtype=float)
    for y in observations:
        xp = fmat @ x
        pp = fmat @ p @ fmat.T + qd
        innov = j @ pp @ j.T + b
        k_gain = np.linalg.solve(innov, j @ pp).T
        x = xp + k_gain @ (y - j @ xp)
        p = (np.eye(x.size) - k_gain @ j) @ pp
        p = 0.5 * (p + p.T)
        means.append(x.copy())
        covs.append(p.copy())
    return np.array(means), np.array(covs)


def kalman_check(
    seed: int = 20240817,
    n_steps: int = 200,
    p_dim: int = 3,
    q_dim: int = 2,
    delta: float = 0.01,
    n_substeps: int = 96,
) -> dict:
    """Max relative deviation of the intrinsic filter from the Kalman filter
    on a randomized linear configuration."""
    rng = np.random.default_rng(seed)
    a_mat = rng.standard_normal((p_dim, p_dim)) * 0.6
    sigma_mat = rng.standard_normal((p_dim, p_dim)) * 0.4
    j_mat = rng.standard_normal((q_dim, p_dim))
    b_mat = rng.standard_normal((q_dim, q_dim))
    b_mat = b_mat @ b_mat.T + 0.3 * np.eye(q_dim)
    params = LinearParams(a_mat, sigma_mat, j_mat, b_mat)
    model, obs = linear_build(params)

    mu0 = rng.standard_normal(p_dim)
    p0 = 0.5 * np.eye(p_dim)
    observations = rng.standard_normal((n_steps, q_dim)) * 2.0
    ref_means, ref_covs = kalman_reference_run(params, mu0, p0, observations, delta)

    cfg = FilterConfig(delta=delta, n_substeps=n_substeps)
    est = StateEstimate(mu0.copy(), SymTensor2(mu0, p0.copy()))
    worst_mean = 0.0
    worst_cov = 0.0
    for k in range(n_steps):
        event = ObservationEvent(time=(k + 1) * delta, y=observations[k])
        est = filter_step(model, obs, est, event, cfg)
        scale_m = max(float(np.max(np.abs(ref_means[k]))), 1e-12)
        scale_p = max(float(np.max(np.abs(ref_covs[k]))), 1e-12)
        worst_mean = max(worst_mean, float(np.max(np.abs(est.mu_hat - ref_means[k]))) / scale_m)
        worst_cov = max(worst_cov,
                        float(np.max(np.abs(est.sigma_hat.mat - ref_covs[k]))) / scale_p)
    return {
        "seed": seed,
        "n_steps": n_steps,
        "max_rel_mean_deviation": worst_mean,
        "max_rel_cov_deviation": worst_cov,
        "tolerance": 1e-8,
        "passed": bool(worst_mean <= 1e-8 and worst_cov <= 1e-8),
    }


# --- coordinate invariance study ---------------------------------------------


def _cubic_state_diffeo(coeff: float):
    """phi(x) = x + coeff x^3 with derivatives and a Newton inverse."""

    def phi(x: float) -> float:
        return x + coeff * x ** 3

    def dphi(x: float) -> float:
        return 1.0 + 3.0 * coeff * x ** 2

    def d2phi(x: float) -> float:
        return 6.0 * coeff * x

    def d3phi(x: float) -> float:
        return 6.0 * coeff

    def phi_inv(z: float) -> float:
        x = z / (1.0 + 3.0 * coeff * z * z) if abs(z) > 1.0 else z
        for _ in range(60):
            step = (phi(x) - z) / dphi(x)
            x -= step
            if abs(step) < 1e-15 * (1.0 + abs(x)):
                break
        return x

    return phi, dphi, d2phi, d3phi, phi_inv


def transformed_cubic_model(params: Cubic1DParams, coeff: float = 0.2):
    """The cubic benchmark model pushed through phi(x) = x + coeff x^3.

    Drift, noise, connector, and observation function transform by the chain
    rule; the observation space is left untouched.  Used to probe coordinate
    invariance of the filter.
    """
    phi, dphi, d2phi, d3phi, phi_inv = _cubic_state_diffeo(coeff)
    alpha0 = params.alpha
    p_crit = params.p_crit

    def base_xi(x: float) -> float:
        return -0.5 * x ** 3

    def base_dxi(x: float) -> float:
        return -1.5 * x ** 2

    def base_d2xi(x: float) -> float:
        return -3.0 * x

    def xi(xt):
        x = phi_inv(xt[0])
        return np.array([dphi(x) * base_xi(x)])

    def dxi(xt):
        x = phi_inv(xt[0])
        return np.array([[base_dxi(x) + d2phi(x) * base_xi(x) / dphi(x)]])

    def d2xi_contract(xt, chi):
        x = phi_inv(xt[0])
        fp, fpp, fppp = dphi(x), d2phi(x), d3phi(x)
        val = (base_d2xi(x)
               + (fppp * base_xi(x) + fpp * base_dxi(x)) / fp
               - fpp ** 2 * base_xi(x) / fp ** 2) / fp
        return np.array([val * chi[0, 0]])

    def alpha(xt):
        x = phi_inv(xt[0])
        return np.array([[dphi(x) ** 2 * alpha0]])

    def drift_b(xt):
        x = phi_inv(xt[0])
        return np.array([dphi(x) * base_xi(x) + 0.5 * alpha0 * d2phi(x)])

    def gamma(xt, u, v):
        x = phi_inv(xt[0])
        return np.array([-d2phi(x) / dphi(x) ** 2 * (u[0] * v[0])])

    def dgamma(xt, w, u, v):
        x = phi_inv(xt[0])
        fp, fpp, fppp = dphi(x), d2phi(x), d3phi(x)
        dcoef = -fppp / fp ** 3 + 2.0 * fpp ** 2 / fp ** 4
        return np.array([dcoef * w[0] * (u[0] * v[0])])

    conn = ConnectorField(dim=1, gamma=gamma, dgamma=dgamma)

    diffusion = DiffusionModel(
        dim=1, xi=xi, dxi=dxi, d2xi_contract=d2xi_contract, alpha=alpha,
        conn=conn, drift_b=drift_b,
    )

    def psi(xt):
        x = phi_inv(xt[0])
        return np.array([x / (p_crit + x * x)])

    def base_dpsi(x):
        return (p_crit - x * x) / (p_crit + x * x) ** 2

    def base_d2psi(x):
        return 2.0 * x * (x * x - 3.0 * p_crit) / (p_crit + x * x) ** 3

    def dpsi(xt):
        x = phi_inv(xt[0])
        return np.array([[base_dpsi(x) / dphi(x)]])

    def d2psi(xt):
        x = phi_inv(xt[0])
        fp, fpp = dphi(x), d2phi(x)
        return np.array([[[base_d2psi(x) / fp ** 2 - base_dpsi(x) * fpp / fp ** 3]]])

    observation = ObservationModel(
        dim_obs=1, psi=psi, dpsi=dpsi, d2psi=d2psi,
        beta=lambda y: np.array([[params.beta]]),
        conn_obs=flat_connector(1),
    )
    return diffusion, observation, (phi, dphi)


def _invariance_mismatch(
    params: Cubic1DParams,
    delta: float,
    sigma0: float,
    n_steps: int,
    n_substeps: int,
    seed: int,
    coeff: float = 0.2,
) -> float:
    """Mean |phi(estimate in base chart) - estimate in transformed chart|."""
    base_model, base_obs = cubic1d_build(params)
    tr_model, tr_obs, (phi, dphi) = transformed_cubic_model(params, coeff)

    rng = trajectory_rng(seed, 0)
    x = 0.3
    nsub = 50
    dt = delta / nsub
    ys = np.empty(n_steps)
    for k in range(n_steps):
        for _ in range(nsub):
            x = x - 0.5 * x ** 3 * dt + math.sqrt(params.alpha * dt) * rng.standard_normal()
        ys[k] = x / (params.p_crit + x * x) + math.sqrt(params.beta) * rng.standard_normal()

    cfg = FilterConfig(delta=delta, n_substeps=n_substeps)
    mu0 = 0.3
    est_a = StateEstimate(np.array([mu0]), SymTensor2(np.array([mu0]), np.array([[sigma0]])))
    mu0_t = phi(mu0)
    sig0_t = dphi(mu0) ** 2 * sigma0
    est_b = StateEstimate(np.array([mu0_t]), SymTensor2(np.array([mu0_t]), np.array([[sig0_t]])))
    total = 0.0
    for k in range(n_steps):
        event = ObservationEvent(time=(k + 1) * delta, y=np.array([ys[k]]))
        est_a = filter_step(base_model, base_obs, est_a, event, cfg)
        est_b = filter_step(tr_model, tr_obs, est_b, event, cfg)
        total += abs(phi(est_a.mu_hat[0]) - est_b.mu_hat[0])
    return total / n_steps


def invariance_check(
    seed: int = 7,
    n_steps: int = 1000,
    n_substeps: int = 64,
    alpha: float = 0.01,
    beta: float = 0.001,
    sigma0: float = 0.01,
    delta: float = 1.0,
    p_crit: float = 0.5,
) -> dict:
    """Coordinate-invariance scaling study on the cubic model.

    Runs the filter in the original chart and in a cubically distorted chart
    on the same observations, and measures how the chart mismatch of the two
    estimates shrinks when the noise scale gamma is halved (alpha, beta,
    sigma0 by 1/4 and delta by 1/2).  Fourth-order invariance predicts a
    factor near 16.  The default p_crit keeps the state away from the
    observation map's critical points, where the small-noise asymptotics
    the scaling law relies on would break down.
    """
    mismatch_full = _invariance_mismatch(
        Cubic1DParams(p_crit=p_crit, alpha=alpha, beta=beta),
        delta, sigma0, n_steps, n_substeps, seed,
    )
    mismatch_half = _invariance_mismatch(
        Cubic1DParams(p_crit=p_crit, alpha=alpha / 4.0, beta=beta / 4.0),
        delta / 2.0, sigma0 / 4.0, n_steps, n_substeps, seed,
    )
    ratio = mismatch_full / mismatch_half if mismatch_half > 0 else float("inf")
    return {
        "seed": seed,
        "n_steps": n_steps,
        "mismatch_full_noise": mismatch_full,
        "mismatch_half_noise": mismatch_half,
        "ratio": ratio,
        "expected_range": [8.0, 32.0],
        "passed": bool(8.0 <= ratio <= 32.0),
    }
