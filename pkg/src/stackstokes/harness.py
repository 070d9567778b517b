"""Experiment configuration, orchestration, and result emission.

One JSON config file describes one experiment run.  Re-running the same
config (same seed) in the default single-threaded mode reproduces every
emitted metric bit-identically: all randomness flows through counter-based
generators keyed by (seed, stream name).
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fieldio
from .errors import ConfigurationError, GeometryError
from .grid import (
    GridSpec,
    Region,
    SmoothCutoff,
    Trajectory,
    VelocityField,
    h1_norm,
    norm,
    project_div_free,
    stream_function_velocity,
    traj_norm,
)
from .saddle import (
    RobustParams,
    SaddleProblem,
    estimate_gamma_threshold,
    saddle_ascent_descent,
    saddle_from_coupled,
    verify_saddle,
)
from .leader import (
    PenaltyConfig,
    control_to_terminal,
    solve_null_control_cg,
    solve_null_control_nonlinear,
)
from .carleman import (
    CarlemanParams,
    WeightFamily,
    WeightSpec,
    alpha_ratio,
    check_laplacian_weight_bound,
    check_weight_domination,
    log_weight_eval,
    observability_ratio,
    weighted_norm_components,
)
from .stokes import Coupling, ForcingAssembly, SolverOptions, solve_forward

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "parse_config",
    "config_from_dict",
    "run_experiment",
    "rng_stream",
    "default_config_dict",
    "EXPERIMENTS",
]

OUTPUT_ROOT_ENV = "STACKSTOKES_OUT"

EXPERIMENTS = (
    "saddle",
    "nullcontrol",
    "nullcontrol-nonlinear",
    "carleman-check",
    "gamma0-scan",
    "convergence",
)


def rng_stream(seed: int, stream: str) -> np.random.Generator:
    """Counter-based generator for a named stream; streams never overlap."""
    key = zlib.crc32(stream.encode())
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    grid: GridSpec
    omega: Region
    follower_set: Region
    obs_set: Region
    inner_set: Region
    cutoff_taper_cells: float
    robust: RobustParams
    carleman: CarlemanParams
    penalty: PenaltyConfig
    solver: SolverOptions
    data: dict
    options: dict
    raw: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(
                f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}"
            )
        if self.omega.intersects(self.follower_set):
            raise GeometryError(
                "geometry violates the disjointness hypothesis 'O n omega = empty': "
                f"omega={self.omega} intersects O={self.follower_set}"
            )
        if not self.omega.intersects(self.obs_set):
            raise GeometryError(
                "geometry violates the overlap hypothesis 'omega n O_d != empty': "
                f"omega={self.omega} misses O_d={self.obs_set}"
            )
        cap = self.omega.intersection(self.obs_set)
        if cap is None or not cap.contains(self.inner_set):
            raise GeometryError(
                "geometry violates the containment hypothesis "
                "'omega0 inside omega n O_d': "
                f"omega0={self.inner_set} not inside {cap}"
            )

    def cutoff(self) -> SmoothCutoff:
        return SmoothCutoff.for_grid(self.follower_set, self.grid, self.cutoff_taper_cells)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()

    # ---------------- deterministic data synthesis ----------------

    def _closed_noise(self, rng, amp: float) -> VelocityField:
        g = self.grid
        u = rng.standard_normal((g.nx + 1, g.ny))
        v = rng.standard_normal((g.nx, g.ny + 1))
        return VelocityField(g, u, v).apply_noslip() * amp

    def initial_state(self) -> VelocityField:
        g = self.grid
        d = self.data
        kind = d.get("y0_kind", "eddy")
        amp = float(d.get("y0_amplitude", 0.0))
        if kind == "zero" or amp == 0.0:
            y0 = VelocityField.zeros(g)
        elif kind == "eddy":
            xn = np.arange(g.nx + 1) * g.hx
            yn = np.arange(g.ny + 1) * g.hy
            psi = amp * np.sin(np.pi * xn[:, None] / g.Lx) * np.sin(np.pi * yn[None, :] / g.Ly)
            y0 = stream_function_velocity(g, psi)
        elif kind == "eddy2":
            xn = np.arange(g.nx + 1) * g.hx
            yn = np.arange(g.ny + 1) * g.hy
            psi = amp * (np.sin(np.pi * xn[:, None] / g.Lx) ** 2
                         * np.sin(np.pi * yn[None, :] / g.Ly) ** 2)
            y0 = stream_function_velocity(g, psi)
        elif kind == "random":
            y0 = project_div_free(self._closed_noise(rng_stream(self.seed, "y0"), amp))
        else:
            raise ConfigurationError(f"unknown y0_kind {kind!r}")
        target = d.get("y0_v_norm")
        if target is not None:
            cur = h1_norm(y0)
            if cur == 0.0:
                raise ConfigurationError("cannot rescale a zero initial state")
            y0 = y0 * (float(target) / cur)
        return y0

    def target_trajectory(self) -> Trajectory | None:
        amp = float(self.data.get("yd_amplitude", 0.0))
        if amp == 0.0:
            return None
        rng = rng_stream(self.seed, "yd")
        g = self.grid
        return Trajectory(g, [self._closed_noise(rng, amp) for _ in range(g.nt + 1)])

    def leader_trajectory(self) -> Trajectory | None:
        amp = float(self.data.get("h_amplitude", 0.0))
        if amp == 0.0:
            return None
        rng = rng_stream(self.seed, "h")
        g = self.grid
        zero = VelocityField.zeros(g)
        return Trajectory(
            g, [zero.copy()] + [self._closed_noise(rng, amp) for _ in range(g.nt)]
        )

    def problem(self) -> SaddleProblem:
        return SaddleProblem(
            self.grid,
            self.omega,
            self.cutoff(),
            self.obs_set,
            self.initial_state(),
            self.target_trajectory(),
            self.robust,
            self.solver,
        )


def _scaled_regions(scale: float, wide_omega: bool = False) -> dict:
    om = [0.30, 0.95] if wide_omega else [0.35, 0.75]
    def box(a, b):
        return [a * scale, b * scale, a * scale, b * scale]
    return {
        "omega": box(*om),
        "O": box(0.05, 0.25),
        "Od": box(0.45, 0.95),
        "omega0": box(0.46, 0.74),
    }


def default_config_dict(experiment: str = "saddle") -> dict:
    """Template config per experiment; the defaults match the shipped ones."""
    cfg = {
        "experiment": experiment,
        "seed": 20240,
        "grid": {"nx": 16, "ny": 16, "Lx": 1.0, "Ly": 1.0, "nt": 32, "T": 1.0},
        "regions": _scaled_regions(1.0),
        "cutoff_taper_cells": 4.0,
        "robust": {"ell": 10.0, "gamma": 10.0, "mu": 1.0},
        "carleman": {"lam": 2.0, "s": 3.0, "a0": 2.0, "m0": 3.5},
        "penalty": {"epsilon": 1e-4, "cg_tol": 1e-8, "cg_max": 400,
                    "epsilon_schedule": []},
        "solver": {"convection_on": False, "picard_tol": 1e-11,
                   "picard_max": 200, "relax": 1.0},
        "data": {"y0_kind": "eddy", "y0_amplitude": 0.1,
                 "yd_amplitude": 0.05, "h_amplitude": 0.1},
        "options": {},
    }
    if experiment == "nullcontrol":
        # larger slow domain so the pinned epsilon decade hits the saturated
        # penalized-steering regime (bounded control norms, sqrt-ish slope)
        cfg["grid"] = {"nx": 16, "ny": 16, "Lx": 6.0, "Ly": 6.0, "nt": 32, "T": 2.0}
        cfg["regions"] = _scaled_regions(6.0, wide_omega=True)
        cfg["penalty"]["epsilon_schedule"] = [1e-2, 1e-3, 1e-4, 1e-5]
        cfg["penalty"]["epsilon"] = 1e-5
        cfg["penalty"]["cg_max"] = 800
        cfg["data"] = {"y0_kind": "eddy", "y0_amplitude": 0.05,
                       "yd_amplitude": 0.0, "h_amplitude": 0.0}
    elif experiment == "nullcontrol-nonlinear":
        cfg["grid"] = {"nx": 16, "ny": 16, "Lx": 6.0, "Ly": 6.0, "nt": 32, "T": 2.0}
        cfg["regions"] = _scaled_regions(6.0, wide_omega=True)
        cfg["penalty"]["epsilon"] = 1e-4
        cfg["penalty"]["cg_max"] = 800
        cfg["solver"]["convection_on"] = True
        cfg["data"] = {"y0_kind": "eddy", "y0_amplitude": 0.05,
                       "y0_v_norm": 1e-3, "yd_amplitude": 0.0, "h_amplitude": 0.0}
    elif experiment == "carleman-check":
        # long slow horizon keeps the singular weights inside float range at
        # the configured (s, lam)
        cfg["grid"] = {"nx": 16, "ny": 16, "Lx": 16.0, "Ly": 16.0, "nt": 64, "T": 24.0}
        cfg["regions"] = _scaled_regions(16.0)
        cfg["data"] = {"y0_kind": "zero", "y0_amplitude": 0.0,
                       "yd_amplitude": 0.0, "h_amplitude": 0.0}
        cfg["options"] = {
            "domination_lams": [1.0, 2.0, 4.0],
            "domination_epsilon": 1.0,
            "n_laplacian_samples": 20,
            "laplacian_s": 5.0,
            "n_observability_samples": 25,
        }
    elif experiment == "gamma0-scan":
        # slower domain so the concavity threshold sits inside the gamma grid
        cfg["grid"] = {"nx": 16, "ny": 16, "Lx": 4.0, "Ly": 4.0, "nt": 32, "T": 2.0}
        cfg["regions"] = _scaled_regions(4.0)
        cfg["data"] = {"y0_kind": "eddy", "y0_amplitude": 0.05,
                       "yd_amplitude": 0.05, "h_amplitude": 0.1}
        cfg["options"] = {"gamma_grid": list(np.geomspace(0.05, 50.0, 13)),
                          "max_iter": 400}
    elif experiment == "convergence":
        cfg["data"] = {"y0_kind": "zero", "y0_amplitude": 0.0,
                       "yd_amplitude": 0.0, "h_amplitude": 0.0}
        cfg["options"] = {"sizes": [16, 32, 64], "horizon": 0.25, "base_nt": 32}
    return cfg


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigurationError(f"missing config field '{path}.{key}'" if path else
                                 f"missing config field '{key}'")
    return d[key]


def config_from_dict(raw: dict) -> ExperimentConfig:
    gd = _require(raw, "grid", "")
    grid = GridSpec(
        nx=int(_require(gd, "nx", "grid")),
        ny=int(_require(gd, "ny", "grid")),
        Lx=float(gd.get("Lx", 1.0)),
        Ly=float(gd.get("Ly", 1.0)),
        nt=int(_require(gd, "nt", "grid")),
        T=float(_require(gd, "T", "grid")),
    )
    rd = _require(raw, "regions", "")

    def region(key):
        vals = _require(rd, key, "regions")
        if len(vals) != 4:
            raise ConfigurationError(f"regions.{key} must be [x0, x1, y0, y1]")
        return Region(*[float(v) for v in vals])

    rb = _require(raw, "robust", "")
    cl = raw.get("carleman", {"lam": 2.0, "s": 3.0, "a0": 2.0, "m0": 3.5})
    pen = raw.get("penalty", {})
    sv = raw.get("solver", {})
    return ExperimentConfig(
        experiment=str(_require(raw, "experiment", "")),
        seed=int(_require(raw, "seed", "")),
        grid=grid,
        omega=region("omega"),
        follower_set=region("O"),
        obs_set=region("Od"),
        inner_set=region("omega0"),
        cutoff_taper_cells=float(raw.get("cutoff_taper_cells", 4.0)),
        robust=RobustParams(
            ell=float(_require(rb, "ell", "robust")),
            gamma=float(_require(rb, "gamma", "robust")),
            mu=float(rb.get("mu", 1.0)),
        ),
        carleman=CarlemanParams(
            lam=float(cl.get("lam", 2.0)),
            s=float(cl.get("s", 3.0)),
            a0=float(cl.get("a0", 2.0)),
            m0=float(cl.get("m0", 3.5)),
            eta_norm=float(cl.get("eta_norm", 1.0)),
        ),
        penalty=PenaltyConfig(
            epsilon=float(pen.get("epsilon", 1e-4)),
            cg_tol=float(pen.get("cg_tol", 1e-8)),
            cg_max=int(pen.get("cg_max", 400)),
            epsilon_schedule=tuple(pen.get("epsilon_schedule", ())),
        ),
        solver=SolverOptions(
            convection_on=bool(sv.get("convection_on", False)),
            picard_tol=float(sv.get("picard_tol", 1e-11)),
            picard_max=int(sv.get("picard_max", 200)),
            relax=float(sv.get("relax", 1.0)),
            small_data_delta=sv.get("small_data_delta"),
        ),
        data=dict(raw.get("data", {})),
        options=dict(raw.get("options", {})),
        raw=raw,
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    return config_from_dict(raw)


@dataclass
class RunRecord:
    config_hash: str
    experiment: str
    started: str
    finished: str
    metrics: dict
    artifacts: list
    run_dir: str
    incomplete: bool = False


def _write_csv(path: Path, header, rows, config_hash: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")


# ---------------------------------------------------------------------------
# experiment pipelines
# ---------------------------------------------------------------------------

def _exp_saddle(cfg: ExperimentConfig, outdir: Path, h: str):
    prob = cfg.problem()
    lead = cfg.leader_trajectory()
    res = saddle_from_coupled(prob, lead)
    res2 = saddle_ascent_descent(prob, lead, rng=rng_stream(cfg.seed, "power-iteration"))
    den = traj_norm(res.psi_bar) + traj_norm(res.v_bar)
    agree = (
        (traj_norm(res.psi_bar - res2.psi_bar) + traj_norm(res.v_bar - res2.v_bar)) / den
        if den > 0 else 0.0
    )
    n_probes = int(cfg.options.get("n_probes", 100))
    report = verify_saddle(prob, res, lead, n_probes=n_probes,
                           rng=rng_stream(cfg.seed, "saddle-probes"))
    _write_csv(
        outdir / "probe_margins.csv",
        ["probe", "magnitude", "margin_psi", "margin_v", "ok"],
        [(i, r[1], r[2], r[3], int(r[4])) for i, r in enumerate(report.rows)],
        h,
    )
    arts = [str(outdir / "probe_margins.csv")]
    arts += [str(p) for p in fieldio.write_trajectory(outdir / "fields", "psi_bar", res.psi_bar)]
    arts += [str(p) for p in fieldio.write_trajectory(outdir / "fields", "v_bar", res.v_bar)]
    metrics = {
        "residual_psi": res.residual_psi,
        "residual_v": res.residual_v,
        "coupled_iterations": res.iterations,
        "coupled_converged": res.converged,
        "cost": res.cost,
        "ascent_descent_iterations": res2.iterations,
        "method_agreement_rel": agree,
        "probe_violations": report.violations,
        "probe_worst_psi_margin": report.worst_psi_margin,
        "probe_worst_v_margin": report.worst_v_margin,
        "probe_tol": report.tol,
    }
    return metrics, arts


def _exp_nullcontrol(cfg: ExperimentConfig, outdir: Path, h: str):
    prob = cfg.problem()
    uncontrolled = norm(control_to_terminal(prob, None))
    res = solve_null_control_cg(prob, cfg.penalty)
    rows = [
        (r.epsilon, r.terminal_norm, r.control_norm, r.cg_iters, r.objective)
        for r in res.history
    ]
    _write_csv(
        outdir / "epsilon_sweep.csv",
        ["epsilon", "terminal_norm", "control_norm", "cg_iters", "objective"],
        rows, h,
    )
    _write_csv(
        outdir / "objective_curve.csv",
        ["iteration", "objective"],
        list(enumerate(res.objective_curve)), h,
    )
    arts = [str(outdir / "epsilon_sweep.csv"), str(outdir / "objective_curve.csv")]
    arts += [str(p) for p in fieldio.write_trajectory(outdir / "fields", "h", res.h)]
    metrics = {
        "epsilon": res.epsilon,
        "terminal_norm": res.terminal_norm,
        "control_norm": res.control_norm,
        "cg_iters": res.cg_iters,
        "objective": res.objective,
        "uncontrolled_terminal_norm": uncontrolled,
        "terminal_reduction": (
            res.terminal_norm / uncontrolled if uncontrolled > 0 else 0.0
        ),
        "reduction_per_epsilon": {
            repr(r.epsilon): (r.terminal_norm / uncontrolled if uncontrolled > 0 else 0.0)
            for r in res.history
        },
    }
    if len(rows) >= 2:
        eps = np.array([r[0] for r in rows])
        tn = np.array([r[1] for r in rows])
        cn = np.array([r[2] for r in rows])
        metrics["terminal_strictly_decreasing"] = bool(np.all(np.diff(tn) < 0))
        metrics["loglog_slope"] = float(np.polyfit(np.log(eps), np.log(tn), 1)[0])
        metrics["max_control_growth_ratio"] = float(np.max(cn[1:] / cn[:-1]))
    sol_coupled = saddle_from_coupled(prob, res.h)
    enorm = weighted_norm_components(
        sol_coupled.y, sol_coupled.z, res.h, cfg.carleman, omega=cfg.omega
    )
    metrics["weighted_norm_log10"] = enorm
    metrics["weighted_norm_finite"] = bool(
        all(not math.isnan(v) for v in enorm.values())
    )
    return metrics, arts


def _exp_nullcontrol_nonlinear(cfg: ExperimentConfig, outdir: Path, h: str):
    prob = cfg.problem()

    def admissibility(f1, f2):
        return weighted_norm_components(
            Trajectory.zeros(cfg.grid), None, None, cfg.carleman, f1=f1, f2=f2
        )

    res = solve_null_control_nonlinear(
        prob, cfg.penalty,
        outer_tol=float(cfg.options.get("outer_tol", 1e-6)),
        outer_max=int(cfg.options.get("outer_max", 25)),
        admissibility=admissibility,
    )
    lin_prob = SaddleProblem(
        cfg.grid, cfg.omega, cfg.cutoff(), cfg.obs_set,
        prob.y0, prob.yd, cfg.robust,
        SolverOptions(
            convection_on=False,
            picard_tol=cfg.solver.picard_tol,
            picard_max=cfg.solver.picard_max,
        ),
    )
    lin = solve_null_control_cg(lin_prob, cfg.penalty)
    arts = [str(p) for p in fieldio.write_trajectory(outdir / "fields", "h", res.h)]
    metrics = {
        "outer_iterations": res.outer_iterations,
        "terminal_norm_nonlinear": res.terminal_norm,
        "terminal_norm_linear": lin.terminal_norm,
        "nonlinear_over_linear": (
            res.terminal_norm / lin.terminal_norm if lin.terminal_norm > 0 else 0.0
        ),
        "control_norm": res.control_norm,
        "cg_iters": res.cg_iters,
        "admissibility_log10": res.admissibility,
    }
    return metrics, arts


def _exp_carleman(cfg: ExperimentConfig, outdir: Path, h: str):
    p = cfg.carleman
    g = cfg.grid
    T = g.T
    opts = cfg.options
    metrics = {
        "alpha_ratio_large_lam": alpha_ratio(50.0, p.eta_norm),
        "alpha_ratio_small_lam": alpha_ratio(1e-6, p.eta_norm),
    }
    # weight table for inspection
    nrow = 64
    guard = T / (2 * nrow)
    ts = np.linspace(guard, T - guard, nrow)
    rows = []
    for t in ts:
        rows.append((
            float(t),
            log_weight_eval(WeightSpec(WeightFamily.ALPHA_STAR, p), T, float(t)),
            log_weight_eval(WeightSpec(WeightFamily.ALPHA_HAT, p), T, float(t)),
            log_weight_eval(WeightSpec(WeightFamily.XI_STAR, p), T, float(t)),
            log_weight_eval(WeightSpec(WeightFamily.XI_HAT, p), T, float(t)),
            log_weight_eval(WeightSpec(WeightFamily.BETA_STAR, p), T, float(t)),
            log_weight_eval(WeightSpec(WeightFamily.TAU_HAT, p), T, float(t)),
        ))
    _write_csv(
        outdir / "weight_table.csv",
        ["t", "log_alpha_star", "log_alpha_hat", "log_xi_star", "log_xi_hat",
         "log_beta_star", "log_tau_hat"],
        rows, h,
    )
    # domination inequality across lam, plus the full ratio curve at the
    # configured lam
    eps = float(opts.get("domination_epsilon", 1.0))
    dom = []
    for lam in opts.get("domination_lams", (1.0, 2.0, 4.0)):
        pp = CarlemanParams(lam=float(lam), s=p.s, a0=p.a0, m0=p.m0, eta_norm=p.eta_norm)
        rep = check_weight_domination(pp, T, 0.0, 0.0, eps)
        dom.append((float(lam), rep.max_log_ratio))
        if lam == p.lam:
            _write_csv(
                outdir / "domination_curve.csv",
                ["t", "log_ratio"],
                list(zip(rep.t_values.tolist(), rep.log_ratios.tolist())), h,
            )
    _write_csv(outdir / "domination.csv", ["lam", "max_log_ratio"], dom, h)
    metrics["domination_log_ratios"] = {str(l): r for l, r in dom}
    metrics["domination_nonincreasing"] = bool(
        all(dom[i + 1][1] <= dom[i][1] for i in range(len(dom) - 1))
    )
    # local/global Laplacian bound stability under t-grid doubling
    rng = rng_stream(cfg.seed, "laplacian-samples")
    n_u = int(opts.get("n_laplacian_samples", 20))
    us = [
        project_div_free(
            VelocityField(g, rng.standard_normal((g.nx + 1, g.ny)),
                          rng.standard_normal((g.nx, g.ny + 1)))
        )
        for _ in range(n_u)
    ]
    s5 = CarlemanParams(lam=p.lam, s=float(opts.get("laplacian_s", 5.0)),
                        a0=p.a0, m0=p.m0, eta_norm=p.eta_norm)
    b1 = check_laplacian_weight_bound(s5, T, 0.0, 0.0, us, cfg.omega, n_time=128)
    b2 = check_laplacian_weight_bound(s5, T, 0.0, 0.0, us, cfg.omega, n_time=256)
    metrics["laplacian_bound_max"] = b1.max_ratio
    metrics["laplacian_bound_max_fine"] = b2.max_ratio
    metrics["laplacian_bound_stability"] = (
        b2.max_ratio / b1.max_ratio if b1.max_ratio > 0 else 1.0
    )
    # observability constant stability under sample doubling
    coup = Coupling.build(g, cfg.cutoff(), cfg.obs_set,
                          cfg.robust.ell, cfg.robust.gamma, cfg.robust.mu)
    n_obs = int(opts.get("n_observability_samples", 25))
    rep1 = observability_ratio(p, coup, cfg.omega, n_obs,
                               rng=rng_stream(cfg.seed, "observability-a"), opts=cfg.solver)
    rep2 = observability_ratio(p, coup, cfg.omega, 2 * n_obs,
                               rng=rng_stream(cfg.seed, "observability-b"), opts=cfg.solver)
    _write_csv(
        outdir / "observability_samples.csv",
        ["sample", "ratio"],
        list(enumerate(rep1.ratios + rep2.ratios)), h,
    )
    metrics["observability_max"] = rep1.max_ratio
    metrics["observability_max_doubled"] = rep2.max_ratio
    metrics["observability_stability"] = (
        rep2.max_ratio / rep1.max_ratio if rep1.max_ratio > 0 else 1.0
    )
    arts = [str(outdir / "weight_table.csv"), str(outdir / "domination.csv"),
            str(outdir / "domination_curve.csv"),
            str(outdir / "observability_samples.csv")]
    return metrics, arts


def _exp_gamma0(cfg: ExperimentConfig, outdir: Path, h: str):
    prob = cfg.problem()
    lead = cfg.leader_trajectory()
    grid_opt = cfg.options.get("gamma_grid")
    if grid_opt is None:
        grid_opt = np.geomspace(0.05, 50.0, 13).tolist()
    res = estimate_gamma_threshold(
        prob, lead, grid_opt,
        max_iter=int(cfg.options.get("max_iter", 400)),
        rng=rng_stream(cfg.seed, "power-iteration"),
    )
    _write_csv(
        outdir / "gamma_scan.csv",
        ["gamma", "converged"],
        [(gv, int(ok)) for gv, ok in res.outcomes],
        h,
    )
    metrics = {
        "bracket_lower": res.lower,
        "bracket_upper": res.upper,
        "one_sided": res.one_sided,
        "n_probed": len(res.outcomes),
    }
    return metrics, [str(outdir / "gamma_scan.csv")]


def _mms_fields(amp=0.1, pamp=0.05):
    """Manufactured Stokes solution from the stream function amp*e^-t sin^3 sin^3.

    The cubed sines make the forcing's normal components vanish at the walls,
    so the sampled forcing lies in the discrete no-penetration space and the
    projected scheme sees no spurious boundary flux.
    """
    pi = np.pi

    def c(t):
        return 3.0 * amp * pi * np.exp(-t)

    s = lambda x: np.sin(pi * x)
    co = lambda x: np.cos(pi * x)

    u = lambda x, y, t: c(t) * s(x) ** 3 * s(y) ** 2 * co(y)
    v = lambda x, y, t: -c(t) * s(x) ** 2 * co(x) * s(y) ** 3

    def lap_u(x, y, t):
        return c(t) * pi**2 * (
            3.0 * s(x) * (2 * co(x) ** 2 - s(x) ** 2) * s(y) ** 2 * co(y)
            + s(x) ** 3 * (2 * co(y) ** 3 - 7 * s(y) ** 2 * co(y))
        )

    def lap_v(x, y, t):
        return -c(t) * pi**2 * (
            3.0 * s(x) ** 2 * co(x) * s(y) * (2 * co(y) ** 2 - s(y) ** 2)
            + (2 * co(x) ** 3 - 7 * s(x) ** 2 * co(x)) * s(y) ** 3
        )

    px = lambda x, y, t: -pamp * np.exp(-t) * pi * s(x) * co(y)
    py = lambda x, y, t: -pamp * np.exp(-t) * pi * co(x) * s(y)
    fu = lambda x, y, t: -u(x, y, t) - lap_u(x, y, t) + px(x, y, t)
    fv = lambda x, y, t: -v(x, y, t) - lap_v(x, y, t) + py(x, y, t)
    return u, v, fu, fv


def _exp_convergence(cfg: ExperimentConfig, outdir: Path, h: str):
    """Manufactured-solution order study on the unit square."""
    sizes = [int(n) for n in cfg.options.get("sizes", (16, 32, 64))]
    T = float(cfg.options.get("horizon", 0.25))
    base_nt = int(cfg.options.get("base_nt", 32))
    u, v, fu, fv = _mms_fields()
    rows = []
    errs = []
    for nx in sizes:
        nt = base_nt * (nx // sizes[0]) ** 2
        g = GridSpec(nx=nx, ny=nx, nt=nt, T=T)
        y0 = VelocityField.from_functions(
            g, lambda x, y: u(x, y, 0.0), lambda x, y: v(x, y, 0.0)
        )
        forcing = ForcingAssembly(g, extra_source=Trajectory.from_function(g, fu, fv))
        traj = solve_forward(y0, forcing, SolverOptions())
        ex = VelocityField.from_functions(
            g, lambda x, y: u(x, y, T), lambda x, y: v(x, y, T)
        )
        e = norm(traj[g.nt] - ex)
        errs.append(e)
        rows.append((nx, nt, e))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    _write_csv(outdir / "convergence.csv", ["nx", "nt", "error"], rows, h)
    metrics = {
        "errors": errs,
        "ratios": ratios,
        "min_ratio": min(ratios),
        "max_ratio": max(ratios),
    }
    return metrics, [str(outdir / "convergence.csv")]


_PIPELINES = {
    "saddle": _exp_saddle,
    "nullcontrol": _exp_nullcontrol,
    "nullcontrol-nonlinear": _exp_nullcontrol_nonlinear,
    "carleman-check": _exp_carleman,
    "gamma0-scan": _exp_gamma0,
    "convergence": _exp_convergence,
}


def run_experiment(cfg: ExperimentConfig, out_root=None) -> RunRecord:
    """Dispatch the configured experiment and persist manifest + artifacts."""
    if out_root is None:
        out_root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    h = cfg.config_hash()
    outdir = Path(out_root) / f"{cfg.experiment}-{h[:12]}"
    outdir.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    incomplete = True
    metrics: dict = {}
    arts: list = []
    try:
        metrics, arts = _PIPELINES[cfg.experiment](cfg, outdir, h)
        incomplete = False
    finally:
        finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
        record = RunRecord(
            config_hash=h,
            experiment=cfg.experiment,
            started=started,
            finished=finished,
            metrics=metrics,
            artifacts=sorted(arts),
            run_dir=str(outdir),
            incomplete=incomplete,
        )
        manifest = {
            "config": cfg.raw,
            "config_hash": h,
            "experiment": cfg.experiment,
            "started": started,
            "finished": finished,
            "metrics": metrics,
            "artifacts": record.artifacts,
            "incomplete": incomplete,
        }
        with open(outdir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=repr)
    return record
