"""Primal-dual solver loops and numerical certificates.

apd_run is the exact-gradient loop on a problem exposing closed-form
J_R, J_C, and grad L (the quadratic testbed): one (or more) primal descent
steps at the schedule's eta(lambda_k), then projected dual ascent on
g(theta_{k+1}).  papd_run is the sampled variant for CMDPs: Monte-Carlo
estimates, a score-function or clipped-surrogate primal step at the
practical eta(lambda_k), and a PID dual update on the estimated cost.

verify_bounds turns an exact run into a BoundCertificate by recomputing the
per-iteration primal error

    eps_k = L(theta_{k+1}, lambda_k) - d(lambda_k)

and checking, with measured slack per iteration:
  (a)  the dual-gap bound at every prefix K',
  (b)  the two per-step error bounds at the run's eta_k,
  (c)  the same bounds at their optimizing eta (and that the optimizer
       beats 0.5x and 2x perturbations),
  (d)  the average-return rate bound at every prefix.
Iterations where a bound's radicand is negative are flagged and excluded
rather than failed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cmdp import Cmdp, SamplingConfig, collect_batch, discounted_value
from .duals import PidGains, PidState, dual_ascent_step, pid_dual_step, project_nonneg
from .lagrangian import (
    AdvantageBatch,
    ConstraintSpec,
    Multiplier,
    PpolConfig,
    advantage_batch,
    ppol_surrogate_grad,
    reinforce_grad_from_batch,
)
from .policy import PolicyParams, TabularSoftmax
from .quadprog import QuadProgram, dual_values_batch, quad_kkt_solve
from .schedules import LrSchedule, SmoothnessConstants

FRESH_BATCH_STREAM = 999983  # substream tag for fresh dual-batch estimation
SHUFFLE_STREAM = 999979  # substream tag for minibatch shuffling


@dataclass(frozen=True)
class SolverConfig:
    iterations: int
    schedule: LrSchedule
    dual_variant: str = "ascent"
    zeta: float | None = None
    gains: PidGains | None = None
    lambda0: np.ndarray | None = None
    theta0: object | None = None  # vector (apd) or PolicyParams (papd)
    inner_steps: int = 1
    sampling: SamplingConfig | None = None
    seed: int = 0
    algorithm: str = "reinforce"
    ppol: PpolConfig = field(default_factory=PpolConfig)
    fresh_dual_batch: bool = False
    values_fn: object | None = None  # optional exact value provider for GAE

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.dual_variant not in ("ascent", "pid"):
            raise ValueError(f"unknown dual variant {self.dual_variant!r}")
        if self.dual_variant == "ascent" and (self.zeta is None or self.zeta <= 0):
            raise ValueError("ascent dual update needs zeta > 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.algorithm not in ("reinforce", "ppol"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class RunRecord:
    """Everything a certificate needs: the full iterate sequences plus the
    per-iteration values consumed by the dual update.

    Row k holds (theta_k, lambda_k, eta_k) and the (J_R, J_C) fed to the
    k-th dual step; thetas and lambdas carry one extra terminal row.
    """

    thetas: np.ndarray
    lambdas: np.ndarray
    etas: np.ndarray
    returns: np.ndarray
    costs: np.ndarray
    meta: dict

    def __post_init__(self) -> None:
        k = self.etas.size
        if not (
            self.thetas.shape[0] == k + 1
            and self.lambdas.shape[0] == k + 1
            and self.returns.shape == (k,)
            and self.costs.shape[0] == k
        ):
            raise ValueError("inconsistent record shapes")
        if (self.lambdas < 0.0).any():
            raise ValueError("multiplier rows must be nonnegative")

    @property
    def iterations(self) -> int:
        return self.etas.size

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def final_lambda(self) -> np.ndarray:
        return self.lambdas[-1]


def _resolve_schedule(cfg: SolverConfig, problem: QuadProgram) -> LrSchedule:
    sched = cfg.schedule
    if not sched.variant.endswith("-exact"):
        return sched
    exact = problem.smoothness()
    if sched.constants is None:
        return replace(sched, constants=exact)
    given = sched.constants
    if (
        abs(given.l_r - exact.l_r) > 1e-9
        or abs(given.mu - exact.mu) > 1e-9
        or given.l_c.shape != exact.l_c.shape
        or np.abs(given.l_c - exact.l_c).max() > 1e-9
    ):
        raise ValueError("schedule constants disagree with the problem's")
    return sched


def apd_run(problem: QuadProgram, cfg: SolverConfig) -> RunRecord:
    """Exact primal descent / projected dual ascent on an analytic program."""
    if cfg.dual_variant == "ascent" and cfg.zeta is None:
        raise ValueError("apd_run with ascent dual needs zeta")
    sched = _resolve_schedule(cfg, problem)
    spec = problem.constraint_spec()
    m = spec.m
    k_iter = cfg.iterations

    theta = (
        np.zeros(problem.dim)
        if cfg.theta0 is None
        else np.asarray(cfg.theta0, dtype=float).copy()
    )
    lam = (
        np.zeros(m)
        if cfg.lambda0 is None
        else np.atleast_1d(np.asarray(cfg.lambda0, dtype=float)).copy()
    )
    pid_state = PidState.zeros(m)

    thetas = np.empty((k_iter + 1, theta.size))
    lambdas = np.empty((k_iter + 1, m))
    etas = np.empty(k_iter)
    returns = np.empty(k_iter)
    costs = np.empty((k_iter, m))

    start = time.perf_counter()
    for k in range(k_iter):
        thetas[k] = theta
        lambdas[k] = lam
        lm = Multiplier(lam)
        eta = sched.rate(lm)
        etas[k] = eta
        for _ in range(cfg.inner_steps):
            theta = theta - eta * problem.grad_lagrangian(theta, lm)
        j_r = problem.j_r(theta)
        j_c = problem.j_c(theta)
        returns[k] = j_r
        costs[k] = j_c
        if cfg.dual_variant == "ascent":
            lam = project_nonneg(lam + cfg.zeta * (j_c - spec.limits))
        else:
            lm_next, pid_state = pid_dual_step(
                pid_state, cfg.gains or PidGains(), j_c, spec
            )
            lam = lm_next.values
    thetas[k_iter] = theta
    lambdas[k_iter] = lam

    d_vals, _, _ = dual_values_batch(problem, lambdas[:, 0])
    best = int(np.argmax(d_vals))
    meta = {
        "kind": "apd",
        "dual": cfg.dual_variant,
        "zeta": cfg.zeta,
        "inner_steps": cfg.inner_steps,
        "seed": cfg.seed,
        "cost_limit": spec.limits.tolist(),
        "schedule_variant": sched.variant,
        "lambda_best": lambdas[best].tolist(),
        "dual_best": float(d_vals[best]),
        "wall_clock_s": time.perf_counter() - start,
    }
    return RunRecord(thetas, lambdas, etas, returns, costs, meta)


def _lstsq_values(cmdp: Cmdp, trajs):
    """Linear least-squares value fit against discounted returns-to-go.

    Features are one-hot state indicators for tabular models and [s, 1]
    otherwise; one fit per batch, shared by reward and each cost signal.
    """
    gamma = cmdp.gamma

    def features(state):
        if cmdp.is_tabular:
            f = np.zeros(cmdp.n_states)
            f[int(state)] = 1.0
            return f
        s = np.asarray(state, dtype=float)
        return np.concatenate([s, [1.0]])

    rows = []
    targets = []
    for traj in trajs:
        t = len(traj)
        togo_r = np.zeros(t)
        togo_c = np.zeros((t, traj.costs.shape[1]))
        acc_r = 0.0
        acc_c = np.zeros(traj.costs.shape[1])
        for i in range(t - 1, -1, -1):
            acc_r = traj.rewards[i] + gamma * acc_r
            acc_c = traj.costs[i] + gamma * acc_c
            togo_r[i] = acc_r
            togo_c[i] = acc_c
        for i in range(t):
            rows.append(features(traj.states[i]))
            targets.append(np.concatenate([[togo_r[i]], togo_c[i]]))
    x = np.asarray(rows)
    y = np.asarray(targets)
    w, *_ = np.linalg.lstsq(x, y, rcond=None)

    out = []
    for traj in trajs:
        phi = np.asarray([features(s) for s in traj.states])
        v = phi @ w
        out.append((v[:, 0], v[:, 1:]))
    return out


def papd_run(cmdp: Cmdp, spec: ConstraintSpec, cfg: SolverConfig) -> RunRecord:
    """Sampled primal-dual loop: practical/constant schedule + PID dual."""
    if cfg.dual_variant != "pid":
        raise ValueError("papd_run uses the PID dual controller")
    if cfg.sampling is None:
        raise ValueError("papd_run needs a sampling config")
    if not isinstance(cfg.theta0, PolicyParams):
        raise ValueError("papd_run needs theta0 as PolicyParams")
    if cfg.schedule.variant.endswith("-exact"):
        raise ValueError("papd_run takes a practical or constant schedule")
    if cfg.schedule.variant.endswith("-practical") and spec.m != 1:
        raise ValueError("practical schedules are single-constraint")

    gains = cfg.gains or PidGains()
    params = cfg.theta0
    m = spec.m
    k_iter = cfg.iterations
    lam = (
        np.zeros(m)
        if cfg.lambda0 is None
        else np.atleast_1d(np.asarray(cfg.lambda0, dtype=float)).copy()
    )
    pid_state = PidState.zeros(m)

    thetas = np.empty((k_iter + 1, params.theta.size))
    lambdas = np.empty((k_iter + 1, m))
    etas = np.empty(k_iter)
    returns = np.empty(k_iter)
    costs = np.empty((k_iter, m))

    start = time.perf_counter()
    for k in range(k_iter):
        thetas[k] = params.theta
        lambdas[k] = lam
        lm = Multiplier(lam)
        eta = cfg.schedule.rate(lm)
        etas[k] = eta

        trajs = collect_batch(cmdp, params, cfg.sampling, (cfg.seed, k))
        vals = np.empty(len(trajs))
        cvals = np.empty((len(trajs), m))
        for i, traj in enumerate(trajs):
            vals[i], cvals[i] = discounted_value(traj, cmdp.gamma)
        j_r_hat = float(vals.mean())
        j_c_hat = cvals.mean(axis=0)

        if cfg.algorithm == "reinforce":
            grad = reinforce_grad_from_batch(trajs, cmdp.gamma, params, lm, spec)
            params = params.replace_theta(params.theta - eta * grad)
        else:
            params = _ppol_update(cmdp, params, trajs, lm, cfg, eta, k)

        if cfg.fresh_dual_batch:
            fresh = collect_batch(
                cmdp, params, cfg.sampling, (cfg.seed, k, FRESH_BATCH_STREAM)
            )
            for i, traj in enumerate(fresh):
                vals[i], cvals[i] = discounted_value(traj, cmdp.gamma)
            j_r_hat = float(vals.mean())
            j_c_hat = cvals.mean(axis=0)

        returns[k] = j_r_hat
        costs[k] = j_c_hat
        lm_next, pid_state = pid_dual_step(pid_state, gains, j_c_hat, spec)
        lam = lm_next.values
    thetas[k_iter] = params.theta
    lambdas[k_iter] = lam

    meta = {
        "kind": "papd",
        "dual": "pid",
        "zeta": None,
        "gains": [gains.k_p, gains.k_i, gains.k_d],
        "inner_steps": 1,
        "seed": cfg.seed,
        "algorithm": cfg.algorithm,
        "cost_limit": spec.limits.tolist(),
        "schedule_variant": cfg.schedule.variant,
        "wall_clock_s": time.perf_counter() - start,
    }
    return RunRecord(thetas, lambdas, etas, returns, costs, meta)


def _ppol_update(
    cmdp: Cmdp,
    params: PolicyParams,
    trajs,
    lm: Multiplier,
    cfg: SolverConfig,
    eta: float,
    k: int,
) -> PolicyParams:
    if cfg.values_fn is not None:
        per_traj = cfg.values_fn(params, trajs)
    else:
        per_traj = _lstsq_values(cmdp, trajs)
    values_iter = iter(per_traj)
    batch = advantage_batch(
        trajs, params, cmdp.gamma, cfg.ppol, lambda traj: next(values_iter)
    )
    rng = np.random.default_rng((cfg.seed, k, SHUFFLE_STREAM))
    n = len(batch)
    mb = min(cfg.ppol.minibatch_size, n)
    for _ in range(cfg.ppol.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, mb):
            idx = order[lo : lo + mb]
            sub = AdvantageBatch(
                [batch.states[i] for i in idx],
                [batch.actions[i] for i in idx],
                batch.log_prob_old[idx],
                batch.adv_r[idx],
                batch.adv_c[idx],
            )
            grad = ppol_surrogate_grad(sub, params, lm, cfg.ppol)
            params = params.replace_theta(params.theta + eta * grad)
    return params


def dual_asymptotic_term(
    cost_bound: float, gamma: float, limits: np.ndarray, zeta: float
) -> float:
    """The K-independent term of the dual-gap bound,
    zeta (B + (1-gamma) ||d||)^2 / (2 (1-gamma)^2)."""
    norm_d = float(np.linalg.norm(np.atleast_1d(limits)))
    return zeta * (cost_bound + (1.0 - gamma) * norm_d) ** 2 / (
        2.0 * (1.0 - gamma) ** 2
    )


@dataclass
class BoundCertificate:
    """Measured per-iteration slacks (bound minus requirement, so valid
    means >= -tol), NaN where a check does not apply at that iteration."""

    slacks: dict
    flags: dict
    eps: np.ndarray
    delta: np.ndarray
    l_prime: float
    g_norm: float
    d_star: float
    lambda_star: float
    tol: float

    @property
    def passed(self) -> bool:
        for arr in self.slacks.values():
            if arr.size and not np.all(np.isnan(arr)):
                if np.nanmin(arr) < -self.tol:
                    return False
        return True

    def worst(self) -> dict:
        out = {}
        for name, arr in self.slacks.items():
            if arr.size and not np.all(np.isnan(arr)):
                out[name] = float(np.nanmin(arr))
            else:
                out[name] = None
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "l_prime": self.l_prime,
            "g_norm": self.g_norm,
            "d_star": self.d_star,
            "lambda_star": self.lambda_star,
            "worst_slack": self.worst(),
            "flagged_iterations": {
                name: int(flag.sum()) for name, flag in self.flags.items()
            },
        }


def verify_bounds(
    record: RunRecord,
    problem: QuadProgram,
    constants: SmoothnessConstants | None = None,
    zeta: float | None = None,
    tol: float = 1e-9,
) -> BoundCertificate:
    """Check every proved inequality against an exact-run record."""
    if record.meta.get("kind") != "apd":
        raise ValueError("bound certificates require an exact (apd) record")
    if record.meta.get("dual") != "ascent":
        raise ValueError("bound certificates require the ascent dual update")
    if record.meta.get("inner_steps", 1) != 1:
        raise ValueError("bound algebra assumes one primal step per iteration")
    c = constants or problem.smoothness()
    if zeta is None:
        zeta = record.meta["zeta"]
    mu = c.mu
    l_c0 = float(c.l_c[0])

    k_iter = record.iterations
    lam_all = record.lambdas[:, 0]
    lam_k = lam_all[:-1]
    etas = record.etas
    limit = problem.limit

    # Closed-form minimizers and dual values at every recorded multiplier.
    d_all, theta_star_all, _ = dual_values_batch(problem, lam_all)
    theta_star = theta_star_all[:-1]

    th_prev = record.thetas[:-1]
    th_next = record.thetas[1:]

    def quad_form(th, mat):
        return np.einsum("ki,ij,kj->k", th, mat, th)

    j_r_next = -0.5 * quad_form(th_next, problem.q) + th_next @ problem.b
    j_c_next = 0.5 * quad_form(th_next, problem.p) + th_next @ problem.c
    lag_next = -j_r_next + lam_k * (j_c_next - limit)
    eps = lag_next - d_all[:-1]
    delta = ((th_prev - theta_star) ** 2).sum(axis=1)

    big_l = c.l_r + lam_k * l_c0
    a_stack = problem.q[None, :, :] + lam_k[:, None, None] * problem.p[None, :, :]
    rhs = problem.b[None, :] - lam_k[:, None] * problem.c[None, :]
    grad_prev = np.einsum("kij,kj->ki", a_stack, th_prev) - rhs
    grad_next = np.einsum("kij,kj->ki", a_stack, th_next) - rhs
    gn_prev = np.linalg.norm(grad_prev, axis=1)
    gn_next = np.linalg.norm(grad_next, axis=1)

    if c.l_lip is not None:
        l_prime = c.l_lip
    else:
        # Lagrangian-value Lipschitz constant over the iterate hull: the
        # largest gradient norm seen at any endpoint, with 10% headroom.
        l_prime = 1.1 * float(max(gn_prev.max(initial=0.0), gn_next.max(initial=0.0)))

    g_rows = record.costs[:, 0] - limit
    g_norm = float(np.abs(g_rows).max(initial=0.0))

    kkt = quad_kkt_solve(problem)
    prefixes = np.arange(1, k_iter + 1, dtype=float)
    eps_csum = np.cumsum(eps)

    # (a) dual-gap bound at every prefix K'.
    best_d = np.maximum.accumulate(d_all)[1:]
    lhs_dual = kkt.dual_opt - best_d
    lam0_dist = float(np.abs(lam_all[0] - kkt.lambda_star))
    rhs_dual = (
        lam0_dist**2 / (2.0 * zeta * prefixes)
        + zeta * g_norm**2 / 2.0
        + eps_csum / prefixes
    )
    slack_dual = rhs_dual - lhs_dual

    def error_bounds(eta):
        rad1 = (2.0 / mu) * (big_l * delta + (big_l * eta**2 - eta) * gn_prev**2)
        rad2 = (1.0 + eta**2 * big_l**2 - eta * mu) * delta
        b1 = np.where(rad1 >= 0.0, l_prime * np.sqrt(np.maximum(rad1, 0.0)), np.nan)
        b2 = np.where(rad2 >= 0.0, l_prime * np.sqrt(np.maximum(rad2, 0.0)), np.nan)
        return b1, b2, rad1 < 0.0, rad2 < 0.0

    # (b) per-step bounds at the eta the run actually used.
    b1_run, b2_run, f1_run, f2_run = error_bounds(etas)
    slack_run_lin = b1_run - eps
    slack_run_qua = b2_run - eps

    # (c) bounds at the optimizing eta, where the run used it.
    eta1 = 1.0 / (2.0 * big_l)
    eta2 = mu / (2.0 * big_l**2)
    app1 = np.abs(etas - eta1) <= 1e-9 * eta1
    app2 = np.abs(etas - eta2) <= 1e-9 * eta2
    bound_opt_lin = l_prime * np.sqrt((2.0 * delta / mu) * (big_l - mu**2 / (16.0 * big_l)))
    bound_opt_qua = l_prime * np.sqrt(delta * (1.0 - mu**2 / (4.0 * big_l**2)))
    slack_eps_opt_lin = np.where(app1, bound_opt_lin - eps, np.nan)
    slack_eps_opt_qua = np.where(app2, bound_opt_qua - eps, np.nan)

    # Optimizer beats its 0.5x and 2x perturbations (checked at every
    # iteration; the comparison is between bound formulas, not the run).
    b1_half, _, f1_half, _ = error_bounds(0.5 * eta1)
    b1_double, _, f1_double, _ = error_bounds(2.0 * eta1)
    b1_star, _, f1_star, _ = error_bounds(eta1)
    _, b2_half, _, f2_half = error_bounds(0.5 * eta2)
    _, b2_double, _, f2_double = error_bounds(2.0 * eta2)
    _, b2_star, _, f2_star = error_bounds(eta2)
    ok1 = ~(f1_half | f1_double | f1_star)
    ok2 = ~(f2_half | f2_double | f2_star)
    slack_opt1 = np.where(ok1, np.minimum(b1_half, b1_double) - b1_star, np.nan)
    slack_opt2 = np.where(ok2, np.minimum(b2_half, b2_double) - b2_star, np.nan)

    # (d) average-return rate bound at every prefix.
    j_r_opt = problem.j_r(kkt.theta_star)
    avg_ret = np.cumsum(record.returns) / prefixes
    lam0_norm = float(np.abs(lam_all[0]))
    rhs_rate = (
        j_r_opt
        - eps_csum / prefixes
        - zeta * g_norm**2 / 2.0
        - lam0_norm**2 / (2.0 * zeta * prefixes)
    )
    slack_rate = avg_ret - rhs_rate

    slacks = {
        "dual-gap": slack_dual,
        "eps-invlin": slack_run_lin,
        "eps-invqua": slack_run_qua,
        "eps-opt-invlin": slack_eps_opt_lin,
        "eps-opt-invqua": slack_eps_opt_qua,
        "opt-invlin": slack_opt1,
        "opt-invqua": slack_opt2,
        "rate": slack_rate,
    }
    flags = {
        "eps-invlin": f1_run,
        "eps-invqua": f2_run,
        "opt-invlin": ~ok1,
        "opt-invqua": ~ok2,
    }
    return BoundCertificate(
        slacks=slacks,
        flags=flags,
        eps=eps,
        delta=delta,
        l_prime=float(l_prime),
        g_norm=g_norm,
        d_star=float(kkt.dual_opt),
        lambda_star=float(kkt.lambda_star),
        tol=tol,
    )


@dataclass
class FeasibilityReport:
    running_avg: np.ndarray
    full_avg: np.ndarray
    window_avg: np.ndarray
    limits: np.ndarray
    tol: float
    passed: bool
    envelope_slack: np.ndarray | None = None
    envelope_ok: bool | None = None


def feasibility_check(
    record: RunRecord, spec: ConstraintSpec, window: float = 0.2, tol: float = 1e-2
) -> FeasibilityReport:
    """Average-feasibility report.

    Passes iff both the full-run average and the trailing-window average of
    J_C are within d + tol, componentwise.  For ascent records the exact
    transient envelope avg(g)[K'] <= (lambda_K' - lambda_0)/(zeta K') is
    also evaluated; envelope_ok checks it from 10% of the run onward.
    """
    k_iter = record.iterations
    if k_iter == 0:
        raise ValueError("empty record")
    if not 0.0 < window <= 1.0:
        raise ValueError("window must lie in (0, 1]")
    counts = np.arange(1, k_iter + 1, dtype=float)[:, None]
    running = np.cumsum(record.costs, axis=0) / counts
    tail = max(1, int(round(window * k_iter)))
    window_avg = record.costs[-tail:].mean(axis=0)
    full_avg = running[-1]
    passed = bool(
        (full_avg <= spec.limits + tol).all()
        and (window_avg <= spec.limits + tol).all()
    )

    env_slack = None
    env_ok = None
    if record.meta.get("dual") == "ascent" and record.meta.get("zeta"):
        zeta = record.meta["zeta"]
        envelope = (record.lambdas[1:] - record.lambdas[0]) / (zeta * counts)
        env_slack = envelope - (running - spec.limits)
        start = max(1, int(np.ceil(0.1 * k_iter))) - 1
        env_ok = bool((env_slack[start:] >= -1e-9).all())
    return FeasibilityReport(
        running_avg=running,
        full_avg=full_avg,
        window_avg=window_avg,
        limits=spec.limits,
        tol=tol,
        passed=passed,
        envelope_slack=env_slack,
        envelope_ok=env_ok,
    )
