"""Lagrangian machinery: value, constraint function, score-function
gradient, GAE advantages, and the clipped PPO-Lagrangian surrogate.

Sign convention throughout: the primal problem is the minimization of

    L(theta, lambda) = -J_R + lambda . (J_C - d),

so gradient descent on L maximizes return while penalizing violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, SamplingConfig, Seed, collect_batch, discounted_value
from .policy import (
    PolicyParams,
    TabularSoftmax,
    policy_grad_log_prob,
    policy_log_prob,
    softmax_table,
)


@dataclass(frozen=True)
class ConstraintSpec:
    """Thresholds d (one per cost signal)."""

    limits: np.ndarray

    def __post_init__(self) -> None:
        limits = np.atleast_1d(np.asarray(self.limits, dtype=float))
        object.__setattr__(self, "limits", limits)

    @property
    def m(self) -> int:
        return self.limits.size


@dataclass(frozen=True)
class Multiplier:
    """Nonnegative dual variables, one per constraint."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        if (values < 0.0).any():
            raise ValueError("multiplier components must be nonnegative")

    @property
    def m(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PpolConfig:
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    minibatch_size: int = 256
    epochs: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.minibatch_size < 1 or self.epochs < 1:
            raise ValueError("minibatch_size and epochs must be positive")


@dataclass
class AdvantageBatch:
    """Flattened per-step samples for the surrogate update.

    adv_r is centered by its batch mean at assembly (see advantage_batch);
    adv_c is (N, m) and left uncentered since its sign drives the penalty.
    """

    states: list
    actions: list
    log_prob_old: np.ndarray
    adv_r: np.ndarray
    adv_c: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.states)
        self.log_prob_old = np.asarray(self.log_prob_old, dtype=float)
        self.adv_r = np.asarray(self.adv_r, dtype=float)
        self.adv_c = np.atleast_2d(np.asarray(self.adv_c, dtype=float))
        if self.adv_c.shape[0] != n and self.adv_c.shape == (1, n):
            self.adv_c = self.adv_c.T
        if (
            len(self.actions) != n
            or self.log_prob_old.shape != (n,)
            or self.adv_r.shape != (n,)
            or self.adv_c.shape[0] != n
        ):
            raise ValueError("inconsistent batch field lengths")
        if not (
            np.isfinite(self.adv_r).all()
            and np.isfinite(self.adv_c).all()
            and np.isfinite(self.log_prob_old).all()
        ):
            raise ValueError("batch contains non-finite values")

    def __len__(self) -> int:
        return len(self.states)


def lagrangian_value(
    j_r: float, j_c: np.ndarray, lm: Multiplier, spec: ConstraintSpec
) -> float:
    """-J_R + lambda . (J_C - d)."""
    j_c = np.atleast_1d(np.asarray(j_c, dtype=float))
    if j_c.shape != lm.values.shape or lm.values.shape != spec.limits.shape:
        raise ValueError("J_C, multiplier, and constraint dimensions disagree")
    return float(-j_r + lm.values @ (j_c - spec.limits))


def constraint_value(j_c: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """g = J_C - d."""
    j_c = np.atleast_1d(np.asarray(j_c, dtype=float))
    if j_c.shape != spec.limits.shape:
        raise ValueError("J_C and constraint dimensions disagree")
    return j_c - spec.limits


def trajectory_score(params: PolicyParams, traj) -> np.ndarray:
    """Sum of exact scores d log pi(a_t|s_t) over a rollout."""
    if isinstance(params.kind, TabularSoftmax):
        kind = params.kind
        probs = softmax_table(params)
        t = len(traj)
        states = np.asarray(traj.states[:t], dtype=np.int64)
        actions = np.asarray(traj.actions, dtype=np.int64)
        counts = np.bincount(
            states * kind.n_actions + actions, minlength=kind.param_count
        ).astype(float)
        visits = np.bincount(states, minlength=kind.n_states).astype(float)
        return counts - (visits[:, None] * probs).ravel()
    score = np.zeros_like(params.theta)
    for t in range(len(traj)):
        score += policy_grad_log_prob(params, traj.states[t], traj.actions[t])
    return score


def reinforce_grad(
    cmdp: Cmdp,
    params: PolicyParams,
    lm: Multiplier,
    spec: ConstraintSpec,
    sampling: SamplingConfig,
    seed: Seed,
) -> np.ndarray:
    """Score-function estimate of grad_theta L(theta, lambda).

    Each trajectory contributes (full-rollout score) x (its Lagrangian value
    minus a leave-one-out batch mean baseline); the leave-one-out form keeps
    the estimator exactly unbiased at finite batch size.
    """
    trajs = collect_batch(cmdp, params, sampling, seed)
    return reinforce_grad_from_batch(trajs, cmdp.gamma, params, lm, spec)


def reinforce_grad_from_batch(
    trajs, gamma: float, params: PolicyParams, lm: Multiplier, spec: ConstraintSpec
) -> np.ndarray:
    n = len(trajs)
    weights = np.empty(n)
    for i, traj in enumerate(trajs):
        j_r, j_c = discounted_value(traj, gamma)
        weights[i] = lagrangian_value(j_r, j_c, lm, spec)
    if n > 1:
        baselines = (weights.sum() - weights) / (n - 1)
    else:
        baselines = np.zeros(1)
    grad = np.zeros_like(params.theta)
    for i, traj in enumerate(trajs):
        grad += (weights[i] - baselines[i]) * trajectory_score(params, traj)
    return grad / n


def _gae(
    rewards: np.ndarray, values: np.ndarray, gamma: float, gae_lambda: float
) -> np.ndarray:
    t = len(rewards)
    if len(values) != t + 1:
        raise ValueError("values must have length len(rewards) + 1")
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.empty(t)
    acc = 0.0
    for i in range(t - 1, -1, -1):
        acc = deltas[i] + gamma * gae_lambda * acc
        adv[i] = acc
    return adv


def gae_advantages(traj, values, gamma: float, gae_lambda: float) -> np.ndarray:
    """A_t = sum_l (gamma * gae_lambda)^l delta_{t+l} with
    delta_t = r_t + gamma V_{t+1} - V_t; values carries the bootstrap entry."""
    return _gae(np.asarray(traj.rewards, dtype=float), np.asarray(values, dtype=float),
                gamma, gae_lambda)


def advantage_batch(
    trajs,
    params_old: PolicyParams,
    gamma: float,
    cfg: PpolConfig,
    values_fn,
) -> AdvantageBatch:
    """Flatten rollouts into an AdvantageBatch.

    values_fn(traj) must return (v_r, v_c) with v_r of length T+1 and v_c of
    shape (T+1, m).  Reward advantages are centered by their batch mean, so
    the assembled batch (and hence the surrogate gradient) is invariant to a
    constant shift of the raw reward advantages.
    """
    states: list = []
    actions: list = []
    lp_old: list = []
    adv_r: list = []
    adv_c: list = []
    for traj in trajs:
        v_r, v_c = values_fn(traj)
        v_c = np.atleast_2d(np.asarray(v_c, dtype=float))
        if v_c.shape[0] != len(traj) + 1:
            v_c = v_c.T
        adv_r.append(_gae(traj.rewards, v_r, gamma, cfg.gae_lambda))
        cols = [
            _gae(traj.costs[:, j], v_c[:, j], gamma, cfg.gae_lambda)
            for j in range(traj.costs.shape[1])
        ]
        adv_c.append(np.stack(cols, axis=1))
        for t in range(len(traj)):
            states.append(traj.states[t])
            actions.append(traj.actions[t])
            lp_old.append(policy_log_prob(params_old, traj.states[t], traj.actions[t]))
    adv_r_arr = np.concatenate(adv_r)
    adv_r_arr = adv_r_arr - adv_r_arr.mean()
    return AdvantageBatch(
        states, actions, np.asarray(lp_old), adv_r_arr, np.concatenate(adv_c, axis=0)
    )


def _ratios(batch: AdvantageBatch, params: PolicyParams) -> np.ndarray:
    lp = np.array(
        [
            policy_log_prob(params, batch.states[i], batch.actions[i])
            for i in range(len(batch))
        ]
    )
    return np.exp(lp - batch.log_prob_old)


def ppol_surrogate(
    batch: AdvantageBatch, params: PolicyParams, lm: Multiplier, cfg: PpolConfig
) -> float:
    """Batch mean of (1/(1+lambda)) (min(rho A_R, clip(rho) A_R) - lambda A_C).

    Scalar-multiplier form; maximized by the practical solver's primal step.
    """
    if lm.m != 1 or batch.adv_c.shape[1] != 1:
        raise ValueError("the surrogate is defined for a single constraint")
    lam = float(lm.values[0])
    rho = _ratios(batch, params)
    clipped = np.clip(rho, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    obj = np.minimum(rho * batch.adv_r, clipped * batch.adv_r)
    return float((obj - lam * batch.adv_c[:, 0]).mean() / (1.0 + lam))


def ppol_surrogate_grad(
    batch: AdvantageBatch, params: PolicyParams, lm: Multiplier, cfg: PpolConfig
) -> np.ndarray:
    """Ascent direction for the surrogate.

    The reward term differentiates the min/clip exactly (zero where the
    clipped branch is active).  The penalty term is the score-function form
    -lambda A_C rho d log pi: the surrogate's written penalty is constant in
    theta, so we keep its importance-weighted realization, which at
    theta = theta_old has expectation -lambda grad J_C.
    """
    if lm.m != 1 or batch.adv_c.shape[1] != 1:
        raise ValueError("the surrogate is defined for a single constraint")
    lam = float(lm.values[0])
    rho = _ratios(batch, params)
    upper = 1.0 + cfg.clip_ratio
    lower = 1.0 - cfg.clip_ratio
    clipped = np.clip(rho, lower, upper)
    active = rho * batch.adv_r <= clipped * batch.adv_r  # unclipped branch is the min
    coeff = (active * rho * batch.adv_r - lam * rho * batch.adv_c[:, 0]) / (1.0 + lam)
    grad = np.zeros_like(params.theta)
    for i in range(len(batch)):
        if coeff[i] != 0.0:
            grad += coeff[i] * policy_grad_log_prob(
                params, batch.states[i], batch.actions[i]
            )
    return grad / len(batch)
