"""Parametric stochastic policies with exact score functions.

Two families, both with theta a flat real vector:

  tabular softmax    pi(a|s) = softmax(theta[s*A : (s+1)*A])[a]
  linear Gaussian    a ~ N(W x, diag(exp(log_std))^2),  W = theta[:A*F] as (A, F)

The Gaussian log standard deviations are learned entries appended to theta
(initialized to log 0.5), so score functions cover them too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_STD_INIT = math.log(0.5)


@dataclass(frozen=True)
class TabularSoftmax:
    n_states: int
    n_actions: int

    def __post_init__(self) -> None:
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("tabular descriptor needs positive state/action counts")

    @property
    def param_count(self) -> int:
        return self.n_states * self.n_actions


@dataclass(frozen=True)
class LinearGaussian:
    feature_dim: int
    action_dim: int

    def __post_init__(self) -> None:
        if self.feature_dim < 1 or self.action_dim < 1:
            raise ValueError("gaussian descriptor needs positive dimensions")

    @property
    def param_count(self) -> int:
        # weight matrix plus one learned log_std per action dimension
        return self.action_dim * self.feature_dim + self.action_dim


Descriptor = TabularSoftmax | LinearGaussian


@dataclass(frozen=True)
class PolicyParams:
    kind: Descriptor
    theta: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or theta.size != self.kind.param_count:
            raise ValueError(
                f"theta has size {theta.size}, descriptor expects "
                f"{self.kind.param_count}"
            )

    def replace_theta(self, theta: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.kind, theta)


def init_params(kind: Descriptor) -> PolicyParams:
    """Zero weights; Gaussian log_std entries start at log 0.5."""
    theta = np.zeros(kind.param_count)
    if isinstance(kind, LinearGaussian):
        theta[kind.action_dim * kind.feature_dim :] = LOG_STD_INIT
    return PolicyParams(kind, theta)


def softmax_table(params: PolicyParams) -> np.ndarray:
    """(n_states, n_actions) action probabilities of a tabular policy."""
    kind = params.kind
    if not isinstance(kind, TabularSoftmax):
        raise TypeError("softmax_table requires a tabular descriptor")
    logits = params.theta.reshape(kind.n_states, kind.n_actions)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _state_probs(params: PolicyParams, state: int) -> np.ndarray:
    kind = params.kind
    row = params.theta[state * kind.n_actions : (state + 1) * kind.n_actions]
    z = np.exp(row - row.max())
    return z / z.sum()


def _gaussian_parts(params: PolicyParams):
    kind = params.kind
    n = kind.action_dim * kind.feature_dim
    w = params.theta[:n].reshape(kind.action_dim, kind.feature_dim)
    log_std = params.theta[n:]
    return w, log_std


def policy_act(params: PolicyParams, state, rng: np.random.Generator):
    """Sample an action from pi_theta(.|state)."""
    kind = params.kind
    if isinstance(kind, TabularSoftmax):
        if not 0 <= int(state) < kind.n_states:
            raise ValueError(f"state {state} outside tabular range")
        cdf = np.cumsum(_state_probs(params, int(state)))
        return int(np.searchsorted(cdf, rng.random(), side="right"))
    w, log_std = _gaussian_parts(params)
    x = np.asarray(state, dtype=float)
    if x.shape != (kind.feature_dim,):
        raise ValueError("state dimension incompatible with descriptor")
    return w @ x + np.exp(log_std) * rng.standard_normal(kind.action_dim)


def policy_log_prob(params: PolicyParams, state, action) -> float:
    """log pi_theta(action|state)."""
    kind = params.kind
    if isinstance(kind, TabularSoftmax):
        probs = _state_probs(params, int(state))
        p = probs[int(action)]
        if p <= 0.0:
            raise ValueError("zero-probability action")
        return float(np.log(p))
    w, log_std = _gaussian_parts(params)
    x = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    z = (a - w @ x) / np.exp(log_std)
    return float(
        -0.5 * z @ z - log_std.sum() - 0.5 * kind.action_dim * math.log(2.0 * math.pi)
    )


def policy_grad_log_prob(params: PolicyParams, state, action) -> np.ndarray:
    """Exact score d/dtheta log pi_theta(action|state), shaped like theta."""
    kind = params.kind
    grad = np.zeros_like(params.theta)
    if isinstance(kind, TabularSoftmax):
        s, a = int(state), int(action)
        probs = _state_probs(params, s)
        block = grad[s * kind.n_actions : (s + 1) * kind.n_actions]
        block -= probs
        block[a] += 1.0
        return grad
    w, log_std = _gaussian_parts(params)
    x = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    inv_var = np.exp(-2.0 * log_std)
    resid = (a - w @ x) * inv_var  # (a - m) / sigma^2
    n = kind.action_dim * kind.feature_dim
    grad[:n] = np.outer(resid, x).ravel()
    grad[n:] = (a - w @ x) * resid - 1.0  # ((a - m)/sigma)^2 - 1
    return grad
