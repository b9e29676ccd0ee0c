"""Discounted CMDP primitives and Monte-Carlo objective estimators.

A constrained MDP is a plain immutable value: callables for the initial
distribution, transition kernel, reward, and per-step cost vector, together
with the discount factor and a bound B on the per-step cost norm.  The two
objectives are the expected discounted return and the expected discounted
cost vector,

    J_R = E[sum_t gamma^t r_t],      J_C = E[sum_t gamma^t c_t],

estimated here by sample means over independently seeded trajectories.
Infinite-horizon sums are truncated at a finite horizon H; the truncation
changes a bounded-reward objective by at most gamma^H * R_max / (1 - gamma),
and ``default_horizon`` picks H so the relative tail gamma^H is below a
target.

Seeding scheme: a trajectory stream is ``np.random.default_rng(seed)`` where
seed may be an int or a tuple of ints.  Batch estimators give trajectory i
of a batch rooted at ``seed`` the derived seed ``(*seed, i)`` (counter
scheme), so any single trajectory of any batch can be regenerated in
isolation and batches may be sampled concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .policy import PolicyParams, TabularSoftmax, softmax_table

Seed = int | Sequence[int]


@dataclass(frozen=True)
class Cmdp:
    """Immutable CMDP specification.

    States are integer indices for tabular models (``n_states``/``n_actions``
    set) and real vectors otherwise.  ``costs`` may return a scalar when
    ``n_costs == 1``; samplers normalize to an m-vector.
    """

    gamma: float
    n_costs: int
    cost_bound: float
    initial_dist: Callable[[np.random.Generator], Any]
    transition: Callable[[Any, Any, np.random.Generator], Any]
    reward: Callable[[Any, Any, Any], float]
    costs: Callable[[Any, Any, Any], Any]
    n_states: int | None = None
    n_actions: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_costs < 1:
            raise ValueError("n_costs must be >= 1")
        if self.cost_bound <= 0.0:
            raise ValueError("cost_bound B must be positive")

    @property
    def is_tabular(self) -> bool:
        return self.n_states is not None and self.n_actions is not None


@dataclass(frozen=True)
class SamplingConfig:
    """Batch size and truncation horizon for Monte-Carlo estimation."""

    n_traj: int
    horizon: int

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class Trajectory:
    """A fixed-horizon rollout stored as parallel arrays.

    ``states`` has length T+1 (the final entry is the state reached by the
    last transition); ``actions`` has length T; ``rewards`` is (T,) and
    ``costs`` is (T, m).
    """

    states: list
    actions: list
    rewards: np.ndarray
    costs: np.ndarray

    def __post_init__(self) -> None:
        t = len(self.actions)
        if len(self.states) != t + 1 or len(self.rewards) != t or len(self.costs) != t:
            raise ValueError("inconsistent trajectory field lengths")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def steps(self):
        """The (state, action, reward, cost-vector) view of the rollout."""
        return [
            (self.states[t], self.actions[t], float(self.rewards[t]), self.costs[t])
            for t in range(len(self))
        ]


def default_horizon(gamma: float, rel_tail: float = 1e-3) -> int:
    """Smallest H with gamma^H <= rel_tail, i.e. truncation error below
    rel_tail * R_max/(1-gamma) for rewards bounded by R_max."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return max(1, math.ceil(math.log(rel_tail) / math.log(gamma)))


def derived_seed(seed: Seed, index: int) -> tuple:
    """Seed for trajectory `index` of a batch rooted at `seed`."""
    if isinstance(seed, (tuple, list)):
        return (*seed, index)
    return (seed, index)


def sample_trajectory(
    cmdp: Cmdp, params: PolicyParams, horizon: int, seed: Seed
) -> Trajectory:
    """Roll out exactly `horizon` steps of pi_theta in the CMDP.

    Deterministic in (cmdp, params, horizon, seed).  Raises ValueError if a
    sampled step cost exceeds the declared bound B.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    state = cmdp.initial_dist(rng)

    states = [state]
    actions: list = []
    rewards: list = []
    costs: list = []

    if isinstance(params.kind, TabularSoftmax):
        # Tabular fast path: the per-state action cdf is fixed within a
        # rollout, so build it once.  policy_act consumes the identical
        # single uniform draw per step, keeping the two paths bit-equal.
        cdf = np.cumsum(softmax_table(params), axis=1)
        for _ in range(horizon):
            action = int(np.searchsorted(cdf[state], rng.random(), side="right"))
            nxt = cmdp.transition(state, action, rng)
            actions.append(action)
            rewards.append(cmdp.reward(state, action, nxt))
            costs.append(cmdp.costs(state, action, nxt))
            states.append(nxt)
            state = nxt
    else:
        from .policy import policy_act

        for _ in range(horizon):
            action = policy_act(params, state, rng)
            nxt = cmdp.transition(state, action, rng)
            actions.append(action)
            rewards.append(cmdp.reward(state, action, nxt))
            costs.append(cmdp.costs(state, action, nxt))
            states.append(nxt)
            state = nxt

    reward_arr = np.asarray(rewards, dtype=float)
    cost_arr = np.asarray(costs, dtype=float)
    if cost_arr.ndim == 1:
        cost_arr = cost_arr[:, None]
    if cost_arr.shape[1] != cmdp.n_costs:
        raise ValueError("cost dimension does not match cmdp.n_costs")
    # Assumption: per-step cost norm <= B.  Vectorized over the rollout.
    norms = np.linalg.norm(cost_arr, axis=1)
    if norms.size and float(norms.max()) > cmdp.cost_bound * (1.0 + 1e-12):
        raise ValueError(
            f"sampled step cost norm {norms.max():g} exceeds declared bound "
            f"{cmdp.cost_bound:g}"
        )
    return Trajectory(states, actions, reward_arr, cost_arr)


def discounted_value(traj: Trajectory, gamma: float) -> tuple[float, np.ndarray]:
    """(sum_t gamma^t r_t, sum_t gamma^t c_t) over the trajectory's steps."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    t = len(traj)
    if t == 0:
        return 0.0, np.zeros(traj.costs.shape[1] if traj.costs.ndim == 2 else 0)
    w = gamma ** np.arange(t)
    return float(w @ traj.rewards), w @ traj.costs


def collect_batch(
    cmdp: Cmdp, params: PolicyParams, sampling: SamplingConfig, seed: Seed
) -> list[Trajectory]:
    """n_traj independent rollouts with the documented derived seeds."""
    return [
        sample_trajectory(cmdp, params, sampling.horizon, derived_seed(seed, i))
        for i in range(sampling.n_traj)
    ]


def estimate_objectives(
    cmdp: Cmdp, params: PolicyParams, sampling: SamplingConfig, seed: Seed
) -> tuple[float, np.ndarray]:
    """Sample means (J_R_hat, J_C_hat) over a derived-seed batch."""
    trajs = collect_batch(cmdp, params, sampling, seed)
    returns = np.empty(len(trajs))
    cost_vals = np.empty((len(trajs), cmdp.n_costs))
    for i, traj in enumerate(trajs):
        returns[i], cost_vals[i] = discounted_value(traj, cmdp.gamma)
    return float(returns.mean()), cost_vals.mean(axis=0)
