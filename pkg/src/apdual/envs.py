"""Desk-scale constrained environments.

Point-mass Run and Circle tasks on double-integrator dynamics

    v' = v + a * action_scale * dt + noise,      p' = p + v' * dt

with the tasks' reward/cost formulas, and a slippery hazard gridworld whose
tabular structure admits exact dynamic-programming evaluation (the oracle
used by the Monte-Carlo tests and by value baselines).

Gridworld conventions: cell index = y * width + x; actions 0..3 move
(y+1), (x+1), (y-1), (x-1); a move off the grid stays in place.  With
probability slip_prob the commanded direction is replaced by a uniformly
random other direction.  Entering a hazard cell incurs hazard_cost; the
goal is absorbing (reward granted on entry, zero reward/cost afterwards).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp


@dataclass(frozen=True)
class PointEnvConfig:
    """Limits and dynamics constants shared by the Run and Circle tasks.

    Defaults put the unconstrained optimum outside the safe region: driving
    straight at the Run goal exceeds v_lim, and riding the Circle radius
    exceeds x_lim.
    """

    goal: tuple[float, float] = (10.0, 0.0)
    y_lim: float = 1.0
    v_lim: float = 1.0
    circle_radius: float = 2.0
    x_lim: float = 1.5
    dt: float = 0.1
    action_scale: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        for name in ("y_lim", "v_lim", "circle_radius", "x_lim", "action_scale"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.dt <= 1.0:
            raise ValueError("dt must lie in (0, 1]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")


def run_reward_cost(p_prev, p, v, cfg: PointEnvConfig) -> tuple[float, float]:
    """Run task: progress toward the goal, cost for leaving the band or
    speeding.

        r = ||p_prev - g|| - ||p - g||
        c = 1(|p_y| > y_lim) + 1(||v|| > v_lim)
    """
    g = np.asarray(cfg.goal, dtype=float)
    p_prev = np.asarray(p_prev, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    reward = float(np.linalg.norm(p_prev - g) - np.linalg.norm(p - g))
    cost = float(abs(p[1]) > cfg.y_lim) + float(np.linalg.norm(v) > cfg.v_lim)
    return reward, cost


def circle_reward_cost(p, v, cfg: PointEnvConfig) -> tuple[float, float]:
    """Circle task: angular momentum rewarded near the target radius, cost
    for leaving the |p_x| band.

        r = (-p_y v_x + p_x v_y) / (1 + | ||p|| - o |)
        c = 1(|p_x| > x_lim)
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    numer = -p[1] * v[0] + p[0] * v[1]
    denom = 1.0 + abs(float(np.linalg.norm(p)) - cfg.circle_radius)
    return float(numer / denom), float(abs(p[0]) > cfg.x_lim)


def make_point_env(task: str, cfg: PointEnvConfig, gamma: float = 0.99) -> Cmdp:
    """Cmdp over states (p, v) in R^4 with actions in R^2, m = 1.

    The Run task starts at the origin at rest; the Circle task starts on the
    circle at (o, 0) at rest.
    """
    if task not in ("run", "circle"):
        raise ValueError(f"unknown point task {task!r}")
    scale_dt = cfg.action_scale * cfg.dt
    noise = cfg.noise_std

    def transition(state, action, rng):
        a = np.asarray(action, dtype=float)
        v = state[2:] + a * scale_dt
        if noise > 0.0:
            v = v + noise * rng.standard_normal(2)
        p = state[:2] + v * cfg.dt
        return np.concatenate([p, v])

    if task == "run":
        start = np.zeros(4)
        bound = 2.0  # both indicators can fire

        def reward(s, a, s2):
            return run_reward_cost(s[:2], s2[:2], s2[2:], cfg)[0]

        def costs(s, a, s2):
            return run_reward_cost(s[:2], s2[:2], s2[2:], cfg)[1]

    else:
        start = np.array([cfg.circle_radius, 0.0, 0.0, 0.0])
        bound = 1.0

        def reward(s, a, s2):
            return circle_reward_cost(s2[:2], s2[2:], cfg)[0]

        def costs(s, a, s2):
            return circle_reward_cost(s2[:2], s2[2:], cfg)[1]

    return Cmdp(
        gamma=gamma,
        n_costs=1,
        cost_bound=bound,
        initial_dist=lambda rng: start.copy(),
        transition=transition,
        reward=reward,
        costs=costs,
    )


N_ACTIONS = 4
# displacement per action index: (dy, dx) for north, east, south, west
_MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    goal_cell: int
    hazard_cells: tuple[int, ...] = ()
    step_reward: float = -1.0
    goal_reward: float = 50.0
    hazard_cost: float = 4.0
    slip_prob: float = 0.0
    start_cell: int = 0

    def __post_init__(self) -> None:
        n = self.width * self.height
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        cells = (self.goal_cell, self.start_cell, *self.hazard_cells)
        if any(not 0 <= c < n for c in cells):
            raise ValueError("cell index outside the grid")
        if self.goal_cell in self.hazard_cells:
            raise ValueError("goal cell cannot be a hazard")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")
        object.__setattr__(self, "hazard_cells", tuple(sorted(set(self.hazard_cells))))

    @property
    def n_cells(self) -> int:
        return self.width * self.height


def grid_move_table(spec: GridworldSpec) -> np.ndarray:
    """(n_cells, 4) destination per cell and effective direction (no slip)."""
    table = np.empty((spec.n_cells, N_ACTIONS), dtype=np.int64)
    for cell in range(spec.n_cells):
        y, x = divmod(cell, spec.width)
        for a, (dy, dx) in enumerate(_MOVES):
            ny, nx = y + dy, x + dx
            if 0 <= ny < spec.height and 0 <= nx < spec.width:
                table[cell, a] = ny * spec.width + nx
            else:
                table[cell, a] = cell
    return table


def make_gridworld(spec: GridworldSpec, gamma: float = 0.99) -> Cmdp:
    """Tabular Cmdp realizing the slip/hazard/absorbing-goal semantics."""
    moves = grid_move_table(spec)
    goal = spec.goal_cell
    hazard = np.zeros(spec.n_cells, dtype=bool)
    hazard[list(spec.hazard_cells)] = True
    slip = spec.slip_prob

    def transition(state, action, rng):
        if state == goal:
            return goal
        a = action
        if slip > 0.0 and rng.random() < slip:
            a = (a + 1 + int(rng.integers(3))) % N_ACTIONS
        return int(moves[state, a])

    def reward(s, a, s2):
        if s == goal:
            return 0.0
        return spec.step_reward + (spec.goal_reward if s2 == goal else 0.0)

    def costs(s, a, s2):
        if s == goal:
            return 0.0
        return spec.hazard_cost if hazard[s2] else 0.0

    bound = spec.hazard_cost if spec.hazard_cost > 0.0 else 1.0
    return Cmdp(
        gamma=gamma,
        n_costs=1,
        cost_bound=bound,
        initial_dist=lambda rng: spec.start_cell,
        transition=transition,
        reward=reward,
        costs=costs,
        n_states=spec.n_cells,
        n_actions=N_ACTIONS,
    )


def gridworld_kernel(spec: GridworldSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact model (P, R, C): P is (S, A, S), R and C are expected per (s, a).

    Mirrors make_gridworld exactly, including slip mixing and the absorbing
    goal; this is the dynamic-programming side of the dual-route checks.
    """
    s_n = spec.n_cells
    moves = grid_move_table(spec)
    hazard = np.zeros(s_n, dtype=bool)
    hazard[list(spec.hazard_cells)] = True

    p = np.zeros((s_n, N_ACTIONS, s_n))
    r = np.zeros((s_n, N_ACTIONS))
    c = np.zeros((s_n, N_ACTIONS))
    for s in range(s_n):
        if s == spec.goal_cell:
            p[s, :, s] = 1.0
            continue
        for a in range(N_ACTIONS):
            for eff in range(N_ACTIONS):
                if eff == a:
                    w = 1.0 - spec.slip_prob
                else:
                    w = spec.slip_prob / 3.0
                if w == 0.0:
                    continue
                s2 = moves[s, eff]
                p[s, a, s2] += w
                r[s, a] += w * (
                    spec.step_reward
                    + (spec.goal_reward if s2 == spec.goal_cell else 0.0)
                )
                c[s, a] += w * (spec.hazard_cost if hazard[s2] else 0.0)
    return p, r, c


def exact_policy_eval(
    spec: GridworldSpec, probs: np.ndarray, gamma: float, horizon: int
) -> tuple[float, float]:
    """Horizon-truncated (J_R, J_C) of an action-probability table by
    backward induction, matching the Monte-Carlo estimand exactly."""
    p, r, c = gridworld_kernel(spec)
    p_pi = np.einsum("sa,sat->st", probs, p)
    r_pi = (probs * r).sum(axis=1)
    c_pi = (probs * c).sum(axis=1)
    v_r = np.zeros(spec.n_cells)
    v_c = np.zeros(spec.n_cells)
    for _ in range(horizon):
        v_r = r_pi + gamma * (p_pi @ v_r)
        v_c = c_pi + gamma * (p_pi @ v_c)
    return float(v_r[spec.start_cell]), float(v_c[spec.start_cell])


def policy_state_values(
    spec: GridworldSpec, probs: np.ndarray, gamma: float, horizon: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-state truncated values (v_R, v_C) under the given policy table;
    used as exact baselines for advantage estimation."""
    p, r, c = gridworld_kernel(spec)
    p_pi = np.einsum("sa,sat->st", probs, p)
    r_pi = (probs * r).sum(axis=1)
    c_pi = (probs * c).sum(axis=1)
    v_r = np.zeros(spec.n_cells)
    v_c = np.zeros(spec.n_cells)
    for _ in range(horizon):
        v_r = r_pi + gamma * (p_pi @ v_r)
        v_c = c_pi + gamma * (p_pi @ v_c)
    return v_r, v_c


def default_hazard_gridworld() -> GridworldSpec:
    """The shipped 5x3 hazard corridor.

    Start mid-left, goal mid-right; the direct row passes three hazard
    cells, the detour rows are safe but two steps longer.  At gamma = 0.99
    the direct path's discounted cost is about 11.8, so with cost limit 10
    the unconstrained optimum is infeasible and the constrained optimum
    mixes the two routes.
    """
    width, height = 5, 3
    row = 1
    return GridworldSpec(
        width=width,
        height=height,
        start_cell=row * width + 0,
        goal_cell=row * width + 4,
        hazard_cells=tuple(row * width + x for x in (1, 2, 3)),
        step_reward=-1.0,
        goal_reward=50.0,
        hazard_cost=4.0,
        slip_prob=0.0,
    )
