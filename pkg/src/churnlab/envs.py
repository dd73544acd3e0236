"""Toy environments with oracle-checkable optima.

Both environments are deliberately tiny and deterministic so that learned
behavior can be compared against exact quantities: GridNav against tabular
value iteration, PointMass against the geometry of straight-line motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EpisodeFinishedError(RuntimeError):
    """step() was called on an episode that already terminated."""


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_kind: str  # "discrete" or "continuous"
    horizon: int
    n_actions: int | None = None
    action_dim: int | None = None


class GridNav:
    """5x5 gridworld, goal in the far corner.

    Every step costs 0.01; stepping onto the goal additionally pays +1 and
    ends the episode. Moves off the edge clamp in place (and still cost).
    Actions: 0 = up (+y), 1 = down (-y), 2 = left (-x), 3 = right (+x).
    Observations are a one-hot over the 25 cells, index y * 5 + x.
    """

    SIZE = 5
    GOAL = (4, 4)
    STEP_PENALTY = -0.01
    GOAL_REWARD = 1.0
    MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))

    def __init__(self, horizon: int = 100):
        self.horizon = horizon
        self._pos: tuple[int, int] | None = None
        self._steps = 0
        self._done = True

    @property
    def state(self) -> tuple[int, int]:
        assert self._pos is not None, "reset() before reading state"
        return self._pos

    def _obs(self) -> np.ndarray:
        obs = np.zeros(self.SIZE * self.SIZE)
        x, y = self._pos
        obs[y * self.SIZE + x] = 1.0
        return obs

    def reset(self, start: tuple[int, int] | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if start is None:
            if rng is None:
                start = (0, 0)
            else:
                # Uniform over the 24 non-goal cells.
                idx = int(rng.integers(self.SIZE * self.SIZE - 1))
                goal_idx = self.GOAL[1] * self.SIZE + self.GOAL[0]
                if idx >= goal_idx:
                    idx += 1
                start = (idx % self.SIZE, idx // self.SIZE)
        if start == self.GOAL:
            raise ValueError("cannot start on the goal cell")
        self._pos = start
        self._steps = 0
        self._done = False
        return self._obs()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise EpisodeFinishedError("episode is finished; call reset()")
        if not 0 <= action < 4:
            raise ValueError(f"action must be in 0..3, got {action}")
        dx, dy = self.MOVES[action]
        x, y = self._pos
        nx = min(max(x + dx, 0), self.SIZE - 1)
        ny = min(max(y + dy, 0), self.SIZE - 1)
        self._pos = (nx, ny)
        self._steps += 1
        reward = self.STEP_PENALTY
        if self._pos == self.GOAL:
            reward += self.GOAL_REWARD
            self._done = True
        elif self._steps >= self.horizon:
            self._done = True
        return self._obs(), reward, self._done


class PointMass:
    """Continuous 2D box with a fixed goal and dense negative-distance reward.

    pos' = clip(pos + 0.1 * a, -1, 1) componentwise; reward is
    -||pos' - goal||_2; the episode runs a fixed horizon with no early
    termination, so returns are always negative and approach zero from below
    as the controller improves.
    """

    GOAL = np.array([0.8, 0.8])
    ACTION_SCALE = 0.1

    def __init__(self, horizon: int = 200):
        self.horizon = horizon
        self._pos: np.ndarray | None = None
        self._steps = 0
        self._done = True

    @property
    def state(self) -> np.ndarray:
        assert self._pos is not None, "reset() before reading state"
        return self._pos.copy()

    def reset(self, start: np.ndarray | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if start is None:
            start = rng.uniform(-1.0, 1.0, size=2) if rng is not None else np.zeros(2)
        start = np.asarray(start, dtype=np.float64)
        if start.shape != (2,) or np.abs(start).max() > 1.0:
            raise ValueError("start must lie in [-1, 1]^2")
        self._pos = start.copy()
        self._steps = 0
        self._done = False
        return self._pos.copy()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise EpisodeFinishedError("episode is finished; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,):
            raise ValueError(f"action must have shape (2,), got {action.shape}")
        self._pos = np.clip(self._pos + self.ACTION_SCALE * action, -1.0, 1.0)
        self._steps += 1
        self._done = self._steps >= self.horizon
        reward = -float(np.linalg.norm(self._pos - self.GOAL))
        return self._pos.copy(), reward, self._done


ENV_SPECS = {
    "gridnav": EnvSpec(obs_dim=25, action_kind="discrete", horizon=100, n_actions=4),
    "pointmass": EnvSpec(obs_dim=2, action_kind="continuous", horizon=200, action_dim=2),
}

# Fixed evaluation starts: deterministic policies on deterministic dynamics
# make evaluation exactly repeatable. GridNav always evaluates from the
# corner opposite the goal; PointMass uses a spread roster so the average
# reflects control quality over the whole box.
GRIDNAV_EVAL_START = (0, 0)
POINTMASS_EVAL_STARTS = (
    (-0.9, -0.9),
    (0.9, -0.9),
    (-0.9, 0.9),
    (0.0, 0.0),
    (-0.5, 0.5),
    (0.5, -0.5),
    (-0.9, 0.0),
    (0.0, -0.9),
    (0.45, 0.45),
    (0.6, -0.7),
)


def make_env(name: str):
    if name == "gridnav":
        return GridNav()
    if name == "pointmass":
        return PointMass()
    raise ValueError(f"unknown environment {name!r}")


def gridnav_optimal_values(gamma: float, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Tabular value iteration for GridNav; returns V* indexed like the one-hot.

    The goal is absorbing with value 0. Deterministic dynamics plus gamma < 1
    drive the Bellman residual below tol quickly; the residual after the
    returned sweep is below tol by construction.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    size = GridNav.SIZE
    goal_idx = GridNav.GOAL[1] * size + GridNav.GOAL[0]
    v = np.zeros(size * size)
    # next_idx[s, a] and reward[s, a] for the deterministic step.
    next_idx = np.empty((size * size, 4), dtype=np.int64)
    reward = np.full((size * size, 4), GridNav.STEP_PENALTY)
    for y in range(size):
        for x in range(size):
            s = y * size + x
            for a, (dx, dy) in enumerate(GridNav.MOVES):
                nx = min(max(x + dx, 0), size - 1)
                ny = min(max(y + dy, 0), size - 1)
                ns = ny * size + nx
                next_idx[s, a] = ns
                if ns == goal_idx:
                    reward[s, a] += GridNav.GOAL_REWARD
    for _ in range(max_iter):
        q = reward + gamma * v[next_idx]
        q[goal_idx, :] = 0.0  # absorbing
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() < tol:
            return v_new
        v = v_new
    raise RuntimeError("value iteration did not converge")


def gridnav_bellman_residual(v: np.ndarray, gamma: float) -> float:
    """Sup-norm Bellman residual of a value table; 0 at the fixed point."""
    size = GridNav.SIZE
    goal_idx = GridNav.GOAL[1] * size + GridNav.GOAL[0]
    best = np.full(size * size, -np.inf)
    for y in range(size):
        for x in range(size):
            s = y * size + x
            if s == goal_idx:
                best[s] = 0.0
                continue
            for dx, dy in GridNav.MOVES:
                nx = min(max(x + dx, 0), size - 1)
                ny = min(max(y + dy, 0), size - 1)
                ns = ny * size + nx
                r = GridNav.STEP_PENALTY + (GridNav.GOAL_REWARD if ns == goal_idx else 0.0)
                best[s] = max(best[s], r + gamma * v[ns])
    return float(np.abs(best - v).max())


def gridnav_path_value(distance: int, gamma: float) -> float:
    """Discounted return of a shortest path of the given Manhattan length.

    Every step pays the penalty, the final one additionally the goal bonus:
    sum_{k=1}^{d} gamma^{k-1} * (-0.01) + gamma^{d-1} * 1.
    """
    if distance < 1:
        raise ValueError("distance must be at least 1")
    penalty_part = GridNav.STEP_PENALTY * (1.0 - gamma**distance) / (1.0 - gamma)
    return penalty_part + gamma ** (distance - 1) * GridNav.GOAL_REWARD
