"""Uniform replay with independent train / regularization / reference draws."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class InsufficientDataError(RuntimeError):
    """A sample was requested before the buffer held enough transitions."""


class Transition(NamedTuple):
    obs: np.ndarray
    action: int | np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray  # float64 0/1, ready for (1 - d) bootstrap masks


class BatchTriplet(NamedTuple):
    train: Batch
    reg: Batch
    ref: Batch


class ReplayBuffer:
    """Fixed-capacity circular buffer over flat transition columns.

    Oldest entries are overwritten first. Sampling is uniform without
    replacement within one batch; separate batches are drawn independently
    and may overlap each other.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        if action_dim is None:
            self.actions = np.zeros(capacity, dtype=np.int64)
        else:
            self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.insertion_count = 0

    @property
    def size(self) -> int:
        return min(self.insertion_count, self.capacity)

    def add(self, obs: np.ndarray, action, reward: float, next_obs: np.ndarray, done: bool) -> None:
        i = self.insertion_count % self.capacity
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.insertion_count += 1

    def _empty(self) -> Batch:
        return Batch(self.obs[:0].copy(), self.actions[:0].copy(), self.rewards[:0].copy(),
                     self.next_obs[:0].copy(), self.dones[:0].copy())

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.dones[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform batch without replacement; empty requests consume no randomness."""
        if batch_size == 0:
            return self._empty()
        if batch_size > self.size:
            raise InsufficientDataError(f"requested {batch_size} of {self.size} stored transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self._gather(idx)

    def sample_triplet(self, train_size: int, reg_size: int, ref_size: int, rng: np.random.Generator) -> BatchTriplet:
        """Three independent uniform batches (training, regularization, reference).

        Draw order is fixed (train, reg, ref) so a given rng state always
        yields the same triplet; zero-size requests are skipped entirely and
        leave the rng untouched, which keeps runs with a disabled
        regularizer on the exact random stream of a plain run.
        """
        return BatchTriplet(
            self.sample(train_size, rng),
            self.sample(reg_size, rng),
            self.sample(ref_size, rng),
        )
