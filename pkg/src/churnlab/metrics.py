"""Churn measurement on held-out reference batches.

Churn here means output movement of a network between two points of training
on inputs it was not just trained on, indexed by lag (how many measurement
intervals apart the two points are). All functions evaluate networks at
explicit parameter vectors and never touch training state, so measuring is
free of side effects on the run being measured.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .nets import DiagGaussianPolicy, Mlp, SquashedGaussianPolicy


@dataclass(frozen=True)
class ChurnReport:
    """Per-lag metric bundle; fields not applicable to an agent stay None."""

    lag: int
    value_churn_signed: float | None = None
    value_churn_abs: float | None = None
    all_action_value_churn: float | None = None
    greedy_value_churn: float | None = None
    greedy_action_deviation: float | None = None
    policy_churn: float | None = None
    policy_value_deviation: float | None = None

    def metric_items(self):
        """(metric_name, value) pairs for every populated metric."""
        for f in fields(self):
            if f.name == "lag":
                continue
            v = getattr(self, f.name)
            if v is not None:
                yield f.name, v


def value_churn(
    net: Mlp,
    obs: np.ndarray,
    params_now: np.ndarray,
    params_old: np.ndarray,
    action_indices: np.ndarray | None = None,
) -> tuple[float, float]:
    """Signed and absolute mean output drift at the stored actions.

    With action_indices=None the network must have a single output column
    (scalar critics and state-value heads).
    """
    q_now = net.forward(obs, params=params_now)
    q_old = net.forward(obs, params=params_old)
    if action_indices is None:
        if q_now.shape[1] != 1:
            raise ValueError("action_indices required for multi-column value heads")
        d = q_now[:, 0] - q_old[:, 0]
    else:
        rows = np.arange(obs.shape[0])
        d = q_now[rows, action_indices] - q_old[rows, action_indices]
    return float(d.mean()), float(np.abs(d).mean())


def all_action_value_churn(net: Mlp, obs: np.ndarray, params_now: np.ndarray, params_old: np.ndarray) -> float:
    """Mean over states of the mean absolute drift across all actions."""
    d = net.forward(obs, params=params_now) - net.forward(obs, params=params_old)
    return float(np.abs(d).mean(axis=1).mean())


def greedy_value_churn(net: Mlp, obs: np.ndarray, params_now: np.ndarray, params_old: np.ndarray) -> float:
    """Signed drift of the greedy value, max_a Q_now - max_a Q_old."""
    q_now = net.forward(obs, params=params_now)
    q_old = net.forward(obs, params=params_old)
    return float((q_now.max(axis=1) - q_old.max(axis=1)).mean())


def greedy_action_deviation(net: Mlp, obs: np.ndarray, params_now: np.ndarray, params_old: np.ndarray) -> float:
    """Fraction of states whose greedy action changed (ties break to the lowest index)."""
    a_now = net.forward(obs, params=params_now).argmax(axis=1)
    a_old = net.forward(obs, params=params_old).argmax(axis=1)
    return float((a_now != a_old).mean())


def policy_churn(policy, obs: np.ndarray, params_now: np.ndarray, params_old: np.ndarray, kind: str) -> float:
    """Distribution movement of a policy between two parameter vectors.

    kind="l1": mean over states of the L1 distance between action means
    (summed over action dims). kind="kl": KL(now || old) of the pre-squash
    Gaussians, summed over dims, averaged over states.
    """
    if kind == "l1":
        if isinstance(policy, (DiagGaussianPolicy, SquashedGaussianPolicy)):
            a_now, _ = policy.dist(obs, params=params_now)
            a_old, _ = policy.dist(obs, params=params_old)
        else:
            a_now = policy.act(obs, params=params_now)
            a_old = policy.act(obs, params=params_old)
        return float(np.abs(a_now - a_old).sum(axis=1).mean())
    if kind == "kl":
        mean_n, ls_n = policy.dist(obs, params=params_now)
        mean_o, ls_o = policy.dist(obs, params=params_old)
        var_ratio = np.exp(2.0 * (ls_n - ls_o))
        dmean = mean_n - mean_o
        kl = ls_o - ls_n + 0.5 * var_ratio + 0.5 * dmean * dmean * np.exp(-2.0 * ls_o) - 0.5
        kl = np.broadcast_to(kl, mean_n.shape)
        return float(kl.sum(axis=1).mean())
    raise ValueError(f"kind must be 'l1' or 'kl', got {kind!r}")


def policy_value_deviation(q_net: Mlp, obs: np.ndarray, actions_now: np.ndarray, actions_old: np.ndarray) -> float:
    """How much the current critic prefers the new policy's actions over the old ones.

    Both action sets are scored under the same (current) critic parameters;
    positive values mean the policy moved toward higher current value.
    """
    q_now = q_net.forward(np.concatenate([obs, actions_now], axis=1))[:, 0]
    q_old = q_net.forward(np.concatenate([obs, actions_old], axis=1))[:, 0]
    return float((q_now - q_old).mean())


class SnapshotRing:
    """Bounded history of parameter snapshots taken every ``interval`` updates.

    ``record`` first measures the current parameters against every stored
    snapshot (lag = age in intervals), then stores the current ones. The
    measure callback receives (lag, stored_payload) and returns a
    ChurnReport; payloads are opaque dicts of flat parameter vectors so one
    ring serves any agent.
    """

    def __init__(self, max_lags: int, interval: int):
        if max_lags <= 0 or interval <= 0:
            raise ValueError("max_lags and interval must be positive")
        self.max_lags = max_lags
        self.interval = interval
        self._entries: list[tuple[int, dict[str, np.ndarray]]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def due(self, update_index: int) -> bool:
        return update_index % self.interval == 0

    def record(self, update_index: int, payload: dict[str, np.ndarray], measure) -> list[ChurnReport]:
        """Measure against history, then push; no-op between interval marks."""
        if not self.due(update_index):
            return []
        reports = []
        for stored_index, stored in self._entries:
            lag = (update_index - stored_index) // self.interval
            reports.append(measure(lag, stored))
        self._entries.append((update_index, {k: v.copy() for k, v in payload.items()}))
        if len(self._entries) > self.max_lags:
            self._entries.pop(0)
        return reports
