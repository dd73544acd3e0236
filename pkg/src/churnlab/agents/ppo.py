"""PPO with clipped surrogate and optional policy-churn regularization.

The regularizer is added to the policy's minibatch objective and nothing
else changes: same rollouts, same advantage estimates, same clipping. Its
reference batch is drawn from the training indices of the current rollout
segment, since there is no replay buffer to draw from.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..chain import ChainConfig, LambdaController, combined_gradient, policy_churn_loss, value_churn_loss
from ..metrics import ChurnReport, policy_churn, value_churn
from ..nets import Adam, DiagGaussianPolicy, LearningRateRule, MlpSpec, build_mlp
from .common import AgentHyperparams, UpdateDiagnostics

HOLDOUT_STRIDE = 8  # every 8th transition is excluded from training and kept for probes


class Rollout(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    logps: np.ndarray
    values: np.ndarray
    last_value: float  # V(s_T) for bootstrapping a mid-episode cut


class PpoAgent:
    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        policy_spec: MlpSpec,
        value_spec: MlpSpec,
        hp: AgentHyperparams,
        chain: ChainConfig,
        lr_rule: LearningRateRule,
        init_rng: np.random.Generator,
    ):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hp = hp
        self.chain = chain
        self.policy = DiagGaussianPolicy(build_mlp(policy_spec, init_rng), action_dim, hp.init_log_std)
        self.value = build_mlp(value_spec, init_rng)
        self.prev_policy = self.policy.params.copy()
        self.prev_value = self.value.params.copy()
        self.opt_policy = Adam(self.policy.n_params, lr_rule.effective(policy_spec.scale_ratio))
        self.opt_value = Adam(self.value.n_params, lr_rule.effective(value_spec.scale_ratio))
        self.policy_controller = (
            LambdaController(chain.beta, chain.auto, chain.lambda_pi) if chain.policy_reg_active else None
        )
        self.value_controller = (
            LambdaController(chain.beta, chain.auto, chain.lambda_q) if chain.value_reg_active else None
        )
        self.update_count = 0

    def act_rollout(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
        """Sample an action and record its log-density and the state value."""
        mean, log_std = self.policy.dist(obs[None, :])
        action = self.policy.sample(mean, log_std, rng)
        logp = float(self.policy.log_prob(mean, log_std, action)[0])
        value = float(self.value.forward(obs[None, :])[0, 0])
        return action[0], logp, value

    def greedy_action(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self.policy.dist(obs[None, :])
        return mean[0]

    def state_value(self, obs: np.ndarray) -> float:
        return float(self.value.forward(obs[None, :])[0, 0])

    def compute_gae(self, rollout: Rollout) -> tuple[np.ndarray, np.ndarray]:
        """Backward GAE recursion; episode ends stop both bootstrap and trace."""
        T = rollout.rewards.shape[0]
        adv = np.zeros(T)
        last = 0.0
        for t in range(T - 1, -1, -1):
            next_value = rollout.values[t + 1] if t + 1 < T else rollout.last_value
            nonterminal = 1.0 - rollout.dones[t]
            delta = rollout.rewards[t] + self.hp.gamma * nonterminal * next_value - rollout.values[t]
            last = delta + self.hp.gamma * self.hp.gae_lambda * nonterminal * last
            adv[t] = last
        return adv, adv + rollout.values

    def split_indices(self, T: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(T)
        holdout = idx[idx % HOLDOUT_STRIDE == HOLDOUT_STRIDE - 1]
        return idx[idx % HOLDOUT_STRIDE != HOLDOUT_STRIDE - 1], holdout

    def update_rollout(self, rollout: Rollout, rng: np.random.Generator, after_update=None):
        """Run the epoch/minibatch phase on one rollout.

        Returns (diagnostics list, trust-region probe stats). The probe
        compares the post-update policy to the one that collected the data,
        on transitions no minibatch ever trained on.
        """
        train_idx, holdout = self.split_indices(rollout.obs.shape[0])
        adv, returns = self.compute_gae(rollout)
        # Normalized once per rollout with training-set statistics; epochs
        # reuse the same advantages, so renormalizing per epoch would be a no-op.
        mu = adv[train_idx].mean()
        sd = adv[train_idx].std()
        adv_norm = (adv - mu) / (sd + 1e-8)

        diags = []
        for _ in range(self.hp.n_epochs):
            perm = train_idx[rng.permutation(train_idx.shape[0])]
            for mb in np.array_split(perm, self.hp.n_minibatches):
                diags.append(self._minibatch_update(rollout, adv_norm, returns, mb, train_idx, rng))
                if after_update is not None:
                    after_update(self.update_count)

        probe = self._trust_probe(rollout, holdout)
        return diags, probe

    def surrogate_loss_and_grad(
        self, obs: np.ndarray, actions: np.ndarray, logps_old: np.ndarray, adv: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Clipped-surrogate loss -E[min(r A, clip(r) A)] and its policy gradient.

        Subgradient convention for the min: flow through the ratio wherever
        the unclipped branch attains the minimum, zero where the clip binds.
        """
        n = obs.shape[0]
        mean, log_std, cache = self.policy.dist_full(obs)
        std = np.exp(log_std)
        z = (actions - mean) / std
        logp = self.policy.log_prob(mean, log_std, actions)
        ratio = np.exp(logp - logps_old)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - self.hp.clip_epsilon, 1.0 + self.hp.clip_epsilon) * adv
        loss = float(-np.minimum(unclipped, clipped).mean())
        flow = unclipped <= clipped
        grad_logp = -(ratio * adv) * flow / n
        g_mean = grad_logp[:, None] * (z / std)
        g_log_std = grad_logp[:, None] * (z * z - 1.0)
        return loss, self.policy.dist_backward(cache, g_mean, g_log_std)

    def _minibatch_update(self, rollout, adv_norm, returns, mb, train_idx, rng) -> UpdateDiagnostics:
        obs = rollout.obs[mb]
        n = obs.shape[0]
        policy_loss, grad_pi = self.surrogate_loss_and_grad(
            obs, rollout.actions[mb], rollout.logps[mb], adv_norm[mb]
        )

        reg_n = n if self.hp.reg_batch_size is None else self.hp.reg_batch_size
        lam_pi = None
        reg_loss_pi = None
        if self.policy_controller is not None:
            lam_pi = self.policy_controller.current_lambda()
            ridx = rng.choice(train_idx, size=min(reg_n, train_idx.shape[0]), replace=False)
            reg_loss_pi, reg_grad_pi = policy_churn_loss(self.policy, rollout.obs[ridx], self.prev_policy)
            grad_pi = combined_gradient(grad_pi, reg_grad_pi, lam_pi)
            self.policy_controller.observe(policy_loss, reg_loss_pi, lam_pi)
        policy_grad_norm = float(np.linalg.norm(grad_pi))
        self.prev_policy = self.policy.params.copy()
        self.opt_policy.step(self.policy.params, grad_pi)

        v, vcache = self.value.forward_full(obs)
        vdiff = v[:, 0] - returns[mb]
        value_loss = float((vdiff * vdiff).mean())
        grad_v, _ = self.value.backward(vcache, ((2.0 / n) * vdiff)[:, None])
        lam_q = None
        reg_loss_v = None
        if self.value_controller is not None:
            lam_q = self.value_controller.current_lambda()
            vidx = rng.choice(train_idx, size=min(reg_n, train_idx.shape[0]), replace=False)
            reg_loss_v, reg_grad_v = value_churn_loss(self.value, rollout.obs[vidx], self.prev_value)
            grad_v = combined_gradient(grad_v, reg_grad_v, lam_q)
            self.value_controller.observe(value_loss, reg_loss_v, lam_q)
        value_grad_norm = float(np.linalg.norm(grad_v))
        self.prev_value = self.value.params.copy()
        self.opt_value.step(self.value.params, grad_v)

        self.update_count += 1
        return UpdateDiagnostics(
            update_index=self.update_count,
            value_loss=value_loss,
            value_reg_loss=reg_loss_v,
            lambda_q=lam_q,
            value_grad_norm=value_grad_norm,
            policy_loss=policy_loss,
            policy_reg_loss=reg_loss_pi,
            lambda_pi=lam_pi,
            policy_grad_norm=policy_grad_norm,
        )

    def _trust_probe(self, rollout: Rollout, holdout: np.ndarray) -> dict[str, float]:
        obs = rollout.obs[holdout]
        mean, log_std = self.policy.dist(obs)
        logp = self.policy.log_prob(mean, log_std, rollout.actions[holdout])
        ratio = np.exp(logp - rollout.logps[holdout])
        eps = self.hp.clip_epsilon
        return {
            "ratio_mean_abs_dev": float(np.abs(ratio - 1.0).mean()),
            "ratio_violation_fraction": float(((ratio < 1.0 - eps) | (ratio > 1.0 + eps)).mean()),
        }

    def churn_payload(self) -> dict[str, np.ndarray]:
        return {"pi": self.policy.params, "v": self.value.params}

    def measure_churn(self, lag: int, stored: dict[str, np.ndarray], ref_obs: np.ndarray) -> ChurnReport:
        signed, absolute = value_churn(self.value, ref_obs, self.value.params, stored["v"])
        return ChurnReport(
            lag=lag,
            value_churn_signed=signed,
            value_churn_abs=absolute,
            policy_churn=policy_churn(self.policy, ref_obs, self.policy.params, stored["pi"], kind="l1"),
        )
