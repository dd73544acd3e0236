"""Double DQN with optional value-churn regularization."""

from __future__ import annotations

import numpy as np

from ..chain import ChainConfig, LambdaController, combined_gradient, value_churn_loss
from ..metrics import (
    ChurnReport,
    all_action_value_churn,
    greedy_action_deviation,
    greedy_value_churn,
    value_churn,
)
from ..nets import Adam, LearningRateRule, MlpSpec, build_mlp
from ..replay import Batch, ReplayBuffer
from .common import AgentHyperparams, UpdateDiagnostics, epsilon_at


class DdqnAgent:
    """Epsilon-greedy control with a hard-synced target network.

    Bootstrap targets pick the argmax action with the online network and
    score it with the target network. The optional regularizer pins the
    online network's outputs on an independent batch to their values from
    before the previous update.
    """

    def __init__(
        self,
        net_spec: MlpSpec,
        hp: AgentHyperparams,
        chain: ChainConfig,
        lr_rule: LearningRateRule,
        init_rng: np.random.Generator,
    ):
        self.n_actions = net_spec.output_dim
        self.hp = hp
        self.chain = chain
        self.batch_size = 32 if hp.batch_size is None else hp.batch_size
        self.reg_batch_size = self.batch_size if hp.reg_batch_size is None else hp.reg_batch_size
        self.q = build_mlp(net_spec, init_rng)
        self.target_params = self.q.params.copy()
        self.prev_params = self.q.params.copy()
        self.opt = Adam(self.q.n_params, lr_rule.effective(net_spec.scale_ratio))
        self.controller = (
            LambdaController(chain.beta, chain.auto, chain.lambda_q) if chain.value_reg_active else None
        )
        self.update_count = 0

    def make_buffer(self, obs_dim: int) -> ReplayBuffer:
        capacity = 500_000 if self.hp.buffer_capacity is None else self.hp.buffer_capacity
        return ReplayBuffer(capacity, obs_dim)

    @property
    def initial_random_steps(self) -> int:
        return 10_000 if self.hp.initial_random_steps is None else self.hp.initial_random_steps

    def act(self, obs: np.ndarray, env_step: int, rng: np.random.Generator) -> int:
        eps = epsilon_at(env_step, self.hp.epsilon_start, self.hp.epsilon_end, self.hp.epsilon_decay_steps)
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        return self.greedy_action(obs)

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(self.q.forward(obs[None, :]).argmax())

    def td_loss_and_grad(self, b: Batch) -> tuple[float, np.ndarray]:
        """Semi-gradient of the double-estimator TD loss on one batch.

        The bootstrap target scores the online argmax action with the target
        network and is treated as a constant, as usual.
        """
        n = b.obs.shape[0]
        rows = np.arange(n)
        a_star = self.q.forward(b.next_obs).argmax(axis=1)
        q_next = self.q.forward(b.next_obs, params=self.target_params)[rows, a_star]
        y = b.rewards + self.hp.gamma * (1.0 - b.dones) * q_next

        q_all, cache = self.q.forward_full(b.obs)
        td = q_all[rows, b.actions] - y
        loss = float((td * td).mean())
        cot = np.zeros_like(q_all)
        cot[rows, b.actions] = (2.0 / n) * td
        grad, _ = self.q.backward(cache, cot)
        return loss, grad

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateDiagnostics:
        reg_size = self.reg_batch_size if self.controller is not None else 0
        trip = buffer.sample_triplet(self.batch_size, reg_size, 0, rng)
        b = trip.train

        td_loss, grad = self.td_loss_and_grad(b)

        lam = None
        reg_loss = None
        if self.controller is not None:
            lam = self.controller.current_lambda()
            reg_loss, reg_grad = value_churn_loss(self.q, trip.reg.obs, self.prev_params, trip.reg.actions)
            grad = combined_gradient(grad, reg_grad, lam)
            self.controller.observe(td_loss, reg_loss, lam)

        grad_norm = float(np.linalg.norm(grad))
        # The regularization target trails by exactly one update: gradients
        # above used the parameters from before the previous step.
        self.prev_params = self.q.params.copy()
        self.opt.step(self.q.params, grad)
        self.update_count += 1
        if self.update_count % self.hp.target_sync_interval == 0:
            self.target_params = self.q.params.copy()

        return UpdateDiagnostics(
            update_index=self.update_count,
            value_loss=td_loss,
            value_reg_loss=reg_loss,
            lambda_q=lam,
            value_grad_norm=grad_norm,
        )

    def churn_payload(self) -> dict[str, np.ndarray]:
        return {"q": self.q.params}

    def measure_churn(self, lag: int, stored: dict[str, np.ndarray], ref: Batch) -> ChurnReport:
        now, old = self.q.params, stored["q"]
        signed, absolute = value_churn(self.q, ref.obs, now, old, action_indices=ref.actions)
        return ChurnReport(
            lag=lag,
            value_churn_signed=signed,
            value_churn_abs=absolute,
            all_action_value_churn=all_action_value_churn(self.q, ref.obs, now, old),
            greedy_value_churn=greedy_value_churn(self.q, ref.obs, now, old),
            greedy_action_deviation=greedy_action_deviation(self.q, ref.obs, now, old),
        )
