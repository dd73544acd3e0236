import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from churnlab.chain import policy_churn_loss
from churnlab.metrics import (
    ChurnReport,
    SnapshotRing,
    all_action_value_churn,
    greedy_action_deviation,
    greedy_value_churn,
    policy_churn,
    policy_value_deviation,
    value_churn,
)
from churnlab.nets import DeterministicPolicy, DiagGaussianPolicy, MlpSpec, build_mlp


@pytest.fixture
def qnet():
    return build_mlp(MlpSpec(4, 3, base_width=8, base_depth=2), 0)


def perturbed(params, scale, seed):
    return params + scale * np.random.default_rng(seed).standard_normal(params.shape)


def test_value_churn_signed_and_abs(qnet):
    rng = np.random.default_rng(1)
    obs = rng.standard_normal((16, 4))
    ai = rng.integers(0, 3, size=16)
    old = perturbed(qnet.params, 0.1, 2)
    signed, absolute = value_churn(qnet, obs, qnet.params, old, action_indices=ai)
    rows = np.arange(16)
    d = qnet.forward(obs)[rows, ai] - qnet.forward(obs, params=old)[rows, ai]
    assert signed == pytest.approx(d.mean(), rel=1e-12)
    assert absolute == pytest.approx(np.abs(d).mean(), rel=1e-12)
    assert absolute >= abs(signed)


def test_value_churn_scalar_head_requires_no_indices():
    net = build_mlp(MlpSpec(4, 1, base_width=8, base_depth=2), 3)
    obs = np.random.default_rng(3).standard_normal((8, 4))
    signed, absolute = value_churn(net, obs, net.params, perturbed(net.params, 0.1, 4))
    assert absolute > 0.0
    multi = build_mlp(MlpSpec(4, 3, base_width=8, base_depth=2), 3)
    with pytest.raises(ValueError):
        value_churn(multi, obs, multi.params, multi.params.copy())


def test_all_action_and_greedy_metrics(qnet):
    rng = np.random.default_rng(5)
    obs = rng.standard_normal((12, 4))
    old = perturbed(qnet.params, 0.2, 6)
    q_now, q_old = qnet.forward(obs), qnet.forward(obs, params=old)
    assert all_action_value_churn(qnet, obs, qnet.params, old) == pytest.approx(
        np.abs(q_now - q_old).mean(), rel=1e-12
    )
    assert greedy_value_churn(qnet, obs, qnet.params, old) == pytest.approx(
        (q_now.max(axis=1) - q_old.max(axis=1)).mean(), rel=1e-12
    )
    dev = greedy_action_deviation(qnet, obs, qnet.params, old)
    assert dev == pytest.approx((q_now.argmax(axis=1) != q_old.argmax(axis=1)).mean())


def test_all_metrics_zero_at_identical_params(qnet):
    obs = np.random.default_rng(7).standard_normal((6, 4))
    same = qnet.params.copy()
    assert value_churn(qnet, obs, qnet.params, same, action_indices=np.zeros(6, dtype=np.int64)) == (0.0, 0.0)
    assert all_action_value_churn(qnet, obs, qnet.params, same) == 0.0
    assert greedy_value_churn(qnet, obs, qnet.params, same) == 0.0
    assert greedy_action_deviation(qnet, obs, qnet.params, same) == 0.0


def test_metrics_do_not_mutate_network(qnet):
    obs = np.random.default_rng(8).standard_normal((6, 4))
    old = perturbed(qnet.params, 0.1, 8)
    before = qnet.params.copy()
    value_churn(qnet, obs, qnet.params, old, action_indices=np.zeros(6, dtype=np.int64))
    all_action_value_churn(qnet, obs, qnet.params, old)
    greedy_action_deviation(qnet, obs, qnet.params, old)
    assert np.array_equal(qnet.params, before)


def test_policy_churn_l1_sums_action_dims():
    policy = DeterministicPolicy(build_mlp(MlpSpec(3, 2, base_width=8, base_depth=2), 9))
    obs = np.random.default_rng(9).standard_normal((7, 3))
    old = perturbed(policy.params, 0.3, 10)
    got = policy_churn(policy, obs, policy.params, old, kind="l1")
    manual = np.abs(policy.act(obs) - policy.act(obs, params=old)).sum(axis=1).mean()
    assert got == pytest.approx(manual, rel=1e-12)
    # Same movement, two conventions: the L1 metric sums over action dims
    # while the regularization loss averages over every element, so with two
    # action dims and small drifts the metric is numerically the larger one.
    loss, _ = policy_churn_loss(policy, obs, old)
    assert got > loss


def test_policy_churn_l1_uses_means_for_gaussians():
    policy = DiagGaussianPolicy(build_mlp(MlpSpec(3, 2, base_width=8, base_depth=2), 11), action_dim=2)
    obs = np.random.default_rng(11).standard_normal((5, 3))
    old = policy.params.copy()
    old[-2:] += 3.0  # only the log-stds move
    assert policy_churn(policy, obs, policy.params, old, kind="l1") == 0.0
    kl = policy_churn(policy, obs, policy.params, old, kind="kl")
    assert kl > 0.0


def test_policy_churn_kl_matches_closed_form():
    policy = DiagGaussianPolicy(build_mlp(MlpSpec(3, 2, base_width=8, base_depth=2), 12), action_dim=2)
    obs = np.random.default_rng(12).standard_normal((5, 3))
    old = perturbed(policy.params, 0.2, 13)
    got = policy_churn(policy, obs, policy.params, old, kind="kl")
    mn, ln = policy.dist(obs)
    mo, lo = policy.dist(obs, params=old)
    sn, so = np.exp(ln), np.exp(lo)
    kl = (np.log(so / sn) + (sn**2 + (mn - mo) ** 2) / (2.0 * so**2) - 0.5).sum(axis=1).mean()
    assert got == pytest.approx(float(kl), rel=1e-12)
    with pytest.raises(ValueError):
        policy_churn(policy, obs, policy.params, old, kind="tv")


def test_policy_value_deviation_sign():
    q = build_mlp(MlpSpec(4, 1, base_width=8, base_depth=2), 14)
    rng = np.random.default_rng(14)
    obs = rng.standard_normal((6, 2))
    a_now = rng.standard_normal((6, 2))
    a_old = rng.standard_normal((6, 2))
    dev = policy_value_deviation(q, obs, a_now, a_old)
    manual = (
        q.forward(np.concatenate([obs, a_now], axis=1))[:, 0]
        - q.forward(np.concatenate([obs, a_old], axis=1))[:, 0]
    ).mean()
    assert dev == pytest.approx(float(manual), rel=1e-12)
    assert policy_value_deviation(q, obs, a_now, a_now) == 0.0


def test_churn_report_metric_items():
    r = ChurnReport(lag=3, value_churn_abs=0.5, policy_churn=0.1)
    assert dict(r.metric_items()) == {"value_churn_abs": 0.5, "policy_churn": 0.1}
    assert list(ChurnReport(lag=1).metric_items()) == []


def measure_lag_only(lag, stored):
    return ChurnReport(lag=lag, value_churn_abs=float(stored["q"][0]))


def test_ring_reports_then_pushes():
    ring = SnapshotRing(max_lags=3, interval=10)
    assert ring.record(10, {"q": np.array([1.0])}, measure_lag_only) == []
    assert ring.record(15, {"q": np.array([9.9])}, measure_lag_only) == []  # off-interval: ignored
    reports = ring.record(20, {"q": np.array([2.0])}, measure_lag_only)
    assert [r.lag for r in reports] == [1]
    assert reports[0].value_churn_abs == 1.0  # measured against the stored snapshot
    reports = ring.record(40, {"q": np.array([4.0])}, measure_lag_only)
    assert [r.lag for r in reports] == [3, 2]


def test_ring_eviction_bounds_lag():
    ring = SnapshotRing(max_lags=2, interval=1)
    for t in range(1, 6):
        reports = ring.record(t, {"q": np.array([float(t)])}, measure_lag_only)
        if t >= 3:
            assert [r.lag for r in reports] == [2, 1]


def test_ring_copies_payload():
    ring = SnapshotRing(max_lags=2, interval=1)
    arr = np.array([5.0])
    ring.record(1, {"q": arr}, measure_lag_only)
    arr[0] = -1.0
    reports = ring.record(2, {"q": np.array([6.0])}, measure_lag_only)
    assert reports[0].value_churn_abs == 5.0


def test_ring_zero_churn_without_training(qnet):
    # A snapshot taken, nothing trained, next interval: lag-1 churn must be 0.
    obs = np.random.default_rng(15).standard_normal((4, 4))
    ring = SnapshotRing(max_lags=5, interval=100)

    def measure(lag, stored):
        return ChurnReport(lag=lag, all_action_value_churn=all_action_value_churn(qnet, obs, qnet.params, stored["q"]))

    ring.record(100, {"q": qnet.params}, measure)
    reports = ring.record(200, {"q": qnet.params}, measure)
    assert reports[0].lag == 1 and reports[0].all_action_value_churn == 0.0


@given(st.integers(1, 5), st.integers(1, 50))
@settings(max_examples=20, deadline=None)
def test_ring_lag_arithmetic(max_lags, interval):
    ring = SnapshotRing(max_lags=max_lags, interval=interval)
    for k in range(1, 12):
        reports = ring.record(k * interval, {"q": np.zeros(1)}, measure_lag_only)
        expected = list(range(min(k - 1, max_lags), 0, -1))
        assert [r.lag for r in reports] == expected
