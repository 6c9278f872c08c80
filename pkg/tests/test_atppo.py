"""
Tests for the joint policy, the clipped-surrogate learner, training and evaluation.
"""

import math

import numpy as np
import pytest

import src.services.atppo as atppo
from src.core.errors import ConfigurationError, DimensionError, NumericError
from src.models.schemas import Algorithm, AtppoHyper, IntegratorConfig, MetricRow, RunConfig
from src.services.atppo import (
    MetricLog,
    algorithm_label,
    clipped_surrogate,
    evaluate,
    learner_init,
    ppo_update,
    run_episodes,
    surrogate_loss_and_grads,
    train,
)
from src.services.checkpoint import load_checkpoint
from src.services.engagement_env import EngagementEnv
from src.services.integrator_env import IntegratorEnv
from src.services.nn_core import (
    Network,
    adam_init,
    adam_step,
    bernoulli_logprob,
    clamp_log_std,
    clip_grad_norm,
    gaussian_logprob,
    gaussian_logprob_grads,
    net_backward,
    net_forward,
)
from src.services.policy import (
    ActMode,
    PolicyModel,
    act,
    augment,
    augmented_dim,
    joint_logprob,
    policy_init,
    shaped_reward,
    value_init,
)
from src.services.rollout import TriggeredRunner, collect_rollout, finalize_batch, normalize_advantages
from src.utils.helpers import make_env


def _tiny_config(algorithm: str = "atppo", **hyper) -> RunConfig:
    base = {"horizon": 32, "total_steps": 64, "minibatch_size": 16, "epochs_per_batch": 2, "hidden_sizes": (8, 8)}
    return RunConfig(env="integrator", algorithm=algorithm, hyper={**base, **hyper}, env_overrides={"t_final": 0.2})


def _fixed_policy(mean: float, logit: float, log_std: float) -> PolicyModel:
    net = Network((2, 2), [np.zeros((2, 2))], [np.array([mean, logit])])
    return PolicyModel(net, np.array([log_std]), 1, True)


def _minibatch(policy: PolicyModel, spread: float, seed: int = 0, b: int = 12):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(b, policy.obs_dim))
    controls = rng.normal(size=(b, policy.control_dim))
    triggers = (rng.random(b) < 0.5).astype(float)
    lp, _, _, _ = joint_logprob(policy, obs, controls, triggers)
    old_logprob = lp + rng.uniform(-spread, spread, size=b)
    adv = rng.normal(size=b)
    returns = rng.normal(size=b)
    return obs, controls, triggers, old_logprob, adv, returns


def _fd_gradient(loss_fn, params, h: float = 1e-6):
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i][idx] += h
            minus[i][idx] -= h
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)
        grads.append(g)
    return grads


def _rel_err(a, b) -> float:
    fa = np.concatenate([np.ravel(x) for x in a])
    fb = np.concatenate([np.ravel(x) for x in b])
    return float(np.linalg.norm(fa - fb) / max(np.linalg.norm(fa) + np.linalg.norm(fb), 1e-12))


# ═══════════════════════════════════════════════════════════════════════════
# Policy
# ═══════════════════════════════════════════════════════════════════════════

class TestAugment:
    def test_appends_scaled_accrued(self):
        aug = augment(np.array([1.0, 2.0]), -50.0, c=100.0)
        assert aug.vector.tolist() == [1.0, 2.0, -0.5]

    def test_clipped(self):
        assert augment(np.zeros(1), -5000.0).accrued_reward == -10.0
        assert augment(np.zeros(1), 5000.0).accrued_reward == 10.0

    def test_bad_scale(self):
        with pytest.raises(ConfigurationError):
            augment(np.zeros(1), 0.0, c=0.0)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            augment(np.array([np.nan]), 0.0)
        with pytest.raises(NumericError):
            augment(np.zeros(1), np.inf)

    def test_held_control_appended_after_accrued(self):
        aug = augment(np.array([1.0, 2.0]), -50.0, c=100.0, held=np.array([0.25]))
        assert aug.vector.tolist() == [1.0, 2.0, -0.5, 0.25]
        assert augment(np.array([1.0]), 0.0).held_control is None

    def test_non_finite_held_control(self):
        with pytest.raises(NumericError):
            augment(np.zeros(1), 0.0, held=np.array([np.nan]))

    def test_augmented_dim(self):
        assert augmented_dim(5, 1) == 6
        assert augmented_dim(5, 1, observe_held_control=True) == 7
        assert augmented_dim(1, 3, observe_held_control=True) == 5


class TestAct:
    def test_sampling_distribution(self):
        policy = _fixed_policy(0.5, math.log(1.0 / 3.0), -1.0)
        obs = augment(np.zeros(1), 0.0)
        rng = np.random.default_rng(0)
        actions = [act(policy, obs, ActMode.SAMPLE, rng) for _ in range(20_000)]
        controls = np.array([a.control[0] for a in actions])
        triggers = np.array([a.trigger for a in actions])
        assert triggers.mean() == pytest.approx(0.25, abs=0.02)
        assert controls.mean() == pytest.approx(0.5, abs=0.02)
        assert controls.std() == pytest.approx(math.exp(-1.0), abs=0.02)

    def test_confident_trigger_head(self):
        policy = _fixed_policy(0.0, 20.0, 0.0)
        obs = augment(np.zeros(1), 0.0)
        rng = np.random.default_rng(2)
        fired = sum(act(policy, obs, ActMode.SAMPLE, rng).trigger for _ in range(100_000))
        assert fired / 100_000 >= 0.9999

    def test_logprob_is_joint(self):
        policy = _fixed_policy(0.5, 0.3, -0.5)
        a = act(policy, augment(np.zeros(1), 0.0), ActMode.SAMPLE, np.random.default_rng(1))
        expected = float(gaussian_logprob(np.array([0.5]), np.array([-0.5]), a.control)) + bernoulli_logprob(0.3, a.trigger)
        assert a.logprob == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("logit,expected", [(0.0, 1), (1e-9, 1), (-1e-3, 0), (3.0, 1), (-3.0, 0)])
    def test_deterministic_threshold(self, logit, expected):
        a = act(_fixed_policy(0.7, logit, 0.0), augment(np.zeros(1), 0.0), ActMode.DETERMINISTIC)
        assert a.trigger == expected
        assert a.control.tolist() == [0.7]

    def test_without_trigger_head_always_broadcasts(self):
        policy = policy_init(2, 1, (4,), seed=0, trigger_head=False)
        rng = np.random.default_rng(0)
        obs = augment(np.zeros(1), 0.0)
        assert act(policy, obs, ActMode.DETERMINISTIC).trigger == 1
        sampled = act(policy, obs, ActMode.SAMPLE, rng)
        assert sampled.trigger == 1
        assert sampled.trigger_logprob == 0.0
        assert sampled.logprob == sampled.control_logprob

    def test_sample_requires_rng(self):
        with pytest.raises(ConfigurationError):
            act(_fixed_policy(0.0, 0.0, 0.0), augment(np.zeros(1), 0.0), ActMode.SAMPLE)


class TestShapedReward:
    def test_penalty_on_trigger(self):
        assert shaped_reward(-1.0, 1, 0.05) == pytest.approx(-1.05)
        assert shaped_reward(-1.0, 0, 0.05) == -1.0
        assert shaped_reward(-1.0, 1, 0.0) == -1.0

    def test_negative_penalty(self):
        with pytest.raises(ConfigurationError):
            shaped_reward(0.0, 1, -0.1)


# ═══════════════════════════════════════════════════════════════════════════
# Clipped surrogate
# ═══════════════════════════════════════════════════════════════════════════

class TestClippedSurrogate:
    @pytest.mark.parametrize("ratio,adv,obj,d", [
        (1.5, 1.0, 1.2, 0.0),
        (0.5, 1.0, 0.5, 1.0),
        (0.5, -1.0, -0.8, 0.0),
        (1.5, -1.0, -1.5, -1.0),
        (1.1, 2.0, 2.2, 2.0),
    ])
    def test_cases(self, ratio, adv, obj, d):
        o, g = clipped_surrogate(np.array([ratio]), np.array([adv]), 0.2)
        assert o[0] == pytest.approx(obj)
        assert g[0] == d

    def test_flat_beyond_clip(self):
        ratios = np.linspace(1.25, 3.0, 20)
        obj, d = clipped_surrogate(ratios, np.ones(20), 0.2)
        np.testing.assert_allclose(obj, 1.2)
        assert np.all(d == 0.0)


class TestSurrogateGradients:
    def test_finite_difference_with_trigger_head(self):
        policy = policy_init(3, 1, (6,), seed=4, init_log_std=-0.5)
        value_net = value_init(3, (6,), seed=5)
        hyper = AtppoHyper(entropy_coef=0.01, value_coef=0.5, clip_eps=0.2)
        obs, controls, triggers, old_lp, adv, returns = _minibatch(policy, spread=0.1)
        lg = surrogate_loss_and_grads(policy, value_net, obs, controls, triggers, old_lp, adv, returns, hyper)

        def policy_loss(params):
            p = PolicyModel(policy.net.with_parameters(params[:-1]), params[-1], 1, True)
            return surrogate_loss_and_grads(p, value_net, obs, controls, triggers, old_lp, adv, returns, hyper).policy_loss

        def value_loss(params):
            v = value_net.with_parameters(params)
            return surrogate_loss_and_grads(policy, v, obs, controls, triggers, old_lp, adv, returns, hyper).value_loss

        fd_policy = _fd_gradient(policy_loss, policy.net.parameters() + [policy.log_std.copy()])
        fd_value = _fd_gradient(value_loss, value_net.parameters())
        assert _rel_err(lg.policy_grads, fd_policy) < 1e-5
        assert _rel_err(lg.value_grads, fd_value) < 1e-5

    def test_clipped_samples_carry_no_surrogate_gradient(self):
        policy = policy_init(3, 1, (6,), seed=4)
        value_net = value_init(3, (6,), seed=5)
        hyper = AtppoHyper(entropy_coef=0.0)
        obs, controls, triggers, _, _, returns = _minibatch(policy, spread=0.0)
        lp, _, _, _ = joint_logprob(policy, obs, controls, triggers)
        adv = np.abs(np.random.default_rng(1).normal(size=lp.shape[0])) + 0.1
        lg = surrogate_loss_and_grads(policy, value_net, obs, controls, triggers, lp - 1.0, adv, returns, hyper)
        assert lg.info["clip_fraction"] == 1.0
        for g in lg.policy_grads:
            assert np.all(g == 0.0)

    def test_vanilla_ppo_equivalence(self):
        policy = policy_init(3, 1, (6,), seed=7, init_log_std=-0.3, trigger_head=False)
        value_net = value_init(3, (6,), seed=8)
        hyper = AtppoHyper(entropy_coef=0.01, force_trigger=True, trigger_penalty=0.0)
        obs, controls, _, old_lp, adv, returns = _minibatch(policy, spread=0.1)
        triggers = np.ones(obs.shape[0])

        def gaussian_ppo_loss(params):
            net = policy.net.with_parameters(params[:-1])
            log_std = params[-1]
            mean, _ = net_forward(net, obs)
            z = (controls - mean) / np.exp(log_std)
            lp = np.sum(-0.5 * z ** 2 - log_std - 0.5 * math.log(2 * math.pi), axis=-1)
            ratio = np.exp(lp - old_lp)
            obj = np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv)
            ent = float(np.sum(0.5 + 0.5 * math.log(2 * math.pi) + log_std))
            return -float(np.mean(obj)) - 0.01 * ent

        params = policy.net.parameters() + [policy.log_std.copy()]
        lg = surrogate_loss_and_grads(policy, value_net, obs, controls, triggers, old_lp, adv, returns, hyper)
        assert lg.policy_loss == pytest.approx(gaussian_ppo_loss(params), abs=1e-12)
        assert _rel_err(lg.policy_grads, _fd_gradient(gaussian_ppo_loss, params)) < 1e-5

    def test_non_finite_loss(self):
        policy = policy_init(3, 1, (6,), seed=0)
        value_net = value_init(3, (6,), seed=1)
        obs, controls, triggers, old_lp, adv, returns = _minibatch(policy, spread=0.1)
        returns[0] = np.nan
        with pytest.raises(NumericError):
            surrogate_loss_and_grads(policy, value_net, obs, controls, triggers, old_lp, adv, returns, AtppoHyper())


# ═══════════════════════════════════════════════════════════════════════════
# Update
# ═══════════════════════════════════════════════════════════════════════════

class TestPpoUpdate:
    def _setup(self):
        hyper = AtppoHyper(minibatch_size=16, epochs_per_batch=2, hidden_sizes=(8,), trigger_penalty=0.05)
        state = learner_init(2, 1, hyper)
        runner = TriggeredRunner(IntegratorEnv(IntegratorConfig(t_final=0.2)), 100.0, 0.05, np.random.default_rng(0))
        batch = finalize_batch(collect_rollout(state.policy, state.value_net, runner, 64), hyper.gamma, hyper.lam)
        return hyper, state, batch

    def test_first_minibatch_ratio_is_one(self):
        hyper, state, batch = self._setup()
        _, stats = ppo_update(state, batch, hyper, np.random.default_rng(0))
        assert stats.first_ratio_deviation <= 1e-9
        assert stats.n_minibatches == 8

    def test_parameters_move_and_log_std_bounded(self):
        hyper, state, batch = self._setup()
        new_state, _ = ppo_update(state, batch, hyper, np.random.default_rng(0))
        assert any(not np.array_equal(a, b) for a, b in zip(state.policy.net.parameters(), new_state.policy.net.parameters()))
        assert np.all(new_state.policy.log_std >= -5.0) and np.all(new_state.policy.log_std <= 2.0)
        assert new_state.policy_adam.step_count == 8

    def test_deterministic(self):
        hyper, state, batch = self._setup()
        a, sa = ppo_update(state, batch, hyper, np.random.default_rng(3))
        b, sb = ppo_update(state, batch, hyper, np.random.default_rng(3))
        for x, y in zip(a.policy.net.parameters(), b.policy.net.parameters()):
            assert np.array_equal(x, y)
        assert sa == sb

    def test_needs_finalized_batch(self):
        hyper, state, batch = self._setup()
        batch.advantages = None
        with pytest.raises(ConfigurationError):
            ppo_update(state, batch, hyper)

    @staticmethod
    def _gaussian_ppo_reference(net, log_std, value_net, batch, hyper, rng):
        """Plain Gaussian-policy PPO with Adam and global-norm clipping; no trigger head anywhere."""
        p_params = net.parameters() + [log_std]
        v_params = value_net.parameters()
        p_adam = adam_init(p_params, hyper.learning_rate)
        v_adam = adam_init(v_params, hyper.learning_rate)
        obs, controls, old_lp = batch.obs, batch.controls, batch.logprobs
        adv_all = normalize_advantages(batch.advantages)
        ret_all = np.asarray(batch.returns, dtype=np.float64)
        n, eps = len(batch), hyper.clip_eps
        for _ in range(hyper.epochs_per_batch):
            order = rng.permutation(n)
            for start in range(0, n, hyper.minibatch_size):
                idx = order[start:start + hyper.minibatch_size]
                x, u, adv, ret = obs[idx], controls[idx], adv_all[idx], ret_all[idx]
                b = x.shape[0]
                cur_net = net.with_parameters(p_params[:-1])
                cur_log_std = p_params[-1]

                mean, cache = net_forward(cur_net, x)
                ratio = np.exp(gaussian_logprob(mean, cur_log_std, u) - old_lp[idx])
                unclipped = ratio * adv
                clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
                g = -np.where(unclipped <= clipped, adv, 0.0) * ratio / b
                d_mean, d_ls = gaussian_logprob_grads(mean, cur_log_std, u)
                d_log_std = np.sum(g[:, None] * d_ls, axis=0) - hyper.entropy_coef * np.ones(cur_log_std.shape[0])
                p_grads = net_backward(cur_net, cache, g[:, None] * d_mean).as_list() + [d_log_std]

                cur_v = value_net.with_parameters(v_params)
                v, v_cache = net_forward(cur_v, x)
                d_v = (2.0 * hyper.value_coef / b) * (v[:, 0] - ret)[:, None]
                v_grads = net_backward(cur_v, v_cache, d_v).as_list()

                p_grads, _ = clip_grad_norm(p_grads, hyper.max_grad_norm)
                p_params, p_adam = adam_step(p_params, p_grads, p_adam)
                p_params[-1] = clamp_log_std(p_params[-1])
                v_grads, _ = clip_grad_norm(v_grads, hyper.max_grad_norm)
                v_params, v_adam = adam_step(v_params, v_grads, v_adam)
        return p_params, v_params

    def test_forced_trigger_update_matches_plain_ppo_bit_exactly(self):
        hyper = AtppoHyper(
            minibatch_size=16, epochs_per_batch=3, hidden_sizes=(8,), entropy_coef=0.01,
            force_trigger=True, trigger_penalty=0.0, init_log_std=-0.4,
        )
        state = learner_init(2, 1, hyper)
        assert not state.policy.trigger_head
        runner = TriggeredRunner(IntegratorEnv(IntegratorConfig(t_final=0.3)), 100.0, 0.0, np.random.default_rng(5))
        batch = finalize_batch(collect_rollout(state.policy, state.value_net, runner, 56), hyper.gamma, hyper.lam)
        assert np.all(batch.triggers == 1.0)

        ref_p, ref_v = self._gaussian_ppo_reference(
            state.policy.net.copy(), state.policy.log_std.copy(), state.value_net.copy(), batch, hyper,
            np.random.default_rng(9),
        )
        new_state, stats = ppo_update(state, batch, hyper, np.random.default_rng(9))

        got_p = new_state.policy.net.parameters() + [new_state.policy.log_std]
        assert stats.n_minibatches == 12
        assert len(got_p) == len(ref_p)
        for a, b in zip(got_p, ref_p):
            assert np.array_equal(a, b)
        for a, b in zip(new_state.value_net.parameters(), ref_v):
            assert np.array_equal(a, b)
        assert any(not np.array_equal(a, b) for a, b in zip(state.policy.net.parameters(), got_p))

    def test_learner_init_variants(self):
        atppo_state = learner_init(2, 1, AtppoHyper(hidden_sizes=(4,)))
        ppo_state = learner_init(2, 1, AtppoHyper(hidden_sizes=(4,), force_trigger=True))
        assert atppo_state.policy.net.output_dim == 2
        assert ppo_state.policy.net.output_dim == 1
        assert not ppo_state.policy.trigger_head


# ═══════════════════════════════════════════════════════════════════════════
# Training
# ═══════════════════════════════════════════════════════════════════════════

class TestTrain:
    def test_metric_rows(self):
        seen = []
        ckpt, log = train(_tiny_config(), on_cycle=lambda row, stats: seen.append(row.step))
        assert [r.step for r in log] == [32, 64]
        assert seen == [32, 64]
        assert ckpt.total_steps == 64
        assert ckpt.algorithm == Algorithm.ATPPO
        for row in log:
            assert 0.0 < row.comm_fraction <= 1.0
            assert row.mean_raw_return < 0.0

    def test_deterministic(self):
        a, log_a = train(_tiny_config(num_workers=2))
        b, log_b = train(_tiny_config(num_workers=2))
        for x, y in zip(a.policy.net.parameters(), b.policy.net.parameters()):
            assert np.array_equal(x, y)
        assert np.array_equal(a.policy.log_std, b.policy.log_std)
        assert log_a.rows == log_b.rows

    def test_ppo_always_broadcasts(self):
        ckpt, log = train(_tiny_config("ppo"))
        assert ckpt.algorithm == Algorithm.PPO
        assert ckpt.hyper.force_trigger
        assert ckpt.hyper.trigger_penalty == 0.0
        assert all(row.comm_fraction == 1.0 for row in log)

    def test_held_control_widens_policy_input(self):
        ckpt, _ = train(_tiny_config(observe_held_control=True))
        assert ckpt.hyper.observe_held_control
        assert ckpt.obs_dim == 3
        assert ckpt.value_net.input_dim == 3
        report = evaluate(ckpt, make_env("integrator", ckpt.env_config), episodes=1)
        assert len(report.traces[0]) == 20

    def test_ppo_instance_hyper_loses_trigger_head(self):
        hyper = AtppoHyper(horizon=32, total_steps=32, minibatch_size=16, hidden_sizes=(4,), trigger_penalty=0.05)
        config = RunConfig(env="integrator", algorithm="ppo", hyper=hyper, env_overrides={"t_final": 0.2})
        ckpt, log = train(config)
        assert not ckpt.policy.trigger_head
        assert all(row.comm_fraction == 1.0 for row in log)

    def test_numeric_abort_writes_diagnostic(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise NumericError("synthetic blow-up")

        monkeypatch.setattr(atppo, "ppo_update", boom)
        diag = tmp_path / "diagnostic.etrl"
        with pytest.raises(NumericError):
            train(_tiny_config(), diagnostic_path=diag)
        ckpt = load_checkpoint(diag)
        assert ckpt.total_steps == 0
        assert ckpt.algorithm == Algorithm.ATPPO

    def test_metric_log_monotone(self):
        log = MetricLog()
        row = dict(mean_raw_return=-1.0, comm_fraction=0.5, mean_inter_event=0.02,
                   policy_loss=0.0, value_loss=0.0, clip_fraction=0.0)
        log.append(MetricRow(step=10, **row))
        with pytest.raises(ConfigurationError):
            log.append(MetricRow(step=10, **row))
        assert len(log) == 1


# ═══════════════════════════════════════════════════════════════════════════
# Evaluation
# ═══════════════════════════════════════════════════════════════════════════

class TestEvaluate:
    @pytest.fixture(scope="class")
    def atppo_ckpt(self):
        return train(_tiny_config())[0]

    @pytest.fixture(scope="class")
    def ppo_ckpt(self):
        return train(_tiny_config("ppo"))[0]

    def test_ppo_full_communication(self, ppo_ckpt):
        env = make_env("integrator", ppo_ckpt.env_config)
        report = evaluate(ppo_ckpt, env, episodes=2)
        assert report.comm_fraction == 1.0
        assert report.min_inter_event == pytest.approx(env.dt())
        assert len(report.episodes) == 2

    def test_traces(self, atppo_ckpt):
        env = make_env("integrator", atppo_ckpt.env_config)
        report = evaluate(atppo_ckpt, env, episodes=1)
        trace = report.traces[0]
        assert len(trace) == 20
        assert trace.times[0] == 0.0
        assert trace.triggered[0] == 1
        assert trace.states[0].tolist() == [5.0]
        assert trace.lyapunov[0] == pytest.approx(12.5)
        assert trace.event_times[0] == 0.0
        assert report.min_inter_event >= env.dt() - 1e-12
        assert 0.0 < report.comm_fraction <= 1.0
        assert report.capture_rate is None

    def test_deterministic_across_calls(self, atppo_ckpt):
        env = make_env("integrator", atppo_ckpt.env_config)
        a = evaluate(atppo_ckpt, env, episodes=2, seed=5)
        b = evaluate(atppo_ckpt, env, episodes=2, seed=5)
        assert a.mean_return == b.mean_return
        assert [t.triggered for t in a.traces] == [t.triggered for t in b.traces]

    def test_zero_episodes(self, atppo_ckpt):
        report = evaluate(atppo_ckpt, make_env("integrator", atppo_ckpt.env_config), episodes=0)
        assert report.episodes == []
        assert report.mean_return == 0.0
        assert report.comm_fraction == 0.0

    def test_wrong_environment(self, atppo_ckpt):
        with pytest.raises(DimensionError):
            evaluate(atppo_ckpt, EngagementEnv(), episodes=1)

    def test_negative_episodes(self):
        with pytest.raises(ConfigurationError):
            run_episodes(IntegratorEnv(), lambda obs: (1, np.zeros(1)), episodes=-1)

    def test_labels(self):
        assert algorithm_label(Algorithm.ATPPO) == "ATPPO"
        assert algorithm_label("ppo") == "PPO"
