import hashlib
import json

import numpy as np
import pytest

from smoothrl import autodiff as ad
from smoothrl.envs import PendulumEnv, make_env
from smoothrl.ppo import (
    Adam,
    PpoConfig,
    PpoTrainer,
    RunningNorm,
    Trajectory,
    TrainingDiverged,
    clip_grad_norm,
    collect_rollout,
    compute_gae,
    ppo_update,
    rng_stream,
)
from smoothrl.regularizers import parse_method
from helpers import direct_gae


def small_cfg(**overrides):
    base = dict(rollout_length=256, minibatch_size=64, epochs=2,
                total_steps=512)
    base.update(overrides)
    return PpoConfig(**base)


def make_traj(rng, n=32, obs_dim=3, act_dim=1, dones=None):
    if dones is None:
        dones = np.zeros(n)
        dones[n // 2] = 1.0
    return Trajectory(
        observations=rng.uniform(-1, 1, (n, obs_dim)),
        actions=rng.uniform(-1, 1, (n, act_dim)),
        rewards=rng.uniform(-1, 0, n),
        dones=np.asarray(dones, dtype=np.float64),
        values=rng.uniform(-1, 1, n),
        log_probs=rng.uniform(-2, 0, n),
        next_observations=rng.uniform(-1, 1, (n, obs_dim)),
        bootstrap_value=float(rng.uniform(-1, 1)),
    )


class TestGae:
    def test_single_step_identity(self):
        traj = Trajectory(
            observations=np.zeros((1, 3)), actions=np.zeros((1, 1)),
            rewards=np.array([1.0]), dones=np.array([1.0]),
            values=np.array([0.0]), log_probs=np.array([0.0]),
            next_observations=np.zeros((1, 3)), bootstrap_value=0.0,
        )
        adv, returns = compute_gae(traj, 0.99, 0.95)
        assert adv[0] == 1.0
        assert returns[0] == 1.0

    def test_zero_rewards_zero_values(self):
        traj = Trajectory(
            observations=np.zeros((8, 3)), actions=np.zeros((8, 1)),
            rewards=np.zeros(8), dones=np.zeros(8),
            values=np.zeros(8), log_probs=np.zeros(8),
            next_observations=np.zeros((8, 3)), bootstrap_value=0.0,
        )
        adv, _ = compute_gae(traj, 0.99, 0.95)
        assert np.array_equal(adv, np.zeros(8))

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(0)
        dones = (rng.uniform(size=64) < 0.1).astype(np.float64)
        traj = make_traj(rng, n=64, dones=dones)
        adv, returns = compute_gae(traj, 0.99, 0.95)
        oracle = direct_gae(traj.rewards, traj.values, traj.dones,
                            traj.bootstrap_value, 0.99, 0.95)
        assert np.max(np.abs(adv - oracle)) < 1e-10
        assert np.allclose(returns, adv + traj.values, atol=0)


class TestRollout:
    def test_fixed_horizon_episode_bookkeeping(self):
        env = PendulumEnv(seed=3)
        method = parse_method("vanilla")
        ac = method.build(env.obs_dim, env.act_dim, rng_stream(0, "init"))
        norm = RunningNorm(env.obs_dim)
        traj, ep_returns, _ = collect_rollout(
            ac, env, norm, 400, rng_stream(0, "actions")
        )
        assert np.where(traj.dones == 1.0)[0].tolist() == [199, 399]
        assert len(ep_returns) == 2
        # rewards re-summed per episode equal the reported returns
        assert ep_returns[0] == sum(traj.rewards[:200].tolist())
        assert ep_returns[1] == sum(traj.rewards[200:400].tolist())

    def test_same_seed_identical_trajectories(self):
        def run():
            env = PendulumEnv(seed=11)
            method = parse_method("vanilla")
            ac = method.build(env.obs_dim, env.act_dim, rng_stream(5, "init"))
            norm = RunningNorm(env.obs_dim)
            return collect_rollout(ac, env, norm, 300, rng_stream(5, "actions"))[0]

        t1, t2 = run(), run()
        for field in ("observations", "actions", "rewards", "log_probs"):
            assert np.array_equal(getattr(t1, field), getattr(t2, field))

    def test_nonfinite_log_prob_rejected(self):
        with pytest.raises(ValueError, match="log prob"):
            Trajectory(
                observations=np.zeros((1, 3)), actions=np.zeros((1, 1)),
                rewards=np.zeros(1), dones=np.zeros(1), values=np.zeros(1),
                log_probs=np.array([np.nan]),
                next_observations=np.zeros((1, 3)), bootstrap_value=0.0,
            )


class TestRunningNorm:
    def test_tracks_stream_statistics(self):
        rng = np.random.default_rng(1)
        norm = RunningNorm(3)
        samples = rng.normal(2.0, 3.0, size=(500, 3))
        for s in samples:
            norm.update(s)
        assert np.allclose(norm.mean, samples.mean(axis=0), atol=1e-2)
        assert np.allclose(norm.var, samples.var(axis=0), rtol=1e-2)

    def test_normalize_clips(self):
        norm = RunningNorm(1)
        assert norm.normalize(np.array([1e9]))[0] == 10.0

    def test_state_round_trip(self):
        norm = RunningNorm(2)
        for s in np.random.default_rng(2).normal(size=(50, 2)):
            norm.update(s)
        twin = RunningNorm.from_state(norm.state_tensors(), 2)
        probe = np.array([0.3, -0.7])
        assert np.array_equal(norm.normalize(probe), twin.normalize(probe))


class TestUpdate:
    def test_first_epoch_ratio_identity(self):
        # with unchanged params the importance ratio is exactly 1, so the
        # clip term is -mean(normalized advantages) over the (full) batch
        env = PendulumEnv(seed=0)
        method = parse_method("vanilla")
        ac = method.build(env.obs_dim, env.act_dim, rng_stream(1, "init"))
        norm = RunningNorm(env.obs_dim)
        traj, _, _ = collect_rollout(ac, env, norm, 64, rng_stream(1, "actions"))

        with ad.tape():
            logp_new = ac.log_prob(ad.constant(traj.observations), traj.actions)
        assert np.array_equal(logp_new.data, traj.log_probs)

        cfg = small_cfg(rollout_length=64, minibatch_size=64, epochs=1)
        opt = Adam(ac.params, cfg.learning_rate)
        stats = ppo_update(ac, opt, traj, cfg, method,
                           rng_stream(1, "reg"), rng_stream(1, "shuffle"))
        # normalized advantages have mean ~0 over the single full minibatch
        assert abs(stats["loss_clip"]) < 1e-12

    def test_clip_definition(self):
        with ad.tape():
            ratio = ad.constant(np.array([1.5]))
            adv = ad.constant(np.array([2.0]))
            clipped = ad.mul(ad.clip(ratio, 0.8, 1.2), adv)
            unclipped = ad.mul(ratio, adv)
            loss = ad.neg(ad.tmean(ad.minimum(unclipped, clipped)))
        assert loss.data == pytest.approx(-2.4, rel=1e-15)

    def test_vanilla_reg_term_exactly_zero(self):
        env = PendulumEnv(seed=4)
        method = parse_method("vanilla")
        ac = method.build(env.obs_dim, env.act_dim, rng_stream(2, "init"))
        norm = RunningNorm(env.obs_dim)
        traj, _, _ = collect_rollout(ac, env, norm, 64, rng_stream(2, "actions"))
        cfg = small_cfg(rollout_length=64, epochs=1)
        stats = ppo_update(ac, Adam(ac.params, cfg.learning_rate), traj, cfg,
                           method, rng_stream(2, "reg"), rng_stream(2, "shuffle"))
        assert stats["loss_reg"] == 0.0

    def test_loss_decomposition_sums_to_total(self):
        env = PendulumEnv(seed=5)
        for name in ("caps", "l2c2", "lipsnet+l2c2"):
            method = parse_method(name)
            ac = method.build(env.obs_dim, env.act_dim, rng_stream(3, "init"))
            norm = RunningNorm(env.obs_dim)
            traj, _, _ = collect_rollout(ac, env, norm, 64, rng_stream(3, "actions"))
            cfg = small_cfg(rollout_length=64, epochs=1)
            stats = ppo_update(ac, Adam(ac.params, cfg.learning_rate), traj,
                               cfg, method, rng_stream(3, "reg"),
                               rng_stream(3, "shuffle"))
            assert abs(stats["loss_total"] - (stats["loss_rl"] + stats["loss_reg"])) < 1e-10

    def test_nonfinite_loss_aborts_with_diagnostics(self):
        env = PendulumEnv(seed=6)
        method = parse_method("vanilla")
        ac = method.build(env.obs_dim, env.act_dim, rng_stream(4, "init"))
        norm = RunningNorm(env.obs_dim)
        traj, _, _ = collect_rollout(ac, env, norm, 64, rng_stream(4, "actions"))
        ac.value_net.weight(0).data[0, 0] = np.nan
        cfg = small_cfg(rollout_length=64, epochs=1)
        with pytest.raises(TrainingDiverged) as err:
            ppo_update(ac, Adam(ac.params, cfg.learning_rate), traj, cfg,
                       method, rng_stream(4, "reg"), rng_stream(4, "shuffle"))
        assert "minibatch_start" in err.value.diagnostics

    def test_grad_clip_scales_to_max_norm(self):
        grads = {"a": np.array([3.0, 4.0])}
        norm = clip_grad_norm(grads, 0.5)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(grads["a"]) == pytest.approx(0.5, rel=1e-5)
        small = {"a": np.array([0.1])}
        clip_grad_norm(small, 0.5)
        assert small["a"][0] == 0.1


def _checkpoint_hash(trainer):
    doc = {k: v.tolist() for k, v in sorted(trainer.state_tensors().items())}
    return hashlib.sha256(json.dumps(doc).encode()).hexdigest()


class TestTrainer:
    def test_training_reproducible(self):
        def run():
            trainer = PpoTrainer(PendulumEnv(seed=np.random.SeedSequence((7, 1))),
                                 parse_method("vanilla"), small_cfg(), seed=7)
            trainer.train()
            return _checkpoint_hash(trainer)

        assert run() == run()

    @pytest.mark.parametrize("name", ["vanilla", "caps", "l2c2", "local_sn",
                                      "liu", "lipsnet", "lipsnet+caps",
                                      "lipsnet+l2c2"])
    def test_trainer_runs_every_method(self, name):
        cfg = small_cfg(rollout_length=128, total_steps=128, epochs=1)
        trainer = PpoTrainer(PendulumEnv(seed=np.random.SeedSequence((8, 1))),
                             parse_method(name), cfg, seed=8)
        result = trainer.train()
        assert result.steps == 128
        assert len(result.curve) == 1
        assert np.isfinite(result.curve[0]["loss_total"])

    def test_zero_weight_methods_reproduce_vanilla_bitwise(self):
        def run(method):
            trainer = PpoTrainer(PendulumEnv(seed=np.random.SeedSequence((9, 1))),
                                 method, small_cfg(), seed=9)
            result = trainer.train()
            return _checkpoint_hash(trainer), result.curve

        base_hash, base_curve = run(parse_method("vanilla"))
        for name in ("caps", "l2c2"):
            zero_hash, zero_curve = run(parse_method(name).zeroed())
            assert zero_hash == base_hash, name
            assert zero_curve == base_curve, name

    def test_curve_rows_have_required_columns(self):
        trainer = PpoTrainer(PendulumEnv(seed=np.random.SeedSequence((10, 1))),
                             parse_method("vanilla"),
                             small_cfg(rollout_length=256, total_steps=256,
                                       epochs=1), seed=10)
        result = trainer.train()
        row = result.curve[0]
        assert list(row) == ["step", "mean_episode_return", "loss_total",
                             "loss_rl", "loss_reg"]
        assert row["step"] == 256
