import unittest
import sys
import os
import tempfile
from types import SimpleNamespace

import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from layer0_nncore import CheckpointError, ConfigError, NonFiniteError, ShapeError
from layer1_replay import ReplayBuffer, Transition, TransitionBatch
from layer2_agent import (
    OuNoise,
    Td3Agent,
    Td3Config,
    compute_targets,
    load_checkpoint,
    ou_step,
    random_warmup_action,
    save_checkpoint,
    select_action,
    train_step,
)
from layer3_envs import terrestrial_spec

STATE_DIM = 4
LOW = np.array([0.0, -0.25])
HIGH = np.array([0.25, 0.25])


def small_agent(seed=0, **overrides):
    config = Td3Config(actor_hidden=(8,), critic_hidden=(8,), batch_size=8, **overrides)
    return Td3Agent(STATE_DIM, LOW, HIGH, config=config, rng=np.random.default_rng(seed))


def filled_buffer(n=64, seed=1):
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer(STATE_DIM, 2, capacity=n)
    for i in range(n):
        buffer.push(Transition(
            rng.normal(size=STATE_DIM),
            rng.uniform(LOW, HIGH),
            float(rng.choice([0.0, 100.0, -10.0])),
            rng.normal(size=STATE_DIM),
            bool(i % 7 == 0),
        ))
    return buffer


def set_constant(net, value):
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases:
        b[...] = 0.0
    net.biases[-1][...] = value


def one_row_batch(reward, done):
    return TransitionBatch(
        states=np.zeros((1, STATE_DIM)),
        actions=np.zeros((1, 2)),
        rewards=np.array([reward]),
        next_states=np.ones((1, STATE_DIM)),
        dones=np.array([done]),
        indices=np.array([0]),
    )


class TestTd3Config(unittest.TestCase):
    def test_defaults(self):
        config = Td3Config()
        self.assertEqual(config.eta, 2)
        self.assertEqual(config.batch_size, 100)
        self.assertEqual(config.actor_hidden, (256, 256))

    def test_invalid_values_rejected(self):
        for bad in ({"eta": 0}, {"noise_clip": 0.0}, {"batch_size": 0}, {"tau": 0.0}, {"gamma": 1.5}):
            with self.assertRaises(ConfigError):
                Td3Config(**bad)

    def test_from_dict_rejects_unknown_keys(self):
        with self.assertRaises(ConfigError):
            Td3Config.from_dict({"eta": 4, "etta": 4})
        self.assertEqual(Td3Config.from_dict(Td3Config(eta=8).to_dict()), Td3Config(eta=8))


class TestActing(unittest.TestCase):
    def test_greedy_action_is_repeatable_and_in_box(self):
        agent = small_agent()
        state = np.random.default_rng(0).normal(size=STATE_DIM)
        a1 = select_action(agent, state, explore=False)
        a2 = select_action(agent, state, explore=False)
        np.testing.assert_array_equal(a1, a2)
        self.assertTrue(np.all(a1 >= LOW) and np.all(a1 <= HIGH))
        print("Test 1: Greedy Action Passed")

    def test_zero_sigma_exploration_equals_greedy(self):
        agent = small_agent(ou_sigma=0.0)
        state = np.ones(STATE_DIM)
        np.testing.assert_array_equal(
            agent.select_action(state, explore=True, rng=np.random.default_rng(3)),
            agent.select_action(state, explore=False),
        )

    def test_exploration_stays_in_box(self):
        agent = small_agent(ou_sigma=5.0)
        rng = np.random.default_rng(4)
        for _ in range(200):
            a = agent.select_action(rng.normal(size=STATE_DIM), explore=True, rng=rng)
            self.assertTrue(np.all(a >= LOW) and np.all(a <= HIGH))

    def test_width_mismatch(self):
        agent = small_agent()
        with self.assertRaises(ShapeError):
            agent.select_action(np.zeros(STATE_DIM + 1))
        with self.assertRaises(ValueError):
            agent.select_action(np.zeros(STATE_DIM), explore=True)

    def test_random_warmup_action(self):
        spec = terrestrial_spec()
        rng = np.random.default_rng(5)
        samples = np.array([random_warmup_action(spec, rng) for _ in range(100_000)])
        self.assertTrue(np.all(samples[:, 0] >= 0.0) and np.all(samples[:, 0] <= 0.25))
        self.assertTrue(np.all(np.abs(samples[:, 1]) <= 0.25))
        low, high = np.array(spec.action_low), np.array(spec.action_high)
        std_error = (high - low) / np.sqrt(12.0) / np.sqrt(len(samples))
        self.assertTrue(np.all(np.abs(samples.mean(axis=0) - (low + high) / 2) < 3 * std_error))

        degenerate = SimpleNamespace(action_low=[0.1], action_high=[0.1])
        self.assertEqual(float(random_warmup_action(degenerate, rng)[0]), 0.1)
        print("Test 2: Warm-up Sampler Passed")

    def test_unit_box_mapping(self):
        agent = small_agent()
        np.testing.assert_allclose(agent.to_unit(LOW), [-1.0, -1.0])
        np.testing.assert_allclose(agent.to_unit(HIGH), [1.0, 1.0])
        np.testing.assert_allclose(agent.to_unit([0.125, 0.0]), [0.0, 0.0])
        np.testing.assert_allclose(agent.from_unit(agent.to_unit([0.05, -0.1])), [0.05, -0.1], atol=1e-15)
        np.testing.assert_array_equal(agent.from_unit([5.0, -5.0]), [HIGH[0], LOW[1]])

    def test_default_exploration_rarely_saturates_box(self):
        # terrestrial box is 0.25 wide; default OU noise must scale to it
        spec = terrestrial_spec()
        config = Td3Config(actor_hidden=(8,), critic_hidden=(8,))
        agent = Td3Agent.for_env(spec, config=config, rng=np.random.default_rng(6))
        set_constant(agent.actor, 0.0)
        low, high = np.array(spec.action_low), np.array(spec.action_high)
        rng = np.random.default_rng(7)
        state = np.zeros(spec.state_dim)
        for _ in range(100):
            agent.select_action(state, explore=True, rng=rng)
        actions = np.array([agent.select_action(state, explore=True, rng=rng) for _ in range(20_000)])
        clamped = np.mean((actions == low) | (actions == high))
        self.assertLess(clamped, 0.03)
        # spread follows each component's half-range
        np.testing.assert_allclose(actions.std(axis=0) / ((high - low) / 2), 0.2 / np.sqrt(1 - 0.85 ** 2), rtol=0.15)
        print(f"Test 8: Exploration Scale Passed ({clamped:.2%} clamped)")


class TestOuNoise(unittest.TestCase):
    def test_fixed_point(self):
        noise = OuNoise(3, sigma=0.0, mu=0.5)
        rng = np.random.default_rng(0)
        for _ in range(10):
            np.testing.assert_array_equal(ou_step(noise, rng), np.full(3, 0.5))

    def test_full_mean_reversion(self):
        noise = OuNoise(1, theta=1.0, sigma=0.0, mu=0.0, dt=1.0, state=[4.0])
        self.assertEqual(float(ou_step(noise, np.random.default_rng(0))[0]), 0.0)

    def test_stationary_std(self):
        noise = OuNoise(1, theta=0.15, sigma=0.2)
        rng = np.random.default_rng(6)
        for _ in range(1000):
            noise.step(rng)
        samples = np.array([noise.step(rng)[0] for _ in range(200_000)])
        expected = 0.2 / np.sqrt(2 * 0.15)
        self.assertLess(abs(samples.std() - expected) / expected, 0.10)
        print("Test 3: OU Stationary Std Passed")

    def test_step_returns_copy(self):
        noise = OuNoise(2)
        sample = noise.step(np.random.default_rng(0))
        sample[0] = 99.0
        self.assertNotEqual(noise.state[0], 99.0)


class TestTargets(unittest.TestCase):
    def test_terminal_transition_ignores_critics(self):
        agent = small_agent()
        set_constant(agent.critic1_target, 1e6)
        set_constant(agent.critic2_target, 1e6)
        targets = compute_targets(agent, one_row_batch(-20.0, True), np.random.default_rng(0))
        self.assertEqual(float(targets[0]), -20.0)

    def test_constant_critics_arithmetic(self):
        agent = small_agent(policy_noise_std=0.0, gamma=0.99)
        set_constant(agent.critic1_target, 2.0)
        set_constant(agent.critic2_target, 2.0)
        targets = compute_targets(agent, one_row_batch(1.0, False), np.random.default_rng(0))
        self.assertAlmostEqual(float(targets[0]), 2.98, places=12)
        print("Test 4: Target Arithmetic Passed")

    def test_min_of_twin_critics(self):
        agent = small_agent(gamma=1.0)
        set_constant(agent.critic1_target, 3.0)
        set_constant(agent.critic2_target, 5.0)
        self.assertEqual(float(compute_targets(agent, one_row_batch(0.0, False), np.random.default_rng(0))[0]), 3.0)
        set_constant(agent.critic1_target, 5.0)
        set_constant(agent.critic2_target, 3.0)
        self.assertEqual(float(compute_targets(agent, one_row_batch(0.0, False), np.random.default_rng(0))[0]), 3.0)

    def test_smoothing_noise_is_in_unit_box_coordinates(self):
        agent = Td3Agent(STATE_DIM, LOW, HIGH, config=Td3Config(actor_hidden=(4,), critic_hidden=()),
                         rng=np.random.default_rng(18))
        set_constant(agent.actor_target, 0.0)
        for critic in (agent.critic1_target, agent.critic2_target):
            set_constant(critic, 0.0)
            critic.weights[0][STATE_DIM, 0] = 1.0  # Q' reads the unit-box linear velocity
        n = 10_000
        batch = TransitionBatch(
            states=np.zeros((n, STATE_DIM)),
            actions=np.zeros((n, 2)),
            rewards=np.zeros(n),
            next_states=np.zeros((n, STATE_DIM)),
            dones=np.zeros(n, dtype=bool),
            indices=np.arange(n),
        )
        smoothed = agent.compute_targets(batch, np.random.default_rng(19)) / agent.config.gamma
        self.assertLessEqual(float(np.max(np.abs(smoothed))), 0.5 + 1e-12)
        self.assertTrue(0.19 < float(smoothed.std()) < 0.207)

    def test_smoothing_noise_bounded(self):
        agent = small_agent(policy_noise_std=1.0, noise_clip=0.5)
        noise = agent.sample_target_noise((1_000_000,), np.random.default_rng(7))
        self.assertLessEqual(float(noise.max()), 0.5)
        self.assertGreaterEqual(float(noise.min()), -0.5)


class TestTrainStep(unittest.TestCase):
    def _run(self, eta, steps):
        agent = small_agent(eta=eta)
        buffer = filled_buffer()
        rng = np.random.default_rng(8)
        for _ in range(steps):
            train_step(agent, buffer, rng)
        return agent

    def test_dpu_schedule_counts(self):
        for eta, expected in ((2, 500), (4, 250), (8, 125)):
            agent = self._run(eta, 1000)
            self.assertEqual(agent.critic_update_count, 1000)
            self.assertEqual(agent.actor_update_count, expected)
        self.assertEqual(self._run(2, 10).actor_update_count, 5)
        print("Test 5: DPU Schedule Passed (500/250/125)")

    def test_actor_and_targets_frozen_between_updates(self):
        agent = small_agent(eta=4)
        buffer = filled_buffer()
        rng = np.random.default_rng(9)
        names = ("actor", "actor_target", "critic1_target", "critic2_target")
        for step in range(1, 13):
            before = {n: [p.copy() for p in getattr(agent, n).parameters()] for n in names}
            critic_before = agent.critic1.weights[0].copy()
            report = agent.train_step(buffer, rng)
            self.assertEqual(report.actor_updated, step % 4 == 0)
            self.assertFalse(np.array_equal(critic_before, agent.critic1.weights[0]))
            for n in names:
                same = all(np.array_equal(a, b) for a, b in zip(before[n], getattr(agent, n).parameters()))
                self.assertEqual(same, step % 4 != 0, f"{n} at step {step}")
            self.assertEqual(agent.actor_update_count, agent.critic_update_count // 4)

    def test_linear_critic_loss_matches_scalar_oracle(self):
        config = Td3Config(actor_hidden=(4,), critic_hidden=(), batch_size=2)
        agent = Td3Agent(STATE_DIM, LOW, HIGH, config=config, rng=np.random.default_rng(10))
        buffer = ReplayBuffer(STATE_DIM, 2, capacity=2)
        buffer.push(Transition(np.array([1.0, 2.0, 0.0, -1.0]), np.array([0.1, 0.2]), 100.0, np.zeros(STATE_DIM), True))
        buffer.push(Transition(np.array([0.5, -0.5, 1.0, 0.0]), np.array([0.2, -0.1]), -10.0, np.zeros(STATE_DIM), True))

        indices = buffer.sample(2, np.random.default_rng(11)).indices
        w = agent.critic1.weights[0][:, 0].copy()
        b = float(agent.critic1.biases[0][0])
        squared = []
        for idx in indices:
            t = buffer[int(idx)]
            # critics see actions mapped into the unit box
            x = list(t.state) + [(a - (lo + hi) / 2) / ((hi - lo) / 2) for a, lo, hi in zip(t.action, LOW, HIGH)]
            q = sum(wi * xi for wi, xi in zip(w, x)) + b
            squared.append((q - t.reward) ** 2)
        expected = sum(squared) / len(squared)

        report = agent.train_step(buffer, np.random.default_rng(11))
        self.assertAlmostEqual(report.critic1_loss, expected, delta=1e-10)
        print("Test 6: Linear Critic MSE Oracle Passed")

    def test_empty_buffer_rejected(self):
        with self.assertRaises(ValueError):
            small_agent().train_step(ReplayBuffer(STATE_DIM, 2), np.random.default_rng(0))

    def test_non_finite_loss_aborts(self):
        agent = small_agent()
        buffer = ReplayBuffer(STATE_DIM, 2, capacity=4)
        buffer.push(Transition(np.zeros(STATE_DIM), np.zeros(2), 1e308, np.zeros(STATE_DIM), True))
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(NonFiniteError):
                agent.train_step(buffer, np.random.default_rng(0))

    def test_loss_sequence_is_deterministic(self):
        def losses():
            agent = small_agent(seed=12)
            buffer = filled_buffer(seed=13)
            rng, noise_rng = np.random.default_rng(14), np.random.default_rng(15)
            return [
                (r.critic1_loss, r.critic2_loss, r.actor_loss)
                for r in (agent.train_step(buffer, rng, noise_rng) for _ in range(20))
            ]
        self.assertEqual(losses(), losses())


class TestAgentCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "checkpoint.bin")
        self.agent = small_agent(eta=4)
        buffer = filled_buffer()
        rng = np.random.default_rng(16)
        for _ in range(9):
            self.agent.train_step(buffer, rng)
        self.agent.select_action(np.zeros(STATE_DIM), explore=True, rng=rng)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_checkpoint(self.agent, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.config, self.agent.config)
        self.assertEqual(loaded.critic_update_count, 9)
        self.assertEqual(loaded.actor_update_count, 2)
        np.testing.assert_array_equal(loaded.ou.state, self.agent.ou.state)
        states = np.random.default_rng(17).normal(size=(100, STATE_DIM))
        for s in states:
            np.testing.assert_array_equal(loaded.select_action(s), self.agent.select_action(s))
        for name, net in self.agent.networks().items():
            for a, b in zip(net.parameters(), loaded.networks()[name].parameters()):
                np.testing.assert_array_equal(a, b)
        print("Test 7: Agent Checkpoint Round Trip Passed")

    def test_wrong_version_rejected(self):
        header = self.agent.header()
        self.agent.header = lambda: {**header, "version": "td3-v0"}
        save_checkpoint(self.agent, self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_truncated_file_rejected(self):
        save_checkpoint(self.agent, self.path)
        with open(self.path, "rb") as f:
            data = f.read()
        with open(self.path, "wb") as f:
            f.write(data[:100])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_env_spec_travels_with_checkpoint(self):
        spec = terrestrial_spec(dt=0.2, max_episode_steps=20)
        agent = Td3Agent.for_env(spec, config=Td3Config(actor_hidden=(4,), critic_hidden=(4,)),
                                 rng=np.random.default_rng(20))
        save_checkpoint(agent, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.env_spec, spec.to_dict())
        np.testing.assert_array_equal(loaded.action_half, agent.action_half)

        save_checkpoint(self.agent, self.path)
        self.assertIsNone(load_checkpoint(self.path).env_spec)


if __name__ == '__main__':
    unittest.main()
