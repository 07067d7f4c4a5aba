import unittest
import sys
import os

import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from layer0_nncore import ShapeError
from layer1_replay import ReplayBuffer, Transition

# Chi-square critical value, 99 degrees of freedom, significance 0.001
CHI2_CRITICAL_DF99_P001 = 148.23


def make_transition(i, state_dim=3, action_dim=2, done=False):
    return Transition(
        state=np.full(state_dim, float(i)),
        action=np.full(action_dim, float(i) / 10.0),
        reward=float(i),
        next_state=np.full(state_dim, float(i + 1)),
        done=done,
    )


class TestReplayBuffer(unittest.TestCase):
    def test_fifo_eviction_is_exact(self):
        buffer = ReplayBuffer(3, 2, capacity=3)
        transitions = [make_transition(i) for i in range(5)]
        for t in transitions:
            buffer.push(t)
        self.assertEqual(len(buffer), 3)
        self.assertEqual(buffer.contents(), transitions[2:])
        print("Test 1: FIFO Eviction Passed")

    def test_contents_before_full(self):
        buffer = ReplayBuffer(3, 2, capacity=10)
        for i in range(4):
            buffer.push(make_transition(i))
        self.assertEqual([t.reward for t in buffer.contents()], [0.0, 1.0, 2.0, 3.0])

    def test_capacity_one_keeps_newest(self):
        buffer = ReplayBuffer(3, 2, capacity=1)
        buffer.push(make_transition(0))
        buffer.push(make_transition(1, done=True))
        self.assertEqual(buffer.contents(), [make_transition(1, done=True)])

    def test_uniform_sampling_chi_square(self):
        buffer = ReplayBuffer(3, 2, capacity=100)
        for i in range(100):
            buffer.push(make_transition(i))
        rng = np.random.default_rng(12345)
        batch = buffer.sample(100_000, rng)
        counts = np.bincount(batch.indices, minlength=100)
        expected = 100_000 / 100
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        self.assertLess(chi2, CHI2_CRITICAL_DF99_P001)
        print(f"Test 2: Uniform Sampling Passed (chi2={chi2:.1f})")

    def test_sample_rows_match_indices(self):
        buffer = ReplayBuffer(3, 2, capacity=8)
        for i in range(8):
            buffer.push(make_transition(i, done=(i % 2 == 0)))
        batch = buffer.sample(16, np.random.default_rng(0))
        self.assertEqual(len(batch), 16)
        self.assertEqual(batch.states.shape, (16, 3))
        self.assertEqual(batch.rewards.shape, (16,))
        for t, idx in zip(batch.transitions(), batch.indices):
            self.assertEqual(t, buffer[int(idx)])

    def test_sampling_is_seed_deterministic(self):
        buffer = ReplayBuffer(3, 2, capacity=50)
        for i in range(50):
            buffer.push(make_transition(i))
        a = buffer.sample(32, np.random.default_rng(99))
        b = buffer.sample(32, np.random.default_rng(99))
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_empty_buffer_cannot_sample(self):
        with self.assertRaises(ValueError):
            ReplayBuffer(3, 2).sample(4, np.random.default_rng(0))

    def test_width_and_reward_validation(self):
        buffer = ReplayBuffer(3, 2, capacity=4)
        with self.assertRaises(ShapeError):
            buffer.push(make_transition(0, state_dim=4))
        with self.assertRaises(ShapeError):
            buffer.push(make_transition(0, action_dim=3))
        bad = Transition(np.zeros(3), np.zeros(2), float("nan"), np.zeros(3), False)
        with self.assertRaises(ValueError):
            buffer.push(bad)
        self.assertEqual(len(buffer), 0)
        print("Test 3: Validation Passed")


if __name__ == '__main__':
    unittest.main()
