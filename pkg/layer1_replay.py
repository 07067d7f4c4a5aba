"""
Layer 1: Experience Replay

Fixed-capacity FIFO ring of transitions with uniform sampling (with
replacement). Storage is preallocated numpy arrays, one per field, so a
mini-batch is a fancy-index away.

Warm-up gating is NOT done here: the buffer can be sampled whenever it holds
at least one transition.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from layer0_nncore import ShapeError

DEFAULT_CAPACITY = 200_000


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, s', done) tuple."""
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and self.reward == other.reward
            and np.array_equal(self.next_state, other.next_state)
            and self.done == other.done
        )

    __hash__ = None


@dataclass
class TransitionBatch:
    """Column-stacked mini-batch; rewards and dones are 1-D of length N."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def transitions(self) -> List[Transition]:
        return [
            Transition(self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i], bool(self.dones[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    """
    Ring buffer of transitions.

    Once full, each push overwrites the oldest stored transition.
    """

    def __init__(self, state_dim: int, action_dim: int, capacity: int = DEFAULT_CAPACITY):
        """
        Args:
            state_dim: width of state / next_state vectors
            action_dim: width of action vectors
            capacity: maximum number of stored transitions
        """
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)

        self.states = np.zeros((self.capacity, self.state_dim), dtype=np.float64)
        self.actions = np.zeros((self.capacity, self.action_dim), dtype=np.float64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.next_states = np.zeros((self.capacity, self.state_dim), dtype=np.float64)
        self.dones = np.zeros(self.capacity, dtype=bool)

        self.cursor = 0  # next write slot
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, transition: Transition) -> None:
        """
        Store a transition, evicting the oldest one when full.

        Raises:
            ShapeError: state/action widths differ from the buffer's
            ValueError: non-finite reward
        """
        state = np.asarray(transition.state, dtype=np.float64)
        action = np.asarray(transition.action, dtype=np.float64)
        next_state = np.asarray(transition.next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ShapeError(
                f"state/next_state must have width {self.state_dim}, got {state.shape} and {next_state.shape}"
            )
        if action.shape != (self.action_dim,):
            raise ShapeError(f"action must have width {self.action_dim}, got {action.shape}")
        reward = float(transition.reward)
        if not np.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")

        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = bool(transition.done)

        self.cursor = (self.cursor + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def _slot_order(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        if self.count < self.capacity:
            return np.arange(self.count)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def __getitem__(self, slot: int) -> Transition:
        if not 0 <= slot < self.count:
            raise IndexError(f"slot {slot} out of range for {self.count} stored transitions")
        return Transition(
            self.states[slot].copy(),
            self.actions[slot].copy(),
            float(self.rewards[slot]),
            self.next_states[slot].copy(),
            bool(self.dones[slot]),
        )

    def contents(self) -> List[Transition]:
        """Stored transitions, oldest first."""
        return [self[int(s)] for s in self._slot_order()]

    def sample(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        """
        Draw n transitions uniformly with replacement.

        Args:
            n: batch size
            rng: generator that owns the draw (determinism comes from its seed)

        Returns:
            TransitionBatch: copies of the stored rows plus the slot indices
        """
        if self.count == 0:
            raise ValueError("Cannot sample from an empty replay buffer")
        if n < 1:
            raise ValueError(f"batch size must be positive, got {n}")
        idx = rng.integers(0, self.count, size=n)
        return TransitionBatch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            dones=self.dones[idx],
            indices=idx,
        )
