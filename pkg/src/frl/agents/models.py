"""Learned dynamics / reward models and projected-batch augmentation.

The dynamics side is one delta model per action block: an all-linear
network reads (state, one-hot block action) and predicts the change of
the state dimensions that block controls; evaluation returns
``prev + delta * (1 + noise)`` with a single scalar Gaussian noise draw
per call.  A full next state under do(a_k) is assembled by running
block k's model on the forced action and every other block's model on
its no-op action, copying any dimensions no block controls.

The reward model is a small ReLU network over (s, s', block indices).
For tabular tasks `TabularModelSampler` exposes the same two-method
surface (sample_projected_next / predict) backed by an estimated spec,
so `augment_batch` is agnostic about which one it is driving.
"""

from __future__ import annotations

import numpy as np

from ..approx import Mlp, Optimizer
from ..errors import ConfigurationError, ShapeError, StateError
from ..factored_mdp import FactoredMdpSpec, interventional_transition, projected_transition
from .replay import TransitionRecord, batch_arrays


def _mse_step(net: Mlp, opt: Optimizer, x: np.ndarray, target: np.ndarray) -> float:
    pred = net.forward(x)
    err = pred - target
    loss = float(np.mean(err**2))
    grads, _ = net.backward(2.0 * err / err.size)
    opt.step(grads)
    return loss


class DynamicsModel:
    """Per-block next-state delta predictors.

    Each block's network is linear end to end, which is exact whenever
    the controlled dimensions respond affinely to (state, force); the
    noise factor keeps sampled successors from collapsing onto the
    point prediction.
    """

    def __init__(
        self,
        state_dim: int,
        block_sizes,
        block_dims,
        hidden=(64, 64),
        noise_variance: float = 1e-4,
        lr: float = 1e-3,
        rng=None,
    ):
        if len(block_sizes) != len(block_dims):
            raise ConfigurationError("block_sizes and block_dims disagree on block count")
        self.state_dim = int(state_dim)
        self.block_sizes = tuple(int(b) for b in block_sizes)
        self.block_dims = tuple(tuple(int(d) for d in dims) for dims in block_dims)
        for dims in self.block_dims:
            if dims and max(dims) >= self.state_dim:
                raise ConfigurationError(f"block dims {dims} outside the {self.state_dim}-dim state")
        self.noise_variance = float(noise_variance)
        rng = rng or np.random.default_rng()
        self.nets = [
            Mlp(
                (self.state_dim + b, *hidden, len(dims)),
                activation="identity",
                out_activation="identity",
                rng=rng,
            )
            for b, dims in zip(self.block_sizes, self.block_dims)
        ]
        self.optimizers = [Optimizer(net.params(), kind="adam", lr=lr) for net in self.nets]
        self.train_steps = [0] * len(self.nets)

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    def ready(self, k: int | None = None) -> bool:
        if k is None:
            return all(s > 0 for s in self.train_steps)
        return self.train_steps[k] > 0

    def _inputs(self, k: int, states: np.ndarray, actions_k: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions_k = np.asarray(actions_k, dtype=np.int64)
        if actions_k.min() < 0 or actions_k.max() >= self.block_sizes[k]:
            raise ShapeError(f"block {k} action out of range [0, {self.block_sizes[k]})")
        onehot = np.zeros((states.shape[0], self.block_sizes[k]))
        onehot[np.arange(states.shape[0]), actions_k] = 1.0
        return np.concatenate([states, onehot], axis=1)

    def train_step(self, k: int, states, actions_k, next_states) -> float:
        """One squared-error step on block k's delta targets."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        dims = list(self.block_dims[k])
        target = next_states[:, dims] - states[:, dims]
        loss = _mse_step(self.nets[k], self.optimizers[k], self._inputs(k, states, actions_k), target)
        self.train_steps[k] += 1
        return loss

    def predict_dims(self, k: int, states, actions_k, rng: np.random.Generator) -> np.ndarray:
        """Sampled values for block k's controlled dimensions."""
        if not self.ready(k):
            raise StateError(f"dynamics model for block {k} has not been trained")
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        delta = self.nets[k].forward(self._inputs(k, states, actions_k))
        noise = rng.normal(0.0, np.sqrt(self.noise_variance))
        prev = states[:, list(self.block_dims[k])]
        return prev + delta * (1.0 + noise)

    def sample_projected_next(self, states, k: int, actions_k, noop_actions, rng) -> np.ndarray:
        """Next states under do(a_k): block k forced, the rest at no-op."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions_k = np.asarray(actions_k, dtype=np.int64)
        out = states.copy()
        for j in range(self.n_blocks):
            if not self.block_dims[j]:
                continue
            a_j = actions_k if j == k else np.full(states.shape[0], int(noop_actions[j]))
            out[:, list(self.block_dims[j])] = self.predict_dims(j, states, a_j, rng)
        return out


class RewardModel:
    """ReLU network regressing reward on (s, s', block action indices)."""

    def __init__(self, state_dim: int, n_blocks: int, hidden=(64, 64, 64), lr: float = 1e-3, rng=None):
        self.state_dim = int(state_dim)
        self.n_blocks = int(n_blocks)
        self.net = Mlp((2 * self.state_dim + self.n_blocks, *hidden, 1), rng=rng or np.random.default_rng())
        self.optimizer = Optimizer(self.net.params(), kind="adam", lr=lr)
        self.train_steps = 0

    def _inputs(self, states, actions, next_states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if actions.shape[1] != self.n_blocks:
            raise ShapeError(f"actions have {actions.shape[1]} blocks, model expects {self.n_blocks}")
        return np.concatenate([states, next_states, actions], axis=1)

    def train_step(self, states, actions, next_states, rewards) -> float:
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1, 1)
        loss = _mse_step(self.net, self.optimizer, self._inputs(states, actions, next_states), rewards)
        self.train_steps += 1
        return loss

    def ready(self) -> bool:
        return self.train_steps > 0

    def predict(self, states, actions, next_states) -> np.ndarray:
        if not self.ready():
            raise StateError("reward model has not been trained")
        return self.net.forward(self._inputs(states, actions, next_states))[:, 0]


class TabularModelSampler:
    """Exact-sampling stand-in for the neural models on tabular tasks.

    States are one-hot vectors over an estimated spec's state codes and
    rewards come from the spec's (s, s') table.  Two successor modes:

    * "padded" pins every other block to its no-op action index, the
      only conditional a model fitted from fully-intervened logs can
      support;
    * "projected" lets everything outside the forced block follow the
      spec's no-op dynamics, which needs a spec whose no-op factors are
      all known (e.g. the exact one).
    """

    def __init__(self, spec: FactoredMdpSpec, noop_actions=None, mode: str = "padded"):
        if mode not in ("padded", "projected"):
            raise ConfigurationError(f"unknown sampler mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.noop_actions = tuple(
            int(a) for a in (noop_actions if noop_actions is not None else [0] * spec.n_blocks)
        )
        self._rows: dict[tuple, np.ndarray] = {}

    def _codes(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.spec.n_states:
            raise ShapeError(
                f"expected one-hot states of width {self.spec.n_states}, got {states.shape[1]}"
            )
        return states.argmax(axis=1)

    def ready(self, k=None) -> bool:
        return True

    def _row(self, s: int, k: int, a_k: int, noop) -> np.ndarray:
        if self.mode == "projected":
            key = ("proj", s, k, a_k)
            if key not in self._rows:
                self._rows[key] = projected_transition(self.spec, k, s, a_k)
        else:
            joint = list(noop)
            joint[k] = a_k
            key = ("pad", s, tuple(joint))
            if key not in self._rows:
                self._rows[key] = interventional_transition(self.spec, s, tuple(joint))
        return self._rows[key]

    def sample_projected_next(self, states, k: int, actions_k, noop_actions=None, rng=None) -> np.ndarray:
        codes = self._codes(states)
        actions_k = np.asarray(actions_k, dtype=np.int64)
        noop = tuple(int(a) for a in noop_actions) if noop_actions is not None else self.noop_actions
        out = np.zeros((len(codes), self.spec.n_states))
        for i, (s, a_k) in enumerate(zip(codes, actions_k)):
            row = self._row(int(s), k, int(a_k), noop)
            out[i, rng.choice(self.spec.n_states, p=row)] = 1.0
        return out

    def predict(self, states, actions, next_states) -> np.ndarray:
        codes = self._codes(states)
        next_codes = self._codes(next_states)
        return self.spec.reward[codes, next_codes]

    def terminal_of(self, next_states) -> np.ndarray:
        """Whether each one-hot successor is one of the spec's terminals."""
        terminal = self.spec.terminal_states
        return np.array([code in terminal for code in self._codes(next_states)])


def augment_batch(
    records,
    k: int,
    dynamics,
    reward_model,
    noop_actions,
    rng: np.random.Generator,
) -> list[TransitionRecord]:
    """Rewrite a batch to follow the block-k projected transition.

    Every record keeps its state; the action collapses to block k's
    entry padded with no-ops, the next state is re-sampled from the
    dynamics model under do(a_k), and the reward is re-evaluated by the
    reward model at the synthesized successor.  Dynamics models that
    can recognize terminal successors (`terminal_of`) refresh the done
    flag; otherwise the original flag is carried over.
    """
    states, actions, _, _, _ = batch_arrays(records)
    padded = np.tile(np.asarray(noop_actions, dtype=np.int64), (len(records), 1))
    padded[:, k] = actions[:, k]
    next_states = dynamics.sample_projected_next(states, k, actions[:, k], noop_actions, rng)
    rewards = reward_model.predict(states, padded, next_states)
    if hasattr(dynamics, "terminal_of"):
        dones = dynamics.terminal_of(next_states)
    else:
        dones = [r.done for r in records]
    return [
        TransitionRecord(
            state=states[i],
            action=tuple(padded[i]),
            reward=float(rewards[i]),
            next_state=next_states[i],
            done=bool(dones[i]),
            origin="augmented",
            block_tag=k,
        )
        for i in range(len(records))
    ]
