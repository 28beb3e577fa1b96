"""Tabular factored MDPs with intervention semantics.

A spec describes a finite MDP whose state is a tuple of discrete
variables and whose action is a tuple of independent blocks.  Each
action block intervenes on its own disjoint set of next-state variables
(its *effect set*): the block's intervention table maps (projected
action, values of the block's precondition variables) to the values the
effect variables are forced to take.  Every other next-state variable
follows its no-op conditional probability table.  Variables controlled
by no block may additionally condition on the realized values of effect
variables, which is how interventions propagate to the rest of the
state within a single step.

Joint states and joint actions are dense mixed-radix codes (see
`frl.indexing`); every table in this module is a dense ndarray.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .indexing import MixedRadix

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class NoopFactor:
    """No-op conditional table for one next-state variable.

    Args:
        var: index of the next-state variable this factor generates.
        state_parents: current-state parent variable indices.
        eff_parents: next-state parent variable indices; these must be
            variables controlled by some action block.  Only variables
            outside every effect set may declare them.
        table: shape (n_parent_rows, cardinality of var); each row is a
            distribution.  Row index = mixed-radix code of the state
            parent values followed by the eff parent values.
    """

    var: int
    state_parents: tuple[int, ...]
    eff_parents: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_parents", tuple(int(v) for v in self.state_parents))
        object.__setattr__(self, "eff_parents", tuple(int(v) for v in self.eff_parents))
        t = np.asarray(self.table, dtype=np.float64)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


@dataclass(frozen=True)
class SigmaTable:
    """Deterministic intervention table for one action block.

    `table[a_k, pre_row]` is the mixed-radix code of the values forced
    onto the block's effect variables; -1 marks an undefined entry
    (rejected by validation, and a `ConfigurationError` if ever hit at
    evaluation time on a spec built with validate=False).
    """

    block: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


@dataclass(frozen=True)
class FactoredMdpSpec:
    """Complete description of a factored-action MDP.

    Args:
        state_vars: cardinality of each state variable.
        action_blocks: per block, the cardinalities of its action
            variables; the block's projected action space is their
            product.
        eff_map: per block, the state variables it intervenes on.
            Effect sets must be non-empty and pairwise disjoint.
        pre_map: per block, the current-state variables its intervention
            table conditions on.
        sigma: per-block intervention tables.
        noop_dynamics: one `NoopFactor` per state variable, in variable
            order.
        reward: dense (n_states, n_states) table; entry [s, s'] is the
            reward for landing in s' from s.  Reward evaluation accepts
            an action argument for interface parity with learned reward
            models, but the tabular reward depends on (s, s') only.
        init_dist: initial distribution over joint states.
        discount: in (0, 1]; 1.0 requires declared terminal states.
        assume_positive: if True, validation rejects zero entries in
            no-op tables, which guarantees no-op propensities are
            strictly positive.
        terminal_states: absorbing joint states; episodes end there and
            their value is fixed at zero.
    """

    state_vars: tuple[int, ...]
    action_blocks: tuple[tuple[int, ...], ...]
    eff_map: tuple[tuple[int, ...], ...]
    pre_map: tuple[tuple[int, ...], ...]
    sigma: tuple[SigmaTable, ...]
    noop_dynamics: tuple[NoopFactor, ...]
    reward: np.ndarray
    init_dist: np.ndarray
    discount: float
    assume_positive: bool = False
    terminal_states: frozenset[int] = frozenset()
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "state_vars", tuple(int(c) for c in self.state_vars))
        object.__setattr__(self, "action_blocks", tuple(tuple(int(c) for c in b) for b in self.action_blocks))
        object.__setattr__(self, "eff_map", tuple(tuple(int(v) for v in b) for b in self.eff_map))
        object.__setattr__(self, "pre_map", tuple(tuple(int(v) for v in b) for b in self.pre_map))
        object.__setattr__(self, "sigma", tuple(self.sigma))
        object.__setattr__(self, "noop_dynamics", tuple(self.noop_dynamics))
        object.__setattr__(self, "terminal_states", frozenset(int(s) for s in self.terminal_states))
        r = np.asarray(self.reward, dtype=np.float64)
        r.setflags(write=False)
        object.__setattr__(self, "reward", r)
        d = np.asarray(self.init_dist, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "init_dist", d)

        object.__setattr__(self, "state_radix", MixedRadix(self.state_vars))
        object.__setattr__(self, "block_radix", tuple(MixedRadix(b) for b in self.action_blocks))
        object.__setattr__(self, "block_sizes", tuple(r.size for r in self.block_radix))
        object.__setattr__(self, "action_radix", MixedRadix(self.block_sizes))
        object.__setattr__(self, "pre_radix", tuple(MixedRadix([self.state_vars[v] for v in p]) for p in self.pre_map))
        object.__setattr__(self, "eff_radix", tuple(MixedRadix([self.state_vars[v] for v in e]) for e in self.eff_map))
        # decoded value of every state variable in every joint state
        object.__setattr__(self, "state_values", self.state_radix.table())
        var_block = np.full(len(self.state_vars), -1, dtype=np.int64)
        for k, eff in enumerate(self.eff_map):
            for v in eff:
                var_block[v] = k
        var_block.setflags(write=False)
        object.__setattr__(self, "var_block", var_block)
        object.__setattr__(self, "controlled_vars", tuple(int(v) for v in np.flatnonzero(var_block >= 0)))
        object.__setattr__(self, "uncontrolled_vars", tuple(int(v) for v in np.flatnonzero(var_block < 0)))
        if self.validate:
            self.check()

    # -- sizes ---------------------------------------------------------

    @property
    def n_states(self) -> int:
        return self.state_radix.size

    @property
    def n_actions(self) -> int:
        return self.action_radix.size

    @property
    def n_blocks(self) -> int:
        return len(self.action_blocks)

    @property
    def n_vars(self) -> int:
        return len(self.state_vars)

    # -- validation ----------------------------------------------------

    def check(self, require_disjoint_effects: bool = True) -> None:
        """Raise ValidationError on the first violated invariant."""
        M = self.n_vars
        if M == 0:
            raise ValidationError("spec needs at least one state variable")
        if self.n_blocks == 0:
            raise ValidationError("spec needs at least one action block")
        if len(self.eff_map) != self.n_blocks or len(self.pre_map) != self.n_blocks:
            raise ValidationError("eff_map/pre_map must have one entry per action block")
        seen: set[int] = set()
        for k, eff in enumerate(self.eff_map):
            if not eff:
                raise ValidationError(f"block {k} has an empty effect set")
            for v in eff:
                if not 0 <= v < M:
                    raise ValidationError(f"block {k} effect variable {v} out of range")
                if require_disjoint_effects and v in seen:
                    raise ValidationError(
                        f"state variable {v} appears in the effect set of more than one block"
                    )
                seen.add(v)
        for k, pre in enumerate(self.pre_map):
            for v in pre:
                if not 0 <= v < M:
                    raise ValidationError(f"block {k} precondition variable {v} out of range")

        if len(self.sigma) != self.n_blocks:
            raise ValidationError("need one intervention table per block")
        for k, sig in enumerate(self.sigma):
            if sig.block != k:
                raise ValidationError(f"sigma[{k}] is labeled for block {sig.block}")
            want = (self.block_sizes[k], self.pre_radix[k].size)
            if sig.table.shape != want:
                raise ShapeError(f"sigma[{k}] table has shape {sig.table.shape}, expected {want}")
            if (sig.table < 0).any():
                a_k, row = np.argwhere(sig.table < 0)[0]
                raise ValidationError(
                    f"sigma[{k}] undefined at projected action {a_k}, precondition row {row}"
                )
            if (sig.table >= self.eff_radix[k].size).any():
                raise ValidationError(f"sigma[{k}] has entries outside the effect domain")

        if len(self.noop_dynamics) != M:
            raise ValidationError("need one no-op factor per state variable")
        controlled = set(self.controlled_vars)
        for m, fac in enumerate(self.noop_dynamics):
            if fac.var != m:
                raise ValidationError(f"noop_dynamics[{m}] is labeled for variable {fac.var}")
            for v in fac.state_parents:
                if not 0 <= v < M:
                    raise ValidationError(f"factor {m} state parent {v} out of range")
            if fac.eff_parents and m in controlled:
                raise ValidationError(
                    f"controlled variable {m} may not condition on next-state values"
                )
            for v in fac.eff_parents:
                if v not in controlled:
                    raise ValidationError(
                        f"factor {m} eff parent {v} is not controlled by any block"
                    )
            rows = int(np.prod([self.state_vars[v] for v in fac.state_parents + fac.eff_parents], dtype=np.int64))
            if fac.table.shape != (rows, self.state_vars[m]):
                raise ShapeError(
                    f"factor {m} table has shape {fac.table.shape}, expected {(rows, self.state_vars[m])}"
                )
            if not np.isfinite(fac.table).all() or (fac.table < 0).any():
                raise ValidationError(f"factor {m} has negative or non-finite entries")
            err = np.abs(fac.table.sum(axis=1) - 1.0).max()
            if err > _PROB_TOL:
                raise ValidationError(f"factor {m} rows do not sum to 1 (max error {err:.3e})")
            if self.assume_positive and (fac.table <= 0).any():
                raise ValidationError(
                    f"factor {m} has zero entries but the spec is flagged assume_positive"
                )

        if self.reward.shape != (self.n_states, self.n_states):
            raise ShapeError(
                f"reward table has shape {self.reward.shape}, expected {(self.n_states, self.n_states)}"
            )
        if not np.isfinite(self.reward).all():
            raise ValidationError("reward table has non-finite entries")
        if self.init_dist.shape != (self.n_states,):
            raise ShapeError("init_dist must have one entry per joint state")
        if (self.init_dist < 0).any() or abs(self.init_dist.sum() - 1.0) > _PROB_TOL:
            raise ValidationError("init_dist is not a distribution")
        if not 0.0 < self.discount <= 1.0:
            raise ValidationError(f"discount must be in (0, 1], got {self.discount}")
        if self.discount == 1.0 and not self.terminal_states:
            raise ValidationError("discount 1.0 requires declared terminal states")
        for s in self.terminal_states:
            if not 0 <= s < self.n_states:
                raise ValidationError(f"terminal state {s} out of range")

    # -- coding helpers --------------------------------------------------

    def action_as_blocks(self, a) -> tuple[int, ...]:
        """Accept a joint action code or a per-block index sequence."""
        if np.isscalar(a) or isinstance(a, (int, np.integer)):
            return self.action_radix.decode(int(a))
        blocks = tuple(int(x) for x in a)
        if len(blocks) != self.n_blocks:
            raise DomainError(f"expected {self.n_blocks} block indices, got {len(blocks)}")
        for k, a_k in enumerate(blocks):
            if not 0 <= a_k < self.block_sizes[k]:
                raise DomainError(f"block {k} action {a_k} out of range [0, {self.block_sizes[k]})")
        return blocks

    def sigma_values(self, k: int, a_k: int, s: int) -> tuple[int, ...]:
        """Values forced onto block k's effect variables from state s."""
        pre_vals = [self.state_values[s, v] for v in self.pre_map[k]]
        row = self.pre_radix[k].encode(pre_vals)
        code = int(self.sigma[k].table[a_k, row])
        if code < 0:
            raise ConfigurationError(
                f"intervention table for block {k} is undefined at projected action "
                f"{a_k}, precondition values {tuple(int(v) for v in pre_vals)}"
            )
        return self.eff_radix[k].decode(code)

    def _factor_probs(self, m: int, s: int, cand: np.ndarray) -> np.ndarray:
        """P(next value of var m | parents) for every candidate next state.

        `cand` is the (n, M) decoded candidate matrix; eff parents are
        read from the candidates themselves.
        """
        fac = self.noop_dynamics[m]
        row = 0
        for v in fac.state_parents:
            row = row * self.state_vars[v] + int(self.state_values[s, v])
        if fac.eff_parents:
            rows = np.full(len(cand), row, dtype=np.int64)
            for v in fac.eff_parents:
                rows = rows * self.state_vars[v] + cand[:, v]
        else:
            rows = row
        return fac.table[rows, cand[:, m]]

    def _factor_prob_single(self, m: int, s: int, next_vals: Sequence[int]) -> float:
        fac = self.noop_dynamics[m]
        row = 0
        for v in fac.state_parents:
            row = row * self.state_vars[v] + int(self.state_values[s, v])
        for v in fac.eff_parents:
            row = row * self.state_vars[v] + int(next_vals[v])
        return float(fac.table[row, int(next_vals[fac.var])])

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "state_vars": list(self.state_vars),
            "action_blocks": [list(b) for b in self.action_blocks],
            "eff_map": [list(b) for b in self.eff_map],
            "pre_map": [list(b) for b in self.pre_map],
            "sigma": [
                {"block": sig.block, "table": sig.table.tolist()} for sig in self.sigma
            ],
            "noop_dynamics": [
                {
                    "var": fac.var,
                    "state_parents": list(fac.state_parents),
                    "eff_parents": list(fac.eff_parents),
                    "table": fac.table.tolist(),
                }
                for fac in self.noop_dynamics
            ],
            "reward": self.reward.tolist(),
            "init_dist": self.init_dist.tolist(),
            "discount": self.discount,
            "assume_positive": self.assume_positive,
            "terminal_states": sorted(self.terminal_states),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str, validate: bool = True) -> "FactoredMdpSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"spec is not valid JSON: {e}") from e
        try:
            return cls(
                state_vars=tuple(doc["state_vars"]),
                action_blocks=tuple(tuple(b) for b in doc["action_blocks"]),
                eff_map=tuple(tuple(b) for b in doc["eff_map"]),
                pre_map=tuple(tuple(b) for b in doc["pre_map"]),
                sigma=tuple(SigmaTable(d["block"], np.asarray(d["table"])) for d in doc["sigma"]),
                noop_dynamics=tuple(
                    NoopFactor(
                        d["var"],
                        tuple(d["state_parents"]),
                        tuple(d["eff_parents"]),
                        np.asarray(d["table"]),
                    )
                    for d in doc["noop_dynamics"]
                ),
                reward=np.asarray(doc["reward"]),
                init_dist=np.asarray(doc["init_dist"]),
                discount=float(doc["discount"]),
                assume_positive=bool(doc.get("assume_positive", False)),
                terminal_states=frozenset(doc.get("terminal_states", ())),
                validate=validate,
            )
        except KeyError as e:
            raise ValidationError(f"spec is missing field {e}") from e


# -- policies and Q tables ------------------------------------------------


@dataclass
class FactoredPolicy:
    """Deterministic per-block policy: blocks[k, s] is block k's action."""

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.int64)
        if self.blocks.ndim != 2:
            raise ShapeError("policy table must be 2-D (blocks, states)")

    def check(self, spec: FactoredMdpSpec) -> None:
        if self.blocks.shape != (spec.n_blocks, spec.n_states):
            raise ShapeError(
                f"policy has shape {self.blocks.shape}, expected {(spec.n_blocks, spec.n_states)}"
            )
        for k in range(spec.n_blocks):
            col = self.blocks[k]
            if col.min() < 0 or col.max() >= spec.block_sizes[k]:
                raise DomainError(f"policy block {k} has out-of-range actions")

    def joint_action(self, s: int) -> tuple[int, ...]:
        return tuple(int(a) for a in self.blocks[:, s])

    def joint_codes(self, spec: FactoredMdpSpec) -> np.ndarray:
        return spec.action_radix.encode_many(self.blocks.T)

    def copy(self) -> "FactoredPolicy":
        return FactoredPolicy(self.blocks.copy())

    @classmethod
    def random(cls, spec: FactoredMdpSpec, rng: np.random.Generator) -> "FactoredPolicy":
        rows = [rng.integers(0, n, size=spec.n_states) for n in spec.block_sizes]
        return cls(np.stack(rows))

    @classmethod
    def constant(cls, spec: FactoredMdpSpec, block_actions: Sequence[int]) -> "FactoredPolicy":
        rows = [np.full(spec.n_states, int(a), dtype=np.int64) for a in block_actions]
        return cls(np.stack(rows))


@dataclass
class QTable:
    """Dense action-value table; block=None means joint actions."""

    block: int | None
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2:
            raise ShapeError("Q table must be 2-D (states, actions)")
        if not np.isfinite(self.table).all():
            raise NumericError("Q table has non-finite entries")

    def greedy(self) -> np.ndarray:
        """Per-state argmax; ties go to the lowest action index."""
        return self.table.argmax(axis=1)

    def values(self, actions: np.ndarray) -> np.ndarray:
        return self.table[np.arange(self.table.shape[0]), actions]


# -- transition operators --------------------------------------------------


def interventional_transition(spec: FactoredMdpSpec, s: int, a) -> np.ndarray:
    """Distribution over next joint states when every block intervenes.

    Effect variables are pinned to their intervention-table values;
    every other variable follows its no-op factor, conditioning on the
    pinned effect values where it declares eff parents.
    """
    blocks = spec.action_as_blocks(a)
    cand = spec.state_values
    out = np.ones(spec.n_states)
    for k, a_k in enumerate(blocks):
        forced = spec.sigma_values(k, a_k, s)
        for v, val in zip(spec.eff_map[k], forced):
            out *= cand[:, v] == val
    for m in spec.uncontrolled_vars:
        out *= spec._factor_probs(m, s, cand)
    return out


def projected_transition(spec: FactoredMdpSpec, k: int, s: int, a_k: int) -> np.ndarray:
    """Distribution over next states when only block k intervenes.

    Block k's effect variables are pinned; the effect variables of every
    other block follow their no-op factors; uncontrolled variables
    condition on whatever effect values the candidate next state carries
    (pinned for block k, no-op sampled for the rest).
    """
    if not 0 <= k < spec.n_blocks:
        raise DomainError(f"block {k} out of range")
    if not 0 <= a_k < spec.block_sizes[k]:
        raise DomainError(f"projected action {a_k} out of range [0, {spec.block_sizes[k]})")
    cand = spec.state_values
    out = np.ones(spec.n_states)
    forced = spec.sigma_values(k, a_k, s)
    for v, val in zip(spec.eff_map[k], forced):
        out *= cand[:, v] == val
    for i in range(spec.n_blocks):
        if i == k:
            continue
        for v in spec.eff_map[i]:
            out *= spec._factor_probs(v, s, cand)
    for m in spec.uncontrolled_vars:
        out *= spec._factor_probs(m, s, cand)
    return out


def noop_propensity(spec: FactoredMdpSpec, k: int, s: int, s_next: int, a) -> float:
    """Product over blocks i != k of the no-op probability of the effect
    values that block i's intervention would have forced.

    Requires s_next to be consistent with those forced values; dividing
    the projected transition by this propensity recovers the fully
    interventional transition on its support.
    """
    blocks = spec.action_as_blocks(a)
    next_vals = spec.state_values[s_next]
    rho = 1.0
    for i, a_i in enumerate(blocks):
        if i == k:
            continue
        forced = spec.sigma_values(i, a_i, s)
        for v, val in zip(spec.eff_map[i], forced):
            if int(next_vals[v]) != val:
                raise DomainError(
                    f"next state {s_next} is inconsistent with block {i}'s intervention "
                    f"(variable {v} is {int(next_vals[v])}, intervention forces {val})"
                )
            p = spec._factor_prob_single(v, s, next_vals)
            if p <= 0.0:
                raise NumericError(
                    f"no-op factor for state variable {v} has zero probability at the "
                    f"intervened value; reweighting is undefined without positivity"
                )
            rho *= p
    return rho


def _noop_propensity_batch(spec: FactoredMdpSpec, k: int, s: int, blocks, cand_idx: np.ndarray) -> np.ndarray:
    """Vectorized propensity over candidate next-state codes (assumed consistent)."""
    cand = spec.state_values[cand_idx]
    rho = np.ones(len(cand_idx))
    for i, a_i in enumerate(blocks):
        if i == k:
            continue
        for v in spec.eff_map[i]:
            p = spec._factor_probs(v, s, cand)
            if (p <= 0.0).any():
                raise NumericError(
                    f"no-op factor for state variable {v} has zero probability at the "
                    f"intervened value; reweighting is undefined without positivity"
                )
            rho *= p
    return rho


def expected_reward(spec: FactoredMdpSpec, s: int, a) -> float:
    """Mean one-step reward under the interventional transition."""
    p = interventional_transition(spec, s, a)
    return float(p @ spec.reward[s])


# -- exact policy evaluation ------------------------------------------------


def _terminal_mask(spec: FactoredMdpSpec) -> np.ndarray:
    mask = np.zeros(spec.n_states, dtype=bool)
    for s in spec.terminal_states:
        mask[s] = True
    return mask


def _evaluate_rows(spec, rows, rewards, tol, max_iters):
    """Gauss-Seidel fixed point for V given per-state transition rows.

    rows[s] is a (support, probs) pair; terminal states stay at zero.
    """
    term = _terminal_mask(spec)
    v = np.zeros(spec.n_states)
    gamma = spec.discount
    for it in range(max_iters):
        delta = 0.0
        for s in range(spec.n_states):
            if term[s]:
                continue
            sup, pr = rows[s]
            new = rewards[s] + gamma * float(pr @ v[sup])
            delta = max(delta, abs(new - v[s]))
            v[s] = new
        if delta <= tol:
            return v
    raise NumericError(
        f"policy evaluation did not reach tolerance {tol} in {max_iters} sweeps "
        f"(last sup-norm change {delta:.3e})"
    )


def _joint_rows(spec: FactoredMdpSpec, policy: FactoredPolicy):
    rows = []
    rewards = np.zeros(spec.n_states)
    term = _terminal_mask(spec)
    for s in range(spec.n_states):
        if term[s]:
            rows.append((np.zeros(0, dtype=np.int64), np.zeros(0)))
            continue
        p = interventional_transition(spec, s, policy.joint_action(s))
        sup = np.flatnonzero(p)
        pr = p[sup]
        rows.append((sup, pr))
        rewards[s] = float(pr @ spec.reward[s, sup])
    return rows, rewards


def _projected_row(spec: FactoredMdpSpec, k: int, s: int, a_k: int, pinned: Sequence[int]):
    """Support and reweighted probabilities of the one-block intervention,
    restricted to next states consistent with every pinned block.

    The weights are projected probabilities divided by the no-op
    propensity of the pinned values, which renormalizes the projected
    transition onto the consistent slice.
    """
    proj = projected_transition(spec, k, s, a_k)
    cand = spec.state_values
    mask = proj > 0
    blocks = list(pinned)
    blocks[k] = a_k
    for i, a_i in enumerate(blocks):
        if i == k:
            continue
        forced = spec.sigma_values(i, a_i, s)
        for v, val in zip(spec.eff_map[i], forced):
            mask &= cand[:, v] == val
    sup = np.flatnonzero(mask)
    if len(sup) == 0:
        raise NumericError(
            f"no next state is consistent with the pinned interventions from state {s}; "
            f"a no-op factor assigns zero probability to an intervened value"
        )
    rho = _noop_propensity_batch(spec, k, s, blocks, sup)
    w = proj[sup] / rho
    return sup, w


def exact_q(
    spec: FactoredMdpSpec,
    policy: FactoredPolicy,
    block: int | None = None,
    *,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
) -> QTable:
    """Exact action-value table of a deterministic factored policy.

    With block=None the table covers joint actions and uses the fully
    interventional transition.  With block=k the table covers block k's
    projected actions and is computed through the projected transition
    reweighted by the no-op propensity of the remaining blocks, whose
    actions are pinned to the policy.  The two routes agree state-wise:
    the joint value function equals the reweighted projected one.
    """
    policy.check(spec)
    term = _terminal_mask(spec)
    gamma = spec.discount
    if block is None:
        rows, rewards = _joint_rows(spec, policy)
        v = _evaluate_rows(spec, rows, rewards, tol, max_iters)
        q = np.zeros((spec.n_states, spec.n_actions))
        for s in range(spec.n_states):
            if term[s]:
                continue
            for a in range(spec.n_actions):
                p = interventional_transition(spec, s, a)
                sup = np.flatnonzero(p)
                q[s, a] = float(p[sup] @ (spec.reward[s, sup] + gamma * v[sup]))
        return QTable(None, q)

    k = int(block)
    if not 0 <= k < spec.n_blocks:
        raise DomainError(f"block {k} out of range")
    rows = []
    rewards = np.zeros(spec.n_states)
    for s in range(spec.n_states):
        if term[s]:
            rows.append((np.zeros(0, dtype=np.int64), np.zeros(0)))
            continue
        pinned = policy.joint_action(s)
        sup, w = _projected_row(spec, k, s, pinned[k], pinned)
        rows.append((sup, w))
        rewards[s] = float(w @ spec.reward[s, sup])
    v = _evaluate_rows(spec, rows, rewards, tol, max_iters)
    q = np.zeros((spec.n_states, spec.block_sizes[k]))
    for s in range(spec.n_states):
        if term[s]:
            continue
        pinned = policy.joint_action(s)
        for a_k in range(spec.block_sizes[k]):
            sup, w = _projected_row(spec, k, s, a_k, pinned)
            q[s, a_k] = float(w @ (spec.reward[s, sup] + gamma * v[sup]))
    return QTable(k, q)
