"""Tabular planning and model estimation for factored-action MDPs.

`factored_policy_iteration` is block-coordinate policy iteration: it
evaluates the current joint policy, expands one projected Q table per
block (every other block pinned to the policy through its intervention
table), and greedily improves a single block per iteration.  The joint
Howard-iteration oracle `joint_policy_iteration` solves the same MDP
over the flat joint action space with a dense linear solve, so the two
routes cross-check each other.

`learn_model` fits intervention tables (majority vote per cell), no-op
factors and rewards (empirical frequencies/means) from logged
transitions; `sample_complexity_experiment` measures how the sup-norm
estimation error shrinks with sample size against closed-form bounds.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    ModelCoverageError,
    NumericError,
)
from .factored_mdp import (
    FactoredMdpSpec,
    FactoredPolicy,
    NoopFactor,
    QTable,
    SigmaTable,
    _evaluate_rows,
    _joint_rows,
    _terminal_mask,
    interventional_transition,
    projected_transition,
)


# -- block-coordinate policy iteration --------------------------------------


@dataclass
class IterationRecord:
    index: int
    improved_block: int
    n_changed: int
    policy: np.ndarray  # (K, n_states) snapshot after improvement
    values: np.ndarray  # V of the policy that was evaluated this iteration
    q_tables: list[QTable] | None


@dataclass
class PolicyIterationTrace:
    iterations: list[IterationRecord]
    final_policy: FactoredPolicy
    final_values: np.ndarray
    terminated: str  # "converged" | "budget"
    imputed_cells: list[str] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.iterations:
            lines.append(
                json.dumps(
                    {
                        "iter": rec.index,
                        "improved_block": rec.improved_block,
                        "n_changed": rec.n_changed,
                        "policy": rec.policy.tolist(),
                        "values": rec.values.tolist(),
                        "q_tables": None
                        if rec.q_tables is None
                        else [qt.table.tolist() for qt in rec.q_tables],
                    }
                )
            )
        lines.append(
            json.dumps(
                {
                    "terminated": self.terminated,
                    "final_policy": self.final_policy.blocks.tolist(),
                    "final_values": self.final_values.tolist(),
                    "imputed_cells": self.imputed_cells,
                }
            )
        )
        return "\n".join(lines) + "\n"


def _policy_values(spec, policy, tol, max_iters):
    rows, rewards = _joint_rows(spec, policy)
    return _evaluate_rows(spec, rows, rewards, tol, max_iters)


def _block_q_tables(spec, policy, values):
    """Projected Q per block: every other block pinned to the policy,
    so each entry is one interventional backup of the composed action."""
    term = _terminal_mask(spec)
    gamma = spec.discount
    tables = []
    for k in range(spec.n_blocks):
        q = np.zeros((spec.n_states, spec.block_sizes[k]))
        for s in range(spec.n_states):
            if term[s]:
                continue
            blocks = list(policy.joint_action(s))
            for a_k in range(spec.block_sizes[k]):
                blocks[k] = a_k
                p = interventional_transition(spec, s, blocks)
                sup = np.flatnonzero(p)
                q[s, a_k] = float(p[sup] @ (spec.reward[s, sup] + gamma * values[sup]))
        tables.append(QTable(k, q))
    return tables


def factored_policy_iteration(
    model,
    init_policy: FactoredPolicy,
    *,
    block_order: str = "round_robin",
    eval_tol: float = 1e-10,
    max_sweeps: int | None = None,
    seed: int | None = None,
    store_q: bool = True,
) -> PolicyIterationTrace:
    """Block-coordinate policy iteration over projected Q tables.

    Accepts an exact spec or a `LearnedModel`; a learned model is first
    checked for zero-count cells on states reachable from the initial
    distribution (raising `ModelCoverageError` listing them), then
    converted to a spec, with unreachable rows imputed uniform and the
    imputations recorded in the trace.

    One iteration = evaluate the current policy, improve one block
    (greedy per state, lowest action index on ties).  Terminates once a
    full pass over the blocks changes nothing; `max_sweeps` defaults to
    the finite-termination bound n_states * sum(block sizes).
    """
    imputed: list[str] = []
    if isinstance(model, LearnedModel):
        missing = check_model_coverage(model)
        if missing:
            raise ModelCoverageError(
                "learned model has zero-count cells on reachable states: "
                + "; ".join(missing[:20])
                + (f" (+{len(missing) - 20} more)" if len(missing) > 20 else "")
            )
        spec, imputed = model.to_spec(fill_unvisited=True)
    else:
        spec = model
    policy = init_policy.copy()
    policy.check(spec)
    K = spec.n_blocks
    if max_sweeps is None:
        max_sweeps = spec.n_states * sum(spec.block_sizes) + 1
    if block_order == "round_robin":
        schedule = None
    elif block_order == "random":
        schedule = np.random.default_rng(seed)
    else:
        raise ConfigurationError(f"unknown block order {block_order!r}")

    records: list[IterationRecord] = []
    terminated = "budget"
    it = 0
    stable_blocks: set[int] = set()  # blocks rechecked since the last change
    for sweep in range(max_sweeps):
        order = list(range(K)) if schedule is None else schedule.permutation(K).tolist()
        for k in order:
            values = _policy_values(spec, policy, eval_tol, 1_000_000)
            q_tables = _block_q_tables(spec, policy, values)
            greedy = q_tables[k].greedy()
            n_changed = int(np.sum(greedy != policy.blocks[k]))
            policy.blocks[k] = greedy
            records.append(
                IterationRecord(
                    index=it,
                    improved_block=k,
                    n_changed=n_changed,
                    policy=policy.blocks.copy(),
                    values=values,
                    q_tables=q_tables if store_q else None,
                )
            )
            it += 1
            if n_changed == 0:
                stable_blocks.add(k)
            else:
                stable_blocks.clear()
            if len(stable_blocks) == K:
                terminated = "converged"
                break
        if terminated == "converged":
            break
    final_values = _policy_values(spec, policy, eval_tol, 1_000_000)
    return PolicyIterationTrace(
        iterations=records,
        final_policy=policy,
        final_values=final_values,
        terminated=terminated,
        imputed_cells=imputed,
    )


# -- joint policy-iteration oracle -------------------------------------------


@dataclass
class JointPiResult:
    policy: np.ndarray  # joint action code per state
    q: QTable
    values: np.ndarray
    iterations: int


def joint_policy_iteration(
    spec: FactoredMdpSpec,
    init: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iters: int = 500,
) -> JointPiResult:
    """Howard policy iteration over the flat joint action space.

    Policy evaluation is a direct dense linear solve, improvement is
    greedy with lowest-index tie-breaking.  Serves as the exact oracle
    the block-coordinate method is compared against.
    """
    n, A = spec.n_states, spec.n_actions
    term = _terminal_mask(spec)
    policy = np.zeros(n, dtype=np.int64) if init is None else np.asarray(init, dtype=np.int64).copy()
    if policy.shape != (n,) or policy.min() < 0 or policy.max() >= A:
        raise DomainError("init policy must map every state to a joint action code")
    rows = {}

    def row(s, a):
        key = (s, a)
        if key not in rows:
            rows[key] = interventional_transition(spec, s, a)
        return rows[key]

    gamma = spec.discount
    free = ~term
    nf = int(free.sum())
    values = np.zeros(n)
    for it in range(max_iters):
        P = np.zeros((n, n))
        r = np.zeros(n)
        for s in range(n):
            if term[s]:
                continue
            p = row(s, int(policy[s]))
            P[s] = p
            r[s] = p @ spec.reward[s]
        try:
            sol = np.linalg.solve(np.eye(nf) - gamma * P[np.ix_(free, free)], r[free])
        except np.linalg.LinAlgError as e:
            raise NumericError(f"policy evaluation solve failed: {e}") from e
        if not np.isfinite(sol).all():
            raise NumericError("policy evaluation produced non-finite values")
        values = np.zeros(n)
        values[free] = sol
        q = np.zeros((n, A))
        for s in range(n):
            if term[s]:
                continue
            for a in range(A):
                p = row(s, a)
                q[s, a] = p @ (spec.reward[s] + gamma * values)
        new_policy = q.argmax(axis=1)
        new_policy[term] = 0
        if np.array_equal(new_policy, policy):
            return JointPiResult(policy, QTable(None, q), values, it + 1)
        policy = new_policy
    raise NumericError(f"joint policy iteration did not converge in {max_iters} iterations")


def finite_horizon_values(
    spec: FactoredMdpSpec, horizon: int, policy: FactoredPolicy | None = None
) -> np.ndarray:
    """Backward-induction state values over a fixed horizon.

    With a policy the values are that policy's; without one they are
    optimal.  Terminal states stay at zero throughout.
    """
    term = _terminal_mask(spec)
    gamma = spec.discount
    v = np.zeros(spec.n_states)
    rows = {}

    def row(s, a):
        key = (s, a)
        if key not in rows:
            rows[key] = interventional_transition(spec, s, a)
        return rows[key]

    for _ in range(horizon):
        nxt = np.zeros(spec.n_states)
        for s in range(spec.n_states):
            if term[s]:
                continue
            if policy is None:
                best = -np.inf
                for a in range(spec.n_actions):
                    p = row(s, a)
                    best = max(best, float(p @ (spec.reward[s] + gamma * v)))
                nxt[s] = best
            else:
                p = row(s, spec.action_radix.encode(policy.joint_action(s)))
                nxt[s] = float(p @ (spec.reward[s] + gamma * v))
        v = nxt
    return v


# -- model learning -----------------------------------------------------------


@dataclass
class LearnedModel:
    """Empirical tables estimated from logged transitions.

    Mirrors the structure of the skeleton spec it was fitted to; rows
    with zero visit count keep zero probability and appear in
    `zero_count_cells()` rather than being silently uniform.
    """

    skeleton: FactoredMdpSpec
    sigma_value_counts: list[np.ndarray]  # (|A_k|, n_pre_rows, eff_dom)
    noop_counts: list[np.ndarray]  # (n_rows, card)
    reward_sum: np.ndarray  # (n_states, n_states)
    reward_count: np.ndarray

    @property
    def sigma_hat(self) -> list[np.ndarray]:
        out = []
        for counts in self.sigma_value_counts:
            total = counts.sum(axis=2)
            hat = counts.argmax(axis=2)
            hat[total == 0] = -1
            out.append(hat)
        return out

    @property
    def noop_tables(self) -> list[np.ndarray]:
        out = []
        for counts in self.noop_counts:
            rowsum = counts.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore"):
                t = np.where(rowsum > 0, counts / np.maximum(rowsum, 1), 0.0)
            out.append(t)
        return out

    def zero_count_cells(self) -> list[str]:
        missing = []
        for k, counts in enumerate(self.sigma_value_counts):
            empty = np.argwhere(counts.sum(axis=2) == 0)
            for a_k, row in empty:
                missing.append(f"sigma[{k}] cell (action {a_k}, pre row {row})")
        for m, counts in enumerate(self.noop_counts):
            for row in np.flatnonzero(counts.sum(axis=1) == 0):
                missing.append(f"noop factor {m} row {row}")
        return missing

    def to_spec(self, fill_unvisited: bool = False) -> tuple[FactoredMdpSpec, list[str]]:
        """Materialize a spec from the estimates.

        Unvisited rows are only ever imputed (uniform) when
        `fill_unvisited` is set; the imputed cells are returned so the
        caller can surface them.
        """
        missing = self.zero_count_cells()
        if missing and not fill_unvisited:
            raise ModelCoverageError(
                "model has zero-count cells: " + "; ".join(missing[:20])
            )
        sk = self.skeleton
        sigmas = []
        for k, hat in enumerate(self.sigma_hat):
            t = hat.copy()
            if fill_unvisited:
                t[t < 0] = 0
            sigmas.append(SigmaTable(k, t))
        factors = []
        for m, table in enumerate(self.noop_tables):
            t = table.copy()
            empty = t.sum(axis=1) == 0
            if fill_unvisited and empty.any():
                t[empty] = 1.0 / t.shape[1]
            factors.append(
                NoopFactor(
                    m,
                    sk.noop_dynamics[m].state_parents,
                    sk.noop_dynamics[m].eff_parents,
                    t,
                )
            )
        with np.errstate(invalid="ignore"):
            reward = np.where(self.reward_count > 0, self.reward_sum / np.maximum(self.reward_count, 1), 0.0)
        spec = FactoredMdpSpec(
            state_vars=sk.state_vars,
            action_blocks=sk.action_blocks,
            eff_map=sk.eff_map,
            pre_map=sk.pre_map,
            sigma=tuple(sigmas),
            noop_dynamics=tuple(factors),
            reward=reward,
            init_dist=sk.init_dist,
            discount=sk.discount,
            terminal_states=sk.terminal_states,
        )
        return spec, missing


def learn_model(samples, skeleton: FactoredMdpSpec) -> LearnedModel:
    """Fit empirical tables from transitions.

    Only the skeleton's structure (variable cardinalities, blocks,
    effect/precondition maps, no-op parent sets, discount, initial
    distribution, terminals) is read; its tables are ignored.

    Each sample needs attributes state, action, next_state, reward and
    block_tag.  With block_tag=None the action is a joint action (all
    blocks intervened: every block teaches its intervention cell, no
    controlled variable teaches its no-op factor).  With block_tag=k the
    action is block k's projected action; the remaining blocks' effect
    variables followed no-op dynamics and teach their factors.
    """
    sk = skeleton
    sigma_counts = [
        np.zeros((sk.block_sizes[k], sk.pre_radix[k].size, sk.eff_radix[k].size), dtype=np.int64)
        for k in range(sk.n_blocks)
    ]
    noop_counts = [
        np.zeros_like(sk.noop_dynamics[m].table, dtype=np.int64) for m in range(sk.n_vars)
    ]
    reward_sum = np.zeros((sk.n_states, sk.n_states))
    reward_count = np.zeros((sk.n_states, sk.n_states), dtype=np.int64)

    def factor_row(m, svals, nvals):
        fac = sk.noop_dynamics[m]
        row = 0
        for v in fac.state_parents:
            row = row * sk.state_vars[v] + int(svals[v])
        for v in fac.eff_parents:
            row = row * sk.state_vars[v] + int(nvals[v])
        return row

    for rec in samples:
        s, s_next = int(rec.state), int(rec.next_state)
        svals = sk.state_radix.decode(s)
        nvals = sk.state_radix.decode(s_next)
        tag = rec.block_tag
        if tag is None:
            blocks = sk.action_as_blocks(rec.action)
            taught = list(range(sk.n_blocks))
        else:
            blocks = {int(tag): int(rec.action)}
            taught = [int(tag)]
        for k in taught:
            a_k = blocks[k]
            pre_row = sk.pre_radix[k].encode([svals[v] for v in sk.pre_map[k]])
            eff_code = sk.eff_radix[k].encode([nvals[v] for v in sk.eff_map[k]])
            sigma_counts[k][a_k, pre_row, eff_code] += 1
        for m in range(sk.n_vars):
            block_of_m = int(sk.var_block[m])
            if block_of_m >= 0 and block_of_m in taught:
                continue  # intervened, not a no-op observation
            noop_counts[m][factor_row(m, svals, nvals), nvals[m]] += 1
        reward_sum[s, s_next] += float(rec.reward)
        reward_count[s, s_next] += 1
    return LearnedModel(sk, sigma_counts, noop_counts, reward_sum, reward_count)


def check_model_coverage(model: LearnedModel) -> list[str]:
    """Zero-count cells that planning from the initial distribution
    could touch.  Reachability is expanded through a uniform-imputed
    copy of the model, which can only widen the reachable set."""
    spec, _ = model.to_spec(fill_unvisited=True)
    sk = model.skeleton
    reachable = set(int(s) for s in np.flatnonzero(sk.init_dist > 0))
    frontier = list(reachable)
    while frontier:
        s = frontier.pop()
        if s in sk.terminal_states:
            continue
        succ = set()
        for a in range(spec.n_actions):
            p = interventional_transition(spec, s, a)
            succ.update(int(x) for x in np.flatnonzero(p > 0))
        for s2 in succ:
            if s2 not in reachable:
                reachable.add(s2)
                frontier.append(s2)
    missing = []
    sigma_hat = model.sigma_hat
    for s in sorted(reachable):
        if s in sk.terminal_states:
            continue
        svals = sk.state_radix.decode(s)
        achievable = []  # per block, set of effect codes reachable from s
        for k in range(sk.n_blocks):
            pre_row = sk.pre_radix[k].encode([svals[v] for v in sk.pre_map[k]])
            codes = set()
            for a_k in range(sk.block_sizes[k]):
                if model.sigma_value_counts[k][a_k, pre_row].sum() == 0:
                    missing.append(f"sigma[{k}] cell (action {a_k}, pre row {pre_row}) (state {s})")
                else:
                    codes.add(int(sigma_hat[k][a_k, pre_row]))
            achievable.append(codes)
        for m in range(sk.n_vars):
            if int(sk.var_block[m]) >= 0:
                continue  # joint planning intervenes every block; its no-op rows are never read
            fac = sk.noop_dynamics[m]
            base = 0
            for v in fac.state_parents:
                base = base * sk.state_vars[v] + int(svals[v])
            rows = {base}
            for v in fac.eff_parents:
                k = int(sk.var_block[v])
                pos = sk.eff_map[k].index(v)
                vals = set()
                for code in achievable[k]:
                    vals.add(sk.eff_radix[k].decode(code)[pos])
                rows = {r * sk.state_vars[v] + int(val) for r in rows for val in vals}
            for r in rows:
                if model.noop_counts[m][r].sum() == 0:
                    missing.append(f"noop factor {m} row {r} (state {s})")
    seen = set()
    out = []
    for cell in missing:
        if cell not in seen:
            seen.add(cell)
            out.append(cell)
    return out


# -- sample-complexity harness -------------------------------------------------


@dataclass
class _Sample:
    state: int
    action: int
    reward: float
    next_state: int
    block_tag: int


def theorem_sample_bounds(spec: FactoredMdpSpec, eps: float, delta: float) -> dict:
    """Closed-form sample counts sufficient for eps-accurate tables.

    n_p covers the no-op/uncontrolled dynamics: parameter-set size is
    the uncontrolled domain, conditioning-set size the full state domain
    times the controlled domain.  n_sigma covers the intervention tables
    per block (effect domain times precondition domain).
    """
    if not (0 < eps and 0 < delta < 1):
        raise DomainError("need eps > 0 and delta in (0, 1)")
    u_dom = int(np.prod([spec.state_vars[v] for v in spec.uncontrolled_vars])) if spec.uncontrolled_vars else 1
    c_dom = int(np.prod([spec.state_vars[v] for v in spec.controlled_vars]))
    s_dom = spec.n_states
    n_p = u_dom * s_dom * c_dom / eps**2 * math.log(2 * s_dom * c_dom / delta)
    n_sigma = []
    for k in range(spec.n_blocks):
        e_dom = spec.eff_radix[k].size
        p_dom = spec.pre_radix[k].size
        n_sigma.append(e_dom * p_dom / eps**2 * math.log(2 * p_dom / delta))
    return {"n_p": n_p, "n_sigma": n_sigma}


def error_bounds_at(spec: FactoredMdpSpec, n: int, delta: float) -> dict:
    """Invert the sample-count formulas: the error the bounds certify
    after n samples."""
    u_dom = int(np.prod([spec.state_vars[v] for v in spec.uncontrolled_vars])) if spec.uncontrolled_vars else 1
    c_dom = int(np.prod([spec.state_vars[v] for v in spec.controlled_vars]))
    s_dom = spec.n_states
    eps_p = math.sqrt(u_dom * s_dom * c_dom * math.log(2 * s_dom * c_dom / delta) / n)
    eps_sigma = 0.0
    for k in range(spec.n_blocks):
        e_dom = spec.eff_radix[k].size
        p_dom = spec.pre_radix[k].size
        eps_sigma = max(eps_sigma, math.sqrt(e_dom * p_dom * math.log(2 * p_dom / delta) / n))
    return {"eps_p": eps_p, "eps_sigma": eps_sigma}


def _one_trial(spec: FactoredMdpSpec, n: int, seed: int) -> tuple[float, float]:
    """Draw n generative samples under the uniform behavior and return
    (dynamics sup-norm error, intervention-table error)."""
    rng = np.random.default_rng(seed)
    rows: dict[tuple[int, int, int], np.ndarray] = {}
    samples = []
    states = rng.integers(0, spec.n_states, size=n)
    ks = rng.integers(0, spec.n_blocks, size=n)
    for i in range(n):
        s = int(states[i])
        k = int(ks[i])
        a_k = int(rng.integers(0, spec.block_sizes[k]))
        key = (k, s, a_k)
        if key not in rows:
            rows[key] = projected_transition(spec, k, s, a_k)
        s_next = int(rng.choice(spec.n_states, p=rows[key]))
        samples.append(
            _Sample(state=s, action=a_k, reward=float(spec.reward[s, s_next]), next_state=s_next, block_tag=k)
        )
    model = learn_model(samples, spec)
    dyn_err = 0.0
    for m in range(spec.n_vars):
        est = model.noop_tables[m]
        visited = model.noop_counts[m].sum(axis=1) > 0
        true = spec.noop_dynamics[m].table
        err_rows = np.abs(est - true).max(axis=1)
        err_rows[~visited] = 1.0  # unvisited rows count as maximally wrong
        dyn_err = max(dyn_err, float(err_rows.max()))
    sig_err = 0.0
    for k, hat in enumerate(model.sigma_hat):
        mismatch = (hat != spec.sigma[k].table) | (hat < 0)
        if mismatch.any():
            sig_err = 1.0
    return dyn_err, sig_err


def sample_complexity_experiment(
    spec: FactoredMdpSpec,
    sample_sizes,
    trials: int,
    delta: float,
    seed: int,
    *,
    workers: int = 1,
    keep_trials: bool = False,
) -> list[dict]:
    """Empirical sup-norm estimation error versus the closed-form bounds.

    For each N: `trials` independent draws of N generative samples
    (state, block, projected action all uniform), each fitted with
    `learn_model`; reports the median and (1-delta) quantile of the
    max-over-cells dynamics error and of the intervention-table error,
    next to the bound-implied errors at that N.  With `keep_trials`
    each row also carries the raw per-trial errors for logging.
    """
    results = []
    ss = np.random.SeedSequence(seed)
    for n in sample_sizes:
        trial_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(trials)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                errs = list(pool.map(lambda ts: _one_trial(spec, n, ts), trial_seeds))
        else:
            errs = [_one_trial(spec, n, ts) for ts in trial_seeds]
        dyn = np.array([e[0] for e in errs])
        sig = np.array([e[1] for e in errs])
        bounds = error_bounds_at(spec, n, delta)
        row = {
            "n": int(n),
            "dyn_err_median": float(np.quantile(dyn, 0.5)),
            "dyn_err_hi": float(np.quantile(dyn, 1.0 - delta)),
            "sigma_err_median": float(np.quantile(sig, 0.5)),
            "sigma_err_hi": float(np.quantile(sig, 1.0 - delta)),
            "bound_eps_p": bounds["eps_p"],
            "bound_eps_sigma": bounds["eps_sigma"],
            "trials": trials,
            "delta": delta,
        }
        if keep_trials:
            row["dyn_errors"] = dyn.tolist()
            row["sigma_errors"] = sig.tolist()
        results.append(row)
    return results
