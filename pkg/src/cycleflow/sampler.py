"""Graph-building trajectories and the detailed-balance objective.

A trajectory visits each variable exactly once.  Per step the policy picks
an unvisited variable, then at the next policy evaluation all of that
variable's incoming edges are drawn in parallel as independent Bernoullis
on the shared logits.  Self-loops are legal; cyclic structures are the
point.  The per-transition ledger mirrors the batched update rule: entry i
accumulates log-flow plus forward log-probability of transition i and
subtracts the next state's log-flow and the uniform backward
log-probability; the terminal flow is replaced by the log-reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import PosteriorSampleSet
from .policy import PolicyConfig, PolicyOutput, policy_forward


@dataclass
class SamplerState:
    """Batched partial graphs plus bookkeeping for one rollout."""

    graphs: np.ndarray       # B x n x n binary; row i = incoming edges of i
    node_id: np.ndarray      # B x n one-hot, or all-zero at t=0
    done_mask: np.ndarray    # B x n binary visited mask
    t: int
    ll_diff: list            # (n+1) per-transition residual tensors
    prev_actions: np.ndarray | None = None
    current: np.ndarray | None = None  # (B,) index of node of interest

    @classmethod
    def initial(cls, batch_size: int, n: int) -> "SamplerState":
        return cls(
            graphs=np.zeros((batch_size, n, n)),
            node_id=np.zeros((batch_size, n)),
            done_mask=np.zeros((batch_size, n)),
            t=0,
            ll_diff=[],
        )


@dataclass
class TrajectoryResult:
    graphs: np.ndarray            # terminal B x n x n binary
    db_loss: Tensor | None        # scalar mean of squared residuals
    residuals: list               # (n+1) tensors of shape (B,)
    log_rewards: np.ndarray | None
    n_policy_calls: int = 0
    n_edge_steps: int = 0
    trace: list | None = None


def sample_incoming_edges(edge_logits: Tensor, rng, explore_eps: float = 0.0):
    """Draw all incoming edges of the current nodes at once.

    Each edge j is an independent Bernoulli(sigmoid(logit_j)).  Returns the
    binary action matrix and the summed forward log-probability per graph
    (always the policy's probability, even when exploration perturbed the
    draw).
    """
    probs = 1.0 / (1.0 + np.exp(-np.clip(edge_logits.data, -500, 500)))
    draw_probs = probs if explore_eps == 0.0 else (1 - explore_eps) * probs + explore_eps * 0.5
    actions = (rng.random(probs.shape) < draw_probs).astype(np.float64)

    a = ad.constant(actions)
    not_a = ad.constant(1.0 - actions)
    lp_on = ad.logsigmoid(edge_logits)
    lp_off = ad.logsigmoid(ad.scale(edge_logits, -1.0))
    log_pf = ad.tsum(ad.add(ad.mul(a, lp_on), ad.mul(not_a, lp_off)), axis=1)
    return actions, log_pf


def select_next_node(log_forward: Tensor, done_mask: np.ndarray, mode: str,
                     rng, explore_eps: float = 0.0):
    """Pick one unvisited variable per row.

    mode="sample" draws from the masked-renormalized softmax; mode="argmax"
    takes the deterministic maximum.  log_pf is the masked-renormalized
    log-probability of whichever variable was taken.
    """
    unvisited = 1.0 - done_mask
    if np.any(unvisited.sum(axis=1) < 1):
        raise ValueError("select_next_node: all variables already visited")
    masked = ad.log_softmax(log_forward, mask=unvisited)
    probs = np.exp(masked.data) * unvisited
    probs /= probs.sum(axis=1, keepdims=True)

    B, n = probs.shape
    if mode == "argmax":
        idx = np.argmax(masked.data, axis=1)
    elif mode == "sample":
        if explore_eps > 0.0:
            uniform = unvisited / unvisited.sum(axis=1, keepdims=True)
            probs = (1 - explore_eps) * probs + explore_eps * uniform
        cum = np.cumsum(probs, axis=1)
        u = rng.random((B, 1)) * cum[:, -1:]
        idx = (u > cum).sum(axis=1)
    else:
        raise ValueError(f"unknown node-selection mode: {mode!r}")

    node_id = np.zeros((B, n))
    node_id[np.arange(B), idx] = 1.0
    log_pf = ad.take_per_row(masked, idx)
    return node_id, idx, log_pf


def rollout(params: dict, config: PolicyConfig, reward_fn, batch_size: int,
            rng, node_mode: str = "sample", explore_eps: float = 0.0,
            replay: dict | None = None, record: bool = False,
            with_loss: bool = True) -> TrajectoryResult:
    """Run one batch of complete trajectories.

    Exactly n+1 policy evaluations and n edge-assignment steps.  reward_fn
    maps terminal graphs (B x n x n) to per-graph log-rewards and is
    treated as a constant in the loss.  ``replay`` re-applies a recorded
    action trace (for gradient checks); ``record`` returns one.
    """
    n = config.n
    state = SamplerState.initial(batch_size, n)
    trace = [] if record else None
    n_policy_calls = 0
    n_edge_steps = 0

    for i in range(n + 1):
        out = policy_forward(params, config, state.node_id, state.graphs)
        n_policy_calls += 1
        entry = out.log_flow  # starts ledger entry i

        step_trace = {"step": i}
        if i > 0:
            if replay is not None:
                actions = np.asarray(replay["edges"][i - 1], dtype=np.float64)
                a = ad.constant(actions)
                lp_on = ad.logsigmoid(out.edge_logits)
                lp_off = ad.logsigmoid(ad.scale(out.edge_logits, -1.0))
                log_pf_edges = ad.tsum(
                    ad.add(ad.mul(a, lp_on),
                           ad.mul(ad.constant(1.0 - actions), lp_off)), axis=1)
            else:
                actions, log_pf_edges = sample_incoming_edges(
                    out.edge_logits, rng, explore_eps)
            rows = np.arange(batch_size)
            state.graphs[rows, state.current] = actions
            state.prev_actions = actions
            n_edge_steps += 1
            entry = ad.add(entry, log_pf_edges)
            if record:
                step_trace["edges"] = actions.astype(int).tolist()
                step_trace["log_pf_edges"] = log_pf_edges.data.tolist()
            # retroactive terms of the previous ledger entry:
            # -log_flow(s_i) - log P_B(s_{i-1} | s_i), with P_B uniform 1/n
            state.ll_diff[i - 1] = ad.add_scalar(
                ad.sub(state.ll_diff[i - 1], out.log_flow), math.log(n))

        if i == n:
            if with_loss:
                if reward_fn is None:
                    raise ValueError("rollout with_loss=True needs a reward_fn")
                log_rewards = np.asarray(reward_fn(state.graphs), dtype=np.float64)
                if not np.all(np.isfinite(log_rewards)):
                    raise ValueError("reward_fn returned non-finite log-rewards")
                entry = ad.sub(entry, ad.constant(log_rewards))
            else:
                log_rewards = None
        else:
            if replay is not None:
                idx = np.asarray(replay["nodes"][i], dtype=np.intp)
                unvisited = 1.0 - state.done_mask
                masked = ad.log_softmax(out.log_forward, mask=unvisited)
                node_id = np.zeros((batch_size, n))
                node_id[np.arange(batch_size), idx] = 1.0
                log_pf_node = ad.take_per_row(masked, idx)
            else:
                node_id, idx, log_pf_node = select_next_node(
                    out.log_forward, state.done_mask, node_mode, rng, explore_eps)
            state.node_id = node_id
            state.current = idx
            state.done_mask = state.done_mask + node_id
            entry = ad.add(entry, log_pf_node)
            if record:
                step_trace["node"] = idx.tolist()
                step_trace["log_pf_node"] = log_pf_node.data.tolist()

        state.ll_diff.append(entry)
        state.t = i + 1
        if record:
            trace.append(step_trace)

    loss = db_loss_from_residuals(state.ll_diff) if with_loss else None
    return TrajectoryResult(
        graphs=state.graphs.copy(),
        db_loss=loss,
        residuals=state.ll_diff,
        log_rewards=log_rewards if with_loss else None,
        n_policy_calls=n_policy_calls,
        n_edge_steps=n_edge_steps,
        trace=trace,
    )


def db_loss_from_residuals(residuals: list) -> Tensor:
    """Mean over all transitions and batch entries of squared residuals."""
    total = None
    count = 0
    for r in residuals:
        sq = ad.tsum(ad.square(r))
        count += r.size
        total = sq if total is None else ad.add(total, sq)
    return ad.scale(total, 1.0 / count)


def db_loss(result: TrajectoryResult) -> Tensor:
    return db_loss_from_residuals(result.residuals)


def trace_as_replay(trace: list) -> dict:
    """Convert a recorded trace into the replay format rollout accepts."""
    nodes = [np.array(s["node"]) for s in trace if "node" in s]
    edges = [np.array(s["edges"], dtype=np.float64) for s in trace if "edges" in s]
    return {"nodes": nodes, "edges": edges}


def write_trace_jsonl(trace: list, path):
    with open(path, "w") as fh:
        for step in trace:
            fh.write(json.dumps(step) + "\n")


def sample_posterior(params: dict, config: PolicyConfig, count: int, rng,
                     node_mode: str = "sample", chunk: int = 2048) -> PosteriorSampleSet:
    """Draw terminal graphs from the current policy, no loss computed."""
    if count < 1:
        raise ValueError("sample_posterior needs count >= 1")
    collected = []
    remaining = count
    while remaining > 0:
        b = min(chunk, remaining)
        res = rollout(params, config, None, b, rng,
                      node_mode=node_mode, with_loss=False)
        collected.append(res.graphs.astype(np.uint8))
        remaining -= b
    graphs = np.concatenate(collected, axis=0)
    return PosteriorSampleSet.from_graphs(graphs)
