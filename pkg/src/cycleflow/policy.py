"""The single shared policy network.

One parameter set serves every variable and every construction step.  Three
MLP heads: an encoder for the node-of-interest indicator, an encoder for
the flattened partial graph, and a fused head producing n+1 outputs --
n logits shared by the next-node softmax and the incoming-edge Bernoullis,
plus one log state-flow value.  The backward policy is uniform and carries
no parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Hidden widths reverse-engineered so the published total parameter counts
# are matched approximately (87k / 255k at n=5, depth 3); exact widths are
# not published anywhere.
PRESET_WIDTHS = {"default": 64, "best": 83, "large": 144}


@dataclass
class PolicyConfig:
    n: int
    h_id: int = 64
    h_g: int = 64
    depth: int = 3  # linear layers per head; depth 1 = a bare linear map
    seed: int = 0

    @property
    def h(self) -> int:
        return self.h_id + self.h_g

    def __post_init__(self):
        if self.n < 1 or self.h_id < 1 or self.h_g < 1 or self.depth < 1:
            raise ValueError("all policy sizes must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolicyConfig":
        return cls(**json.loads(text))


@dataclass
class PolicyOutput:
    log_forward: Tensor   # B x n, row-wise log-softmax over variables
    edge_logits: Tensor   # B x n, raw logits reused for Bernoulli edges
    log_flow: Tensor      # (B,), log state flow
    log_backward: np.ndarray  # B x n, uniform; no parameters behind it


def _head_dims(d_in: int, width: int, d_out: int, depth: int):
    """Layer (fan_in, fan_out) pairs for one MLP head."""
    if depth == 1:
        return [(d_in, d_out)]
    dims = [(d_in, width)]
    for _ in range(depth - 2):
        dims.append((width, width))
    dims.append((width, d_out))
    return dims


def _head_specs(config: PolicyConfig):
    n = config.n
    return {
        "id": _head_dims(n, config.h_id, config.h_id, config.depth),
        "g": _head_dims(n * n, config.h_g, config.h_g, config.depth),
        "fw": _head_dims(config.h, config.h, n + 1, config.depth),
    }


def init_params(config: PolicyConfig) -> dict:
    """Fan-in-scaled uniform weights, zero biases.

    The final fused-head layer is scaled down by 0.1 so the untrained
    policy starts near-uniform.
    """
    rng = np.random.default_rng(config.seed)
    params = {}
    for head, dims in _head_specs(config).items():
        for layer, (fan_in, fan_out) in enumerate(dims):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if head == "fw" and layer == len(dims) - 1:
                w *= 0.1
            params[f"{head}.w{layer}"] = ad.parameter(w)
            params[f"{head}.b{layer}"] = ad.parameter(np.zeros(fan_out))
    return params


def param_count(config: PolicyConfig) -> int:
    """Exact trainable-parameter total from the layer dimensions."""
    total = 0
    for dims in _head_specs(config).values():
        for fan_in, fan_out in dims:
            total += fan_in * fan_out + fan_out
    return total


def _run_head(params: dict, head: str, x: Tensor, depth: int) -> Tensor:
    out = x
    for layer in range(depth):
        out = ad.add_bias(ad.matmul(out, params[f"{head}.w{layer}"]),
                          params[f"{head}.b{layer}"])
        if layer < depth - 1:
            out = ad.leaky_relu(out)
    return out


def _validate_inputs(n: int, node_id: np.ndarray, graphs: np.ndarray):
    if node_id.ndim != 2 or node_id.shape[1] != n:
        raise ValueError(f"node_id must be B x {n}")
    if graphs.shape != (node_id.shape[0], n, n):
        raise ValueError(f"graphs must be B x {n} x {n}")
    if not np.all((graphs == 0) | (graphs == 1)):
        raise ValueError("graph entries must be binary")
    if not np.all((node_id == 0) | (node_id == 1)):
        raise ValueError("node_id entries must be binary")
    sums = node_id.sum(axis=1)
    if not np.all((sums == 0) | (sums == 1)):
        raise ValueError("node_id rows must be all-zero or one-hot")


def policy_forward(params: dict, config: PolicyConfig,
                   node_id: np.ndarray, graphs: np.ndarray) -> PolicyOutput:
    """One batched evaluation of the shared model.

    node_id rows may be all-zero (the step-0 state, before any node of
    interest exists).  Output shapes do not depend on the timestep.
    """
    node_id = np.asarray(node_id, dtype=np.float64)
    graphs = np.asarray(graphs, dtype=np.float64)
    n = config.n
    _validate_inputs(n, node_id, graphs)
    B = node_id.shape[0]

    rep_id = _run_head(params, "id", ad.constant(node_id), config.depth)
    flat = graphs.reshape(B, n * n)
    rep_g = _run_head(params, "g", ad.constant(flat), config.depth)
    rep = ad.concat_cols(rep_id, rep_g)
    pred = _run_head(params, "fw", rep, config.depth)

    logits = ad.slice_cols(pred, 0, n)
    log_forward = ad.log_softmax(logits)
    log_flow = ad.reshape(ad.slice_cols(pred, n, n + 1), (B,))
    log_backward = np.full((B, n), -math.log(n))
    return PolicyOutput(log_forward, logits, log_flow, log_backward)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict, config: PolicyConfig, extra_meta=None):
    meta = {"policy_config": asdict(config)}
    if extra_meta:
        meta.update(extra_meta)
    ad.save_params(path, params, meta)


def load_checkpoint(path):
    """Returns (params, config, meta)."""
    params, meta = ad.load_params(path)
    config = PolicyConfig(**meta["policy_config"])
    return params, config, meta
