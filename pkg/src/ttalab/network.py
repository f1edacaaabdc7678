"""Minimal feedforward classifier with batch normalization.

The network is a flat list of dense and batch-norm layers. A dense layer's
activation is applied after the batch-norm layer that immediately follows
it, if any, so ``[Dense(relu), BN]`` composes as affine -> normalize -> relu
(normalization before the nonlinearity). Only the BN affine parameters
(gamma, beta) are trainable at test time; full-parameter gradients exist
solely for source training.

Checkpoints are a single JSON document so they stay inspectable and portable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateBatch, InvalidInput, ParseError, SchemaError


class BNMode(Enum):
    """Which statistics a batch-norm layer normalizes with."""

    TRAIN_STATS = "train_stats"          # batch stats, running stats updated
    EVAL_STATS = "eval_stats"            # running stats
    TEST_BATCH_STATS = "test_batch_stats"  # batch stats, running stats untouched


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = "identity"  # "relu" or "identity"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise InvalidInput(f"unknown activation {self.activation!r}")


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    # float64 throughout, so eps can sit low enough that batch-mode
    # normalization is exact to well under 1e-6
    eps: float = 1e-8
    momentum: float = 0.1

    @classmethod
    def identity(cls, num_features, eps=1e-8, momentum=0.1):
        """BN initialized to a no-op under running stats (0, 1)."""
        return cls(
            gamma=np.ones(num_features),
            beta=np.zeros(num_features),
            running_mean=np.zeros(num_features),
            running_var=np.ones(num_features),
            eps=eps,
            momentum=momentum,
        )


@dataclass
class Network:
    layers: list
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self):
        """Width of the input to the final dense layer."""
        last = self._dense_indices()[-1]
        return self.layers[last].weight.shape[1]

    def _dense_indices(self):
        idx = [i for i, l in enumerate(self.layers) if isinstance(l, DenseLayer)]
        if not idx:
            raise InvalidInput("network has no dense layer")
        return idx


def make_network(input_dim=32, hidden=64, k=3, seed=0):
    """Canonical experiment architecture: d -> Dense(h)+BN+relu twice -> Dense(k)."""
    rng = np.random.default_rng(seed)

    def dense(n_in, n_out, act):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        return DenseLayer(weight=w, bias=np.zeros(n_out), activation=act)

    layers = [
        dense(input_dim, hidden, "relu"),
        BatchNormLayer.identity(hidden),
        dense(hidden, hidden, "relu"),
        BatchNormLayer.identity(hidden),
        dense(hidden, k, "identity"),
    ]
    return Network(layers=layers, k=k, meta={"seed": seed, "trained_epochs": 0})


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    net: Network
    mode: BNMode
    records: list
    penultimate: np.ndarray
    logits_shape: tuple


def _build_ops(net):
    """Flatten layers into (op, layer_index) steps honoring the block order."""
    ops = []
    i = 0
    layers = net.layers
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, DenseLayer):
            ops.append(("dense", i))
            j = i + 1
            if j < len(layers) and isinstance(layers[j], BatchNormLayer):
                ops.append(("bn", j))
                j += 1
            if layer.activation == "relu":
                ops.append(("relu", i))
            i = j
        elif isinstance(layer, BatchNormLayer):
            ops.append(("bn", i))
            i += 1
        else:
            raise InvalidInput(f"unknown layer type at index {i}")
    return ops


def forward(net, batch, mode):
    """Run the network on a batch, returning logits and a backward cache.

    In TEST_BATCH_STATS mode the batch must have at least two rows so the
    batch variance is defined.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidInput("batch must be a 2-D array with at least one row")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("batch contains non-finite values")
    if mode is BNMode.TEST_BATCH_STATS and x.shape[0] < 2:
        raise DegenerateBatch("TEST_BATCH_STATS needs a batch of at least 2")

    ops = _build_ops(net)
    dense_positions = [p for p, (kind, _) in enumerate(ops) if kind == "dense"]
    if not dense_positions:
        raise InvalidInput("network has no dense layer")
    last_dense_pos = dense_positions[-1]
    records = []
    penultimate = None
    for pos, (kind, idx) in enumerate(ops):
        layer = net.layers[idx]
        if kind == "dense":
            if pos == last_dense_pos:
                penultimate = x
            records.append(("dense", idx, {"x": x}))
            x = x @ layer.weight.T + layer.bias
        elif kind == "bn":
            x, rec = _bn_forward(layer, x, mode)
            records.append(("bn", idx, rec))
        else:  # relu
            mask = x > 0.0
            records.append(("relu", idx, {"mask": mask}))
            x = x * mask
    if not np.all(np.isfinite(x)):
        raise InvalidInput("forward produced non-finite logits")
    cache = ForwardCache(net=net, mode=mode, records=records,
                         penultimate=penultimate, logits_shape=x.shape)
    return x, cache


def _bn_forward(layer, x, mode):
    if mode is BNMode.EVAL_STATS:
        mean, var = layer.running_mean, layer.running_var
    else:
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # biased, matches the statistics normalized with
        if mode is BNMode.TRAIN_STATS:
            m = layer.momentum
            layer.running_mean = (1.0 - m) * layer.running_mean + m * mean
            layer.running_var = (1.0 - m) * layer.running_var + m * var
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mean) * inv_std
    out = layer.gamma * xhat + layer.beta
    rec = {"xhat": xhat, "inv_std": inv_std,
           "batch_stats": mode is not BNMode.EVAL_STATS}
    return out, rec


def _backward(net, cache, loss_grad_logits):
    """Reverse pass; returns gradients for every parameter."""
    if cache.net is not net:
        raise InvalidInput("cache was produced by a different network")
    g = np.asarray(loss_grad_logits, dtype=np.float64)
    if g.shape != cache.logits_shape:
        raise InvalidInput(
            f"loss gradient shape {g.shape} does not match logits {cache.logits_shape}")
    grads = {}
    for kind, idx, rec in reversed(cache.records):
        layer = net.layers[idx]
        if kind == "dense":
            x = rec["x"]
            grads[f"{idx}.weight"] = g.T @ x
            grads[f"{idx}.bias"] = g.sum(axis=0)
            g = g @ layer.weight
        elif kind == "bn":
            xhat, inv_std = rec["xhat"], rec["inv_std"]
            grads[f"{idx}.gamma"] = (g * xhat).sum(axis=0)
            grads[f"{idx}.beta"] = g.sum(axis=0)
            dxhat = g * layer.gamma
            if rec["batch_stats"]:
                n = xhat.shape[0]
                g = (inv_std / n) * (
                    n * dxhat
                    - dxhat.sum(axis=0)
                    - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                g = dxhat * inv_std
        else:  # relu
            g = g * rec["mask"]
    return grads


def backward_bn_affine(net, cache, loss_grad_logits):
    """Gradients of the loss with respect to every BN gamma and beta only."""
    grads = _backward(net, cache, loss_grad_logits)
    return {k: v for k, v in grads.items()
            if k.endswith(".gamma") or k.endswith(".beta")}


def backward_all(net, cache, loss_grad_logits):
    """Gradients for every parameter; used for source training only."""
    return _backward(net, cache, loss_grad_logits)


def penultimate_features(net, batch, mode):
    """Activations entering the final dense layer."""
    _, cache = forward(net, batch, mode)
    return cache.penultimate


# ---------------------------------------------------------------------------
# parameter access
# ---------------------------------------------------------------------------

def bn_affine_params(net):
    """Mutable views of every BN gamma/beta, keyed `<layer_index>.<name>`."""
    params = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BatchNormLayer):
            params[f"{i}.gamma"] = layer.gamma
            params[f"{i}.beta"] = layer.beta
    return params


def all_params(net):
    """Mutable views of every trainable parameter."""
    params = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, DenseLayer):
            params[f"{i}.weight"] = layer.weight
            params[f"{i}.bias"] = layer.bias
        else:
            params[f"{i}.gamma"] = layer.gamma
            params[f"{i}.beta"] = layer.beta
    return params


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def _floats(arr):
    return [float(v) for v in np.asarray(arr, dtype=np.float64).ravel()]


def network_to_dict(net):
    layers = []
    for layer in net.layers:
        if isinstance(layer, DenseLayer):
            layers.append({
                "kind": "dense",
                "shape": list(layer.weight.shape),
                "weight": _floats(layer.weight),
                "bias": _floats(layer.bias),
                "activation": layer.activation,
            })
        else:
            layers.append({
                "kind": "bn",
                "shape": [int(layer.gamma.size)],
                "gamma": _floats(layer.gamma),
                "beta": _floats(layer.beta),
                "running_mean": _floats(layer.running_mean),
                "running_var": _floats(layer.running_var),
                "eps": float(layer.eps),
                "momentum": float(layer.momentum),
            })
    return {"k": int(net.k), "layers": layers, "meta": dict(net.meta)}


def save_checkpoint(net, path):
    """Write the network as a JSON checkpoint (decimal, exact round-trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, sort_keys=True)
        fh.write("\n")


def _array_field(obj, key, shape):
    try:
        arr = np.asarray(obj[key], dtype=np.float64)
    except KeyError:
        raise SchemaError(f"layer missing field {key!r}") from None
    except (TypeError, ValueError):
        raise SchemaError(f"layer field {key!r} is not numeric") from None
    if arr.size != int(np.prod(shape)):
        raise SchemaError(
            f"field {key!r} has {arr.size} values, expected shape {shape}")
    return arr.reshape(shape)


def network_from_dict(doc, expect_k=None):
    if not isinstance(doc, dict):
        raise SchemaError("checkpoint root must be a JSON object")
    for key in ("k", "layers"):
        if key not in doc:
            raise SchemaError(f"checkpoint missing {key!r}")
    k = int(doc["k"])
    if expect_k is not None and k != expect_k:
        raise SchemaError(f"checkpoint has k={k}, expected k={expect_k}")
    layers = []
    for entry in doc["layers"]:
        kind = entry.get("kind")
        if kind == "dense":
            shape = entry.get("shape")
            if not (isinstance(shape, list) and len(shape) == 2):
                raise SchemaError("dense layer needs a 2-element shape")
            layers.append(DenseLayer(
                weight=_array_field(entry, "weight", tuple(shape)),
                bias=_array_field(entry, "bias", (shape[0],)),
                activation=entry.get("activation", "identity"),
            ))
        elif kind == "bn":
            shape = entry.get("shape")
            if not (isinstance(shape, list) and len(shape) == 1):
                raise SchemaError("bn layer needs a 1-element shape")
            f = shape[0]
            layers.append(BatchNormLayer(
                gamma=_array_field(entry, "gamma", (f,)),
                beta=_array_field(entry, "beta", (f,)),
                running_mean=_array_field(entry, "running_mean", (f,)),
                running_var=_array_field(entry, "running_var", (f,)),
                eps=float(entry.get("eps", 1e-8)),
                momentum=float(entry.get("momentum", 0.1)),
            ))
        else:
            raise SchemaError(f"unknown layer kind {kind!r}")
    net = Network(layers=layers, k=k, meta=dict(doc.get("meta", {})))
    last_dense = net.layers[net._dense_indices()[-1]]
    if last_dense.weight.shape[0] != k:
        raise SchemaError(
            f"final dense layer outputs {last_dense.weight.shape[0]}, expected k={k}")
    return net


def load_checkpoint(path, expect_k=None):
    """Read a JSON checkpoint back into a Network.

    Raises ParseError (with the byte offset) for malformed JSON and
    SchemaError for structurally invalid documents.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid checkpoint JSON at byte {e.pos}: {e.msg}") from None
    return network_from_dict(doc, expect_k=expect_k)
