"""Feedforward score network and its checkpoint format."""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import CheckpointError, ConfigError, ShapeError

ACTIVATIONS = ("softmax", "sigmoid", "identity")

CHECKPOINT_MAGIC = b"OPENKWS\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Shape of an MLP ``input_dim -> hidden_dims... -> output_dim`` with relu."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple = (64, 64)
    output_activation: str = "softmax"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.output_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.output_activation!r}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def init_network(config):
    """Draw initial parameters for ``config``.

    Weights are ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, biases zero. The result
    depends only on ``config`` (including ``init_seed``).

    Returns:
        dict mapping ``W{i}`` to ``(fan_in, fan_out)`` and ``b{i}`` to
        ``(1, fan_out)`` arrays.
    """
    rng = np.random.default_rng(config.init_seed)
    params = {}
    dims = config.layer_dims
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros((1, fan_out))
    return params


def n_layers(params):
    return sum(1 for k in params if k.startswith("W") and k[1:].isdigit())


def apply_activation(node, activation):
    if activation == "softmax":
        return ad.row_softmax(node)
    if activation == "sigmoid":
        return ad.sigmoid(node)
    if activation == "identity":
        return node
    raise ConfigError(f"unknown activation {activation!r}")


def score(params, features, activation, graph=None, trainable=False):
    """Record the network forward pass on ``graph`` and return the output node.

    Args:
        params: parameter dict from :func:`init_network`.
        features: ``(N, D)`` array or an existing node on ``graph``.
        activation: one of ``softmax``, ``sigmoid``, ``identity``.
        graph: graph to record on; a fresh one is created when omitted.
        trainable: register parameters as trainable leaves (named as in
            ``params``) so :meth:`Graph.backward` returns their gradients.
    """
    if graph is None:
        graph = ad.Graph()
    x = features if isinstance(features, ad.Node) else graph.constant(features)
    depth = n_layers(params)
    if x.shape is not None and x.shape[1] != params["W0"].shape[0]:
        raise ShapeError(f"features have width {x.shape[1]}, network expects {params['W0'].shape[0]}")
    h = x
    for i in range(depth):
        if trainable:
            w = graph.parameter(f"W{i}", params[f"W{i}"])
            b = graph.parameter(f"b{i}", params[f"b{i}"])
        else:
            w = graph.constant(params[f"W{i}"])
            b = graph.constant(params[f"b{i}"])
        h = ad.add(ad.matmul(h, w), b)
        if i < depth - 1:
            h = ad.relu(h)
    return apply_activation(h, activation)


def predict_scores(params, features, activation):
    """Plain-array convenience wrapper around :func:`score`."""
    return score(params, np.asarray(features, dtype=np.float64), activation).value


@dataclass
class ScoreBatch:
    """Network scores for a mini-batch together with integer labels."""

    scores: ad.Node
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.scores.shape is not None and self.scores.shape[0] != self.labels.size:
            raise ShapeError(f"{self.scores.shape[0]} score rows for {self.labels.size} labels")
        if self.labels.size and self.labels.min() < 0:
            raise ShapeError("labels must be non-negative")

    @classmethod
    def from_array(cls, scores, labels, trainable=False):
        """Wrap a plain score matrix in a fresh graph (leaf named ``scores``)."""
        graph = ad.Graph()
        return cls(graph.leaf(scores, name="scores", trainable=trainable), labels)

    @property
    def values(self):
        return self.scores.value

    @property
    def graph(self):
        return self.scores.graph


def save_checkpoint(path, config, params, meta=None):
    """Write a checkpoint.

    Layout (little-endian): 8-byte magic, u32 format version, u32 header
    length, UTF-8 JSON header (network config + ``meta``), u32 parameter
    count, then per parameter: u16 name length, name, u32 rows, u32 cols,
    row-major float64 values.
    """
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(config, params, meta))


def checkpoint_bytes(config, params, meta=None):
    header = json.dumps({"network": config.to_dict(), "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header,
             struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        if arr.ndim != 2:
            raise CheckpointError(f"parameter {name} is not 2-D")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<II", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns:
        ``(NetworkConfig, params, meta)``.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def parse_checkpoint(data):
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not an openkws checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(bytes(take(header_len)).decode())
        config = NetworkConfig(**header["network"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        rows, cols = struct.unpack("<II", take(8))
        arr = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        params[name] = arr.astype(np.float64)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    dims = config.layer_dims
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if params.get(f"W{i}", np.empty(0)).shape != (fan_in, fan_out):
            raise CheckpointError(f"parameter W{i} does not match network dims {dims}")
        if params.get(f"b{i}", np.empty(0)).shape != (1, fan_out):
            raise CheckpointError(f"parameter b{i} does not match network dims {dims}")
    return config, params, header["meta"]
