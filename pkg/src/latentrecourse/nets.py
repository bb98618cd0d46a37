"""MLPs, Adam, and the .lrm parameter container.

All five networks in the pipeline are plain feedforward nets with relu
hidden layers and either an identity or a sigmoid output head. Parameters
are held as mutable float64 arrays during training and serialized into a
single self-describing `.lrm` file (see docs/lrm-format.md for the byte
layout).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .diff_engine import Graph, Node, Tensor, stable_sigmoid
from .errors import (
    ModelFileError,
    ModelFileTruncatedError,
    ModelFileVersionError,
    ShapeMismatchError,
)

MAGIC = b"LRMF"
FORMAT_VERSION = 1

OUT_ACTIVATIONS = ("identity", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths input-to-output plus the output head. Hidden layers relu."""

    widths: tuple[int, ...]
    out_activation: str = "identity"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be >= 1")
        if self.out_activation not in OUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.out_activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def to_json(self) -> dict:
        return {"widths": list(self.widths), "out_activation": self.out_activation}

    @classmethod
    def from_json(cls, obj: dict) -> "MlpSpec":
        return cls(tuple(obj["widths"]), obj["out_activation"])


@dataclass
class Mlp:
    """One network: weights and biases in layer order."""

    spec: MlpSpec
    weights: list  # of (fan_in, fan_out) arrays
    biases: list   # of (1, fan_out) arrays

    def params(self) -> Iterator[np.ndarray]:
        """Declaration order W0, b0, W1, b1, ... used everywhere a flat
        parameter list is needed (Adam slots, gradients, file blobs)."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def clone(self) -> "Mlp":
        return Mlp(self.spec,
                   [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def init_mlp(spec: MlpSpec, seed) -> Mlp:
    """Glorot-uniform weights, zero biases. `seed` may be any value
    np.random.default_rng accepts (int or sequence)."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return Mlp(spec, weights, biases)


def mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Plain-array forward pass for inference; no graph recording."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.spec.widths[0]:
        raise ShapeMismatchError(
            f"input shape {x.shape} does not match first width "
            f"{mlp.spec.widths[0]}")
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    if mlp.spec.out_activation == "sigmoid":
        h = stable_sigmoid(h)
    return h


class BoundMlp:
    """An Mlp's parameters recorded onto a graph, as leaves (trainable) or
    constants (frozen). Node order matches Mlp.params()."""

    def __init__(self, graph: Graph, mlp: Mlp, trainable: bool):
        self.graph = graph
        self.spec = mlp.spec
        self.trainable = trainable
        self.nodes: list[Node] = []
        record = graph.leaf if trainable else graph.constant
        for arr in mlp.params():
            self.nodes.append(record(Tensor(arr)))

    def forward(self, x: Node) -> Node:
        g = self.graph
        n_layers = len(self.nodes) // 2
        h = x
        for i in range(n_layers):
            w, b = self.nodes[2 * i], self.nodes[2 * i + 1]
            h = g.add(g.matmul(h, w), b)
            if i < n_layers - 1:
                h = g.relu(h)
        if self.spec.out_activation == "sigmoid":
            h = g.sigmoid(h)
        return h

    def grads_list(self, gradmap) -> list:
        """Gradients aligned with Mlp.params(); None where the loss never
        touched a parameter."""
        return [gradmap[n.id].data if n.id in gradmap else None
                for n in self.nodes]


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(mlp: Mlp, lr: float) -> AdamState:
    state = AdamState(lr=float(lr))
    for p in mlp.params():
        state.m.append(np.zeros_like(p))
        state.v.append(np.zeros_like(p))
    return state


def adam_step(state: AdamState, mlp: Mlp, grads: list) -> None:
    """One bias-corrected Adam update, in place on the mlp's arrays.

    `grads` aligns with Mlp.params(); a None entry means zero gradient
    (moments still decay).
    """
    params = list(mlp.params())
    if len(grads) != len(params):
        raise ShapeMismatchError(
            f"got {len(grads)} gradients for {len(params)} parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            state.m[i] *= b1
            state.v[i] *= b2
        else:
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"gradient shape {g.shape} vs parameter shape {p.shape}")
            state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
            state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- .lrm container --------------------------------------------------------

@dataclass
class LrmFile:
    sections: dict            # name -> Mlp, in section_order
    schema_fingerprint: str
    meta: dict
    version: int = FORMAT_VERSION


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def _section_shapes(mlp: Mlp) -> list:
    return [list(p.shape) for p in mlp.params()]


def save_params(path, sections: dict, schema_fingerprint: str,
                meta: Optional[dict] = None) -> None:
    """Write networks to an .lrm file. Section order = dict insertion order."""
    order = list(sections.keys())
    header = {
        "format": "lrm",
        "version": FORMAT_VERSION,
        "section_order": order,
        "sections": {
            name: {"spec": mlp.spec.to_json(),
                   "shapes": _section_shapes(mlp)}
            for name, mlp in sections.items()
        },
        "schema_fingerprint": schema_fingerprint,
        "meta": meta or {},
    }
    header_bytes = _canonical_json(header)
    blobs = []
    for name in order:
        for p in sections[name].params():
            if not np.all(np.isfinite(p)):
                raise ModelFileError(f"section {name!r} has non-finite weights")
            blobs.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def _rebuild_mlp(name: str, entry: dict, buf: memoryview, offset: int):
    spec = MlpSpec.from_json(entry["spec"])
    shapes = [tuple(s) for s in entry["shapes"]]
    expected = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        expected.append((fan_in, fan_out))
        expected.append((1, fan_out))
    if shapes != expected:
        raise ModelFileError(
            f"section {name!r}: shapes do not match declared widths")
    weights, biases = [], []
    for i, shape in enumerate(shapes):
        n = shape[0] * shape[1] * 8
        if offset + n > len(buf):
            raise ModelFileTruncatedError(
                f"section {name!r}: blob ends early at byte {len(buf)}")
        arr = np.frombuffer(buf[offset:offset + n], dtype="<f8") \
            .reshape(shape).copy()
        (weights if i % 2 == 0 else biases).append(arr)
        offset += n
    return Mlp(spec, weights, biases), offset


def load_params(path) -> LrmFile:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 13:
        raise ModelFileTruncatedError(f"file is only {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise ModelFileError(f"bad magic {raw[:4]!r}")
    version = raw[4]
    if version != FORMAT_VERSION:
        raise ModelFileVersionError(
            f"format version {version}, supported {FORMAT_VERSION}")
    header_len = int.from_bytes(raw[5:13], "little")
    if 13 + header_len > len(raw):
        raise ModelFileTruncatedError("header extends past end of file")
    try:
        header = json.loads(raw[13:13 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable header: {exc}") from exc
    buf = memoryview(raw)
    offset = 13 + header_len
    sections = {}
    for name in header["section_order"]:
        mlp, offset = _rebuild_mlp(name, header["sections"][name], buf, offset)
        sections[name] = mlp
    if offset != len(raw):
        raise ModelFileError(
            f"{len(raw) - offset} trailing bytes after declared blobs")
    return LrmFile(sections=sections,
                   schema_fingerprint=header["schema_fingerprint"],
                   meta=header.get("meta", {}),
                   version=version)
