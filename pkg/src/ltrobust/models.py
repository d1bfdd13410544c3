"""Logit-producing classifiers (linear, MLP, tiny conv net) and checkpoints."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Graph, Node

ARCHITECTURES = ("linear", "mlp", "tinyconv")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``input_shape`` is ``(D,)`` for vector models and ``(C, H, W)`` for
    ``tinyconv``.  ``hidden`` lists MLP widths; ``channels`` lists the two
    conv widths.
    """

    architecture: str
    input_shape: tuple[int, ...]
    num_classes: int
    hidden: tuple[int, ...] = ()
    channels: tuple[int, ...] = (8, 16)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.architecture not in ARCHITECTURES:
            raise ContractError(f"unknown architecture {self.architecture!r}")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if any(h <= 0 for h in self.hidden) or any(c <= 0 for c in self.channels):
            raise ContractError("layer widths must be positive")
        if self.architecture == "tinyconv":
            if len(self.input_shape) != 3 or len(self.channels) != 2:
                raise ContractError("tinyconv needs input_shape (C, H, W) and two channel widths")
            if self.input_shape[1] % 4 or self.input_shape[2] % 4:
                raise ContractError("tinyconv needs H and W divisible by 4")
        elif len(self.input_shape) != 1:
            raise ContractError(f"{self.architecture} needs a flat input_shape (D,)")


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def checksum(self) -> int:
        crc = 0
        for name in sorted(self.params):
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(self.params[name]).tobytes(), crc)
        return crc

    def linear_boundary(self) -> tuple[np.ndarray, float]:
        """(w, b) of the binary decision score ``logit_1 - logit_0`` of a
        two-class linear model."""
        if self.spec.architecture != "linear" or self.spec.num_classes != 2:
            raise ContractError("linear_boundary needs a two-class linear model")
        W, b = self.params["weight"], self.params["bias"]
        return W[:, 1] - W[:, 0], float(b[1] - b[0])


def _layer_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], int, bool]]:
    """(name, weight shape, fan_in, followed_by_relu) per layer."""
    c = spec.num_classes
    if spec.architecture == "linear":
        d = spec.input_shape[0]
        return [("", (d, c), d, False)]
    if spec.architecture == "mlp":
        widths = [spec.input_shape[0], *spec.hidden]
        layers = [(f"fc{i}.", (a, b), a, True) for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        layers.append((f"fc{len(spec.hidden)}.", (widths[-1], c), widths[-1], False))
        return layers
    cin, h, w = spec.input_shape
    c1, c2 = spec.channels
    flat = c2 * (h // 4) * (w // 4)
    return [
        ("conv0.", (c1, cin, 3, 3), cin * 9, True),
        ("conv1.", (c2, c1, 3, 3), c1 * 9, True),
        ("head.", (flat, c), flat, False),
    ]


def init_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Uniform fan-in initialisation; biases start at zero.

    Layers feeding a ReLU use bound ``sqrt(6 / fan_in)``, the output layer
    ``1 / sqrt(fan_in)``.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for prefix, shape, fan_in, relu in _layer_shapes(spec):
        bound = np.sqrt(6.0 / fan_in) if relu else 1.0 / np.sqrt(fan_in)
        params[prefix + "weight"] = rng.uniform(-bound, bound, size=shape)
        out = shape[0] if len(shape) == 4 else shape[1]
        params[prefix + "bias"] = np.zeros(out)
    return Model(spec, params)


def forward(spec: ModelSpec, params: dict[str, Node], x: Node) -> Node:
    """Logits of ``x`` on ``x.graph`` with parameter nodes ``params``."""
    expected = spec.input_shape
    if x.shape[1:] != expected:
        raise ContractError(f"input shape {x.shape[1:]} does not match model input {expected}")
    if spec.architecture == "linear":
        return x @ params["weight"] + params["bias"]
    if spec.architecture == "mlp":
        h = x
        for i in range(len(spec.hidden)):
            h = nx.relu(h @ params[f"fc{i}.weight"] + params[f"fc{i}.bias"])
        last = len(spec.hidden)
        return h @ params[f"fc{last}.weight"] + params[f"fc{last}.bias"]
    h = nx.max_pool2d(nx.relu(nx.conv2d(x, params["conv0.weight"], params["conv0.bias"])))
    h = nx.max_pool2d(nx.relu(nx.conv2d(h, params["conv1.weight"], params["conv1.bias"])))
    h = nx.reshape(h, (h.shape[0], -1))
    return h @ params["head.weight"] + params["head.bias"]


def bind(model: Model, graph: Graph, trainable: bool = True) -> dict[str, Node]:
    """Place the model's parameters on ``graph`` as leaves or constants."""
    make = graph.leaf if trainable else graph.constant
    return {name: make(value, name=name) for name, value in model.params.items()}


def predict_logits(model: Model, batch) -> np.ndarray | Node:
    """Raw logits.  A :class:`Node` input yields a node on the same graph
    (parameters as constants); an array input yields an array."""
    if isinstance(batch, Node):
        return forward(model.spec, bind(model, batch.graph, trainable=False), batch)
    g = Graph()
    x = g.constant(np.asarray(batch, dtype=np.float64))
    return forward(model.spec, bind(model, g, trainable=False), x).value


def predict(model: Model, batch: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    batch = np.asarray(batch, dtype=np.float64)
    out = [predict_logits(model, batch[i:i + chunk]).argmax(axis=1) for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout (little endian):
#   magic b"LTRCKPT\0" | u32 version | u32 meta_len | meta json | u32 count
#   count x (u16 name_len | name utf-8 | u32 ndim | ndim x u64 dim | float64 data)
#   u32 crc32 of everything before it

MAGIC = b"LTRCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: Model, extra: dict | None = None) -> bytes:
    meta = {"spec": asdict(model.spec), "extra": extra or {}}
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_raw)), meta_raw,
             struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, extra))


def load_checkpoint(path) -> tuple[Model, dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 16 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", body, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos += 8
    meta = json.loads(body[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    spec_d = meta["spec"]
    spec = ModelSpec(spec_d["architecture"], tuple(spec_d["input_shape"]), spec_d["num_classes"],
                     tuple(spec_d["hidden"]), tuple(spec_d["channels"]))
    model = Model(spec, params)
    expected = {p + s for p, *_ in _layer_shapes(spec) for s in ("weight", "bias")}
    if set(params) != expected:
        raise CheckpointError(f"{path}: parameter names do not match the architecture")
    return model, meta["extra"]
