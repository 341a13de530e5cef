"""Model zoo: ConvLSTM and FC-LSTM cells, stacked many-to-one encoders,
the scalar regression head, and the flat linear baseline.

Cell steps and encoders operate on tape nodes so one implementation serves
both prediction and training. ``Model`` owns plain float64 arrays; ``lift``
registers them on a tape and returns the same structure holding nodes.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Tape
from .tensor import ShapeError, avg_pool2d

__all__ = [
    "ModelSpec",
    "ConvLstmCellParams",
    "FcLstmCellParams",
    "RegressionHeadParams",
    "LinearParams",
    "CellState",
    "Model",
    "param_shapes",
    "init_params",
    "convlstm_cell_step",
    "fclstm_cell_step",
    "encode_sequence",
    "regression_head",
    "preprocess",
    "build_prediction",
    "lift",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

KINDS = ("linear", "fc-lstm", "conv-lstm")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

GATE_WEIGHTS = ("w_xi", "w_xf", "w_xo", "w_xc", "w_hi", "w_hf", "w_ho", "w_hc")
GATE_BIASES = ("b_i", "b_f", "b_o", "b_c")

CHECKPOINT_MAGIC = b"DRNP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    """Architecture and input geometry of one model.

    ``pool_factor`` downsamples every input frame before the network;
    ``in_*`` are the raw record dimensions, which size the parameters.
    """

    kind: str
    stacks: int = 1
    hidden: int = 8
    kernel: int = 3
    pool_factor: int = 1
    in_t: int = 15
    in_c: int = 4
    in_h: int = 101
    in_w: int = 101

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        if self.stacks < 1:
            raise ValueError(f"stacks must be >= 1, got {self.stacks}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.kind == "conv-lstm" and (self.kernel < 1 or self.kernel % 2 == 0):
            raise ValueError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.pool_factor < 1:
            raise ValueError(f"pool_factor must be >= 1, got {self.pool_factor}")
        for name in ("in_t", "in_c", "in_h", "in_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def pooled_h(self) -> int:
        return -(-self.in_h // self.pool_factor)

    @property
    def pooled_w(self) -> int:
        return -(-self.in_w // self.pool_factor)

    @property
    def frame_dim(self) -> int:
        return self.in_c * self.pooled_h * self.pooled_w


@dataclass
class ConvLstmCellParams:
    w_xi: object
    w_xf: object
    w_xo: object
    w_xc: object
    w_hi: object
    w_hf: object
    w_ho: object
    w_hc: object
    b_i: object
    b_f: object
    b_o: object
    b_c: object


@dataclass
class FcLstmCellParams:
    w_xi: object
    w_xf: object
    w_xo: object
    w_xc: object
    w_hi: object
    w_hf: object
    w_ho: object
    w_hc: object
    b_i: object
    b_f: object
    b_o: object
    b_c: object


@dataclass
class RegressionHeadParams:
    weight: object
    bias: object


@dataclass
class LinearParams:
    weight: object
    bias: object


@dataclass
class CellState:
    """Hidden/cell pair carried across time steps; shapes always match."""

    h: object
    c: object


@dataclass
class Model:
    spec: ModelSpec
    cells: list = field(default_factory=list)
    head: RegressionHeadParams | None = None
    linear: LinearParams | None = None

    def named_parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, cell in enumerate(self.cells):
            for name in GATE_WEIGHTS + GATE_BIASES:
                out[f"cell{i}.{name}"] = getattr(cell, name)
        if self.head is not None:
            out["head.weight"] = self.head.weight
            out["head.bias"] = self.head.bias
        if self.linear is not None:
            out["linear.weight"] = self.linear.weight
            out["linear.bias"] = self.linear.bias
        return out

    @classmethod
    def from_named(cls, spec: ModelSpec, named: dict) -> "Model":
        cells = []
        head = None
        linear = None
        if spec.kind == "linear":
            linear = LinearParams(named["linear.weight"], named["linear.bias"])
        else:
            cell_cls = ConvLstmCellParams if spec.kind == "conv-lstm" else FcLstmCellParams
            for i in range(spec.stacks):
                fields = {
                    name: named[f"cell{i}.{name}"] for name in GATE_WEIGHTS + GATE_BIASES
                }
                cells.append(cell_cls(**fields))
            head = RegressionHeadParams(named["head.weight"], named["head.bias"])
        return cls(spec=spec, cells=cells, head=head, linear=linear)


def param_shapes(spec: ModelSpec) -> dict[str, tuple]:
    """Canonical parameter names and shapes, in registration order."""
    shapes: dict[str, tuple] = {}
    if spec.kind == "linear":
        d = spec.in_t * spec.frame_dim
        shapes["linear.weight"] = (1, d)
        shapes["linear.bias"] = (1,)
        return shapes
    for i in range(spec.stacks):
        if spec.kind == "conv-lstm":
            cin = spec.in_c if i == 0 else spec.hidden
            k = spec.kernel
            for name in ("w_xi", "w_xf", "w_xo", "w_xc"):
                shapes[f"cell{i}.{name}"] = (spec.hidden, cin, k, k)
            for name in ("w_hi", "w_hf", "w_ho", "w_hc"):
                shapes[f"cell{i}.{name}"] = (spec.hidden, spec.hidden, k, k)
        else:
            din = spec.frame_dim if i == 0 else spec.hidden
            for name in ("w_xi", "w_xf", "w_xo", "w_xc"):
                shapes[f"cell{i}.{name}"] = (spec.hidden, din)
            for name in ("w_hi", "w_hf", "w_ho", "w_hc"):
                shapes[f"cell{i}.{name}"] = (spec.hidden, spec.hidden)
        for name in GATE_BIASES:
            shapes[f"cell{i}.{name}"] = (spec.hidden,)
    shapes["head.weight"] = (1, spec.hidden)
    shapes["head.bias"] = (1,)
    return shapes


def _glorot_limit(shape: tuple) -> float:
    if len(shape) == 4:
        o, c, kh, kw = shape
        fan_in, fan_out = c * kh * kw, o * kh * kw
    else:
        m, n = shape
        fan_in, fan_out = n, m
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(spec: ModelSpec, seed: int) -> Model:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.0.

    Parameter draws follow the fixed registration order, so a seed fully
    determines every value.
    """
    rng = np.random.default_rng(seed)
    named: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(spec).items():
        short = name.split(".", 1)[1]
        if short in GATE_BIASES or short == "bias":
            fill = 1.0 if short == "b_f" else 0.0
            named[name] = np.full(shape, fill, dtype=np.float64)
        else:
            a = _glorot_limit(shape)
            named[name] = rng.uniform(-a, a, size=shape)
    return Model.from_named(spec, named)


# -- cell steps and encoders ----------------------------------------------


def _fuse_gates(tape: Tape, p) -> tuple:
    """Stack the four gates' weights along the output axis.

    One stacked convolution (or matrix product) per input then computes all
    gate preactivations at once; each output row equals the corresponding
    per-gate computation.
    """
    wx = tape.concat0([p.w_xi, p.w_xf, p.w_xo, p.w_xc])
    wh = tape.concat0([p.w_hi, p.w_hf, p.w_ho, p.w_hc])
    b = tape.concat0([p.b_i, p.b_f, p.b_o, p.b_c])
    return wx, wh, b


def _fused_step(tape: Tape, fused: tuple, hidden: int, x: Node, state: CellState, conv: bool) -> CellState:
    wx, wh, b = fused
    if conv:
        pre = tape.add(tape.conv2d(x, wx, b), tape.conv2d(state.h, wh))
    else:
        pre = tape.add(tape.affine(x, wx, b), tape.affine(state.h, wh))
    gates = tape.sigmoid(tape.slice0(pre, 0, 3 * hidden))
    i = tape.slice0(gates, 0, hidden)
    f = tape.slice0(gates, hidden, 2 * hidden)
    o = tape.slice0(gates, 2 * hidden, 3 * hidden)
    g = tape.tanh(tape.slice0(pre, 3 * hidden, 4 * hidden))
    c_t = tape.add(tape.mul(f, state.c), tape.mul(i, g))
    h_t = tape.mul(o, tape.tanh(c_t))
    return CellState(h=h_t, c=c_t)


def _cell_step(tape: Tape, p, x: Node, state: CellState, conv: bool) -> CellState:
    hidden = p.b_i.shape[0]
    return _fused_step(tape, _fuse_gates(tape, p), hidden, x, state, conv)


def convlstm_cell_step(tape: Tape, p: ConvLstmCellParams, x: Node, state: CellState) -> CellState:
    if x.shape[0] != p.w_xi.shape[1]:
        raise ShapeError(
            "convlstm_cell_step",
            "input gate / channel",
            f"input has {x.shape[0]} channels, w_xi expects {p.w_xi.shape[1]}",
        )
    if state.h.shape != (p.w_hi.shape[0],) + x.shape[1:]:
        raise ShapeError(
            "convlstm_cell_step",
            "recurrent gate / state",
            f"state shape {state.h.shape} does not match hidden "
            f"{p.w_hi.shape[0]} at spatial {x.shape[1:]}",
        )
    return _cell_step(tape, p, x, state, conv=True)


def fclstm_cell_step(tape: Tape, p: FcLstmCellParams, x: Node, state: CellState) -> CellState:
    if x.shape[0] != p.w_xi.shape[1]:
        raise ShapeError(
            "fclstm_cell_step",
            "input gate / extent",
            f"input has extent {x.shape[0]}, w_xi expects {p.w_xi.shape[1]}",
        )
    return _cell_step(tape, p, x, state, conv=False)


def _zero_state(tape: Tape, cell, x: Node) -> CellState:
    hidden = cell.b_i.shape[0]
    if isinstance(cell, ConvLstmCellParams):
        shape = (hidden,) + x.shape[1:]
    else:
        shape = (hidden,)
    return CellState(h=tape.const(np.zeros(shape)), c=tape.const(np.zeros(shape)))


def encode_sequence(tape: Tape, cells: list, seq: list) -> Node:
    """Run the stacked cells over the input sequence; return the top H_T.

    Layer l >= 1 consumes layer l-1's full hidden sequence. States start at
    zero. Many-to-one: only the final hidden of the top cell is returned.
    """
    if not seq:
        raise ValueError("encode_sequence: empty input sequence")
    current = seq
    h_last = None
    for cell in cells:
        conv = isinstance(cell, ConvLstmCellParams)
        hidden = cell.b_i.shape[0]
        fused = _fuse_gates(tape, cell)
        state = _zero_state(tape, cell, current[0])
        outputs = []
        for x in current:
            state = _fused_step(tape, fused, hidden, x, state, conv)
            outputs.append(state.h)
        current = outputs
        h_last = state.h
    return h_last


def regression_head(tape: Tape, head: RegressionHeadParams, h_t: Node) -> Node:
    """Collapse the encoder output to one scalar estimate."""
    if len(h_t.shape) == 3:
        h_t = tape.global_avg_pool(h_t)
    elif len(h_t.shape) != 1:
        raise ShapeError(
            "regression_head", "input", f"expected rank 1 or 3, got rank {len(h_t.shape)}"
        )
    return tape.affine(h_t, head.weight, head.bias)


# -- whole-model forward ---------------------------------------------------


def preprocess(frames: np.ndarray, spec: ModelSpec, divisor: float = 255.0):
    """Normalize reflectivity and downsample to the model's input geometry.

    Returns a list of T per-step inputs for the LSTM kinds ([C,H',W'] maps
    for conv-lstm, flat vectors for fc-lstm) or one flat vector for linear.
    """
    arr = np.asarray(frames)
    if arr.shape != (spec.in_t, spec.in_c, spec.in_h, spec.in_w):
        raise ShapeError(
            "preprocess",
            "record dims",
            f"got {arr.shape}, spec expects "
            f"({spec.in_t}, {spec.in_c}, {spec.in_h}, {spec.in_w})",
        )
    norm = arr.astype(np.float64) / divisor
    steps = [norm[t] for t in range(spec.in_t)]
    if spec.pool_factor > 1:
        steps = [avg_pool2d(s, spec.pool_factor) for s in steps]
    if spec.kind == "conv-lstm":
        return steps
    if spec.kind == "fc-lstm":
        return [s.ravel() for s in steps]
    return np.concatenate([s.ravel() for s in steps])


def lift(tape: Tape, model: Model) -> Model:
    """Register every parameter on the tape; return the node-valued twin."""
    named = {name: tape.param(name, arr) for name, arr in model.named_parameters().items()}
    return Model.from_named(model.spec, named)


def build_prediction(tape: Tape, lifted: Model, inputs) -> Node:
    """Forward graph from preprocessed inputs to the scalar estimate node."""
    if lifted.spec.kind == "linear":
        x = tape.const(inputs)
        return tape.affine(x, lifted.linear.weight, lifted.linear.bias)
    seq = [tape.const(x) for x in inputs]
    h_t = encode_sequence(tape, lifted.cells, seq)
    return regression_head(tape, lifted.head, h_t)


def predict(model: Model, record, divisor: float = 255.0, clamp: bool = False) -> float:
    """Scalar rainfall estimate for one record (pure per sample).

    ``record`` is a RadarRecord or a raw [T,C,H,W] array. ``clamp`` floors
    the reported value at zero; training always uses the raw output.
    """
    frames = getattr(record, "frames", record)
    inputs = preprocess(frames, model.spec, divisor)
    tape = Tape()
    lifted = lift(tape, model)
    node = build_prediction(tape, lifted, inputs)
    value = float(node.value[0])
    return max(0.0, value) if clamp else value


# -- checkpoint container ---------------------------------------------------


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def save_checkpoint(path: str, model: Model) -> None:
    """Write the versioned DRNP container (little-endian, bit-exact)."""
    spec = model.spec
    buf = bytearray()
    buf += struct.pack("<4sIB", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _KIND_CODE[spec.kind])
    buf += struct.pack(
        "<8I",
        spec.stacks,
        spec.hidden,
        spec.kernel,
        spec.pool_factor,
        spec.in_t,
        spec.in_c,
        spec.in_h,
        spec.in_w,
    )
    named = model.named_parameters()
    buf += struct.pack("<I", len(named))
    for name, arr in named.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, version, kind_code = r.take("<4sIB")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if kind_code >= len(KINDS):
        raise CheckpointError(f"unknown model kind code {kind_code}")
    stacks, hidden, kernel, pool, t, c, h, w = r.take("<8I")
    spec = ModelSpec(
        kind=KINDS[kind_code],
        stacks=stacks,
        hidden=hidden,
        kernel=kernel,
        pool_factor=pool,
        in_t=t,
        in_c=c,
        in_h=h,
        in_w=w,
    )
    (count,) = r.take("<I")
    named: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.take("<I")
        name = r.take_bytes(name_len).decode("utf-8")
        (rank,) = r.take("<I")
        shape = r.take(f"<{rank}I")
        n_vals = int(np.prod(shape)) if rank else 1
        raw = r.take_bytes(8 * n_vals)
        named[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after last tensor")
    expected = param_shapes(spec)
    if set(named) != set(expected):
        missing = sorted(set(expected) - set(named))
        extra = sorted(set(named) - set(expected))
        raise CheckpointError(f"parameter name mismatch: missing={missing} extra={extra}")
    for name, shape in expected.items():
        if named[name].shape != shape:
            raise CheckpointError(
                f"tensor {name}: shape {named[name].shape}, spec expects {shape}"
            )
    return Model.from_named(spec, named)
