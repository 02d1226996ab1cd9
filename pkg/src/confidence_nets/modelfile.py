"""Binary model file.

Layout (all integers and floats little-endian)::

    b"CNET"  u32 version  u32 n_sections
    n_sections x ( 4-byte tag | u64 payload length | payload )

Sections, in write order:

    COLS  feature names then target name (u32 count, then u32 length + UTF-8 bytes each)
    NORM  u32 target index, tensor mins, tensor maxs
    NNET  f64 huber delta, u32 stride, u8 padding (0 same / 1 valid),
          3 x u8 activation (0 elu / 1 linear), 8 tensors in layer order
    FRST  f64 base score, f64 shrinkage, u32 n_features, u32 max_depth,
          f64 reg_lambda, u32 min_samples_leaf, u32 tree count, then per tree:
          u32 node count, i32 feature[n], f64 threshold[n], i32 left[n],
          i32 right[n], f64 value[n]
    MEMO  f64 memory fraction, tensor stored inputs
    SCAL  f64 omega, f64 l_n
    TRPT  tensor per-epoch losses, f64 mean absolute residual, f64 final loss
    CONF  UTF-8 ``key=value`` lines, sorted by key
    SPLT  ASCII hex digest of the training split

A tensor is ``u32 ndim``, ``ndim x u32`` dims, then float64 data in C order.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .data import NormalizationParams
from .ensemble import ConfidenceNetModel, MemoryBank
from .errors import ModelFormatError
from .gbt import GradientBoostedForest, RegressionTree, TreeParams
from .nn import Conv1DLayer, DenseLayer, NeuralNet, TrainReport

MAGIC = b"CNET"
FORMAT_VERSION = 1
SECTION_ORDER = (b"COLS", b"NORM", b"NNET", b"FRST", b"MEMO", b"SCAL", b"TRPT", b"CONF", b"SPLT")

_PADDING = {"same": 0, "valid": 1}
_ACTIVATION = {"elu": 0, "linear": 1}


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt: str, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def array(self, values, dtype: str):
        self.buf.write(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def tensor(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        self.pack("I", arr.ndim)
        self.pack(f"{arr.ndim}I", *arr.shape)
        self.array(arr, "<f8")

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.pack("I", len(raw))
        self.buf.write(raw)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = data
        self.pos = 0
        self.where = where

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ModelFormatError(f"corrupt model file: {self.where} truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def array(self, count: int, dtype: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * size), dtype=dtype).astype(dtype[1:], copy=True)

    def tensor(self) -> np.ndarray:
        ndim = self.unpack("I")
        if ndim > 8:
            raise ModelFormatError(f"corrupt model file: implausible tensor rank {ndim} in {self.where}")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        return self.array(count, "<f8").reshape(shape)

    def text(self) -> str:
        try:
            return self.take(self.unpack("I")).decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError(f"corrupt model file: bad text in {self.where}") from None

    def done(self):
        if self.pos != len(self.data):
            raise ModelFormatError(f"corrupt model file: trailing bytes in {self.where}")


def _encode_sections(model: ConfidenceNetModel) -> dict[bytes, bytes]:
    sections = {}

    w = _Writer()
    names = list(model.feature_names) + [model.target_name]
    w.pack("I", len(names))
    for name in names:
        w.text(name)
    sections[b"COLS"] = w.getvalue()

    w = _Writer()
    w.pack("I", model.normalization.target_index)
    w.tensor(model.normalization.mins)
    w.tensor(model.normalization.maxs)
    sections[b"NORM"] = w.getvalue()

    net = model.net
    w = _Writer()
    w.pack("dIB", net.huber_delta, net.conv.stride, _PADDING[net.conv.padding])
    w.pack("3B", *(_ACTIVATION[layer.activation] for layer in (net.hidden1, net.hidden2, net.output)))
    for p in net.parameters():
        w.tensor(p)
    sections[b"NNET"] = w.getvalue()

    forest = model.forest
    w = _Writer()
    w.pack("ddIIdI", forest.base_score, forest.shrinkage, forest.n_features, forest.params.max_depth,
           forest.params.reg_lambda, forest.params.min_samples_leaf)
    w.pack("I", len(forest.trees))
    for tree in forest.trees:
        w.pack("I", tree.n_nodes)
        w.array(tree.feature, "<i4")
        w.array(tree.threshold, "<f8")
        w.array(tree.left, "<i4")
        w.array(tree.right, "<i4")
        w.array(tree.value, "<f8")
    sections[b"FRST"] = w.getvalue()

    w = _Writer()
    w.pack("d", model.memory.memory_fraction)
    w.tensor(model.memory.stored_inputs)
    sections[b"MEMO"] = w.getvalue()

    w = _Writer()
    w.pack("dd", model.omega, model.l_n)
    sections[b"SCAL"] = w.getvalue()

    report = model.report or TrainReport()
    w = _Writer()
    w.tensor(np.asarray(report.epoch_losses, dtype=np.float64).reshape(-1))
    w.pack("dd", report.l_n, report.final_loss)
    sections[b"TRPT"] = w.getvalue()

    w = _Writer()
    w.text("".join(f"{k}={v}\n" for k, v in sorted(model.config_snapshot.items())))
    sections[b"CONF"] = w.getvalue()

    w = _Writer()
    w.text(model.split_hash)
    sections[b"SPLT"] = w.getvalue()
    return sections


def dumps(model: ConfidenceNetModel) -> bytes:
    sections = _encode_sections(model)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(SECTION_ORDER)))
    for tag in SECTION_ORDER:
        payload = sections[tag]
        out.write(tag)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def save_model(model: ConfidenceNetModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    return path


def _split_sections(data: bytes) -> dict[bytes, bytes]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError("corrupt model file: bad magic bytes (not a confidence-net model)")
    r = _Reader(data, "header")
    r.take(4)
    version = r.unpack("I")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported version {version} (this build reads version {FORMAT_VERSION})")
    count = r.unpack("I")
    sections = {}
    for _ in range(count):
        tag = r.take(4)
        length = r.unpack("Q")
        sections[tag] = r.take(length)
    r.done()
    missing = [t.decode() for t in SECTION_ORDER if t not in sections]
    unknown = [t.decode("latin-1") for t in sections if t not in SECTION_ORDER]
    if missing or unknown:
        raise ModelFormatError(f"corrupt model file: missing sections {missing}, unknown sections {unknown}")
    return sections


def loads(data: bytes) -> ConfidenceNetModel:
    sections = _split_sections(data)

    r = _Reader(sections[b"COLS"], "COLS")
    names = [r.text() for _ in range(r.unpack("I"))]
    r.done()
    if not names:
        raise ModelFormatError("corrupt model file: no column names")
    feature_names, target_name = names[:-1], names[-1]

    r = _Reader(sections[b"NORM"], "NORM")
    target_index = r.unpack("I")
    mins, maxs = r.tensor(), r.tensor()
    r.done()

    r = _Reader(sections[b"NNET"], "NNET")
    delta, stride, padding = r.unpack("dIB")
    acts = r.unpack("3B")
    params = [r.tensor() for _ in range(8)]
    r.done()
    pad_name = {v: k for k, v in _PADDING.items()}
    act_name = {v: k for k, v in _ACTIVATION.items()}

    r = _Reader(sections[b"FRST"], "FRST")
    base, shrinkage, n_features, max_depth, reg_lambda, min_leaf = r.unpack("ddIIdI")
    trees = []
    for _ in range(r.unpack("I")):
        n = r.unpack("I")
        feature = r.array(n, "<i4")
        threshold = r.array(n, "<f8")
        left = r.array(n, "<i4")
        right = r.array(n, "<i4")
        value = r.array(n, "<f8")
        if n == 0 or np.any(left >= n) or np.any(right >= n):
            raise ModelFormatError("corrupt model file: invalid tree node indices")
        trees.append(RegressionTree(feature, threshold, left, right, value, max_depth))
    r.done()

    r = _Reader(sections[b"MEMO"], "MEMO")
    fraction = r.unpack("d")
    stored = r.tensor()
    r.done()

    r = _Reader(sections[b"SCAL"], "SCAL")
    omega, l_n = r.unpack("dd")
    r.done()

    r = _Reader(sections[b"TRPT"], "TRPT")
    losses = r.tensor()
    report_l_n, final_loss = r.unpack("dd")
    r.done()

    r = _Reader(sections[b"CONF"], "CONF")
    conf_text = r.text()
    r.done()
    snapshot = dict(line.split("=", 1) for line in conf_text.splitlines() if "=" in line)

    r = _Reader(sections[b"SPLT"], "SPLT")
    split_hash = r.text()
    r.done()

    try:
        net = NeuralNet(Conv1DLayer(params[0], params[1], pad_name[padding], stride),
                        DenseLayer(params[2], params[3], act_name[acts[0]]),
                        DenseLayer(params[4], params[5], act_name[acts[1]]),
                        DenseLayer(params[6], params[7], act_name[acts[2]]),
                        delta)
        tree_params = TreeParams(len(trees), max_depth, shrinkage, reg_lambda, min_leaf)
        normalization = NormalizationParams(mins, maxs, target_index)
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from None
    forest = GradientBoostedForest(trees, shrinkage, base, n_features, tree_params)
    return ConfidenceNetModel(net, forest, MemoryBank(stored, l_n, fraction), omega, normalization,
                              feature_names, target_name, snapshot, split_hash,
                              TrainReport(losses, report_l_n, final_loss))


def load_model(path) -> ConfidenceNetModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    return loads(path.read_bytes())
