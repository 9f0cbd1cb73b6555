"""Single-file binary checkpoint container.

Layout (all integers little-endian, floats IEEE-754 little-endian)::

    magic        8 bytes   b"SNNCKPT1"
    version      u32       FORMAT_VERSION
    mode         u8        0 = training, 1 = folded
    float_width  u8        4 (float32) or 8 (float64)
    reserved     u16       0
    T            u32       time steps used in training
    tau, v_th    f64, f64  baseline LIF constants
    eps          f64       normalization epsilon
    momentum     f64       running-statistic momentum
    mpbn         u8        0 off, 1 channel, 2 element, 3 mixed
    C, H, W      u32 x3    input shape
    classes      u32
    layer_count  u32
    layers       layer_count records

Each layer record starts with a kind byte (0 conv_bn_lif, 1 pool,
2 linear_out) and kind-specific fields:

    conv_bn_lif  in, out, kernel, stride, padding: u32 x5,
                 encoder u8, mpbn u8, tau f64, v_th f64
    pool         channels u32, size u32
    linear_out   in_features u32, out_features u32

followed by ``array_count`` (u16) arrays, each encoded as::

    name_len u16, name (utf-8), dtype u8 (0 float, 1 int8),
    ndim u8, dims u32 x ndim, row-major data

Float arrays use ``float_width`` bytes per element.  Array names are
``weight``, ``bias``, ``bn.{lam,beta,running_mean,running_var}``,
``mp.{...}`` (training mode) and ``rule.{threshold,direction}`` (folded).
"""
import math
import struct

import numpy as np

from .errors import LoadError
from .neuron import FiringRule, LifConfig
from .network import LayerSpec, Model
from .norm import NormParams

MAGIC = b"SNNCKPT1"
FORMAT_VERSION = 1
_MODES = {"training": 0, "folded": 1}
_KINDS = {"conv_bn_lif": 0, "pool": 1, "linear_out": 2}
_MPBN = {None: 0, "off": 0, "channel": 1, "element": 2, "mixed": 3}
_NORM_FIELDS = ("lam", "beta", "running_mean", "running_var")


def _float_dtype(width):
    return np.dtype("<f4") if width == 4 else np.dtype("<f8")


def _pack_array(name, arr, width):
    arr = np.asarray(arr)
    if arr.dtype == np.int8:
        code, data = 1, arr.astype("<i1").tobytes()
    else:
        code, data = 0, arr.astype(_float_dtype(width)).tobytes()
    raw = name.encode()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + data


def _layer_arrays(model, i):
    arrays = dict(model.params[i])
    for prefix, norm in (("bn", model.bn[i]), ("mp", model.mpbn[i])):
        if norm is not None:
            for f in _NORM_FIELDS:
                arrays[f"{prefix}.{f}"] = getattr(norm, f)
    rule = model.rules[i]
    if rule is not None:
        arrays["rule.threshold"] = rule.threshold
        arrays["rule.direction"] = rule.direction
    return arrays


def save(model, sink=None):
    """Serialize ``model``; writes to ``sink`` (path or binary file) if given, returns the bytes."""
    model.validate()
    width = np.dtype(model.dtype).itemsize
    first = next((s for s in model.specs if s.kind == "conv_bn_lif"), None)
    lif = first.lif if first is not None else LifConfig()
    out = [
        MAGIC,
        struct.pack("<IBBH", FORMAT_VERSION, _MODES[model.mode], width, 0),
        struct.pack("<IddddB", model.T, lif.tau, lif.v_th, model.eps, model.momentum,
                    _MPBN[model.mpbn_mode]),
        struct.pack("<IIII", *model.input_shape, model.num_classes),
        struct.pack("<I", len(model.specs)),
    ]
    for i, s in enumerate(model.specs):
        out.append(struct.pack("<B", _KINDS[s.kind]))
        if s.kind == "conv_bn_lif":
            out.append(struct.pack("<IIIIIBBdd", s.in_channels, s.out_channels, s.kernel,
                                   s.stride, s.padding, int(s.encoder), _MPBN[s.mpbn],
                                   s.lif.tau, s.lif.v_th))
        elif s.kind == "pool":
            out.append(struct.pack("<II", s.in_channels, s.pool))
        else:
            out.append(struct.pack("<II", s.in_features, s.out_features))
        arrays = _layer_arrays(model, i)
        out.append(struct.pack("<H", len(arrays)))
        out.extend(_pack_array(k, v, width) for k, v in arrays.items())
    blob = b"".join(out)
    if sink is not None:
        if hasattr(sink, "write"):
            sink.write(blob)
        else:
            with open(sink, "wb") as f:
                f.write(blob)
    return blob


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise LoadError(f"truncated checkpoint reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_array(r, width):
    (name_len,) = r.unpack("<H", "array name length")
    try:
        name = r.take(name_len, "array name").decode()
    except UnicodeDecodeError as exc:
        raise LoadError(f"array name is not utf-8 at byte {r.pos}") from exc
    code, ndim = r.unpack("<BB", f"array {name} header")
    dims = r.unpack(f"<{ndim}I", f"array {name} dims")
    if code == 0:
        dtype = _float_dtype(width)
    elif code == 1:
        dtype = np.dtype("<i1")
    else:
        raise LoadError(f"unknown dtype code {code} for array {name}")
    count = math.prod(dims)
    data = r.take(count * dtype.itemsize, f"array {name} data")
    arr = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
    if code == 0:
        arr = arr.astype(np.float32 if width == 4 else np.float64)
    return name, arr


def load(source):
    """Reconstruct a :class:`Model` from bytes, a path or a binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        buf = bytes(source)
    elif hasattr(source, "read"):
        buf = source.read()
    else:
        with open(source, "rb") as f:
            buf = f.read()
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise LoadError("not a checkpoint: bad magic")
    version, mode_code, width, _ = r.unpack("<IBBH", "header")
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported checkpoint version {version} (reader knows {FORMAT_VERSION})")
    modes = {v: k for k, v in _MODES.items()}
    if mode_code not in modes:
        raise LoadError(f"unknown mode flag {mode_code}")
    if width not in (4, 8):
        raise LoadError(f"unsupported float width {width}")
    T, _tau, _v_th, eps, momentum, _mp = r.unpack("<IddddB", "hyperparameters")
    c, h, w, classes = r.unpack("<IIII", "input shape")
    (n_layers,) = r.unpack("<I", "layer count")
    dtype = np.float32 if width == 4 else np.float64
    grans = {0: None, 1: "channel", 2: "element"}
    kinds = {v: k for k, v in _KINDS.items()}
    specs, params, bns, mps, rules = [], [], [], [], []
    for i in range(n_layers):
        (kind_code,) = r.unpack("<B", f"layer {i} kind")
        if kind_code not in kinds:
            raise LoadError(f"unknown layer kind {kind_code} in layer {i}")
        kind = kinds[kind_code]
        try:
            if kind == "conv_bn_lif":
                cin, cout, k, s, p, enc, gcode, tau, v_th = r.unpack("<IIIIIBBdd", f"layer {i} spec")
                if gcode not in grans:
                    raise LoadError(f"unknown MPBN granularity code {gcode} in layer {i}")
                spec = LayerSpec(kind, cin, cout, k, s, p, LifConfig(tau, v_th), grans[gcode], bool(enc))
            elif kind == "pool":
                ch, size = r.unpack("<II", f"layer {i} spec")
                spec = LayerSpec(kind, in_channels=ch, out_channels=ch, pool=size)
            else:
                fin, fout = r.unpack("<II", f"layer {i} spec")
                spec = LayerSpec(kind, in_features=fin, out_features=fout)
        except ValueError as exc:
            raise LoadError(f"invalid spec for layer {i}: {exc}") from exc
        (n_arrays,) = r.unpack("<H", f"layer {i} array count")
        arrays = dict(_read_array(r, width) for _ in range(n_arrays))
        specs.append(spec)
        p, bn, mp, rule = _assemble(i, spec, arrays, eps, momentum)
        params.append(p)
        bns.append(bn)
        mps.append(mp)
        rules.append(rule)
    if r.pos != len(buf):
        raise LoadError(f"{len(buf) - r.pos} trailing bytes after last layer")
    model = Model(specs, (c, h, w), classes, params, bns, mps, rules, modes[mode_code],
                  T, eps, momentum, dtype)
    try:
        model.validate()
        _check_shapes(model)
    except ValueError as exc:
        raise LoadError(f"inconsistent checkpoint: {exc}") from exc
    return model


def _assemble(i, spec, arrays, eps, momentum):
    try:
        norms = {}
        for prefix in ("bn", "mp"):
            keys = [f"{prefix}.{f}" for f in _NORM_FIELDS]
            present = [k in arrays for k in keys]
            if any(present) and not all(present):
                raise LoadError(f"layer {i}: incomplete {prefix} parameters")
            if all(present):
                gran = "channel" if prefix == "bn" else spec.mpbn
                if gran is None:
                    raise LoadError(f"layer {i}: MPBN arrays present but spec has no MPBN")
                norms[prefix] = NormParams(*(arrays.pop(k) for k in keys), eps=eps,
                                           momentum=momentum, granularity=gran)
        rule = None
        if "rule.threshold" in arrays or "rule.direction" in arrays:
            if not ("rule.threshold" in arrays and "rule.direction" in arrays):
                raise LoadError(f"layer {i}: incomplete firing rule")
            rule = FiringRule(arrays.pop("rule.threshold"), arrays.pop("rule.direction"))
    except LoadError:
        raise
    except ValueError as exc:
        raise LoadError(f"layer {i}: {exc}") from exc
    allowed = {"weight", "bias"}
    if set(arrays) - allowed:
        raise LoadError(f"layer {i}: unknown arrays {sorted(set(arrays) - allowed)}")
    return arrays, norms.get("bn"), norms.get("mp"), rule


def _check_shapes(model):
    c, h, w = model.input_shape
    for i, s in enumerate(model.specs):
        p = model.params[i]
        if s.kind == "conv_bn_lif":
            if s.kernel < 1 or s.stride < 1:
                raise LoadError(f"layer {i}: kernel and stride must be >= 1")
            if s.in_channels != c:
                raise LoadError(f"layer {i}: expects {s.in_channels} channels, receives {c}")
            if p.get("weight") is None or p["weight"].shape != (s.out_channels, c, s.kernel, s.kernel):
                raise LoadError(f"layer {i}: weight shape does not match spec")
            if "bias" in p and p["bias"].shape != (s.out_channels,):
                raise LoadError(f"layer {i}: bias shape does not match spec")
            h = (h + 2 * s.padding - s.kernel) // s.stride + 1
            w = (w + 2 * s.padding - s.kernel) // s.stride + 1
            c = s.out_channels
            if h < 1 or w < 1:
                raise LoadError(f"layer {i}: spatial size collapses")
            if model.bn[i] is not None and model.bn[i].shape != (c,):
                raise LoadError(f"layer {i}: BN shape mismatch")
            mp = model.mpbn[i]
            if mp is not None:
                want = (c,) if mp.granularity == "channel" else (c, h, w)
                if mp.shape != want:
                    raise LoadError(f"layer {i}: MPBN shape {mp.shape} != {want}")
            rule = model.rules[i]
            if rule is not None:
                try:
                    np.broadcast_shapes(rule.threshold.shape, (c, h, w))
                except ValueError as exc:
                    raise LoadError(f"layer {i}: threshold shape mismatch") from exc
        elif s.kind == "pool":
            if p or s.in_channels != c or s.pool < 1 or h % s.pool or w % s.pool:
                raise LoadError(f"layer {i}: invalid pool layer")
            h, w = h // s.pool, w // s.pool
        else:
            if s.in_features != c * h * w:
                raise LoadError(f"layer {i}: linear expects {s.in_features} features, receives {c * h * w}")
            if s.out_features != model.num_classes:
                raise LoadError(f"layer {i}: linear output width != class count")
            if p.get("weight") is None or p["weight"].shape != (s.out_features, s.in_features):
                raise LoadError(f"layer {i}: linear weight shape mismatch")
            if p.get("bias") is None or p["bias"].shape != (s.out_features,):
                raise LoadError(f"layer {i}: linear bias shape mismatch")
