"""Binary weights format.

Layout (little-endian): magic ``CSIW``, version u16, metadata/layer text
block (u32 length + UTF-8), u64 parameter count + float32 flat array,
u32 batch-norm array count + per-array u32 length + float32 data (running
mean then running variance per batch-norm layer, in layer order), and a
trailing CRC32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .layers import Activation, BatchNorm, Conv3x3, Dense, Layer, Reshape, Residual
from .network import Network

MAGIC = b"CSIW"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def _spec_lines(layers: list[Layer]) -> list[str]:
    lines = []
    for layer in layers:
        if isinstance(layer, Residual):
            lines.append("residual_begin")
            lines.extend(_spec_lines(layer.layers))
            lines.append("residual_end")
        else:
            lines.append(layer.spec_line())
    return lines


def _parse_layers(lines: list[str], pos: int = 0, stop: str | None = None):
    layers: list[Layer] = []
    while pos < len(lines):
        line = lines[pos]
        pos += 1
        if stop is not None and line == stop:
            return layers, pos
        parts = line.split()
        kind = parts[0]
        if kind == "dense":
            layers.append(Dense(int(parts[1]), int(parts[2])))
        elif kind == "conv3x3":
            layers.append(Conv3x3(int(parts[1]), int(parts[2])))
        elif kind == "batchnorm":
            layers.append(BatchNorm(int(parts[1])))
        elif kind == "activation":
            layers.append(Activation(parts[1]))
        elif kind == "reshape":
            layers.append(Reshape(tuple(int(v) for v in parts[1].split(","))))
        elif kind == "residual_begin":
            sub, pos = _parse_layers(lines, pos, stop="residual_end")
            layers.append(Residual(sub))
        else:
            raise WeightsFormatError(f"unknown layer line {line!r}")
    if stop is not None:
        raise WeightsFormatError("unterminated residual block")
    return layers, pos


def save_network(path, net: Network, meta: dict[str, str] | None = None) -> None:
    meta = dict(meta or {})
    meta["name"] = net.name
    meta["input_shape"] = ",".join(map(str, net.input_shape))
    header_lines = [f"#{k}={v}" for k, v in sorted(meta.items())]
    text = "\n".join(header_lines + _spec_lines(net.layers)).encode("utf-8")

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", VERSION)
    buf += struct.pack("<I", len(text))
    buf += text
    flat = np.ascontiguousarray(net.params.flat, dtype="<f4")
    buf += struct.pack("<Q", flat.size)
    buf += flat.tobytes()
    arrays = []
    for mean, var in net.bn_state:
        arrays.append(mean)
        arrays.append(var)
    buf += struct.pack("<I", len(arrays))
    for arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f4")
        buf += struct.pack("<I", a.size)
        buf += a.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_network(path) -> tuple[Network, dict[str, str]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise WeightsFormatError("not a CSIW weights file")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise WeightsFormatError("weights file checksum mismatch")
    version = struct.unpack("<H", raw[4:6])[0]
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    off = 6
    (text_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    text = raw[off:off + text_len].decode("utf-8")
    off += text_len
    meta: dict[str, str] = {}
    spec_lines = []
    for line in text.splitlines():
        if line.startswith("#") and "=" in line:
            key, value = line[1:].split("=", 1)
            meta[key] = value
        else:
            spec_lines.append(line)
    layers, _ = _parse_layers(spec_lines)
    input_shape = tuple(int(v) for v in meta["input_shape"].split(","))
    net = Network(layers, input_shape, name=meta.get("name", "net"))

    (n_params,) = struct.unpack_from("<Q", raw, off)
    off += 8
    flat = np.frombuffer(raw, dtype="<f4", count=n_params, offset=off)
    off += 4 * n_params
    if flat.size != net.params.flat.size:
        raise WeightsFormatError("parameter count does not match the layer spec")
    net.params.load_values(flat.astype(np.float32))
    (n_arrays,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = []
    for _ in range(n_arrays):
        (size,) = struct.unpack_from("<I", raw, off)
        off += 4
        arrays.append(np.frombuffer(raw, dtype="<f4", count=size, offset=off)
                      .astype(np.float32))
        off += 4 * size
    if n_arrays != 2 * len(net.bn_state):
        raise WeightsFormatError("batch-norm state count mismatch")
    for i, (mean, var) in enumerate(net.bn_state):
        mean[:] = arrays[2 * i]
        var[:] = arrays[2 * i + 1]
    return net, meta
