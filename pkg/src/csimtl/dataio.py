"""Binary dataset format.

Layout (little-endian): magic ``CSID``, version u16, flags u16 (bit 0 set
for angle-delay normalized tensors), n_tx u16, n_cols u32, task count u16,
per-task sample counts u32 each, then one record per sample: row-major
float32 interleaved (re, im) values — for normalized tensors the two NN
channels — followed by the u16 task label and the u64 per-sample seed.
Records are task-major in ascending task order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CSID"
VERSION = 1
FLAG_ANGLE_DELAY_NORMALIZED = 0x0001

_HEADER = struct.Struct("<4sHHHIH")


class DatasetFormatError(ValueError):
    pass


@dataclass
class DatasetHeader:
    n_tx: int
    n_cols: int
    task_counts: dict[int, int]
    flags: int = 0

    @property
    def normalized(self) -> bool:
        return bool(self.flags & FLAG_ANGLE_DELAY_NORMALIZED)

    @property
    def total(self) -> int:
        return sum(self.task_counts.values())


def _record_size(header: DatasetHeader) -> int:
    return header.n_tx * header.n_cols * 2 * 4 + 2 + 8


class DatasetWriter:
    """Streams records to disk; counts must match the header exactly."""

    def __init__(self, path, header: DatasetHeader):
        self.header = header
        self._written = 0
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, header.flags, header.n_tx,
                                    header.n_cols, len(header.task_counts)))
        for task in sorted(header.task_counts):
            self._fh.write(struct.pack("<HI", task, header.task_counts[task]))

    def write_complex(self, matrix: np.ndarray, task_id: int, seed: int) -> None:
        inter = np.empty((self.header.n_tx, self.header.n_cols, 2), dtype="<f4")
        inter[..., 0] = matrix.real
        inter[..., 1] = matrix.imag
        self._write(inter, task_id, seed)

    def write_tensor(self, tensor: np.ndarray, task_id: int, seed: int) -> None:
        self._write(np.ascontiguousarray(tensor, dtype="<f4"), task_id, seed)

    def _write(self, inter: np.ndarray, task_id: int, seed: int) -> None:
        if inter.shape != (self.header.n_tx, self.header.n_cols, 2):
            raise DatasetFormatError(f"record shape {inter.shape} does not "
                                     "match the header")
        self._fh.write(inter.tobytes())
        self._fh.write(struct.pack("<HQ", task_id, seed))
        self._written += 1

    def close(self) -> None:
        self._fh.close()
        if self._written != self.header.total:
            raise DatasetFormatError(
                f"wrote {self._written} records, header promises {self.header.total}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


def read_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DatasetFormatError("truncated dataset header")
        magic, version, flags, n_tx, n_cols, n_tasks = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise DatasetFormatError("not a CSID dataset file")
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        counts = {}
        for _ in range(n_tasks):
            task, count = struct.unpack("<HI", fh.read(6))
            counts[task] = count
    return DatasetHeader(n_tx=n_tx, n_cols=n_cols, task_counts=counts, flags=flags)


def read_dataset(path):
    """Load all records; returns (header, values, labels, seeds).

    ``values`` is (N, n_tx, n_cols) complex64 for spatial-frequency files and
    (N, n_tx, n_cols, 2) float32 for normalized angle-delay files.
    """
    header = read_header(path)
    offset = _HEADER.size + 6 * len(header.task_counts)
    rec = _record_size(header)
    n = header.total
    values_f = np.empty((n, header.n_tx, header.n_cols, 2), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint16)
    seeds = np.empty(n, dtype=np.uint64)
    with open(path, "rb") as fh:
        fh.seek(0, 2)
        size = fh.tell()
        if size != offset + rec * n:
            raise DatasetFormatError("dataset size does not match its header")
        fh.seek(offset)
        payload = header.n_tx * header.n_cols * 2 * 4
        for i in range(n):
            buf = fh.read(rec)
            values_f[i] = np.frombuffer(buf, dtype="<f4", count=payload // 4) \
                .reshape(header.n_tx, header.n_cols, 2)
            labels[i], seeds[i] = struct.unpack_from("<HQ", buf, payload)
    if header.normalized:
        return header, values_f, labels, seeds
    return header, (values_f[..., 0] + 1j * values_f[..., 1]).astype(np.complex64), \
        labels, seeds
