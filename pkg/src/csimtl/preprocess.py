"""Angle-delay transform, truncation, and [0,1] normalization.

The NN consumes a real (n_tx, n_c, 2) tensor: the spatial-frequency channel
is rotated into the angle-delay domain by a unitary 2-D transform (DFT over
the antenna axis, inverse DFT over the frequency axis), truncated to the
first n_c delay bins, split into real/imaginary channels, and min-max
normalized with statistics fitted on the training split only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NormParams:
    """Affine map x -> (x - offset) / scale shared by both channels."""

    offset: float
    scale: float
    fitted_on: str = ""

    def __post_init__(self):
        if not (self.scale > 0):
            raise ValueError("scale must be positive")


@dataclass
class AngleDelayCsi:
    """Normalized NN input: real (n_tx, n_c, 2) tensor plus its task label."""

    tensor: np.ndarray
    task_id: int


def to_angle_delay(h_sf: np.ndarray) -> np.ndarray:
    """Unitary 2-D transform into the angle-delay domain.

    DFT over the antenna axis (rows), inverse DFT over the frequency axis
    (columns); both orthonormal, so the Frobenius norm is preserved.  Works on
    a single matrix or a batch with the matrix in the last two axes.
    """
    if not np.all(np.isfinite(h_sf)):
        raise ValueError("input contains non-finite entries")
    out = np.fft.fft(h_sf, axis=-2, norm="ortho")
    return np.fft.ifft(out, axis=-1, norm="ortho")


def from_angle_delay(h_ad: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_angle_delay`."""
    out = np.fft.fft(h_ad, axis=-1, norm="ortho")
    return np.fft.ifft(out, axis=-2, norm="ortho")


def truncate(h_ad: np.ndarray, n_c: int) -> np.ndarray:
    """Keep the first ``n_c`` delay bins (last axis) for all angle bins."""
    if n_c <= 0:
        raise ValueError("n_c must be positive")
    if n_c > h_ad.shape[-1]:
        raise ValueError("n_c exceeds the delay-bin count")
    return h_ad[..., :n_c]


def zero_pad(h_trunc: np.ndarray, n_f: int) -> np.ndarray:
    """Undo truncation by zero-filling the discarded delay bins."""
    pad = [(0, 0)] * (h_trunc.ndim - 1) + [(0, n_f - h_trunc.shape[-1])]
    return np.pad(h_trunc, pad)


def fit_normalizer(samples, fitted_on: str = "") -> NormParams:
    """Global min-max statistics over real and imaginary parts.

    ``samples`` is an iterable of complex matrices (or one stacked array).
    Constant data falls back to scale 1 so the map stays invertible.
    """
    lo = np.inf
    hi = -np.inf
    count = 0
    arrays = [samples] if isinstance(samples, np.ndarray) else list(samples)
    for arr in arrays:
        count += 1
        lo = min(lo, float(arr.real.min()), float(arr.imag.min()))
        hi = max(hi, float(arr.real.max()), float(arr.imag.max()))
    if count == 0:
        raise ValueError("cannot fit a normalizer on an empty split")
    scale = hi - lo
    if scale <= 0:
        lo, scale = float(lo if np.isfinite(lo) else 0.0), 1.0
        if not arrays or not np.isfinite(hi):
            lo = 0.0
    return NormParams(offset=lo, scale=scale, fitted_on=fitted_on)


def split_normalize(h: np.ndarray, params: NormParams,
                    clip: bool = True) -> tuple[np.ndarray, int]:
    """Map a complex matrix (or batch) to the real two-channel tensor.

    Channel 0 holds (Re - offset)/scale, channel 1 the imaginary analog.
    Values outside [0, 1] (possible on non-training samples) are clipped and
    counted.  Returns (tensor float32 (..., n_tx, n_c, 2), clipped_count).
    """
    t = np.stack([(h.real - params.offset) / params.scale,
                  (h.imag - params.offset) / params.scale], axis=-1)
    clipped = 0
    if clip:
        clipped = int(np.count_nonzero((t < 0.0) | (t > 1.0)))
        if clipped:
            np.clip(t, 0.0, 1.0, out=t)
    return t.astype(np.float32), clipped


def denormalize(tensor: np.ndarray, params: NormParams) -> np.ndarray:
    """Invert :func:`split_normalize` (exact for unclipped entries)."""
    re = tensor[..., 0].astype(np.float64) * params.scale + params.offset
    im = tensor[..., 1].astype(np.float64) * params.scale + params.offset
    return re + 1j * im
