"""The CsiNet-style architecture family and the GateNet classifier.

Families: SimpleCNN (no refinement blocks), CsiNet (two residual refinement
blocks in the decoder), CsiNet_encPlus (CsiNet plus two refinement blocks in
the encoder), and CsiNet_Kwide (refinement hidden channels widened by K).
Refinement hidden widths are (12*K, 14*K) with K=1 for the base family; the
widths were fitted against the published parameter/FLOP budgets of the
family and are frozen here.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .nn import (Activation, BatchNorm, Conv3x3, Dense, Network, Reshape,
                 Residual)

FAMILIES = ("SimpleCNN", "CsiNet", "CsiNet_encPlus", "CsiNet_Kwide")
REFINE_WIDTHS = (12, 14)  # hidden channels of one refinement block at K=1
CRS = (Fraction(1, 4), Fraction(1, 8), Fraction(1, 16), Fraction(1, 32),
       Fraction(1, 64))


@dataclass(frozen=True)
class ArchSpec:
    """Architecture family member at one compression ratio."""

    family: str
    cr: Fraction
    input_shape: tuple[int, int, int] = (32, 32, 2)
    k_wide: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "CsiNet_Kwide" and self.k_wide < 1:
            raise ValueError("k_wide must be >= 1")
        if len(self.input_shape) != 3 or self.input_shape[2] != 2:
            raise ValueError("input_shape must be (n_tx, n_c, 2)")
        code = Fraction(self.cr) * int(np.prod(self.input_shape))
        if code.denominator != 1 or code <= 0:
            raise ValueError(f"codeword length {float(code):g} is not a "
                             "positive integer; adjust cr or input_shape")

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def code_len(self) -> int:
        return int(Fraction(self.cr) * self.flat_dim)

    @property
    def refine_widths(self) -> tuple[int, int]:
        k = self.k_wide if self.family == "CsiNet_Kwide" else 1
        return (REFINE_WIDTHS[0] * k, REFINE_WIDTHS[1] * k)

    def label(self) -> str:
        if self.family == "CsiNet_Kwide":
            return f"CsiNet_{self.k_wide}wide"
        return self.family


def parse_cr(text: str) -> Fraction:
    return Fraction(text.strip())


def refine_block(widths: tuple[int, int]) -> list:
    """Residual refinement block: 2 -> a -> b -> 2 convs, then ReLU."""
    a, b = widths
    return [
        Residual([
            Conv3x3(2, a), BatchNorm(a), Activation("relu"),
            Conv3x3(a, b), BatchNorm(b), Activation("relu"),
            Conv3x3(b, 2), BatchNorm(2),
        ]),
        Activation("relu"),
    ]


def encoder_layers(spec: ArchSpec) -> list:
    layers = [Conv3x3(2, 2), BatchNorm(2), Activation("relu")]
    if spec.family == "CsiNet_encPlus":
        layers += refine_block(spec.refine_widths)
        layers += refine_block(spec.refine_widths)
    layers += [Reshape((spec.flat_dim,)), Dense(spec.flat_dim, spec.code_len)]
    return layers


def decoder_layers(spec: ArchSpec) -> list:
    layers = [Dense(spec.code_len, spec.flat_dim), Reshape(spec.input_shape)]
    if spec.family != "SimpleCNN":
        layers += refine_block(spec.refine_widths)
        layers += refine_block(spec.refine_widths)
    layers += [Conv3x3(2, 2), Activation("sigmoid")]
    return layers


def build_encoder(spec: ArchSpec, name: str = "encoder") -> Network:
    return Network(encoder_layers(spec), spec.input_shape, name=name)


def build_decoder(spec: ArchSpec, name: str = "decoder") -> Network:
    return Network(decoder_layers(spec), (spec.code_len,), name=name)


def gatenet_layers(code_len: int, n_tasks: int) -> list:
    return [
        Dense(code_len, 2048), BatchNorm(2048), Activation("relu"),
        Dense(2048, 512), BatchNorm(512), Activation("relu"),
        Dense(512, n_tasks), BatchNorm(n_tasks), Activation("softmax"),
    ]


def build_gatenet(code_len: int, n_tasks: int, name: str = "gatenet") -> Network:
    if code_len < 1:
        raise ValueError("code_len must be >= 1")
    if n_tasks < 2:
        raise ValueError("the task classifier needs at least two classes")
    return Network(gatenet_layers(code_len, n_tasks), (code_len,), name=name)
