"""Parameter/FLOP accounting and the frozen family budget table."""

from fractions import Fraction

import numpy as np
import pytest

from csimtl.models import (ArchSpec, build_decoder, build_encoder,
                           build_gatenet, decoder_layers, encoder_layers,
                           gatenet_layers)
from csimtl.nn import (Activation, BatchNorm, Conv3x3, Dense, Reshape,
                       count_flops, count_params)

# published per-family budgets (params and per-sample FLOPs, in units of 1e6)
# at input 32x32x2; reproduced within +-5% / +-10%
FAMILY_BUDGETS = {
    ("CsiNet", 1): {4: (6.23, 2.10), 8: (5.19, 1.05), 16: (4.66, 0.53),
                    32: (4.40, 0.27), 64: (4.27, 0.14)},
    ("CsiNet_encPlus", 1): {4: (10.30, 2.11), 8: (9.25, 1.06),
                            16: (8.72, 0.53), 32: (8.46, 0.27),
                            64: (8.33, 0.14)},
    ("CsiNet_Kwide", 8): {4: (210.44, 2.30), 8: (209.40, 1.25),
                          16: (208.87, 0.73), 32: (208.61, 0.47),
                          64: (208.48, 0.34)},
    ("CsiNet_Kwide", 16): {4: (833.95, 2.91), 8: (832.91, 1.86),
                           16: (832.38, 1.34), 32: (832.12, 1.08),
                           64: (831.99, 0.95)},
    ("SimpleCNN", 1): {4: (2.17, 2.10), 8: (1.12, 1.05), 16: (0.60, 0.53),
                       32: (0.34, 0.27), 64: (0.20, 0.14)},
}


def ae_counts(spec):
    enc, dec = encoder_layers(spec), decoder_layers(spec)
    params = count_params(enc) + count_params(dec)
    flops = (count_flops(enc, spec.input_shape)
             + count_flops(dec, (spec.code_len,)))
    return params, flops


class TestCountRules:
    def test_dense(self):
        assert count_params([Dense(4, 3)]) == 15
        assert count_flops([Dense(4, 3)], (4,)) == 12

    def test_conv(self):
        assert count_params([Conv3x3(2, 8)]) == 9 * 2 * 8 + 8 == 152
        assert count_flops([Conv3x3(2, 8)], (32, 32, 2)) == 9 * 2 * 8 * 32 * 32

    def test_batchnorm_and_activation(self):
        assert count_params([BatchNorm(16)]) == 32
        assert count_flops([BatchNorm(4)], (5, 5, 4)) == 100
        assert count_flops([Activation("relu")], (7,)) == 7
        assert count_flops([Reshape((10,))], (2, 5)) == 0

    def test_store_length_matches_count(self, rng):
        for spec in [ArchSpec("SimpleCNN", Fraction(1, 4)),
                     ArchSpec("CsiNet", Fraction(1, 16)),
                     ArchSpec("CsiNet_encPlus", Fraction(1, 8)),
                     ArchSpec("CsiNet_Kwide", Fraction(1, 32), k_wide=8)]:
            enc = build_encoder(spec)
            dec = build_decoder(spec)
            assert len(enc.params) == count_params(enc.layers)
            assert len(dec.params) == count_params(dec.layers)
        gate = build_gatenet(128, 3)
        assert len(gate.params) == count_params(gate.layers)


class TestFamilyBudgets:
    @pytest.mark.parametrize("family,k", sorted(FAMILY_BUDGETS))
    def test_within_published_tolerances(self, family, k):
        for denom, (flops_m, params_m) in FAMILY_BUDGETS[(family, k)].items():
            spec = ArchSpec(family=family, cr=Fraction(1, denom), k_wide=k)
            params, flops = ae_counts(spec)
            assert abs(params / 1e6 - params_m) <= 0.05 * params_m, \
                f"{spec.label()} 1/{denom}: params {params / 1e6:.3f}M"
            assert abs(flops / 1e6 - flops_m) <= 0.10 * flops_m, \
                f"{spec.label()} 1/{denom}: flops {flops / 1e6:.3f}M"

    def test_gatenet_flops_arithmetic(self):
        layers = gatenet_layers(512, 5)
        dense_macs = 512 * 2048 + 2048 * 512 + 512 * 5
        elementwise = (2048 + 2048) + (512 + 512) + (5 + 5)
        assert count_flops(layers, (512,)) == dense_macs + elementwise

    def test_gatenet_params_arithmetic(self):
        layers = gatenet_layers(512, 5)
        dense = 512 * 2048 + 2048 + 2048 * 512 + 512 + 512 * 5 + 5
        bn = 2 * (2048 + 512 + 5)
        assert count_params(layers) == dense + bn
