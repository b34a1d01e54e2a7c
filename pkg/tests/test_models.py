"""Architecture family construction."""

from fractions import Fraction

import numpy as np
import pytest

from csimtl.models import ArchSpec, build_decoder, build_encoder, build_gatenet
from csimtl.nn import count_params


class TestArchSpec:
    def test_code_length(self):
        spec = ArchSpec("CsiNet", Fraction(1, 4), input_shape=(32, 32, 2))
        assert spec.code_len == 512

    def test_non_integer_code_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            ArchSpec("CsiNet", Fraction(1, 5), input_shape=(8, 8, 2))

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            ArchSpec("ResNet", Fraction(1, 4))

    def test_labels(self):
        assert ArchSpec("CsiNet_Kwide", Fraction(1, 4), k_wide=8).label() \
            == "CsiNet_8wide"
        assert ArchSpec("SimpleCNN", Fraction(1, 4)).label() == "SimpleCNN"


class TestBuilders:
    @pytest.mark.parametrize("family,k", [("SimpleCNN", 1), ("CsiNet", 1),
                                          ("CsiNet_encPlus", 1),
                                          ("CsiNet_Kwide", 4)])
    def test_autoencoder_round_trip_shape(self, family, k, rng):
        spec = ArchSpec(family, Fraction(1, 8), input_shape=(8, 8, 2), k_wide=k)
        enc, dec = build_encoder(spec), build_decoder(spec)
        enc.init_params(rng)
        dec.init_params(rng)
        x = rng.uniform(size=(3, 8, 8, 2)).astype(np.float32)
        code, _ = enc.forward(x, "eval")
        assert code.shape == (3, spec.code_len)
        out, _ = dec.forward(code, "eval")
        assert out.shape == x.shape
        assert np.all(out > 0) and np.all(out < 1)

    def test_capacity_monotone_in_k(self):
        sizes = []
        for k in (1, 2, 8, 16):
            spec = ArchSpec("CsiNet_Kwide", Fraction(1, 4), k_wide=k)
            sizes.append(count_params(build_decoder(spec).layers))
        assert sizes == sorted(sizes) and len(set(sizes)) == len(sizes)

    def test_enc_plus_larger_than_csinet(self):
        base = ArchSpec("CsiNet", Fraction(1, 4))
        plus = ArchSpec("CsiNet_encPlus", Fraction(1, 4))
        assert count_params(build_encoder(plus).layers) > \
            count_params(build_encoder(base).layers)
        assert count_params(build_decoder(plus).layers) == \
            count_params(build_decoder(base).layers)


class TestGateNet:
    def test_published_layer_dims(self):
        gate = build_gatenet(512, 5)
        dense = [l for l in gate.layers if l.kind == "dense"]
        assert [(l.n_in, l.n_out) for l in dense] == \
            [(512, 2048), (2048, 512), (512, 5)]

    def test_output_is_probability_vector(self, rng):
        gate = build_gatenet(32, 4)
        gate.init_params(rng)
        y, _ = gate.forward(rng.normal(size=(6, 32)).astype(np.float32), "eval")
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(y > 0) and np.all(y < 1)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            build_gatenet(32, 1)
