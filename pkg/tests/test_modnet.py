"""Modulation math, residual identity, parameter accounting, checkpoints."""

import numpy as np
import pytest
from helpers import check_gradients, scalar_loss

from adlraw.engine import record, scale_shift
from adlraw.engine.tensor import Tensor
from adlraw.errors import ContractViolation, MagicError, TruncationError
from adlraw.modnet import (
    ISO_MAX,
    MetaEncoder,
    ModulatedDenoiser,
    load_model,
    save_model,
)


def small_model(n_sensors=3, seed=0, dtype=np.float32):
    return ModulatedDenoiser(n_sensors=n_sensors, widths=(4, 8, 12), seed=seed, dtype=dtype)


class TestMetaEncoder:
    def test_one_hot_and_duplicated_iso(self):
        enc = MetaEncoder([10, 20, 30])
        v = enc.encode(20, 1600)
        assert v.shape == (6,)
        np.testing.assert_array_equal(v[:3], [0, 1, 0])
        np.testing.assert_allclose(v[3:], 1600 / ISO_MAX)

    def test_unknown_sensor(self):
        with pytest.raises(ContractViolation, match="one-hot"):
            MetaEncoder([1, 2]).encode(3, 100)

    def test_masking_halves(self):
        enc = MetaEncoder([1, 2], use_type=False)
        v = enc.encode(1, 400)
        np.testing.assert_array_equal(v[:2], [0, 0])
        assert v[2:].max() > 0
        enc = MetaEncoder([1, 2], use_iso=False)
        v = enc.encode(1, 400)
        np.testing.assert_array_equal(v[2:], [0, 0])
        np.testing.assert_array_equal(v[:2], [1, 0])


class TestModulationParams:
    def test_zero_mlps_give_identity_params(self):
        model = small_model()
        model.zero_modulation_()
        meta = MetaEncoder([0, 1, 2]).encode(1, 400)
        for stage, width in enumerate(model.widths):
            gamma, beta = model.modulation_params(meta, stage)
            np.testing.assert_array_equal(gamma.data, np.ones((1, width), dtype=np.float32))
            np.testing.assert_array_equal(beta.data, np.zeros((1, width), dtype=np.float32))

    def test_scale_always_in_open_interval(self):
        # scale = 1 + tanh(.) must stay strictly inside (0, 2): fresh weight
        # draws plus extreme inputs on fixed weights
        rng = np.random.default_rng(0)
        enc = MetaEncoder([0, 1, 2])
        for trial in range(200):
            model = ModulatedDenoiser(n_sensors=3, widths=(4, 8, 12), seed=trial)
            meta = enc.encode(int(rng.integers(0, 3)), int(rng.choice([100, 400, 1600, 3200])))
            gamma, _ = model.modulation_params(meta, int(rng.integers(0, 3)))
            assert gamma.data.min() > 0.0 and gamma.data.max() < 2.0
        model = small_model(seed=1)
        for _ in range(9_800):
            meta = rng.random(6).astype(np.float32)  # any metadata in [0,1]
            gamma, _ = model.modulation_params(meta, int(rng.integers(0, 3)))
            assert gamma.data.min() > 0.0 and gamma.data.max() < 2.0

    def test_different_sensors_modulate_differently(self):
        model = small_model(seed=7)
        enc = MetaEncoder([0, 1, 2])
        g0, b0 = model.modulation_params(enc.encode(0, 400), 0)
        g1, b1 = model.modulation_params(enc.encode(1, 400), 0)
        assert np.abs(g0.data - g1.data).max() > 0
        assert np.abs(b0.data - b1.data).max() > 0

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            small_model(n_sensors=3).modulation_params(np.zeros(4, dtype=np.float32), 0)


class TestModulateOp:
    def test_scalar_example(self):
        f = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
        y = scale_shift(f, Tensor(np.array([0.5], dtype=np.float32)),
                        Tensor(np.array([0.25], dtype=np.float32)))
        np.testing.assert_allclose(y.data, np.full((1, 1, 2, 2), 0.75))

    def test_gamma_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True, dtype=np.float64)
        g = Tensor(rng.standard_normal((1, 3)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.standard_normal((1, 3)), requires_grad=True, dtype=np.float64)
        check_gradients(lambda: scalar_loss(scale_shift(x, g, b)), [x, g, b])


class TestForward:
    def test_residual_identity_at_init(self):
        model = small_model(seed=3)
        enc = MetaEncoder([0, 1, 2])
        x = np.random.default_rng(2).random((2, 4, 16, 16)).astype(np.float32)
        out = model.denoise(x, np.stack([enc.encode(1, 400)] * 2))
        np.testing.assert_array_equal(out, x)

    def test_output_shape_matches_input(self):
        model = small_model()
        enc = MetaEncoder([0, 1, 2])
        for h, w in ((8, 8), (16, 8), (24, 32)):
            x = np.zeros((1, 4, h, w), dtype=np.float32)
            out = model.denoise(x, enc.encode(0, 100)[None])
            assert out.shape == (1, 4, h, w)

    def test_indivisible_dims_rejected(self):
        model = small_model()
        with pytest.raises(ContractViolation):
            model.denoise(np.zeros((1, 4, 12, 12), dtype=np.float32),
                          np.zeros((1, 6), dtype=np.float32))

    def test_overfit_single_pair(self):
        from adlraw import sensorsim
        from adlraw.adl import AdlConfig
        from adlraw.engine import l1_loss

        profile = sensorsim.default_fleet()[1]
        ds = sensorsim.build_domain(profile, 1, 8, seed=9)
        pair = ds.pairs[0]
        enc = MetaEncoder([profile.sensor_id])
        model = ModulatedDenoiser(n_sensors=1, widths=(4, 8, 12), seed=4)
        opt = AdlConfig().make_optimizer(model.param_tensors())
        meta = enc.encode_pairs([pair])
        losses = []
        for _ in range(200):
            model.zero_grad()
            with record() as tape:
                out = model.forward(Tensor(pair.noisy[None]), meta)
                loss = l1_loss(out, Tensor(pair.clean[None]))
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        assert losses[-1] < 0.5 * losses[0]

    def test_full_model_gradient_check(self):
        from helpers import full_model_grad_check

        worst = full_model_grad_check(config_seed=0)
        assert worst < 1e-4


class TestZeroModulationEquivalence:
    def test_bit_identical_to_disabled(self):
        model = small_model(seed=8)
        model.zero_modulation_()
        enc = MetaEncoder([0, 1, 2])
        rng = np.random.default_rng(9)
        for _ in range(100):
            x = rng.random((1, 4, 8, 8)).astype(np.float32)
            meta = np.stack([enc.encode(int(rng.integers(0, 3)), 400)])
            a = model.forward(Tensor(x), meta, modulate=True).data
            b = model.forward(Tensor(x), meta, modulate=False).data
            assert a.tobytes() == b.tobytes()


class TestPermutationConsistency:
    def test_permuting_sensors_and_first_layers(self):
        rng = np.random.default_rng(10)
        n = 4
        enc = MetaEncoder(list(range(n)))
        model = ModulatedDenoiser(n_sensors=n, widths=(4, 8, 12), seed=11)
        perm = rng.permutation(n)
        permuted = ModulatedDenoiser(n_sensors=n, widths=(4, 8, 12), seed=11)
        for src_mlps, dst_mlps in ((model.mlps_gamma, permuted.mlps_gamma),
                                   (model.mlps_beta, permuted.mlps_beta)):
            for src, dst in zip(src_mlps, dst_mlps):
                w0, _ = src.layers[0]
                dw0, _ = dst.layers[0]
                dw0.data[:n] = w0.data[perm]        # sensor rows
                dw0.data[n:] = w0.data[n:][perm]    # duplicated-iso rows
        x = rng.random((1, 4, 16, 16)).astype(np.float32)
        for sid in range(n):
            meta_orig = np.stack([enc.encode(sid, 1600)])
            # in the permuted model, the same sensor sits at position argwhere(perm==sid)
            new_idx = int(np.argwhere(perm == sid)[0, 0])
            meta_perm = np.stack([enc.encode(new_idx, 1600)])
            a = model.forward(Tensor(x), meta_orig).data
            b = permuted.forward(Tensor(x), meta_perm).data
            np.testing.assert_allclose(a, b, atol=1e-6)


class TestParamCounting:
    @staticmethod
    def expected_count(widths, n_sensors, in_ch=4):
        w1, w2, w3 = widths
        conv = lambda i, o: o * i * 9 + o
        total = conv(in_ch, w1) + conv(w1, w2) + conv(w2, w3)
        total += conv(w3 + w2, w2) + conv(w2 + w1, w1) + conv(w1 + in_ch, in_ch)
        for c in widths:
            mlp = (2 * n_sensors) * c + c + 3 * (c * c + c)
            total += 2 * mlp
        return total

    def test_matches_closed_form(self):
        model = small_model(n_sensors=3)
        assert model.count_params() == self.expected_count((4, 8, 12), 3)

    def test_default_config_closed_form(self):
        model = ModulatedDenoiser(n_sensors=5)
        assert model.widths == (16, 32, 64)
        assert model.count_params() == self.expected_count((16, 32, 64), 5)

    def test_doubling_widths_quadruples_conv_stack(self):
        def conv_params(widths, in_ch=4):
            w1, w2, w3 = widths
            conv = lambda i, o: o * i * 9
            return (conv(in_ch, w1) + conv(w1, w2) + conv(w2, w3) +
                    conv(w3 + w2, w2) + conv(w2 + w1, w1) + conv(w1 + in_ch, in_ch))

        base = conv_params((8, 16, 32))
        double = conv_params((16, 32, 64))
        # weight counts scale quadratically up to the fixed-size input/output taps
        assert double / base == pytest.approx(4.0, rel=0.15)

    def test_extra_sensor_only_grows_mlp_first_layers(self):
        a = self.expected_count((4, 8, 12), 3)
        b = self.expected_count((4, 8, 12), 4)
        assert ModulatedDenoiser(n_sensors=4, widths=(4, 8, 12), seed=0).count_params() == b
        # each stage has two MLPs, each gaining 2 first-layer rows of width C
        assert b - a == sum(2 * 2 * c for c in (4, 8, 12))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = small_model(seed=12)
        enc = MetaEncoder([5, 6, 7])
        path = tmp_path / "m.mdl"
        save_model(path, model, encoder=enc)
        back, enc2 = load_model(path)
        assert enc2.sensor_ids == (5, 6, 7)
        for (na, pa), (nb, pb) in zip(model.parameters(), back.parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mdl"
        p.write_bytes(b"WRONGMAG" + b"\0" * 32)
        with pytest.raises(MagicError):
            load_model(p)

    def test_truncated_payload(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.mdl"
        save_model(path, model)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(TruncationError):
            load_model(path)
