import numpy as np
import pytest

from dvgait import dvgan, gei
from dvgait import numgrad as ng


def small_config(**kw):
    base = dict(
        epochs=1,
        batch_size=4,
        theta_prime_deg=18.0,
        views=tuple(float(v) for v in range(0, 181, 18)),
        base_width=4,
        seed=3,
    )
    base.update(kw)
    return dvgan.TrainConfig(**base)


@pytest.fixture(scope="module")
def small_gen():
    return dvgan.GeneratorNet(base_width=4, rng=np.random.default_rng(0))


class TestConfig:
    def test_valid_default(self):
        dvgan.TrainConfig().validate()

    def test_theta_prime_must_match_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            small_config(theta_prime_deg=10.0).validate()

    def test_nonuniform_views_rejected(self):
        with pytest.raises(ValueError, match="uniform"):
            small_config(views=(0.0, 18.0, 40.0)).validate()

    def test_interior_views(self):
        cfg = small_config().validate()
        assert cfg.interior_views == tuple(float(v) for v in range(18, 163, 18))
        assert len(cfg.interior_views) == 9

    def test_adjacent_pairs_and_alphas(self):
        cfg = small_config().validate()
        assert len(cfg.adjacent_pairs) == 10
        assert cfg.adjacent_pairs[0] == (0.0, 18.0)
        alphas = cfg.default_alphas()
        assert len(alphas) == 17
        assert alphas[0] == pytest.approx(1 / 18)

    def test_ouisir_style_views(self):
        cfg = dvgan.TrainConfig(
            views=(55.0, 65.0, 75.0, 85.0), theta_prime_deg=10.0, batch_size=2
        ).validate()
        assert cfg.interior_views == (65.0, 75.0)
        assert len(cfg.default_alphas()) == 9


class TestGeneratorStructure:
    def test_default_latent_is_64x32x32(self):
        gen = dvgan.GeneratorNet(base_width=64, rng=np.random.default_rng(0))
        gen.eval()
        z = gen.encode_tensor(ng.Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))
        assert z.shape == (1, 64, 32, 32)

    def test_decode_encode_equals_forward_bit_exact(self, small_gen):
        small_gen.eval()
        x = ng.Tensor(np.random.default_rng(1).random((3, 1, 64, 64)).astype(np.float32))
        full = small_gen.forward_tensor(x)
        split = small_gen.decode_tensor(small_gen.encode_tensor(x))
        np.testing.assert_array_equal(full.data, split.data)

    def test_output_extent_and_range(self, small_gen):
        small_gen.eval()
        x = ng.Tensor(np.random.default_rng(2).random((2, 1, 64, 64)).astype(np.float32))
        out = small_gen.forward_tensor(x)
        assert out.shape == (2, 1, 64, 64)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_encode_deterministic_in_eval(self, small_gen, tiny_geis):
        small_gen.eval()
        a = small_gen.encode(tiny_geis[0])
        b = small_gen.encode(tiny_geis[0])
        np.testing.assert_array_equal(a.tensor.data, b.tensor.data)

    def test_codes_of_different_views_differ(self, small_gen, tiny_geis):
        small_gen.eval()
        a = small_gen.encode(tiny_geis[0])
        b = small_gen.encode(tiny_geis[5])
        assert np.abs(a.tensor.data - b.tensor.data).sum() > 0

    def test_encode_rejects_bad_extent(self, small_gen):
        with pytest.raises(ValueError, match="encode"):
            small_gen.encode_tensor(ng.Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))

    def test_decode_batch_independent_in_eval(self, small_gen):
        small_gen.eval()
        rng = np.random.default_rng(3)
        z = rng.random((4, 4, 32, 32)).astype(np.float32)
        with ng.no_grad():
            full = small_gen.decode_tensor(ng.Tensor(z)).data
            one = small_gen.decode_tensor(ng.Tensor(z[:1])).data
        np.testing.assert_array_equal(full[:1], one)


class TestInterpolate:
    def _codes(self, small_gen, tiny_geis):
        small_gen.eval()
        return small_gen.encode(tiny_geis[0]), small_gen.encode(tiny_geis[1])

    def test_alpha_one_exact(self, small_gen, tiny_geis):
        zp, zq = self._codes(small_gen, tiny_geis)
        out = dvgan.interpolate_latent(zp, zq, 1.0)
        np.testing.assert_array_equal(out.tensor.data, zp.tensor.data)
        assert out.view_deg == zp.view_deg

    def test_alpha_zero_exact(self, small_gen, tiny_geis):
        zp, zq = self._codes(small_gen, tiny_geis)
        out = dvgan.interpolate_latent(zp, zq, 0.0)
        np.testing.assert_array_equal(out.tensor.data, zq.tensor.data)

    def test_scalar_midpoint(self):
        mk = lambda v: dvgan.LatentCode(
            tensor=ng.Tensor(np.full((1, 1, 1, 1), v, dtype=np.float32)),
            view_deg=0.0,
            subject_id="001",
            sequence_id="nm01",
        )
        out = dvgan.interpolate_latent(mk(2.0), mk(4.0), 0.5)
        assert out.tensor.data[0, 0, 0, 0] == 3.0

    def test_view_label_blends(self, small_gen, tiny_geis):
        zp, zq = self._codes(small_gen, tiny_geis)  # views 0 and 18
        out = dvgan.interpolate_latent(zp, zq, 0.5)
        assert out.view_deg == pytest.approx(9.0)

    def test_shape_mismatch_rejected(self, small_gen, tiny_geis):
        zp, _ = self._codes(small_gen, tiny_geis)
        zq = dvgan.LatentCode(
            tensor=ng.Tensor(np.zeros((1, 4, 16, 16), dtype=np.float32)),
            view_deg=0.0, subject_id="x", sequence_id="y",
        )
        with pytest.raises(ValueError, match="shapes"):
            dvgan.interpolate_latent(zp, zq, 0.5)


class TestLosses:
    def test_generator_loss_at_half_probability(self, small_gen):
        cfg = small_config(lambda_l1=100.0, w_d=1.0, w_m=1.0)
        x = ng.Tensor(np.random.default_rng(0).random((2, 1, 64, 64)).astype(np.float32))
        zero_logit = ng.Tensor(np.zeros((2, 1), dtype=np.float32), requires_grad=True)
        total, comps = dvgan.generator_loss(x, x, zero_logit, zero_logit, cfg)
        assert comps["l1"] == 0.0
        assert total.item() == pytest.approx(2 * np.log(2), abs=1e-6)

    def test_component_decomposition(self, small_gen):
        cfg = small_config()
        rng = np.random.default_rng(1)
        x = ng.Tensor(rng.random((2, 1, 64, 64)).astype(np.float32))
        xh = ng.Tensor(rng.random((2, 1, 64, 64)).astype(np.float32), requires_grad=True)
        dl = ng.Tensor(rng.normal(size=(2, 1)).astype(np.float32), requires_grad=True)
        ml = ng.Tensor(rng.normal(size=(2, 1)).astype(np.float32), requires_grad=True)
        total, comps = dvgan.generator_loss(x, xh, dl, ml, cfg)
        recon = cfg.lambda_l1 * comps["l1"] + cfg.w_d * comps["adv_d"] + cfg.w_m * comps["adv_m"]
        assert total.item() == pytest.approx(recon, abs=1e-5)

    def test_generator_loss_flows_only_to_generator(self, tiny_geis):
        cfg = small_config(batch_size=2)
        gen, disc, mon = dvgan.build_networks(cfg)
        x = ng.Tensor(dvgan.stack_pixels(tiny_geis[:2]))
        x_hat = gen.forward_tensor(x)
        with ng.frozen(disc, mon):
            d_logit = disc.forward_pair(x, x_hat)
            m_logit = mon.forward_pair(x, x_hat)
            total, _ = dvgan.generator_loss(x, x_hat, d_logit, m_logit, cfg)
            total.backward()
        assert all(p.grad is None for p in disc.parameters())
        assert all(p.grad is None for p in mon.parameters())
        assert any(p.grad is not None and np.abs(p.grad).sum() > 0 for p in gen.parameters())


class TestJudgeSteps:
    def test_separated_pairs_give_near_zero_loss(self):
        # drive the head so real pairs sit at logit +20 and fake at -20
        cfg = small_config(batch_size=2)
        _, disc, _ = dvgan.build_networks(cfg)
        real_logit = ng.Tensor(np.full((4, 1), 20.0, dtype=np.float32), requires_grad=True)
        fake_logit = ng.Tensor(np.full((4, 1), -20.0, dtype=np.float32), requires_grad=True)
        loss = ng.add(
            ng.bce_with_logits(real_logit, np.ones((4, 1), dtype=np.float32)),
            ng.bce_with_logits(fake_logit, np.zeros((4, 1), dtype=np.float32)),
        )
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_indifferent_judge_loses_2ln2(self, tiny_geis):
        cfg = small_config(batch_size=2)
        _, disc, _ = dvgan.build_networks(cfg)
        # zero the head so every pair lands exactly at probability 0.5
        disc.head.weight.tensor.data[:] = 0.0
        disc.head.bias.tensor.data[:] = 0.0
        x = ng.Tensor(dvgan.stack_pixels(tiny_geis[:2]))
        y = ng.Tensor(dvgan.stack_pixels(tiny_geis[2:4]))
        loss = dvgan.judge_loss(disc, x, x, y)
        assert loss.item() == pytest.approx(2 * np.log(2), abs=1e-6)

    def test_monitor_loss_decreases_on_fixed_batch(self, tiny_geis):
        cfg = small_config(batch_size=2)
        gen, _, mon = dvgan.build_networks(cfg)
        opt = ng.Adam(mon.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
        groups = dvgan.group_by_sequence(tiny_geis)
        key = sorted(groups)[0]
        x_lo = ng.Tensor(dvgan.stack_pixels([groups[key][72.0], groups[key][72.0]]))
        x_mid = ng.Tensor(dvgan.stack_pixels([groups[key][90.0], groups[key][90.0]]))
        x_hi = ng.Tensor(dvgan.stack_pixels([groups[key][108.0], groups[key][108.0]]))
        losses = [
            dvgan.monitor_step(mon, opt, gen, x_lo, x_mid, x_hi) for _ in range(50)
        ]
        assert np.mean(losses[-10:]) < np.mean(losses[:5])


class TestTrain:
    def test_zero_epochs_checkpoint_equals_init(self, tiny_geis, tmp_path):
        cfg = small_config(epochs=0)
        gen, disc, mon, history = dvgan.train(tiny_geis, cfg, tmp_path)
        fresh, _, _ = dvgan.build_networks(cfg)
        saved = ng.load_checkpoint(tmp_path / "generator.dvgw")
        for name, value in fresh.state_dict("G.").items():
            np.testing.assert_array_equal(saved[name], value)
        assert history.rows == []

    def test_missing_view_rejected(self, tiny_geis):
        cfg = small_config()
        partial = [g for g in tiny_geis if g.view_deg != 90.0]
        with pytest.raises(ValueError, match="missing"):
            dvgan.train(partial, cfg)

    def test_fixed_seed_bit_identical_history(self, tiny_geis, tmp_path):
        cfg = small_config(epochs=1, batch_size=4)
        dvgan.train(tiny_geis, cfg, tmp_path / "a")
        dvgan.train(tiny_geis, cfg, tmp_path / "b")
        a = (tmp_path / "a" / "loss_history.csv").read_bytes()
        b = (tmp_path / "b" / "loss_history.csv").read_bytes()
        assert a == b and len(a) > 0

    def test_checkpoint_round_trip_reproduces_generator(self, tiny_geis, tmp_path):
        cfg = small_config(epochs=1, batch_size=4)
        gen, _, _, _ = dvgan.train(tiny_geis, cfg, tmp_path)
        loaded = dvgan.load_generator(tmp_path / "generator.dvgw", cfg.base_width)
        gen.eval()
        x = ng.Tensor(dvgan.stack_pixels(tiny_geis[:2]))
        with ng.no_grad():
            np.testing.assert_array_equal(
                gen.forward_tensor(x).data, loaded.forward_tensor(x).data
            )


class TestSynthesis:
    def test_dense_set_cardinality(self, tiny_geis):
        cfg = small_config()
        gen, _, _ = dvgan.build_networks(cfg)
        out, skipped = dvgan.synthesize_dense_set(gen, tiny_geis)
        assert not skipped
        # 10 adjacent pairs x 17 alphas per (subject, sequence)
        assert len(out) == 2 * 10 * 17
        views = sorted({g.view_deg for g in out} | {g.view_deg for g in tiny_geis})
        assert len(views) == 181
        assert all(float(v).is_integer() for v in views)

    def test_alpha_half_view_label(self, tiny_geis):
        cfg = small_config()
        gen, _, _ = dvgan.build_networks(cfg)
        out, _ = dvgan.synthesize_dense_set(gen, tiny_geis, pairs=[(0.0, 18.0)], alphas=[0.5])
        assert {g.view_deg for g in out} == {9.0}

    def test_missing_pair_member_skipped(self, tiny_geis):
        cfg = small_config()
        gen, _, _ = dvgan.build_networks(cfg)
        partial = [g for g in tiny_geis if not (g.subject_id == "001" and g.view_deg == 18.0)]
        out, skipped = dvgan.synthesize_dense_set(gen, partial)
        assert ("001", "nm01", 0.0, 18.0) in skipped
        assert ("001", "nm01", 18.0, 36.0) in skipped
        assert len(skipped) == 2

    def test_synthesized_satisfy_gei_invariants(self, tiny_geis):
        cfg = small_config()
        gen, _, _ = dvgan.build_networks(cfg)
        out, _ = dvgan.synthesize_dense_set(gen, tiny_geis, pairs=[(90.0, 108.0)], alphas=[0.25, 0.75])
        for g in out:
            g.validate()
            assert g.origin == gei.ORIGIN_SYNTHESIZED

    def test_ouisir_style_alphas(self, tiny_geis):
        # relabel the first four views as 55..85 at 10-degree spacing
        relabeled = []
        mapping = {0.0: 55.0, 18.0: 65.0, 36.0: 75.0, 54.0: 85.0}
        for g in tiny_geis:
            if g.view_deg in mapping:
                relabeled.append(
                    gei.GEI(g.pixels, g.subject_id, g.sequence_id, mapping[g.view_deg])
                )
        gen = dvgan.GeneratorNet(base_width=4, rng=np.random.default_rng(0))
        out, skipped = dvgan.synthesize_dense_set(gen, relabeled)
        assert not skipped
        views = sorted({g.view_deg for g in out} | {g.view_deg for g in relabeled})
        assert views == [float(v) for v in range(55, 86)]
