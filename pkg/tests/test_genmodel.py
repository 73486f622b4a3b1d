import numpy as np
import pytest

from nica.genmodel import (FrameParams, GaussianScores, GenerativeSpec,
                           MixingNet, SampleBatch, invert_mix, load_dataset,
                           load_manifest, make_contrastive_pairs,
                           make_mvcl_spec, make_tcl_spec, mix,
                           random_frame_params, sample_mixing_net, sample_mvcl,
                           sample_tcl, save_dataset, save_manifest, sigma_star,
                           spec_from_dict, spec_to_dict, variability_matrix)


def _tcl_spec_with_frames(mean, scale, seed=0, **kw):
    mean = np.asarray(mean, dtype=float)
    base = make_tcl_spec(mean.shape[1], mean.shape[0], seed, **kw)
    frames = FrameParams(mean=mean, scale=np.asarray(scale, dtype=float))
    return GenerativeSpec(mode="tcl", d=base.d, mixing=base.mixing,
                          frames=frames, latent_law=base.latent_law,
                          u_encoding=base.u_encoding)


class TestMixing:
    def test_pure_linear_when_slope_one(self):
        rng = np.random.default_rng(0)
        net = MixingNet(a1=rng.standard_normal((3, 3)),
                        a2=rng.standard_normal((3, 3)), slope=1.0)
        s = rng.standard_normal(3)
        assert np.allclose(mix(net, s), net.a2 @ (net.a1 @ s))

    def test_round_trip_on_thousand_points(self):
        rng = np.random.default_rng(1)
        net = sample_mixing_net(4, rng)
        s = rng.standard_normal((1000, 4))
        err = np.max(np.abs(invert_mix(net, mix(net, s)) - s))
        assert err <= 1e-10

    def test_leaky_inverse_on_negative_branch(self):
        net = MixingNet(a1=np.eye(1), a2=np.eye(1), slope=0.2)
        out = mix(net, np.array([-1.0]))
        assert np.isclose(out[0], -0.2)
        back = invert_mix(net, out)
        assert np.isclose(back[0], -1.0)

    def test_sampled_nets_respect_condition_cap(self):
        for seed in range(20):
            net = sample_mixing_net(3, np.random.default_rng(seed), cond_cap=1e4)
            assert np.linalg.cond(net.a1) <= 1e4
            assert np.linalg.cond(net.a2) <= 1e4

    def test_impossible_condition_cap_raises(self):
        with pytest.raises(RuntimeError):
            sample_mixing_net(3, np.random.default_rng(0), cond_cap=1.0001,
                              max_attempts=20)


class TestSampleTcl:
    def test_zero_scale_gives_frame_means_exactly(self):
        mean = np.array([[0.5, -1.0], [2.0, 0.25]])
        spec = _tcl_spec_with_frames(mean, np.zeros((2, 2)))
        batch = sample_tcl(spec, 10, seed=3)
        for tau in range(2):
            rows = batch.s[tau * 5:(tau + 1) * 5]
            assert np.array_equal(rows, np.tile(mean[tau], (5, 1)))

    def test_product_law_unit_variance_frame(self):
        # Var(gaussian * laplace) = 1 * 2 with unit parameters
        spec = _tcl_spec_with_frames(np.zeros((1, 1)), np.ones((1, 1)))
        batch = sample_tcl(spec, 100_000, seed=5)
        assert abs(np.var(batch.s[:, 0]) - 2.0) < 0.05

    def test_x_recovers_s_through_exact_inverse(self):
        spec = make_tcl_spec(3, 5, seed=11)
        batch = sample_tcl(spec, 100, seed=12)
        err = np.max(np.abs(invert_mix(spec.mixing, batch.x) - batch.s))
        assert err <= 1e-10

    def test_n_not_divisible_by_frames_raises(self):
        spec = make_tcl_spec(2, 5, seed=0)
        with pytest.raises(ValueError):
            sample_tcl(spec, 101, seed=0)

    def test_onehot_auxiliary_encodes_frames(self):
        spec = make_tcl_spec(2, 4, seed=1)
        batch = sample_tcl(spec, 40, seed=2)
        assert batch.u.shape == (40, 4)
        assert np.array_equal(batch.u.sum(axis=1), np.ones(40))
        assert np.array_equal(np.argmax(batch.u, axis=1),
                              np.repeat(np.arange(4), 10))

    def test_index_encoding(self):
        spec = make_tcl_spec(2, 4, seed=1, u_encoding="index")
        batch = sample_tcl(spec, 8, seed=2)
        assert batch.u.shape == (8, 1)
        assert np.array_equal(batch.u[:, 0], np.repeat(np.arange(4), 2))

    def test_components_independent_within_frame(self):
        spec = make_tcl_spec(2, 5, seed=21, latent_law="gaussian")
        batch = sample_tcl(spec, 50_000, seed=22)
        for tau in range(5):
            rows = batch.s[tau * 10_000:(tau + 1) * 10_000]
            corr = np.corrcoef(rows[:, 0], rows[:, 1])[0, 1]
            assert abs(corr) < 0.05


class TestSampleMvcl:
    def test_zero_noise_makes_u_deterministic_view(self):
        spec = make_mvcl_spec(2, seed=0, noise_scale=0.0)
        batch = sample_mvcl(spec, 50, seed=1)
        assert np.allclose(batch.u, mix(spec.mixing_view, batch.s))

    def test_uniform_marginal_mean(self):
        spec = make_mvcl_spec(1, seed=2, uniform_ranges=[1.5])
        batch = sample_mvcl(spec, 100_000, seed=3)
        a = 1.5
        assert abs(np.mean(batch.s[:, 0])) < 3 * a / np.sqrt(12 * 100_000)

    def test_variance_ratio_matches_ranges(self):
        spec = make_mvcl_spec(2, seed=4, uniform_ranges=[1.0, 2.0])
        batch = sample_mvcl(spec, 100_000, seed=5)
        ratio = np.var(batch.s[:, 1]) / np.var(batch.s[:, 0])
        assert abs(ratio - 4.0) < 0.2

    def test_nonpositive_range_rejected(self):
        with pytest.raises(ValueError):
            make_mvcl_spec(2, seed=0, uniform_ranges=[1.0, -1.0])


class TestContrastivePairs:
    def _positive_batch(self, n, seed=0, du=3):
        rng = np.random.default_rng(seed)
        return SampleBatch(x=rng.standard_normal((n, 2)),
                           u=rng.standard_normal((n, du)),
                           d=np.ones(n, dtype=int),
                           s=rng.standard_normal((n, 2)))

    def test_two_rows_swap(self):
        batch = self._positive_batch(2)
        pairs = make_contrastive_pairs(batch, seed=0)
        assert np.array_equal(pairs.u[2], batch.u[1])
        assert np.array_equal(pairs.u[3], batch.u[0])

    def test_label_counts(self):
        pairs = make_contrastive_pairs(self._positive_batch(50), seed=1)
        assert pairs.n == 100
        assert int(np.sum(pairs.d == 1)) == 50
        assert int(np.sum(pairs.d == -1)) == 50

    def test_no_negative_row_keeps_its_own_u(self):
        for seed in range(10):
            batch = self._positive_batch(37, seed=seed)
            pairs = make_contrastive_pairs(batch, seed=seed)
            negatives = pairs.u[37:]
            same = np.all(negatives == batch.u, axis=1)
            assert not same.any()

    def test_shuffled_u_decorrelates_from_x(self):
        rng = np.random.default_rng(6)
        n = 10_000
        x = rng.standard_normal((n, 1))
        u = x + 0.1 * rng.standard_normal((n, 1))  # strongly paired
        batch = SampleBatch(x=x, u=u, d=np.ones(n, dtype=int))
        pairs = make_contrastive_pairs(batch, seed=7)
        neg_u = pairs.u[n:]
        corr = np.corrcoef(x[:, 0], neg_u[:, 0])[0, 1]
        assert abs(corr) < 0.03

    def test_requires_positive_batch_and_two_rows(self):
        batch = self._positive_batch(4)
        doubled = make_contrastive_pairs(batch, seed=0)
        with pytest.raises(ValueError):
            make_contrastive_pairs(doubled, seed=0)
        with pytest.raises(ValueError):
            make_contrastive_pairs(self._positive_batch(1), seed=0)

    def test_ground_truth_tracks_x(self):
        batch = self._positive_batch(5)
        pairs = make_contrastive_pairs(batch, seed=2)
        assert np.array_equal(pairs.s[:5], batch.s)
        assert np.array_equal(pairs.s[5:], batch.s)


class TestVariability:
    def test_identical_auxiliaries_give_zero_matrix(self):
        sc = GaussianScores(mean=np.zeros((5, 2)), var=np.ones((5, 2)))
        w, smin = variability_matrix(sc, np.zeros(2), [0, 0, 0, 0, 0])
        assert np.array_equal(w, np.zeros((4, 4)))
        assert smin == 0.0

    def test_hand_worked_one_dimensional_case(self):
        sc = GaussianScores(mean=np.array([[0.0], [1.0], [0.0]]),
                            var=np.array([[1.0], [1.0], [2.0]]))
        w, smin = variability_matrix(sc, np.array([0.0]), [0, 1, 2])
        assert np.allclose(w, np.array([[1.0, 0.0], [0.0, 0.5]]))
        assert np.isclose(smin, 0.5)

    def test_sigma_min_invariant_under_reordering(self):
        rng = np.random.default_rng(8)
        sc = GaussianScores(mean=rng.uniform(-1, 1, (5, 2)),
                            var=rng.uniform(0.5, 2.0, (5, 2)))
        y = rng.standard_normal(2)
        _, s1 = variability_matrix(sc, y, [0, 1, 2, 3, 4])
        _, s2 = variability_matrix(sc, y, [0, 4, 2, 3, 1])
        assert np.isclose(s1, s2, rtol=1e-10)

    def test_too_few_auxiliaries_rejected(self):
        sc = GaussianScores(mean=np.zeros((3, 2)), var=np.ones((3, 2)))
        with pytest.raises(ValueError):
            variability_matrix(sc, np.zeros(2), [0, 1, 2])

    def test_generic_gaussian_frames_have_positive_sigma_min(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            frames = random_frame_params(5, 2, rng)
            sc = GaussianScores.from_frames(frames)
            y = rng.standard_normal(2)
            _, smin = variability_matrix(sc, y, list(range(5)))
            assert smin > 0.0

    def test_sigma_star_takes_best_point(self):
        sc = GaussianScores(mean=np.array([[0.0], [1.0], [0.0]]),
                            var=np.array([[1.0], [1.0], [2.0]]))
        pts = np.array([[0.0], [2.0]])
        best = sigma_star(sc, pts, [0, 1, 2])
        singles = [variability_matrix(sc, p, [0, 1, 2])[1] for p in pts]
        assert np.isclose(best, max(singles))


class TestSerialization:
    def test_dataset_roundtrip(self, tmp_path):
        spec = make_tcl_spec(2, 5, seed=0)
        pairs = make_contrastive_pairs(sample_tcl(spec, 50, seed=1), seed=2)
        path = tmp_path / "data.csv"
        save_dataset(path, pairs)
        loaded = load_dataset(path)
        assert np.allclose(loaded.x, pairs.x, rtol=1e-15)
        assert np.allclose(loaded.u, pairs.u, rtol=1e-15)
        assert np.array_equal(loaded.d, pairs.d)
        assert np.allclose(loaded.s, pairs.s, rtol=1e-15)

    def test_dataset_without_ground_truth(self, tmp_path):
        batch = SampleBatch(x=np.ones((3, 2)), u=np.zeros((3, 1)),
                            d=np.array([1, 1, -1]))
        path = tmp_path / "plain.csv"
        save_dataset(path, batch)
        loaded = load_dataset(path)
        assert loaded.s is None
        assert np.array_equal(loaded.d, batch.d)

    def test_manifest_roundtrip_rebuilds_spec(self, tmp_path):
        for maker in (lambda: make_tcl_spec(2, 5, seed=3),
                      lambda: make_mvcl_spec(2, seed=4)):
            spec = maker()
            path = tmp_path / "manifest.json"
            save_manifest(path, spec, seed=9, n=123)
            spec2, meta = load_manifest(path)
            assert meta == {"seed": 9, "n": 123}
            assert spec2.mode == spec.mode
            assert np.array_equal(spec2.mixing.a1, spec.mixing.a1)
            assert np.array_equal(spec2.mixing.a2, spec.mixing.a2)
            if spec.mode == "tcl":
                assert np.array_equal(spec2.frames.mean, spec.frames.mean)
            else:
                assert np.array_equal(spec2.mixing_view.a2, spec.mixing_view.a2)
                assert np.array_equal(spec2.uniform_ranges, spec.uniform_ranges)

    def test_spec_dict_is_json_safe(self):
        import json
        spec = make_mvcl_spec(3, seed=5)
        d = json.loads(json.dumps(spec_to_dict(spec)))
        spec2 = spec_from_dict(d)
        assert spec2.d == 3
