"""Ray samplers and the unbounded-background contraction."""

import numpy as np
import pytest

from alphainv.errors import DomainError
from alphainv.sampling import (
    Contraction, SamplerKind, SamplerSpec, contract, sample_pdf_bins, sample_ray,
    sample_rays_batch,
)
from alphainv.volrend import Ray

RAY = Ray([0, 0, 0], [0, 0, 1.0], 0.0, 4.0)
RAY_OFFSET = Ray([0, 0, 0], [0, 0, 1.0], 1.0, 4.0)


def spec(kind, n=4, **kw):
    return SamplerSpec(kind, n, **kw)


class TestUniform:
    def test_four_equal_bins(self):
        s = sample_ray(RAY, spec(SamplerKind.UNIFORM, 4))
        np.testing.assert_allclose(s.intervals, [1.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(s.t_mids, [0.5, 1.5, 2.5, 3.5])

    def test_partition_sums_to_extent(self):
        for n in (1, 7, 64):
            s = sample_ray(RAY_OFFSET, spec(SamplerKind.UNIFORM, n))
            np.testing.assert_allclose(s.intervals.sum(), 3.0, atol=1e-9)


class TestStratified:
    def test_partition_and_monotonicity(self):
        for epoch in range(5):
            s = sample_ray(RAY, spec(SamplerKind.STRATIFIED, 33, seed=9), epoch=epoch)
            assert np.all(np.diff(s.t_mids) > 0)
            np.testing.assert_allclose(s.intervals.sum(), 4.0, atol=1e-9)

    def test_one_sample_per_bin(self):
        s = sample_ray(RAY, spec(SamplerKind.STRATIFIED, 8, seed=1))
        bins = np.floor(s.t_mids / 0.5).astype(int)
        np.testing.assert_array_equal(bins, np.arange(8))

    def test_deterministic_per_seed_and_epoch(self):
        a = sample_ray(RAY, spec(SamplerKind.STRATIFIED, 16, seed=3), epoch=2)
        b = sample_ray(RAY, spec(SamplerKind.STRATIFIED, 16, seed=3), epoch=2)
        c = sample_ray(RAY, spec(SamplerKind.STRATIFIED, 16, seed=3), epoch=3)
        np.testing.assert_array_equal(a.t_mids, b.t_mids)
        assert np.any(a.t_mids != c.t_mids)


class TestDisparity:
    def test_reciprocal_boundaries(self):
        """N = 3 over [1, 4]: interval edges at 1, 4/3, 2, 4."""
        ray = Ray([0, 0, 0], [0, 0, 1.0], 1.0, 4.0)
        s = sample_ray(ray, spec(SamplerKind.DISPARITY, 3))
        np.testing.assert_allclose(np.cumsum(s.intervals) + 1.0, [4 / 3, 2.0, 4.0],
                                   rtol=1e-12)

    def test_samples_linear_in_disparity(self):
        ray = Ray([0, 0, 0], [0, 0, 1.0], 1.0, 4.0)
        s = sample_ray(ray, spec(SamplerKind.DISPARITY, 16))
        steps = np.diff(1.0 / s.t_mids)
        np.testing.assert_allclose(steps, steps[0], rtol=1e-9)

    def test_requires_positive_near(self):
        ray = Ray([0, 0, 0], [0, 0, 1.0], 0.0, 4.0)
        with pytest.raises(DomainError):
            sample_ray(ray, spec(SamplerKind.DISPARITY, 4))


class TestImportance:
    def _coarse(self, n=16):
        return sample_ray(RAY, spec(SamplerKind.UNIFORM, n))

    def test_concentrated_weights_attract_samples(self):
        coarse = self._coarse()
        w = np.zeros(16)
        w[9] = 1.0  # everything in bin [2.25, 2.5]
        s = sample_ray(RAY, spec(SamplerKind.IMPORTANCE, 16, n_importance=64, seed=4),
                       prev_weights=w, prev_samples=coarse)
        new = np.setdiff1d(s.t_mids, coarse.t_mids)
        lo, hi = 2.25 - 0.125, 2.25 + 0.25 + 0.125  # bin plus half-bin slack
        frac = np.mean((new >= lo) & (new <= hi))
        assert frac >= 0.9

    def test_zero_weights_fall_back_to_uniform(self):
        coarse = self._coarse(8)
        s = sample_ray(RAY, spec(SamplerKind.IMPORTANCE, 8, n_importance=8, seed=4),
                       prev_weights=np.zeros(8), prev_samples=coarse)
        np.testing.assert_allclose(s.intervals, 0.25)

    def test_merged_samples_sorted_and_partitioned(self):
        coarse = self._coarse()
        rng = np.random.default_rng(0)
        w = rng.uniform(0, 1, 16)
        s = sample_ray(RAY, spec(SamplerKind.IMPORTANCE, 16, n_importance=32, seed=5),
                       prev_weights=w, prev_samples=coarse)
        assert np.all(np.diff(s.t_mids) > 0)
        np.testing.assert_allclose(s.intervals.sum(), 4.0, atol=1e-9)

    def test_requires_coarse_pass(self):
        with pytest.raises(DomainError):
            sample_ray(RAY, spec(SamplerKind.IMPORTANCE, 8, n_importance=8))

    def test_inverse_cdf_respects_bins(self):
        edges = np.array([0.0, 1.0, 2.0, 4.0])
        w = np.array([1.0, 0.0, 1.0])
        u = np.linspace(0.001, 0.999, 1000)
        t = sample_pdf_bins(edges, w, len(u), u)
        in_dead_bin = np.mean((t > 1.0) & (t < 2.0))
        assert in_dead_bin < 0.01


class TestBatchSampling:
    def test_matches_single_ray_uniform(self):
        t, d = sample_rays_batch(3, 0.0, 4.0, spec(SamplerKind.UNIFORM, 4))
        np.testing.assert_allclose(t[1], [0.5, 1.5, 2.5, 3.5])
        np.testing.assert_allclose(d, 1.0)

    def test_stratified_rows_differ(self):
        t, d = sample_rays_batch(4, 0.0, 4.0, spec(SamplerKind.STRATIFIED, 16, seed=2))
        assert t.shape == (4, 16) and d.shape == (4, 16)
        assert np.any(t[0] != t[1])
        np.testing.assert_allclose(d.sum(axis=1), 4.0, atol=1e-9)


class TestContract:
    def test_identity_inside_unit_ball(self):
        p = np.array([0.5, 0.0, 0.0])
        np.testing.assert_array_equal(contract(p), p)

    def test_known_value(self):
        np.testing.assert_allclose(contract(np.array([3.0, 0.0, 0.0])),
                                   [5.0 / 3.0, 0.0, 0.0], rtol=1e-12)

    def test_norm_approaches_two(self):
        p = np.array([1e6, 0.0, 0.0])
        nrm = np.linalg.norm(contract(p))
        assert nrm < 2.0
        np.testing.assert_allclose(nrm, 2.0 - 1e-6, rtol=1e-9)

    def test_continuous_at_unit_sphere(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            inner = contract(u * (1 - 1e-9))
            outer = contract(u * (1 + 1e-9))
            assert np.linalg.norm(outer - inner) < 1e-8

    def test_injective_on_radial_lines(self):
        r = np.linspace(0.2, 50, 500)
        mapped = contract(np.column_stack([r, np.zeros_like(r), np.zeros_like(r)]))
        assert np.all(np.diff(mapped[:, 0]) > 0)
        assert mapped[:, 0].max() < 2.0

    def test_batch_shapes(self):
        pts = np.random.default_rng(7).normal(size=(10, 5, 3)) * 3
        out = contract(pts)
        assert out.shape == pts.shape
        assert np.all(np.linalg.norm(out, axis=-1) < 2.0)


class TestSamplerSpec:
    def test_from_dict_defaults(self):
        s = SamplerSpec.from_dict({})
        assert s.kind is SamplerKind.STRATIFIED and s.n_samples == 64
        assert s.contraction is Contraction.NONE

    def test_from_dict_rejects_bad_counts(self):
        with pytest.raises(Exception):
            SamplerSpec.from_dict({"n_samples": 0})
        with pytest.raises(Exception):
            SamplerSpec.from_dict({"n_samples": "many"})

    def test_fixed_sample_count_is_scale_free(self):
        """The sampler never sees k: the same spec samples any extent."""
        s1 = sample_ray(Ray([0, 0, 0], [0, 0, 1.0], 2.0, 6.0), spec(SamplerKind.UNIFORM, 8))
        s2 = sample_ray(Ray([0, 0, 0], [0, 0, 1.0], 20.0, 60.0), spec(SamplerKind.UNIFORM, 8))
        assert len(s1) == len(s2) == 8
        np.testing.assert_allclose(s2.t_mids, 10.0 * s1.t_mids, rtol=1e-12)
