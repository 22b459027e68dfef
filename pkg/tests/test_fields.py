"""Toy fields: initialization statistics, queries, gradients, checkpoints."""

import numpy as np
import pytest

import alphainv as ai
from alphainv.activations import ActivationConfig, ActivationKind
from alphainv.errors import CapabilityError, DomainError
from alphainv.fields import (
    Bounds, FieldKind, backward, backward_many, init_field, load_field,
    measure_raw_stats, param_count, query, query_many, save_field,
    scale_field_density,
)

UNIT = Bounds([-1, -1, -1], [1, 1, 1])


class TestInitField:
    def test_constant_is_all_zero(self):
        f = init_field(FieldKind.CONSTANT, {}, UNIT, 0.0, seed=0)
        np.testing.assert_array_equal(f.params, np.zeros(4))
        mu, tau = measure_raw_stats(f, n_samples=1000, seed=1)
        assert mu == 0.0 and tau == 0.0

    def test_constant_rejects_nonzero_tau(self):
        with pytest.raises(DomainError):
            init_field(FieldKind.CONSTANT, {}, UNIT, 0.5, seed=0)

    def test_voxel_measured_tau(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 16}, UNIT, 1.0, seed=7)
        mu, tau = measure_raw_stats(f, n_samples=100_000, seed=2)
        assert abs(mu) < 0.05
        assert 0.9 <= tau <= 1.1

    def test_mlp_measured_stats(self):
        f = init_field(FieldKind.TINY_MLP, {"widths": [3, 32, 32, 4]}, UNIT, 1.0, seed=5)
        mu, tau = measure_raw_stats(f, n_samples=100_000, seed=3)
        assert -0.05 <= mu <= 0.05
        assert 0.9 <= tau <= 1.1

    def test_mlp_tau_zero_gives_degenerate_head(self):
        f = init_field(FieldKind.TINY_MLP, {"widths": [3, 16, 16, 4]}, UNIT, 0.0, seed=5)
        raw, _ = query_many(f, UNIT.sample_uniform(np.random.default_rng(0), 500))
        np.testing.assert_array_equal(raw, np.zeros(500))

    def test_determinism(self):
        for kind, meta, tau in [(FieldKind.VOXEL_GRID, {"resolution": 8}, 0.7),
                                (FieldKind.TINY_MLP, {"widths": [3, 16, 16, 4]}, 0.7)]:
            a = init_field(kind, meta, UNIT, tau, seed=42)
            b = init_field(kind, meta, UNIT, tau, seed=42)
            np.testing.assert_array_equal(a.params, b.params)

    def test_param_counts(self):
        assert param_count(FieldKind.CONSTANT, {}) == 4
        assert param_count(FieldKind.VOXEL_GRID, {"resolution": 16}) == 4 * 16 ** 3
        # (3->8) + (8->8) + (8->4) weights and biases
        assert param_count(FieldKind.TINY_MLP, {"widths": [3, 8, 8, 4]}) == \
            (8 * 3 + 8) + (8 * 8 + 8) + (4 * 8 + 4)


class TestQuery:
    def test_constant_grid_interpolates_to_constant(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 8}, UNIT, 0.0, seed=0)
        f.params[: 8 ** 3] = 3.25
        raw, _ = query_many(f, UNIT.sample_uniform(np.random.default_rng(1), 1000))
        np.testing.assert_allclose(raw, 3.25, rtol=1e-12)

    def test_exact_node_value(self):
        r = 5
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": r}, UNIT, 0.4, seed=3)
        dens = f.params[: r ** 3].reshape(r, r, r)
        axes = np.linspace(-1, 1, r)
        for (i, j, k) in [(0, 0, 0), (2, 3, 1), (4, 4, 4)]:
            raw, _ = query(f, [axes[i], axes[j], axes[k]])
            np.testing.assert_allclose(raw, dens[i, j, k], atol=1e-12)

    def test_cell_center_is_corner_mean(self):
        r = 3
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": r}, UNIT, 0.9, seed=4)
        dens = f.params[: r ** 3].reshape(r, r, r)
        axes = np.linspace(-1, 1, r)
        center = [(axes[0] + axes[1]) / 2] * 3
        raw, _ = query(f, center)
        np.testing.assert_allclose(raw, dens[:2, :2, :2].mean(), atol=1e-12)

    def test_out_of_bounds_sentinel(self):
        for kind, meta in [(FieldKind.CONSTANT, {}),
                           (FieldKind.VOXEL_GRID, {"resolution": 4}),
                           (FieldKind.TINY_MLP, {"widths": [3, 8, 8, 4]})]:
            f = init_field(kind, meta, UNIT, 0.0, seed=0)
            raw, logits = query(f, [0.0, 0.0, 1.5])
            assert raw == -np.inf
            np.testing.assert_array_equal(logits, np.zeros(3))

    def test_query_continuity(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 16}, UNIT, 1.0, seed=6)
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.99, 0.99, (500, 3))
        eps = 1e-6
        raw0, _ = query_many(f, pts)
        raw1, _ = query_many(f, pts + eps)
        # Lipschitz constant ~ max node gap / cell size
        c = 2 * np.abs(f.params[: 16 ** 3]).max() / (2.0 / 15)
        assert np.max(np.abs(raw1 - raw0)) <= c * eps * np.sqrt(3)

    def test_non_finite_position_rejected(self):
        f = init_field(FieldKind.CONSTANT, {}, UNIT, 0.0, seed=0)
        with pytest.raises(DomainError):
            query(f, [0.0, np.nan, 0.0])


class TestBackward:
    def test_voxel_corner_gradient_is_trilinear_weight(self):
        r = 4
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": r}, UNIT, 0.3, seed=8)
        p = np.array([0.15, -0.42, 0.73])
        g = backward(f, p, 1.0, np.zeros(3))
        # gradient of a linear interpolation: weights sum to 1, and a direct
        # finite difference on any touched corner matches exactly
        gd = g[: r ** 3]
        np.testing.assert_allclose(gd.sum(), 1.0, rtol=1e-12)
        idx = int(np.argmax(gd))
        h = 1e-6
        f2 = f.copy()
        f2.params[idx] += h
        np.testing.assert_allclose((query(f2, p)[0] - query(f, p)[0]) / h, gd[idx],
                                   rtol=1e-6)

    def test_mlp_gradient_matches_finite_differences(self):
        f = init_field(FieldKind.TINY_MLP, {"widths": [3, 10, 10, 4]}, UNIT, 0.8, seed=9)
        rng = np.random.default_rng(10)
        pts = rng.uniform(-0.9, 0.9, (20, 3))
        d_raw = rng.normal(size=20)
        d_logits = rng.normal(size=(20, 3))
        g = backward_many(f, pts, d_raw, d_logits)

        def scalar(fld):
            raw, logits = query_many(fld, pts)
            return float((raw * d_raw).sum() + (logits * d_logits).sum())

        h = 1e-6
        fd = np.zeros_like(g)
        f2 = f.copy()
        for j in range(f2.params.size):
            orig = f2.params[j]
            f2.params[j] = orig + h
            up = scalar(f2)
            f2.params[j] = orig - h
            dn = scalar(f2)
            f2.params[j] = orig
            fd[j] = (up - dn) / (2 * h)
        assert np.max(np.abs(g - fd)) / max(np.abs(fd).max(), 1e-12) < 1e-5

    def test_zero_upstream_gives_zero_gradient(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 4}, UNIT, 0.3, seed=1)
        g = backward(f, [0.1, 0.1, 0.1], 0.0, np.zeros(3))
        np.testing.assert_array_equal(g, np.zeros_like(f.params))

    def test_out_of_bounds_contributes_nothing(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 4}, UNIT, 0.3, seed=1)
        g = backward(f, [0.0, 0.0, 2.0], 5.0, np.ones(3))
        np.testing.assert_array_equal(g, np.zeros_like(f.params))


class TestScaleFieldDensity:
    def test_identity_at_k_one(self):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 4}, UNIT, 0.5, seed=2)
        g = scale_field_density(f, 1.0, ActivationConfig(ActivationKind.EXP))
        np.testing.assert_array_equal(g.params, f.params)

    @pytest.mark.parametrize("kind,meta", [
        (FieldKind.CONSTANT, {}),
        (FieldKind.VOXEL_GRID, {"resolution": 6}),
        (FieldKind.TINY_MLP, {"widths": [3, 12, 12, 4]}),
    ])
    def test_exp_density_scales_by_inverse_k(self, kind, meta):
        tau = 0.0 if kind is FieldKind.CONSTANT else 0.6
        f = init_field(kind, meta, UNIT, tau, seed=3)
        act = ActivationConfig(ActivationKind.EXP)
        scaled = scale_field_density(f, 10.0, act)
        pts = UNIT.sample_uniform(np.random.default_rng(4), 200)
        raw0, logits0 = query_many(f, pts)
        raw1, logits1 = query_many(scaled, pts)
        np.testing.assert_allclose(np.exp(raw1), np.exp(raw0) / 10.0, rtol=1e-12)
        np.testing.assert_array_equal(logits0, logits1)  # colors untouched

    @pytest.mark.parametrize("kind", [ActivationKind.RELU, ActivationKind.SOFTPLUS])
    def test_no_exact_transform_for_non_exp(self, kind):
        f = init_field(FieldKind.VOXEL_GRID, {"resolution": 4}, UNIT, 0.5, seed=2)
        with pytest.raises(CapabilityError):
            scale_field_density(f, 2.0, ActivationConfig(kind))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        for kind, meta, tau in [(FieldKind.CONSTANT, {}, 0.0),
                                (FieldKind.VOXEL_GRID, {"resolution": 6}, 0.5),
                                (FieldKind.TINY_MLP, {"widths": [3, 8, 8, 4]}, 0.5)]:
            f = init_field(kind, meta, Bounds([-2, -1, 0], [1, 2, 3]), tau, seed=11)
            path = tmp_path / f"{kind.name}.fld"
            save_field(f, path)
            g = load_field(path)
            assert g.kind == f.kind
            np.testing.assert_array_equal(g.params, f.params)
            np.testing.assert_array_equal(g.bounds.lo, f.bounds.lo)
            np.testing.assert_array_equal(g.bounds.hi, f.bounds.hi)

    def test_magic_bytes(self, tmp_path):
        f = init_field(FieldKind.CONSTANT, {}, UNIT, 0.0, seed=0)
        path = tmp_path / "c.fld"
        save_field(f, path)
        blob = path.read_bytes()
        assert blob[:16] == b"ALPHAINV-FLD\x00\x00\x00\x00"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.fld"
        path.write_bytes(b"NOT-A-CHECKPOINT" + b"\x00" * 64)
        with pytest.raises(DomainError):
            load_field(path)


class TestBounds:
    def test_degenerate_extent_rejected(self):
        with pytest.raises(DomainError):
            Bounds([0, 0, 0], [1, 0, 1])

    def test_contains_is_inclusive(self):
        assert UNIT.contains(np.array([1.0, -1.0, 0.0]))
        assert not UNIT.contains(np.array([1.0 + 1e-12, 0.0, 0.0]))
