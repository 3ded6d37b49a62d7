"""Deterministic augmentations: group laws, Jacobians, crop gradients."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssdistill import tensor as T
from ssdistill.augment import (CORNERS, JIGSAWS, AugmentationSpec, Transform, apply,
                               crop_side_for, expand_batch)
from ssdistill.errors import ContractError
from ssdistill.tensor import Tensor


def run(t, x):
    with T.no_grad():
        return apply(t, x).data


def jacobian(t, side):
    """Dense Jacobian from unit-impulse probes on a side x side image."""
    d = side * side
    basis = np.eye(d).reshape(d, 1, side, side)
    return run(t, basis).reshape(d, d).T


def index_oracle(t, side):
    """Where pixel (i, j) lands, written out with plain index arithmetic."""
    h = side // 2
    idx = np.arange(side * side).reshape(side, side)
    if t.kind == "rotate":
        return np.rot90(idx, t.param // 90)
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    if t.param in ("left_right", "both"):
        cols = (cols - h) % side
    if t.param in ("top_bottom", "both"):
        rows = (rows - h) % side
    return idx[rows, cols]


PERMS = [Transform("rotate", r) for r in (90, 180, 270)] + [Transform("jigsaw", j) for j in JIGSAWS]


class TestGroupLaws:
    x = np.random.default_rng(0).standard_normal((3, 2, 6, 6))

    def test_rotate90_fourth_power_is_identity(self):
        y = self.x
        for _ in range(4):
            y = run(Transform("rotate", 90), y)
        assert np.array_equal(y, self.x)

    def test_rotate180_squared_is_identity(self):
        t = Transform("rotate", 180)
        assert np.array_equal(run(t, run(t, self.x)), self.x)

    @pytest.mark.parametrize("swap", JIGSAWS)
    def test_jigsaw_is_involution(self, swap):
        t = Transform("jigsaw", swap)
        assert np.array_equal(run(t, run(t, self.x)), self.x)

    def test_rotation_composition(self):
        a = run(Transform("rotate", 90), run(Transform("rotate", 180), self.x))
        assert np.array_equal(a, run(Transform("rotate", 270), self.x))

    def test_rotate180_hand_case(self):
        img = np.array([[1.0, 2], [3, 4]]).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(run(Transform("rotate", 180), img)[0, 0], [[4, 3], [2, 1]])

    def test_rotate90_is_counter_clockwise(self):
        img = np.arange(4.0).reshape(1, 1, 2, 2)  # [[0, 1], [2, 3]]
        np.testing.assert_array_equal(run(Transform("rotate", 90), img)[0, 0], [[1, 3], [0, 2]])


class TestPermutationJacobians:
    @pytest.mark.parametrize("t", PERMS, ids=lambda t: t.tag)
    def test_is_permutation_matching_oracle(self, t):
        jac = jacobian(t, 4)
        assert set(np.unique(jac)) == {0.0, 1.0}
        np.testing.assert_array_equal(jac.sum(0), 1.0)
        np.testing.assert_array_equal(jac.sum(1), 1.0)
        expected = np.zeros((16, 16))
        expected[np.arange(16), index_oracle(t, 4).ravel()] = 1.0
        np.testing.assert_array_equal(jac, expected)

    @pytest.mark.parametrize("t", PERMS, ids=lambda t: t.tag)
    def test_backward_is_transpose(self, t):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
        g = rng.standard_normal((1, 1, 4, 4))
        (apply(t, x) * g).sum().backward()
        np.testing.assert_array_equal(x.grad.ravel(), jacobian(t, 4).T @ g.ravel())

    def test_sum_preserved(self):
        x = np.random.default_rng(2).uniform(size=(2, 1, 4, 4))
        for t in PERMS:
            assert run(t, x).sum() == pytest.approx(x.sum(), rel=1e-14)


class TestCrop:
    @pytest.mark.parametrize("corner", CORNERS)
    def test_gradient(self, corner):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
        w = rng.standard_normal((2, 1, 8, 8))
        t = Transform("crop", corner, 5)
        assert T.gradcheck(lambda: (apply(t, x) * w).sum(), [x]) <= 1e-5

    def test_full_side_crop_is_identity(self):
        x = np.random.default_rng(4).standard_normal((1, 1, 6, 6))
        np.testing.assert_allclose(run(Transform("crop", "top_left", 6), x), x, atol=1e-14)

    def test_constant_image_stays_constant(self):
        x = np.full((1, 1, 16, 16), 0.7)
        out = run(Transform("crop", "center", crop_side_for(16)), x)
        np.testing.assert_allclose(out, 0.7, atol=1e-14)

    def test_top_left_reads_top_left(self):
        x = np.zeros((1, 1, 8, 8))
        x[..., :4, :4] = 1.0
        out = run(Transform("crop", "top_left", 4), x)
        np.testing.assert_allclose(out, 1.0)

    def test_crop_side_scaling(self):
        assert crop_side_for(32) == 20
        assert crop_side_for(16) == 10


class TestSpec:
    def test_named_families(self):
        assert len(AugmentationSpec.named("rotation", 16)) == 3
        assert len(AugmentationSpec.named("jigsaw", 16)) == 3
        assert len(AugmentationSpec.named("crop", 16)) == 5
        assert len(AugmentationSpec.named("none", 16)) == 0

    def test_tags_round_trip(self):
        spec = AugmentationSpec.named("crop", 16)
        assert AugmentationSpec.from_tags(spec.tags) == spec

    def test_expand_batch_order(self):
        x = np.random.default_rng(5).standard_normal((2, 1, 4, 4))
        spec = AugmentationSpec.rotations()
        with T.no_grad():
            out = expand_batch(x, spec).data
        assert out.shape == (8, 1, 4, 4)
        np.testing.assert_array_equal(out[:2], x)
        for a, t in enumerate(spec.transforms, 1):
            np.testing.assert_array_equal(out[2 * a : 2 * a + 2], run(t, x))

    @pytest.mark.parametrize("family", ["rotation", "jigsaw"])
    def test_expand_batch_gradient_counts_copies(self, family):
        x = Tensor(np.random.default_rng(6).standard_normal((2, 1, 4, 4)), requires_grad=True)
        expand_batch(x, AugmentationSpec.named(family, 4)).sum().backward()
        np.testing.assert_array_equal(x.grad, 4.0)

    def test_expand_batch_crop_gradient(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
        w = rng.standard_normal((12, 1, 8, 8))
        spec = AugmentationSpec.crops(8)
        assert T.gradcheck(lambda: (expand_batch(x, spec) * w).sum(), [x]) <= 1e-5

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            apply(Transform("rotate", 45), np.zeros((1, 1, 4, 4)))
        with pytest.raises(ContractError):
            apply(Transform("rotate", 90), np.zeros((1, 1, 4, 6)))
        with pytest.raises(ContractError):
            apply(Transform("jigsaw", "both"), np.zeros((1, 1, 5, 5)))
        with pytest.raises(ContractError):
            apply(Transform("crop", "center", 9), np.zeros((1, 1, 8, 8)))
        with pytest.raises(ContractError):
            Transform.from_tag("shear:10")
        with pytest.raises(ContractError):
            AugmentationSpec.named("mixup", 16)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(PERMS), st.integers(1, 4).map(lambda k: 2 * k), st.integers(0, 2**31 - 1))
def test_permutations_are_invertible(t, side, seed):
    x = np.random.default_rng(seed).standard_normal((2, 1, side, side))
    y = run(t, x)
    # apply until back at the start; rotations have order <= 4, jigsaws order 2
    for _ in range(3):
        if np.array_equal(y, x):
            break
        y = run(t, y)
    assert np.array_equal(y, x)
