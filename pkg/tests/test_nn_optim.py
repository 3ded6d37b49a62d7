"""Optimisers, model building blocks, and the Barlow Twins objective."""

import numpy as np
import pytest

from ssdistill import tensor as T
from ssdistill.data import make_blobs_images
from ssdistill.errors import ContractError
from ssdistill.nn import (ConvNetExtractor, MLPExtractor, build_extractor, build_regressor,
                          extract_features)
from ssdistill.optim import AdamW, OptimizerState, adamw_step, schedule, sgd_step
from ssdistill.teacher import TeacherConfig, TeacherModel, barlow_twins_loss, train_teacher
from ssdistill.tensor import Tensor


class TestOptimizers:
    def test_sgd_single_step(self):
        p = np.array([0.0])
        sgd_step([p], [np.array([1.0])], OptimizerState("sgd"), lr=0.1)
        np.testing.assert_allclose(p, [-0.1])

    def test_momentum_recurrence(self):
        p = np.array([0.0])
        state = OptimizerState("sgd")
        sgd_step([p], [np.array([1.0])], state, lr=0.1, momentum=0.9)
        before = p.copy()
        sgd_step([p], [np.array([1.0])], state, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(before - p, [1.9 * 0.1])

    def test_adamw_decay_only(self):
        p = np.array([2.0, -3.0])
        adamw_step([p], [np.zeros(2)], OptimizerState("adamw"), lr=1e-3, weight_decay=0.01)
        np.testing.assert_allclose(p, np.array([2.0, -3.0]) * (1 - 1e-5), rtol=0, atol=1e-15)

    def test_adamw_first_step_is_sign_times_lr(self):
        p = np.array([0.0, 0.0])
        adamw_step([p], [np.array([3.0, -0.5])], OptimizerState("adamw"), lr=1e-2, weight_decay=0.0)
        np.testing.assert_allclose(p, [-1e-2, 1e-2], rtol=1e-6)

    def test_buffers_mirror_parameters(self):
        params = [np.zeros((2, 3)), np.zeros(4)]
        state = OptimizerState("adamw")
        adamw_step(params, [np.ones((2, 3)), np.ones(4)], state, lr=1e-3)
        assert [b.shape for b in state.buffers["exp_avg"]] == [(2, 3), (4,)]

    def test_schedules(self):
        assert schedule("constant", 0.1, 5, 10) == 0.1
        assert schedule("linear", 1e-3, 0, 10) == 1e-3
        assert schedule("linear", 1e-3, 9, 10) == 0.0
        assert schedule("cosine", 0.2, 0, 10) == pytest.approx(0.2)
        assert schedule("cosine", 0.2, 9, 10) == pytest.approx(0.0, abs=1e-15)
        lin = [schedule("linear", 1.0, t, 10) for t in range(10)]
        assert all(a > b for a, b in zip(lin, lin[1:]))

    def test_optimizer_class_reads_tensor_grads(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = AdamW([w], lr=0.1, weight_decay=0.0)
        (w * w).sum().backward()
        opt.step()
        assert np.all(w.data < np.array([1.0, 2.0]))


class TestExtractors:
    def test_convnet_output_dim(self):
        rng = np.random.default_rng(0)
        net = ConvNetExtractor(1, 16, width=8, depth=3, rng=rng)
        out = net(rng.standard_normal((4, 1, 16, 16)))
        assert out.shape == (4, net.feature_dim) == (4, 8 * 2 * 2)
        assert ConvNetExtractor.output_dim(32, 3, 32) == 32 * 4 * 4

    def test_mlp_matches_convnet_feature_dim(self):
        rng = np.random.default_rng(0)
        mlp = build_extractor("mlp", (1, 16, 16), rng, width=16, depth=3)
        conv = build_extractor("convnet", (1, 16, 16), rng, width=16, depth=3)
        assert mlp.feature_dim == conv.feature_dim
        assert isinstance(mlp, MLPExtractor)

    def test_permutation_equivariance_in_batch_mode(self):
        rng = np.random.default_rng(1)
        net = ConvNetExtractor(1, 8, width=4, depth=2, rng=rng)
        x = rng.standard_normal((6, 1, 8, 8))
        perm = rng.permutation(6)
        with T.no_grad():
            a = net(x).data
            b = net(x[perm]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_regressor_gradient_on_two_layer_toy(self):
        rng = np.random.default_rng(2)
        model = build_regressor("mlp", (1, 4, 4), 3, rng, width=2, depth=2)
        x = rng.standard_normal((5, 1, 4, 4))
        y = rng.standard_normal((5, 3))
        assert T.gradcheck(lambda: T.mse(model(x), y), model.parameters()) <= 1e-5

    def test_state_dict_round_trip_includes_running_stats(self):
        rng = np.random.default_rng(3)
        a = TeacherModel((1, 8, 8), d_y=4, width=4, depth=2, rng=rng)
        a(rng.standard_normal((5, 1, 8, 8)))  # updates running statistics
        state = a.state_dict()
        assert any(k.endswith("running_mean") for k in state)
        b = TeacherModel((1, 8, 8), d_y=4, width=4, depth=2, rng=np.random.default_rng(9))
        b.load_state_dict(state)
        a.freeze(), b.freeze()
        x = rng.standard_normal((3, 1, 8, 8))
        np.testing.assert_array_equal(a.represent(x), b.represent(x))

    def test_extract_features_chunks_are_balanced(self):
        rng = np.random.default_rng(4)
        net = ConvNetExtractor(1, 8, width=4, depth=2, rng=rng)
        # 1001 rows with chunk 1000 must not leave a batch of one for batchnorm
        assert extract_features(net, rng.standard_normal((1001, 1, 8, 8)), chunk=1000).shape == (1001, 16)


class TestBarlowTwins:
    def test_identical_orthogonal_columns_give_zero(self):
        # +-1 Hadamard-like columns: standardised, orthogonal across the batch
        z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        assert barlow_twins_loss(z, z).item() == pytest.approx(0.0, abs=1e-10)

    def test_identical_views_leave_only_off_diagonal_term(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((50, 3))
        zn = (z - z.mean(0)) / z.std(0)
        c = zn.T @ zn / 50
        off = (c**2).sum() - (np.diag(c) ** 2).sum()
        assert barlow_twins_loss(z, z, off_diag_weight=0.3).item() == pytest.approx(0.3 * off, rel=1e-8)

    def test_independent_views_monte_carlo(self):
        rng = np.random.default_rng(1)
        z1, z2 = rng.standard_normal((1000, 2)), rng.standard_normal((1000, 2))
        assert abs(barlow_twins_loss(z1, z2).item() - 2.0) <= 0.2

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        z1, z2 = rng.standard_normal((20, 4)), rng.standard_normal((20, 4))
        scale, shift = rng.uniform(0.5, 3, 4), rng.standard_normal(4)
        a = barlow_twins_loss(z1, z2).item()
        b = barlow_twins_loss(z1 * scale + shift, z2 * scale[::-1] - shift).item()
        assert a == pytest.approx(b, abs=1e-8)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        z1 = Tensor(rng.standard_normal((8, 3)), requires_grad=True)
        z2 = Tensor(rng.standard_normal((8, 3)), requires_grad=True)
        assert T.gradcheck(lambda: barlow_twins_loss(z1, z2, 0.1), [z1, z2]) <= 1e-5

    def test_batch_of_one_rejected(self):
        with pytest.raises(ContractError):
            barlow_twins_loss(np.ones((1, 3)), np.ones((1, 3)))


class TestTeacherTraining:
    def small(self, **kw):
        return TeacherConfig(epochs=2, batch_size=32, d_y=8, width=4, depth=2, pad=1, **kw)

    def images(self):
        return make_blobs_images(n_train=64, n_test=4, size=8, seed=0).train_x

    def test_smoke_loss_decreases(self):
        _, losses = train_teacher(self.images(), self.small())
        assert losses[-1] < losses[0]

    def test_output_dimension(self):
        teacher, _ = train_teacher(self.images(), TeacherConfig(epochs=1, batch_size=16, d_y=16,
                                                                width=4, depth=2))
        assert teacher.represent(self.images()[:5]).shape == (5, 16)

    def test_determinism_and_freeze(self):
        a, _ = train_teacher(self.images(), self.small())
        b, _ = train_teacher(self.images(), self.small())
        for (ka, va), (kb, vb) in zip(sorted(a.state_dict().items()), sorted(b.state_dict().items())):
            assert ka == kb and np.array_equal(va, vb)
        assert a.frozen and not any(p.requires_grad for p in a.parameters())
        x = self.images()[:7]
        # frozen teacher uses running statistics, so a row's output is batch-independent
        np.testing.assert_allclose(a.represent(x)[:3], a.represent(x[:3]), atol=1e-12)
