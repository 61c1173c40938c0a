import itertools
import math

import numpy as np
import pytest

from partialda import diffcore as dc
from partialda import losses as L
from partialda.diffcore import Tensor
from partialda.networks import build_model


def centers(rows, classes=None):
    rows = np.asarray(rows, dtype=float)
    classes = tuple(range(len(rows))) if classes is None else tuple(classes)
    return L.Centers(classes, Tensor(rows))


def no_centers(width=2):
    return L.Centers((), Tensor(np.zeros((0, width))))


class TestClassification:
    def test_perfect_predictions(self):
        probs = Tensor(np.eye(3))
        assert L.classification_loss(probs, np.arange(3), np.array([1.0, 0.3, 0.5])).item() == 0.0

    def test_half_probability(self):
        out = L.classification_loss(Tensor([[0.5, 0.5]]), np.array([0]), np.ones(2))
        assert out.item() == pytest.approx(math.log(2), abs=1e-15)

    def test_zero_weight(self):
        out = L.classification_loss(Tensor([[0.5, 0.5]]), np.array([1]), np.array([1.0, 0.0]))
        assert out.item() == 0.0

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            L.classification_loss(Tensor([[0.5, 0.5]]), np.array([2]), np.ones(2))

    def test_clamps_zero_probability(self):
        out = L.classification_loss(Tensor([[0.0, 1.0]]), np.array([0]), np.ones(2))
        assert out.item() == pytest.approx(-math.log(1e-12))


class TestAdversarial:
    def test_half_everywhere(self):
        out = L.adversarial_loss(Tensor([0.5]), Tensor([0.5]), np.array([0]), np.ones(1))
        assert out.item() == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_zero_weight_source(self):
        out = L.adversarial_loss(Tensor([0.5, 0.9]), Tensor([0.5]), np.array([0, 0]), np.zeros(1))
        assert out.item() == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_discriminator(self):
        out = L.adversarial_loss(Tensor([1 - 1e-15]), Tensor([1e-15]), np.array([0]), np.ones(1))
        assert out.item() < 1e-12

    def test_printed_form(self):
        out = L.adversarial_loss(Tensor([0.5]), Tensor([0.5]), np.array([0]), np.ones(1), form="printed")
        # -(log 0.5 + 1 - log 0.5) = -1
        assert out.item() == pytest.approx(-1.0, abs=1e-15)

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            L.adversarial_loss(Tensor([0.5]), Tensor([0.5]), np.array([0]), np.ones(1), form="mse")


class TestLinearityInWeights:
    def test_doubling(self):
        rng = np.random.default_rng(0)
        probs = Tensor(rng.dirichlet(np.ones(3), size=6))
        y = np.array([0, 1, 2, 0, 1, 2])
        W = rng.uniform(0.1, 1.0, 3)
        one = L.classification_loss(probs, y, W).item()
        two = L.classification_loss(probs, y, 2 * W).item()
        assert two == 2 * one
        d_s = Tensor(rng.uniform(0.1, 0.9, 6))
        zero_t = Tensor(np.zeros(2))
        src_one = L.adversarial_loss(d_s, zero_t, y, W).item()
        src_two = L.adversarial_loss(d_s, zero_t, y, 2 * W).item()
        assert src_two == pytest.approx(2 * src_one, rel=1e-15)


class TestBetweenClass:
    def test_three_four_five(self):
        out = L.between_class_loss(centers([[0, 0], [3, 4]]), no_centers(), alpha=1.0, beta=0.0)
        assert out.item() == pytest.approx(-5.0, abs=1e-15)

    def test_coincident_centers(self):
        out = L.between_class_loss(centers([[1, 1], [1, 1]]), centers([[1, 1], [1, 1]]), 1.0, 1.0)
        assert out.item() == 0.0

    def test_single_target_class_is_degenerate(self):
        src = centers([[0, 0], [3, 4]])
        with_one = L.between_class_loss(src, centers([[10, 10]], classes=(1,)), 1.0, 1.0).item()
        assert with_one == L.between_class_loss(src, no_centers(), 1.0, 1.0).item() == -5.0

    def test_switched_off(self):
        out = L.between_class_loss(centers([[0, 0], [3, 4]]), centers([[0, 0], [3, 4]]), 0.0, 0.0)
        assert out.item() == 0.0 and not out.requires_grad

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        ms, mt = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
        cls_t = (0, 2, 3)
        a, b = 0.3, 0.8
        d = lambda u, v: math.sqrt(sum((x - y) ** 2 for x, y in zip(u, v)))  # noqa: E731
        within_s = sum(d(ms[i], ms[j]) for i, j in itertools.permutations(range(4), 2)) / 12
        within_t = sum(d(mt[i], mt[j]) for i, j in itertools.permutations(range(3), 2)) / 6
        cross = sum(d(ms[c], mt[k]) for (k0, c), (k, _) in itertools.permutations(enumerate(cls_t), 2)
                    if k0 != k) / 6
        expected = -(a * (within_s + within_t) + b * cross)
        got = L.between_class_loss(centers(ms), centers(mt, cls_t), a, b).item()
        assert got == pytest.approx(expected, abs=1e-13)
        assert got <= 0.0


class TestWithinClass:
    def brute(self, z, labels, k):
        total = 0.0
        for c in range(k):
            rows = [z[i] for i in range(len(z)) if labels[i] == c]
            n = len(rows)
            if n < 2:
                continue
            s = sum(float(np.sum((rows[i] - rows[j]) ** 2)) for i in range(n) for j in range(n) if i != j)
            total += s / (n * (n - 1))
        return total / k

    def test_three_four_five(self):
        out = L.within_class_loss(Tensor([[0.0, 0.0], [3.0, 4.0]]), np.array([0, 0]), 1)
        assert out.item() == pytest.approx(25.0, abs=1e-13)

    def test_identical_latents(self):
        assert L.within_class_loss(Tensor(np.ones((3, 2))), np.array([0, 0, 0]), 2).item() == 0.0

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(7, 3))
        y = np.array([0, 0, 1, 1, 1, 2, 0])
        one = L.within_class_loss(Tensor(z), y, 3).item()
        assert L.within_class_loss(Tensor(2 * z), y, 3).item() == pytest.approx(4 * one, rel=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(12, 4))
        y = rng.integers(0, 4, 12)
        got = L.within_class_loss(Tensor(z), y, 4).item()
        assert got == pytest.approx(self.brute(z, y, 4), rel=1e-12)
        assert got >= 0.0

    def test_singletons_contribute_nothing(self):
        assert L.within_class_loss(Tensor([[1.0], [5.0]]), np.array([0, 1]), 2).item() == 0.0


class TestEntropy:
    def test_one_hot(self):
        assert L.entropy_loss(Tensor(np.eye(3))).item() == 0.0

    def test_uniform_over_four(self):
        assert L.entropy_loss(Tensor(np.full((2, 4), 0.25))).item() == pytest.approx(math.log(4), abs=1e-15)

    def test_two_way(self):
        assert L.entropy_loss(Tensor([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-15)


def random_batch(seed, K=3, d=4):
    rng = np.random.default_rng(seed)
    x_s, x_t = rng.normal(size=(8, d)), rng.normal(size=(6, d))
    y_s = np.concatenate([np.arange(K), rng.integers(0, K, 8 - K)])
    conf = np.array([0, 1, -1, 2, -1, 1])
    W = rng.uniform(0.2, 1.0, K)
    return L.Batch(x_s, y_s, x_t, conf), W / W.max()


class TestTotal:
    @pytest.mark.parametrize("seed", range(5))
    def test_breakdown_identity(self, seed):
        batch, W = random_batch(seed)
        model = build_model(4, 3, hidden=(6,), bottleneck=3, disc_hidden=(4,), bottleneck_head="tanh", seed=seed)
        hp = dict(alpha=0.2, beta=0.9, gamma=0.7, eta=0.37)
        bd = L.total_objective(batch, model, W, **hp)
        # recompute every piece from the networks' outputs, outside the objective
        z_s, z_t = model.F(batch.x_s).data, model.F(batch.x_t).data
        p_s, p_t = model.G_y(Tensor(z_s)).data, model.G_y(Tensor(z_t)).data
        l_class = -np.mean(W[batch.y_s] * np.log(p_s[np.arange(8), batch.y_s]))
        l_em = -np.mean(np.sum(p_t * np.log(p_t), axis=1))
        assert bd.l_class == pytest.approx(l_class, rel=1e-12)
        assert bd.l_em == pytest.approx(l_em, rel=1e-12)
        expected = bd.l_class + hp["eta"] * bd.l_adv + bd.l_bc + hp["gamma"] * bd.l_wc + bd.l_em
        assert bd.total == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_ablation_composition(self):
        # with every switch off only the classification and entropy terms remain
        batch, _ = random_batch(0)
        model = build_model(4, 3, hidden=(6,), bottleneck=3, seed=0)
        bd = L.total_objective(batch, model, np.ones(3), alpha=0, beta=0, gamma=0, eta=0)
        assert bd.l_bc == 0.0
        assert bd.total == pytest.approx(bd.l_class + bd.l_em, rel=1e-15)

    def test_eta_zero_cuts_discriminator_out(self):
        batch, W = random_batch(1)
        model = build_model(4, 3, hidden=(6,), bottleneck=3, disc_hidden=(4,), seed=1)
        bd = L.total_objective(batch, model, W, alpha=0.2, beta=0.9, gamma=0.7, eta=0.0)
        dc.backward(bd.root)
        assert all(p.grad is None for p in model.G_d.parameters())
        with_adv = L.total_objective(batch, model, W, alpha=0.2, beta=0.9, gamma=0.7, eta=0.0).l_adv
        assert with_adv > 0

    def _grads(self, coupling, eta, seed=3):
        batch, W = random_batch(seed)
        model = build_model(4, 3, hidden=(6,), bottleneck=3, disc_hidden=(4,), activation="tanh", seed=seed)
        bd = L.total_objective(batch, model, W, alpha=0, beta=0, gamma=0, eta=eta, adv_coupling=coupling)
        dc.backward(bd.root)
        return model, bd

    def test_dann_coupling_routes_gradients(self):
        eta = 0.25
        ref, _ = self._grads("plain", 1.0)
        base, _ = self._grads("plain", 1e-300)
        dann, bd = self._grads("dann", eta)
        # discriminator sees the unscaled adversarial gradient
        for p, q in zip(dann.G_d.parameters(), ref.G_d.parameters()):
            np.testing.assert_allclose(p.grad, q.grad, rtol=1e-12, atol=1e-15)
        # the feature extractor sees -eta times the adversarial part
        for p, r, b in zip(dann.F.parameters(), ref.F.parameters(), base.F.parameters()):
            np.testing.assert_allclose(p.grad - b.grad, -eta * (r.grad - b.grad), rtol=1e-9, atol=1e-13)
        assert bd.total == pytest.approx(bd.l_class + eta * bd.l_adv + bd.l_em, rel=1e-15)

    def test_scaled_coupling(self):
        eta = 0.25
        ref, _ = self._grads("plain", eta)
        scaled, _ = self._grads("scaled", eta)
        for p, q in zip(scaled.G_d.parameters(), ref.G_d.parameters()):
            np.testing.assert_allclose(p.grad, q.grad, rtol=1e-12, atol=1e-15)

    def test_total_gradient_matches_finite_differences(self):
        batch, W = random_batch(4)
        model = build_model(4, 3, hidden=(5,), bottleneck=3, disc_hidden=(3,), activation="tanh", seed=4)
        f = lambda: L.total_objective(batch, model, W, alpha=0.2, beta=0.9, gamma=0.7, eta=0.6,  # noqa: E731
                                      adv_coupling="plain").root
        assert dc.finite_diff_check(f, model.parameters(), 1e-4) <= 1e-4

    def test_wrong_weight_length(self):
        batch, _ = random_batch(0)
        with pytest.raises(ValueError):
            L.total_objective(batch, build_model(4, 3, seed=0), np.ones(2), alpha=0, beta=0, gamma=0, eta=0)

    def test_unknown_coupling(self):
        batch, W = random_batch(0)
        with pytest.raises(ValueError):
            L.total_objective(batch, build_model(4, 3, seed=0), W, alpha=0, beta=0, gamma=0, eta=0,
                              adv_coupling="sideways")

    def test_no_negative_zero_in_breakdown(self):
        batch, W = random_batch(0)
        bd = L.total_objective(batch, build_model(4, 3, seed=0), W, alpha=0, beta=0, gamma=0, eta=0)
        assert math.copysign(1.0, bd.l_bc) == 1.0
