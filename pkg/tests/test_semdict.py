import numpy as np
import pytest

from dsdl.diffcore import ParamStore, grad_check, sgd_step
from dsdl.semdict import (SemanticSpace, UndercompleteError, ZeroNormError, build_autoencoder,
                          similarity_loss)


def lrelu(x, s=0.2):
    return np.where(x >= 0, x, s * x)


def straight_line_encoder(ps, S):
    h = lrelu(ps["ae.fc1.W"].value @ S + ps["ae.fc1.b"].value)
    return lrelu(ps["ae.fc2.W"].value @ h + ps["ae.fc2.b"].value)


class TestBuild:
    def test_default_dims(self):
        ae, ps = build_autoencoder()
        assert ps["ae.fc1.W"].value.shape == (1024, 300)
        assert ps["ae.fc2.W"].value.shape == (2048, 1024)

    def test_desk_dims(self):
        ae, ps = build_autoencoder(16, 64, 32)
        assert (ae.k, ae.d, ae.hidden) == (16, 64, 32)
        assert sorted(ps) == ["ae.fc1.W", "ae.fc1.b", "ae.fc2.W", "ae.fc2.b"]

    def test_decoder_shares_storage(self, rng):
        ae, ps = build_autoencoder(4, 8, 6, rng=rng)
        D = rng.normal(size=(8, 3))
        before = ae.reconstruct(D)
        ps["ae.fc2.W"].value[0, 0] += 1.0
        assert not np.array_equal(ae.reconstruct(D), before)

    def test_decoder_is_transposed_encoder(self, rng):
        ae, ps = build_autoencoder(4, 8, 6, rng=rng)
        D = rng.normal(size=(8, 3))
        W1, W2 = ps["ae.fc1.W"].value, ps["ae.fc2.W"].value
        np.testing.assert_allclose(ae.reconstruct(D), W1.T @ lrelu(W2.T @ D), rtol=1e-14)


class TestGenerateDictionary:
    def test_zero_weights(self, rng):
        ae, ps = build_autoencoder(8, 32, 16, rng=rng)
        for _, p in ps.items():
            p.value[...] = 0
        D = ae.generate_dictionary(SemanticSpace(rng.normal(size=(8, 4))))
        assert D.shape == (32, 4) and not D.any()

    def test_column_permutation(self, rng):
        ae, _ = build_autoencoder(8, 32, 16, rng=rng)
        sem = SemanticSpace(rng.normal(size=(8, 4)))
        order = [2, 0, 3, 1]
        np.testing.assert_array_equal(ae.generate_dictionary(sem.permuted(order)),
                                      ae.generate_dictionary(sem)[:, order])

    def test_matches_straight_line_forward(self):
        rng = np.random.default_rng(7)
        ae, ps = build_autoencoder(8, 32, 16, rng=rng)
        for _, p in ps.items():
            p.value += rng.normal(scale=0.1, size=p.value.shape)
        S = rng.normal(size=(8, 4))
        np.testing.assert_allclose(ae.generate_dictionary(SemanticSpace(S)),
                                   straight_line_encoder(ps, S), rtol=1e-13)

    def test_rejects_overcomplete(self, rng):
        ae, _ = build_autoencoder(4, 5, 6, rng=rng)
        with pytest.raises(UndercompleteError):
            ae.generate_dictionary(SemanticSpace(rng.normal(size=(4, 5))))


class TestSemanticSpace:
    def test_zero_column_rejected(self):
        S = np.ones((3, 2))
        S[:, 1] = 0
        with pytest.raises(ZeroNormError, match="b"):
            SemanticSpace(S, ["a", "b"])

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            SemanticSpace(np.ones((3, 1)))


class TestSimilarityLoss:
    def test_perfect(self, rng):
        S = rng.normal(size=(5, 3))
        assert similarity_loss(S, S)[0] == pytest.approx(1.0, abs=1e-15)

    def test_antipodal(self, rng):
        S = rng.normal(size=(5, 3))
        assert similarity_loss(S, -S)[0] == pytest.approx(-1.0, abs=1e-15)

    def test_hand_cosine(self):
        S = np.array([[1.0, 0.0], [0.0, 1.0]])
        S_hat = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert similarity_loss(S, S_hat)[0] == pytest.approx((1 / np.sqrt(2) + 1) / 2, rel=1e-12)

    def test_zero_reconstruction_names_class(self):
        S = np.ones((2, 2))
        S_hat = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ZeroNormError, match="cat"):
            similarity_loss(S, S_hat, ["dog", "cat"])

    def test_scale_invariance(self, rng):
        S, S_hat = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        scaled = S_hat * np.array([0.3, 7.0, 1.0, 250.0])
        assert similarity_loss(S, scaled)[0] == pytest.approx(similarity_loss(S, S_hat)[0], abs=1e-14)

    def test_range(self, rng):
        for _ in range(50):
            v = similarity_loss(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))[0]
            assert -1 <= v <= 1

    def test_gradient_through_autoencoder(self, rng):
        ae, ps = build_autoencoder(5, 12, 7, rng=rng)
        for _, p in ps.items():
            p.value += rng.normal(scale=0.1, size=p.value.shape)
        sem = SemanticSpace(rng.normal(size=(5, 3)))

        def closure():
            D = ae.generate_dictionary(sem)
            loss, g = similarity_loss(sem.S, ae.reconstruct(D))
            dD = ae.decoder.backward(g)
            ae.encoder.backward(dD)
            return loss

        report = grad_check(closure, ps, rtol=1e-4)
        assert report.passed, report.lines()

    def test_tied_after_update(self, rng):
        ae, ps = build_autoencoder(5, 12, 7, rng=rng)
        sem = SemanticSpace(rng.normal(size=(5, 3)))
        D = ae.generate_dictionary(sem)
        _, g = similarity_loss(sem.S, ae.reconstruct(D))
        ae.encoder.backward(ae.decoder.backward(g))
        sgd_step(ps, lr=0.5, momentum=0.0, weight_decay=0.0)
        W1, W2 = ps["ae.fc1.W"].value, ps["ae.fc2.W"].value
        assert ae.decoder.layers[0].W.value is W2 and ae.decoder.layers[2].W.value is W1
        np.testing.assert_array_equal(ae.reconstruct(D), W1.T @ lrelu(W2.T @ D))
