"""Model-level tests: loss terms against independent oracles, gradient
flow rules, and the deterministic embedding path."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_loom import nn_core as nn
from latent_loom.dgm_model import (
    LOGVAR_MAX,
    PROB_EPS,
    LatentGaussian,
    LossBreakdown,
    LossWeights,
    Model,
    ModelConfig,
)
from latent_loom.nn_core import Tensor

# Tiny config: small enough for finite differences, same code paths.
TINY = ModelConfig(
    latent_dim=2,
    classifier_hidden_layers=1,
    classifier_units=4,
    n_classes=10,
    image_size=8,
    conv_channels=(2, 3),
    dense_units=5,
)

FULL = ModelConfig()


def tiny_model(seed=0, dtype=np.float64) -> Model:
    return Model(TINY, seed=seed, dtype=dtype)


def tiny_batch(n=3, seed=7):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, TINY.image_size, TINY.image_size))
    y = np.zeros((n, TINY.n_classes))
    y[np.arange(n), rng.integers(0, TINY.n_classes, size=n)] = 1.0
    mask = np.ones(n, dtype=bool)
    eps = rng.standard_normal((n, TINY.latent_dim))
    return x, y, mask, eps


# ---------------------------------------------------------------- oracles


def kl_numeric_1d(mu: float, logvar: float) -> float:
    """KL(N(mu, e^logvar) || N(0,1)) by trapezoidal integration."""
    s = np.exp(0.5 * logvar)
    x = np.linspace(min(mu - 12 * s, -12.0), max(mu + 12 * s, 12.0), 400_001)
    q = np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    log_q = -0.5 * ((x - mu) / s) ** 2 - np.log(s * np.sqrt(2 * np.pi))
    log_p = -0.5 * x**2 - 0.5 * np.log(2 * np.pi)
    return float(np.trapezoid(q * (log_q - log_p), x))


def bce_brute(x: np.ndarray, r: np.ndarray) -> float:
    """Per-pixel Bernoulli NLL accumulated in a plain Python loop."""
    r = np.clip(r, PROB_EPS, 1 - PROB_EPS)
    total = 0.0
    for xi, ri in zip(x.ravel(), r.ravel()):
        total += -(xi * np.log(ri) + (1 - xi) * np.log(1 - ri))
    return total / x.shape[0]


def masked_ce_brute(onehot: np.ndarray, mask: np.ndarray, probs: np.ndarray) -> float:
    total, labeled = 0.0, 0
    for i in range(onehot.shape[0]):
        if not mask[i]:
            continue
        labeled += 1
        for c in range(onehot.shape[1]):
            if onehot[i, c] > 0:
                total += -onehot[i, c] * np.log(max(probs[i, c], PROB_EPS))
    return total / labeled


def fd_param_grads(loss_fn, params: nn.ParamStore, h=1e-5):
    """Central finite differences over every ParamStore entry."""
    out = {}
    for name, tensor in params.items():
        arr = tensor.data
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out[name] = g
    return out


# ---------------------------------------------------------------- KL


class TestKl:
    def test_matches_numerical_integration(self):
        m = tiny_model()
        mu = np.array([[0.0, 1.5], [-0.7, 0.2]])
        logvar = np.array([[np.log(4.0), -1.0], [0.5, 0.0]])
        g = LatentGaussian(mu=Tensor(mu), logvar=Tensor(logvar))
        want = np.mean(
            [sum(kl_numeric_1d(mu[i, j], logvar[i, j]) for j in range(2)) for i in range(2)]
        )
        got = float(m.kl_divergence(g).data)
        assert got == pytest.approx(want, rel=1e-6)

    def test_standard_normal_has_zero_kl(self):
        m = tiny_model()
        g = LatentGaussian(mu=Tensor(np.zeros((4, 2))), logvar=Tensor(np.zeros((4, 2))))
        assert float(m.kl_divergence(g).data) == 0.0

    @given(
        st.lists(st.floats(-3, 3), min_size=4, max_size=4),
        st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    )
    @settings(max_examples=50, deadline=None)
    def test_kl_is_nonnegative(self, mus, logvars):
        m = tiny_model()
        g = LatentGaussian(
            mu=Tensor(np.array(mus).reshape(2, 2)),
            logvar=Tensor(np.array(logvars).reshape(2, 2)),
        )
        assert float(m.kl_divergence(g).data) >= -1e-12


# ---------------------------------------------------------------- BCE


class TestReconstruction:
    def test_halfway_pixels_give_log2_each(self):
        # x = recon = 0.5 everywhere: BCE is ln 2 per pixel, summed.
        m = Model(FULL, seed=0, dtype=np.float64)
        n_pix = FULL.image_size**2
        x = np.full((2, FULL.image_size, FULL.image_size), 0.5)
        r = Tensor(np.full((2, 1, FULL.image_size, FULL.image_size), 0.5))
        got = float(m.reconstruction_loss(x, r).data)
        assert got == pytest.approx(n_pix * np.log(2), rel=1e-9)

    def test_matches_pixel_loop(self):
        m = tiny_model()
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, size=(3, TINY.image_size, TINY.image_size))
        r = rng.uniform(0, 1, size=(3, 1, TINY.image_size, TINY.image_size))
        got = float(m.reconstruction_loss(x, Tensor(r)).data)
        assert got == pytest.approx(bce_brute(x, r), rel=1e-9)

    def test_saturated_recon_is_clamped_finite(self):
        m = tiny_model()
        x = np.ones((1, TINY.image_size, TINY.image_size))
        r = Tensor(np.zeros((1, 1, TINY.image_size, TINY.image_size)))
        val = float(m.reconstruction_loss(x, r).data)
        assert np.isfinite(val)
        assert val == pytest.approx(-TINY.image_size**2 * np.log(PROB_EPS), rel=1e-6)


# ---------------------------------------------------------------- classifier


class TestClassifier:
    def test_uniform_prediction_costs_log_n_classes(self):
        m = tiny_model()
        probs = Tensor(np.full((5, 10), 0.1))
        onehot = np.eye(10)[:5]
        mask = np.ones(5, dtype=bool)
        got = float(m.classifier_loss(onehot, mask, probs).data)
        assert got == pytest.approx(np.log(10), rel=1e-9)

    def test_matches_masked_loop(self):
        m = tiny_model()
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(6, 10))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        onehot = np.eye(10)[rng.integers(0, 10, size=6)]
        mask = np.array([True, False, True, True, False, True])
        got = float(m.classifier_loss(onehot, mask, Tensor(probs)).data)
        assert got == pytest.approx(masked_ce_brute(onehot, mask, probs), rel=1e-9)

    def test_unlabeled_rows_do_not_move_the_loss(self):
        m = tiny_model()
        rng = np.random.default_rng(12)
        probs = rng.dirichlet(np.ones(10), size=4)
        onehot = np.eye(10)[[1, 2, 3, 4]]
        mask = np.array([True, True, False, False])
        base = float(m.classifier_loss(onehot, mask, Tensor(probs)).data)
        scrambled = onehot.copy()
        scrambled[2:] = np.eye(10)[[9, 8]]
        again = float(m.classifier_loss(scrambled, mask, Tensor(probs)).data)
        assert again == base

    def test_logistic_regression_head_matches_numpy(self):
        # Zero hidden layers: classify(z) is literally softmax(z @ w + b).
        cfg = ModelConfig(latent_dim=2, classifier_hidden_layers=0, image_size=8, conv_channels=(2, 3), dense_units=5)
        m = Model(cfg, seed=5, dtype=np.float64)
        rng = np.random.default_rng(0)
        w = rng.normal(size=(2, 10))
        b = rng.normal(size=(10,))
        m.params.set_data("classifier.out.w", w)
        m.params.set_data("classifier.out.b", b)
        z = rng.normal(size=(7, 2))
        logits = z @ w + b
        want = np.exp(logits - logits.max(axis=1, keepdims=True))
        want /= want.sum(axis=1, keepdims=True)
        got = m.classify(z).data
        np.testing.assert_allclose(got, want, rtol=1e-12)


# ---------------------------------------------------------------- sampling


class TestReparameterization:
    def test_monte_carlo_moments(self):
        m = tiny_model()
        mu = np.array([[1.0, -2.0]])
        logvar = np.array([[np.log(0.25), np.log(4.0)]])
        g = LatentGaussian(mu=Tensor(np.repeat(mu, 200_000, axis=0)), logvar=Tensor(np.repeat(logvar, 200_000, axis=0)))
        eps = np.random.default_rng(99).standard_normal((200_000, 2))
        z = m.reparameterize(g, eps).data
        np.testing.assert_allclose(z.mean(axis=0), mu[0], atol=4 * 2.0 / np.sqrt(200_000))
        np.testing.assert_allclose(z.std(axis=0), [0.5, 2.0], rtol=0.02)

    def test_zero_eps_returns_mean(self):
        m = tiny_model()
        g = LatentGaussian(mu=Tensor(np.array([[3.0, -1.0]])), logvar=Tensor(np.array([[0.3, 0.7]])))
        z = m.reparameterize(g, np.zeros((1, 2))).data
        np.testing.assert_array_equal(z, g.mu.data)

    def test_eps_shape_mismatch_raises(self):
        m = tiny_model()
        g = LatentGaussian(mu=Tensor(np.zeros((2, 2))), logvar=Tensor(np.zeros((2, 2))))
        with pytest.raises(nn.ShapeMismatch):
            m.reparameterize(g, np.zeros((3, 2)))


# ---------------------------------------------------------------- composite loss


class TestTotalLoss:
    def test_breakdown_recombines(self):
        m = tiny_model()
        x, y, mask, eps = tiny_batch()
        w = LossWeights(beta_kl=3.0, beta_classifier=100.0)
        total, br = m.total_loss(x, y, mask, w, eps)
        assert br.total == pytest.approx(br.recombined(w), rel=1e-6)
        assert float(total.data) == br.total
        assert br.labeled_count == 3

    def test_classifier_reads_sampled_latent_not_mean(self):
        m = tiny_model()
        x, y, mask, _ = tiny_batch()
        w = LossWeights(beta_kl=1.0, beta_classifier=1.0)
        _, at_mean = m.total_loss(x, y, mask, w, np.zeros((3, 2)))
        _, shifted = m.total_loss(x, y, mask, w, np.full((3, 2), 5.0))
        assert at_mean.classifier != shifted.classifier

    def test_gradients_match_finite_differences(self):
        m = tiny_model(seed=1)
        # Zero-init biases park dead receptive fields exactly on the ReLU
        # kink, where central differences disagree with the subgradient.
        # Small noise on every parameter moves activations off the kinks.
        noise = np.random.default_rng(123)
        for name, t in m.params.items():
            m.params.set_data(name, t.data + 0.05 * noise.standard_normal(t.data.shape))
        x, y, mask, eps = tiny_batch(seed=8)
        mask[1] = False  # exercise the masked path
        w = LossWeights(beta_kl=2.0, beta_classifier=3.0)

        def value():
            with nn.no_grad():
                t, _ = m.total_loss(x, y, mask, w, eps)
            return float(t.data)

        want = fd_param_grads(value, m.params)
        total, _ = m.total_loss(x, y, mask, w, eps)
        got = nn.backward(total, m.params)
        for name in m.params.names():
            scale = np.maximum(np.abs(want[name]), 1e-3)
            err = np.abs(got[name] - want[name]) / scale
            assert err.max() < 1e-5, f"{name}: max rel err {err.max():.2e}"

    def test_zero_classifier_weight_gives_exact_zero_classifier_grads(self):
        m = tiny_model(seed=2)
        x, y, mask, eps = tiny_batch(seed=9)
        total, br = m.total_loss(x, y, mask, LossWeights(beta_kl=1.0, beta_classifier=0.0), eps)
        grads = nn.backward(total, m.params)
        assert br.classifier == 0.0
        for name in TINY.classifier_param_names():
            assert np.all(grads[name] == 0.0), name
        assert np.any(grads["encoder.conv1.w"] != 0.0)

    def test_unlabeled_batch_gives_exact_zero_classifier_grads(self):
        m = tiny_model(seed=3)
        x, y, _, eps = tiny_batch(seed=10)
        none = np.zeros(3, dtype=bool)
        total, br = m.total_loss(x, y, none, LossWeights(beta_kl=1.0, beta_classifier=100.0), eps)
        grads = nn.backward(total, m.params)
        assert br.classifier == 0.0 and br.labeled_count == 0
        for name in TINY.classifier_param_names():
            assert np.all(grads[name] == 0.0), name

    def test_nonfinite_components_raise(self):
        m = tiny_model(seed=4)
        x, y, mask, eps = tiny_batch(seed=11)
        m.params.set_data("encoder.mu.b", np.full(2, 1e200))
        with np.errstate(over="ignore"), pytest.raises(nn.NonFiniteLoss):
            m.total_loss(x, y, mask, LossWeights(1.0, 1.0), eps)


# ---------------------------------------------------------------- shapes & clamps


class TestForwardShapes:
    def test_full_size_roundtrip_shapes(self):
        m = Model(FULL, seed=0)
        x = np.random.default_rng(0).uniform(0, 1, size=(4, 28, 28)).astype(np.float32)
        g = m.encode(x)
        assert g.mu.shape == (4, 2) and g.logvar.shape == (4, 2)
        z = m.reparameterize(g, np.zeros((4, 2), dtype=np.float32))
        r = m.decode(z)
        assert r.shape == (4, 1, 28, 28)
        assert float(r.data.min()) > 0.0 and float(r.data.max()) < 1.0

    def test_conv_sizes_trace(self):
        assert FULL.conv_sizes == [28, 14, 7]
        assert FULL.flat_units == 32 * 7 * 7

    def test_logvar_is_clamped(self):
        m = tiny_model()
        m.params.set_data("encoder.logvar.b", np.full(2, 50.0))
        x = np.random.default_rng(1).uniform(0, 1, size=(2, 8, 8))
        g = m.encode(x)
        assert np.all(g.logvar.data <= LOGVAR_MAX)
        assert np.any(g.logvar.data == LOGVAR_MAX)

    def test_latent_dim_must_be_2_or_3(self):
        with pytest.raises(ValueError):
            ModelConfig(latent_dim=4)

    def test_config_dict_roundtrip(self):
        cfg = ModelConfig(latent_dim=3, classifier_hidden_layers=2)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- embedding


class TestEmbedMeans:
    def test_matches_direct_encode_and_classify(self):
        m = tiny_model(dtype=np.float32)
        rng = np.random.default_rng(21)
        x = rng.uniform(0, 1, size=(10, 8, 8)).astype(np.float32)
        ids = np.arange(100, 110)
        pts = m.embed_means(x, ids, chunk=3)
        with nn.no_grad():
            g = m.encode(x)
            probs = m.classify(g.mu).data
        np.testing.assert_array_equal(pts.mu, g.mu.data)
        np.testing.assert_array_equal(pts.sigma, np.exp(0.5 * g.logvar.data))
        np.testing.assert_array_equal(pts.pred_class, probs.argmax(axis=1))
        np.testing.assert_allclose(pts.confidence, probs.max(axis=1))
        np.testing.assert_array_equal(pts.sample_ids, ids)

    def test_chunk_size_does_not_change_output(self):
        m = tiny_model(dtype=np.float32)
        x = np.random.default_rng(22).uniform(0, 1, size=(7, 8, 8)).astype(np.float32)
        ids = np.arange(7)
        a = m.embed_means(x, ids, chunk=2)
        b = m.embed_means(x, ids, chunk=512)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.pred_class, b.pred_class)

    def test_rows_iterator_types(self):
        m = tiny_model(dtype=np.float32)
        x = np.random.default_rng(23).uniform(0, 1, size=(2, 8, 8)).astype(np.float32)
        rows = list(m.embed_means(x, np.array([5, 6])).rows())
        sid, mu, sigma, pred, conf = rows[0]
        assert isinstance(sid, int) and isinstance(pred, int) and isinstance(conf, float)
        assert mu.shape == (2,) and sigma.shape == (2,)
        assert 0.0 < conf <= 1.0
