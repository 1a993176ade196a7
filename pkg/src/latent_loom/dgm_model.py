"""Deep generative model: probabilistic convolutional encoder, decoder,
classifier head over the latent variable, and the composite training loss

    total = reconstruction + beta_kl * KL + beta_classifier * cross_entropy.

The latent posterior is a diagonal Gaussian (mu, logvar). Sampled latents
feed the decoder and classifier during training; visualization always uses
the posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .nn_core import NonFiniteLoss, ParamStore, Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
PROB_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; every field lands in run metadata."""

    latent_dim: int = 2
    classifier_hidden_layers: int = 0
    classifier_units: int = 10
    n_classes: int = 10
    image_size: int = 28
    conv_channels: tuple[int, int] = (32, 32)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    dense_units: int = 128

    def __post_init__(self):
        if self.latent_dim not in (2, 3):
            raise ValueError(f"latent_dim must be 2 or 3, got {self.latent_dim}")
        if self.classifier_hidden_layers < 0:
            raise ValueError("classifier_hidden_layers must be >= 0")

    @property
    def conv_sizes(self) -> list[int]:
        sizes = [self.image_size]
        for _ in self.conv_channels:
            sizes.append((sizes[-1] + 2 * self.padding - self.kernel) // self.stride + 1)
        return sizes

    @property
    def flat_units(self) -> int:
        return self.conv_channels[-1] * self.conv_sizes[-1] ** 2

    def param_spec(self) -> list[tuple[str, tuple[int, ...], str]]:
        c1, c2 = self.conv_channels
        k, d = self.kernel, self.latent_dim
        spec: list[tuple[str, tuple[int, ...], str]] = [
            ("encoder.conv1.w", (c1, 1, k, k), "weight"),
            ("encoder.conv1.b", (c1, 1, 1), "bias"),
            ("encoder.conv2.w", (c2, c1, k, k), "weight"),
            ("encoder.conv2.b", (c2, 1, 1), "bias"),
            ("encoder.fc.w", (self.flat_units, self.dense_units), "weight"),
            ("encoder.fc.b", (self.dense_units,), "bias"),
            ("encoder.mu.w", (self.dense_units, d), "weight"),
            ("encoder.mu.b", (d,), "bias"),
            ("encoder.logvar.w", (self.dense_units, d), "weight"),
            ("encoder.logvar.b", (d,), "bias"),
            ("decoder.fc.w", (d, self.flat_units), "weight"),
            ("decoder.fc.b", (self.flat_units,), "bias"),
            ("decoder.deconv1.w", (c2, c1, k, k), "weight"),
            ("decoder.deconv1.b", (c1, 1, 1), "bias"),
            ("decoder.deconv2.w", (c1, 1, k, k), "weight"),
            ("decoder.deconv2.b", (1, 1, 1), "bias"),
        ]
        width = self.latent_dim
        for i in range(self.classifier_hidden_layers):
            spec.append((f"classifier.h{i}.w", (width, self.classifier_units), "weight"))
            spec.append((f"classifier.h{i}.b", (self.classifier_units,), "bias"))
            width = self.classifier_units
        spec.append(("classifier.out.w", (width, self.n_classes), "weight"))
        spec.append(("classifier.out.b", (self.n_classes,), "bias"))
        return spec

    def classifier_param_names(self) -> list[str]:
        return [name for name, _, _ in self.param_spec() if name.startswith("classifier.")]

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "classifier_hidden_layers": self.classifier_hidden_layers,
            "classifier_units": self.classifier_units,
            "n_classes": self.n_classes,
            "image_size": self.image_size,
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "dense_units": self.dense_units,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return ModelConfig(**d)


@dataclass(frozen=True)
class LossWeights:
    beta_kl: float = 1.0
    beta_classifier: float = 1.0

    def __post_init__(self):
        if self.beta_kl < 0 or self.beta_classifier < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    reconstruction: float
    kl: float
    classifier: float
    labeled_count: int

    def recombined(self, w: LossWeights) -> float:
        return self.reconstruction + w.beta_kl * self.kl + w.beta_classifier * self.classifier

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "reconst": self.reconstruction,
            "kl": self.kl,
            "classifier": self.classifier,
            "labeled_count": self.labeled_count,
        }


@dataclass
class LatentGaussian:
    """Per-sample posterior parameters, still attached to the tape."""

    mu: Tensor
    logvar: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)


@dataclass
class EmbeddedPoints:
    """Posterior means plus classifier readout for a whole dataset."""

    sample_ids: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pred_class: np.ndarray
    confidence: np.ndarray

    def rows(self):
        for i in range(self.sample_ids.shape[0]):
            yield (
                int(self.sample_ids[i]),
                self.mu[i],
                self.sigma[i],
                int(self.pred_class[i]),
                float(self.confidence[i]),
            )


class Model:
    """Encoder / decoder / classifier over a shared parameter store."""

    def __init__(self, config: ModelConfig, params: ParamStore | None = None, seed: int = 0, dtype=np.float32):
        self.config = config
        if params is None:
            params = nn.init_params(config.param_spec(), seed=seed, dtype=dtype)
        self.params = params

    @property
    def dtype(self):
        return self.params["encoder.conv1.w"].dtype

    def _image_batch(self, x) -> Tensor:
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        if arr.ndim == 3:
            arr = arr[:, None, :, :]
        if arr.ndim != 4:
            raise nn.ShapeMismatch(f"expected image batch, got shape {arr.shape}")
        return Tensor(arr.astype(self.dtype, copy=False))

    def encode(self, x) -> LatentGaussian:
        p = self.params
        cfg = self.config
        h = self._image_batch(x)
        h = nn.relu(nn.conv2d_forward(h, p["encoder.conv1.w"], cfg.stride, cfg.padding) + p["encoder.conv1.b"])
        h = nn.relu(nn.conv2d_forward(h, p["encoder.conv2.w"], cfg.stride, cfg.padding) + p["encoder.conv2.b"])
        h = h.reshape(h.shape[0], cfg.flat_units)
        h = nn.relu(nn.dense_forward(h, p["encoder.fc.w"], p["encoder.fc.b"]))
        mu = nn.dense_forward(h, p["encoder.mu.w"], p["encoder.mu.b"])
        logvar = nn.clip(nn.dense_forward(h, p["encoder.logvar.w"], p["encoder.logvar.b"]), LOGVAR_MIN, LOGVAR_MAX)
        return LatentGaussian(mu=mu, logvar=logvar)

    def reparameterize(self, g: LatentGaussian, eps: np.ndarray) -> Tensor:
        if eps.shape != g.mu.shape:
            raise nn.ShapeMismatch(f"eps {eps.shape} vs mu {g.mu.shape}")
        return g.mu + nn.exp(g.logvar * 0.5) * Tensor(eps.astype(self.dtype, copy=False))

    def decode(self, z) -> Tensor:
        p = self.params
        cfg = self.config
        c1, c2 = cfg.conv_channels
        side = cfg.conv_sizes[-1]
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        h = nn.relu(nn.dense_forward(z, p["decoder.fc.w"], p["decoder.fc.b"]))
        h = h.reshape(z.shape[0], c2, side, side)
        h = nn.relu(nn.transposed_conv2d_forward(h, p["decoder.deconv1.w"], cfg.stride, cfg.padding) + p["decoder.deconv1.b"])
        h = nn.transposed_conv2d_forward(h, p["decoder.deconv2.w"], cfg.stride, cfg.padding) + p["decoder.deconv2.b"]
        return nn.sigmoid(h)

    def classify(self, z) -> Tensor:
        p = self.params
        h = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        for i in range(self.config.classifier_hidden_layers):
            h = nn.relu(nn.dense_forward(h, p[f"classifier.h{i}.w"], p[f"classifier.h{i}.b"]))
        return nn.softmax(nn.dense_forward(h, p["classifier.out.w"], p["classifier.out.b"]))

    # -- loss terms ---------------------------------------------------------

    def kl_divergence(self, g: LatentGaussian) -> Tensor:
        """Closed-form KL(q || standard normal), per-sample sum over
        dimensions, averaged over the batch."""
        per_sample = ((g.mu**2) + nn.exp(g.logvar) - g.logvar - 1.0).sum(axis=1) * 0.5
        return per_sample.mean()

    def reconstruction_loss(self, x, x_recon: Tensor) -> Tensor:
        """Bernoulli negative log-likelihood summed over pixels, batch mean."""
        target = self._image_batch(x)
        r = nn.clip(x_recon, PROB_EPS, 1.0 - PROB_EPS)
        bce = -(target * nn.log(r) + (1.0 - target) * nn.log(1.0 - r))
        n = target.shape[0]
        return bce.sum() * (1.0 / n)

    def classifier_loss(self, y_onehot: np.ndarray, label_mask: np.ndarray, y_pred: Tensor) -> Tensor:
        """Cross-entropy over labeled rows only; a zero constant (off the
        tape, hence zero gradients) when nothing in the batch is labeled."""
        labeled = int(label_mask.sum())
        if labeled == 0:
            return Tensor(np.zeros((), dtype=self.dtype))
        onehot = y_onehot.astype(self.dtype, copy=False) * label_mask.astype(self.dtype)[:, None]
        ce = -(Tensor(onehot) * nn.log(nn.clip(y_pred, PROB_EPS, 1.0))).sum()
        return ce * (1.0 / labeled)

    def total_loss(self, x, y_onehot: np.ndarray, label_mask: np.ndarray, weights: LossWeights, eps: np.ndarray) -> tuple[Tensor, LossBreakdown]:
        """Full forward pass; classifier consumes the sampled latent."""
        g = self.encode(x)
        z = self.reparameterize(g, eps)
        recon = self.reconstruction_loss(x, self.decode(z))
        kl = self.kl_divergence(g)
        labeled = int(label_mask.sum())
        if weights.beta_classifier > 0 and labeled > 0:
            cls = self.classifier_loss(y_onehot, label_mask, self.classify(z))
            total = recon + kl * weights.beta_kl + cls * weights.beta_classifier
        else:
            cls = Tensor(np.zeros((), dtype=self.dtype))
            total = recon + kl * weights.beta_kl
        breakdown = LossBreakdown(
            total=float(total.data),
            reconstruction=float(recon.data),
            kl=float(kl.data),
            classifier=float(cls.data),
            labeled_count=labeled,
        )
        if not np.isfinite([breakdown.total, breakdown.reconstruction, breakdown.kl, breakdown.classifier]).all():
            raise NonFiniteLoss(f"loss components are not finite: {breakdown}")
        return total, breakdown

    # -- visualization ------------------------------------------------------

    def embed_means(self, images: np.ndarray, sample_ids: np.ndarray, chunk: int = 512) -> EmbeddedPoints:
        """Deterministic posterior means with classifier readout on mu."""
        n = images.shape[0]
        d = self.config.latent_dim
        mu = np.empty((n, d), dtype=np.float32)
        sigma = np.empty((n, d), dtype=np.float32)
        pred = np.empty(n, dtype=np.int16)
        conf = np.empty(n, dtype=np.float32)
        with nn.no_grad():
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                g = self.encode(images[lo:hi])
                probs = self.classify(g.mu).data
                mu[lo:hi] = g.mu.data
                sigma[lo:hi] = g.sigma
                pred[lo:hi] = probs.argmax(axis=1)
                conf[lo:hi] = probs.max(axis=1)
        return EmbeddedPoints(
            sample_ids=np.asarray(sample_ids, dtype=np.int64).copy(),
            mu=mu,
            sigma=sigma,
            pred_class=pred,
            confidence=conf,
        )
