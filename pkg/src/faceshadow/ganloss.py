"""Fine-tuning objectives: hinge GAN losses, perceptual and feature-matching
terms, the multi-step LR schedule, and a toy adversarial reconstruction demo.

The demo pairs a pixel-parameterized generator with a per-scale pooled linear
discriminator on small grids, so adversarial dynamics can be exercised end to
end in well under a second.  Perceptual features default to a fixed-seed
random projection stack; the loss interface accepts any extractor callable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, ValidationError
from .mapping import AdamWState, adamw_step

DISCRIMINATOR_SCALES = (1.0, 0.5, 0.25, 0.125)


@dataclass(frozen=True)
class GanConfig:
    lambda_p: float = 10.0
    lambda_fm: float = 10.0
    lr: float = 2e-5
    betas: tuple[float, float] = (0.5, 0.999)
    milestones: tuple[int, ...] = (12, 18)
    gamma: float = 0.1
    epochs: int = 30


@dataclass(frozen=True)
class DiscriminatorScores:
    """Per-scale score arrays plus per-scale intermediate feature maps."""

    scores: tuple[np.ndarray, ...]
    features: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        if len(self.scores) != len(DISCRIMINATOR_SCALES):
            raise DimensionError(
                f"expected {len(DISCRIMINATOR_SCALES)} scales, got {len(self.scores)}"
            )
        if len(self.features) != len(self.scores):
            raise DimensionError("feature structure does not match score scales")
        scores = tuple(np.atleast_1d(np.asarray(s, dtype=np.float64)) for s in self.scores)
        feats = tuple(
            tuple(np.asarray(f, dtype=np.float64) for f in layer) for layer in self.features
        )
        for s in scores:
            if not np.all(np.isfinite(s)):
                raise NumericError("discriminator scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "features", feats)


def _score_arrays(scores) -> list[np.ndarray]:
    if isinstance(scores, DiscriminatorScores):
        arrays = list(scores.scores)
    elif isinstance(scores, (list, tuple)) and scores and isinstance(
        scores[0], np.ndarray
    ):
        arrays = [np.atleast_1d(np.asarray(s, dtype=np.float64)) for s in scores]
    else:
        arrays = [np.atleast_1d(np.asarray(scores, dtype=np.float64))]
    if not arrays or any(a.size == 0 for a in arrays):
        raise ValidationError("score arrays must be non-empty")
    return arrays


def hinge_d_loss(real_scores, fake_scores) -> float:
    """Discriminator hinge: mean of max(0, 1-D(real)) + max(0, 1+D(fake)).

    Means are taken per scale and then across scales; plain arrays are
    treated as a single scale.
    """
    real = _score_arrays(real_scores)
    fake = _score_arrays(fake_scores)
    real_term = float(np.mean([np.mean(np.maximum(0.0, 1.0 - r)) for r in real]))
    fake_term = float(np.mean([np.mean(np.maximum(0.0, 1.0 + f)) for f in fake]))
    return real_term + fake_term


def hinge_g_loss(fake_scores, perceptual: float, feature_match: float, cfg: GanConfig) -> float:
    """Generator objective: -E[D(fake)] + lambda_p * L_p + lambda_fm * L_fm."""
    if perceptual < 0 or feature_match < 0:
        raise ValidationError("component losses must be non-negative")
    fake = _score_arrays(fake_scores)
    adv = -float(np.mean([np.mean(f) for f in fake]))
    return adv + cfg.lambda_p * perceptual + cfg.lambda_fm * feature_match


FeatureExtractor = Callable[[np.ndarray], Sequence[np.ndarray]]


def perceptual_loss(img_a: np.ndarray, img_b: np.ndarray, extractor: FeatureExtractor) -> float:
    """Mean absolute feature difference, averaged across extractor layers."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    feats_a = extractor(a)
    feats_b = extractor(b)
    if len(feats_a) != len(feats_b):
        raise DimensionError("extractor returned differing layer counts")
    layer_means = [float(np.mean(np.abs(fa - fb))) for fa, fb in zip(feats_a, feats_b)]
    return float(np.mean(layer_means))


def feature_matching_loss(real_feats: DiscriminatorScores, fake_feats: DiscriminatorScores) -> float:
    """Mean absolute gap over intermediate discriminator features.

    Layer gaps are averaged within each scale, then across scales.  The
    real-branch features act as constants (no gradient flows into them).
    """
    if len(real_feats.features) != len(fake_feats.features):
        raise DimensionError("scale counts differ")
    per_scale = []
    for layers_r, layers_f in zip(real_feats.features, fake_feats.features):
        if len(layers_r) != len(layers_f):
            raise DimensionError("layer counts differ within a scale")
        gaps = []
        for fr, ff in zip(layers_r, layers_f):
            if fr.shape != ff.shape:
                raise DimensionError(f"feature map shapes differ: {fr.shape} vs {ff.shape}")
            gaps.append(float(np.mean(np.abs(ff - fr))))
        per_scale.append(float(np.mean(gaps)))
    return float(np.mean(per_scale))


def multistep_lr(epoch: int, base_lr: float, milestones: Sequence[int], gamma: float) -> float:
    """base_lr decayed by gamma at every milestone epoch reached so far."""
    ms = list(milestones)
    if ms != sorted(ms):
        raise ConfigError(f"milestones must be sorted ascending, got {milestones}")
    decays = sum(1 for m in ms if m <= epoch)
    return base_lr * gamma**decays


# ---------------------------------------------------------------------------
# desk-scale components

def average_pool(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h % factor or w % factor:
        raise DimensionError(f"image {img.shape} not divisible by pool factor {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


class RandomFeatureExtractor:
    """Fixed-seed two-layer tanh projection stack standing in for a deep net."""

    def __init__(self, shape: tuple[int, int], dims: tuple[int, int] = (64, 32), seed: int = 0):
        rng = np.random.default_rng(seed)
        n = shape[0] * shape[1]
        self.shape = shape
        self.p1 = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, dims[0]))
        self.p2 = rng.normal(0.0, 1.0 / np.sqrt(dims[0]), size=(dims[0], dims[1]))

    def __call__(self, img: np.ndarray) -> list[np.ndarray]:
        if img.shape != self.shape:
            raise DimensionError(f"expected image {self.shape}, got {img.shape}")
        l1 = np.tanh(img.ravel() @ self.p1)
        l2 = np.tanh(l1 @ self.p2)
        return [l1, l2]

    def pixel_grad(self, img: np.ndarray, ref_layers: Sequence[np.ndarray]) -> np.ndarray:
        """d perceptual_loss(img, ref) / d img with the reference frozen."""
        l1 = np.tanh(img.ravel() @ self.p1)
        l2 = np.tanh(l1 @ self.p2)
        n_layers = 2
        dl2 = np.sign(l2 - ref_layers[1]) / (l2.size * n_layers)
        dl1 = np.sign(l1 - ref_layers[0]) / (l1.size * n_layers)
        dl1 = dl1 + self.p2 @ (dl2 * (1.0 - l2 * l2))
        dx = self.p1 @ (dl1 * (1.0 - l1 * l1))
        return dx.reshape(img.shape)


class TinyMultiscaleDiscriminator:
    """Per-scale average-pooled tanh layer plus a linear scorer.

    The tanh activations are the intermediate feature maps consumed by the
    feature-matching loss.
    """

    HIDDEN = 16

    def __init__(self, res: tuple[int, int], seed: int = 0):
        self.res = res
        self.factors = [int(round(1.0 / s)) for s in DISCRIMINATOR_SCALES]
        for f in self.factors:
            if res[0] % f or res[1] % f:
                raise ConfigError(f"resolution {res} not divisible by scale factor {f}")
        rng = np.random.default_rng(seed)
        self.weights = []
        for f in self.factors:
            n = (res[0] // f) * (res[1] // f)
            self.weights.append(
                {
                    "w": rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, self.HIDDEN)),
                    "b": np.zeros(self.HIDDEN),
                    "v": rng.normal(0.0, 1.0 / np.sqrt(self.HIDDEN), size=self.HIDDEN),
                    "a": 0.0,
                }
            )

    def pack(self) -> np.ndarray:
        chunks = []
        for p in self.weights:
            chunks += [p["w"].ravel(), p["b"], p["v"], np.array([p["a"]])]
        return np.concatenate(chunks)

    def unpack(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.weights:
            for key in ("w", "b", "v"):
                size = p[key].size
                p[key] = flat[i : i + size].reshape(p[key].shape)
                i += size
            p["a"] = float(flat[i])
            i += 1

    def score(self, img: np.ndarray) -> DiscriminatorScores:
        scores, feats, _ = self._forward(img)
        return DiscriminatorScores(
            scores=tuple(np.array([s]) for s in scores),
            features=tuple((h,) for h in feats),
        )

    def _forward(self, img: np.ndarray):
        scores, hiddens, pooled = [], [], []
        for f, p in zip(self.factors, self.weights):
            x = average_pool(img, f).ravel()
            h = np.tanh(x @ p["w"] + p["b"])
            scores.append(float(h @ p["v"] + p["a"]))
            hiddens.append(h)
            pooled.append(x)
        return scores, hiddens, pooled

    def _unpool_to_image(self, grad_flat: np.ndarray, factor: int) -> np.ndarray:
        ph, pw = self.res[0] // factor, self.res[1] // factor
        g = grad_flat.reshape(ph, pw) / (factor * factor)
        return np.kron(g, np.ones((factor, factor)))

    def param_grad_for_d_loss(self, real: np.ndarray, fake: np.ndarray) -> tuple[float, np.ndarray]:
        """Hinge discriminator loss and its gradient over packed parameters."""
        n_scales = len(self.factors)
        loss = 0.0
        grads = []
        for f, p in zip(self.factors, self.weights):
            chunk = {k: np.zeros_like(np.atleast_1d(p[k]) if k != "a" else np.zeros(1)) for k in ("w", "b", "v")}
            chunk["a"] = np.zeros(1)
            for img, sign_is_real in ((real, True), (fake, False)):
                x = average_pool(img, f).ravel()
                h = np.tanh(x @ p["w"] + p["b"])
                c = float(h @ p["v"] + p["a"])
                margin = 1.0 - c if sign_is_real else 1.0 + c
                if margin > 0.0:
                    loss += margin / n_scales
                    dc = (-1.0 if sign_is_real else 1.0) / n_scales
                    chunk["v"] += dc * h
                    chunk["a"] += dc
                    dz = dc * p["v"] * (1.0 - h * h)
                    chunk["w"] += np.outer(x, dz)
                    chunk["b"] += dz
            grads += [chunk["w"].ravel(), chunk["b"], chunk["v"], chunk["a"]]
        return loss, np.concatenate(grads)

    def pixel_grad_for_g_terms(
        self, fake: np.ndarray, real_feats: Sequence[np.ndarray], lambda_fm: float
    ) -> np.ndarray:
        """d(-mean_scale D(fake) + lambda_fm * L_fm)/d fake pixels."""
        n_scales = len(self.factors)
        grad = np.zeros(self.res)
        for f, p, h_real in zip(self.factors, self.weights, real_feats):
            x = average_pool(fake, f).ravel()
            h = np.tanh(x @ p["w"] + p["b"])
            dh = (-1.0 / n_scales) * p["v"]  # adversarial: -mean of scores
            dh = dh + lambda_fm * np.sign(h - h_real) / (h.size * n_scales)
            dz = dh * (1.0 - h * h)
            grad += self._unpool_to_image(p["w"] @ dz, f)
        return grad


@dataclass
class DemoRecord:
    step: int
    d_loss: float
    g_loss: float
    recon_error: float


def run_adversarial_demo(
    steps: int = 200,
    seed: int = 0,
    res: tuple[int, int] = (16, 16),
    lr: float = 2e-3,
    cfg: GanConfig | None = None,
) -> list[DemoRecord]:
    """Adversarial reconstruction of a seeded toy face on a small grid.

    The generator is the pixel grid itself; both players use adaptive-moment
    updates with the configured betas.  `lr` defaults above the fine-tuning
    rate because a 200-step pixel-space run needs visible progress; pass
    cfg.lr to reproduce the production schedule.
    """
    cfg = cfg if cfg is not None else GanConfig()
    rng = np.random.default_rng(seed)

    from .motion import Keypoints
    from .synth import render_toy

    target = render_toy(Keypoints(rng.uniform(-0.6, 0.6, size=(8, 3))), res)
    gen = rng.uniform(0.0, 1.0, size=res)

    disc = TinyMultiscaleDiscriminator(res, seed=seed + 1)
    extractor = RandomFeatureExtractor(res, seed=seed + 2)
    target_layers = extractor(target)

    d_params = disc.pack()
    d_state = AdamWState.init(d_params.size)
    g_state = AdamWState.init(gen.size)

    records = []
    for step in range(steps):
        d_loss, d_grad = disc.param_grad_for_d_loss(target, gen)
        d_params = adamw_step(
            d_params, d_grad, d_state, lr=lr, betas=cfg.betas, weight_decay=0.0
        )
        disc.unpack(d_params)

        real_scored = disc.score(target)
        fake_scored = disc.score(gen)
        p_loss = perceptual_loss(gen, target, extractor)
        fm_loss = feature_matching_loss(real_scored, fake_scored)
        g_loss = hinge_g_loss(fake_scored, p_loss, fm_loss, cfg)

        real_feats = [layer[0] for layer in real_scored.features]
        g_grad = disc.pixel_grad_for_g_terms(gen, real_feats, cfg.lambda_fm)
        g_grad = g_grad + cfg.lambda_p * extractor.pixel_grad(gen, target_layers)
        new_flat = adamw_step(
            gen.ravel(), g_grad.ravel(), g_state, lr=lr, betas=cfg.betas, weight_decay=0.0
        )
        gen = new_flat.reshape(res)

        records.append(
            DemoRecord(
                step=step,
                d_loss=float(d_loss),
                g_loss=float(g_loss),
                recon_error=float(np.mean(np.abs(gen - target))),
            )
        )
    return records
