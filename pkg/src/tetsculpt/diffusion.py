"""Tiny pixel-space conditional diffusion prior and the score gradients.

Everything lives in pixel space: the "latent" of a render is just the
noisy image. The denoiser is a small conv encoder-decoder (3 down / 3 up
levels) conditioned on a pose image (channel concat), a sinusoidal
timestep embedding, and a learned concept-tag embedding. Score gradients
follow the residual form w(t) * (eps_hat - eps), w(t) = 1 - alpha_bar(t).
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .optim import AdamW

log = logging.getLogger("tetsculpt.diffusion")


class NoiseSchedule:
    """Linear-beta schedule with the usual alpha-bar products."""

    def __init__(self, steps=1000, beta_min=1e-4, beta_max=2e-2,
                 t_min_frac=0.02, t_max_frac=0.98):
        self.steps = int(steps)
        self.betas = np.linspace(beta_min, beta_max, self.steps,
                                 dtype=np.float64)
        self.alpha_bar = np.cumprod(1.0 - self.betas).astype(np.float32)
        self.t_min = max(0, int(round(t_min_frac * self.steps)))
        self.t_max = min(self.steps - 1, int(round(t_max_frac * self.steps)))

    def weight(self, t):
        """SDS weighting w(t) = 1 - alpha_bar(t)."""
        return 1.0 - self.alpha_bar[t]

    def noisy(self, x0, eps, t):
        a = self.alpha_bar[t]
        return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


_EMB_DIM = 32


def _time_features(t, steps):
    """Sinusoidal features of t/steps, shape [B, _EMB_DIM // 2]."""
    tt = np.asarray(t, np.float32).reshape(-1, 1) / float(steps)
    freqs = (2.0 ** np.arange(_EMB_DIM // 4)).astype(np.float32) * np.pi
    ang = tt * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Denoiser:
    """Conditional eps-prediction net: (z_t, pose, t, tag) -> eps_hat.

    Channel plan (64 px): 6 -> 16 -> 32 -> 64 -> 64 bottleneck, mirrored
    decoder with additive skips. The output head starts at zero so an
    untrained net predicts zero noise (loss ~= 1 on unit Gaussian eps).
    """

    def __init__(self, n_tags=8, base=16, rng=None):
        rng = rng or np.random.default_rng(0)
        c1, c2, c3 = base, base * 2, base * 4
        self.channels = (c1, c2, c3)
        self.n_tags = n_tags
        L = {}
        L["enc0"] = nn.Conv2d(6, c1, rng)
        L["down1"] = nn.Conv2d(c1, c2, rng, stride=2)
        L["block1"] = nn.Conv2d(c2, c2, rng)
        L["down2"] = nn.Conv2d(c2, c3, rng, stride=2)
        L["block2"] = nn.Conv2d(c3, c3, rng)
        L["down3"] = nn.Conv2d(c3, c3, rng, stride=2)
        L["mid"] = nn.Conv2d(c3, c3, rng)
        L["up1"] = nn.Conv2d(c3, c3, rng)
        L["up2"] = nn.Conv2d(c3, c2, rng)
        L["up3"] = nn.Conv2d(c2, c1, rng)
        L["head"] = nn.Conv2d(c1, 3, rng, zero_init=True)
        L["tag_emb"] = nn.Embedding(n_tags, _EMB_DIM // 2, rng)
        for name, c in (("cond1", c2), ("cond2", c3), ("cond3", c3)):
            L[name] = nn.Linear(_EMB_DIM, c, rng, zero_init=True)
        self.layers = L

    def parameters(self):
        out = []
        for layer in self.layers.values():
            out.extend(layer.parameters())
        return out

    def named_weights(self):
        """Adapter hook points: every 2-D weight matrix by layer name."""
        return {name: layer.w for name, layer in self.layers.items()
                if isinstance(layer, (nn.Conv2d, nn.Linear))}

    def state_dict(self):
        d = {}
        for name, layer in self.layers.items():
            d[f"denoiser/{name}.w"] = layer.w.data
            if hasattr(layer, "b"):
                d[f"denoiser/{name}.b"] = layer.b.data
        return d

    def load_state_dict(self, d):
        for name, layer in self.layers.items():
            layer.w.data = np.array(d[f"denoiser/{name}.w"], np.float32)
            if hasattr(layer, "b"):
                layer.b.data = np.array(d[f"denoiser/{name}.b"], np.float32)

    def checksum(self):
        acc = 0.0
        for p in self.parameters():
            acc += float(np.float64(np.abs(p.data).sum()))
        return acc

    def __call__(self, z, pose, t, tags, deltas=None):
        """z, pose: Tensor[B,3,H,W]; t: int array [B]; tags: int array [B].

        `deltas` maps layer name -> additive weight delta (adapter path).
        """
        deltas = deltas or {}
        L = self.layers

        def conv(name, x):
            return L[name](x, deltas.get(name))

        emb_t = Tensor(_time_features(t, steps=1000))
        emb_tag = L["tag_emb"](tags)
        emb = ad.concat([emb_t, emb_tag], axis=1)

        def cond(name, x):
            bias = L[name](emb, deltas.get(name))
            b, c = bias.shape
            return x + bias.reshape(b, c, 1, 1)

        x = ad.concat([z, pose], axis=1)
        h0 = conv("enc0", x).relu()
        h1 = cond("cond1", conv("down1", h0)).relu()
        h1 = conv("block1", h1).relu()
        h2 = cond("cond2", conv("down2", h1)).relu()
        h2 = conv("block2", h2).relu()
        h3 = cond("cond3", conv("down3", h2)).relu()
        h3 = conv("mid", h3).relu()
        u1 = (conv("up1", nn.upsample2(h3)) + h2).relu()
        u2 = (conv("up2", nn.upsample2(u1)) + h1).relu()
        u3 = (conv("up3", nn.upsample2(u2)) + h0).relu()
        return conv("head", u3)


class DenoiserBundle:
    """A denoiser plus the adapter deltas that should be active.

    Exposes the inference-only `predict` used by score distillation and
    DDIM sampling (plain ndarrays in, ndarray out, no graph).
    """

    def __init__(self, denoiser, adapters=None, active=()):
        self.denoiser = denoiser
        self.adapters = adapters
        self.active = tuple(active)

    def deltas(self):
        if self.adapters is None or not self.active:
            return {}
        return self.adapters.combined_deltas(self.active)

    def predict(self, z, pose, t, tags):
        deltas = {k: Tensor(v.data) for k, v in self.deltas().items()}
        out = self.denoiser(Tensor(z), Tensor(pose), t, tags, deltas)
        return out.data


def _to_chw(img):
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)), np.float32)


def _from_chw(img):
    return np.ascontiguousarray(np.transpose(img, (1, 2, 0)), np.float32)


def train_denoiser(dataset, schedule, steps, rng, batch=4, lr=2e-3,
                   n_tags=8, base=16, log_every=200, denoiser=None):
    """Standard eps-prediction training on (image, pose, tag_id) triples.

    Images are [H, W, 3] floats in [0, 1], shared resolution. Returns the
    trained Denoiser; loss curve entries go to the module logger.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    shapes = {img.shape for img, _, _ in dataset}
    if len(shapes) != 1:
        raise ValueError(f"mixed image resolutions: {sorted(shapes)}")
    net = denoiser or Denoiser(n_tags=n_tags, base=base,
                               rng=np.random.default_rng(rng.integers(2**31)))
    opt = AdamW(net.parameters(), lr=lr)
    imgs = np.stack([_to_chw(img) for img, _, _ in dataset]) * 2.0 - 1.0
    poses = np.stack([_to_chw(p) for _, p, _ in dataset])
    tags = np.array([t for _, _, t in dataset], np.int64)
    for step in range(steps):
        pick = rng.integers(0, len(dataset), batch)
        t = rng.integers(0, schedule.steps, batch)
        eps = rng.standard_normal((batch,) + imgs.shape[1:]).astype(np.float32)
        a = schedule.alpha_bar[t].reshape(-1, 1, 1, 1)
        z = np.sqrt(a) * imgs[pick] + np.sqrt(1.0 - a) * eps
        pred = net(Tensor(z), Tensor(poses[pick]), t, tags[pick])
        loss = ((pred - Tensor(eps)) ** 2.0).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("denoiser step %d loss %.4f", step, float(loss.data))
    return net


def denoising_loss(bundle, dataset, schedule, rng, n_draws=64):
    """Mean eps-prediction error of a bundle on a dataset (evaluation)."""
    imgs = np.stack([_to_chw(img) for img, _, _ in dataset]) * 2.0 - 1.0
    poses = np.stack([_to_chw(p) for _, p, _ in dataset])
    tags = np.array([t for _, _, t in dataset], np.int64)
    total = 0.0
    for _ in range(n_draws):
        i = int(rng.integers(0, len(dataset)))
        t = np.array([rng.integers(0, schedule.steps)])
        eps = rng.standard_normal((1,) + imgs.shape[1:]).astype(np.float32)
        a = schedule.alpha_bar[t].reshape(-1, 1, 1, 1)
        z = np.sqrt(a) * imgs[i:i + 1] + np.sqrt(1.0 - a) * eps
        pred = bundle.predict(z, poses[i:i + 1], t, tags[i:i + 1])
        total += float(np.mean((pred - eps) ** 2))
    return total / n_draws


def sds_grad(render, bundle, tag, pose, schedule, rng, t_range=None,
             t_fixed=None, eps_fixed=None):
    """Score-distillation loss node for a render Tensor[H, W, 3] in [0, 1].

    Samples t and eps, forms the noisy image of the [-1, 1] rescaled
    render, and injects w(t) * (eps_hat - eps) as the gradient with
    respect to the render. `t_fixed` / `eps_fixed` pin the draw for tests.
    """
    lo, hi = t_range if t_range is not None else (schedule.t_min,
                                                  schedule.t_max)
    if not 0 <= lo <= hi < schedule.steps:
        raise ValueError(f"timestep range [{lo}, {hi}] outside schedule")
    t = int(t_fixed) if t_fixed is not None else int(rng.integers(lo, hi + 1))
    if not lo <= t <= hi and t_fixed is None:
        raise ValueError("sampled timestep outside range")
    x = render.data * 2.0 - 1.0
    x = _to_chw(x)[None]
    eps = np.asarray(eps_fixed, np.float32).reshape(x.shape) \
        if eps_fixed is not None \
        else rng.standard_normal(x.shape).astype(np.float32)
    z = schedule.noisy(x, eps, t).astype(np.float32)
    pose_in = _to_chw(pose)[None]
    eps_hat = bundle.predict(z, pose_in, np.array([t]), np.array([tag]))
    g = schedule.weight(t) * (eps_hat[0] - eps[0])
    return ad.inject_grad(render, _from_chw(g))


def ddim_sample(bundle, tag, pose, schedule, steps=50, seed=0, size=64,
                x_init=None):
    """Deterministic (eta = 0) sampling; output image [H, W, 3] in [0, 1]."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, size, size)).astype(np.float32) \
        if x_init is None else np.asarray(x_init, np.float32)
    pose_in = _to_chw(pose)[None]
    ts = np.linspace(schedule.steps - 1, 0, steps + 1).round().astype(int)
    tags = np.array([tag])
    for i in range(len(ts) - 1):
        t, t_next = int(ts[i]), int(ts[i + 1])
        a = schedule.alpha_bar[t]
        eps_hat = bundle.predict(x, pose_in, np.array([t]), tags)
        x0 = (x - np.sqrt(1.0 - a) * eps_hat) / np.sqrt(a)
        # clip-denoised keeps the huge 1/sqrt(a) amplification at large t
        # from derailing the trajectory
        x0 = np.clip(x0, -1.0, 1.0)
        if i == len(ts) - 2:
            x = x0  # final hop lands on the clean estimate
        else:
            a_next = schedule.alpha_bar[t_next]
            eps_dir = (x - np.sqrt(a) * x0) / np.sqrt(1.0 - a)
            x = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps_dir
    img = np.clip((_from_chw(x[0]) + 1.0) / 2.0, 0.0, 1.0)
    return img.astype(np.float32)


class AnalyticGaussianDenoiser:
    """Closed-form optimal denoiser for a Gaussian image prior N(y, s^2 I).

    eps_hat(z_t, t) = (z_t - sqrt(a) * x0_hat) / sqrt(1 - a) with
    x0_hat = (s^2 sqrt(a) z_t + (1 - a) y) / (a s^2 + 1 - a). With s = 0
    this is the exact score of a point mass at y. `target` may be a fixed
    [H, W, 3] image in [0, 1] or a callable pose -> image so the prior can
    follow per-view references.
    """

    def __init__(self, target, schedule, sigma0=0.0):
        self.target = target
        self.schedule = schedule
        self.sigma0 = float(sigma0)

    def predict(self, z, pose, t, tags):
        if callable(self.target):
            y_img = self.target(_from_chw(pose[0]))
        else:
            y_img = self.target
        y = (_to_chw(np.asarray(y_img, np.float32)) * 2.0 - 1.0)[None]
        a = self.schedule.alpha_bar[np.asarray(t)].reshape(-1, 1, 1, 1)
        s2 = self.sigma0 ** 2
        x0_hat = (s2 * np.sqrt(a) * z + (1.0 - a) * y) / (a * s2 + 1.0 - a)
        return ((z - np.sqrt(a) * x0_hat)
                / np.sqrt(1.0 - a)).astype(np.float32)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, np.float64)
                         - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
