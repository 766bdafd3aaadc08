"""Low-rank adapters over a frozen denoiser.

Every adapted weight W [out, in] gets factors A [out, r] (zero-initialized)
and B [r, in]; the effective weight is W + (alpha / r) * A @ B. The base is
never mutated: deltas are composed per forward pass, and multiple active
adapters sum their deltas before the single add onto W.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import AdamW


class AdapterEntry:
    def __init__(self, name, rank, alpha, factors):
        self.name = name
        self.rank = int(rank)
        self.alpha = float(alpha)
        self.factors = factors  # layer name -> (A Tensor, B Tensor)

    def parameters(self):
        out = []
        for a, b in self.factors.values():
            out.extend([a, b])
        return out

    def delta(self, layer):
        a, b = self.factors[layer]
        return ad.matmul(a, b) * (self.alpha / self.rank)


class AdapterSet:
    """Named adapters keyed "concept:<tag>" or "normal-style"."""

    def __init__(self):
        self.entries = {}

    def __contains__(self, name):
        return name in self.entries

    def names(self):
        return sorted(self.entries)

    def add(self, name, denoiser, rank=4, alpha=None, rng=None, layers=None):
        """Register zero-delta factors for every hooked weight of the net."""
        rng = rng or np.random.default_rng(0)
        alpha = float(rank) if alpha is None else float(alpha)
        factors = {}
        hooks = denoiser.named_weights()
        for lname, w in hooks.items():
            if layers is not None and lname not in layers:
                continue
            out_dim, in_dim = w.data.shape
            if rank > min(out_dim, in_dim):
                raise ValueError(
                    f"rank {rank} exceeds min dim of {lname} "
                    f"({out_dim}x{in_dim})")
            a = Tensor(np.zeros((out_dim, rank), np.float32),
                       requires_grad=True, name=f"{name}/{lname}.A")
            b = Tensor((rng.standard_normal((rank, in_dim))
                        / np.sqrt(in_dim)).astype(np.float32),
                       requires_grad=True, name=f"{name}/{lname}.B")
            factors[lname] = (a, b)
        entry = AdapterEntry(name, rank, alpha, factors)
        self.entries[name] = entry
        return entry

    def combined_deltas(self, active):
        """Summed per-layer deltas of the active adapters (graph Tensors)."""
        for name in active:
            if name not in self.entries:
                raise KeyError(f"unknown adapter {name!r}; have "
                               f"{self.names()}")
        out = {}
        for name in active:
            for lname in self.entries[name].factors:
                d = self.entries[name].delta(lname)
                out[lname] = d if lname not in out else out[lname] + d
        return out

    def state_dict(self):
        d = {}
        for name, e in self.entries.items():
            d[f"adapter:{name}/meta"] = np.array([e.rank, e.alpha], np.float32)
            for lname, (a, b) in e.factors.items():
                d[f"adapter:{name}/{lname}.A"] = a.data
                d[f"adapter:{name}/{lname}.B"] = b.data
        return d

    def load_state_dict(self, d, denoiser):
        for key in [k for k in d if k.endswith("/meta")]:
            name = key[len("adapter:"):-len("/meta")]
            rank, alpha = d[key]
            entry = self.add(name, denoiser, rank=int(rank), alpha=alpha)
            for lname, (a, b) in entry.factors.items():
                a.data = np.array(d[f"adapter:{name}/{lname}.A"], np.float32)
                b.data = np.array(d[f"adapter:{name}/{lname}.B"], np.float32)


def train_adapter(denoiser, adapters, name, dataset, schedule, rng,
                  steps=400, rank=4, alpha=None, batch=4, lr=2e-3,
                  log_every=100):
    """Fit one adapter on a concept dataset with the base frozen.

    Only the A/B factors receive gradients; base parameters keep
    requires_grad but are excluded from the optimizer, and the graph adds
    deltas without touching W. Returns the new AdapterEntry.
    """
    import logging
    log = logging.getLogger("tetsculpt.lora")
    if not dataset:
        raise ValueError("concept dataset is empty")
    entry = adapters.add(name, denoiser, rank=rank, alpha=alpha,
                         rng=np.random.default_rng(rng.integers(2**31)))
    opt = AdamW(entry.parameters(), lr=lr)
    imgs = np.stack([np.transpose(img, (2, 0, 1)) for img, _, _ in dataset]
                    ).astype(np.float32) * 2.0 - 1.0
    poses = np.stack([np.transpose(p, (2, 0, 1)) for _, p, _ in dataset]
                     ).astype(np.float32)
    tags = np.array([t for _, _, t in dataset], np.int64)
    for p in denoiser.parameters():
        p.requires_grad = False
    try:
        for step in range(steps):
            pick = rng.integers(0, len(dataset), batch)
            t = rng.integers(0, schedule.steps, batch)
            eps = rng.standard_normal(
                (batch,) + imgs.shape[1:]).astype(np.float32)
            a = schedule.alpha_bar[t].reshape(-1, 1, 1, 1)
            z = np.sqrt(a) * imgs[pick] + np.sqrt(1.0 - a) * eps
            deltas = adapters.combined_deltas([name])
            pred = denoiser(Tensor(z), Tensor(poses[pick]), t, tags[pick],
                            deltas)
            loss = ((pred - Tensor(eps)) ** 2.0).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log_every and (step % log_every == 0 or step == steps - 1):
                log.info("adapter %s step %d loss %.4f", name, step,
                         float(loss.data))
    finally:
        for p in denoiser.parameters():
            p.requires_grad = True
    return entry
