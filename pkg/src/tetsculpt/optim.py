"""AdamW with decoupled weight decay.

The update is a pure function of (params, grads, state, config) so that
replaying the same inputs reproduces the same outputs bit for bit. A step
whose gradients contain NaN/Inf is skipped (logged), but the step counter
still advances.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger("tetsculpt.optim")


def init_state(params):
    return {
        "step": 0,
        "m": [np.zeros_like(p.data) for p in params],
        "v": [np.zeros_like(p.data) for p in params],
    }


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0):
    """One AdamW update in place on `params`. Returns the mutated state.

    `grads` is a list of arrays aligned with `params`. Any non-finite
    gradient skips the whole update (moments untouched) while the step
    counter still advances, keeping iteration counts comparable.
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    state["step"] += 1
    t = state["step"]
    for g, p in zip(grads, params):
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match param {p.data.shape}")
    if any(not np.isfinite(g).all() for g in grads):
        log.warning("non-finite gradient at step %d: update skipped", t)
        return state

    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        upd = mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            upd = upd + weight_decay * p.data
        p.data -= np.float32(lr) * upd.astype(np.float32)
    return state


class AdamW:
    """Thin stateful wrapper used by the training loops."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = init_state(self.params)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adamw_step(self.params, grads, self.state, self.lr, self.betas,
                   self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
