import numpy as np

from tetsculpt.autodiff import Tensor
from tetsculpt.optim import AdamW, adamw_step, init_state


def test_zero_grad_only_decays():
    p = Tensor(np.array([1.0, -2.0], np.float32), requires_grad=True)
    st = init_state([p])
    adamw_step([p], [np.zeros(2, np.float32)], st, lr=0.1, weight_decay=0.1)
    assert np.allclose(p.data, [1.0 - 0.01, -2.0 + 0.02], atol=1e-6)
    # no decay -> fully unchanged
    q = Tensor(np.array([1.0], np.float32), requires_grad=True)
    st = init_state([q])
    adamw_step([q], [np.zeros(1, np.float32)], st, lr=0.1)
    assert np.allclose(q.data, [1.0])


def test_constant_gradient_step_approaches_lr_sign():
    p = Tensor(np.array([0.0], np.float32), requires_grad=True)
    g = np.array([0.37], np.float32)
    st = init_state([p])
    prev = p.data.copy()
    for _ in range(300):
        prev = p.data.copy()
        adamw_step([p], [g], st, lr=1e-2)
    step = prev - p.data
    assert np.allclose(step, 1e-2 * np.sign(g), rtol=1e-3)


def test_quadratic_bowl_converges():
    target = np.array([0.3, -0.7, 0.5], np.float32)
    p = Tensor(np.zeros(3, np.float32), requires_grad=True)
    st = init_state([p])
    for _ in range(500):
        g = 2.0 * (p.data - target)
        adamw_step([p], [g], st, lr=1e-2)
    assert np.max(np.abs(p.data - target)) < 1e-3


def test_nan_gradient_skips_step_but_counts():
    p = Tensor(np.array([1.0], np.float32), requires_grad=True)
    st = init_state([p])
    adamw_step([p], [np.array([np.nan], np.float32)], st, lr=0.1)
    assert st["step"] == 1
    assert np.allclose(p.data, [1.0])
    assert np.allclose(st["m"][0], 0.0)


def test_replay_determinism():
    def run():
        p = Tensor(np.array([0.5, -0.5], np.float32), requires_grad=True)
        st = init_state([p])
        rng = np.random.default_rng(7)
        for _ in range(50):
            g = rng.standard_normal(2).astype(np.float32)
            adamw_step([p], [g], st, lr=3e-3, weight_decay=0.01)
        return p.data.copy(), st

    a, sa = run()
    b, sb = run()
    assert np.array_equal(a, b)
    assert np.array_equal(sa["m"][0], sb["m"][0])
    assert np.array_equal(sa["v"][0], sb["v"][0])


def test_wrapper_handles_missing_grads():
    p = Tensor(np.ones(2, np.float32), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    opt.step()  # grad is None -> treated as zeros
    assert np.allclose(p.data, 1.0)
