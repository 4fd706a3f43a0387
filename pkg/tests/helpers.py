"""Shared test oracles: brute-force convolution and finite-difference gradients."""

import numpy as np

from adlraw.engine import mul, record, tsum
from adlraw.engine.tensor import Tensor


def conv_ref(x, w, stride=1, pad=0):
    """Direct 6-nested-loop convolution, the reference for conv2d."""
    n, ci, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for b in range(n):
        for oo in range(o):
            for r in range(oh):
                for q in range(ow):
                    acc = 0.0
                    for i in range(ci):
                        for a in range(kh):
                            for c in range(kw):
                                acc += xp[b, i, r * stride + a, q * stride + c] * w[oo, i, a, c]
                    y[b, oo, r, q] = acc
    return y


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numerical_grads(loss_fn, tensors, h=1e-3):
    """Central finite differences of loss_fn() w.r.t. each listed tensor.

    Tensors must be float64 (shadow mode); loss_fn re-runs the forward pass
    reading their current .data.
    """
    grads = []
    for t in tensors:
        assert t.data.dtype == np.float64, "shadow-mode gradient checks need float64"
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, params, h=1e-3, tol=1e-4):
    """Assert analytic gradients match central differences for all params.

    build_loss() runs a fresh recorded forward pass and returns the scalar
    loss tensor; params is the list of float64 tensors to differentiate.
    """
    for p in params:
        p.grad = None
    with record() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    numeric = numerical_grads(lambda: float(build_loss().data), params, h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(rel_err(a, n).max()))
    assert worst < tol, f"gradient mismatch: worst rel err {worst:.3e} >= {tol}"
    return worst


def rand_tensor(rng, shape, dtype=np.float64, requires_grad=True, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=requires_grad, dtype=dtype)


def randomize_params(model, rng, scale=1.0):
    for _, p in model.parameters():
        p.data[...] = scale * rng.standard_normal(p.data.shape)


def kink_margin(fn):
    """Smallest distance of any relu pre-activation / l1 difference to its
    kink during one evaluation of fn()."""
    from adlraw.engine import tensor as tensor_mod

    tensor_mod.KINK_MARGINS = []
    try:
        fn()
        return min(tensor_mod.KINK_MARGINS) if tensor_mod.KINK_MARGINS else np.inf
    finally:
        tensor_mod.KINK_MARGINS = None


def full_model_grad_check(config_seed, h=1e-4, tol=1e-4):
    """One full-network finite-difference check in 64-bit shadow mode.

    The network is piecewise linear (relu, l1), so the check must run at a
    point whose kink margins exceed the perturbation; configurations are
    resampled (natural init, plus a non-zero final layer) until they do.
    Returns the worst relative error over every parameter.
    """
    from adlraw.engine import l1_loss, record
    from adlraw.modnet import MetaEncoder, ModulatedDenoiser

    enc = MetaEncoder([0, 1])
    rng = np.random.default_rng(np.random.SeedSequence([config_seed, 0xFD]))
    meta = np.stack([enc.encode(int(rng.integers(0, 2)), 1600, dtype=np.float64)])
    x = Tensor(rng.random((1, 4, 8, 8)), dtype=np.float64)
    target = Tensor(np.zeros((1, 4, 8, 8)), dtype=np.float64)
    model = None

    def loss_fn():
        return l1_loss(model.forward(x, meta), target)

    for attempt in range(400):
        model = ModulatedDenoiser(n_sensors=2, widths=(4, 4, 4),
                                  seed=int(rng.integers(0, 2**31)), dtype=np.float64)
        # the final conv is zero-initialized, which makes every upstream
        # gradient vacuously zero; give it natural-scale weights instead
        w, b = model.dec[2].w, model.dec[2].b
        fan_in = w.data.shape[1] * 9
        w.data[...] = rng.uniform(-1, 1, w.data.shape) / np.sqrt(fan_in)
        b.data[...] = rng.uniform(-1, 1, b.data.shape) / np.sqrt(fan_in)
        out0 = model.forward(x, meta).data
        target.data[...] = out0 - (0.3 + 0.4 * rng.random(out0.shape)) * np.where(
            rng.random(out0.shape) < 0.5, -1.0, 1.0)
        if kink_margin(loss_fn) > 50 * h:
            break
    else:
        raise AssertionError("no kink-free configuration found")

    params = model.param_tensors()
    for p in params:
        p.grad = None
    with record() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = numerical_grads(lambda: float(loss_fn().data), params, h=h)
    return max(float(rel_err(a, n).max()) for a, n in zip(analytic, numeric))


def scalar_loss(out):
    """Reduce any op output to a scalar through a fixed smooth projection
    (plain weighted sum, so finite differences see no kinks)."""
    rng = np.random.default_rng(0xC0FFEE)
    w = rng.uniform(0.5, 1.5, size=out.data.shape) * np.where(
        rng.uniform(size=out.data.shape) < 0.5, -1.0, 1.0)
    return tsum(mul(out, Tensor(w, dtype=out.data.dtype)))
