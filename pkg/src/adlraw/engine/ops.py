"""Differentiable operations on Tensors.

Every op validates its contract, computes the forward value with numpy (or
the compiled conv kernels), and registers a backward rule on the active tape.
"""

import numpy as np

from ..errors import ContractViolation
from . import conv_backend
from . import tensor as tensor_mod
from .tensor import Tensor, make_node


def _shapes(*tensors):
    return " vs ".join(str(tuple(t.shape)) for t in tensors)


# ---------------------------------------------------------------------------
# convolution

def conv2d(x, w, bias=None, stride=1, pad=0):
    """2-D convolution, NCHW input against OIKK kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractViolation(f"conv2d needs 4-d input and kernel, got {_shapes(x, w)}")
    n, ci, h, wd = x.shape
    o, ki, kh, kw = w.shape
    if ci != ki:
        raise ContractViolation(f"conv2d channel mismatch: input {tuple(x.shape)} vs kernel {tuple(w.shape)}")
    if stride < 1 or pad < 0:
        raise ContractViolation(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ContractViolation(f"conv2d output would be empty for input {tuple(x.shape)}, kernel {tuple(w.shape)}")
    if bias is not None and bias.data.shape != (o,):
        raise ContractViolation(f"conv2d bias shape {tuple(bias.shape)} != ({o},)")

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    y = conv_backend.conv_forward(xp, w.data, stride)
    if bias is not None:
        y += bias.data.reshape(1, o, 1, 1)

    inputs = (x, w) if bias is None else (x, w, bias)

    def rule(out):
        gy = out.grad
        if w.requires_grad:
            w.accumulate_grad(conv_backend.conv_backward_weight(gy, xp, kh, kw, stride))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = conv_backend.conv_backward_input(gy, w.data, stride, xp.shape[2], xp.shape[3])
            if pad:
                gxp = gxp[:, :, pad:pad + h, pad:pad + wd]
            x.accumulate_grad(gxp)

    return make_node(y, inputs, rule)


# ---------------------------------------------------------------------------
# dense

def linear(x, w, b=None):
    """Affine map: (N, D) @ (D, E) + (E,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ContractViolation(f"linear shape mismatch: {_shapes(x, w)}")
    y = x.data @ w.data
    if b is not None:
        bv = b.data.reshape(-1)
        if bv.shape[0] != w.shape[1]:
            raise ContractViolation(f"linear bias shape {tuple(b.shape)} != ({w.shape[1]},)")
        y = y + bv

    inputs = (x, w) if b is None else (x, w, b)

    def rule(out):
        gy = out.grad
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ gy)
        if b is not None and b.requires_grad:
            b.accumulate_grad(gy.sum(axis=0).reshape(b.data.shape))
        if x.requires_grad:
            x.accumulate_grad(gy @ w.data.T)

    return make_node(y, inputs, rule)


# ---------------------------------------------------------------------------
# pointwise

def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ContractViolation(f"{op} shape mismatch: {_shapes(a, b)}")


def add(a, b):
    _same_shape(a, b, "add")

    def rule(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(out.grad)

    return make_node(a.data + b.data, (a, b), rule)


def sub(a, b):
    _same_shape(a, b, "sub")

    def rule(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(-out.grad)

    return make_node(a.data - b.data, (a, b), rule)


def mul(a, b):
    _same_shape(a, b, "mul")

    def rule(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad * b.data)
        if b.requires_grad:
            b.accumulate_grad(out.grad * a.data)

    return make_node(a.data * b.data, (a, b), rule)


def relu(x):
    mask = x.data > 0
    if tensor_mod.KINK_MARGINS is not None:
        tensor_mod.KINK_MARGINS.append(float(np.abs(x.data).min()))

    def rule(out):
        if x.requires_grad:
            x.accumulate_grad(out.grad * mask)

    return make_node(np.maximum(x.data, 0), (x,), rule)


def tanh(x):
    y = np.tanh(x.data)

    def rule(out):
        if x.requires_grad:
            x.accumulate_grad(out.grad * (1 - y * y))

    return make_node(y, (x,), rule)


def scale_shift(x, gamma, beta):
    """Per-channel affine on NCHW features: y[n,c] = gamma[n,c] * x[n,c] + beta[n,c].

    gamma/beta are (N, C) (one row per batch item) or (C,) shared over the
    batch; they broadcast over H and W.
    """
    if x.data.ndim != 4:
        raise ContractViolation(f"scale_shift needs NCHW input, got {tuple(x.shape)}")
    n, c = x.shape[:2]
    if gamma.data.shape != beta.data.shape:
        raise ContractViolation(f"scale_shift gamma/beta mismatch: {_shapes(gamma, beta)}")
    if gamma.data.shape == (n, c):
        g4 = gamma.data.reshape(n, c, 1, 1)
        b4 = beta.data.reshape(n, c, 1, 1)
        reduce_axes = (2, 3)
    elif gamma.data.shape == (c,):
        g4 = gamma.data.reshape(1, c, 1, 1)
        b4 = beta.data.reshape(1, c, 1, 1)
        reduce_axes = (0, 2, 3)
    else:
        raise ContractViolation(
            f"scale_shift: gamma shape {tuple(gamma.shape)} not broadcastable onto {tuple(x.shape)}")

    def rule(out):
        gy = out.grad
        if gamma.requires_grad:
            gamma.accumulate_grad((gy * x.data).sum(axis=reduce_axes).reshape(gamma.data.shape))
        if beta.requires_grad:
            beta.accumulate_grad(gy.sum(axis=reduce_axes).reshape(beta.data.shape))
        if x.requires_grad:
            x.accumulate_grad(gy * g4)

    return make_node(x.data * g4 + b4, (x, gamma, beta), rule)


def elementwise(kind, *operands):
    """Dispatch by op-kind name; the named functions are the primary API."""
    table = {
        "add": add,
        "sub": sub,
        "mul": mul,
        "tanh": tanh,
        "relu": relu,
        "broadcast-scale-shift": scale_shift,
    }
    if kind not in table:
        raise ContractViolation(f"unknown elementwise kind {kind!r}")
    return table[kind](*operands)


# ---------------------------------------------------------------------------
# structure

def upsample_nearest2(x):
    """Nearest-neighbour 2x spatial upsampling of NCHW."""
    if x.data.ndim != 4:
        raise ContractViolation(f"upsample_nearest2 needs NCHW, got {tuple(x.shape)}")
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def rule(out):
        if x.requires_grad:
            g = out.grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
            x.accumulate_grad(g)

    return make_node(y, (x,), rule)


def concat_channels(a, b):
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ContractViolation(f"concat_channels shape mismatch: {_shapes(a, b)}")
    ca = a.shape[1]

    def rule(out):
        if a.requires_grad:
            a.accumulate_grad(out.grad[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(out.grad[:, ca:])

    return make_node(np.concatenate([a.data, b.data], axis=1), (a, b), rule)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""

    def rule(out):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, out.grad.reshape(-1)[0]))

    return make_node(np.asarray(x.data.sum(), dtype=x.data.dtype).reshape(()), (x,), rule)


# ---------------------------------------------------------------------------
# losses

def l1_loss(pred, target):
    """Mean absolute difference; the subgradient at zero difference is 0."""
    _same_shape(pred, target, "l1_loss")
    diff = pred.data - target.data
    if tensor_mod.KINK_MARGINS is not None:
        tensor_mod.KINK_MARGINS.append(float(np.abs(diff).min()))
    val = np.asarray(np.abs(diff).mean(), dtype=pred.data.dtype).reshape(())

    def rule(out):
        g = out.grad.reshape(-1)[0] * np.sign(diff) / diff.size
        if pred.requires_grad:
            pred.accumulate_grad(g.astype(pred.data.dtype, copy=False))
        if target.requires_grad:
            target.accumulate_grad(-g.astype(target.data.dtype, copy=False))

    return make_node(val, (pred, target), rule)


# arithmetic sugar used in a few places (model residual add, tests)
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__mul__ = lambda self, other: mul(self, other)
