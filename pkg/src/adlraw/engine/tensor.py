"""Dense float tensors with reverse-mode automatic differentiation.

The engine is define-by-run: while a Tape is active (see ``record()``), every
op appends its backward rule to the tape, which is therefore topologically
ordered by construction. ``backward(loss)`` walks the tape in reverse and
accumulates gradients into every reachable tensor with ``requires_grad``.

Training runs in float32; for finite-difference gradient checks the same ops
run unchanged on float64 data (64-bit shadow mode).
"""

from contextlib import contextmanager

import numpy as np

from ..errors import ContractViolation

# Per-op finiteness checks. Cheap at desk scale; can be switched off for
# long experiment sweeps.
CHECK_FINITE = True

# When a list, kinked ops (relu, l1) append their distance to the nearest
# kink. Gradient checks use it to pick configurations where central
# differences are valid.
KINK_MARGINS = None

_ACTIVE_TAPE = None


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


def ensure_finite(arr, what):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise ContractViolation(f"non-finite values in {what}")


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad=False, dtype=np.float32, _check=True):
        self.data = _as_array(data, dtype)
        if _check:
            ensure_finite(self.data, "tensor data")
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractViolation(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # ops.py installs arithmetic dunders (__add__ etc.) to avoid an import cycle.


class Tape:
    """Topologically ordered record of backward rules for one forward pass."""

    def __init__(self):
        self._rules = []
        self.consumed = False

    def __len__(self):
        return len(self._rules)

    def record(self, rule):
        self._rules.append(rule)

    def backward(self, loss):
        if self.consumed:
            raise ContractViolation("backward() called twice on one tape")
        if loss.data.size != 1:
            raise ContractViolation(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self._rules:
            raise ContractViolation("backward() on an empty tape")
        loss.grad = np.ones_like(loss.data)
        for rule in reversed(self._rules):
            rule()
        self.consumed = True


@contextmanager
def record():
    """Activate a fresh tape for the duration of the block."""
    global _ACTIVE_TAPE
    prev = _ACTIVE_TAPE
    tape = Tape()
    _ACTIVE_TAPE = tape
    try:
        yield tape
    finally:
        _ACTIVE_TAPE = prev


def active_tape():
    return _ACTIVE_TAPE


def backward(loss):
    """Run backpropagation from a recorded scalar loss."""
    if loss.tape is None:
        raise ContractViolation("backward() on a tensor with no recorded tape")
    loss.tape.backward(loss)


def make_node(data, inputs, backward_rule, check=True):
    """Wrap an op result, recording its backward rule on the active tape.

    ``backward_rule(out)`` must read ``out.grad`` and accumulate into each
    input that has ``requires_grad``.
    """
    if check:
        ensure_finite(data, "op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.tape = None
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        out.tape = tape

        def _run():
            # outputs never reached by the loss carry no gradient
            if out.grad is not None:
                backward_rule(out)

        tape.record(_run)
    return out
