"""Optimizers and training-state snapshots.

AdamW (decoupled weight decay) is the default; plain SGD is available behind
the same interface. Snapshots capture parameter bytes plus the optimizer's
moment buffers and step counter so a restore is an exact rollback.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .tensor import ensure_finite


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractViolation(f"adamw step with missing gradient on parameter {i}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update
            ensure_finite(p.data, "parameter after adamw step")

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        return list(self.m) + list(self.v)


class SGD:
    """Plain gradient step, for the single-learning-rate variant."""

    def __init__(self, params, lr=3e-3, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractViolation(f"sgd step with missing gradient on parameter {i}")
        self.step_count += 1
        for p in self.params:
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data -= self.lr * g
            ensure_finite(p.data, "parameter after sgd step")

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        return []


def make_optimizer(params, kind="adamw", lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                   weight_decay=0.01):
    if kind == "adamw":
        return AdamW(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(params, lr=lr, weight_decay=weight_decay)
    raise ContractViolation(f"unknown optimizer kind {kind!r}")


@dataclass
class ParamSnapshot:
    """Frozen copy of model parameters and optimizer state."""

    shapes: tuple
    params: list
    opt_state: list
    step_count: int


def snapshot_params(model, optimizer=None):
    """Copy every parameter (and optimizer buffer) byte-for-byte."""
    params = [p for _, p in model.parameters()]
    opt_arrays = optimizer.state_arrays() if optimizer is not None else []
    return ParamSnapshot(
        shapes=tuple(p.data.shape for p in params),
        params=[p.data.copy() for p in params],
        opt_state=[a.copy() for a in opt_arrays],
        step_count=optimizer.step_count if optimizer is not None else 0,
    )


def restore_params(model, snapshot, optimizer=None):
    """Exact rollback to a snapshot taken from the same architecture."""
    params = [p for _, p in model.parameters()]
    if tuple(p.data.shape for p in params) != snapshot.shapes:
        raise ContractViolation("restore_params: snapshot architecture does not match model")
    for p, saved in zip(params, snapshot.params):
        np.copyto(p.data, saved)
    if optimizer is not None:
        arrays = optimizer.state_arrays()
        if len(arrays) != len(snapshot.opt_state):
            raise ContractViolation("restore_params: snapshot optimizer state does not match optimizer")
        for a, saved in zip(arrays, snapshot.opt_state):
            np.copyto(a, saved)
        optimizer.step_count = snapshot.step_count
