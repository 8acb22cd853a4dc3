import copy

import numpy as np

from ..errors import MissingGrad


class Optimizer:
    _state_keys = ()

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)

    def _check_grads(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGrad(f"parameter {i} with shape {p.shape} has no gradient")

    def zero_grad(self):
        for p in self.params:
            if p.grad is not None:
                p.grad.fill(0)

    def step(self):
        self._check_grads()
        self._update()
        self.zero_grad()

    def _update(self):
        raise NotImplementedError

    def state(self):
        """Deep copy of the moment buffers and step counter."""
        return copy.deepcopy({k: getattr(self, k) for k in self._state_keys})

    def load_state(self, state):
        for k, v in state.items():
            setattr(self, k, copy.deepcopy(v))


class SGD(Optimizer):
    """Plain gradient descent: ``p -= lr * grad``."""

    def _update(self):
        for p in self.params:
            p.data -= (self.lr * p.grad).astype(p.dtype, copy=False)


class Adam(Optimizer):
    _state_keys = ("t", "m", "v")

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            step = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= step.astype(p.dtype, copy=False)


def make_optimizer(name, params, lr):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
