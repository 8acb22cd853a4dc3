import numpy as np

from ..autodiff import Tensor, get_default_dtype
from ..params import ParameterSet


class Module:
    """Minimal container tracking parameters, buffers and child modules.

    Parameters and buffers are kept in one registration-ordered list so
    :meth:`parameter_set` is deterministic; BN running statistics travel in
    the same snapshot as the learnable weights.
    """

    def __init__(self):
        object.__setattr__(self, "_state", [])  # (name, kind) with kind param|buffer|module
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        kinds = {n for n, _ in self._state}
        if isinstance(value, Module):
            kind = "module"
        elif isinstance(value, Tensor) and value.requires_grad:
            kind = "param"
        else:
            kind = None
        if kind is not None and name not in kinds:
            self._state.append((name, kind))
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._state.append((name, "buffer"))
        object.__setattr__(self, name, np.asarray(array, dtype=get_default_dtype()))

    def named_children(self):
        return [(n, getattr(self, n)) for n, k in self._state if k == "module"]

    def named_state(self, prefix=""):
        """Yield ``(dotted_name, kind, value)`` depth-first in registration order."""
        for name, kind in self._state:
            value = getattr(self, name)
            full = f"{prefix}{name}"
            if kind == "module":
                yield from value.named_state(full + ".")
            else:
                yield full, kind, value

    def named_parameters(self):
        return [(n, v) for n, k, v in self.named_state() if k == "param"]

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def named_buffers(self):
        return [(n, v) for n, k, v in self.named_state() if k == "buffer"]

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def parameter_set(self):
        return ParameterSet(
            (n, (v.data if k == "param" else v).copy()) for n, k, v in self.named_state()
        )

    def load_parameter_set(self, params):
        """Copy values into the live arrays; optimizers keep their references."""
        self.parameter_set().check_compatible(params, who="load")
        for (name, kind, value), src in zip(self.named_state(), params.arrays()):
            target = value.data if kind == "param" else value
            np.copyto(target, src, casting="unsafe")

    def to_dtype(self, dtype):
        for m in self.modules():
            for name, kind in m._state:
                if kind == "param":
                    t = getattr(m, name)
                    t.data = t.data.astype(dtype)
                    t.grad = None
                elif kind == "buffer":
                    object.__setattr__(m, name, getattr(m, name).astype(dtype))
        return self

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng, shape, fan_in):
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape):
    return Tensor(np.ones(shape), requires_grad=True)
