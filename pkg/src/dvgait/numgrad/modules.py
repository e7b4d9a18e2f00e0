"""Layer modules: parameter registration, train/eval mode, state dicts."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter:
    """Trainable tensor plus its name and Adam moment buffers."""

    def __init__(self, data, name=""):
        self.tensor = Tensor(np.asarray(data), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.tensor.shape})"


class Module:
    """Container of parameters and submodules with a shared training flag."""

    buffer_names = ()

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{attr}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for attr in self.buffer_names:
            yield f"{prefix}{attr}", getattr(self, attr)
        for attr, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{attr}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, flag=True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def assign_parameter_names(self, root):
        """Give every parameter its dotted path, e.g. ``G.e3.weight``."""
        for name, p in self.named_parameters(f"{root}."):
            p.name = name

    def state_dict(self, prefix=""):
        state = {name: p.tensor.data for name, p in self.named_parameters(prefix)}
        state.update({name: buf for name, buf in self.named_buffers(prefix)})
        return state

    def load_state_dict(self, state, prefix=""):
        own = {name: p.tensor for name, p in self.named_parameters(prefix)}
        own.update({name: buf for name, buf in self.named_buffers(prefix)})
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing {missing}, unexpected {extra}")
        for name, target in own.items():
            arr = np.asarray(state[name])
            if isinstance(target, Tensor):
                if arr.shape != target.data.shape:
                    raise ValueError(
                        f"{name}: shape {arr.shape} does not match {target.data.shape}"
                    )
                target.data = arr.astype(target.data.dtype)
            else:
                if arr.shape != target.shape:
                    raise ValueError(f"{name}: shape {arr.shape} does not match {target.shape}")
                target[...] = arr

    def freeze(self):
        for p in self.parameters():
            p.tensor.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.tensor.requires_grad = True


class frozen:
    """Temporarily exclude the modules' parameters from gradient tracking.

    Activations still carry gradients through the frozen layers, so an
    adversarial term can reach the generator without training the judge.
    """

    def __init__(self, *mods):
        self.mods = mods

    def __enter__(self):
        for m in self.mods:
            m.freeze()
        return self

    def __exit__(self, *exc):
        for m in self.mods:
            m.unfreeze()
        return False


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, weight_std=None, dtype=np.float32):
        super().__init__()
        if weight_std is None:
            weight_std = float(np.sqrt(2.0 / (in_ch * kernel * kernel)))
        self.stride = stride
        self.padding = padding
        w = rng.normal(0.0, weight_std, size=(out_ch, in_ch, kernel, kernel))
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))

    def forward(self, x):
        return F.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.padding)

    __call__ = forward


class Deconv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, weight_std=None, dtype=np.float32):
        super().__init__()
        if weight_std is None:
            weight_std = float(np.sqrt(2.0 / (in_ch * kernel * kernel)))
        self.stride = stride
        self.padding = padding
        w = rng.normal(0.0, weight_std, size=(in_ch, out_ch, kernel, kernel))
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))

    def forward(self, x):
        return F.deconv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.padding)

    __call__ = forward


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x):
        return F.batchnorm2d(
            x,
            self.gamma.tensor,
            self.beta.tensor,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    __call__ = forward


class Dense(Module):
    def __init__(self, in_dim, out_dim, rng, weight_std=None, dtype=np.float32):
        super().__init__()
        if weight_std is None:
            weight_std = float(np.sqrt(1.0 / in_dim))
        w = rng.normal(0.0, weight_std, size=(in_dim, out_dim))
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype))

    def forward(self, x):
        return F.dense(x, self.weight.tensor, self.bias.tensor)

    __call__ = forward


class PReLU(Module):
    def __init__(self, channels, init=0.25, dtype=np.float32):
        super().__init__()
        self.slopes = Parameter(np.full(channels, init, dtype=dtype))

    def forward(self, x):
        return F.prelu(x, self.slopes.tensor)

    __call__ = forward
