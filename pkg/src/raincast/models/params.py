"""Named learnable tensors plus non-learnable buffers (normalization statistics)."""
from __future__ import annotations

import numpy as np

from ..tensor import BatchNormState, Tensor


class ParamSet:
    def __init__(self, params=None, buffers=None):
        self.params = dict(params or {})
        self.buffers = dict(buffers or {})

    def add(self, name, array, dtype=np.float32):
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = Tensor(np.asarray(array, dtype=dtype), requires_grad=True, name=name)
        return self.params[name]

    def add_buffer(self, name, array, dtype=np.float32):
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.buffers[name] = np.asarray(array, dtype=dtype).copy()

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def bn_state(self, prefix, momentum=0.1):
        # arrays are shared, so batch_norm's in-place update lands in the buffers
        return BatchNormState(self.buffers[f"{prefix}.running_mean"],
                              self.buffers[f"{prefix}.running_var"], momentum)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self):
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}

    def copy(self):
        out = ParamSet()
        for k, t in self.params.items():
            out.add(k, t.data.copy(), t.dtype)
        for k, b in self.buffers.items():
            out.add_buffer(k, b, b.dtype)
        return out

    def astype(self, dtype):
        out = ParamSet()
        for k, t in self.params.items():
            out.add(k, t.data, dtype)
        for k, b in self.buffers.items():
            out.add_buffer(k, b, dtype)
        return out

    def state_arrays(self):
        """Flat name -> array map covering params and buffers, for serialization."""
        arrays = {f"param/{k}": t.data for k, t in self.params.items()}
        arrays.update({f"buffer/{k}": b for k, b in self.buffers.items()})
        return arrays

    @classmethod
    def from_state_arrays(cls, arrays):
        out = cls()
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            if kind == "param":
                out.add(name, arr)
            elif kind == "buffer":
                out.add_buffer(name, arr)
        return out


def param_count(params):
    """Total number of learnable scalars."""
    return int(sum(t.size for t in params.params.values()))


class Initializer:
    """Seeded He-normal / zero / one initialization helpers."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.params = ParamSet()

    def he(self, name, shape, fan_in):
        return self.params.add(name, self.rng.normal(0.0, np.sqrt(2.0 / fan_in), shape))

    def normal(self, name, shape, std):
        return self.params.add(name, self.rng.normal(0.0, std, shape))

    def xavier(self, name, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.params.add(name, self.rng.uniform(-limit, limit, (fan_in, fan_out)))

    def zeros(self, name, shape):
        return self.params.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.params.add(name, np.ones(shape))

    def batch_norm(self, prefix, channels):
        self.ones(f"{prefix}.gamma", (channels,))
        self.zeros(f"{prefix}.beta", (channels,))
        self.params.add_buffer(f"{prefix}.running_mean", np.zeros(channels))
        self.params.add_buffer(f"{prefix}.running_var", np.ones(channels))

    def layer_norm(self, prefix, channels):
        self.ones(f"{prefix}.gamma", (channels,))
        self.zeros(f"{prefix}.beta", (channels,))

    def linear(self, prefix, fan_in, fan_out, bias=True):
        self.xavier(f"{prefix}.w", fan_in, fan_out)
        if bias:
            self.zeros(f"{prefix}.b", (fan_out,))
