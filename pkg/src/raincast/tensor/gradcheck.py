"""Finite-difference verification of tape gradients."""
import numpy as np

from .core import Tensor, backward, no_grad


def grad_check(f, inputs, step=1e-3, floor=1e-6, max_coords=None, rng=None):
    """Max relative error between autodiff and central differences.

    ``f`` maps the tensors in ``inputs`` to a scalar Tensor and must be
    deterministic. Relative error is ``|a - n| / max(|a|, |n|, floor)`` per
    coordinate. ``max_coords`` caps the number of coordinates probed per
    input (sampled with ``rng``); by default every coordinate is checked.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]
    rng = np.random.default_rng(rng)

    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                up = float(f(*inputs).data)
                flat[i] = orig - step
                down = float(f(*inputs).data)
                flat[i] = orig
                num = (up - down) / (2 * step)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst
