import numpy as np


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0, buffers=None):
    """Apply one momentum-SGD update in place.

    ``buffers`` maps ``id(param)`` to its momentum buffer and is updated in
    place; pass the same dict on every call for momentum to persist. Frozen
    parameters (``requires_grad`` false) and parameters without a gradient
    are left untouched.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if buffers is None:
        buffers = {}
    for p in params:
        if not p.requires_grad or p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
        d = p.grad
        if weight_decay:
            d = d + weight_decay * p.data
        if momentum:
            buf = buffers.get(id(p))
            if buf is None:
                buf = np.array(d, copy=True)
            else:
                buf *= momentum
                buf += d
            buffers[id(p)] = buf
            d = buf
        p.data -= lr * d
    return params


class SGD:
    """Stateful wrapper around :func:`sgd_step`."""

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buffers = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        if self.lr == 0:
            return
        sgd_step(self.params, self.lr, self.momentum, self.weight_decay, self._buffers)
