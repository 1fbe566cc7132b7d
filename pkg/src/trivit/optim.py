"""Adam optimizer over a ParameterStore."""

import numpy as np

from . import backend


class OptimizerError(Exception):
    pass


class Adam:
    """Adam with bias correction and optional decoupled weight decay.

    Moment buffers live per parameter path; the step counter is shared.
    Updates are fully deterministic given parameters and gradients.
    """

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {p: np.zeros_like(t.data) for p, t in store.items()}
        self._v = {p: np.zeros_like(t.data) for p, t in store.items()}

    def step(self):
        self.t += 1
        kern = backend.active
        for path, param in self.store.items():
            grad = param.grad
            if grad is None:
                grad = np.zeros_like(param.data)
            if not np.all(np.isfinite(grad)):
                raise OptimizerError(f"non-finite gradient for parameter {path!r}")
            kern.adam_update(
                param.data.reshape(-1),
                np.ascontiguousarray(grad.reshape(-1)),
                self._m[path].reshape(-1),
                self._v[path].reshape(-1),
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )

    def zero_grad(self):
        self.store.zero_grad()
