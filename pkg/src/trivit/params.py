"""Named parameter store with deterministic iteration order."""

import hashlib

import numpy as np

from .autodiff import Tensor


class ParameterStore:
    """Maps dot-separated paths to trainable tensors.

    Iteration is always lexicographic by path, so optimizer sweeps,
    checkpoints and gradient reports are reproducible across runs.
    """

    def __init__(self):
        self._params = {}

    def add(self, path, data):
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = data if isinstance(data, Tensor) else Tensor(np.asarray(data), requires_grad=True)
        t.requires_grad = True
        self._params[path] = t
        return t

    def __getitem__(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def num_scalars(self):
        return sum(t.data.size for _, t in self.items())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def copy_values(self):
        """Snapshot of all parameter arrays, keyed by path."""
        return {path: t.data.copy() for path, t in self.items()}

    def load_values(self, values):
        for path, t in self.items():
            src = values[path]
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {path!r}: {src.shape} vs {t.data.shape}")
            t.data[...] = src

    def cast(self, dtype):
        """Re-type every parameter in place (grads dropped); returns self."""
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        return self

    def checksum(self):
        """Digest over all parameter bytes, for frozen-backbone contracts."""
        h = hashlib.sha256()
        for path, t in self.items():
            h.update(path.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()
