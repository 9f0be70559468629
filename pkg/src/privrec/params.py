"""Named parameter collections with flat-vector views.

Federated updates and gradient checks work on a single flat vector; models
address parameters by name. A ParamSet keeps both views consistent through
an ordered name -> array mapping (the "manifest").
"""

import numpy as np

from . import autodiff as ad


class ParamSet:
    """Ordered mapping of parameter name -> float64 ndarray."""

    def __init__(self, arrays):
        self._arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    def manifest(self):
        """List of (name, shape) pairs defining the flat-vector layout."""
        return [(k, v.shape) for k, v in self._arrays.items()]

    @property
    def size(self):
        return sum(v.size for v in self._arrays.values())

    def flatten(self):
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def unflatten(self, vec):
        """New ParamSet with the same manifest and values taken from `vec`."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}")
        out = {}
        offset = 0
        for name, arr in self._arrays.items():
            n = arr.size
            out[name] = vec[offset : offset + n].reshape(arr.shape).copy()
            offset += n
        return ParamSet(out)

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self._arrays.items()})

    def as_nodes(self):
        """Leaf autodiff nodes for every parameter, keyed by name."""
        return {k: ad.Node(v) for k, v in self._arrays.items()}

    def subset(self, prefix):
        """View of all parameters whose name starts with `prefix`."""
        return ParamSet(
            {k: v for k, v in self._arrays.items() if k.startswith(prefix)}
        )


def collect_gradients(param_nodes, manifest_params):
    """Flatten node gradients in manifest order; missing grads are zeros."""
    parts = []
    for name, arr in manifest_params.items():
        node = param_nodes[name]
        if node.grad is None:
            parts.append(np.zeros(arr.size))
        else:
            parts.append(np.asarray(node.grad).ravel())
    return np.concatenate(parts)


def uniform_init(rng, shape, scale=0.1):
    """Default weight init: uniform(-scale, scale)."""
    return rng.uniform(-scale, scale, size=shape)
