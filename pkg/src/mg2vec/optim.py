"""Adam and the warmup learning-rate schedule shared by the trainers."""

import numpy as np


def warmup_lr(step, model_dim, warmup_steps):
    """Inverse-sqrt schedule with linear warmup; step counts from 1."""
    if step < 1:
        raise ValueError("step counts from 1")
    return model_dim ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p) for k, p in params.items()}
        self._v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads, lr):
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            self.params[name] -= lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)
