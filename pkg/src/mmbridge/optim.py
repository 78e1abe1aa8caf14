"""First-order update rules applied in place to a ParamStore."""
import numpy as np

from .errors import ConfigError, ContractError

OPTIMIZERS = ("sgd", "momentum", "adam")


class Optimizer:
    """Plain SGD, SGD with heavy-ball momentum, or Adam.

    State is keyed by parameter name, so one optimizer serves one store.
    """

    def __init__(self, kind="adam", lr=1e-3, momentum=0.9, beta1=0.9,
                 beta2=0.999, eps=1e-8):
        if kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")
        if not lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, store):
        missing = [name for name, p in store.items() if p.grad is None]
        if missing:
            raise ContractError(f"no gradient for parameters: {missing}")
        self.t += 1
        for name, p in store.items():
            g = p.grad
            if self.kind == "sgd":
                p.data -= self.lr * g
            elif self.kind == "momentum":
                buf = self._m.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self._m[name] = buf
                p.data -= self.lr * buf
            else:
                m = self._m.get(name, np.zeros_like(g))
                v = self._v.get(name, np.zeros_like(g))
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self._m[name], self._v[name] = m, v
                m_hat = m / (1.0 - self.beta1 ** self.t)
                v_hat = v / (1.0 - self.beta2 ** self.t)
                p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        store.zero_grad()


def optimizer_step(store, lr, kind="sgd", optimizer=None):
    """One update of every parameter in ``store``; gradients are zeroed after.

    Pass a persistent ``optimizer`` to keep momentum/moment state across
    calls; otherwise a fresh one is used for this single step.
    """
    opt = optimizer or Optimizer(kind, lr)
    opt.step(store)
    return store
