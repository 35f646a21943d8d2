"""First-order optimizers: Adam, RAdam, a slow/fast-weight wrapper, and the
named combinations used by the training configs."""

import numpy as np

from .errors import ConfigError, LengthMismatch


class SGD:
    """Plain gradient descent; used as a reference inner optimizer."""

    def __init__(self, lr: float = 3e-4):
        self.lr = lr

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise LengthMismatch(f"{params.shape} vs {grads.shape}")
        return params - self.lr * grads

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class Adam:
    def __init__(self, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def _ensure_state(self, params: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        elif self.m.shape != params.shape:
            raise LengthMismatch(f"state {self.m.shape} vs params {params.shape}")

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise LengthMismatch(f"{params.shape} vs {grads.shape}")
        self._ensure_state(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = state["m"]
        self.v = state["v"]


class RAdam:
    """Adam with rectified adaptive learning rate.

    While the variance-rectification term rho_t stays at or below 4 (the
    earliest steps), the update falls back to bias-corrected momentum only.
    """

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise LengthMismatch(f"{params.shape} vs {grads.shape}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        t = self.t
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** t)
        beta2_t = self.beta2 ** t
        rho_t = self.rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
        if rho_t > 4.0:
            v_hat = np.sqrt(self.v / (1.0 - beta2_t))
            rect = np.sqrt(
                ((rho_t - 4.0) * (rho_t - 2.0) * self.rho_inf)
                / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho_t))
            return params - self.lr * rect * m_hat / (v_hat + self.eps)
        return params - self.lr * m_hat

    def rectification(self, t: int) -> float:
        beta2_t = self.beta2 ** t
        return self.rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = state["m"]
        self.v = state["v"]


class Lookahead:
    """Slow-weight wrapper: every k inner steps, move the slow weights a
    fraction alpha toward the fast weights and restart from them."""

    def __init__(self, inner, k: int = 5, alpha: float = 0.5):
        if k < 1 or not (0.0 <= alpha <= 1.0):
            raise ValueError(f"invalid lookahead parameters k={k}, alpha={alpha}")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.slow = None
        self.i = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.slow is None:
            self.slow = params.copy()
        elif self.slow.shape != params.shape:
            raise LengthMismatch(f"slow {self.slow.shape} vs params {params.shape}")
        fast = self.inner.step(params, grads)
        self.i += 1
        if self.i % self.k == 0:
            self.slow = self.slow + self.alpha * (fast - self.slow)
            fast = self.slow.copy()
        return fast

    def state_dict(self) -> dict:
        return {"i": self.i, "slow": self.slow, "inner": self.inner.state_dict()}

    def load_state_dict(self, state: dict) -> None:
        self.i = int(state["i"])
        self.slow = state["slow"]
        self.inner.load_state_dict(state["inner"])


def make_optimizer(name: str, lr: float = 3e-4, k: int = 5, alpha: float = 0.5):
    """Build one of the named optimizer configurations.

    A = Adam, RA = RAdam, R = Lookahead over RAdam, A+LH = Lookahead over
    Adam.
    """
    if name == "A":
        return Adam(lr=lr)
    if name == "RA":
        return RAdam(lr=lr)
    if name == "R":
        return Lookahead(RAdam(lr=lr), k=k, alpha=alpha)
    if name == "A+LH":
        return Lookahead(Adam(lr=lr), k=k, alpha=alpha)
    raise ConfigError(f"unknown optimizer {name!r}")


OPTIMIZER_NAMES = ("A", "RA", "R", "A+LH")
