"""End-to-end trained one-hidden-layer baseline for sparse parity.

The reference experiment: a relu network with one hidden layer, trained
by Adam on freshly drawn batches, label = parity of the first k of n
bits.  Under a biased product distribution the hidden layer can pick the
relevant coordinates out of the input correlations; under the uniform
distribution every correlation vanishes and the net stays at chance.
Accuracy is measured on one fixed held-out sample per run at regular
iteration checkpoints, iteration 0 included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBatch, InvalidRange, NonFiniteLoss


@dataclass
class MLP:
    """x -> relu(x W1 + b1) W2 + b2, weights stored flat in the arrays."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(
        cls, n: int, h: int, rng: np.random.Generator, scale: float = 1.0
    ) -> "MLP":
        # uniform +-scale/sqrt(fan_in) for both the matrix and its bias
        s1 = scale / np.sqrt(n)
        s2 = scale / np.sqrt(h)
        return cls(
            W1=rng.uniform(-s1, s1, size=(n, h)),
            b1=rng.uniform(-s1, s1, size=h),
            W2=rng.uniform(-s2, s2, size=h),
            b2=rng.uniform(-s2, s2, size=()),
        )

    def forward(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(X @ self.W1 + self.b1, 0.0) @ self.W2 + self.b2

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]


def loss_and_grad(
    mlp: MLP, X: np.ndarray, y: np.ndarray, loss: str
) -> tuple[float, list[np.ndarray]]:
    """Mean loss over the batch and gradients in params() order.

    hinge: max(0, 1 - y f(x)), zero slope exactly at the hinge;
    logistic: log(1 + exp(-y f(x))) computed stably.
    """
    if len(X) == 0:
        raise EmptyBatch("empty batch")
    B = X.shape[0]
    z = X @ mlp.W1 + mlp.b1
    a = np.maximum(z, 0.0)
    out = a @ mlp.W2 + mlp.b2
    m = y * out
    if loss == "hinge":
        val = float(np.mean(np.maximum(0.0, 1.0 - m)))
        dout = np.where(1.0 - m > 0.0, -y, 0.0) / B
    elif loss == "logistic":
        val = float(np.mean(np.logaddexp(0.0, -m)))
        dout = -y * _sigmoid(-m) / B
    else:
        raise InvalidRange(f"unknown loss {loss!r}")
    if not np.isfinite(val):
        raise NonFiniteLoss(f"loss = {val}")
    dW2 = a.T @ dout
    db2 = np.sum(dout)
    dz = np.outer(dout, mlp.W2) * (z > 0.0)
    dW1 = X.T @ dz
    db1 = dz.sum(axis=0)
    return val, [dW1, db1, dW2, np.asarray(db2)]


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Adam:
    """Bias-corrected Adam over a list of arrays."""

    def __init__(
        self,
        params: list[np.ndarray],
        alpha: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.alpha, self.beta1, self.beta2, self.eps = alpha, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.alpha * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class BaselineResult:
    """Accuracy checkpoints of one run plus its configuration echo."""

    n: int
    k: int
    h: int
    p: float
    loss: str
    seed: int
    iterations: int
    batch: int
    records: list = field(default_factory=list)  # (iteration, accuracy)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1][1]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "h": self.h,
            "p": self.p,
            "loss": self.loss,
            "seed": self.seed,
            "iterations": self.iterations,
            "batch": self.batch,
            "records": [[int(i), float(a)] for i, a in self.records],
        }


def parity_labels(X: np.ndarray, k: int) -> np.ndarray:
    """Product of the first k coordinates."""
    return np.prod(X[:, :k], axis=1)


def run_baseline(
    p: float,
    seed: int,
    n: int = 128,
    k: int = 5,
    h: int = 128,
    iterations: int = 10_000,
    batch: int = 50,
    loss: str = "hinge",
    eval_every: int = 1_000,
    test_size: int = 10_000,
    alpha: float = 1e-3,
    init_scale: float = 1.0,
) -> BaselineResult:
    """One full baseline run; fresh batch each iteration, fixed test set.

    Separate child streams drive the init, the training data, and the
    test data, so the run is reproducible from the single seed.
    """
    if not 0.0 < p < 1.0:
        raise InvalidRange("p must lie in (0,1)")
    ss = np.random.SeedSequence(seed)
    init_rng, data_rng, test_rng = (
        np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(3)
    )
    mlp = MLP.init(n, h, init_rng, init_scale)
    opt = Adam(mlp.params(), alpha=alpha)
    Xt = np.where(test_rng.random((test_size, n)) < p, 1.0, -1.0)
    yt = parity_labels(Xt, k)
    result = BaselineResult(
        n=n, k=k, h=h, p=p, loss=loss, seed=seed, iterations=iterations, batch=batch
    )

    def accuracy() -> float:
        pred = np.where(mlp.forward(Xt) >= 0.0, 1.0, -1.0)
        return float(np.mean(pred == yt))

    for it in range(iterations + 1):
        if it % eval_every == 0:
            result.records.append((it, accuracy()))
        if it == iterations:
            break
        X = np.where(data_rng.random((batch, n)) < p, 1.0, -1.0)
        y = parity_labels(X, k)
        _, grads = loss_and_grad(mlp, X, y, loss)
        opt.step(mlp.params(), grads)
    return result
