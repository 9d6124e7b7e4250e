"""Neural gates, blocks, and the layered network mirroring a circuit.

A neural gate on a pair p is phi(sum_l v_l * relu(<w_l, p>)) with
phi = hard-tanh, v_l in {-1,+1} fixed at init, and k hidden units.  A
block at depth i holds 2**(i-1) gates acting on the disjoint input pairs
of a 2**i vector; a LayeredNet is the composition of trained blocks from
depth d upward, and its pooled output is the mean of the current
boundary vector.

Kink conventions, fixed once for both the loss and the gradient: the
ReLU subgradient at 0 is 0, the hard-tanh derivative at |g| >= 1 is 0
(exactly 0 at +-1), and the hinge tie at margin 1 resolves to 0.  Since
gate outputs live in [-1,1], the pooled margin y*P never exceeds 1, so
the hinge term equals 1 - y*P identically and the loss is affine in
each gate output; the regularizer is the matching antiderivative
lambda*(1+P), whose slope +lambda gives the (lambda - y) coefficient in
the gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import circuit as ct
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    InvalidRange,
    NonFiniteLoss,
    ScaleTooLarge,
)


def admissible_scale(k: int) -> float:
    """Largest allowed init scale for width k: 1/(4*sqrt(2)*k)."""
    if k < 1:
        raise InvalidRange("width k must be >= 1")
    return 1.0 / (4.0 * math.sqrt(2.0) * k)


@dataclass
class NeuralGate:
    """One gate: unit weights w (k, 2) and fixed output signs v (k,)."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[1] != 2:
            raise DimensionMismatch(f"w must be (k, 2), got {self.w.shape}")
        if self.v.shape != (self.w.shape[0],):
            raise DimensionMismatch("v must have one sign per unit")
        if not np.all(np.abs(self.v) == 1.0):
            raise InvalidRange("v entries must be +-1")


@dataclass
class Block:
    """All gates of one depth: W (gates, k, 2), V (gates, k) in {-1,+1}."""

    i: int
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        gates = 2 ** (self.i - 1)
        if self.W.ndim != 3 or self.W.shape[0] != gates or self.W.shape[2] != 2:
            raise DimensionMismatch(
                f"W must be ({gates}, k, 2) for depth {self.i}, got {self.W.shape}"
            )
        if self.V.shape != self.W.shape[:2]:
            raise DimensionMismatch("V must be (gates, k)")
        if not np.all(np.abs(self.V) == 1.0):
            raise InvalidRange("V entries must be +-1")

    @property
    def n_inputs(self) -> int:
        return 2**self.i

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def gate(self, j: int) -> NeuralGate:
        """Gate j (1-based) as a view."""
        return NeuralGate(self.W[j - 1], self.V[j - 1])


def init_block(
    i: int, k: int, scale: float, seed: int, override_scale: bool = False
) -> Block:
    """Fresh block: W uniform in [-scale, scale], v uniform +-1."""
    if scale <= 0:
        raise InvalidRange("scale must be positive")
    if scale > admissible_scale(k) * (1 + 1e-12) and not override_scale:
        raise ScaleTooLarge(
            f"scale {scale} exceeds 1/(4*sqrt(2)*{k}) = {admissible_scale(k):.6g}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    gates = 2 ** (i - 1)
    W = rng.uniform(-scale, scale, size=(gates, k, 2))
    V = (2 * rng.integers(0, 2, size=(gates, k)) - 1).astype(np.float64)
    return Block(i, W, V)


def gate_forward(g: NeuralGate, p: Sequence[float]) -> float:
    """phi(sum_l v_l relu(<w_l, p>)) for one input pair."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,):
        raise DimensionMismatch("p must be a pair")
    s = g.w @ p
    return float(np.clip(np.dot(g.v, np.maximum(s, 0.0)), -1.0, 1.0))


def block_forward(block: Block, Z: np.ndarray) -> np.ndarray:
    """Gate outputs for a batch: Z (N, 2**i) -> (N, 2**(i-1))."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != block.n_inputs:
        raise DimensionMismatch(
            f"expected (N, {block.n_inputs}) inputs, got {Z.shape}"
        )
    pairs = Z.reshape(Z.shape[0], -1, 2)
    s = np.einsum("gkc,ngc->ngk", block.W, pairs)
    acts = np.einsum("gk,ngk->ng", block.V, np.maximum(s, 0.0))
    return np.clip(acts, -1.0, 1.0)


@dataclass
class LayeredNet:
    """Blocks trained so far, keyed by depth; deepest layers apply first."""

    depth: int
    blocks: dict[int, Block] = field(default_factory=dict)

    def add(self, block: Block) -> None:
        if not 1 <= block.i <= self.depth:
            raise DimensionMismatch(f"block depth {block.i} outside 1..{self.depth}")
        self.blocks[block.i] = block

    def boundary(self) -> int:
        """Width of the deepest untrained level (the current representation)."""
        lev = self.depth
        while lev >= 1 and lev in self.blocks:
            lev -= 1
        return 2**lev

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        """Push a batch through the trained blocks, deepest first."""
        Z = np.asarray(X, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != 2**self.depth:
            raise DimensionMismatch(f"expected (N, {2 ** self.depth}), got {Z.shape}")
        for i in range(self.depth, 0, -1):
            if i not in self.blocks:
                break
            Z = block_forward(self.blocks[i], Z)
        return Z


def net_forward(net: LayeredNet, x: Sequence[float]) -> tuple[np.ndarray, float]:
    """Boundary vector and pooled mean for one input."""
    Z = net.apply_batch(np.asarray(x, dtype=np.float64)[None, :])
    return Z[0], float(np.mean(Z[0]))


@dataclass(frozen=True)
class LossParams:
    """Pooled-loss parameters."""

    lam: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidRange(f"lambda must lie in [0,1], got {self.lam}")


def _check_batch(block: Block, Z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise EmptyBatch("batch must be nonempty")
    if Z.shape[1] != block.n_inputs or y.shape != (Z.shape[0],):
        raise DimensionMismatch("batch shapes do not match the block")
    return Z, y


def pooled_loss(block: Block, prefix_outputs: np.ndarray, labels: np.ndarray, lp: LossParams) -> float:
    """Mean hinge on the pooled output plus the linear regularizer.

    max(1 - y*P, 0) + lam*(1+P); the hinge never clips because |P| <= 1.
    """
    Z, y = _check_batch(block, prefix_outputs, labels)
    G = block_forward(block, Z)
    P = G.mean(axis=1)
    loss = float(np.mean(np.maximum(1.0 - y * P, 0.0) + lp.lam * (1.0 + P)))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    return loss


def block_gradient(
    block: Block, prefix_outputs: np.ndarray, labels: np.ndarray, lp: LossParams
) -> np.ndarray:
    """Exact subgradient of pooled_loss w.r.t. W, shape (gates, k, 2).

    (2/n_i) * mean[(lam - y) * v_l * 1{g in (-1,1)} * 1{<w_l,p> > 0} * p]
    with the stated kink conventions.
    """
    Z, y = _check_batch(block, prefix_outputs, labels)
    pairs = Z.reshape(Z.shape[0], -1, 2)
    s = np.einsum("gkc,ngc->ngk", block.W, pairs)
    relu = np.maximum(s, 0.0)
    g = np.clip(np.einsum("gk,ngk->ng", block.V, relu), -1.0, 1.0)
    open_gate = (np.abs(g) < 1.0).astype(np.float64)
    active = (s > 0.0).astype(np.float64)
    coef = (lp.lam - y) / Z.shape[0]
    grad = np.einsum(
        "n,ng,gk,ngk,ngc->gkc", coef, open_gate, block.V, active, pairs
    )
    grad *= 2.0 / block.n_inputs
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLoss("gradient is not finite")
    return grad


# ---------------------------------------------------------------------------
# reading gates off and planting them


@dataclass(frozen=True)
class NotSaturated:
    """extract_gate result when some pattern's output is not at +-1."""

    pattern: tuple[int, int]
    value: float


SATURATION_TOL = 1e-9


def extract_gate(
    g: NeuralGate, patterns: Sequence[tuple[int, int]] = ct.PATTERNS
):
    """The Boolean gate a saturated neural gate implements.

    Returns a Gate when |output| is within 1e-9 of 1 on all requested
    patterns (pass a subset for the restricted-support variant; missing
    patterns then default to +1 in the table); otherwise the first
    offending pattern as NotSaturated.
    """
    table = {p: 1 for p in ct.PATTERNS}
    for p in patterns:
        val = gate_forward(g, p)
        if abs(abs(val) - 1.0) > SATURATION_TOL:
            return NotSaturated(tuple(p), val)
        table[tuple(p)] = 1 if val > 0 else -1
    return ct.gate_from_table(tuple(table[p] for p in ct.PATTERNS))


def plant_gate(gamma: ct.Gate) -> NeuralGate:
    """Width-4 weights realizing gamma exactly, saturated on all patterns.

    Unit l is keyed to pattern l: <p_l, p> is 2 at p_l, -2 at -p_l, 0 on
    the orthogonal pair, so relu picks out exactly one unit per input.
    """
    W = np.array(ct.PATTERNS, dtype=np.float64)
    v = np.array([float(gamma(*p)) for p in ct.PATTERNS])
    return NeuralGate(W, v)


def plant_block(c: ct.Circuit, i: int) -> Block:
    """Block exactly realizing layer i of a circuit."""
    gates = [plant_gate(g) for g in c.layers[i - 1]]
    return Block(i, np.stack([g.w for g in gates]), np.stack([g.v for g in gates]))


def plant_net(c: ct.Circuit) -> LayeredNet:
    """LayeredNet realizing the whole circuit exactly."""
    net = LayeredNet(c.depth)
    for i in range(c.depth, 0, -1):
        net.add(plant_block(c, i))
    return net


# ---------------------------------------------------------------------------
# checkpoints


def net_to_dict(net: LayeredNet) -> dict:
    return {
        "depth": net.depth,
        "blocks": [
            {
                "layer": i,
                "k": net.blocks[i].k,
                "W": net.blocks[i].W.tolist(),
                "V": [[int(v) for v in row] for row in net.blocks[i].V],
            }
            for i in sorted(net.blocks)
        ],
    }


def net_from_dict(doc: dict) -> LayeredNet:
    net = LayeredNet(int(doc["depth"]))
    for rec in doc["blocks"]:
        net.add(
            Block(
                int(rec["layer"]),
                np.array(rec["W"], dtype=np.float64),
                np.array(rec["V"], dtype=np.float64),
            )
        )
    return net
