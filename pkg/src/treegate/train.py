"""Layerwise training of the circuit-shaped network, and recovery checks.

The trainer fits one block at a time, deepest first, by full-batch
gradient descent on the pooled loss, freezing each block before moving
up.  Because the loss is affine in every gate output (see net.py), the
full-batch loss and gradient depend on the data only through per-gate
pattern statistics: the mass P_v and label mass E[y 1{pair = v}] of each
distinct input pair v the gate sees.  Each step then costs O(patterns *
k) per gate regardless of the support or sample size; the statistics are
rebuilt once per layer by pushing the data through the frozen prefix.
Population mode uses the exact distribution's weights, sample mode
uniform weights, and the two share every code path past the weighting.

On certified inputs each gate's drive keeps one sign per pattern until
the gate saturates, and once every gate of the block is saturated on the
support the gradient is identically zero, so the trainer stops a layer
early at that point and records why it stopped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import circuit as ct
from . import net as nt
from .dist import DiscreteDistribution, level_chain
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    InvalidRange,
    LcaViolated,
    PreconditionViolated,
)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one layerwise run.

    lam = None lets the trainer set lambda = E[y] + delta/4 from the data
    it is given.  label_flip_applied is an outcome slot, filled when a
    config is echoed into a manifest, not an input switch.
    """

    k: int
    eta: float
    steps: int
    init_scale: float
    seed: int
    gradient_source: str  # "population" | "sample"
    lam: float | None = None
    delta: float | None = None
    epsilon: float | None = None
    e_y: float = 0.0
    conf: float = 0.1
    variant: str = "margin"
    sample_size_bound: int | None = None
    step_cap: int | None = 200_000
    relax_eta_per_layer: bool = False
    label_flip_applied: bool = False

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "eta": self.eta,
            "steps": self.steps,
            "init_scale": self.init_scale,
            "seed": self.seed,
            "gradient_source": self.gradient_source,
            "lam": self.lam,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "e_y": self.e_y,
            "conf": self.conf,
            "variant": self.variant,
            "sample_size_bound": self.sample_size_bound,
            "step_cap": self.step_cap,
            "relax_eta_per_layer": self.relax_eta_per_layer,
            "label_flip_applied": self.label_flip_applied,
        }


def derive_hyperparams(
    n: int,
    d: int,
    delta: float,
    epsilon: float | None = None,
    conf: float = 0.1,
    e_y: float = 0.0,
    variant: str = "margin",
    seed: int = 0,
    gradient_source: str = "population",
) -> TrainConfig:
    """Width, rate, regularizer, and step/sample bounds from (n, d, delta).

    variant "margin" needs only the correlation margin delta (steps scale
    with delta**-3); variant "support" also uses the pattern floor epsilon
    (steps scale with 1/(epsilon*delta)).  Steps and the sample bound are
    the smallest integers strictly above their bounds.
    """
    if n != 2**d:
        raise DimensionMismatch(f"n = {n} is not 2**{d}")
    if not 0.0 < delta < 1.0:
        raise InvalidRange("delta must lie in (0,1)")
    if not 0.0 < conf < 1.0:
        raise InvalidRange("conf must lie in (0,1)")
    if variant not in ("margin", "support"):
        raise InvalidRange(f"unknown variant {variant!r}")
    if variant == "support":
        if epsilon is None or not 0.0 < epsilon < 1.0:
            raise InvalidRange("variant 'support' needs epsilon in (0,1)")
    k = math.ceil(math.log(2 * n * d / conf) / math.log(4.0 / 3.0))
    eta = 1.0 / (16.0 * math.sqrt(2.0) * k)
    lam = e_y + delta / 4.0
    if not 0.0 <= lam <= 1.0:
        raise InvalidRange(f"lambda = {lam} outside [0,1]")
    if variant == "margin":
        steps_bound = 24.0 * n / (math.sqrt(2.0) * eta * delta**3)
        sample_bound = 2.0**15 / delta**6 * math.log(8 * n * d / conf)
    else:
        steps_bound = 6.0 * n / (math.sqrt(2.0) * eta * epsilon * delta)
        sample_bound = 2.0**11 / (epsilon**2 * delta**2) * math.log(8 * n * d / conf)
    return TrainConfig(
        k=k,
        eta=eta,
        steps=math.floor(steps_bound) + 1,
        init_scale=nt.admissible_scale(k),
        seed=seed,
        gradient_source=gradient_source,
        lam=lam,
        delta=delta,
        epsilon=epsilon,
        e_y=e_y,
        conf=conf,
        variant=variant,
        sample_size_bound=math.floor(sample_bound) + 1,
    )


# ---------------------------------------------------------------------------
# per-layer pattern statistics


@dataclass
class LayerStats:
    """Distinct (gate, pattern) rows with their mass and label mass."""

    patterns: np.ndarray  # (M, 2) float
    mass: np.ndarray  # (M,) P[pair = v] per row's gate
    label_mass: np.ndarray  # (M,) E[y 1{pair = v}]
    gate_idx: np.ndarray  # (M,) 0-based gate of each row
    n_gates: int

    def rows_of(self, j: int) -> np.ndarray:
        """Row indices of gate j (1-based)."""
        return np.flatnonzero(self.gate_idx == j - 1)


def layer_stats(Z: np.ndarray, y: np.ndarray, w: np.ndarray) -> LayerStats:
    """Group a weighted batch into per-gate pattern statistics."""
    n_gates = Z.shape[1] // 2
    pats: list[np.ndarray] = []
    mass: list[np.ndarray] = []
    lmass: list[np.ndarray] = []
    gidx: list[np.ndarray] = []
    for j in range(n_gates):
        pair = Z[:, 2 * j : 2 * j + 2]
        # unique rows sort lexicographically, keeping the layout deterministic
        uniq, inv = np.unique(pair, axis=0, return_inverse=True)
        pats.append(uniq)
        mass.append(np.bincount(inv, weights=w, minlength=len(uniq)))
        lmass.append(np.bincount(inv, weights=w * y, minlength=len(uniq)))
        gidx.append(np.full(len(uniq), j, dtype=np.int64))
    return LayerStats(
        patterns=np.concatenate(pats),
        mass=np.concatenate(mass),
        label_mass=np.concatenate(lmass),
        gate_idx=np.concatenate(gidx),
        n_gates=n_gates,
    )


def _stats_gradient(
    block: nt.Block, stats: LayerStats, lam: float
) -> tuple[np.ndarray, float, bool]:
    """(gradient, loss, all saturated) from pattern statistics.

    Equals block_gradient/pooled_loss on the underlying batch exactly.
    """
    n_i = block.n_inputs
    Wrows = block.W[stats.gate_idx]  # (M, k, 2)
    Vrows = block.V[stats.gate_idx]  # (M, k)
    s = np.einsum("mkc,mc->mk", Wrows, stats.patterns)
    relu = np.maximum(s, 0.0)
    g = np.clip(np.einsum("mk,mk->m", Vrows, relu), -1.0, 1.0)
    coef = lam * stats.mass - stats.label_mass  # (M,)
    loss = 1.0 + lam + (2.0 / n_i) * float(np.dot(coef, g))
    open_gate = np.abs(g) < 1.0
    contrib = (
        (2.0 / n_i)
        * coef[:, None, None]
        * Vrows[:, :, None]
        * (s > 0.0)[:, :, None]
        * open_gate[:, None, None]
        * stats.patterns[:, None, :]
    )
    grad = np.zeros_like(block.W)
    np.add.at(grad, stats.gate_idx, contrib)
    return grad, loss, bool(np.all(~open_gate))


# ---------------------------------------------------------------------------
# sign maps


def sign_map_from_correlations(
    dd: DiscreteDistribution, c: ct.Circuit
) -> np.ndarray:
    """Expected output signs for the level dd lives on.

    Entry j-1 is sign(E[z_j y]) when the correlation is nonzero, +1 when
    the coordinate has no effect above or is constant on the support, and
    otherwise the input violates the correlation assumption.
    """
    level = _level_of_dim(dd.dim, c)
    out = np.ones(dd.dim, dtype=np.int8)
    profile = ct.influence_profile(c) if level >= 1 else None
    for j in range(1, dd.dim + 1):
        cx = dd.correlation(j)
        if cx > 0:
            out[j - 1] = 1
        elif cx < 0:
            out[j - 1] = -1
        else:
            marg = dd.marginal_plus(j)
            constant = marg == 0 or marg == 1
            infl = profile[(level, j)] if profile is not None else 1.0
            if infl != 0.0 and not constant:
                raise LcaViolated(
                    f"level {level} coordinate {j}: zero correlation at an "
                    "influencing coordinate"
                )
            out[j - 1] = 1
    return out


def _level_of_dim(dim: int, c: ct.Circuit) -> int:
    for i in range(c.depth + 1):
        if dim == 2**i:
            return i
    raise DimensionMismatch(f"dimension {dim} is not a level width")


def sign_maps(chain: Sequence[DiscreteDistribution], c: ct.Circuit) -> list[np.ndarray]:
    """nu[i] for layers i = 1..d: expected signs of level-(i-1) outputs.

    Index 0 of the returned list is unused padding so nu[i] reads naturally.
    """
    nus: list[np.ndarray] = [np.array([], dtype=np.int8)]
    for i in range(1, c.depth + 1):
        nus.append(sign_map_from_correlations(chain[i - 1], c))
    return nus


# ---------------------------------------------------------------------------
# alignment diagnostic


@dataclass
class AlignmentResult:
    """Aggregate of the per-step drive checks for one training run."""

    tuples_checked: int = 0
    violations: list = field(default_factory=list)
    min_margin: float = math.inf
    prefix_mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.prefix_mismatches

    def to_dict(self) -> dict:
        return {
            "tuples_checked": self.tuples_checked,
            "violations": self.violations[:20],
            "violation_count": len(self.violations),
            "min_margin": self.min_margin if self.tuples_checked else None,
            "prefix_mismatches": self.prefix_mismatches[:20],
            "ok": self.ok,
        }


class AlignmentProbe:
    """Per-step check that every active unit's drive clears its floor.

    For layer i, gate j, support pattern p the gate sees, and unit l with
    <w_l, p> > 0 while the gate output is in (-1, 1), the signed drive
    -gamma~(p) * v_l * nu_j * <dL/dw_l, p/|p|> must exceed
    eps*delta/(sqrt(2)*n_i) (minus 1e-12 slack).  gamma~ is the true gate
    applied to the un-flipped pattern; population gradients make the
    check exact.
    """

    SLACK = 1e-12

    def __init__(
        self,
        circuit: ct.Circuit,
        chain: Sequence[DiscreteDistribution],
        delta: float,
        epsilon: float,
    ) -> None:
        self.circuit = circuit
        self.delta = float(delta)
        self.epsilon = float(epsilon)
        self.nu = sign_maps(chain, circuit)
        # expected pattern support each gate sees: flipped true pairs
        self.expected: dict[tuple[int, int], set[tuple[float, float]]] = {}
        for i in range(1, circuit.depth + 1):
            flips = (
                self.nu[i + 1]
                if i < circuit.depth
                else np.ones(2**i, dtype=np.int8)
            )
            dd = chain[i]
            for j in range(1, 2 ** (i - 1) + 1):
                pats = set()
                for pat in dd.pair_weights(j):
                    pats.add(
                        (
                            float(pat[0] * flips[2 * j - 2]),
                            float(pat[1] * flips[2 * j - 1]),
                        )
                    )
                self.expected[(i, j)] = pats
        self.result = AlignmentResult()

    def observe(
        self,
        i: int,
        step: int,
        block: nt.Block,
        stats: LayerStats,
        grad: np.ndarray,
    ) -> None:
        n_i = block.n_inputs
        floor = self.epsilon * self.delta / (math.sqrt(2.0) * n_i)
        flips = (
            self.nu[i + 1] if i < self.circuit.depth else np.ones(n_i, dtype=np.int8)
        )
        for j in range(1, stats.n_gates + 1):
            rows = stats.rows_of(j)
            seen = {tuple(map(float, stats.patterns[m])) for m in rows}
            if step == 0 and seen != self.expected[(i, j)]:
                self.result.prefix_mismatches.append(
                    {"layer": i, "gate": j, "seen": sorted(seen)}
                )
                continue
            gate = self.circuit.gate(i, j)
            nu_j = int(self.nu[i][j - 1])
            for m in rows:
                p = stats.patterns[m]
                true_pair = (
                    int(round(p[0] * flips[2 * j - 2])),
                    int(round(p[1] * flips[2 * j - 1])),
                )
                gamma = gate(*true_pair)
                s = block.W[j - 1] @ p
                g = float(
                    np.clip(np.dot(block.V[j - 1], np.maximum(s, 0.0)), -1.0, 1.0)
                )
                if abs(g) >= 1.0:
                    continue
                for l in np.flatnonzero(s > 0.0):
                    inner = float(grad[j - 1, l] @ p) / math.sqrt(2.0)
                    drive = -gamma * float(block.V[j - 1, l]) * nu_j * inner
                    margin = drive - floor
                    self.result.tuples_checked += 1
                    if margin < self.result.min_margin:
                        self.result.min_margin = margin
                    if margin < -self.SLACK:
                        self.result.violations.append(
                            {
                                "layer": i,
                                "step": step,
                                "gate": j,
                                "pattern": list(map(float, p)),
                                "unit": int(l),
                                "drive": drive,
                                "floor": floor,
                            }
                        )


# ---------------------------------------------------------------------------
# the trainer


@dataclass
class LayerTrace:
    """One layer's run.

    stop_reason: "saturated" (all gates pinned, the goal), "stalled"
    (zero gradient with unsaturated gates, a permanent fixed point:
    some pattern lost all its aligned active units, which the unit
    count k makes rare but never impossible), "step_cap", or
    "steps_exhausted".
    """

    layer: int
    steps_run: int
    stop_reason: str
    eta_used: float
    loss_curve: list

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "steps_run": self.steps_run,
            "stop_reason": self.stop_reason,
            "eta_used": self.eta_used,
            "final_loss": self.loss_curve[-1] if self.loss_curve else None,
        }


@dataclass
class TrainTrace:
    layers: list
    label_flip_applied: bool
    lam_used: float
    e_y_used: float
    alignment: AlignmentResult | None = None

    def to_dict(self) -> dict:
        return {
            "layers": [t.to_dict() for t in self.layers],
            "label_flip_applied": self.label_flip_applied,
            "lam_used": self.lam_used,
            "e_y_used": self.e_y_used,
            "alignment": self.alignment.to_dict() if self.alignment else None,
        }


def train_layerwise(
    data,
    cfg: TrainConfig,
    seed: int | None = None,
    probe: AlignmentProbe | None = None,
) -> tuple[nt.LayeredNet, TrainTrace]:
    """Fit all layers, deepest first; returns the net and its trace.

    data is a DiscreteDistribution (population mode) or an (X, y) sample
    pair (sample mode); cfg.gradient_source must agree.  Labels are
    flipped when their mean is negative, and that is recorded.
    """
    if isinstance(data, DiscreteDistribution):
        if cfg.gradient_source != "population":
            raise PreconditionViolated(
                "exact distribution given but gradient_source != population"
            )
        X = data.x_array().astype(np.float64)
        w = data.float_probs()
        y = data.y_array().astype(np.float64)
        ey_exact = data.mean_label()
        flip = ey_exact < 0
        ey = float(ey_exact)
    else:
        if cfg.gradient_source != "sample":
            raise PreconditionViolated(
                "sample given but gradient_source != sample"
            )
        Xs, ys = data
        if len(Xs) == 0:
            raise EmptyBatch("empty training sample")
        X = np.asarray(Xs, dtype=np.float64)
        y = np.asarray(ys, dtype=np.float64)
        w = np.full(X.shape[0], 1.0 / X.shape[0])
        ey = float(np.dot(w, y))
        flip = ey < 0
    if flip:
        y = -y
        ey = -ey
    n = X.shape[1]
    d = n.bit_length() - 1
    if 2**d != n:
        raise DimensionMismatch(f"input width {n} is not a power of two")
    if cfg.lam is not None:
        lam = cfg.lam
    else:
        if cfg.delta is None:
            raise PreconditionViolated("need lam or delta to set the regularizer")
        lam = ey + cfg.delta / 4.0
    if not 0.0 <= lam <= 1.0:
        raise InvalidRange(f"lambda = {lam} outside [0,1]")

    run_seed = cfg.seed if seed is None else seed
    layer_seeds = np.random.SeedSequence(run_seed).spawn(d)
    net = nt.LayeredNet(d)
    traces: list[LayerTrace] = []
    Zcur = X.copy()
    for i in range(d, 0, -1):
        block = nt.init_block(i, cfg.k, cfg.init_scale, layer_seeds[d - i])
        stats = layer_stats(Zcur, y, w)
        eta_i = cfg.eta * (block.n_inputs if cfg.relax_eta_per_layer else 1.0)
        limit = cfg.steps if cfg.step_cap is None else min(cfg.steps, cfg.step_cap)
        curve: list[float] = []
        stop = "steps_exhausted" if limit == cfg.steps else "step_cap"
        steps_run = 0
        for t in range(limit):
            grad, loss, saturated = _stats_gradient(block, stats, lam)
            curve.append(loss)
            if saturated:
                stop = "saturated"
                break
            if not grad.any():
                # stats are fixed, so zero gradient means no step will
                # ever change this block again
                stop = "stalled"
                break
            if probe is not None:
                probe.observe(i, t, block, stats, grad)
            block.W -= eta_i * grad
            steps_run = t + 1
        else:
            _, loss, saturated = _stats_gradient(block, stats, lam)
            curve.append(loss)
            if saturated:
                stop = "saturated"
        traces.append(LayerTrace(i, steps_run, stop, eta_i, curve))
        net.add(block)
        Zcur = nt.block_forward(block, Zcur)
    trace = TrainTrace(
        layers=traces,
        label_flip_applied=bool(flip),
        lam_used=lam,
        e_y_used=ey if not flip else -ey,
        alignment=probe.result if probe is not None else None,
    )
    return net, trace


def make_alignment_probe(
    circuit: ct.Circuit, dd: DiscreteDistribution, delta: float, epsilon: float
) -> AlignmentProbe:
    """Probe for a population run on dd labeled by `circuit`.

    Mirrors the trainer's label flip so the probe sees the same signs the
    gradient does.
    """
    if dd.mean_label() < 0:
        dd = dd.flip_labels()
    return AlignmentProbe(circuit, level_chain(dd, circuit), delta, epsilon)


# ---------------------------------------------------------------------------
# recovery verification


def evaluate_net(
    net: nt.LayeredNet, dd: DiscreteDistribution, flipped: bool = False
) -> dict:
    """Accuracy and exact error of the net on dd, no sign maps needed.

    flipped mirrors a trainer label flip (pass trace.label_flip_applied),
    so the numbers describe the run's own target labels.
    """
    if flipped:
        dd = dd.flip_labels()
    boundary = net.apply_batch(dd.x_array().astype(np.float64))[:, 0]
    y = dd.y_array().astype(np.float64)
    probs = dd.float_probs()
    pred = np.where(boundary >= 0, 1.0, -1.0)
    return {
        "accuracy": float(np.dot(probs, (pred == y).astype(np.float64))),
        "exact_error": float(np.dot(probs, (boundary != y).astype(np.float64))),
        "output_saturated": bool(np.all(np.abs(boundary) == 1.0)),
    }


@dataclass
class RecoveryReport:
    """Exact comparison of a trained net against its target circuit."""

    depth: int
    layer_ok: dict
    gate_matches: dict
    influencing_gates: int
    influencing_matched: int
    exact_error: float
    accuracy: float
    output_saturated: bool
    witnesses: list

    @property
    def recovered(self) -> bool:
        return (
            all(self.layer_ok.values())
            and self.exact_error == 0.0
            and self.output_saturated
        )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "layer_ok": {str(k): v for k, v in self.layer_ok.items()},
            "gate_matches": {str(k): v for k, v in self.gate_matches.items()},
            "influencing_gates": self.influencing_gates,
            "influencing_matched": self.influencing_matched,
            "exact_error": self.exact_error,
            "accuracy": self.accuracy,
            "output_saturated": self.output_saturated,
            "recovered": self.recovered,
            "witnesses": self.witnesses[:20],
        }


def verify_recovery(
    net: nt.LayeredNet, c: ct.Circuit, dd: DiscreteDistribution
) -> RecoveryReport:
    """Check the net equals the sign-corrected circuit on the support.

    Layer i passes when the trained block maps every flipped level-i
    support vector to the flipped image of the true gate layer; the final
    error is the exact mass where the net output differs from the label.
    Gate matches are counted at influencing coordinates only, since
    nothing constrains what a gate learns where nothing above listens.
    A negative label mean is mirrored the way the trainer mirrors it, so
    the comparison is against the flipped labels.
    """
    if dd.mean_label() < 0:
        dd = dd.flip_labels()
    chain = level_chain(dd, c)
    nu = sign_maps(chain, c)
    profile = ct.influence_profile(c)
    layer_ok: dict[int, bool] = {}
    gate_matches: dict[tuple[int, int], bool] = {}
    witnesses: list = []
    for i in range(c.depth, 0, -1):
        if i not in net.blocks:
            raise PreconditionViolated(f"net has no trained block at depth {i}")
    for i in range(c.depth, 0, -1):
        block = net.blocks[i]
        flips_in = (
            nu[i + 1].astype(np.float64)
            if i < c.depth
            else np.ones(2**i)
        )
        Z_true = chain[i].x_array()
        out = nt.block_forward(block, Z_true.astype(np.float64) * flips_in[None, :])
        expected = ct.level_map_batch(c, i, Z_true).astype(np.float64) * nu[i][None, :]
        ok = bool(np.array_equal(out, expected))
        layer_ok[i] = ok
        if not ok:
            bad = np.flatnonzero(np.any(out != expected, axis=1))[:5]
            for b in bad:
                witnesses.append(
                    {
                        "layer": i,
                        "input": [int(v) for v in Z_true[b]],
                        "expected": [float(v) for v in expected[b]],
                        "got": [float(v) for v in out[b]],
                    }
                )
        # per-gate reading at influencing output coordinates
        for j in range(1, 2 ** (i - 1) + 1):
            out_level = i - 1
            if out_level == 0:
                influencing = True
            else:
                marg = chain[out_level].marginal_plus(j)
                influencing = profile[(out_level, j)] != 0.0 and not (
                    marg == 0 or marg == 1
                )
            if not influencing:
                continue
            gate = c.gate(i, j)
            match = True
            for pat in chain[i].pair_weights(j):
                seen = (
                    float(pat[0] * flips_in[2 * j - 2]),
                    float(pat[1] * flips_in[2 * j - 1]),
                )
                val = nt.gate_forward(block.gate(j), seen)
                if abs(abs(val) - 1.0) > nt.SATURATION_TOL:
                    match = False
                    break
                want = int(nu[i][j - 1]) * gate(*pat)
                if (1 if val > 0 else -1) != want:
                    match = False
                    break
            gate_matches[(i, j)] = match
    boundary = net.apply_batch(dd.x_array().astype(np.float64))[:, 0]
    y = dd.y_array().astype(np.float64)
    probs = dd.float_probs()
    exact_error = float(np.dot(probs, (boundary != y).astype(np.float64)))
    pred = np.where(boundary >= 0, 1.0, -1.0)
    accuracy = float(np.dot(probs, (pred == y).astype(np.float64)))
    saturated = bool(np.all(np.abs(boundary) == 1.0))
    return RecoveryReport(
        depth=c.depth,
        layer_ok=layer_ok,
        gate_matches={k: v for k, v in sorted(gate_matches.items())},
        influencing_gates=len(gate_matches),
        influencing_matched=sum(gate_matches.values()),
        exact_error=exact_error,
        accuracy=accuracy,
        output_saturated=saturated,
        witnesses=witnesses,
    )
