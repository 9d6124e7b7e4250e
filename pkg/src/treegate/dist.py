"""Exact labeled distributions on the hypercube and their certification.

Distributions are stored exactly: a support of (+-1 vector, label) pairs
with integer weight numerators over one shared integer denominator.
Expectations, correlations, and certification margins are then integer
arithmetic wrapped in Fractions, so "margin > 0" means exactly that.
Float parameters (probabilities, thresholds) are interpreted as the
dyadic rationals they already are.

Level-i coordinates follow the circuit convention: the level-i vector has
2**i entries, level d is the raw input, level 0 the output.  D^(i) is the
pushforward of the input distribution to level i, labels carried along.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import circuit as ct
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    IndexOutOfRange,
    InvalidDistribution,
    InvalidRange,
    PreconditionViolated,
    TooLargeForExact,
    UnsupportedGate,
)

# Tolerances from the interface contract; exact chains meet them with
# room to spare, they exist for float-sourced inputs.
MASS_TOLERANCE = Fraction(1, 10**12)
FACTORIZATION_TOLERANCE = Fraction(1, 10**10)
TV_TOLERANCE = Fraction(1, 10**12)

ENUMERATION_CAP_BITS = 20

def _rng(seed) -> np.random.Generator:
    """Generator from an int, SeedSequence, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))



@dataclass(frozen=True)
class DiscreteDistribution:
    """Exact finite labeled distribution over {-1,+1}**dim."""

    dim: int
    xs: tuple[tuple[int, ...], ...]
    ys: tuple[int, ...]
    nums: tuple[int, ...]
    den: int

    def __post_init__(self) -> None:
        if self.den <= 0:
            raise InvalidDistribution("denominator must be positive")
        if not (len(self.xs) == len(self.ys) == len(self.nums)):
            raise InvalidDistribution("ragged support arrays")
        if len(self.xs) == 0:
            raise InvalidDistribution("empty support")
        if sum(self.nums) != self.den:
            raise InvalidDistribution("masses do not sum to one")
        for x, y, w in zip(self.xs, self.ys, self.nums):
            if len(x) != self.dim:
                raise DimensionMismatch("support point of wrong dimension")
            if w <= 0:
                raise InvalidDistribution("weights must be positive")
            if y not in (-1, 1) or any(v not in (-1, 1) for v in x):
                raise InvalidDistribution("support values must be +-1")
        keys = list(zip(self.xs, self.ys))
        if keys != sorted(set(keys)):
            raise InvalidDistribution("support must be sorted and distinct")

    @staticmethod
    def from_weights(
        dim: int, items: Iterable[tuple[tuple[tuple[int, ...], int], int]], den: int
    ) -> "DiscreteDistribution":
        """Build from ((x, y), integer weight) items sharing denominator den."""
        acc: dict[tuple[tuple[int, ...], int], int] = {}
        for (x, y), w in items:
            if w == 0:
                continue
            key = (tuple(int(v) for v in x), int(y))
            acc[key] = acc.get(key, 0) + int(w)
        keys = sorted(acc)
        return DiscreteDistribution(
            dim=dim,
            xs=tuple(k[0] for k in keys),
            ys=tuple(k[1] for k in keys),
            nums=tuple(acc[k] for k in keys),
            den=den,
        )

    @staticmethod
    def from_fractions(
        dim: int, items: Iterable[tuple[tuple[int, ...], int, Fraction]]
    ) -> "DiscreteDistribution":
        """Build from (x, y, probability) triples with Fraction probabilities."""
        triples = [(tuple(x), int(y), Fraction(p)) for x, y, p in items]
        if not triples:
            raise InvalidDistribution("empty support")
        den = 1
        for _, _, p in triples:
            den = den * p.denominator // np.gcd(den, p.denominator)
        den = int(den)
        return DiscreteDistribution.from_weights(
            dim,
            (((x, y), int(p * den)) for x, y, p in triples),
            den,
        )

    def size(self) -> int:
        return len(self.xs)

    def probabilities(self) -> list[Fraction]:
        return [Fraction(w, self.den) for w in self.nums]

    def float_probs(self) -> np.ndarray:
        # den can exceed float range, so go through Fraction division
        return np.array([float(Fraction(w, self.den)) for w in self.nums])

    def x_array(self) -> np.ndarray:
        return np.array(self.xs, dtype=np.int8)

    def y_array(self) -> np.ndarray:
        return np.array(self.ys, dtype=np.int8)

    def mean_label(self) -> Fraction:
        return Fraction(sum(w * y for w, y in zip(self.nums, self.ys)), self.den)

    def correlation(self, j: int) -> Fraction:
        """E[x_j * y], j 1-based."""
        if not 1 <= j <= self.dim:
            raise IndexOutOfRange(f"coordinate {j} out of range")
        return Fraction(
            sum(w * x[j - 1] * y for w, x, y in zip(self.nums, self.xs, self.ys)),
            self.den,
        )

    def marginal_plus(self, j: int) -> Fraction:
        """P[x_j = +1], j 1-based."""
        if not 1 <= j <= self.dim:
            raise IndexOutOfRange(f"coordinate {j} out of range")
        return Fraction(
            sum(w for w, x in zip(self.nums, self.xs) if x[j - 1] > 0), self.den
        )

    def pair_weights(self, j: int) -> dict[tuple[int, int], dict[int, int]]:
        """Integer weights of (pattern at pair j, label): w[pattern][y]."""
        if not 1 <= 2 * j <= self.dim:
            raise IndexOutOfRange(f"pair {j} out of range")
        out: dict[tuple[int, int], dict[int, int]] = {}
        for w, x, y in zip(self.nums, self.xs, self.ys):
            p = (x[2 * j - 2], x[2 * j - 1])
            out.setdefault(p, {}).setdefault(y, 0)
            out[p][y] += w
        return out

    def flip_labels(self) -> "DiscreteDistribution":
        return DiscreteDistribution.from_weights(
            self.dim,
            (((x, -y), w) for x, y, w in zip(self.xs, self.ys, self.nums)),
            self.den,
        )

    def sample(self, size: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Draw labeled samples; returns (X int8 (size, dim), y int8 (size,))."""
        if size <= 0:
            raise EmptyBatch("sample size must be positive")
        rng = _rng(seed)
        probs = self.float_probs()
        probs = probs / probs.sum()  # guard float rounding
        idx = rng.choice(len(self.nums), size=size, p=probs)
        return self.x_array()[idx], self.y_array()[idx]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "entries": [
                {
                    "x": "".join("+" if v > 0 else "-" for v in x),
                    "y": int(y),
                    "p": float(Fraction(w, self.den)),
                    "p_exact": f"{w}/{self.den}",
                }
                for x, y, w in zip(self.xs, self.ys, self.nums)
            ],
        }


def mean_label(dd: DiscreteDistribution) -> Fraction:
    return dd.mean_label()


def correlation(dd: DiscreteDistribution, j: int) -> Fraction:
    return dd.correlation(j)


def tv_distance(a: DiscreteDistribution, b: DiscreteDistribution) -> Fraction:
    """Total variation distance between two labeled distributions."""
    if a.dim != b.dim:
        raise DimensionMismatch("distributions have different dimensions")
    pa = {k: Fraction(w, a.den) for k, w in zip(zip(a.xs, a.ys), a.nums)}
    pb = {k: Fraction(w, b.den) for k, w in zip(zip(b.xs, b.ys), b.nums)}
    keys = set(pa) | set(pb)
    return sum((abs(pa.get(k, 0) - pb.get(k, 0)) for k in keys), Fraction(0)) / 2


# ---------------------------------------------------------------------------
# product inputs


@dataclass(frozen=True)
class ProductDistribution:
    """Independent bits with P[x_j = +1] = p[j-1]."""

    p: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.p:
            raise InvalidRange("need at least one coordinate")
        for v in self.p:
            if not 0.0 < v < 1.0:
                raise InvalidRange(f"p must lie in (0,1), got {v}")

    @property
    def n(self) -> int:
        return len(self.p)

    def exact(self) -> list[Fraction]:
        return [Fraction(v) for v in self.p]

    def nondegenerate(self, delta: float) -> bool:
        """Whether delta < p_j < 1 - delta strictly for every j."""
        dlt = Fraction(delta)
        return all(dlt < q < 1 - dlt for q in self.exact())

    def sample(self, size: int, seed: int = 0) -> np.ndarray:
        if size <= 0:
            raise EmptyBatch("sample size must be positive")
        rng = _rng(seed)
        u = rng.random(size=(size, self.n))
        return np.where(u < np.array(self.p)[None, :], 1, -1).astype(np.int8)


def uniform_product(n: int) -> ProductDistribution:
    return ProductDistribution(tuple(0.5 for _ in range(n)))


@dataclass(frozen=True)
class LabeledProduct:
    """Product inputs labeled by a circuit."""

    product: ProductDistribution
    circuit: ct.Circuit

    def __post_init__(self) -> None:
        if self.product.n != self.circuit.n:
            raise DimensionMismatch("product width != circuit inputs")

    def sample(self, size: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        X = self.product.sample(size, seed)
        return X, ct.eval_batch(self.circuit, X)

    def enumerate(self) -> DiscreteDistribution:
        """Exact labeled distribution over the full cube."""
        n = self.product.n
        if n > ENUMERATION_CAP_BITS:
            raise TooLargeForExact(f"cannot enumerate 2**{n} support points")
        fracs = self.product.exact()
        den = 1
        for q in fracs:
            den *= q.denominator
        # mass factors per bit; the product over bits is the numerator on den
        plus = [q.numerator for q in fracs]
        minus = [q.denominator - q.numerator for q in fracs]
        lo_bits = n // 2
        hi_bits = n - lo_bits
        lo = _half_products(plus[hi_bits:], minus[hi_bits:])
        hi = _half_products(plus[:hi_bits], minus[:hi_bits])
        X = ct.enumerate_signs(n)
        y = ct.eval_batch(self.circuit, X)
        mask = (1 << lo_bits) - 1
        items = []
        for r in range(2**n):
            w = hi[r >> lo_bits] * lo[r & mask]
            items.append(((tuple(int(v) for v in X[r]), int(y[r])), w))
        return DiscreteDistribution.from_weights(n, items, den)


def _half_products(plus: list[int], minus: list[int]) -> list[int]:
    """Products of per-bit numerators over all sign patterns of a half."""
    out = [1]
    for pl, mn in zip(plus, minus):
        out = [w * f for w in out for f in (mn, pl)]
    return out


def make_labeled_product(pd, c: ct.Circuit) -> LabeledProduct:
    """Attach circuit labels to a product; pd may be a bare p sequence."""
    if not isinstance(pd, ProductDistribution):
        pd = ProductDistribution(tuple(float(v) for v in pd))
    return LabeledProduct(pd, c)


# ---------------------------------------------------------------------------
# generative distributions
#
# Gates restricted to AND/OR/NAND/NOR so every output value has a nonempty
# preimage; sampling walks top-down choosing a uniform preimage pattern,
# the label being the level-0 value.


def _preimage(g: ct.Gate, s: int) -> list[tuple[int, int]]:
    return [p for p in ct.PATTERNS if g(*p) == s]


@dataclass(frozen=True)
class GenerativeDistribution:
    circuit: ct.Circuit

    def __post_init__(self) -> None:
        for layer in self.circuit.layers:
            for g in layer:
                if g not in ct.MONOTONE_GATES:
                    raise UnsupportedGate(
                        "generative circuits use AND/OR/NAND/NOR gates only"
                    )

    def sample(self, size: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Labeled samples drawn top-down; returns (X, y)."""
        if size <= 0:
            raise EmptyBatch("sample size must be positive")
        rng = _rng(seed)
        y = (2 * rng.integers(0, 2, size=size) - 1).astype(np.int8)
        cur = y[:, None].copy()
        for i in range(1, self.circuit.depth + 1):
            nxt = np.empty((size, 2**i), dtype=np.int8)
            for j, g in enumerate(self.circuit.layers[i - 1]):
                # padded preimage tables: size-1 sets repeat their pattern
                pp = _preimage(g, 1)
                pm = _preimage(g, -1)
                tab_p = np.array((pp * 3)[:3], dtype=np.int8)
                tab_m = np.array((pm * 3)[:3], dtype=np.int8)
                u = rng.integers(0, 3, size=size)
                pick = np.where(
                    (cur[:, j] > 0)[:, None], tab_p[u], tab_m[u]
                )
                nxt[:, 2 * j] = pick[:, 0]
                nxt[:, 2 * j + 1] = pick[:, 1]
            cur = nxt
        return cur, y

    def enumerate_level(self, i: int) -> DiscreteDistribution:
        """Exact D^(i): distribution of the level-i vector with its label."""
        if not 0 <= i <= self.circuit.depth:
            raise IndexOutOfRange(f"level {i} out of range")
        if 2**i > ENUMERATION_CAP_BITS:
            raise TooLargeForExact(f"cannot enumerate 2**{2 ** i} support points")
        if i == 0:
            return DiscreteDistribution.from_weights(
                1, ((((s,), s), 1) for s in (-1, 1)), 2
            )
        top = truncate_top(self.circuit, i)
        Z = ct.enumerate_signs(2**i)
        levels = ct.levels_batch(top, Z)
        y = levels[0][:, 0]
        gate_count = 2**i - 1
        # mass of z is (1/2) * prod over gates of 1/|preimage used|
        threes = np.zeros(Z.shape[0], dtype=np.int64)
        for lev in range(1, i + 1):
            out = levels[lev - 1]
            for j, g in enumerate(top.layers[lev - 1]):
                big = len(_preimage(g, 1)) == 3
                s = out[:, j]
                threes += ((s > 0) == big).astype(np.int64)
        den = 2 * 3**gate_count
        items = []
        for r in range(Z.shape[0]):
            w = 3 ** int(gate_count - threes[r])
            items.append(((tuple(int(v) for v in Z[r]), int(y[r])), w))
        return DiscreteDistribution.from_weights(2**i, items, den)

    def enumerate(self) -> DiscreteDistribution:
        """Exact labeled distribution over the raw inputs."""
        return self.enumerate_level(self.circuit.depth)


def truncate_top(c: ct.Circuit, i: int) -> ct.Circuit:
    """The depth-i circuit formed by layers 1..i."""
    if not 1 <= i <= c.depth:
        raise IndexOutOfRange(f"cannot truncate to depth {i}")
    return ct.Circuit(i, c.layers[:i])


def random_generative(d: int, seed: int = 0) -> GenerativeDistribution:
    """Generative distribution over a random AND/OR/NAND/NOR circuit."""
    return GenerativeDistribution(
        ct.random_circuit(d, seed=seed, gate_set=ct.MONOTONE_GATES)
    )


# ---------------------------------------------------------------------------
# pushforward and level chains


def pushforward(
    dd: DiscreteDistribution, c: ct.Circuit, to_layer: int
) -> DiscreteDistribution:
    """Image of dd under the circuit levels down to `to_layer`.

    dd must live on some level i (dim 2**i); the result is the exact
    distribution of the level-`to_layer` vector with labels carried along.
    """
    i = _level_of(dd, c)
    if not 0 <= to_layer <= i:
        raise IndexOutOfRange(f"target level {to_layer} not in 0..{i}")
    if to_layer == i:
        return dd
    Z = dd.x_array()
    cur = Z
    for lev in range(i, to_layer, -1):
        cur = ct.level_map_batch(c, lev, cur)
    items = []
    for r in range(cur.shape[0]):
        items.append(
            ((tuple(int(v) for v in cur[r]), int(dd.ys[r])), dd.nums[r])
        )
    return DiscreteDistribution.from_weights(2**to_layer, items, dd.den)


def _level_of(dd: DiscreteDistribution, c: ct.Circuit) -> int:
    for i in range(c.depth + 1):
        if dd.dim == 2**i:
            return i
    raise DimensionMismatch(
        f"dimension {dd.dim} is not a level width of a depth-{c.depth} circuit"
    )


def level_chain(dd: DiscreteDistribution, c: ct.Circuit) -> list[DiscreteDistribution]:
    """[D^(0), ..., D^(d)] for raw input distribution dd."""
    if dd.dim != c.n:
        raise DimensionMismatch("distribution does not live on the raw inputs")
    chain = [dd]
    for lev in range(c.depth, 0, -1):
        chain.append(pushforward(chain[-1], c, lev - 1))
    chain.reverse()
    return chain


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class GateRecord:
    """Per-coordinate analysis row: coordinate j of the level-i vector."""

    layer: int
    pos: int
    correlation: float
    correlation_exact: str
    influence: float
    influence_single: float
    constant_on_support: bool
    influencing: bool
    lca_margin: float | None
    lca_margin_exact: str | None

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "pos": self.pos,
            "correlation": self.correlation,
            "correlation_exact": self.correlation_exact,
            "influence": self.influence,
            "influence_single": self.influence_single,
            "constant_on_support": self.constant_on_support,
            "influencing": self.influencing,
            "lca_margin": self.lca_margin,
            "lca_margin_exact": self.lca_margin_exact,
        }


@dataclass(frozen=True)
class AnalysisReport:
    """Output of certify_lca / certify_properties."""

    depth: int
    mean_label: float
    mean_label_exact: str
    delta: float | None
    records: tuple[GateRecord, ...]
    lca_verdict: bool | None
    boundary_equalities: tuple[tuple[int, int], ...]
    delta_certified: float | None
    epsilon_certified: float | None
    property1: bool | None
    property2: bool | None
    property3: bool | None
    witnesses: tuple[str, ...]
    label_flip_applied: bool

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "mean_label": self.mean_label,
            "mean_label_exact": self.mean_label_exact,
            "delta": self.delta,
            "records": [r.to_dict() for r in self.records],
            "lca_verdict": self.lca_verdict,
            "boundary_equalities": [list(t) for t in self.boundary_equalities],
            "delta_certified": self.delta_certified,
            "epsilon_certified": self.epsilon_certified,
            "property1": self.property1,
            "property2": self.property2,
            "property3": self.property3,
            "witnesses": list(self.witnesses),
            "label_flip_applied": self.label_flip_applied,
        }


def _frac_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def _normalize_chain(
    chain: Sequence[DiscreteDistribution], c: ct.Circuit
) -> tuple[list[DiscreteDistribution], bool]:
    """Flip labels across the chain when E[y] < 0, so E[y] >= 0 throughout."""
    if len(chain) != c.depth + 1:
        raise DimensionMismatch(f"chain must have {c.depth + 1} levels")
    for i, dd in enumerate(chain):
        if dd.dim != 2**i:
            raise DimensionMismatch(f"chain level {i} has dimension {dd.dim}")
    if chain[0].mean_label() < 0:
        return [dd.flip_labels() for dd in chain], True
    return list(chain), False


def _coordinate_records(
    chain: Sequence[DiscreteDistribution],
    c: ct.Circuit,
    ey: Fraction,
    delta: Fraction | None,
) -> tuple[list[GateRecord], dict[tuple[int, int], Fraction]]:
    """Rows for every (level, coordinate), plus exact margins at influencing ones."""
    profile = ct.influence_profile(c)
    records: list[GateRecord] = []
    margins: dict[tuple[int, int], Fraction] = {}
    for i in range(1, c.depth + 1):
        dd = chain[i]
        for j in range(1, 2**i + 1):
            cx = dd.correlation(j)
            marg = dd.marginal_plus(j)
            constant = marg == 0 or marg == 1
            infl = profile[(i, j)]
            influencing = infl != 0.0 and not constant
            margin: Fraction | None = None
            if influencing:
                margin = abs(cx) - ey - (delta if delta is not None else Fraction(0))
                margins[(i, j)] = margin
            records.append(
                GateRecord(
                    layer=i,
                    pos=j,
                    correlation=float(cx),
                    correlation_exact=_frac_str(cx),
                    influence=infl,
                    influence_single=profile.singles[(i, j)],
                    constant_on_support=constant,
                    influencing=influencing,
                    lca_margin=float(margin) if margin is not None else None,
                    lca_margin_exact=_frac_str(margin) if margin is not None else None,
                )
            )
    return records, margins


def certify_lca(
    chain: Sequence[DiscreteDistribution], c: ct.Circuit, delta: float
) -> AnalysisReport:
    """Check |c_{i,j}| > E[y] + delta at every influencing coordinate.

    Strict at levels i < d; at the bottom layer equality is allowed and
    recorded in boundary_equalities (exact decay rates sit exactly on the
    bound there).  A coordinate is influencing when the circuit above
    depends on it and it is not constant on the support of D^(i).
    """
    dlt = Fraction(delta)
    if dlt < 0:
        raise InvalidRange("delta must be >= 0")
    work, flipped = _normalize_chain(chain, c)
    ey = work[0].mean_label()
    records, margins = _coordinate_records(work, c, ey, dlt)
    verdict = True
    boundary: list[tuple[int, int]] = []
    for (i, j), margin in sorted(margins.items()):
        if margin > 0:
            continue
        if i == c.depth and margin == 0:
            boundary.append((i, j))
        else:
            verdict = False
    return AnalysisReport(
        depth=c.depth,
        mean_label=float(ey),
        mean_label_exact=_frac_str(ey),
        delta=float(dlt),
        records=tuple(records),
        lca_verdict=verdict,
        boundary_equalities=tuple(boundary),
        delta_certified=None,
        epsilon_certified=None,
        property1=None,
        property2=None,
        property3=None,
        witnesses=(),
        label_flip_applied=flipped,
    )


def certify_properties(
    chain: Sequence[DiscreteDistribution], c: ct.Circuit
) -> AnalysisReport:
    """Extract the largest certified margin and pattern floor.

    property1: every coordinate is either independent of the label with no
    influence above, or carries correlation margin |c| - E[y] > 0; the
    certified delta is the smallest such margin.  property2: pair patterns
    are independent of the label given the gate output (within the exact
    factorization tolerance).  property3: every positive-probability pair
    pattern has mass at least the certified epsilon.
    """
    work, flipped = _normalize_chain(chain, c)
    ey = work[0].mean_label()
    records, margins = _coordinate_records(work, c, ey, None)
    witnesses: list[str] = []

    p1 = True
    for rec in records:
        if rec.influencing:
            continue
        # non-influencing coordinates must be independent of the label
        dd = work[rec.layer]
        wp = dd.marginal_plus(rec.pos)
        cx = dd.correlation(rec.pos)
        # independence of +-1 variables is exactly zero covariance
        if cx != (2 * wp - 1) * ey:
            p1 = False
            witnesses.append(
                f"level {rec.layer} pos {rec.pos}: no influence but label-dependent"
            )
    delta_certified: Fraction | None = None
    if margins:
        worst = min(margins.values())
        if worst > 0:
            delta_certified = worst
        else:
            p1 = False
            bad = min(margins, key=margins.get)
            witnesses.append(
                f"level {bad[0]} pos {bad[1]}: correlation margin {float(min(margins.values()))} <= 0"
            )
    else:
        delta_certified = None  # vacuous: no influencing coordinates

    p2 = True
    eps: Fraction | None = None
    for i in range(1, c.depth + 1):
        dd = work[i]
        for j in range(1, 2 ** (i - 1) + 1):
            g = c.gate(i, j)
            pw = dd.pair_weights(j)
            # pattern floor over positive-probability patterns
            for pat, per_label in pw.items():
                mass = Fraction(sum(per_label.values()), dd.den)
                eps = mass if eps is None or mass < eps else eps
            # factorization given the gate output
            for s in (-1, 1):
                pats = [p for p in pw if g(*p) == s]
                t_s = sum(sum(pw[p].values()) for p in pats)
                if t_s == 0:
                    continue
                for p in pats:
                    w_p = sum(pw[p].values())
                    for ylab in (-1, 1):
                        w_py = pw[p].get(ylab, 0)
                        w_sy = sum(pw[q].get(ylab, 0) for q in pats)
                        gap = abs(Fraction(w_py, t_s) - Fraction(w_p * w_sy, t_s * t_s))
                        if gap > FACTORIZATION_TOLERANCE:
                            p2 = False
                            witnesses.append(
                                f"layer {i} gate {j}: pattern/label factorization off by {float(gap)}"
                            )
    p3 = eps is not None and 0 < eps < 1

    return AnalysisReport(
        depth=c.depth,
        mean_label=float(ey),
        mean_label_exact=_frac_str(ey),
        delta=None,
        records=tuple(records),
        lca_verdict=None,
        boundary_equalities=(),
        delta_certified=float(delta_certified) if delta_certified is not None else None,
        epsilon_certified=float(eps) if eps is not None else None,
        property1=p1,
        property2=p2,
        property3=p3,
        witnesses=tuple(witnesses[:20]),
        label_flip_applied=flipped,
    )


def certified_delta_epsilon(
    chain: Sequence[DiscreteDistribution], c: ct.Circuit
) -> tuple[Fraction, Fraction]:
    """Exact (delta, epsilon) from certify_properties, as Fractions.

    Raises PreconditionViolated when no positive margin exists.
    """
    work, _ = _normalize_chain(chain, c)
    ey = work[0].mean_label()
    _, margins = _coordinate_records(work, c, ey, None)
    if not margins or min(margins.values()) <= 0:
        raise PreconditionViolated("no positive correlation margin to certify")
    eps: Fraction | None = None
    for i in range(1, c.depth + 1):
        dd = work[i]
        for j in range(1, 2 ** (i - 1) + 1):
            for per_label in dd.pair_weights(j).values():
                mass = Fraction(sum(per_label.values()), dd.den)
                eps = mass if eps is None or mass < eps else eps
    assert eps is not None
    return min(margins.values()), eps


# ---------------------------------------------------------------------------
# parity instances


@dataclass(frozen=True)
class ParityBoundReport:
    """Exact check of the correlation floor for parity over product inputs."""

    n: int
    relevant: tuple[int, ...]
    xi: float
    bound: float
    bound_exact: str
    mean_label: float
    records: tuple[dict, ...]
    margins_ok: bool
    marginals_ok: bool

    @property
    def verdict(self) -> bool:
        return self.margins_ok and self.marginals_ok

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "relevant": list(self.relevant),
            "xi": self.xi,
            "bound": self.bound,
            "bound_exact": self.bound_exact,
            "mean_label": self.mean_label,
            "records": list(self.records),
            "margins_ok": self.margins_ok,
            "marginals_ok": self.marginals_ok,
            "verdict": self.verdict,
        }


def parity_correlation_bound(
    pd: ProductDistribution, relevant: Sequence[int], xi: float
) -> ParityBoundReport:
    """Exact correlation floor (2*xi)**|relevant| for a parity circuit.

    Requires every p_j in (xi, 1/2 - xi) or (1/2 + xi, 1 - xi); checks
    |c_{i,j}| - |E[y]| >= (2 xi)**k at every influencing coordinate and
    xi < P[z_j = +1] < 1 - xi there too.  Everything is enumerated
    exactly, no closed forms are trusted.
    """
    n = pd.n
    if n & (n - 1) or n < 2:
        raise PreconditionViolated(f"n must be a power of two >= 2, got {n}")
    x = Fraction(xi)
    if not 0 < x < Fraction(1, 2):
        raise InvalidRange("xi must lie in (0, 1/2)")
    half = Fraction(1, 2)
    for q in pd.exact():
        if not (x < q < half - x or half + x < q < 1 - x):
            raise PreconditionViolated(
                f"p = {float(q)} not in (xi, 1/2 - xi) or (1/2 + xi, 1 - xi)"
            )
    rel = tuple(sorted(set(int(v) for v in relevant)))
    d = n.bit_length() - 1
    c = ct.build_parity_circuit(d, rel)
    chain = level_chain(make_labeled_product(pd, c).enumerate(), c)
    work, _ = _normalize_chain(chain, c)
    ey = abs(chain[0].mean_label())
    bound = (2 * x) ** len(rel)
    profile = ct.influence_profile(c)
    records: list[dict] = []
    margins_ok = True
    marginals_ok = True
    for i in range(1, d + 1):
        dd = work[i]
        for j in range(1, 2**i + 1):
            marg = dd.marginal_plus(j)
            constant = marg == 0 or marg == 1
            if constant or profile[(i, j)] == 0.0:
                continue
            cx = abs(dd.correlation(j))
            gap = cx - ey - bound
            ok_margin = gap >= 0
            ok_marg = x < marg < 1 - x
            margins_ok = margins_ok and ok_margin
            marginals_ok = marginals_ok and ok_marg
            records.append(
                {
                    "layer": i,
                    "pos": j,
                    "correlation_abs": float(cx),
                    "margin_over_bound": float(gap),
                    "margin_exact": _frac_str(gap),
                    "marginal_plus": float(marg),
                    "margin_ok": ok_margin,
                    "marginal_ok": ok_marg,
                }
            )
    return ParityBoundReport(
        n=n,
        relevant=rel,
        xi=float(x),
        bound=float(bound),
        bound_exact=_frac_str(bound),
        mean_label=float(chain[0].mean_label()),
        records=tuple(records),
        margins_ok=margins_ok,
        marginals_ok=marginals_ok,
    )


# ---------------------------------------------------------------------------
# datasets and spec files


def write_dataset_csv(path: str | Path, X: np.ndarray, y: np.ndarray) -> Path:
    """n columns of +-1 then a label column, with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    X = np.asarray(X)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatch("X must be (N, n) with matching labels")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["y"])
        for row, lab in zip(X, y):
            w.writerow([int(v) for v in row] + [int(lab)])
    return path


def read_dataset_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows: list[list[int]] = []
    with Path(path).open(newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            if rec[0].lstrip("-+").isdigit():
                rows.append([int(v) for v in rec])
    if not rows:
        raise EmptyBatch(f"no samples in {path}")
    arr = np.array(rows, dtype=np.int8)
    return arr[:, :-1], arr[:, -1]


def dataset_to_distribution(X: np.ndarray, y: np.ndarray) -> DiscreteDistribution:
    """Empirical distribution of a labeled sample (exact counts over N)."""
    X = np.asarray(X, dtype=np.int8)
    y = np.asarray(y, dtype=np.int8)
    items: dict[tuple[tuple[int, ...], int], int] = {}
    for row, lab in zip(X, y):
        key = (tuple(int(v) for v in row), int(lab))
        items[key] = items.get(key, 0) + 1
    return DiscreteDistribution.from_weights(
        X.shape[1], items.items(), int(X.shape[0])
    )


@dataclass(frozen=True)
class DistSpec:
    """Parsed distribution spec file: a product or generative source."""

    kind: str
    product: ProductDistribution | None
    generative: GenerativeDistribution | None
    circuit: ct.Circuit | None

    def labeled(self) -> LabeledProduct | GenerativeDistribution:
        if self.kind == "generative":
            assert self.generative is not None
            return self.generative
        if self.circuit is None:
            raise PreconditionViolated(
                "product spec needs a circuit to label samples"
            )
        assert self.product is not None
        return LabeledProduct(self.product, self.circuit)

    def label_circuit(self) -> ct.Circuit:
        if self.kind == "generative":
            assert self.generative is not None
            return self.generative.circuit
        if self.circuit is None:
            raise PreconditionViolated("product spec has no circuit attached")
        return self.circuit


def load_dist_spec(doc: dict, base_dir: str | Path | None = None) -> DistSpec:
    """Parse {"kind": "product"|"generative", ...}; circuit may be a path or inline."""
    kind = doc.get("kind")
    circuit = None
    if "circuit" in doc and doc["circuit"] is not None:
        spec = doc["circuit"]
        if isinstance(spec, str):
            import json

            p = Path(spec)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            spec = json.loads(p.read_text())
        circuit = ct.circuit_from_dict(spec)
    if kind == "product":
        pd = ProductDistribution(tuple(float(v) for v in doc["p"]))
        return DistSpec("product", pd, None, circuit)
    if kind == "generative":
        if circuit is None:
            raise PreconditionViolated("generative spec requires a circuit")
        return DistSpec("generative", None, GenerativeDistribution(circuit), circuit)
    raise InvalidRange(f"unknown distribution kind {kind!r}")
