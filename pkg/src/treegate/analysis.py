"""Stand-alone verifiers: the shallow-net rank bound and the lemma suite.

The rank side checks the mechanism behind the depth-separation argument:
a width-k ReLU net over (x, y) with integer first-layer weights bounded
by B has a value matrix of rank at most 4Bkn', because each unit's value
matrix is blockwise constant once rows and columns are sorted by the
unit's two inner products.  Rank is computed exactly over the rationals
and cross-checked against a double-precision SVD.

The lemma suite re-derives, at desk scale, the distribution facts the
rest of the package relies on: parity circuits compute the product of
their relevant bits, biased products give parity gates a correlation
floor, generative chains have exactly geometric correlation decay and
exact pushforward consistency, and population training drives every
active unit in the certified direction.  Each item returns a margin and
a verdict; corrupting any input must flip the verdict (the tests do).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import circuit as ct
from . import dist as ds
from . import train as tr
from .errors import InvalidRange, TooLargeForExact

RANK_SVD_REL_TOL = 1e-8
PUSHFORWARD_TV_TOL = 1e-12


# ---------------------------------------------------------------------------
# quantized shallow nets and the rank bound


@dataclass(frozen=True)
class QuantizedShallowNet:
    """sum_i u_i relu(<w_i, x> + <v_i, y> + b_i), integer first layer."""

    w: np.ndarray  # (k, n') int
    v: np.ndarray  # (k, n') int
    b: np.ndarray  # (k,) int
    u: np.ndarray  # (k,) float
    B: int

    def __post_init__(self) -> None:
        w, v, b, u = map(np.asarray, (self.w, self.v, self.b, self.u))
        object.__setattr__(self, "w", w.astype(np.int64))
        object.__setattr__(self, "v", v.astype(np.int64))
        object.__setattr__(self, "b", b.astype(np.int64))
        object.__setattr__(self, "u", u.astype(np.float64))
        if self.B < 1:
            raise InvalidRange("B must be at least 1")
        if not (w.shape == v.shape and w.ndim == 2):
            raise InvalidRange("w and v must be (k, n') and equal shape")
        if b.shape != (w.shape[0],) or u.shape != (w.shape[0],):
            raise InvalidRange("b and u must have one entry per unit")
        for name, arr in (("w", self.w), ("v", self.v), ("b", self.b)):
            if np.any(np.abs(arr) > self.B):
                raise InvalidRange(f"{name} entries exceed the bound {self.B}")

    @property
    def k(self) -> int:
        return self.w.shape[0]

    @property
    def n_prime(self) -> int:
        return self.w.shape[1]

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        pre = self.w @ x + self.v @ y + self.b
        return float(self.u @ np.maximum(pre, 0))


def random_qnet(
    n_prime: int, k: int, B: int, seed: int = 0
) -> QuantizedShallowNet:
    rng = np.random.Generator(np.random.PCG64(seed))
    return QuantizedShallowNet(
        w=rng.integers(-B, B + 1, size=(k, n_prime)),
        v=rng.integers(-B, B + 1, size=(k, n_prime)),
        b=rng.integers(-B, B + 1, size=k),
        u=rng.uniform(-1.0, 1.0, size=k),
        B=B,
    )


def build_value_matrix(f, n_prime: int) -> np.ndarray:
    """[f(x, y)] with rows x and columns y in lexicographic +-1 order.

    f is a QuantizedShallowNet or any callable of two +-1 vectors; the
    index order (-1 before +1, leftmost coordinate most significant) is
    part of the contract.
    """
    if n_prime > 7:
        raise TooLargeForExact("value matrices limited to 128 x 128")
    pts = ct.enumerate_signs(n_prime)
    side = len(pts)
    M = np.empty((side, side), dtype=np.float64)
    for r in range(side):
        for cidx in range(side):
            M[r, cidx] = f(pts[r], pts[cidx])
    return M


def _unit_value_matrix(
    w: np.ndarray, v: np.ndarray, b: int, n_prime: int
) -> np.ndarray:
    pts = ct.enumerate_signs(n_prime)
    a = pts @ w  # (2^n',) integer row scores
    c = pts @ v
    return np.maximum(a[:, None] + c[None, :] + int(b), 0).astype(np.int64)


def integer_rank(M: np.ndarray) -> int:
    """Exact rank of an integer matrix (fraction-free elimination)."""
    A = [[int(x) for x in row] for row in M]
    return _exact_rank_rows([[Fraction(x) for x in row] for row in A])


def fraction_rank(M: np.ndarray) -> int:
    """Exact rank of a float matrix read as exact binary rationals."""
    return _exact_rank_rows([[Fraction(x) for x in row] for row in M])


def _exact_rank_rows(rows: list) -> int:
    nrows = len(rows)
    ncols = len(rows[0]) if nrows else 0
    rank = 0
    r = 0
    for c in range(ncols):
        pivot = next((i for i in range(r, nrows) if rows[i][c] != 0), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        inv = 1 / rows[r][c]
        rows[r] = [x * inv for x in rows[r]]
        for i in range(nrows):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * bb for a, bb in zip(rows[i], rows[r])]
        r += 1
        rank += 1
        if r == nrows:
            break
    return rank


def numeric_rank(M: np.ndarray, rel_tol: float = RANK_SVD_REL_TOL) -> int:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


@dataclass
class UnitCheck:
    unit: int
    rank: int
    bound: int
    blockwise_constant: bool
    values_in_range: bool

    @property
    def ok(self) -> bool:
        return self.rank <= self.bound and self.blockwise_constant and self.values_in_range


@dataclass
class RankReport:
    n_prime: int
    k: int
    B: int
    rank_exact: int
    rank_numeric: int
    bound: int
    units: list

    @property
    def ok(self) -> bool:
        return (
            self.rank_exact <= self.bound
            and self.rank_exact == self.rank_numeric
            and all(u.ok for u in self.units)
        )

    def to_dict(self) -> dict:
        return {
            "n_prime": self.n_prime,
            "k": self.k,
            "B": self.B,
            "rank_exact": self.rank_exact,
            "rank_numeric": self.rank_numeric,
            "bound": self.bound,
            "pass": self.ok,
            "units": [
                {
                    "unit": u.unit,
                    "rank": u.rank,
                    "bound": u.bound,
                    "blockwise_constant": u.blockwise_constant,
                    "values_in_range": u.values_in_range,
                }
                for u in self.units
            ],
        }


def blockwise_check(net: QuantizedShallowNet, unit: int) -> UnitCheck:
    """Structure of one unit's value matrix.

    Sorted by the two inner products, the matrix must be constant on each
    (row score, column score) block, with integer values in
    [0, 2Bn' + B]: the inner products span at most Bn' each and the bias
    adds at most B, so the cap includes the bias term.
    """
    npr = net.n_prime
    M = _unit_value_matrix(net.w[unit], net.v[unit], int(net.b[unit]), npr)
    pts = ct.enumerate_signs(npr)
    a = pts @ net.w[unit]
    c = pts @ net.v[unit]
    order_r = np.argsort(a, kind="stable")
    order_c = np.argsort(c, kind="stable")
    S = M[np.ix_(order_r, order_c)]
    ok_blocks = True
    for score_r in np.unique(a):
        rows = np.flatnonzero(a[order_r] == score_r)
        for score_c in np.unique(c):
            cols = np.flatnonzero(c[order_c] == score_c)
            block = S[np.ix_(rows, cols)]
            if block.size and np.any(block != block.flat[0]):
                ok_blocks = False
    cap = 2 * net.B * npr + net.B
    ok_range = bool(np.all(M >= 0) and np.all(M <= cap))
    return UnitCheck(
        unit=unit,
        rank=integer_rank(M),
        bound=4 * net.B * npr,
        blockwise_constant=ok_blocks,
        values_in_range=ok_range,
    )


def rank_bound_check(net: QuantizedShallowNet) -> RankReport:
    """rank(value matrix) <= 4Bkn', exact and numeric, plus unit structure."""
    if net.n_prime > 7:
        raise TooLargeForExact("n' must be at most 7")
    if net.k > 32:
        raise TooLargeForExact("k must be at most 32")
    if net.B > 7:
        raise TooLargeForExact("B must be at most 7")
    M = build_value_matrix(net, net.n_prime)
    return RankReport(
        n_prime=net.n_prime,
        k=net.k,
        B=net.B,
        rank_exact=fraction_rank(M),
        rank_numeric=numeric_rank(M),
        bound=4 * net.B * net.k * net.n_prime,
        units=[blockwise_check(net, i) for i in range(net.k)],
    )


# ---------------------------------------------------------------------------
# lemma suite


@dataclass
class LemmaVerdict:
    lemma: str
    params: dict
    margin: float
    ok: bool

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "params": self.params,
            "margin": self.margin,
            "pass": self.ok,
        }


LEMMA_IDS = (
    "parity_product_identity",
    "parity_correlation_margin",
    "product_pattern_floor",
    "generative_correlation_decay",
    "generative_pushforward_identity",
    "generative_support_floor",
    "gradient_alignment",
)


def lemma_parity_identity(d: int, relevant: tuple) -> LemmaVerdict:
    """The parity circuit equals the product of its relevant bits."""
    c = ct.build_parity_circuit(d, relevant)
    X = ct.enumerate_signs(2**d)
    got = ct.eval_batch(c, X)
    want = np.prod(X[:, [j - 1 for j in relevant]], axis=1)
    diff = int(np.max(np.abs(got - want)))
    return LemmaVerdict(
        "parity_product_identity",
        {"d": d, "relevant": list(relevant)},
        float(diff),
        diff == 0,
    )


def lemma_parity_margin(
    p: tuple, relevant: tuple, xi: float, d: int
) -> LemmaVerdict:
    """Correlation floor (2 xi)^|I| over the label mean, every gate."""
    pd = ds.ProductDistribution(tuple(p))
    rep = ds.parity_correlation_bound(pd, relevant, xi)
    margin = min(
        (r["margin_over_bound"] for r in rep.records), default=float("inf")
    )
    return LemmaVerdict(
        "parity_correlation_margin",
        {"d": d, "relevant": list(relevant), "xi": xi, "p": list(p)},
        float(margin),
        rep.verdict,
    )


def lemma_pattern_floor(p: tuple, d: int, relevant: tuple) -> LemmaVerdict:
    """Certified pattern floor at least (certified margin)^2 / 4.

    The margin here is the smaller of the correlation margin and the
    distance of the bit probabilities from {0, 1}, since the statement
    assumes both forms of non-degeneracy at the same level.
    """
    c = ct.build_parity_circuit(d, relevant)
    dd = ds.make_labeled_product(p, c).enumerate()
    chain = ds.level_chain(dd, c)
    delta_c, eps_c = ds.certified_delta_epsilon(chain, c)
    nondeg = min(min(Fraction(v), 1 - Fraction(v)) for v in p)
    delta_used = min(delta_c, nondeg)
    margin = eps_c - delta_used * delta_used / 4
    return LemmaVerdict(
        "product_pattern_floor",
        {"d": d, "relevant": list(relevant), "p": list(p)},
        float(margin),
        margin >= 0,
    )


def lemma_generative_decay(c: ct.Circuit) -> LemmaVerdict:
    """|correlation| is exactly (2/3)^i at every level-i coordinate."""
    dd = ds.GenerativeDistribution(c).enumerate()
    chain = ds.level_chain(dd, c)
    worst = Fraction(0)
    exact = True
    for i in range(1, c.depth + 1):
        want = Fraction(2, 3) ** i
        for j in range(1, 2**i + 1):
            got = abs(chain[i].correlation(j))
            if got != want:
                exact = False
                worst = max(worst, abs(got - want))
    # margin over the label mean is the LCA quantity; zero only at i = d
    margins = [
        float(Fraction(2, 3) ** i - abs(chain[0].mean_label()))
        for i in range(1, c.depth + 1)
    ]
    strict_above = all(m > 0 for m in margins[:-1])
    return LemmaVerdict(
        "generative_correlation_decay",
        {"depth": c.depth, "boundary_margin": margins[-1]},
        float(worst) if not exact else min(margins),
        exact and strict_above,
    )


def lemma_pushforward(c: ct.Circuit) -> LemmaVerdict:
    """One gate layer maps each level law onto the next, exactly."""
    dd = ds.GenerativeDistribution(c).enumerate()
    chain = ds.level_chain(dd, c)
    worst = Fraction(0)
    for i in range(c.depth, 0, -1):
        pushed = ds.pushforward(chain[i], c, i - 1)
        worst = max(worst, ds.tv_distance(pushed, chain[i - 1]))
    return LemmaVerdict(
        "generative_pushforward_identity",
        {"depth": c.depth},
        float(worst),
        worst < Fraction(PUSHFORWARD_TV_TOL),
    )


def lemma_support_floor(c: ct.Circuit) -> LemmaVerdict:
    """Certified pattern floor at least 1/n^2 (depth 2 and up)."""
    if c.depth < 2:
        raise InvalidRange("support floor statement needs depth >= 2")
    dd = ds.GenerativeDistribution(c).enumerate()
    chain = ds.level_chain(dd, c)
    _, eps_c = ds.certified_delta_epsilon(chain, c)
    floor = Fraction(1, c.n**2)
    return LemmaVerdict(
        "generative_support_floor",
        {"depth": c.depth, "n": c.n},
        float(eps_c - floor),
        eps_c >= floor,
    )


def lemma_alignment(c: ct.Circuit, seed: int = 0) -> LemmaVerdict:
    """Population drive clears its floor at every active tuple of a run."""
    dd = ds.GenerativeDistribution(c).enumerate()
    chain = ds.level_chain(dd, c)
    delta_c, eps_c = ds.certified_delta_epsilon(chain, c)
    probe = tr.make_alignment_probe(c, dd, float(delta_c), float(eps_c))
    cfg = tr.derive_hyperparams(
        c.n,
        c.depth,
        delta=float(delta_c),
        epsilon=float(eps_c),
        variant="support",
        seed=seed,
    )
    tr.train_layerwise(dd, cfg, probe=probe)
    res = probe.result
    return LemmaVerdict(
        "gradient_alignment",
        {"depth": c.depth, "seed": seed, "tuples": res.tuples_checked},
        res.min_margin if res.tuples_checked else float("nan"),
        res.ok and res.tuples_checked > 0,
    )


def run_lemma_suite(
    scope: str = "all",
    seed: int = 0,
    parity_count: int = 50,
    product_count: int = 20,
    generative_count: int = 20,
    max_depth: int = 4,
) -> list[LemmaVerdict]:
    """The default desk-scale verification sweep.

    scope is "all" or one lemma id; instances are drawn deterministically
    from the seed.  Product instances use probabilities on the 1/64 grid
    inside the xi = 3/16 annulus so exact arithmetic stays small.
    """
    if scope != "all" and scope not in LEMMA_IDS:
        raise InvalidRange(f"unknown lemma scope {scope!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    verdicts: list[LemmaVerdict] = []

    def want(name: str) -> bool:
        return scope in ("all", name)

    if want("parity_product_identity"):
        for _ in range(parity_count):
            d = int(rng.integers(2, max_depth + 1))
            n = 2**d
            size = int(rng.integers(1, n + 1))
            relevant = tuple(
                sorted(int(v) + 1 for v in rng.choice(n, size=size, replace=False))
            )
            verdicts.append(lemma_parity_identity(d, relevant))

    if want("parity_correlation_margin") or want("product_pattern_floor"):
        xi = 3.0 / 16.0
        # 1/64-grid probabilities strictly inside (xi, 1/2-xi) or (1/2+xi, 1-xi)
        lo = [f / 64 for f in range(13, 20)]
        hi = [f / 64 for f in range(45, 52)]
        for _ in range(product_count):
            d = int(rng.integers(2, max_depth + 1))
            n = 2**d
            size = int(rng.integers(1, min(n, 6) + 1))
            relevant = tuple(
                sorted(int(v) + 1 for v in rng.choice(n, size=size, replace=False))
            )
            p = tuple(
                float(rng.choice(hi if rng.random() < 0.8 else lo)) for _ in range(n)
            )
            if want("parity_correlation_margin"):
                verdicts.append(lemma_parity_margin(p, relevant, xi, d))
            if want("product_pattern_floor"):
                verdicts.append(lemma_pattern_floor(p, d, relevant))

    if want("generative_correlation_decay") or want("generative_pushforward_identity") or want("generative_support_floor"):
        for idx in range(generative_count):
            d = int(rng.integers(2, max_depth + 1))
            c = ds.random_generative(d, seed=int(rng.integers(0, 2**31))).circuit
            if want("generative_correlation_decay"):
                verdicts.append(lemma_generative_decay(c))
            if want("generative_pushforward_identity"):
                verdicts.append(lemma_pushforward(c))
            if want("generative_support_floor"):
                verdicts.append(lemma_support_floor(c))

    if want("gradient_alignment"):
        c = ds.random_generative(3, seed=seed).circuit
        verdicts.append(lemma_alignment(c, seed=seed))

    return verdicts
