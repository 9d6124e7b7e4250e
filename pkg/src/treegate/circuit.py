"""Tree-structured Boolean circuits over {-1,+1}.

A circuit is a full binary tree of depth d over n = 2**d inputs.  Gate
layers are numbered 1..d with layer i holding 2**(i-1) two-input gates;
layer 1 is the single output gate and layer d reads the raw input pairs.
Values are described by *levels*: the level-i vector has 2**i entries,
level d is the raw input, and applying the gates of layer i to the
level-i vector yields the level-(i-1) vector.  Level 0 is the circuit
output.  All indices below are 1-based to match that scheme.

Bits are plain ints in {-1,+1}; batch helpers use numpy arrays of the
same values.  -1 is false, +1 is true.

>>> c = build_parity_circuit(2, (1, 2, 3, 4))
>>> eval_circuit(c, (1, -1, 1, 1))
-1
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyIndexSet,
    IndexOutOfRange,
    InvalidRange,
    TooLargeForExact,
    UnsupportedGate,
)

# Canonical input order for 2-bit truth tables.
PATTERNS: tuple[tuple[int, int], ...] = ((-1, -1), (-1, 1), (1, -1), (1, 1))

# Exact exhaustive influence is capped at this many input bits per level.
EXACT_INFLUENCE_CAP_BITS = 20


def pattern_index(a: int, b: int) -> int:
    """Index of the pattern (a, b) in PATTERNS."""
    return (a > 0) * 2 + (b > 0)


@dataclass(frozen=True)
class Gate:
    """A 2-input gate given by its truth table over PATTERNS."""

    table: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.table) != 4 or any(v not in (-1, 1) for v in self.table):
            raise UnsupportedGate(f"not a +-1 truth table: {self.table!r}")

    def __call__(self, a: int, b: int) -> int:
        return self.table[pattern_index(a, b)]


def gate_from_table(table: Sequence[int]) -> Gate:
    """Build a Gate from 4 values in {-1,+1}, canonical pattern order."""
    return Gate(tuple(int(v) for v in table))


AND = gate_from_table((-1, -1, -1, 1))
OR = gate_from_table((-1, 1, 1, 1))
NAND = gate_from_table((1, 1, 1, -1))
NOR = gate_from_table((1, -1, -1, -1))
XOR = gate_from_table((-1, 1, 1, -1))
XNOR = gate_from_table((1, -1, -1, 1))
#: z1 * z2; with -1 as false this is XNOR, and it is the parity combiner,
#: since multiplying +-1 values adds their (-1)-exponents.
PROD = XNOR
CONST_TRUE = gate_from_table((1, 1, 1, 1))
CONST_FALSE = gate_from_table((-1, -1, -1, -1))
LEFT = gate_from_table((-1, -1, 1, 1))
RIGHT = gate_from_table((-1, 1, -1, 1))

#: All 16 two-input gates, in truth-table order.
ALL_GATES: tuple[Gate, ...] = tuple(
    gate_from_table([2 * ((t >> (3 - s)) & 1) - 1 for s in range(4)])
    for t in range(16)
)

#: Gates allowed in generative distributions.
MONOTONE_GATES: tuple[Gate, ...] = (AND, OR, NAND, NOR)


@dataclass(frozen=True)
class Circuit:
    """Full binary tree of gates; layers[i-1] holds the 2**(i-1) gates of layer i."""

    depth: int
    layers: tuple[tuple[Gate, ...], ...]

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise InvalidRange(f"depth must be >= 1, got {self.depth}")
        if len(self.layers) != self.depth:
            raise DimensionMismatch(
                f"expected {self.depth} layers, got {len(self.layers)}"
            )
        for i, layer in enumerate(self.layers, start=1):
            if len(layer) != 2 ** (i - 1):
                raise DimensionMismatch(
                    f"layer {i} must hold {2 ** (i - 1)} gates, got {len(layer)}"
                )

    @property
    def n(self) -> int:
        """Number of inputs."""
        return 2**self.depth

    def gate(self, i: int, j: int) -> Gate:
        """Gate j of layer i (both 1-based)."""
        _check_layer(self, i)
        if not 1 <= j <= 2 ** (i - 1):
            raise IndexOutOfRange(f"gate index {j} out of range for layer {i}")
        return self.layers[i - 1][j - 1]

    def with_gate(self, i: int, j: int, g: Gate) -> "Circuit":
        """Copy of the circuit with gate (i, j) replaced."""
        self.gate(i, j)  # index check
        layers = list(map(list, self.layers))
        layers[i - 1][j - 1] = g
        return Circuit(self.depth, tuple(tuple(l) for l in layers))


def _check_layer(c: Circuit, i: int) -> None:
    if not 1 <= i <= c.depth:
        raise IndexOutOfRange(f"layer {i} out of range for depth {c.depth}")


def eval_gate(g: Gate, a: int, b: int) -> int:
    """Apply a single gate to two bits."""
    return g(a, b)


def level_map(c: Circuit, i: int, z: Sequence[int]) -> tuple[int, ...]:
    """Apply the gates of layer i to a level-i vector, giving level i-1.

    >>> c = build_parity_circuit(2, (1, 2, 3, 4))
    >>> level_map(c, 2, (1, -1, 1, 1))
    (-1, 1)
    """
    _check_layer(c, i)
    if len(z) != 2**i:
        raise DimensionMismatch(f"level {i} vector must have {2 ** i} entries")
    layer = c.layers[i - 1]
    return tuple(
        layer[j].table[pattern_index(z[2 * j], z[2 * j + 1])]
        for j in range(len(layer))
    )


def level_vectors(c: Circuit, x: Sequence[int]) -> list[tuple[int, ...]]:
    """All level vectors for input x, indexed by level (entry i is level i).

    Entry d is x itself and entry 0 is the 1-vector holding the output.
    """
    if len(x) != c.n:
        raise DimensionMismatch(f"expected {c.n} inputs, got {len(x)}")
    out: list[tuple[int, ...]] = [tuple(int(v) for v in x)]
    for i in range(c.depth, 0, -1):
        out.append(level_map(c, i, out[-1]))
    out.reverse()
    return out


def eval_circuit(c: Circuit, x: Sequence[int]) -> int:
    """Circuit output on one input vector."""
    return level_vectors(c, x)[0][0]


# ---------------------------------------------------------------------------
# batch evaluation
#
# The analysis paths enumerate full cubes, so levels are computed for many
# inputs at once; gates become table lookups on an index in 0..3.


def _layer_tables(c: Circuit, i: int) -> np.ndarray:
    return np.array([g.table for g in c.layers[i - 1]], dtype=np.int8)


def level_map_batch(c: Circuit, i: int, Z: np.ndarray) -> np.ndarray:
    """level_map applied to each row of Z (shape (N, 2**i))."""
    _check_layer(c, i)
    if Z.ndim != 2 or Z.shape[1] != 2**i:
        raise DimensionMismatch(f"expected shape (N, {2 ** i}), got {Z.shape}")
    left = Z[:, 0::2]
    right = Z[:, 1::2]
    idx = (left > 0).astype(np.int8) * 2 + (right > 0).astype(np.int8)
    tables = _layer_tables(c, i)
    return tables[np.arange(tables.shape[0])[None, :], idx]


def levels_batch(c: Circuit, X: np.ndarray) -> list[np.ndarray]:
    """Level vectors for each row of X; entry i of the result is level i."""
    X = np.asarray(X, dtype=np.int8)
    if X.ndim != 2 or X.shape[1] != c.n:
        raise DimensionMismatch(f"expected shape (N, {c.n}), got {X.shape}")
    out = [X]
    for i in range(c.depth, 0, -1):
        out.append(level_map_batch(c, i, out[-1]))
    out.reverse()
    return out


def eval_batch(c: Circuit, X: np.ndarray) -> np.ndarray:
    """Circuit outputs for each row of X, shape (N,)."""
    return levels_batch(c, X)[0][:, 0]


def compose_above_batch(c: Circuit, i: int, Z: np.ndarray) -> np.ndarray:
    """Apply layers i..1 to level-i vectors Z, returning outputs (N,)."""
    if i == 0:
        if Z.shape[1] != 1:
            raise DimensionMismatch("level 0 vectors have one entry")
        return Z[:, 0]
    _check_layer(c, i)
    cur = np.asarray(Z, dtype=np.int8)
    for lev in range(i, 0, -1):
        cur = level_map_batch(c, lev, cur)
    return cur[:, 0]


def enumerate_signs(m: int) -> np.ndarray:
    """All 2**m sign vectors, lexicographic with -1 < +1, shape (2**m, m).

    Row r encodes r in binary, most significant bit first, 0 -> -1.
    """
    if m < 0:
        raise InvalidRange("m must be >= 0")
    if m > EXACT_INFLUENCE_CAP_BITS:
        raise TooLargeForExact(f"2**{m} rows exceeds the exhaustive cap")
    r = np.arange(2**m, dtype=np.int64)
    bits = (r[:, None] >> np.arange(m - 1, -1, -1)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


# ---------------------------------------------------------------------------
# influence


@dataclass(frozen=True)
class InfluenceEstimate:
    """Monte Carlo influence estimate with its standard error."""

    value: float
    stderr: float
    samples: int


def influence(
    c: Circuit,
    i: int,
    j: int,
    mode: str = "exact",
    samples: int = 100_000,
    seed: int = 0,
    scope: str = "full",
):
    """Influence of coordinate j of the level-i vector on the value above.

    Flips coordinate j and measures how often the composition of layers
    i..1 changes, under the uniform distribution on {-1,+1}**(2**i).  With
    scope="single_level" only layer i is applied before comparing.  Exact
    mode enumerates the cube (2**i inputs, capped at 2**20) and returns a
    float that is a dyadic rational, so == comparisons are meaningful;
    monte_carlo mode returns an InfluenceEstimate.

    >>> c = build_parity_circuit(1, (1, 2))
    >>> influence(c, 1, 1)
    1.0
    """
    _check_layer(c, i)
    m = 2**i
    if not 1 <= j <= m:
        raise IndexOutOfRange(f"coordinate {j} out of range for level {i}")
    if scope not in ("full", "single_level"):
        raise InvalidRange(f"unknown scope {scope!r}")

    if mode == "exact":
        if m > EXACT_INFLUENCE_CAP_BITS:
            raise TooLargeForExact(
                f"level {i} needs 2**{m} evaluations, cap is 2**{EXACT_INFLUENCE_CAP_BITS}"
            )
        Z = enumerate_signs(m)
        vals = _influence_values(c, i, j, Z, scope)
        # flipping coordinate j toggles bit m-j of the row index
        flip = np.arange(2**m, dtype=np.int64) ^ (1 << (m - j))
        changed = int(np.count_nonzero(vals != vals[flip]))
        return changed / 2**m
    if mode == "monte_carlo":
        if samples <= 0:
            raise InvalidRange("samples must be positive")
        rng = np.random.Generator(np.random.PCG64(seed))
        Z = (2 * rng.integers(0, 2, size=(samples, m)) - 1).astype(np.int8)
        vals = _influence_values(c, i, j, Z, scope)
        Zf = Z.copy()
        Zf[:, j - 1] *= -1
        vals_f = _influence_values(c, i, j, Zf, scope)
        p = float(np.mean(vals != vals_f))
        stderr = float(np.sqrt(p * (1.0 - p) / samples))
        return InfluenceEstimate(p, stderr, samples)
    raise InvalidRange(f"unknown influence mode {mode!r}")


def _influence_values(
    c: Circuit, i: int, j: int, Z: np.ndarray, scope: str
) -> np.ndarray:
    if scope == "full":
        return compose_above_batch(c, i, Z)
    # single level: only the parent gate of coordinate j can change
    out = level_map_batch(c, i, Z)
    return out[:, (j - 1) // 2]


@dataclass(frozen=True)
class InfluenceProfile:
    """Exact influences of every (level, coordinate), full and single-level."""

    full: dict
    singles: dict

    def __getitem__(self, key: tuple[int, int]) -> float:
        return self.full[key]


def influence_profile(c: Circuit) -> InfluenceProfile:
    """Exact influence of every coordinate, one enumeration per level."""
    full: dict[tuple[int, int], float] = {}
    singles: dict[tuple[int, int], float] = {}
    for i in range(1, c.depth + 1):
        m = 2**i
        if m > EXACT_INFLUENCE_CAP_BITS:
            raise TooLargeForExact(f"level {i} exceeds the exhaustive cap")
        Z = enumerate_signs(m)
        vals = compose_above_batch(c, i, Z)
        level_out = level_map_batch(c, i, Z)
        rows = np.arange(2**m, dtype=np.int64)
        for j in range(1, m + 1):
            flip = rows ^ (1 << (m - j))
            full[(i, j)] = int(np.count_nonzero(vals != vals[flip])) / 2**m
            col = level_out[:, (j - 1) // 2]
            singles[(i, j)] = int(np.count_nonzero(col != col[flip])) / 2**m
    return InfluenceProfile(full, singles)


def output_influence(c: Circuit, i: int, j: int) -> float:
    """Exact influence of gate (i, j)'s output coordinate (level i-1, pos j)."""
    _check_layer(c, i)
    if i == 1:
        return 1.0  # the output itself; flipping it always changes it
    return influence(c, i - 1, j)


def normalize_constant_gates(c: Circuit) -> Circuit:
    """Replace every gate whose output nothing above depends on by constant-1.

    A gate (i, j) is replaced iff the exact influence of its output
    coordinate is 0, i.e. the composition of layers i-1..1 is the same
    function with that coordinate flipped.  The circuit's value is then
    unchanged on every input.  Gates whose output is constant but still
    read above (a constant under an XOR, say) are kept, since replacing
    them would change the value.  Idempotent.
    """
    layers = list(map(list, c.layers))
    for i in range(2, c.depth + 1):
        for j in range(1, 2 ** (i - 1) + 1):
            if influence(c, i - 1, j) == 0.0:
                layers[i - 1][j - 1] = CONST_TRUE
    return Circuit(c.depth, tuple(tuple(l) for l in layers))


# ---------------------------------------------------------------------------
# constructions


def build_parity_circuit(d: int, relevant: Iterable[int]) -> Circuit:
    """Circuit computing the parity of the bits indexed by `relevant`.

    Bottom gates pick XOR, a projection, or constant-1 according to which
    of their two leaves are relevant; all upper gates are XOR.  The value
    equals the product of the relevant bits.
    """
    rel = sorted(set(int(v) for v in relevant))
    n = 2**d
    if not rel:
        raise EmptyIndexSet("relevant index set must be nonempty")
    if rel[0] < 1 or rel[-1] > n:
        raise IndexOutOfRange(f"relevant indices must lie in 1..{n}")
    bottom = []
    for j in range(1, 2 ** (d - 1) + 1):
        left_in = 2 * j - 1 in rel
        right_in = 2 * j in rel
        if left_in and right_in:
            bottom.append(PROD)
        elif left_in:
            bottom.append(LEFT)
        elif right_in:
            bottom.append(RIGHT)
        else:
            bottom.append(CONST_TRUE)
    layers = [tuple(PROD for _ in range(2 ** (i - 1))) for i in range(1, d)]
    layers.append(tuple(bottom))
    return Circuit(d, tuple(layers))


def build_fm_circuit(m: int) -> Circuit:
    """Tree circuit for AND over m groups of OR over m**2 conjunctions.

    Inputs are laid out as interleaved pairs (x_t, y_t): pair t feeds
    bottom gate t, and the first m**3 pairs are the (i, j) conjunctions
    x_ij AND y_ij ordered by group i then j.  Each group's OR tree is
    padded to a power-of-two width with constant-false gates (neutral
    under OR) and the group count is padded to a power of two with
    constant-true subtrees (neutral under AND), so the depth is
    1 + ceil(log2 m) + ceil(log2 m**2).  For m <= 4 this equals
    ceil(log2 (2 m**3)); for some larger m (first at m = 5) it exceeds it,
    since no minimal-depth full tree aligns the group boundaries.
    """
    if m < 1:
        raise InvalidRange("m must be >= 1")
    group_levels = (m * m - 1).bit_length()  # ceil(log2 m^2)
    top_levels = (m - 1).bit_length()  # ceil(log2 m)
    s = 2**group_levels
    mhat = 2**top_levels
    d = 1 + top_levels + group_levels

    layers: list[tuple[Gate, ...]] = []
    # layers 1..top_levels: AND reduction over group values
    for i in range(1, top_levels + 1):
        layers.append(tuple(AND for _ in range(2 ** (i - 1))))
    # layers top_levels+1 .. d-1: OR reduction inside each group
    for i in range(top_levels + 1, d):
        gates: list[Gate] = []
        per_group = 2 ** (i - 1) // mhat
        for g in range(mhat):
            kind = OR if g < m else CONST_TRUE
            gates.extend(kind for _ in range(per_group))
        layers.append(tuple(gates))
    # layer d: conjunction leaves, OR-neutral pads, dead-group pads
    bottom: list[Gate] = []
    for g in range(mhat):
        for t in range(s):
            if g < m and t < m * m:
                bottom.append(AND)
            elif g < m:
                bottom.append(CONST_FALSE)
            else:
                bottom.append(CONST_TRUE)
    layers.append(tuple(bottom))
    return Circuit(d, tuple(layers))


def fm_interleave(x: Sequence[int], y: Sequence[int]) -> tuple[int, ...]:
    """Interleave two equal-length halves into the f_m leaf layout."""
    if len(x) != len(y):
        raise DimensionMismatch("halves must have equal length")
    out: list[int] = []
    for a, b in zip(x, y):
        out.append(int(a))
        out.append(int(b))
    return tuple(out)


def random_circuit(
    d: int, seed: int = 0, gate_set: Sequence[Gate] | None = None
) -> Circuit:
    """Uniformly random circuit of depth d over the given gate set."""
    gates = tuple(gate_set) if gate_set is not None else ALL_GATES
    if not gates:
        raise EmptyIndexSet("gate set must be nonempty")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = tuple(
        tuple(gates[int(t)] for t in rng.integers(0, len(gates), size=2 ** (i - 1)))
        for i in range(1, d + 1)
    )
    return Circuit(d, layers)


# ---------------------------------------------------------------------------
# serialization
#
# {"depth": d, "gates": [["-+-+", ...], ...]} with layer 1 first and each
# gate written as its truth table in canonical pattern order, "+" for +1.


def gate_to_str(g: Gate) -> str:
    return "".join("+" if v > 0 else "-" for v in g.table)


def gate_from_str(s: str) -> Gate:
    if len(s) != 4 or any(ch not in "+-" for ch in s):
        raise UnsupportedGate(f"not a 4-char truth table string: {s!r}")
    return gate_from_table(tuple(1 if ch == "+" else -1 for ch in s))


def circuit_to_dict(c: Circuit) -> dict:
    return {
        "depth": c.depth,
        "gates": [[gate_to_str(g) for g in layer] for layer in c.layers],
    }


def circuit_from_dict(doc: dict) -> Circuit:
    depth = int(doc["depth"])
    layers = tuple(
        tuple(gate_from_str(s) for s in layer) for layer in doc["gates"]
    )
    return Circuit(depth, layers)


def eval_function(c: Circuit) -> Callable[[Sequence[int]], int]:
    """The circuit as a plain function on bit vectors."""
    return lambda x: eval_circuit(c, x)
