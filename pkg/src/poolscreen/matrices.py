"""Binary sensing matrices: weight-profile ensembles, Kirkman designs, file I/O.

Stage-2 pooling matrices are sampled from fixed row/column weight profiles
with distinct rows and columns.  Kirkman triple systems (resolvable designs
whose columns are triples and whose classes partition the rows) are verified
here and constructed for small orders.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "SensingMatrix",
    "WeightProfile",
    "KirkmanParams",
    "MatrixConstructionError",
    "MatrixParseError",
    "UnsupportedOrderError",
    "BUILTIN_PROFILES",
    "BUILTIN_BUILD_SEED",
    "builtin_matrix",
    "profile_sample",
    "verify_profile",
    "verify_kirkman",
    "construct_kirkman",
    "load_matrix",
    "save_matrix",
]


class MatrixConstructionError(RuntimeError):
    """Sampling or search exhausted its attempt budget."""


class UnsupportedOrderError(ValueError):
    """Constructive search is only wired for small orders; load larger designs."""


class MatrixParseError(ValueError):
    """Matrix file violates the exchange format; carries the offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    """An m x n binary matrix with cached row/column weights."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.ascontiguousarray(self.entries, dtype=np.uint8)
        if entries.ndim != 2:
            raise ValueError("entries must be a 2-D array")
        if not np.all((entries == 0) | (entries == 1)):
            raise ValueError("entries must be 0/1")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def row_weights(self) -> np.ndarray:
        return self.entries.sum(axis=1, dtype=int)

    @property
    def col_weights(self) -> np.ndarray:
        return self.entries.sum(axis=0, dtype=int)

    @property
    def total_ones(self) -> int:
        return int(self.entries.sum(dtype=int))


@dataclass
class WeightProfile:
    """Row/column weight multiplicities a sampled matrix must realize exactly.

    col_weights maps a column weight to the number of columns carrying it;
    row_weights likewise for rows.  The ones counted column-wise must equal
    the ones counted row-wise or no matrix exists.
    """

    col_weights: dict[int, int]
    row_weights: dict[int, int]
    distinct_cols: bool = True
    distinct_rows: bool = True

    @property
    def n(self) -> int:
        return sum(self.col_weights.values())

    @property
    def m(self) -> int:
        return sum(self.row_weights.values())

    @property
    def total_ones(self) -> int:
        return sum(w * c for w, c in self.col_weights.items())

    def validate(self):
        if any(w < 0 or c <= 0 for w, c in self.col_weights.items()) or any(
            w < 0 or c <= 0 for w, c in self.row_weights.items()
        ):
            raise ValueError("weights must be non-negative with positive multiplicities")
        row_ones = sum(w * c for w, c in self.row_weights.items())
        if self.total_ones != row_ones:
            raise ValueError(
                f"column ones ({self.total_ones}) and row ones ({row_ones}) disagree"
            )
        if any(w > self.m for w in self.col_weights):
            raise ValueError("a column weight exceeds the number of rows")
        if any(w > self.n for w in self.row_weights):
            raise ValueError("a row weight exceeds the number of columns")


# The seven stage-2 designs shipped with the package.  Keyed by (rows, width):
# width 31 serves one pool, width 62 serves a merged pair of pools.
BUILTIN_PROFILES: dict[tuple[int, int], WeightProfile] = {
    (5, 31): WeightProfile(
        col_weights={0: 1, 1: 5, 2: 10, 3: 10, 4: 5}, row_weights={15: 5}
    ),
    (6, 31): WeightProfile(col_weights={3: 16, 4: 15}, row_weights={18: 6}),
    (7, 31): WeightProfile(col_weights={3: 16, 4: 15}, row_weights={15: 4, 16: 3}),
    (8, 31): WeightProfile(col_weights={3: 16, 4: 15}, row_weights={13: 4, 14: 4}),
    (9, 62): WeightProfile(col_weights={3: 31, 4: 31}, row_weights={23: 1, 24: 6, 25: 2}),
    (10, 62): WeightProfile(col_weights={3: 31, 4: 31}, row_weights={21: 4, 22: 5, 23: 1}),
    (11, 62): WeightProfile(col_weights={3: 31, 4: 31}, row_weights={19: 5, 20: 4, 21: 2}),
}

# Seed used to generate the shipped design files (scripts/make_builtin_matrices.py).
BUILTIN_BUILD_SEED = 1905


@lru_cache(maxsize=None)
def builtin_matrix(stage2_rows: int, pool_width: int) -> SensingMatrix:
    """Load one of the shipped stage-2 designs, checking it against its profile."""
    key = (stage2_rows, pool_width)
    if key not in BUILTIN_PROFILES:
        supported = sorted(BUILTIN_PROFILES)
        raise ValueError(f"no builtin {stage2_rows}x{pool_width} design; have {supported}")
    ref = resources.files("poolscreen").joinpath(f"data/design_{stage2_rows}x{pool_width}.txt")
    with resources.as_file(ref) as path:
        mat = load_matrix(path)
    ok, report = verify_profile(mat, BUILTIN_PROFILES[key])
    if not ok:
        raise MatrixConstructionError(f"shipped design {key} is corrupt: {report}")
    return mat


# ---------------------------------------------------------------------------
# profile sampling


def _gale_ryser_feasible(caps: np.ndarray, rest_counts: dict[int, int]) -> bool:
    # bipartite degree sequences (caps; remaining column weights) admit a 0/1
    # matrix iff the sums agree and every prefix of the sorted caps is
    # dominated: sum_{i<=j} r_i <= sum_c min(w_c, j)
    total = sum(w * cnt for w, cnt in rest_counts.items())
    if caps.sum() != total:
        return False
    r = np.sort(caps)[::-1]
    prefix = np.cumsum(r)
    js = np.arange(1, len(r) + 1)
    rhs = np.zeros(len(r), dtype=np.int64)
    for w, cnt in rest_counts.items():
        if cnt:
            rhs += cnt * np.minimum(w, js)
    return bool(np.all(prefix <= rhs))


@lru_cache(maxsize=None)
def _row_patterns(m: int, w: int):
    """All w-subsets of m rows, as an index array plus bitmasks."""
    combos = list(itertools.combinations(range(m), w))
    idx = np.array(combos, dtype=np.intp).reshape(len(combos), w)
    masks = np.array([sum(1 << i for i in combo) for combo in combos], dtype=np.int64)
    return idx, masks


def profile_sample(
    profile: WeightProfile,
    m: int,
    n: int,
    rng: np.random.Generator,
    max_attempts: int = 10_000,
) -> SensingMatrix:
    """Sample a matrix realizing `profile` exactly, uniformly-ish at random.

    Columns are filled one at a time, heaviest first, choosing each column's
    rows with probability proportional to the product of remaining row
    capacities among patterns not yet used.  A Gale-Ryser check prunes
    placements that strand the residual degree sequence; dead ends restart
    the whole attempt.
    """
    profile.validate()
    if profile.m != m or profile.n != n:
        raise ValueError(f"profile is {profile.m}x{profile.n}, requested {m}x{n}")
    if m > 62:
        raise ValueError("pattern bookkeeping supports at most 62 rows")

    col_weight_list = np.array(
        [w for w, cnt in sorted(profile.col_weights.items()) for _ in range(cnt)], dtype=int
    )
    row_weight_list = np.array(
        [w for w, cnt in sorted(profile.row_weights.items()) for _ in range(cnt)], dtype=int
    )

    last_reason = "no attempt ran"
    for _ in range(max_attempts):
        col_assigned = rng.permutation(col_weight_list)
        caps = rng.permutation(row_weight_list).astype(np.int64)
        fill_order = np.argsort(-col_assigned, kind="stable")
        entries = np.zeros((m, n), dtype=np.uint8)
        used = None
        if profile.distinct_cols:
            # flat flag array when the mask space is small, else a set
            used = np.zeros(1 << m, dtype=bool) if m <= 20 else set()
        ok = True
        rest_counts = {w: cnt for w, cnt in profile.col_weights.items() if w > 0}
        for c in fill_order:
            w = int(col_assigned[c])
            if w > 0:
                rest_counts[w] -= 1
            if not _place_column(entries, caps, used, int(c), w, rest_counts, rng):
                last_reason = f"dead end placing a weight-{w} column"
                ok = False
                break
        if not ok:
            continue
        if profile.distinct_rows and np.unique(entries, axis=0).shape[0] != m:
            last_reason = "duplicate rows"
            continue
        mat = SensingMatrix(entries)
        good, report = verify_profile(mat, profile)
        if not good:  # pragma: no cover - construction enforces the profile
            raise MatrixConstructionError(f"sampler produced an invalid matrix: {report}")
        return mat
    raise MatrixConstructionError(
        f"gave up after {max_attempts} attempts (last failure: {last_reason})"
    )


def _place_column(entries, caps, used, c, w, rest_counts, rng) -> bool:
    """Choose rows for column c; `rest_counts` holds the weights still to place."""
    m = caps.shape[0]
    flags = isinstance(used, np.ndarray)
    if w == 0:
        if used is not None:
            taken = used[0] if flags else 0 in used
            if taken:
                return False
            if flags:
                used[0] = True
            else:
                used.add(0)
        return True
    idx, masks = _row_patterns(m, w)
    valid = np.all(caps[idx] > 0, axis=1)
    if used is not None:
        if flags:
            valid &= ~used[masks]
        elif used:
            valid &= np.fromiter((mk not in used for mk in masks), dtype=bool, count=len(masks))
    while np.any(valid):
        cand = np.flatnonzero(valid)
        weights = np.prod(caps[idx[cand]].astype(float), axis=1)
        pick = cand[rng.choice(cand.shape[0], p=weights / weights.sum())]
        rows = idx[pick]
        caps[rows] -= 1
        if _gale_ryser_feasible(caps, rest_counts):
            entries[rows, c] = 1
            if used is not None:
                if flags:
                    used[masks[pick]] = True
                else:
                    used.add(int(masks[pick]))
            return True
        caps[rows] += 1
        valid[pick] = False
    return False


def verify_profile(mat: SensingMatrix, profile: WeightProfile) -> tuple[bool, str | None]:
    """Check a matrix against a weight profile; report the first violation."""
    profile.validate()
    if mat.m != profile.m or mat.n != profile.n:
        return False, f"matrix is {mat.m}x{mat.n}, profile wants {profile.m}x{profile.n}"
    col_counts: dict[int, int] = {}
    for w in mat.col_weights:
        col_counts[int(w)] = col_counts.get(int(w), 0) + 1
    if col_counts != profile.col_weights:
        return False, f"column weight multiset {col_counts} != {profile.col_weights}"
    row_counts: dict[int, int] = {}
    for w in mat.row_weights:
        row_counts[int(w)] = row_counts.get(int(w), 0) + 1
    if row_counts != profile.row_weights:
        return False, f"row weight multiset {row_counts} != {profile.row_weights}"
    if profile.distinct_cols and np.unique(mat.entries, axis=1).shape[1] != mat.n:
        return False, "duplicate columns"
    if profile.distinct_rows and np.unique(mat.entries, axis=0).shape[0] != mat.m:
        return False, "duplicate rows"
    return True, None


# ---------------------------------------------------------------------------
# Kirkman triple systems


@dataclass(frozen=True)
class KirkmanParams:
    """m points, c parallel classes; each class is m/3 disjoint triples."""

    m: int
    c: int

    def __post_init__(self):
        if self.m < 3 or self.m % 3:
            raise ValueError("m must be a positive multiple of 3")
        if not (1 <= self.c <= (self.m - 1) // 2):
            raise ValueError(f"c must lie in [1, {(self.m - 1) // 2}] for m={self.m}")


def verify_kirkman(mat: SensingMatrix, params: KirkmanParams) -> tuple[bool, str | None]:
    """Check the three design properties; report the first violation.

    Columns must be triples, any two columns may share at most one row, and
    each consecutive block of m/3 columns must partition the rows.
    """
    per_class = params.m // 3
    if mat.m != params.m or mat.n != per_class * params.c:
        return False, (
            f"matrix is {mat.m}x{mat.n}, expected {params.m}x{per_class * params.c}"
        )
    weights = mat.col_weights
    bad = np.flatnonzero(weights != 3)
    if bad.size:
        return False, f"column {int(bad[0])} has weight {int(weights[bad[0]])}, not 3"
    ent = mat.entries.astype(np.int64)
    for cls in range(params.c):
        block = ent[:, cls * per_class : (cls + 1) * per_class]
        sums = block.sum(axis=1)
        off = np.flatnonzero(sums != 1)
        if off.size:
            return False, (
                f"class {cls}: row {int(off[0])} covered {int(sums[off[0]])} times, not once"
            )
    gram = ent.T @ ent
    np.fill_diagonal(gram, 0)
    worst = np.unravel_index(np.argmax(gram), gram.shape)
    if gram[worst] > 1:
        return False, (
            f"columns {int(worst[0])} and {int(worst[1])} share {int(gram[worst])} rows"
        )
    return True, None


def construct_kirkman(
    params: KirkmanParams,
    rng: np.random.Generator,
    node_budget: int = 20_000,
    restarts: int = 400,
) -> SensingMatrix:
    """Randomized backtracking construction for m in {3, 9, 15}.

    Builds the classes one at a time, packing triples over unplaced points
    and refusing any pair of points that already met.  The search backtracks
    across class boundaries; when a node budget runs out it restarts with a
    fresh shuffle.  Larger orders must be loaded from a file instead.
    """
    if params.m not in (3, 9, 15):
        raise UnsupportedOrderError(
            f"constructive search handles m in {{3, 9, 15}}; load an m={params.m} design"
        )
    m, c = params.m, params.c
    for _ in range(restarts):
        triples = _kirkman_search(m, c, rng, node_budget)
        if triples is not None:
            entries = np.zeros((m, len(triples)), dtype=np.uint8)
            for j, tri in enumerate(triples):
                entries[list(tri), j] = 1
            mat = SensingMatrix(entries)
            ok, report = verify_kirkman(mat, params)
            if not ok:  # pragma: no cover - search enforces the properties
                raise MatrixConstructionError(f"search produced an invalid design: {report}")
            return mat
    raise MatrixConstructionError(
        f"no {m}-point system with {c} classes found within the search budget"
    )


def _kirkman_search(m: int, c: int, rng: np.random.Generator, node_budget: int):
    pair_used = [[False] * m for _ in range(m)]
    full_mask = (1 << m) - 1
    columns: list[tuple[int, int, int]] = []
    nodes = 0

    # any system can be relabeled so its first class is consecutive triples;
    # fixing that breaks most of the symmetry and tames the search
    for j in range(0, m, 3):
        columns.append((j, j + 1, j + 2))
        for x, y in ((j, j + 1), (j, j + 2), (j + 1, j + 2)):
            pair_used[x][y] = pair_used[y][x] = True

    def extend(class_idx: int, unplaced: int) -> bool:
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise _Budget
        if unplaced == 0:
            if class_idx + 1 == c:
                return True
            return extend(class_idx + 1, full_mask)
        # expand the point with the fewest completions; a point with none
        # makes the whole branch hopeless, so bail out immediately
        points = [p for p in range(m) if (unplaced >> p) & 1]
        best_pairs: list[tuple[int, int]] | None = None
        best_a = -1
        for a in points:
            partners = [b for b in points if b != a and not pair_used[a][b]]
            pairs = [
                (b, d)
                for i, b in enumerate(partners)
                for d in partners[i + 1 :]
                if not pair_used[b][d]
            ]
            if not pairs:
                return False
            if best_pairs is None or len(pairs) < len(best_pairs):
                best_pairs, best_a = pairs, a
                if len(pairs) == 1:
                    break
        a = best_a
        for i in rng.permutation(len(best_pairs)):
            b, d = best_pairs[i]
            lo, mid, hi = sorted((a, b, d))
            for x, y in ((lo, mid), (lo, hi), (mid, hi)):
                pair_used[x][y] = pair_used[y][x] = True
            columns.append((lo, mid, hi))
            if extend(class_idx, unplaced & ~((1 << a) | (1 << b) | (1 << d))):
                return True
            columns.pop()
            for x, y in ((lo, mid), (lo, hi), (mid, hi)):
                pair_used[x][y] = pair_used[y][x] = False
        return False

    try:
        if c == 1 or extend(1, full_mask):
            return list(columns)
    except _Budget:
        pass
    return None


class _Budget(Exception):
    pass


# ---------------------------------------------------------------------------
# file format


def save_matrix(mat: SensingMatrix, path) -> None:
    """Write the exchange format: 'm n' header, then one 0/1 row per line."""
    lines = [f"{mat.m} {mat.n}"]
    for row in mat.entries:
        lines.append(" ".join("1" if v else "0" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path) -> SensingMatrix:
    """Parse the exchange format, rejecting any deviation with a line number."""
    text = Path(path).read_text()
    if not text.endswith("\n"):
        raise MatrixParseError(text.count("\n") + 1, "file must end with a newline")
    lines = text.split("\n")[:-1]
    if not lines:
        raise MatrixParseError(1, "empty file")
    header = lines[0].split(" ")
    if len(header) != 2 or not all(tok.isdigit() for tok in header):
        raise MatrixParseError(1, f"header must be 'm n', got {lines[0]!r}")
    m, n = int(header[0]), int(header[1])
    if m < 1 or n < 1:
        raise MatrixParseError(1, "dimensions must be positive")
    if len(lines) - 1 != m:
        # point at the first missing line, or the first extra one
        at = len(lines) + 1 if len(lines) - 1 < m else m + 2
        raise MatrixParseError(at, f"expected {m} rows, found {len(lines) - 1}")
    entries = np.zeros((m, n), dtype=np.uint8)
    for i, line in enumerate(lines[1:], start=2):
        tokens = line.split(" ")
        if len(tokens) != n:
            raise MatrixParseError(i, f"expected {n} entries, found {len(tokens)}")
        for j, tok in enumerate(tokens):
            if tok == "1":
                entries[i - 2, j] = 1
            elif tok != "0":
                raise MatrixParseError(i, f"entry {j} is {tok!r}, not 0/1")
    return SensingMatrix(entries)
