"""Fixed-effect contrast matrix and random-effect indicator matrix.

The fixed part X encodes one categorical factor (optionally with an
intercept) under treatment or sum-to-zero coding; the random part Z is a
block of one-hot indicator columns per grouping factor. Everything is a
pure function of the dataset, so rebuilding gives bit-identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .data import Dataset, ModelSpec, DataError

#: Relative tolerance of the pivoted rank check, scaled by the largest
#: R diagonal.
RANK_TOL = 1e-10


class DesignError(ValueError):
    """Raised when a design matrix cannot be built as requested."""


@dataclass(frozen=True)
class DesignMatrices:
    """Model matrices plus the label bookkeeping needed for reports.

    ``z_blocks`` maps each random factor to its contiguous column range in
    Z; ``z_level_names`` holds the level labels in column order within each
    block.
    """

    X: np.ndarray
    Z: np.ndarray
    column_map: tuple[str, ...]
    z_blocks: dict[str, slice]
    z_level_names: dict[str, tuple[str, ...]]
    fixed_factor: str
    fixed_levels: tuple[str, ...]
    coding: str
    include_intercept: bool

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def random_factors(self) -> tuple[str, ...]:
        return tuple(self.z_blocks)


def _fixed_matrix(codes: np.ndarray, levels: tuple[str, ...], coding: str,
                  intercept: bool) -> tuple[np.ndarray, tuple[str, ...]]:
    n = codes.shape[0]
    k = len(levels)
    if not intercept:
        X = np.zeros((n, k))
        X[np.arange(n), codes] = 1.0
        return X, tuple(levels)
    if k == 1:
        return np.ones((n, 1)), ("(Intercept)",)
    if coding == "treatment":
        X = np.zeros((n, k))
        X[:, 0] = 1.0
        for j in range(1, k):
            X[codes == j, j] = 1.0
        return X, ("(Intercept)",) + tuple(levels[1:])
    # sum-to-zero: one column per non-last level, last level rows get -1
    X = np.zeros((n, k))
    X[:, 0] = 1.0
    last = k - 1
    for j in range(0, k - 1):
        X[codes == j, j + 1] = 1.0
    X[codes == last, 1:] = -1.0
    return X, ("(Intercept)",) + tuple(levels[:-1])


def _check_full_rank(X: np.ndarray, labels: tuple[str, ...]) -> None:
    """Pivoted QR rank check; names the offending column on failure."""
    # cheap screen first: an all-zero column has an obvious culprit
    zero = np.flatnonzero(~np.any(X != 0.0, axis=0))
    if zero.size:
        raise DesignError(f"fixed-effect column {labels[zero[0]]!r} has no observations")
    r = scipy.linalg.qr(X, mode="r", pivoting=True)
    diag = np.abs(np.diag(r[0]))
    tol = RANK_TOL * diag.max()
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        bad = [labels[j] for j in r[1][rank:]]
        raise DesignError(f"fixed-effect design is rank deficient; "
                          f"dependent column(s): {bad}")


def build_design(dataset: Dataset, spec: ModelSpec) -> DesignMatrices:
    """Build X and Z for a dataset under a model declaration.

    Requires every random factor to have at least two observed levels
    (a single level makes its variance unidentifiable) and X to be full
    column rank.
    """
    if spec.fixed_factor not in dataset.factor_names:
        raise DataError(f"unknown fixed factor {spec.fixed_factor!r}; "
                        f"have {sorted(dataset.factor_names)}")
    levels = dataset.levels(spec.fixed_factor)
    codes = dataset.level_codes(spec.fixed_factor)
    X, column_map = _fixed_matrix(codes, levels, spec.contrast_coding,
                                  spec.include_intercept)
    _check_full_rank(X, column_map)

    n = dataset.n
    blocks: dict[str, slice] = {}
    z_levels: dict[str, tuple[str, ...]] = {}
    z_parts = []
    start = 0
    for factor in spec.random_factors:
        if factor not in dataset.factor_names:
            raise DataError(f"unknown random factor {factor!r}; "
                            f"have {sorted(dataset.factor_names)}")
        f_levels = dataset.levels(factor)
        if len(f_levels) < 2:
            raise DesignError(f"random factor {factor!r} has a single level "
                              f"{f_levels[0]!r}; its variance is unidentifiable")
        f_codes = dataset.level_codes(factor)
        block = np.zeros((n, len(f_levels)))
        block[np.arange(n), f_codes] = 1.0
        z_parts.append(block)
        blocks[factor] = slice(start, start + len(f_levels))
        z_levels[factor] = f_levels
        start += len(f_levels)
    Z = np.hstack(z_parts) if z_parts else np.zeros((n, 0))

    X.setflags(write=False)
    Z.setflags(write=False)
    return DesignMatrices(X=X, Z=Z, column_map=column_map, z_blocks=blocks,
                          z_level_names=z_levels, fixed_factor=spec.fixed_factor,
                          fixed_levels=levels, coding=spec.contrast_coding,
                          include_intercept=spec.include_intercept)


def drop_random_factor_design(dm: DesignMatrices, factor: str) -> DesignMatrices:
    """Design with one random factor's indicator block removed."""
    if factor not in dm.z_blocks:
        raise DataError(f"unknown random factor {factor!r}; have {list(dm.z_blocks)}")
    keep = [f for f in dm.z_blocks if f != factor]
    parts = [dm.Z[:, dm.z_blocks[f]] for f in keep]
    Z = np.hstack(parts) if parts else np.zeros((dm.n, 0))
    blocks: dict[str, slice] = {}
    start = 0
    for f in keep:
        width = dm.z_blocks[f].stop - dm.z_blocks[f].start
        blocks[f] = slice(start, start + width)
        start += width
    Z.setflags(write=False)
    return replace(dm, Z=Z, z_blocks=blocks,
                   z_level_names={f: dm.z_level_names[f] for f in keep})


def _level_row(dm: DesignMatrices, level: str) -> np.ndarray:
    """X-coefficient vector reproducing the given level's group mean."""
    if level not in dm.fixed_levels:
        raise DesignError(f"unknown level {level!r} of factor {dm.fixed_factor!r}")
    j = dm.fixed_levels.index(level)
    k = len(dm.fixed_levels)
    row = np.zeros(dm.p)
    if not dm.include_intercept:
        row[j] = 1.0
        return row
    row[0] = 1.0
    if k == 1:
        return row
    if dm.coding == "treatment":
        if j > 0:
            row[j] = 1.0
    else:
        if j < k - 1:
            row[1 + j] = 1.0
        else:
            row[1:] = -1.0
    return row


def contrast_rows(dm: DesignMatrices, levels, kind: str = "auto") -> np.ndarray:
    """Per-level contrast rows mapping coefficients to group-mean differences.

    ``kind`` selects the comparison baseline: "vs_reference" compares each
    requested level to the lexicographically first level, "vs_grand" to the
    unweighted grand mean of all level means. "auto" follows the coding:
    treatment coding compares to the reference, sum-to-zero to the grand
    mean. Rows are ordered like ``levels``; a level contrasted with itself
    yields a zero row.
    """
    if kind == "auto":
        kind = "vs_reference" if dm.coding == "treatment" else "vs_grand"
    if kind not in ("vs_reference", "vs_grand"):
        raise DesignError(f"unknown contrast kind {kind!r}")
    all_rows = np.vstack([_level_row(dm, lv) for lv in dm.fixed_levels])
    if kind == "vs_reference":
        base = all_rows[0]
    else:
        base = all_rows.mean(axis=0)
    return np.vstack([_level_row(dm, lv) - base for lv in levels])


def difference_rows(dm: DesignMatrices, pairs) -> np.ndarray:
    """Contrast rows for level-vs-level differences, one per (a, b) pair."""
    return np.vstack([_level_row(dm, a) - _level_row(dm, b) for a, b in pairs])


def omnibus_rows(dm: DesignMatrices) -> np.ndarray:
    """Full-row-rank contrast matrix testing equality of all level means.

    Used as the default term for the fixed-effects ANOVA; k = (number of
    levels) - 1.
    """
    k = len(dm.fixed_levels)
    if k < 2:
        raise DesignError(f"fixed factor {dm.fixed_factor!r} has a single level; "
                          f"no testable fixed term")
    return difference_rows(dm, [(lv, dm.fixed_levels[0]) for lv in dm.fixed_levels[1:]])
