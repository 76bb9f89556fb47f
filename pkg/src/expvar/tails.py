"""Upper-tail probabilities and quantiles for the test statistics.

Thin validated wrappers over the regularized incomplete gamma/beta
routines in scipy.special. Real-valued degrees of freedom are supported
throughout (the denominator df of the F and t references are generally
fractional after the Satterthwaite correction), and the chi-square tail
stays meaningful down to the smallest normal doubles.
"""

from __future__ import annotations

import numpy as np
from scipy import special


def _check_df(df: float, name: str = "df") -> float:
    df = float(df)
    if not np.isfinite(df) or df <= 0:
        raise ValueError(f"{name} must be positive and finite, got {df}")
    return df


def chisq_sf(x: float, df: float) -> float:
    """P(Chi2_df > x), the upper tail of the chi-square distribution."""
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x}")
    return float(special.chdtrc(_check_df(df), x))


def f_sf(x: float, df1: float, df2: float) -> float:
    """P(F_{df1, df2} > x); df2 may be fractional."""
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise ValueError(f"F statistic must be >= 0, got {x}")
    return float(special.fdtrc(_check_df(df1, "df1"), _check_df(df2, "df2"), x))


def t_sf(x: float, df: float) -> float:
    """P(T_df > x); symmetric, so the lower tail is t_sf(-x, df)."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"t statistic must be finite, got {x}")
    return float(special.stdtr(_check_df(df), -x))


def t_quantile(p: float, df: float) -> float:
    """Value q with P(T_df <= q) = p."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    return float(special.stdtrit(_check_df(df), p))
