"""
FLOP cost model of the extra work the shifted solvers do per iteration on
top of plain GMRES / recycled GMRES.

`d_sgmres`, `d_srgmres` and `d_srgmres_half` evaluate the closed-form
polynomials as published. The `*_line_items` functions rebuild the same
numbers from the individual operation counts, as a second evaluation path.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

logger = logging.getLogger("shiftkrylov")

SWEEP_PARAMS = ("L", "n", "m", "k")
# held-constant values of the published sweeps
SWEEP_DEFAULTS = {"L": 5, "n": 10**7, "m": 100}


@dataclass(frozen=True)
class CostParams:
    m: int
    k: int = 0
    L: int = 1
    n: int = 1
    # total iterations, amortizes one-time costs
    j_new: float = math.inf

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m and n must be positive, got m={self.m}, n={self.n}")
        if self.k < 0 or self.L < 0:
            raise ValueError(f"k and L must be nonnegative, got k={self.k}, L={self.L}")
        if not self.j_new > 0:
            raise ValueError(f"j_new must be positive, got {self.j_new}")


def d_sgmres(p: CostParams) -> float:
    m, L, n = p.m, p.L, p.n
    return 2 / 3 * (L + 3) * m**2 + 2 * m * (2 * L + n + 1) + 6 * L * n + n


def d_srgmres(p: CostParams) -> float:
    m, k, L, n = p.m, p.k, p.L, p.n
    return (
        (1 + 5 * L / 3) * m**2
        + (2 + 3 * k + 3 * L + 5 * k * L + 2 * n) * m
        + 1 + 4 * k + 3 * k**2 + 4 * L + 6 * k * L + 5 * k**2 * L + n + 3 * k * n + 6 * L * n
        + (
            5 * k**3 * L / 3 + k**3 + 3 * k**2 * L + 2 * k**2 * n + 2 * k**2
            + 6 * k * L * n + 4 * k * L + k * n + k
        ) / m
        + (k**3 + 2 * k**2 * n + (k**3 + 2 * k**2 / 3) * L + 6 * k * L * n + 3 * k * L)
        / p.j_new
    )


def d_srgmres_half(p: CostParams) -> float:
    """`d_srgmres` specialized to k = m/2 (p.k is ignored)."""
    m, L, n, j = p.m, p.L, p.n, p.j_new
    return (
        m**3 * (L / (8 * j) + 1 / (8 * j))
        + m**2 * (L / (6 * j) + 45 * L / 8 + n / (2 * j) + 27 / 8)
        + m * (3 * L * n / j + 3 * L / (2 * j) + 27 * L / 4 + 4 * n + 9 / 2)
        + 3 / 2 + 6 * L + 3 * n / 2 + 9 * L * n
    )


def structure_difference(p: CostParams) -> float:
    """d_srgmres - d_sgmres at k = 0: the cost of carrying G instead of H."""
    m, L = p.m, p.L
    return (L - 1) * m**2 - L * m + 1 + 4 * L


def sgmres_line_items(p: CostParams) -> dict[str, float]:
    """Extra FLOPs per cycle, by operation."""
    m, L, n = p.m, p.L, p.n
    return {
        "HtH": m**3 + m**2,
        "VtZ": n * (m**2 + m),
        "HtVtZ": m**3 + m**2,
        "ZtZ": n * m**2,
        "N_sum": 3 * m**2 * L,
        "rhs": 2 * n * m * L,
        "N_solve": (2 / 3 * m**3 + m**2) * L,
        "x_update": 2 * m * n * L,
        "r_update": 2 * m * n * L,
    }


def srgmres_line_items(p: CostParams) -> tuple[dict[str, float], dict[str, float]]:
    """Extra FLOPs of the recycled variant: (per cycle, once per solve)."""
    m, k, L, n = p.m, p.k, p.L, p.n
    s = m + k
    per_cycle = {
        "GtG": (s + 1) ** 2 * s,
        "ZUtZU": k**2 * n,
        "ZUtZ": k * n * m,
        "ZtZ": m**2 * n,
        "CtZU": k**2 * n,
        "CtZ": k * n * m,
        "VtZU": k * n * (m + 1),
        "VtZ": n * m * (m + 1),
        "shifted_image": (s + 1) ** 2 * s * L,
        "N_sum": 3 * s * L,
        "rhs": 2 * s * n * L,
        "N_solve": (2 / 3 * s**3 + s**2) * L,
        "x_update": 2 * s * n * L,
        "r_update": 2 * s * n * L,
    }
    one_time = {
        "ZU_rescale": k**3,
        "CtZU": k**2 * n,
        "ZUtZU": k**2 * n,
        "N_sum": 3 * k * L,
        "rhs": 2 * k * n * L,
        "N_solve": (k**3 + 2 / 3 * k**2) * L,
        "x_update": 2 * k * n * L,
        "r_update": 2 * k * n * L,
    }
    return per_cycle, one_time


def sgmres_from_line_items(p: CostParams) -> float:
    return sum(sgmres_line_items(p).values()) / p.m


def srgmres_coefficients(p: CostParams) -> tuple[float, float]:
    """(a, b) with d_srgmres ~ a + b / j_new, from the line items."""
    per_cycle, one_time = srgmres_line_items(p)
    return sum(per_cycle.values()) / p.m, sum(one_time.values())


def j_new_model(n: float, m: float) -> float:
    """
    Assumed total iteration count of the recycled solver,
    n / 10**((4/9 + 2m/(9m+9)) log10 n); tends to n**(1/3) as m grows.
    """
    return n / 10 ** ((4 / 9 + 2 * m / (9 * m + 9)) * math.log10(n))


def sweep(
    param: str,
    values,
    base: CostParams | None = None,
    *,
    j_new: float | None = None,
    half_recycle: bool = True,
) -> pd.DataFrame:
    """
    Evaluate both cost models while one parameter varies.

    Args:
        param: one of L, n, m, k
        base: held-constant values (default L=5, n=1e7, m=100)
        j_new: fixed iteration count; None uses `j_new_model`
        half_recycle: tie k to m/2 as in the published sweeps

    Returns:
        frame with columns param, d_sgmres, d_srgmres
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}, expected one of {SWEEP_PARAMS}")
    if base is None:
        base = CostParams(**SWEEP_DEFAULTS)
    rows = []
    for value in values:
        p = replace(base, **{param: int(value)})
        if half_recycle and param != "k":
            p = replace(p, k=p.m // 2)
        jn = j_new_model(p.n, p.m) if j_new is None else j_new
        p = replace(p, j_new=jn)
        rows.append({"param": value, "d_sgmres": d_sgmres(p), "d_srgmres": d_srgmres(p)})
    logger.debug(f"Cost sweep over {param}: {len(rows)} points")
    return pd.DataFrame(rows, columns=["param", "d_sgmres", "d_srgmres"])


def write_sweep(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, float_format="%.5e")


def is_monotone(values) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) >= 0))
