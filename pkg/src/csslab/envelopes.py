"""Dyadic time maximal functions over sampled backward-in-time series.

For a nonnegative series f on [t0, 0) and parameters eta >= 0, s, the
maximal function at time t < 0 is

    T[f](t) = sum_{j=0}^{n(t)} 2^{js} (j^2+1)^{-1} a[f; t, j],

where block j < n(t) takes the sup of f over [2^-j t, 2^-(j+1) t), the
final block j = n(t) takes the sup over [2^-n t, 0), and
n(t) = ceil(max(0, log2(|t|/eta))) for eta > 0 (infinite for eta = 0).
Sups are exact over the available samples; a block with no samples is a
hard error, never silently interpolated.  For eta = 0 the sum is truncated
at the first block holding fewer than two samples and the truncation index
is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BlockGapError, PreconditionError

__all__ = ["TimeSeries", "t_maximal", "TMaximalResult", "env_properties_check"]


@dataclass(eq=False)
class TimeSeries:
    """Sampled nonnegative magnitudes on strictly increasing negative times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise PreconditionError("times/values must be matching 1-d arrays")
        if np.any(np.diff(self.times) <= 0):
            raise PreconditionError("times must be strictly increasing")
        if self.times[-1] > 0:
            raise PreconditionError("times must not exceed 0")
        if np.any(self.values < 0):
            raise PreconditionError("values must be nonnegative")


@dataclass(eq=False)
class TMaximalResult:
    value: float
    n_blocks: int           # index of the last block included
    truncated: bool         # eta = 0 series ran out of samples


def _block_sup(series: TimeSeries, lo: float, hi: Optional[float]) -> tuple[float, int]:
    """Sup of the series over [lo, hi) (hi None means up to 0)."""
    t = series.times
    if hi is None:
        mask = t >= lo
    else:
        mask = (t >= lo) & (t < hi)
    cnt = int(np.count_nonzero(mask))
    if cnt == 0:
        return np.nan, 0
    return float(np.max(series.values[mask])), cnt


def t_maximal(series: TimeSeries, t: float, eta: float, s: float) -> TMaximalResult:
    """Evaluate the weighted dyadic maximal function at time t."""
    if t >= 0 or t < series.times[0]:
        raise PreconditionError("t must lie in the sampled range [t0, 0)")
    if eta < 0:
        raise PreconditionError("eta must be >= 0")

    if eta > 0:
        n_t = math.ceil(max(0.0, math.log2(abs(t) / eta)))
    else:
        n_t = None

    total = 0.0
    j = 0
    truncated = False
    while True:
        last = (n_t is not None and j == n_t)
        lo = t * 2.0**-j
        hi = None if last else t * 2.0 ** -(j + 1)
        sup, cnt = _block_sup(series, lo, hi)
        # block 0 always holds the evaluation point, so pointwise domination
        # survives truncation; deeper under-sampled blocks stop the sum
        if n_t is None and cnt < 2 and j > 0:
            truncated = True
            j -= 1
            break
        if cnt == 0:
            raise BlockGapError(
                f"dyadic block j={j} of t={t} holds no samples")
        total += 2.0 ** (j * s) / (j * j + 1.0) * sup
        if last:
            break
        j += 1
    return TMaximalResult(total, j, truncated)


def env_properties_check(
    series: TimeSeries,
    eta: float,
    s: float,
    p: float,
    q: float,
    t_eval: Optional[float] = None,
) -> dict:
    """Empirical constants for the maximal function's quantitative laws.

    Verifies on the sampled series: pointwise domination (exact),
    idempotence up to constants, weight commutation with <t>^q, and the
    L^p-in-time integral bound (needs 1/p + q + s > 0).  Returns the
    measured constants; callers assert finiteness/uniformity.
    """
    if 1.0 / p + q + s <= 0:
        raise PreconditionError("integral bound needs 1/p + q + s > 0")
    t_all = series.times
    t_eval = float(t_all[0]) if t_eval is None else t_eval
    jt = np.hypot(t_all, eta)

    env_at = lambda ser, tt: t_maximal(ser, tt, eta, s).value
    env_vals = np.array([env_at(series, tt) for tt in t_all if tt < 0])
    t_neg = t_all[t_all < 0]
    vals_neg = series.values[t_all < 0]

    out: dict = {}
    out["domination_ok"] = bool(np.all(vals_neg <= env_vals + 1e-12 * np.max(env_vals)))

    env_series = TimeSeries(t_neg, env_vals)
    env2 = np.array([env_at(env_series, tt) for tt in t_neg])
    ratio = env2 / np.maximum(env_vals, 1e-300)
    out["idempotence_low"] = float(np.min(ratio))
    out["idempotence_high"] = float(np.max(ratio))

    # weight commutation: T[<.>^q f](t) vs <t>^q T with shifted s
    wser = TimeSeries(t_neg, np.hypot(t_neg, eta) ** q * vals_neg)
    lhs = np.array([t_maximal(wser, tt, eta, s).value for tt in t_neg])
    rhs = np.hypot(t_neg, eta) ** q * np.array(
        [t_maximal(series, tt, eta, s - q).value for tt in t_neg])
    rat = lhs / np.maximum(rhs, 1e-300)
    out["weight_comm_low"] = float(np.min(rat))
    out["weight_comm_high"] = float(np.max(rat))

    # integral bound on [t_eval, 0)
    mask = t_neg >= t_eval
    tt = t_neg[mask]
    integrand = (np.hypot(tt, eta) ** q * env_vals[mask]) ** p
    lhs_int = np.trapezoid(integrand, tt) ** (1.0 / p)
    rhs_int = np.hypot(t_eval, eta) ** (q + 1.0 / p) * env_at(series, t_eval)
    out["integral_constant"] = float(lhs_int / max(rhs_int, 1e-300))
    return out
