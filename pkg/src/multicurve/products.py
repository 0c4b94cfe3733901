"""Linear and optional interest-rate products on multi-curve term structures.

Deterministic prices (FRA, OIS swap, IRS, basis swap) are functionals of the
time-0 discount curve B(0,.) and multiplicative spread curves S(0,.): the
floating leg of a Libor swap period [T_{i-1}, T_i] is worth
B(0,T_{i-1}) S(0,T_{i-1}) - B(0,T_i), which prices FRAs and swaps without any
model choice.  Optional products (caplets, swaptions) are priced by Monte
Carlo over a ``PathSet``: per-path bank-account values, bond prices and spot
spreads at a single exercise date, produced by one of the simulation engines.

Leg sums use ``math.fsum``.  Adjacent discounts are within a factor of two of
each other for any sane curve, so the per-period differences are exact in
floating point and telescoping identities hold exactly, not just to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .termstructure import DiscountCurve, SpreadTermStructure, Tenor

__all__ = [
    "ProductSpec",
    "PathSet",
    "EmptyPathSet",
    "MaturityNotCovered",
    "fra_value",
    "ois_swap_rate",
    "ois_swap_value",
    "irs_swap_rate",
    "irs_value",
    "basis_swap_spread",
    "caplet_price_mc",
    "swaption_price_mc",
]


class EmptyPathSet(ValueError):
    """A PathSet with zero paths cannot price anything."""


class MaturityNotCovered(KeyError):
    """Requested maturity is not one of the PathSet's stored columns."""


def _uniform_spacing(schedule: np.ndarray, what: str) -> float:
    gaps = np.diff(schedule)
    if len(gaps) == 0:
        raise ValueError(f"{what} needs at least two dates")
    if np.any(gaps <= 0):
        raise ValueError(f"{what} dates must be strictly increasing")
    if np.max(np.abs(gaps - gaps[0])) > 1e-9:
        raise ValueError(f"{what} must be uniformly spaced")
    return float(gaps[0])


@dataclass(frozen=True)
class ProductSpec:
    """Declarative product description (used by the CLI).

    kind: FRA | OIS_SWAP | IRS | BASIS_SWAP | CAPLET | SWAPTION.
    ``schedule`` carries the payment dates [T_0, ..., T_n]; for FRA and CAPLET
    it is the single fixing date (T,).  Basis swaps carry the second floating
    schedule/tenor and the fixed (spread) leg schedule.
    """

    kind: str
    schedule: tuple[float, ...]
    fixed_rate: float
    notional: float
    tenor: Tenor
    tenor_b: Tenor | None = None
    schedule_b: tuple[float, ...] = ()
    schedule_fixed: tuple[float, ...] = ()

    def __post_init__(self):
        kinds = ("FRA", "OIS_SWAP", "IRS", "BASIS_SWAP", "CAPLET", "SWAPTION")
        if self.kind not in kinds:
            raise ValueError(f"unknown product kind {self.kind!r}; expected one of {kinds}")
        if self.kind == "BASIS_SWAP" and (self.tenor_b is None or not self.schedule_b or not self.schedule_fixed):
            raise ValueError("BASIS_SWAP needs tenor_b, schedule_b, and schedule_fixed")


@dataclass
class PathSet:
    """Per-path market state at one observation date.

    numeraire: bank-account values B_t, shape (n_paths,).
    bonds: B(t, maturities[j]), shape (n_paths, k).
    spreads: per tenor, S(t, maturities[j]), shape (n_paths, k).
    seed/dt record how the paths were generated.
    """

    time: float
    maturities: np.ndarray
    numeraire: np.ndarray
    bonds: np.ndarray
    spreads: dict[Tenor, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    dt: float | None = None

    def __post_init__(self):
        self.maturities = np.asarray(self.maturities, dtype=float)
        self.numeraire = np.asarray(self.numeraire, dtype=float)
        self.bonds = np.asarray(self.bonds, dtype=float)
        if self.numeraire.ndim != 1 or len(self.numeraire) == 0:
            raise EmptyPathSet("PathSet needs at least one path")
        if self.bonds.shape != (len(self.numeraire), len(self.maturities)):
            raise ValueError("bonds must have shape (n_paths, n_maturities)")
        if np.any(self.numeraire <= 0) or np.any(self.bonds <= 0):
            raise ValueError("bank-account and bond values must be positive")
        for tenor, s in self.spreads.items():
            if np.asarray(s).shape != self.bonds.shape:
                raise ValueError(f"spread block for {tenor} has wrong shape")

    @property
    def n_paths(self) -> int:
        return len(self.numeraire)

    def _column(self, T: float) -> int:
        hits = np.nonzero(np.abs(self.maturities - T) <= 1e-12)[0]
        if len(hits) == 0:
            raise MaturityNotCovered(f"maturity {T} not stored; have {self.maturities}")
        return int(hits[0])

    def bond(self, T: float) -> np.ndarray:
        return self.bonds[:, self._column(T)]

    def spread(self, tenor: Tenor, T: float) -> np.ndarray:
        if tenor not in self.spreads:
            raise MaturityNotCovered(f"no spread block for tenor {tenor}")
        return self.spreads[tenor][:, self._column(T)]


def fra_value(disc: DiscountCurve, spread_curve: SpreadTermStructure, T: float,
              fixed_rate: float, notional: float = 1.0) -> float:
    """Time-0 value of a payer FRA over [T, T+delta]:
    N * (B(0,T) S(0,T) - B(0,T+delta) (1 + delta K))."""
    d = float(spread_curve.tenor)
    return notional * (
        disc.discount(T) * spread_curve.spread(T) - disc.discount(T + d) * (1.0 + d * fixed_rate)
    )


def ois_swap_rate(disc: DiscountCurve, schedule: Sequence[float]) -> float:
    """Par rate of an OIS swap with payment dates schedule[1:]:
    (B(0,T_0) - B(0,T_n)) / (delta * sum_i B(0,T_i))."""
    sched = np.asarray(schedule, dtype=float)
    delta = _uniform_spacing(sched, "OIS swap schedule")
    dfs = disc.discount(sched)
    return (dfs[0] - dfs[-1]) / (delta * math.fsum(dfs[1:]))


def ois_swap_value(disc: DiscountCurve, schedule: Sequence[float], fixed_rate: float,
                   notional: float = 1.0) -> float:
    """Payer OIS swap value: N * (B(0,T_0) - B(0,T_n) - K delta sum_i B(0,T_i))."""
    sched = np.asarray(schedule, dtype=float)
    delta = _uniform_spacing(sched, "OIS swap schedule")
    dfs = disc.discount(sched)
    return notional * (dfs[0] - dfs[-1] - fixed_rate * delta * math.fsum(dfs[1:]))


def _floating_leg(disc: DiscountCurve, spread_curve: SpreadTermStructure,
                  schedule: np.ndarray) -> float:
    resets, pays = schedule[:-1], schedule[1:]
    b_resets = disc.discount(resets)
    spreads = spread_curve.spread(resets)
    b_pays = disc.discount(pays)
    return math.fsum(b_resets * spreads - b_pays)


def irs_swap_rate(disc: DiscountCurve, spread_curve: SpreadTermStructure,
                  schedule: Sequence[float]) -> float:
    """Par rate of a Libor IRS: floating leg / (delta * sum_i B(0,T_i))."""
    sched = np.asarray(schedule, dtype=float)
    delta = _uniform_spacing(sched, "IRS schedule")
    if abs(delta - float(spread_curve.tenor)) > 1e-9:
        raise ValueError("IRS schedule spacing must equal the spread curve tenor")
    return _floating_leg(disc, spread_curve, sched) / (delta * math.fsum(disc.discount(sched[1:])))


def irs_value(disc: DiscountCurve, spread_curve: SpreadTermStructure, schedule: Sequence[float],
              fixed_rate: float, notional: float = 1.0) -> float:
    """Payer IRS value: N * sum_i (B(0,T_{i-1}) S(0,T_{i-1}) - B(0,T_i)(1 + delta K))."""
    sched = np.asarray(schedule, dtype=float)
    delta = _uniform_spacing(sched, "IRS schedule")
    if abs(delta - float(spread_curve.tenor)) > 1e-9:
        raise ValueError("IRS schedule spacing must equal the spread curve tenor")
    annuity = delta * math.fsum(disc.discount(sched[1:]))
    return notional * (_floating_leg(disc, spread_curve, sched) - fixed_rate * annuity)


def basis_swap_spread(disc: DiscountCurve,
                      spread_a: SpreadTermStructure, schedule_a: Sequence[float],
                      spread_b: SpreadTermStructure, schedule_b: Sequence[float],
                      schedule_fixed: Sequence[float]) -> float:
    """Fair spread over leg-b paying the difference of two Libor legs.

    (floating leg a - floating leg b) / (delta_fix * sum_l B(0, T_l)).
    All three schedules must share their first and last dates; swapping the
    two floating legs negates the result.
    """
    sa = np.asarray(schedule_a, dtype=float)
    sb = np.asarray(schedule_b, dtype=float)
    sf = np.asarray(schedule_fixed, dtype=float)
    for sched, curve, what in ((sa, spread_a, "leg a"), (sb, spread_b, "leg b")):
        d = _uniform_spacing(sched, f"basis swap {what} schedule")
        if abs(d - float(curve.tenor)) > 1e-9:
            raise ValueError(f"basis swap {what} spacing must equal its spread curve tenor")
    d_fix = _uniform_spacing(sf, "basis swap fixed schedule")
    if not (sa[0] == sb[0] == sf[0]) or not (sa[-1] == sb[-1] == sf[-1]):
        raise ValueError("basis swap schedules must share start and end dates")
    numer = _floating_leg(disc, spread_a, sa) - _floating_leg(disc, spread_b, sb)
    return numer / (d_fix * math.fsum(disc.discount(sf[1:])))


def _mc_stats(payoffs: np.ndarray) -> tuple[float, float]:
    n = len(payoffs)
    mean = float(np.mean(payoffs))
    se = float(np.std(payoffs, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def caplet_price_mc(paths: PathSet, tenor: Tenor, fixed_rate: float,
                    notional: float = 1.0) -> tuple[float, float]:
    """Caplet on the Libor fixing at the PathSet's observation date T.

    Discounted payoff per path: N/B_T * (S(T,T) - (1 + delta K) B(T,T+delta))^+.
    Returns (price, standard error).
    """
    T = paths.time
    d = float(tenor)
    spot_spread = paths.spread(tenor, T)
    bond = paths.bond(T + d)
    kappa = 1.0 + d * fixed_rate
    payoff = notional * np.maximum(spot_spread - kappa * bond, 0.0) / paths.numeraire
    return _mc_stats(payoff)


def swaption_price_mc(paths: PathSet, tenor: Tenor, schedule: Sequence[float],
                      fixed_rate: float, notional: float = 1.0) -> tuple[float, float]:
    """Payer swaption exercising at T_0 = PathSet time into an IRS over ``schedule``.

    Discounted payoff per path:
    N/B_T * ( sum_i [B(T,T_{i-1}) S(T,T_{i-1}) - (1 + delta K) B(T,T_i)] )^+.
    """
    sched = np.asarray(schedule, dtype=float)
    delta = _uniform_spacing(sched, "swaption schedule")
    if abs(delta - float(tenor)) > 1e-9:
        raise ValueError("swaption schedule spacing must equal the Libor tenor")
    if abs(sched[0] - paths.time) > 1e-12:
        raise ValueError("swaption expiry must equal the PathSet observation date")
    kappa = 1.0 + delta * fixed_rate
    swap_value = np.zeros(paths.n_paths)
    for t_reset, t_pay in zip(sched[:-1], sched[1:]):
        swap_value += paths.bond(t_reset) * paths.spread(tenor, t_reset) - kappa * paths.bond(t_pay)
    payoff = notional * np.maximum(swap_value, 0.0) / paths.numeraire
    return _mc_stats(payoff)
