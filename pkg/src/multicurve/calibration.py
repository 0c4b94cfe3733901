"""Black-76 utilities and caplet implied-volatility calibration.

Caplets quote through the Black formula on the forward Libor rate, so the
module provides the pricing/inversion pair plus a Nelder-Mead fit of free
affine-model parameters to an implied-vol surface.  The objective reprices
every quote with the damped-contour transform, converts to implied vol, and
sums squared vol residuals.  Parameters move through an unconstrained
transform built from optional per-parameter bounds; trial points where the
transform explodes or the price leaves the invertible range are penalized
rather than aborting the search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .affine import (
    AffineModelSpec,
    DampingOutOfDomain,
    QuadratureNonConvergence,
    RiccatiAccuracyError,
    RiccatiExplosion,
    _caplet_contour_prices,
    _terminal_exponents,
)
from .termstructure import Tenor, fra_rate_from_curves

# relaxed transform accuracy for repeated objective evaluations; the induced
# price error sits far below the 1e-4 vol-residual scale of the fit
_PRICER_STEPS = 250
_PRICER_TOL = 1e-8
_PENALTY = 1e8


class PriceOutOfBounds(ValueError):
    """Price outside the no-arbitrage band, implied vol undefined."""


class ObjectiveNaN(RuntimeError):
    """A trial point produced a non-finite or undefined objective."""


class MaxIterations(RuntimeError):
    """No optimizer start converged within the iteration budget."""


# ---------------------------------------------------------------------------
# Black-76


def black_caplet(forward: float, strike: float, expiry: float, vol: float,
                 annuity: float) -> float:
    """Black-76 caplet price on the forward Libor rate.

    ``annuity`` carries the accrual factor and discounting (delta times the
    discount bond to the payment date); ``vol`` is the lognormal volatility
    of the forward rate.
    """
    if forward <= 0.0 or strike <= 0.0:
        raise ValueError("Black-76 requires positive forward and strike")
    if expiry <= 0.0 or vol < 0.0 or annuity <= 0.0:
        raise ValueError("expiry and annuity must be positive, vol nonnegative")
    stddev = vol * math.sqrt(expiry)
    if stddev == 0.0:
        return annuity * max(forward - strike, 0.0)
    d1 = (math.log(forward / strike) + 0.5 * stddev ** 2) / stddev
    d2 = d1 - stddev
    return annuity * (forward * norm.cdf(d1) - strike * norm.cdf(d2))


def black_implied_vol(price: float, forward: float, strike: float,
                      expiry: float, annuity: float, tol: float = 1e-10,
                      max_iter: int = 100) -> float:
    """Invert the Black-76 caplet formula for the lognormal volatility.

    Newton iteration on the vol with a bisection fallback whenever a step
    leaves the current bracket or the vega degenerates; converges to ``tol``
    on the vol.  Prices at or below intrinsic value, or at or above the
    forward bound annuity * F, have no finite implied vol and raise
    PriceOutOfBounds.
    """
    if forward <= 0.0 or strike <= 0.0:
        raise ValueError("Black-76 requires positive forward and strike")
    intrinsic = annuity * max(forward - strike, 0.0)
    upper_bound = annuity * forward
    if price <= intrinsic or price >= upper_bound:
        raise PriceOutOfBounds(
            f"price {price:.6g} outside ({intrinsic:.6g}, {upper_bound:.6g})"
        )
    lo, hi = 1e-12, 1.0
    while black_caplet(forward, strike, expiry, hi, annuity) < price:
        hi *= 2.0
        if hi > 1e4:
            raise PriceOutOfBounds("implied vol above 1e4")
    sqrt_t = math.sqrt(expiry)
    vol = max(min(math.sqrt(2.0 * math.pi / expiry) * price / upper_bound, hi), lo)
    for _ in range(max_iter):
        val = black_caplet(forward, strike, expiry, vol, annuity) - price
        if val > 0.0:
            hi = vol
        else:
            lo = vol
        if abs(hi - lo) < tol:
            return 0.5 * (lo + hi)
        d1 = (math.log(forward / strike) + 0.5 * vol ** 2 * expiry) / (vol * sqrt_t)
        vega = annuity * forward * norm.pdf(d1) * sqrt_t
        if vega > 1e-14:
            candidate = vol - val / vega
            if lo < candidate < hi:
                if abs(candidate - vol) < tol:
                    return candidate
                vol = candidate
                continue
        vol = 0.5 * (lo + hi)
    return vol


# ---------------------------------------------------------------------------
# quote surface


@dataclass(frozen=True)
class VolQuote:
    """One caplet quote: expiry, underlying Libor tenor, strike, value."""

    expiry: float
    tenor: Tenor
    strike: float
    value: float


@dataclass
class VolQuoteSurface:
    """Caplet quotes, either as implied vols or as premiums.

    convention is "vol" (values are lognormal implied vols) or "premium"
    (values are prices, converted on entry to the calibration).
    """

    quotes: list[VolQuote] = field(default_factory=list)
    convention: str = "vol"

    def __post_init__(self):
        if self.convention not in ("vol", "premium"):
            raise ValueError(f"unknown quote convention {self.convention!r}")
        seen = set()
        for q in self.quotes:
            if q.value <= 0.0:
                raise ValueError("quote values must be positive")
            key = (float(q.expiry), float(q.tenor), float(q.strike))
            if key in seen:
                raise ValueError(f"duplicate quote at {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.quotes)


@dataclass
class CalibrationResult:
    """Best parameter vector found, with fit diagnostics.

    residuals are per-quote implied-vol differences (model minus market) in
    quote order, objective is their sum of squares, and trace records the
    objective value at each accepted improvement (nonincreasing).
    """

    parameters: np.ndarray
    objective: float
    residuals: np.ndarray
    trace: np.ndarray
    n_evaluations: int
    converged: bool


# ---------------------------------------------------------------------------
# parameter transforms


def _to_unconstrained(x, bounds):
    if bounds is None:
        return np.asarray(x, dtype=float).copy()
    z = np.empty(len(x))
    for i, (value, (lo, hi)) in enumerate(zip(x, bounds)):
        if lo is None and hi is None:
            z[i] = value
        elif hi is None:
            z[i] = math.log(max(value - lo, 1e-300))
        elif lo is None:
            z[i] = -math.log(max(hi - value, 1e-300))
        else:
            frac = min(max((value - lo) / (hi - lo), 1e-15), 1.0 - 1e-15)
            z[i] = math.log(frac / (1.0 - frac))
    return z


def _from_unconstrained(z, bounds):
    if bounds is None:
        return np.asarray(z, dtype=float).copy()
    x = np.empty(len(z))
    for i, (value, (lo, hi)) in enumerate(zip(z, bounds)):
        if lo is None and hi is None:
            x[i] = value
        elif hi is None:
            x[i] = lo + math.exp(value)
        elif lo is None:
            x[i] = hi - math.exp(-value)
        else:
            x[i] = lo + (hi - lo) / (1.0 + math.exp(-value))
    return x


# ---------------------------------------------------------------------------
# calibration


def _model_forward_setup(spec: AffineModelSpec, expiry: float, i: int):
    """(forward, annuity) implied by the spec's own time-0 curves."""
    delta = float(spec.tenors[i])
    taus = np.array([expiry, expiry + delta])
    zeros = np.zeros((2, spec.n_spread))
    phi, psi = _terminal_exponents(spec, np.zeros((2, spec.dim)), zeros, 1.0,
                                   taus, _PRICER_STEPS, _PRICER_TOL)
    bonds = np.exp(phi.real + psi.real @ spec.x0)
    u_rows = np.tile(spec.u_vectors[i], (1, 1))
    phi_s, psi_s = _terminal_exponents(spec, np.zeros((1, spec.dim)), u_rows,
                                       1.0, expiry, _PRICER_STEPS, _PRICER_TOL)
    spread_bond = math.exp(
        float(phi_s[0].real + psi_s.real[0] @ spec.x0 + spec.u_vectors[i] @ spec.y0))
    forward = (spread_bond / bonds[1] - 1.0) / delta
    return forward, delta * bonds[1]


def _quote_environment(surface, market_disc, market_spreads):
    """Per-quote (forward, annuity) pairs, fixed when market curves exist."""
    if market_disc is None:
        return None
    env = []
    for q in surface.quotes:
        curve = market_spreads[q.tenor] if market_spreads else None
        if curve is None:
            raise ValueError(f"no market spread curve for tenor {q.tenor}")
        forward = fra_rate_from_curves(market_disc, curve, q.expiry)
        annuity = float(q.tenor) * market_disc.discount(q.expiry + float(q.tenor))
        env.append((forward, annuity))
    return env


def _evaluate_fit(build_spec, params, surface, env, target_vols):
    """Objective and residual vector at one parameter point.

    Raises ObjectiveNaN when the trial spec is inadmissible, a transform
    explodes, or a model price cannot be inverted to a vol.
    """
    try:
        spec = build_spec(params)
        groups: dict[tuple[float, int], list[int]] = {}
        for j, q in enumerate(surface.quotes):
            i = spec.tenor_index(q.tenor)
            groups.setdefault((float(q.expiry), i), []).append(j)
        residuals = np.empty(len(surface.quotes))
        for (expiry, i), idx in groups.items():
            delta = float(spec.tenors[i])
            kappas = [1.0 + delta * surface.quotes[j].strike for j in idx]
            prices = _caplet_contour_prices(
                spec, expiry, i, kappas, tail_tol=1e-11,
                base_steps=_PRICER_STEPS, tol=_PRICER_TOL,
            )
            model_env = None if env is not None else _model_forward_setup(
                spec, expiry, i)
            for price, j in zip(prices, idx):
                forward, annuity = env[j] if env is not None else model_env
                vol = black_implied_vol(
                    price, forward, surface.quotes[j].strike, expiry, annuity)
                residuals[j] = vol - target_vols[j]
    except (RiccatiExplosion, RiccatiAccuracyError, DampingOutOfDomain,
            QuadratureNonConvergence, PriceOutOfBounds, ValueError,
            OverflowError, FloatingPointError) as exc:
        raise ObjectiveNaN(str(exc)) from exc
    objective = float(residuals @ residuals)
    if not math.isfinite(objective):
        raise ObjectiveNaN("non-finite objective")
    return objective, residuals


def calibrate(build_spec: Callable[[np.ndarray], AffineModelSpec],
              initial: Sequence[float], surface: VolQuoteSurface,
              market_disc=None, market_spreads=None, *,
              bounds: Sequence[tuple] | None = None, restarts: int = 3,
              seed: int = 0, max_iterations: int = 4000,
              jitter: float = 0.2, xatol: float = 1e-9,
              fatol: float = 1e-14) -> CalibrationResult:
    """Fit free model parameters to a caplet implied-vol surface.

    build_spec maps a parameter vector to a full model spec; initial is the
    starting vector.  When market curves are supplied the Black forward and
    annuity per quote come from them, otherwise from each trial spec's own
    time-0 curves.  Nelder-Mead runs over unconstrained transforms of the
    parameters (per-parameter (lower, upper) bounds, either side optional),
    once from the initial point and ``restarts`` more times from
    deterministically jittered starts, keeping the best.  Trial points that
    raise ObjectiveNaN score a fixed penalty.  Raises MaxIterations when no
    start converges within ``max_iterations`` evaluations.
    """
    initial = np.asarray(initial, dtype=float)
    if bounds is not None and len(bounds) != len(initial):
        raise ValueError("one (lower, upper) bound pair per parameter required")
    if len(surface) < len(initial):
        raise ValueError("at least as many quotes as free parameters required")
    env = _quote_environment(surface, market_disc, market_spreads)
    if surface.convention == "premium":
        if env is None:
            raise ValueError("premium quotes require market curves to convert")
        target_vols = np.array([
            black_implied_vol(q.value, f, q.strike, q.expiry, a)
            for q, (f, a) in zip(surface.quotes, env)
        ])
    else:
        target_vols = np.array([q.value for q in surface.quotes])

    if len(initial) == 0:
        objective, residuals = _evaluate_fit(
            build_spec, initial, surface, env, target_vols)
        return CalibrationResult(
            parameters=initial, objective=objective, residuals=residuals,
            trace=np.array([objective]), n_evaluations=1, converged=True,
        )

    state = {"best": math.inf, "trace": [], "n_eval": 0}

    def objective_fn(z):
        state["n_eval"] += 1
        params = _from_unconstrained(z, bounds)
        try:
            value, _ = _evaluate_fit(build_spec, params, surface, env, target_vols)
        except ObjectiveNaN:
            value = _PENALTY * (1.0 + float(np.linalg.norm(z)))
        if value < state["best"]:
            state["best"] = value
            state["trace"].append(value)
        return value

    z0 = _to_unconstrained(initial, bounds)
    rng = np.random.default_rng(seed)
    starts = [z0] + [
        z0 + jitter * (np.abs(z0) + 0.1) * rng.standard_normal(len(z0))
        for _ in range(restarts)
    ]
    best_z, best_value, any_converged = None, math.inf, False
    for start in starts:
        res = minimize(
            objective_fn, start, method="Nelder-Mead",
            options={"maxiter": max_iterations, "maxfev": max_iterations,
                     "xatol": xatol, "fatol": fatol},
        )
        any_converged = any_converged or bool(res.success)
        if res.fun < best_value:
            best_value, best_z = float(res.fun), res.x
    if not any_converged:
        raise MaxIterations(
            f"no Nelder-Mead start converged within {max_iterations} evaluations"
        )
    parameters = _from_unconstrained(best_z, bounds)
    objective, residuals = _evaluate_fit(
        build_spec, parameters, surface, env, target_vols)
    return CalibrationResult(
        parameters=parameters, objective=objective, residuals=residuals,
        trace=np.asarray(state["trace"]), n_evaluations=state["n_eval"],
        converged=True,
    )
