"""Supervising oracles: an up-and-out call pricer, a Monte Carlo reference
pricer for verifying it, synthetic analytic oracles for tests, and
finite-difference oracle gradients taken in normalized coordinates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DomainError,
    GradientProbeError,
    InvalidSpecError,
    KnockedOutError,
)

SPOT = 100.0

# Default "realistic" intervals for the 5-D barrier input
# (barrier/spot, strike/spot, maturity, volatility, rate).
BARRIER_DIM_NAMES = ("b", "k", "tau", "sigma", "r")
BARRIER_DOMAIN = np.array(
    [
        [1.01, 2.0],
        [0.5, 1.5],
        [0.05, 2.0],
        [0.05, 0.6],
        [0.0, 0.1],
    ]
)

# Barrier-shift constant for discretely monitored barriers,
# -zeta(1/2)/sqrt(2*pi): a discrete monitor at H*exp(-beta*sigma*sqrt(dt))
# approximates a continuous barrier at H.
BG_BETA = 0.5826

_SQRT2 = math.sqrt(2.0)
_MC_BLOCK = 50_000


def _ncdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


@dataclass(frozen=True)
class BarrierInputs:
    """One point of the pricing domain. Ratios are relative to spot."""

    b: float
    k: float
    tau: float
    sigma: float
    r: float

    def __post_init__(self):
        vals = (self.b, self.k, self.tau, self.sigma, self.r)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite barrier input: {vals}")
        if self.b <= 0 or self.k <= 0:
            raise DomainError("b and k must be positive")
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")


@dataclass
class FdConfig:
    """Finite-difference settings for oracle gradients (normalized coords)."""

    h: float = 0.001
    scheme: str = "forward"

    def validate(self) -> None:
        if self.h <= 0:
            raise InvalidSpecError("fd step h must be positive")
        if self.scheme not in ("forward", "central"):
            raise InvalidSpecError(f"unknown fd scheme: {self.scheme!r}")


@dataclass
class OracleSpec:
    """A supervising function over a boxed raw-unit domain.

    ``evaluate`` maps a raw input vector to a real target; ``is_valid``
    restricts the box to the meaningful region; ``analytic_gradient`` and
    ``extrema`` exist only for synthetic oracles and feed the tests.
    """

    name: str
    evaluate: Callable[[np.ndarray], float]
    domain: np.ndarray
    is_valid: Callable[[np.ndarray], bool]
    analytic_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    extrema: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.shape[0]


# --------------------------------------------------------------------- #
# closed-form pricing


def vanilla_call_price(
    k: float, tau: float, sigma: float, r: float, spot: float = SPOT
) -> float:
    """Black-Scholes European call, strike expressed as a ratio of spot."""
    strike = k * spot
    srt = sigma * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (r + 0.5 * sigma * sigma) * tau) / srt
    d2 = d1 - srt
    return spot * _ncdf(d1) - strike * math.exp(-r * tau) * _ncdf(d2)


def barrier_price(inp: BarrierInputs, spot: float = SPOT) -> float:
    """Up-and-out European call under Black-Scholes dynamics, in dollars.

    Uses the standard image-method decomposition (vanilla minus up-and-in).
    The barrier must be above spot (b > 1); if the barrier is at or below the
    strike the payoff region is unreachable without a knockout and the price
    is exactly 0.
    """
    if inp.b <= 1.0:
        raise KnockedOutError(
            f"barrier ratio b={inp.b} is at or below spot; option already knocked out"
        )
    if inp.b <= inp.k:
        return 0.0

    strike = inp.k * spot
    barrier = inp.b * spot
    srt = inp.sigma * math.sqrt(inp.tau)
    lam = (inp.r + 0.5 * inp.sigma * inp.sigma) / (inp.sigma * inp.sigma)
    disc = math.exp(-inp.r * inp.tau)

    x1 = math.log(spot / barrier) / srt + lam * srt
    y1 = math.log(barrier / spot) / srt + lam * srt
    y = math.log(barrier * barrier / (spot * strike)) / srt + lam * srt

    up_in = spot * _ncdf(x1) - strike * disc * _ncdf(x1 - srt)
    bracket1 = _ncdf(-y) - _ncdf(-y1)
    if bracket1 != 0.0:
        up_in -= spot * (barrier / spot) ** (2.0 * lam) * bracket1
    bracket2 = _ncdf(-y + srt) - _ncdf(-y1 + srt)
    if bracket2 != 0.0:
        up_in += strike * disc * (barrier / spot) ** (2.0 * lam - 2.0) * bracket2

    vanilla = vanilla_call_price(inp.k, inp.tau, inp.sigma, inp.r, spot)
    # Clamp float noise: the knock-out price is bounded by [0, vanilla].
    return min(max(vanilla - up_in, 0.0), vanilla)


# --------------------------------------------------------------------- #
# Monte Carlo reference


def mc_reference_price(
    inp: BarrierInputs,
    n_paths: int,
    n_steps: int,
    seed: int,
    spot: float = SPOT,
    n_threads: int = 1,
) -> tuple[float, float]:
    """Monte Carlo up-and-out call price: (estimate, standard error).

    Simulates log-GBM paths with knockout monitoring at every step against a
    barrier shifted down by exp(-BG_BETA * sigma * sqrt(dt)), which corrects
    the discrete monitor toward the continuously monitored price. Paths are
    generated in fixed-size blocks with per-block generators derived from
    ``seed``, and block sums are combined in block order, so the result is
    identical for any thread count.
    """
    if inp.b <= 1.0:
        raise KnockedOutError(f"barrier ratio b={inp.b} is at or below spot")
    if n_paths < 1000:
        raise DomainError("n_paths must be >= 1000")
    if n_steps < 100:
        raise DomainError("n_steps must be >= 100")
    if seed < 0:
        raise DomainError("seed must be non-negative")

    dt = inp.tau / n_steps
    log_barrier = math.log(inp.b * spot) - BG_BETA * inp.sigma * math.sqrt(dt)
    drift = (inp.r - 0.5 * inp.sigma * inp.sigma) * dt
    vol = inp.sigma * math.sqrt(dt)
    strike = inp.k * spot
    disc = math.exp(-inp.r * inp.tau)
    log_spot = math.log(spot)

    sizes = [_MC_BLOCK] * (n_paths // _MC_BLOCK)
    if n_paths % _MC_BLOCK:
        sizes.append(n_paths % _MC_BLOCK)

    def run_block(args: tuple[int, int]) -> tuple[float, float]:
        index, size = args
        rng = np.random.default_rng([seed, index])
        logp = np.full(size, log_spot)
        alive = logp < log_barrier
        for _ in range(n_steps):
            logp += drift + vol * rng.standard_normal(size)
            alive &= logp < log_barrier
        payoff = np.where(alive, np.maximum(np.exp(logp) - strike, 0.0), 0.0) * disc
        return float(payoff.sum()), float((payoff * payoff).sum())

    jobs = list(enumerate(sizes))
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            partials = list(pool.map(run_block, jobs))
    else:
        partials = [run_block(j) for j in jobs]

    total = sum(p[0] for p in partials)
    total_sq = sum(p[1] for p in partials)
    mean = total / n_paths
    var = max(total_sq - n_paths * mean * mean, 0.0) / (n_paths - 1)
    return mean, math.sqrt(var / n_paths)


# --------------------------------------------------------------------- #
# finite-difference oracle gradients


def fd_gradient(
    spec: OracleSpec,
    x_norm: np.ndarray,
    fd: FdConfig,
    normalizer,
    base_value: float | None = None,
) -> np.ndarray:
    """First-order gradient of the oracle at x_norm, in normalized coordinates.

    Probes that leave the valid region flip to the opposite one-sided
    difference for that coordinate. ``base_value`` may pass in a precomputed
    oracle value at x_norm to save one call under the forward scheme.
    """
    fd.validate()
    x_norm = np.asarray(x_norm, dtype=np.float64)
    raw = normalizer.denormalize(x_norm)
    if not spec.is_valid(raw):
        raise DomainError("fd_gradient called at an invalid domain point")

    def probe(x: np.ndarray, coord: int) -> float:
        raw_p = normalizer.denormalize(x)
        if not spec.is_valid(raw_p):
            raise GradientProbeError(coord, "probe left the valid domain")
        try:
            value = spec.evaluate(raw_p)
        except Exception as exc:
            raise GradientProbeError(
                coord, f"oracle failed at probe for coordinate {coord}: {exc}"
            ) from exc
        if not math.isfinite(value):
            raise GradientProbeError(coord, f"oracle returned {value} at a probe point")
        return value

    d = x_norm.shape[0]
    h = fd.h
    grad = np.empty(d)
    cache = {"f0": base_value}

    def f0() -> float:
        if cache["f0"] is None:
            cache["f0"] = probe(x_norm, -1)
        return cache["f0"]

    for i in range(d):
        xp = x_norm.copy()
        xp[i] += h
        xm = x_norm.copy()
        xm[i] -= h
        plus_ok = spec.is_valid(normalizer.denormalize(xp))
        minus_ok = spec.is_valid(normalizer.denormalize(xm))
        if fd.scheme == "central" and plus_ok and minus_ok:
            grad[i] = (probe(xp, i) - probe(xm, i)) / (2.0 * h)
        elif plus_ok:
            grad[i] = (probe(xp, i) - f0()) / h
        elif minus_ok:
            grad[i] = (f0() - probe(xm, i)) / h
        else:
            raise GradientProbeError(
                i, f"both probes for coordinate {i} leave the valid domain"
            )
    return grad


# --------------------------------------------------------------------- #
# oracle construction


def make_barrier_oracle(
    domain: np.ndarray | None = None, spot: float = SPOT
) -> OracleSpec:
    """The production oracle: up-and-out call price over the 5-D box.

    A point is valid when it lies inside the box, the barrier is strictly
    above spot, and strictly above the strike (otherwise the contract is
    degenerate and the sample is discarded).
    """
    dom = BARRIER_DOMAIN.copy() if domain is None else np.asarray(domain, dtype=np.float64)
    if dom.shape != (5, 2):
        raise InvalidSpecError(f"barrier domain must have shape (5, 2), got {dom.shape}")

    lo, hi = dom[:, 0], dom[:, 1]

    def is_valid(raw: np.ndarray) -> bool:
        if np.any(raw < lo) or np.any(raw > hi):
            return False
        b, k = raw[0], raw[1]
        return b > 1.0 and b > k

    def evaluate(raw: np.ndarray) -> float:
        return barrier_price(BarrierInputs(*(float(v) for v in raw)), spot=spot)

    return OracleSpec(
        name="barrier-up-out-call",
        evaluate=evaluate,
        domain=dom,
        is_valid=is_valid,
    )


def make_synthetic_oracle(kind: str, **params) -> OracleSpec:
    """Analytic test oracles with exact gradients and known extrema.

    kinds:
      quadratic-bowl   offset + sum(coeffs * (x - center)^2); extrema holds
                       the minimum location.
      multimodal-sine  amplitude * prod(sin(x_i)) on [0, cycles*2*pi]^dim;
                       extrema holds the 1-D grid of |Z| maximizers (spaced
                       pi apart in every coordinate).
      constant         fixed value, zero gradient.
    """
    if kind == "quadratic-bowl":
        center = np.asarray(params.pop("center"), dtype=np.float64)
        d = center.shape[0]
        coeffs = np.broadcast_to(
            np.asarray(params.pop("coeffs", 1.0), dtype=np.float64), (d,)
        ).copy()
        offset = float(params.pop("offset", 0.0))
        domain = params.pop("domain", None)
        dom = (
            np.column_stack([center - 1.0, center + 1.0])
            if domain is None
            else np.asarray(domain, dtype=np.float64)
        )
        _reject_unknown(kind, params)
        return OracleSpec(
            name=kind,
            evaluate=lambda x: offset + float(np.sum(coeffs * (x - center) ** 2)),
            domain=dom,
            is_valid=_box_validator(dom),
            analytic_gradient=lambda x: 2.0 * coeffs * (np.asarray(x) - center),
            extrema={"minimum": center},
        )

    if kind == "multimodal-sine":
        d = int(params.pop("dim", 2))
        cycles = int(params.pop("cycles", 2))
        amplitude = float(params.pop("amplitude", 1.0))
        _reject_unknown(kind, params)
        dom = np.tile([0.0, cycles * 2.0 * np.pi], (d, 1))

        def evaluate(x: np.ndarray) -> float:
            return amplitude * float(np.prod(np.sin(x)))

        def gradient(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=np.float64)
            s, c = np.sin(x), np.cos(x)
            out = np.empty(d)
            for i in range(d):
                out[i] = amplitude * c[i] * np.prod(np.delete(s, i))
            return out

        grid = np.pi / 2.0 + np.pi * np.arange(2 * cycles)
        return OracleSpec(
            name=kind,
            evaluate=evaluate,
            domain=dom,
            is_valid=_box_validator(dom),
            analytic_gradient=gradient,
            extrema={"sq_maximizers_1d": grid},
        )

    if kind == "constant":
        value = float(params.pop("value", 0.0))
        d = int(params.pop("dim", 2))
        domain = params.pop("domain", None)
        dom = np.tile([0.0, 1.0], (d, 1)) if domain is None else np.asarray(domain)
        _reject_unknown(kind, params)
        return OracleSpec(
            name=kind,
            evaluate=lambda x: value,
            domain=dom,
            is_valid=_box_validator(dom),
            analytic_gradient=lambda x: np.zeros(d),
            extrema={},
        )

    raise InvalidSpecError(f"unknown synthetic oracle kind: {kind!r}")


def _box_validator(dom: np.ndarray) -> Callable[[np.ndarray], bool]:
    lo, hi = dom[:, 0], dom[:, 1]

    def is_valid(raw: np.ndarray) -> bool:
        return bool(np.all(raw >= lo) and np.all(raw <= hi))

    return is_valid


def _reject_unknown(kind: str, leftovers: dict) -> None:
    if leftovers:
        raise InvalidSpecError(
            f"unknown parameters for oracle {kind!r}: {sorted(leftovers)}"
        )
