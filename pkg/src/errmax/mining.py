"""Gradient-ascent search for local maximizers of the squared surrogate error.

Ascents start at the training samples with the largest absolute errors, climb
|Y - Z|^2 with a step-decay schedule (surrogate gradient by backprop, oracle
gradient by finite differences), and are then thinned by a proximity radius.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import LabeledSet, Normalizer, label
from .errors import AscentError, InvalidSpecError
from .mlp import MlpModel, predict
from .oracles import FdConfig, OracleSpec, fd_gradient

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max-iters"
STATUS_REJECTED = "rejected-nonimproving"

_MAX_STEP_HALVINGS = 10


@dataclass
class AscentConfig:
    """Schedule and stopping rules for one mining round.

    Defaults are the first-round values; later rounds shrink ``initial_step``
    and ``stop_rel_change`` multiplicatively. The step at iteration n is
    ``initial_step / step_decay_factor**(n // step_decay_period)``.
    """

    initial_step: float = 0.001
    step_decay_factor: float = 10.0
    step_decay_period: int = 30
    stop_rel_change: float = 0.001
    max_iters: int = 500
    dedup_radius: float = 0.001
    seed_fraction: float = 0.05
    target_count: int = 1000

    def validate(self) -> None:
        if self.initial_step <= 0:
            raise InvalidSpecError("initial_step must be positive")
        if self.step_decay_factor <= 1:
            raise InvalidSpecError("step_decay_factor must be > 1")
        if self.step_decay_period < 1:
            raise InvalidSpecError("step_decay_period must be >= 1")
        if self.stop_rel_change <= 0:
            raise InvalidSpecError("stop_rel_change must be positive")
        if self.max_iters < 1:
            raise InvalidSpecError("max_iters must be >= 1")
        if self.dedup_radius <= 0:
            raise InvalidSpecError("dedup_radius must be positive")
        if not 0.0 < self.seed_fraction <= 1.0:
            raise InvalidSpecError("seed_fraction must be in (0, 1]")
        if self.target_count < 1:
            raise InvalidSpecError("target_count must be >= 1")

    def tightened(self, step_factor: float, tol_factor: float, rounds: int) -> "AscentConfig":
        """Copy with step and tolerance shrunk for a later round."""
        cfg = AscentConfig(**self.__dict__)
        cfg.initial_step = self.initial_step * step_factor**rounds
        cfg.stop_rel_change = self.stop_rel_change * tol_factor**rounds
        return cfg


@dataclass
class AscentResult:
    """Outcome of one gradient-ascent run, in normalized coordinates."""

    seed_point: np.ndarray
    final_point: np.ndarray
    seed_sq_error: float
    final_sq_error: float
    iters: int
    status: str

    def to_dict(self) -> dict:
        return {
            "seed_point": [float(v) for v in self.seed_point],
            "final_point": [float(v) for v in self.final_point],
            "seed_sq_error": self.seed_sq_error,
            "final_sq_error": self.final_sq_error,
            "iters": self.iters,
            "status": self.status,
        }


@dataclass
class MineResult:
    """A mined maximizer set plus per-ascent diagnostics."""

    mined: LabeledSet
    results: list[AscentResult]
    n_seeds: int
    shortfall: bool


def step_size(cfg: AscentConfig, iteration: int) -> float:
    """Scheduled ascent step for a given iteration index."""
    return cfg.initial_step / cfg.step_decay_factor ** (
        iteration // cfg.step_decay_period
    )


def select_seeds(model: MlpModel, lset: LabeledSet, fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction*n) samples with largest |Y - z|.

    Sorted by descending absolute error; exact ties keep ascending sample
    index, so the selection is deterministic.
    """
    if lset.n == 0:
        raise InvalidSpecError("cannot select seeds from an empty set")
    if not lset.is_labeled:
        raise InvalidSpecError("seed selection needs a labeled set")
    if not 0.0 < fraction <= 1.0:
        raise InvalidSpecError("fraction must be in (0, 1]")
    errors = np.abs(predict(model, lset.inputs_norm) - lset.targets)
    count = math.ceil(fraction * lset.n)
    order = np.argsort(-errors, kind="stable")
    return order[:count]


def ascend(
    model: MlpModel,
    spec: OracleSpec,
    seed_point: np.ndarray,
    cfg: AscentConfig,
    fd: FdConfig,
    normalizer: Normalizer,
) -> AscentResult:
    """Climb the squared error E^2 = (Y - Z)^2 from one seed point.

    Update: x <- clip(x + s_n * 2(Y-Z)(grad Y - grad Z), [0,1]^d). A step
    landing outside the valid region is retried with a locally halved step up
    to 10 times, after which the ascent stops where it is. The run converges
    when the relative change of E^2 over one iteration drops below
    ``stop_rel_change``. Runs that end no better than they started, or at
    exactly zero error, are marked rejected.
    """
    cfg.validate()
    x = np.asarray(seed_point, dtype=np.float64).copy()
    raw = normalizer.denormalize(x)
    if not spec.is_valid(raw):
        raise AscentError(x, "seed point is not a valid domain point")

    def surrogate_and_oracle(point: np.ndarray) -> tuple[float, float]:
        y_val = model.forward(point)
        try:
            z_val = spec.evaluate(normalizer.denormalize(point))
        except Exception as exc:
            raise AscentError(point, f"oracle failed during ascent: {exc}") from exc
        if not math.isfinite(z_val):
            raise AscentError(point, f"oracle returned {z_val} during ascent")
        return y_val, z_val

    y, z = surrogate_and_oracle(x)
    sq_err = (y - z) ** 2
    seed_sq_err = sq_err
    status = STATUS_MAX_ITERS
    iters = 0
    tiny = np.finfo(float).tiny

    for n in range(cfg.max_iters):
        grad_y = model.input_gradient(x)
        try:
            grad_z = fd_gradient(spec, x, fd, normalizer, base_value=z)
        except Exception as exc:
            raise AscentError(x, f"gradient probe failed during ascent: {exc}") from exc
        grad = 2.0 * (y - z) * (grad_y - grad_z)

        step = step_size(cfg, n)
        candidate = None
        for _ in range(_MAX_STEP_HALVINGS + 1):
            trial = np.clip(x + step * grad, 0.0, 1.0)
            if spec.is_valid(normalizer.denormalize(trial)):
                candidate = trial
                break
            step *= 0.5
        if candidate is None:
            # Pinned against the validity boundary: nowhere feasible to go.
            status = STATUS_CONVERGED
            break

        y_new, z_new = surrogate_and_oracle(candidate)
        sq_new = (y_new - z_new) ** 2
        rel_change = abs(sq_new - sq_err) / max(sq_err, tiny)
        x, y, z, sq_err = candidate, y_new, z_new, sq_new
        iters = n + 1
        if rel_change < cfg.stop_rel_change:
            status = STATUS_CONVERGED
            break

    if sq_err < seed_sq_err or sq_err == 0.0:
        status = STATUS_REJECTED

    return AscentResult(
        seed_point=np.asarray(seed_point, dtype=np.float64).copy(),
        final_point=x,
        seed_sq_error=float(seed_sq_err),
        final_sq_error=float(sq_err),
        iters=iters,
        status=status,
    )


def dedup(results: list[AscentResult], radius: float) -> list[AscentResult]:
    """Greedy proximity thinning, best squared error first.

    Results are visited in descending final_sq_error (ties by input order);
    one is kept iff its final point lies at Euclidean distance >= radius from
    every point already kept. Output order is the visiting order.
    """
    if radius <= 0:
        raise InvalidSpecError("dedup radius must be positive")
    if not results:
        return []
    order = sorted(range(len(results)), key=lambda i: (-results[i].final_sq_error, i))
    kept: list[AscentResult] = []
    kept_points = np.empty((0, results[0].final_point.shape[0]))
    for i in order:
        p = results[i].final_point
        if kept_points.shape[0]:
            if np.min(np.linalg.norm(kept_points - p, axis=1)) < radius:
                continue
        kept.append(results[i])
        kept_points = np.vstack([kept_points, p])
    return kept


def mine(
    model: MlpModel,
    spec: OracleSpec,
    lset: LabeledSet,
    cfg: AscentConfig,
    fd: FdConfig,
    round_index: int = 0,
    n_threads: int = 1,
) -> MineResult:
    """Full mining pass: seed, ascend, reject, dedup, cap, label.

    Ascents run independently (optionally across threads) and are aggregated
    in seed order, so the output does not depend on the degree of
    parallelism. Fewer than ``target_count`` survivors is not fatal: the
    result carries a shortfall flag instead.
    """
    cfg.validate()
    fd.validate()
    seed_idx = select_seeds(model, lset, cfg.seed_fraction)
    if cfg.target_count > seed_idx.size:
        raise InvalidSpecError(
            f"target_count {cfg.target_count} exceeds seed count {seed_idx.size}"
        )
    seeds = lset.inputs_norm[seed_idx]
    norm = lset.normalizer

    def run(seed_point: np.ndarray) -> AscentResult:
        return ascend(model, spec, seed_point, cfg, fd, norm)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]

    improving = [r for r in results if r.status != STATUS_REJECTED]
    unique = dedup(improving, cfg.dedup_radius)
    top = unique[: cfg.target_count]
    shortfall = len(top) < cfg.target_count

    tag = f"mined-round-{round_index}"
    if top:
        inputs = np.vstack([r.final_point for r in top])
    else:
        inputs = np.empty((0, lset.dim))
    mined = LabeledSet(f"M{round_index}", inputs, None, [tag] * len(top), norm)
    mined = label(mined, spec)
    return MineResult(mined=mined, results=results, n_seeds=seed_idx.size, shortfall=shortfall)
