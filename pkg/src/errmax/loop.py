"""Weighted retraining objective, evaluation metrics, and the outer
mine-merge-retrain loop with per-round schedule tightening.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as ds
from .data import LabeledSet
from .errors import DomainError, InvalidSpecError
from .mining import AscentConfig, MineResult, mine
from .mlp import MlpModel, TrainConfig, TrainHistory, init_mlp, predict, train
from .oracles import FdConfig, OracleSpec

RETRAIN_FRESH = "fresh"
RETRAIN_FINE_TUNE = "fine-tune"


@dataclass
class RoundConfig:
    """Outer-loop settings.

    ``alpha`` weights the base set against the newly mined set in the
    retraining objective ("pooled" resolves to |base|/|base + mined|, i.e.
    every sample weighted equally). Each later mining round multiplies the
    ascent step and stopping tolerance by the tightening factors.
    """

    alpha: float | str = "pooled"
    retrain_mode: str = RETRAIN_FRESH
    step_tighten: float = 0.01
    tol_tighten: float = 0.01
    max_rounds: int = 1
    level_off_rel: float = 0.01
    trim_fraction: float = 0.001

    def validate(self) -> None:
        if self.alpha != "pooled" and not 0.0 <= float(self.alpha) <= 1.0:
            raise InvalidSpecError("alpha must be in [0, 1] or 'pooled'")
        if self.retrain_mode not in (RETRAIN_FRESH, RETRAIN_FINE_TUNE):
            raise InvalidSpecError(f"unknown retrain_mode: {self.retrain_mode!r}")
        if not 0.0 < self.step_tighten <= 1.0:
            raise InvalidSpecError("step_tighten must be in (0, 1]")
        if not 0.0 < self.tol_tighten <= 1.0:
            raise InvalidSpecError("tol_tighten must be in (0, 1]")
        if self.max_rounds < 0:
            raise InvalidSpecError("max_rounds must be >= 0")
        if self.level_off_rel < 0:
            raise InvalidSpecError("level_off_rel must be >= 0")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise InvalidSpecError("trim_fraction must be in [0, 1)")


@dataclass
class RoundReport:
    """The metric surface of one round: train/test/maximizer MSE and MAE."""

    round_index: int
    alpha: float
    n_train: int
    n_mined: int
    train_mse: float
    train_mae: float
    test_mse: float
    test_mae: float
    max_mse: float | None
    max_mae: float | None
    trimmed_max_mse: float | None
    trimmed_max_mae: float | None
    trim_fraction: float
    epochs_trained: int
    mine_shortfall: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        return cls(**d)


def resolve_alpha(alpha: float | str, n_base: int, n_mined: int) -> float:
    """Resolve "pooled" to the exact base-set share |base|/(|base|+|mined|)."""
    if alpha == "pooled":
        if n_base + n_mined == 0:
            raise DomainError("cannot resolve pooled alpha on empty sets")
        return n_base / (n_base + n_mined)
    a = float(alpha)
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"alpha must be in [0, 1], got {a}")
    return a


def evaluate(model: MlpModel, lset: LabeledSet) -> tuple[float, float]:
    """(MSE, MAE) of the model on a labeled set, in dollars."""
    if lset.n == 0:
        raise DomainError("cannot evaluate on an empty set")
    if not lset.is_labeled:
        raise DomainError("cannot evaluate on an unlabeled set")
    resid = predict(model, lset.inputs_norm) - lset.targets
    return float(np.mean(resid * resid)), float(np.mean(np.abs(resid)))


def weighted_loss(
    model: MlpModel, base: LabeledSet, mined: LabeledSet | None, alpha: float | str
) -> float:
    """alpha * MSE(base) + (1 - alpha) * MSE(mined).

    With disjoint sets and alpha = |base|/(|base|+|mined|) this equals the
    plain MSE over the union. alpha=1 and alpha=0 reduce exactly to the
    single-set means.
    """
    if base.n == 0:
        raise DomainError("base set is empty")
    n_mined = 0 if mined is None else mined.n
    a = resolve_alpha(alpha, base.n, n_mined)
    if a == 1.0:
        return evaluate(model, base)[0]
    if mined is None or mined.n == 0:
        raise DomainError("mined set is empty but alpha < 1")
    if a == 0.0:
        return evaluate(model, mined)[0]
    return a * evaluate(model, base)[0] + (1.0 - a) * evaluate(model, mined)[0]


def trimmed_metrics(
    model: MlpModel, lset: LabeledSet, trim_fraction: float
) -> tuple[float, float]:
    """(MSE, MAE) after dropping the ceil(trim_fraction*n) worst residuals.

    Ties on |residual| drop the lower sample index first. trim_fraction = 0
    is exactly evaluate().
    """
    if not 0.0 <= trim_fraction < 1.0:
        raise DomainError("trim_fraction must be in [0, 1)")
    if lset.n == 0:
        raise DomainError("cannot evaluate on an empty set")
    resid = predict(model, lset.inputs_norm) - lset.targets
    n_drop = math.ceil(trim_fraction * lset.n)
    if n_drop >= lset.n:
        raise DomainError(f"trimming {n_drop} of {lset.n} samples would empty the set")
    if n_drop:
        order = np.argsort(-np.abs(resid), kind="stable")
        resid = resid[order[n_drop:]]
    return float(np.mean(resid * resid)), float(np.mean(np.abs(resid)))


def _assemble_weighted(
    base: LabeledSet, mined: LabeledSet | None, alpha: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Flatten the weighted pair into (X, y, per-sample weights).

    Weights are scaled so that the plain weighted mean over the union equals
    alpha*MSE(base) + (1-alpha)*MSE(mined). alpha=1 or alpha=0 drop the other
    set entirely so the trajectory matches single-set training exactly.
    """
    if alpha == 1.0 or mined is None or mined.n == 0:
        if alpha != 1.0 and (mined is None or mined.n == 0):
            raise DomainError("mined set is empty but alpha < 1")
        return base.inputs_norm, base.targets, None
    if alpha == 0.0:
        return mined.inputs_norm, mined.targets, None
    total = base.n + mined.n
    X = np.vstack([base.inputs_norm, mined.inputs_norm])
    y = np.concatenate([base.targets, mined.targets])
    w = np.concatenate(
        [
            np.full(base.n, alpha * total / base.n),
            np.full(mined.n, (1.0 - alpha) * total / mined.n),
        ]
    )
    return X, y, w


def retrain(
    model: MlpModel,
    base: LabeledSet,
    mined: LabeledSet | None,
    round_cfg: RoundConfig,
    train_cfg: TrainConfig,
    seed: int,
) -> tuple[MlpModel, TrainHistory]:
    """Train on the weighted pair; fresh mode re-initializes from ``seed``.

    Fine-tune mode continues from the given parameters instead. Returns the
    trained model (the input model is never mutated) and its history.
    """
    round_cfg.validate()
    if not base.is_labeled or (mined is not None and mined.n and not mined.is_labeled):
        raise DomainError("retrain requires labeled sets")
    alpha = resolve_alpha(round_cfg.alpha, base.n, 0 if mined is None else mined.n)
    if round_cfg.retrain_mode == RETRAIN_FRESH:
        m = init_mlp(model.layer_dims, seed)
    else:
        m = model.copy()
    X, y, w = _assemble_weighted(base, mined, alpha)
    history = train(m, X, y, train_cfg, seed, sample_weight=w)
    return m, history


def make_report(
    model: MlpModel,
    round_index: int,
    alpha: float,
    train_set: LabeledSet,
    test_set: LabeledSet,
    maximizer_set: LabeledSet | None,
    trim_fraction: float,
    epochs_trained: int,
    n_mined: int,
    mine_shortfall: bool,
) -> RoundReport:
    """Evaluate one trained model on the three metric surfaces."""
    train_mse, train_mae = evaluate(model, train_set)
    test_mse, test_mae = evaluate(model, test_set)
    max_mse = max_mae = trimmed_mse = trimmed_mae = None
    if maximizer_set is not None and maximizer_set.n > 0:
        max_mse, max_mae = evaluate(model, maximizer_set)
        if math.ceil(trim_fraction * maximizer_set.n) < maximizer_set.n:
            trimmed_mse, trimmed_mae = trimmed_metrics(
                model, maximizer_set, trim_fraction
            )
    return RoundReport(
        round_index=round_index,
        alpha=alpha,
        n_train=train_set.n,
        n_mined=n_mined,
        train_mse=train_mse,
        train_mae=train_mae,
        test_mse=test_mse,
        test_mae=test_mae,
        max_mse=max_mse,
        max_mae=max_mae,
        trimmed_max_mse=trimmed_mse,
        trimmed_max_mae=trimmed_mae,
        trim_fraction=trim_fraction,
        epochs_trained=epochs_trained,
        mine_shortfall=mine_shortfall,
    )


def run_loop(
    spec: OracleSpec,
    fd: FdConfig,
    n_train: int,
    n_test: int,
    seed_train: int,
    seed_test: int,
    layer_dims: list[int],
    init_seed: int,
    train_cfg: TrainConfig,
    train_seed: int,
    mine_cfg: AscentConfig,
    round_cfg: RoundConfig,
    out_dir: str | Path | None = None,
    n_threads: int = 1,
) -> list[RoundReport]:
    """Iterated mine-merge-retrain until maximizers run dry or test MSE levels off.

    Round 0 samples and labels the base and test sets and trains the first
    surrogate; its report scores the maximizers mined from it. Round k >= 1
    merges the previous round's maximizers into the training set, retrains,
    and scores against the union of all previously mined sets, so consecutive
    reports compare models on identical maximizer sets. Mining for round k+1
    happens with schedules tightened by the per-round factors, and is skipped
    entirely once k = max_rounds. Every round's artifacts are persisted under
    ``out_dir`` when given; on error the partial report list is still saved.
    """
    round_cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    reports: list[RoundReport] = []

    def persist_reports() -> None:
        if out is not None:
            save_reports(reports, out / "reports.json")

    try:
        train_set = ds.label(ds.sample_uniform(spec, n_train, seed_train, name="S0"), spec)
        test_set = ds.label(ds.sample_uniform(spec, n_test, seed_test, name="test"), spec)
        if out is not None:
            (out / "data").mkdir(parents=True, exist_ok=True)
            ds.save_csv(train_set, out / "data" / "s0.csv")
            ds.save_csv(test_set, out / "data" / "test.csv")

        model = init_mlp(layer_dims, init_seed)
        history = train(model, train_set.inputs_norm, train_set.targets, train_cfg, train_seed)

        mined_sets: list[LabeledSet] = []
        prev_mined: LabeledSet | None = None
        for k in range(round_cfg.max_rounds + 1):
            if k > 0:
                alpha = resolve_alpha(round_cfg.alpha, train_set.n, prev_mined.n)
                model, history = retrain(
                    model, train_set, prev_mined, round_cfg, train_cfg, train_seed
                )
                train_set = ds.merge(train_set, prev_mined, name=f"S{k}")
            else:
                alpha = 1.0

            mine_result: MineResult | None = None
            if k < round_cfg.max_rounds:
                mine_result = mine(
                    model,
                    spec,
                    train_set,
                    mine_cfg.tightened(round_cfg.step_tighten, round_cfg.tol_tighten, k),
                    fd,
                    round_index=k,
                    n_threads=n_threads,
                )
                mined_sets.append(mine_result.mined)

            if k == 0:
                eval_max = mined_sets[0] if mined_sets else None
            else:
                eval_max = mined_sets[0]
                for extra in mined_sets[1:k]:
                    eval_max = ds.merge(eval_max, extra, name="M-union")

            report = make_report(
                model,
                k,
                alpha,
                train_set,
                test_set,
                eval_max,
                round_cfg.trim_fraction,
                history.epochs,
                0 if mine_result is None else mine_result.mined.n,
                False if mine_result is None else mine_result.shortfall,
            )
            reports.append(report)

            if out is not None:
                rdir = out / f"round_{k}"
                rdir.mkdir(parents=True, exist_ok=True)
                model.save(rdir / "model.ckpt", extra={"round": k, "alpha": alpha})
                (rdir / "history.json").write_text(json.dumps(history.to_dict()))
                (rdir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
                if mine_result is not None:
                    ds.save_csv(mine_result.mined, rdir / "mined.csv")
            persist_reports()

            if mine_result is not None and mine_result.mined.n == 0:
                break
            if k >= 1:
                prev_mse = reports[k - 1].test_mse
                improvement = (prev_mse - report.test_mse) / max(prev_mse, np.finfo(float).tiny)
                if improvement < round_cfg.level_off_rel:
                    break
            if mine_result is not None:
                prev_mined = mine_result.mined
    except Exception:
        persist_reports()
        raise

    return reports


def save_reports(reports: list[RoundReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2))


def load_reports(path: str | Path) -> list[RoundReport]:
    return [RoundReport.from_dict(d) for d in json.loads(Path(path).read_text())]
