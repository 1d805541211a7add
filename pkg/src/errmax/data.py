"""Domain sampling with validity rejection, affine normalization, oracle
labeling, and CSV persistence of labeled sets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IncompatibleSetsError,
    InvalidSpecError,
    LabelingError,
    ParseError,
    SamplingStarvationError,
)
from .oracles import OracleSpec

_REJECTION_BUDGET_FACTOR = 100
_DRAW_CHUNK = 4096


@dataclass(eq=False)
class Normalizer:
    """Per-dimension affine map between raw units and [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise InvalidSpecError("normalizer bounds must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.lo)) or not np.all(np.isfinite(self.hi)):
            raise InvalidSpecError("normalizer bounds must be finite")
        if np.any(self.hi <= self.lo):
            raise InvalidSpecError("normalizer requires hi > lo in every dimension")

    @classmethod
    def from_domain(cls, domain: np.ndarray) -> "Normalizer":
        domain = np.asarray(domain, dtype=np.float64)
        return cls(domain[:, 0].copy(), domain[:, 1].copy())

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(u, dtype=np.float64) * (self.hi - self.lo)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Normalizer)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )


@dataclass
class LabeledSet:
    """A named set of normalized inputs with optional targets and provenance.

    ``inputs_norm`` has shape (n, d) with entries in [0, 1]; ``targets`` is
    (n,) in dollars or None while unlabeled; ``provenance`` tags each sample
    ("uniform" or "mined-round-k"). Sets are immutable by convention once
    labeled and safe to share across threads.
    """

    name: str
    inputs_norm: np.ndarray
    targets: np.ndarray | None
    provenance: list[str]
    normalizer: Normalizer

    def __post_init__(self):
        self.inputs_norm = np.asarray(self.inputs_norm, dtype=np.float64)
        if self.inputs_norm.ndim != 2:
            raise InvalidSpecError("inputs_norm must be a 2-D array")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != (self.n,):
                raise InvalidSpecError("targets length must match inputs")
        if len(self.provenance) != self.n:
            raise InvalidSpecError("provenance length must match inputs")
        if self.normalizer.dim != self.dim:
            raise InvalidSpecError("normalizer dimension must match inputs")

    @property
    def n(self) -> int:
        return self.inputs_norm.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs_norm.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.targets is not None

    def inputs_raw(self) -> np.ndarray:
        return self.normalizer.denormalize(self.inputs_norm)

    def provenance_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tag in self.provenance:
            counts[tag] = counts.get(tag, 0) + 1
        return counts


def sample_uniform(
    spec: OracleSpec, n: int, seed: int, name: str = "uniform"
) -> LabeledSet:
    """Draw exactly n unlabeled points uniformly over the valid region.

    Rejection sampling over the domain box: candidates failing
    ``spec.is_valid`` are discarded. The draw budget is 100*n candidates;
    exhausting it raises SamplingStarvationError. Deterministic given seed.
    """
    if n < 1:
        raise InvalidSpecError("n must be >= 1")
    norm = Normalizer.from_domain(spec.domain)
    rng = np.random.default_rng(seed)
    budget = _REJECTION_BUDGET_FACTOR * n
    drawn = 0
    accepted: list[np.ndarray] = []
    count = 0
    while count < n and drawn < budget:
        chunk = min(max(_DRAW_CHUNK, n - count), budget - drawn)
        u = rng.random((chunk, norm.dim))
        drawn += chunk
        raw = norm.denormalize(u)
        for i in range(chunk):
            if spec.is_valid(raw[i]):
                accepted.append(u[i])
                count += 1
                if count == n:
                    break
    if count < n:
        raise SamplingStarvationError(
            f"accepted only {count}/{n} samples after {drawn} draws; "
            "validity region is too small"
        )
    inputs = np.vstack(accepted)
    return LabeledSet(name, inputs, None, ["uniform"] * n, norm)


def label(lset: LabeledSet, spec: OracleSpec) -> LabeledSet:
    """Return a copy of the set with targets from the oracle.

    Existing targets are deliberately overwritten. Any oracle failure or
    non-finite value raises LabelingError carrying the sample index.
    """
    raw = lset.inputs_raw()
    targets = np.empty(lset.n)
    for i in range(lset.n):
        try:
            targets[i] = spec.evaluate(raw[i])
        except Exception as exc:
            raise LabelingError(i, f"oracle failed on sample {i}: {exc}") from exc
        if not math.isfinite(targets[i]):
            raise LabelingError(i, f"oracle returned {targets[i]} on sample {i}")
    return LabeledSet(
        lset.name, lset.inputs_norm, targets, list(lset.provenance), lset.normalizer
    )


def merge(a: LabeledSet, b: LabeledSet, name: str | None = None) -> LabeledSet:
    """Concatenate two compatible sets, preserving provenance. Duplicates stay.

    An empty set merges with anything; otherwise both sides must agree on
    being labeled.
    """
    if a.dim != b.dim:
        raise IncompatibleSetsError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.normalizer != b.normalizer:
        raise IncompatibleSetsError("normalizer bounds differ between sets")
    labels = [s.is_labeled for s in (a, b) if s.n > 0]
    if len(set(labels)) > 1:
        raise IncompatibleSetsError("cannot merge a labeled set with an unlabeled one")
    targets = None
    if labels and all(labels):
        targets = np.concatenate(
            [s.targets if s.is_labeled else np.empty(0) for s in (a, b)]
        )
    return LabeledSet(
        name or f"{a.name}+{b.name}",
        np.vstack([a.inputs_norm, b.inputs_norm]),
        targets,
        list(a.provenance) + list(b.provenance),
        a.normalizer,
    )


# --------------------------------------------------------------------- #
# persistence
#
# CSV schema: two comment lines record the set name and the raw-unit
# normalizer bounds, then a header row dim_0..dim_{d-1},target,provenance.
# Floats are written with 17 significant digits, which round-trips float64
# exactly. An unlabeled set has an empty target column.


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(lset: LabeledSet, path: str | Path) -> None:
    """Write the set to CSV, lossless for float64."""
    with open(path, "w", newline="") as f:
        f.write(f"# name {lset.name}\n")
        f.write("# lo " + " ".join(_fmt(v) for v in lset.normalizer.lo) + "\n")
        f.write("# hi " + " ".join(_fmt(v) for v in lset.normalizer.hi) + "\n")
        writer = csv.writer(f)
        writer.writerow([f"dim_{j}" for j in range(lset.dim)] + ["target", "provenance"])
        for i in range(lset.n):
            row = [_fmt(v) for v in lset.inputs_norm[i]]
            row.append("" if lset.targets is None else _fmt(lset.targets[i]))
            row.append(lset.provenance[i])
            writer.writerow(row)


def load_csv(path: str | Path) -> LabeledSet:
    """Read a set written by save_csv. Malformed rows raise ParseError."""
    name = "unnamed"
    lo = hi = None
    inputs: list[list[float]] = []
    targets: list[float] = []
    provenance: list[str] = []
    n_cols = None
    saw_header = False
    with open(path, "r", newline="") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.rstrip("\n")
            if stripped.startswith("# name "):
                name = stripped[len("# name ") :]
                continue
            if stripped.startswith("# lo "):
                lo = _parse_bounds(stripped[len("# lo ") :], line_no)
                continue
            if stripped.startswith("# hi "):
                hi = _parse_bounds(stripped[len("# hi ") :], line_no)
                continue
            if stripped.startswith("#"):
                continue
            cells = next(csv.reader([stripped]))
            if not saw_header:
                if len(cells) < 3 or cells[-2:] != ["target", "provenance"]:
                    raise ParseError(line_no, "expected header ending in target,provenance")
                n_cols = len(cells)
                saw_header = True
                continue
            if len(cells) != n_cols:
                raise ParseError(
                    line_no, f"expected {n_cols} columns, found {len(cells)}"
                )
            try:
                inputs.append([float(c) for c in cells[: n_cols - 2]])
            except ValueError as exc:
                raise ParseError(line_no, f"bad input value: {exc}") from exc
            tcell = cells[n_cols - 2]
            if tcell == "":
                targets.append(math.nan)
            else:
                try:
                    targets.append(float(tcell))
                except ValueError as exc:
                    raise ParseError(line_no, f"bad target value: {exc}") from exc
            provenance.append(cells[n_cols - 1])
    if not saw_header or lo is None or hi is None:
        raise ParseError(1, "missing header or normalizer comment lines")
    dim = len(lo)
    arr = np.array(inputs, dtype=np.float64).reshape(len(inputs), dim)
    tarr: np.ndarray | None = np.array(targets, dtype=np.float64)
    if len(targets) and np.all(np.isnan(tarr)):
        tarr = None
    elif len(targets) and np.any(np.isnan(tarr)):
        raise ParseError(1, "mixed labeled and unlabeled rows")
    elif not len(targets):
        tarr = None
    return LabeledSet(name, arr, tarr, provenance, Normalizer(np.array(lo), np.array(hi)))


def _parse_bounds(text: str, line_no: int) -> list[float]:
    try:
        return [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise ParseError(line_no, f"bad normalizer bounds: {exc}") from exc
