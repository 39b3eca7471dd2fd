"""Two-domain regression data: containers, synthetic generation and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised for malformed CSV input; the message names file, line and column."""


@dataclass(frozen=True, eq=False)
class TwoDomainDataset:
    """Source and target regression data with known noise covariances.

    Attributes
    ----------
    source_features : ndarray, shape (n_s, p)
    source_response : ndarray, shape (n_s,)
    target_features : ndarray, shape (n_t, p)
    target_response : ndarray, shape (n_t,)
    source_cov : ndarray, shape (n_s, n_s)
    target_cov : ndarray, shape (n_t, n_t)
    """

    source_features: np.ndarray
    source_response: np.ndarray
    target_features: np.ndarray
    target_response: np.ndarray
    source_cov: np.ndarray
    target_cov: np.ndarray

    def __post_init__(self):
        for name in (
            "source_features",
            "source_response",
            "target_features",
            "target_response",
            "source_cov",
            "target_cov",
        ):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        xs, xt = self.source_features, self.target_features
        if xs.ndim != 2 or xt.ndim != 2:
            raise ValueError("feature matrices must be 2-D")
        n_s, p = xs.shape
        n_t, p_t = xt.shape
        if n_s < 1 or n_t < 1 or p < 1:
            raise ValueError("need n_s >= 1, n_t >= 1 and p >= 1")
        if p_t != p:
            raise ValueError(f"source has p={p} features but target has p={p_t}")
        if self.source_response.shape != (n_s,):
            raise ValueError("source_response length does not match source_features")
        if self.target_response.shape != (n_t,):
            raise ValueError("target_response length does not match target_features")
        for name, cov, n in (("source_cov", self.source_cov, n_s), ("target_cov", self.target_cov, n_t)):
            if cov.shape != (n, n):
                raise ValueError(f"{name} must have shape ({n}, {n})")
            if not np.array_equal(cov, cov.T):
                raise ValueError(f"{name} is not symmetric")
            off_diagonal = np.count_nonzero(cov) > np.count_nonzero(np.diagonal(cov))
            smallest = np.linalg.eigvalsh(cov)[0] if off_diagonal else np.min(np.diagonal(cov))
            if smallest < -1e-8:
                raise ValueError(f"{name} is not positive semidefinite")

    @property
    def n_source(self) -> int:
        return self.source_features.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_features.shape[0]

    @property
    def n_features(self) -> int:
        return self.source_features.shape[1]

    @property
    def stacked_features(self) -> np.ndarray:
        return np.vstack([self.source_features, self.target_features])

    @property
    def stacked_response(self) -> np.ndarray:
        return np.concatenate([self.source_response, self.target_response])

    @property
    def stacked_cov(self) -> np.ndarray:
        n_s, n_t = self.n_source, self.n_target
        cov = np.zeros((n_s + n_t, n_s + n_t))
        cov[:n_s, :n_s] = self.source_cov
        cov[n_s:, n_s:] = self.target_cov
        return cov

    def with_response(self, stacked: np.ndarray) -> "TwoDomainDataset":
        """Copy of the dataset with the stacked response replaced."""
        n_s = self.n_source
        return TwoDomainDataset(
            self.source_features,
            stacked[:n_s],
            self.target_features,
            stacked[n_s:],
            self.source_cov,
            self.target_cov,
        )

    def subset(self, source_rows, target_rows) -> "TwoDomainDataset":
        src = np.asarray(source_rows)
        tgt = np.asarray(target_rows)
        return TwoDomainDataset(
            self.source_features[src],
            self.source_response[src],
            self.target_features[tgt],
            self.target_response[tgt],
            self.source_cov[np.ix_(src, src)],
            self.target_cov[np.ix_(tgt, tgt)],
        )


@dataclass(frozen=True)
class SyntheticConfig:
    n_s: int
    n_t: int
    p: int
    beta_source: tuple[float, ...]
    beta_target: tuple[float, ...]
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_s, self.n_t, self.p) < 1:
            raise ValueError("n_s, n_t and p must all be >= 1")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        object.__setattr__(self, "beta_source", tuple(float(b) for b in self.beta_source))
        object.__setattr__(self, "beta_target", tuple(float(b) for b in self.beta_target))
        if len(self.beta_source) != self.p or len(self.beta_target) != self.p:
            raise ValueError("beta vectors must have length p")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by one or more integers.

    ``make_rng(master, r)`` gives replication ``r`` its own stream regardless
    of the order in which replications are executed.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def generate_synthetic(config: SyntheticConfig) -> TwoDomainDataset:
    rng = make_rng(config.seed)
    xs = rng.standard_normal((config.n_s, config.p))
    xt = rng.standard_normal((config.n_t, config.p))
    sd = config.noise_sd
    ys = xs @ np.asarray(config.beta_source) + sd * rng.standard_normal(config.n_s)
    yt = xt @ np.asarray(config.beta_target) + sd * rng.standard_normal(config.n_t)
    return TwoDomainDataset(
        xs,
        ys,
        xt,
        yt,
        sd**2 * np.eye(config.n_s),
        sd**2 * np.eye(config.n_t),
    )


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: line 1: empty file, expected header x1,...,xp,y")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 1
    expected = [f"x{k}" for k in range(1, p + 1)] + ["y"]
    if p < 1 or header != expected:
        raise DataFormatError(
            f"{path}: line 1: malformed header {','.join(header)!r}, expected x1,...,xp,y"
        )
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: line {lineno}: expected {len(header)} cells, found {len(row)}"
            )
        parsed = []
        for name, cell in zip(header, row):
            text = cell.strip()
            if not text:
                raise DataFormatError(f"{path}: line {lineno}, column {name}: missing value")
            try:
                parsed.append(float(text))
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}, column {name}: non-numeric value {text!r}"
                ) from None
        values.append(parsed)
    if not values:
        raise DataFormatError(f"{path}: no data rows")
    return header, np.array(values, dtype=float)


def load_csv(source_path, target_path, noise_sd: float = 1.0) -> TwoDomainDataset:
    """Read source and target CSV files with header ``x1,...,xp,y``."""
    if not noise_sd > 0:
        raise ValueError("noise_sd must be positive")
    source_path, target_path = Path(source_path), Path(target_path)
    hs, src = _read_table(source_path)
    ht, tgt = _read_table(target_path)
    if len(hs) != len(ht):
        raise DataFormatError(
            f"dimension mismatch: {source_path} has p={len(hs) - 1}, "
            f"{target_path} has p={len(ht) - 1}"
        )
    var = noise_sd**2
    return TwoDomainDataset(
        src[:, :-1],
        src[:, -1],
        tgt[:, :-1],
        tgt[:, -1],
        var * np.eye(src.shape[0]),
        var * np.eye(tgt.shape[0]),
    )


def write_csv(path, features: np.ndarray, response: np.ndarray) -> None:
    """Write one domain in the ``x1,...,xp,y`` layout with 17 significant digits."""
    p = features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(1, p + 1)] + ["y"])
        for xrow, y in zip(features, response):
            writer.writerow([f"{v:.17g}" for v in xrow] + [f"{y:.17g}"])
