"""Disturbance generators and the dataset file format.

Datasets are CSV files with header ``sample,t,coord,value``, one scalar per
row, ordered by sample, then time step, then coordinate.  Values are written
with shortest round-trip float formatting, so a fixed seed reproduces the
file byte for byte.  All files are written atomically (temp file + rename).
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NormalCoordinate:
    """Gaussian coordinate; the second parameter is a variance by default.

    The conventional reading of N(mu, s) takes s as a variance; sources that
    mean a standard deviation can say so explicitly via `stddev`.
    """

    mean: float
    variance: float | None = None
    stddev: float | None = None

    def __post_init__(self):
        if (self.variance is None) == (self.stddev is None):
            raise ConfigError("normal coordinate needs exactly one of variance or stddev")
        spread = self.variance if self.variance is not None else self.stddev
        if spread < 0:
            raise ConfigError("normal spread parameter must be nonnegative")

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.variance)) if self.variance is not None else float(self.stddev)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.normal(self.mean, self.scale, size=size)


@dataclass(frozen=True)
class SignedGammaCoordinate:
    """Gamma(shape, scale) magnitude, optionally flipped by an independent fair sign."""

    shape: float
    scale: float
    signed: bool = True

    def __post_init__(self):
        if self.shape <= 0 or self.scale < 0:
            raise ConfigError("gamma coordinate needs shape > 0 and scale >= 0")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        g = rng.gamma(self.shape, self.scale, size=size)
        if self.signed:
            g = g * (rng.integers(0, 2, size=size) * 2 - 1)
        return g


@dataclass(frozen=True)
class ConstantCoordinate:
    value: float = 0.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class DisturbanceGeneratorSpec:
    """Independent per-coordinate disturbance distributions, i.i.d. over time."""

    coordinates: tuple

    def __post_init__(self):
        if not self.coordinates:
            raise ConfigError("generator needs at least one coordinate")
        object.__setattr__(self, "coordinates", tuple(self.coordinates))

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def sample(self, rng: np.random.Generator, n_steps: int) -> np.ndarray:
        """One sequence of shape (n_steps, dim); coordinates drawn block-wise in order."""
        cols = [c.draw(rng, n_steps) for c in self.coordinates]
        return np.stack(cols, axis=1)

    def sample_sequences(self, rng: np.random.Generator, count: int, n_steps: int) -> np.ndarray:
        """(count, n_steps, dim) array; same coordinate-major draw order."""
        cols = [c.draw(rng, (count, n_steps)) for c in self.coordinates]
        return np.stack(cols, axis=2)


def double_integrator_generator() -> DisturbanceGeneratorSpec:
    """Built-in benchmark noise: N(-0.01, var 0.005) and +/-Gamma(5.5, 0.005)."""
    return DisturbanceGeneratorSpec(
        coordinates=(
            NormalCoordinate(mean=-0.01, variance=0.005),
            SignedGammaCoordinate(shape=5.5, scale=0.005, signed=True),
        )
    )


def generator_from_config(cfg: dict) -> DisturbanceGeneratorSpec:
    """Build a generator from the config `generator` block."""
    if not isinstance(cfg, dict) or "coordinates" not in cfg:
        raise ConfigError("generator block must contain a 'coordinates' list")
    coords = []
    for i, c in enumerate(cfg["coordinates"]):
        dist = c.get("dist")
        try:
            if dist == "normal":
                coords.append(
                    NormalCoordinate(
                        mean=float(c["mean"]),
                        variance=None if "variance" not in c else float(c["variance"]),
                        stddev=None if "stddev" not in c else float(c["stddev"]),
                    )
                )
            elif dist == "gamma":
                coords.append(
                    SignedGammaCoordinate(
                        shape=float(c["shape"]),
                        scale=float(c["scale"]),
                        signed=bool(c.get("signed", True)),
                    )
                )
            elif dist == "constant":
                coords.append(ConstantCoordinate(value=float(c.get("value", 0.0))))
            else:
                raise ConfigError(f"coordinate {i}: unknown dist {dist!r}")
        except KeyError as exc:
            raise ConfigError(f"coordinate {i}: missing field {exc}") from exc
    return DisturbanceGeneratorSpec(coordinates=tuple(coords))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset_csv(path, sequences: np.ndarray) -> None:
    """Write (k+1, N, n) disturbance sequences in the sample,t,coord,value format."""
    seq = np.asarray(sequences, dtype=float)
    if seq.ndim != 3:
        raise ValueError("sequences must be a (k+1, N, n) array")
    lines = ["sample,t,coord,value"]
    count, n_steps, dim = seq.shape
    for j in range(count):
        for t in range(n_steps):
            for c in range(dim):
                lines.append(f"{j},{t},{c},{float(seq[j, t, c])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset_csv(path) -> np.ndarray:
    """Read a dataset file back into a dense (k+1, N, n) array."""
    entries = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["sample", "t", "coord", "value"]:
            raise ConfigError(f"{path}: expected header sample,t,coord,value, got {header}")
        for row in reader:
            if len(row) != 4:
                raise ConfigError(f"{path}: malformed row {row}")
            j, t, c = int(row[0]), int(row[1]), int(row[2])
            entries[(j, t, c)] = float(row[3])
    if not entries:
        raise ConfigError(f"{path}: dataset is empty")
    count = max(k[0] for k in entries) + 1
    n_steps = max(k[1] for k in entries) + 1
    dim = max(k[2] for k in entries) + 1
    if len(entries) != count * n_steps * dim:
        raise ConfigError(
            f"{path}: expected {count * n_steps * dim} values for a dense "
            f"({count}, {n_steps}, {dim}) dataset, found {len(entries)}"
        )
    out = np.empty((count, n_steps, dim))
    for (j, t, c), value in entries.items():
        out[j, t, c] = value
    return out
