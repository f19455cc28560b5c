"""Domain types shared by every module: soft labels, device populations,
round parameters, and the deterministic random-source contract.

All stochastic operations in this package take an explicit :class:`RandomSource`;
there is no global RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

# |sum(q) - 1| allowed after accumulated rounding (safe up to K ~ 1e4).
SIMPLEX_SUM_TOL = 1e-9
# Entries this far below zero are treated as floating-point dust and clipped.
NEGATIVITY_TOL = 1e-12


class NegativeEntry(ValueError):
    """A probability entry is materially negative."""


class NotNormalized(ValueError):
    """Entries do not sum to one within tolerance."""


class BadLength(ValueError):
    """Vector has fewer than two classes."""


class LengthMismatch(ValueError):
    """Inputs disagree on the number of devices or classes."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """A probability vector on the (K-1)-simplex.

    Invariants (checked on construction): every entry >= 0 and the entries
    sum to 1 within ``SIMPLEX_SUM_TOL``. Negative dust above ``-NEGATIVITY_TOL``
    is clipped to exactly zero.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.probs, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise BadLength(f"soft label needs K >= 2 entries, got shape {v.shape}")
        if np.any(v < -NEGATIVITY_TOL):
            worst = float(v.min())
            raise NegativeEntry(f"negative probability {worst!r}")
        total = float(v.sum())
        if abs(total - 1.0) > SIMPLEX_SUM_TOL:
            raise NotNormalized(f"entries sum to {total!r}, expected 1")
        object.__setattr__(self, "probs", _readonly(np.maximum(v, 0.0)))

    @property
    def num_classes(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size


def validate_soft_label(v: Sequence[float] | np.ndarray) -> SoftLabel:
    """Check simplex membership and wrap ``v`` as a :class:`SoftLabel`.

    Raises ``BadLength``, ``NegativeEntry`` or ``NotNormalized``.
    """
    return SoftLabel(np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class DeviceProfile:
    """Per-device transmit profile.

    ``beta_true`` is the actual large-scale power gain seen by the channel;
    ``beta_assumed`` is the device-side estimate used for transmit scaling.
    Their ratio ``gamma`` is the calibration mismatch (1 = perfectly known gain).
    ``power_cap`` is the per-repetition energy budget.
    """

    omega: float
    beta_true: float
    beta_assumed: float
    power_cap: float

    def __post_init__(self) -> None:
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.beta_true <= 0 or self.beta_assumed <= 0:
            raise ValueError("large-scale gains must be positive")
        if self.power_cap <= 0:
            raise ValueError("power cap must be positive")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma = beta_true / beta_assumed must be finite")

    @property
    def gamma(self) -> float:
        return self.beta_true / self.beta_assumed


@dataclass(frozen=True, eq=False)
class DevicePopulation:
    """An ordered collection of devices with weights summing to one."""

    devices: tuple[DeviceProfile, ...]

    def __post_init__(self) -> None:
        devs = tuple(self.devices)
        object.__setattr__(self, "devices", devs)
        if len(devs) < 1:
            raise ValueError("population needs at least one device")
        total = sum(d.omega for d in devs)
        if abs(total - 1.0) > SIMPLEX_SUM_TOL:
            raise NotNormalized(f"device weights sum to {total!r}, expected 1")

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([d.omega for d in self.devices])

    @property
    def betas_true(self) -> np.ndarray:
        return np.array([d.beta_true for d in self.devices])

    @property
    def betas_assumed(self) -> np.ndarray:
        return np.array([d.beta_assumed for d in self.devices])

    @property
    def power_caps(self) -> np.ndarray:
        return np.array([d.power_cap for d in self.devices])

    @property
    def gammas(self) -> np.ndarray:
        return self.betas_true / self.betas_assumed

    @property
    def gamma_bar(self) -> float:
        """Weighted mean mismatch, sum_i omega_i * gamma_i."""
        return float(self.omegas @ self.gammas)


def population_from_arrays(
    omegas: Sequence[float],
    betas_true: Sequence[float],
    betas_assumed: Sequence[float] | None = None,
    power_caps: Sequence[float] | None = None,
) -> DevicePopulation:
    """Convenience constructor; ``betas_assumed`` defaults to the true gains
    (calibrated devices) and ``power_caps`` to 1."""
    omegas = np.asarray(omegas, dtype=np.float64)
    betas_true = np.asarray(betas_true, dtype=np.float64)
    if betas_assumed is None:
        betas_assumed = betas_true
    betas_assumed = np.asarray(betas_assumed, dtype=np.float64)
    if power_caps is None:
        power_caps = np.ones_like(betas_true)
    power_caps = np.asarray(power_caps, dtype=np.float64)
    n = len(omegas)
    if not (len(betas_true) == len(betas_assumed) == len(power_caps) == n):
        raise LengthMismatch("per-device arrays must have equal length")
    return DevicePopulation(
        tuple(
            DeviceProfile(float(o), float(bt), float(ba), float(p))
            for o, bt, ba, p in zip(omegas, betas_true, betas_assumed, power_caps)
        )
    )


class ChannelModel(Enum):
    """Which received-energy model the channel simulator uses.

    SUPERPOSITION: complex baseband superposition of all devices per sample,
    with fading shared across the K class slots of a repetition.
    DIAGONAL: per-device energies add directly with fading drawn independently
    per class slot, the decomposition under which the variance results hold.
    """

    SUPERPOSITION = "superposition"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class RoundConfig:
    """Parameters of one aggregation round.

    ``rho`` is the global energy scale broadcast by the server, ``noise_var``
    the per-resource-element complex noise power. Optional AR(1) coefficients
    describe the energy-domain autocorrelation across repetitions (time) and
    antennas (space); ``None`` means independent samples.
    """

    num_classes: int
    reps: int = 1
    antennas: int = 1
    rho: float = 1.0
    noise_var: float = 0.0
    channel_model: ChannelModel = ChannelModel.SUPERPOSITION
    time_corr: float | None = None
    space_corr: float | None = None
    use_reference_re: bool = False

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise BadLength(f"need K >= 2 classes, got {self.num_classes}")
        if self.reps < 1 or self.antennas < 1:
            raise ValueError("reps and antennas must be >= 1")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        for name in ("time_corr", "space_corr"):
            c = getattr(self, name)
            if c is not None and not (0.0 <= c < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {c}")

    @property
    def sample_count(self) -> int:
        """Number of independent energy observations per class, S*M."""
        return self.reps * self.antennas


class RandomSource:
    """Deterministic random stream with independent child splitting.

    The same seed and the same call sequence reproduce draws bit for bit.
    ``split`` derives statistically independent child streams, so Monte Carlo
    trials can be partitioned without overlapping randomness.
    """

    def __init__(self, seed: int):
        self._seq = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    @classmethod
    def _from_sequence(cls, seq: np.random.SeedSequence) -> "RandomSource":
        obj = cls.__new__(cls)
        obj._seq = seq
        obj.generator = np.random.Generator(np.random.PCG64(seq))
        return obj

    @property
    def seed(self):
        return self._seq.entropy

    def split(self, n: int) -> list["RandomSource"]:
        """Derive ``n`` independent child sources."""
        return [RandomSource._from_sequence(s) for s in self._seq.spawn(n)]

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed!r})"


def stack_labels(labels: Sequence[SoftLabel]) -> np.ndarray:
    """Stack N soft labels into an (N, K) matrix, checking consistent K."""
    if len(labels) == 0:
        raise LengthMismatch("no labels given")
    k = labels[0].num_classes
    if any(lab.num_classes != k for lab in labels):
        raise LengthMismatch("labels disagree on the number of classes")
    return np.stack([lab.probs for lab in labels])


def weighted_average(labels: Sequence[SoftLabel], pop: DevicePopulation) -> SoftLabel:
    """Weighted mean of the device soft labels, sum_i omega_i * q_i.

    This is the aggregation target; the result is a convex combination and
    therefore itself a valid soft label.
    """
    q = stack_labels(labels)
    if q.shape[0] != pop.num_devices:
        raise LengthMismatch(
            f"{q.shape[0]} labels for {pop.num_devices} devices"
        )
    return SoftLabel(pop.omegas @ q)
