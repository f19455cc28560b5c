"""Soft-label to transmit-energy mapping, per-device caps, and the min-rho
scale negotiation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DevicePopulation, LengthMismatch, SoftLabel, stack_labels

# Row sums are checked against eta with this relative slack (absolute for
# eta <= 1); accumulated rounding grows with both K and the magnitude of eta.
ROW_SUM_TOL = 1e-9


class NonPositiveRho(ValueError):
    """The global energy scale must be positive."""


class NegativeEnergy(ValueError):
    """Transmit energies cannot be negative."""


class EmptyActiveSet(ValueError):
    """No device with positive weight is participating."""


@dataclass(frozen=True, eq=False)
class EnergyFrame:
    """Per-device, per-class transmit energies for one round.

    ``energies[i, c]`` is the energy device i spends on class slot c and
    ``eta[i]`` its per-repetition total. Row sums equal eta by construction:
    the per-round transmit energy of a device does not depend on its label.
    When ``include_reference`` is set, an extra reference slot carrying the
    full eta_i per device is transmitted alongside the K class slots.
    """

    energies: np.ndarray
    eta: np.ndarray
    include_reference: bool = False

    def __post_init__(self) -> None:
        e = np.array(self.energies, dtype=np.float64)
        eta = np.array(self.eta, dtype=np.float64)
        if e.ndim != 2:
            raise LengthMismatch(f"energies must be N x K, got shape {e.shape}")
        if eta.shape != (e.shape[0],):
            raise LengthMismatch("eta must have one entry per device")
        if np.any(e < 0):
            raise NegativeEnergy(f"negative transmit energy {float(e.min())!r}")
        if np.any(eta < 0):
            raise NegativeEnergy("eta entries must be >= 0")
        tol = ROW_SUM_TOL * np.maximum(1.0, eta)
        bad = np.abs(e.sum(axis=1) - eta) > tol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"row {i} sums to {e[i].sum()!r} but eta[{i}] = {eta[i]!r}"
            )
        e.flags.writeable = False
        eta.flags.writeable = False
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "eta", eta)

    @property
    def num_devices(self) -> int:
        return self.energies.shape[0]

    @property
    def num_classes(self) -> int:
        return self.energies.shape[1]

    @property
    def reference_energies(self) -> np.ndarray:
        """Energy each device puts on the reference slot (its full eta)."""
        return self.eta


def map_energies(
    labels: Sequence[SoftLabel],
    pop: DevicePopulation,
    rho: float,
    include_reference: bool = False,
) -> EnergyFrame:
    """Map soft labels to transmit energies E[i, c] = eta_i * q[i, c] with
    eta_i = rho * omega_i / beta_assumed_i.

    The device-side gain estimate (beta_assumed) is used for inversion; the
    true gain only enters through the channel, so miscalibration shows up as
    a gamma_i scaling on the received side.
    """
    if rho <= 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")
    q = stack_labels(labels)
    if q.shape[0] != pop.num_devices:
        raise LengthMismatch(f"{q.shape[0]} labels for {pop.num_devices} devices")
    eta = rho * pop.omegas / pop.betas_assumed
    return EnergyFrame(eta[:, None] * q, eta, include_reference)


def _local_rho(pop: DevicePopulation) -> tuple[np.ndarray, np.ndarray]:
    """Active-device indices and their feasible-scale estimates beta*P/omega."""
    omegas = pop.omegas
    active = np.flatnonzero(omegas > 0)
    if active.size == 0:
        raise EmptyActiveSet("all devices have zero weight")
    rho_i = pop.betas_assumed[active] * pop.power_caps[active] / omegas[active]
    return active, rho_i


def min_rho(pop: DevicePopulation) -> float:
    """Largest common energy scale every active device can afford.

    rho* = min_i beta_assumed_i * P_i / omega_i over devices with omega_i > 0.
    At rho*, eta_i <= P_i for all devices; any larger scale overruns the cap
    of at least one device.
    """
    _, rho_i = _local_rho(pop)
    return float(rho_i.min())


@dataclass(frozen=True)
class RhoReport:
    """One uplink control scalar: a device's local feasible scale."""

    device: int
    rho_local: float


def run_min_rho_protocol(pop: DevicePopulation) -> tuple[float, list[RhoReport]]:
    """Simulate the scale negotiation round.

    Each active device computes its local feasible scale and reports a single
    scalar; the server takes the minimum and broadcasts it. The transcript
    holds exactly one report per active device, so the control overhead is
    N uplink scalars plus one broadcast.
    """
    active, rho_i = _local_rho(pop)
    transcript = [RhoReport(int(i), float(r)) for i, r in zip(active, rho_i)]
    return float(rho_i.min()), transcript
