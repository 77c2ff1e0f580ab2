"""Subtraction-protocol algebra shared by the ensemble and sequence modules.

Each magnetometry sample is the difference of two consecutive Rabi sequences:

* ``ON_OFF``: MW-driven sequence minus a reference with no MW.
* ``PI_PULSE``: a second sequence with a pi pulse prepended minus the plain one.

Hyperfine mixing enters as a population term ``w(tau) * (P - P_hf)`` that is
common to both halves of a pi-pulse pair and therefore cancels in the
difference; the on-off reference carries no drive, so there it survives.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import DomainError


class Protocol(str, enum.Enum):
    SINGLE = "SINGLE"
    ON_OFF = "ON_OFF"
    PI_PULSE = "PI_PULSE"

    @classmethod
    def parse(cls, value) -> "Protocol":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        aliases = {"ONOFF": "ON_OFF", "PI": "PI_PULSE", "PIPULSE": "PI_PULSE"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise DomainError(f"unknown protocol {value!r}") from None


def pair_populations(p, protocol: Protocol, pi_fidelity: float = 1.0, mixing=0.0):
    """Driven-state populations of the two sequences forming one sample.

    Parameters
    ----------
    p : array_like
        Rabi population of the addressed line.
    protocol : Protocol
    pi_fidelity : float
        Fraction of the addressed population inverted by the pi pulse.
    mixing : array_like
        Common-mode hyperfine term ``w * (P - P_hf)``.
    """
    protocol = Protocol.parse(protocol)
    p = np.asarray(p, dtype=float)
    plain = p - mixing
    if protocol is Protocol.ON_OFF:
        return plain, np.zeros_like(plain)
    if protocol is Protocol.PI_PULSE:
        inverted = pi_fidelity * (1.0 - p) + (1.0 - pi_fidelity) * p - mixing
        return plain, inverted
    raise DomainError("SINGLE protocol has no subtraction pair")


def readouts(populations, contrast: float, level: float = 1.0):
    """Normalized fluorescence ``level * (1 - C * pop)`` for each sequence of a pair."""
    return tuple(level * (1.0 - contrast * np.asarray(pop, dtype=float)) for pop in populations)


def subtract(first, second, protocol: Protocol):
    """Magnetometry sample from the two raw readouts of a pair."""
    protocol = Protocol.parse(protocol)
    if protocol is Protocol.ON_OFF:
        return first - second
    if protocol is Protocol.PI_PULSE:
        return second - first
    raise DomainError("SINGLE protocol has no subtraction pair")


def protocol_gain(protocol: Protocol, pi_fidelity: float = 1.0) -> float:
    """Slope of the subtracted signal with respect to ``P``, in contrast units."""
    protocol = Protocol.parse(protocol)
    if protocol is Protocol.PI_PULSE:
        return 2.0 * pi_fidelity
    return -1.0


def subtracted_signal(p, protocol: Protocol, pi_fidelity: float = 1.0, mixing=0.0):
    """Subtracted signal in contrast units.

    ``ON_OFF`` gives ``-P`` and ``PI_PULSE`` gives ``pi_fidelity * (2P - 1)``; the
    pi-pulse response to changes in ``P`` is twice the on-off response.
    """
    if np.any(np.asarray(p) < 0) or np.any(np.asarray(p) > 1):
        raise DomainError("population must lie in [0, 1]")
    first, second = readouts(pair_populations(p, protocol, pi_fidelity, mixing), contrast=1.0)
    out = subtract(first, second, protocol)
    return float(out) if np.ndim(out) == 0 else out
