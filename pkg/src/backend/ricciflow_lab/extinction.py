"""Extinction-time certificates from the width inequality.

With min R(0) = m < 0 the scalar bound gives C = -3/(2m) and the
width satisfies d/dt [W (t+C)^(-3/4)] <= -16 pi d/dt (t+C)^(1/4), which
integrates to an upper bound T* for the extinction time. With m >= 0 the
width decays at least as fast as -4 pi and T* = W(0) / (4 pi).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import constants
from .flow_engine import FlowTrajectory
from .profile_geometry import ProfileGrid, min_scalar
from .tolerances import DEFAULTS, Tolerances
from .width_minmax import WidthSeries, symmetric_width

logger = logging.getLogger(__name__)


class PolicyError(ValueError):
    """The requested quantity does not exist under the active C policy."""


@dataclass(frozen=True)
class ExtinctionCertificate:
    C: Optional[float]
    W0: float
    T_star: float
    policy: str
    min_R0: float


@dataclass(frozen=True)
class MonotoneVerdict:
    t: float
    q: float
    dq: float
    rhs: float
    margin: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.margin >= -self.tolerance


@dataclass(frozen=True)
class SoundnessVerdict:
    comparable: bool
    sound: Optional[bool]
    simulated_extinction: Optional[float]
    T_star: float
    tolerance: Optional[float]
    margin: Optional[float]
    note: str = ""


def constant_C(min_r0: float) -> tuple[Optional[float], str]:
    if min_r0 < 0:
        return -3.0 / (2.0 * min_r0), constants.NEGATIVE_POLICY
    return None, constants.NONNEGATIVE_POLICY


def predicted_extinction(W0: float, C: Optional[float]) -> float:
    """Root T of W0 C^(-3/4) = 16 pi ((T+C)^(1/4) - C^(1/4)), or W0/(4 pi) when C is None."""
    if W0 < 0:
        raise ValueError("W0 must be non-negative")
    if C is None:
        return W0 / (4.0 * math.pi)
    if not C > 0:
        raise ValueError("C must be positive")
    fourth_root = C**0.25 + W0 * C**-0.75 / (16.0 * math.pi)
    return fourth_root**4 - C


def integrated_bound(T: float, W0: float, C: float) -> float:
    """Upper bound for W(T) from integrating the monotone quantity on [0, T]."""
    return (T + C) ** 0.75 * (W0 * C**-0.75 - 16.0 * math.pi * ((T + C) ** 0.25 - C**0.25))


def certificate_for(
    profile: ProfileGrid, tolerances: Tolerances = DEFAULTS
) -> ExtinctionCertificate:
    min_r0 = min_scalar(profile)
    C, policy = constant_C(min_r0)
    width, _ = symmetric_width(profile, tolerances)
    T_star = predicted_extinction(width, C)
    logger.info("certificate: W0=%.9g min R0=%.6g policy=%s T*=%.9g", width, min_r0, policy, T_star)
    return ExtinctionCertificate(C=C, W0=width, T_star=T_star, policy=policy, min_R0=min_r0)


def monotone_monitor(
    series: WidthSeries, C: Optional[float], tolerances: Tolerances = DEFAULTS
) -> List[MonotoneVerdict]:
    """Check Q(t) = W (t+C)^(-3/4) against its exact interval bound, pair by pair."""
    if C is None:
        raise PolicyError("the monotone quantity needs C > 0 (negative initial min R)")
    times = series.times
    values = series.widths * (times + C) ** -0.75
    spans = np.diff(times)
    rates = np.diff(values) / spans
    roots = (times + C) ** 0.25
    bounds = -16.0 * math.pi * np.diff(roots) / spans

    errors = np.zeros_like(rates)
    if rates.size > 1:
        jumps = np.abs(np.diff(rates))
        errors[:-1] = jumps
        errors[1:] = np.maximum(errors[1:], jumps)

    verdicts = []
    for k in range(rates.size):
        tol = tolerances.rate_rel * abs(bounds[k]) + errors[k]
        verdicts.append(
            MonotoneVerdict(
                t=float(times[k]),
                q=float(values[k]),
                dq=float(rates[k]),
                rhs=float(bounds[k]),
                margin=float(bounds[k] - rates[k]),
                tolerance=float(tol),
            )
        )
    failed = sum(1 for verdict in verdicts if not verdict.ok)
    if failed:
        logger.warning("monotone quantity increased faster than allowed at %d pairs", failed)
    return verdicts


def flow_covered(trajectory: FlowTrajectory) -> bool:
    """True when the flow ran to extinction, a pinch or t_max rather than breaking down."""
    return trajectory.termination.kind != "degenerate"


def certificate_soundness(
    trajectory: FlowTrajectory,
    certificate: ExtinctionCertificate,
    tolerances: Tolerances = DEFAULTS,
) -> SoundnessVerdict:
    """Compare the simulated extinction time with T*.

    A pinch, or a flow stopped at t_max before T*, is not comparable. A flow
    that broke down, or outlived T* without going extinct, is unsound.
    """
    termination = trajectory.termination
    tol = 2.0 * trajectory.final.dt_last + tolerances.time_rel * certificate.T_star

    def unsound(note: str) -> SoundnessVerdict:
        logger.warning("certificate T*=%.9g: %s", certificate.T_star, note)
        return SoundnessVerdict(
            comparable=True,
            sound=False,
            simulated_extinction=None,
            T_star=certificate.T_star,
            tolerance=tol,
            margin=None,
            note=note,
        )

    def not_comparable(note: str) -> SoundnessVerdict:
        return SoundnessVerdict(
            comparable=False,
            sound=None,
            simulated_extinction=None,
            T_star=certificate.T_star,
            tolerance=None,
            margin=None,
            note=f"not comparable: {note}",
        )

    if termination.kind == "pinched":
        return not_comparable("neck pinched before extinction")
    if termination.kind == "degenerate":
        return unsound(f"flow degenerated at t={termination.time:.9g} before extinction")
    if termination.kind == "reached_t_max":
        if termination.time > certificate.T_star + tol:
            return unsound(f"still alive at t_max={termination.time:.9g}")
        return not_comparable(f"t_max={termination.time:.9g} is before T*")

    margin = certificate.T_star - termination.time
    sound = margin >= -tol
    if not sound:
        logger.warning(
            "extinction at %.9g exceeds certified T*=%.9g", termination.time, certificate.T_star
        )
    return SoundnessVerdict(
        comparable=True,
        sound=sound,
        simulated_extinction=termination.time,
        T_star=certificate.T_star,
        tolerance=tol,
        margin=margin,
    )
