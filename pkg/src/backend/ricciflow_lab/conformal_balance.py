"""Conformal dilations of the round two-sphere and measure balancing.

A dilation is given by a center x on S^2 and a parameter t in [0, 1). In the
stereographic chart that sends x to infinity and -x to the origin it scales
the plane by 1/(1 - t), so it fixes x and -x and pushes mass toward x.

Every finite measure that is neither empty nor concentrated at one point can
be moved to one whose center of mass is the origin, which is the step used to
feed coordinate test functions into the stability quadratic form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import constants
from .profile_geometry import (
    NonMinimalSliceError,
    ProfileGrid,
    SliceJet,
    sphere_data,
    sphere_from_jet,
    spectrum_for_sphere,
)
from .sphere_mesh import dirichlet_energy, icosphere, lumped_mass
from .tolerances import DEFAULTS, Tolerances

logger = logging.getLogger(__name__)

MAX_CHART_RADIUS = 17.0


class DegenerateMeasureError(ValueError):
    """The measure is empty or sits (almost) on a single point."""


class BalanceConvergenceError(RuntimeError):
    def __init__(self, message: str, best: "BalanceResult"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True, eq=False)
class WeightedMeasure:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise DegenerateMeasureError("nodes must be an (N, 3) array")
        if weights.shape != (nodes.shape[0],):
            raise DegenerateMeasureError("one weight per node is required")
        if nodes.shape[0] == 0:
            raise DegenerateMeasureError("measure has no nodes")
        if np.any(np.abs(np.linalg.norm(nodes, axis=1) - 1.0) > 1e-12):
            raise DegenerateMeasureError("measure nodes must lie on the unit sphere")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DegenerateMeasureError("weights must be finite and non-negative")
        if not weights.sum() > 0:
            raise DegenerateMeasureError("measure has zero total mass")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class ConformalDilation:
    center: tuple
    t: float

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=float)
        norm = float(np.linalg.norm(center))
        if center.shape != (3,) or not norm > 0:
            raise ValueError("dilation center must be a non-zero 3-vector")
        if not 0.0 <= self.t < 1.0:
            raise ValueError(f"dilation parameter must lie in [0, 1), got {self.t}")
        object.__setattr__(self, "center", tuple(float(c) for c in center / norm))
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def identity(cls) -> "ConformalDilation":
        return cls(center=(0.0, 0.0, 1.0), t=0.0)

    @classmethod
    def from_chart(cls, v: Sequence[float]) -> "ConformalDilation":
        """Inverse of the chart v = artanh(t) x of the open ball."""
        v = np.asarray(v, dtype=float)
        radius = float(np.linalg.norm(v))
        if radius == 0.0:
            return cls.identity()
        # tanh rounds to 1.0 past ~19
        return cls(center=tuple(v / radius), t=math.tanh(min(radius, MAX_CHART_RADIUS)))

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - self.t)


def apply_dilation(points: np.ndarray, dilation: ConformalDilation) -> np.ndarray:
    """Image of unit vectors under the dilation, in closed form."""
    points = np.asarray(points, dtype=float)
    x = np.asarray(dilation.center)
    s = dilation.scale
    c = points @ x
    along = (1.0 + c) * s * s
    across = 1.0 - c
    denominator = along + across
    coefficient = ((along - across) / denominator)[..., None] * x
    tangential = (2.0 * s / denominator)[..., None] * (points - c[..., None] * x)
    image = coefficient + tangential
    return image / np.linalg.norm(image, axis=-1, keepdims=True)


def center_of_mass(measure: WeightedMeasure, dilation: ConformalDilation) -> np.ndarray:
    image = apply_dilation(measure.nodes, dilation)
    return measure.weights @ image / measure.total


def dilate_measure(measure: WeightedMeasure, dilation: ConformalDilation) -> WeightedMeasure:
    return WeightedMeasure(nodes=apply_dilation(measure.nodes, dilation), weights=measure.weights)


@dataclass(frozen=True)
class BalanceResult:
    dilation: ConformalDilation
    residual: float
    iterations: int


def _largest_share(measure: WeightedMeasure) -> float:
    return float(np.max(measure.weights)) / measure.total


def _check_spread(measure: WeightedMeasure, tolerances: Tolerances) -> None:
    share = _largest_share(measure)
    if share > 1.0 - tolerances.atomic_ratio:
        raise DegenerateMeasureError(f"measure is concentrated at one node ({share:.9f} of mass)")


def _check_atoms(measure: WeightedMeasure) -> None:
    share = _largest_share(measure)
    # an atom carrying half the mass or more can never be balanced away
    if share >= 0.5:
        raise DegenerateMeasureError(f"a single node carries {share:.3f} of the mass")


def balance(
    measure: WeightedMeasure,
    tol: float,
    tolerances: Tolerances = DEFAULTS,
    max_iterations: Optional[int] = None,
) -> BalanceResult:
    """Find a dilation moving the center of mass of measure to the origin.

    Newton iteration in the chart v = artanh(t) x, which maps the open ball
    onto R^3, with a finite-difference Jacobian, a capped step and
    backtracking on |F|.
    """
    if not tol > 0:
        raise ValueError("balance tolerance must be positive")
    _check_spread(measure, tolerances)
    limit = max_iterations or tolerances.balance_max_iterations

    def residual(v: np.ndarray) -> np.ndarray:
        return center_of_mass(measure, ConformalDilation.from_chart(v))

    v = np.zeros(3)
    value = residual(v)
    norm = float(np.linalg.norm(value))
    if norm > tol:
        _check_atoms(measure)
    iterations = 0
    step = constants.BALANCE_FD_STEP
    while norm > tol:
        if iterations >= limit:
            best = BalanceResult(ConformalDilation.from_chart(v), norm, iterations)
            raise BalanceConvergenceError(
                f"balancing did not reach {tol:g} in {limit} iterations (|F|={norm:.3e})", best
            )
        jacobian = np.empty((3, 3))
        for k in range(3):
            offset = np.zeros(3)
            offset[k] = step
            jacobian[:, k] = (residual(v + offset) - residual(v - offset)) / (2.0 * step)
        try:
            delta = np.linalg.solve(jacobian, -value)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(jacobian, -value, rcond=None)[0]
        length = float(np.linalg.norm(delta))
        if length > constants.BALANCE_MAX_STEP:
            delta *= constants.BALANCE_MAX_STEP / length

        damping = 1.0
        while True:
            trial = v + damping * delta
            trial_value = residual(trial)
            trial_norm = float(np.linalg.norm(trial_value))
            if trial_norm < (1.0 - 1e-4 * damping) * norm or damping < 1e-4:
                break
            damping *= 0.5
        v, value, norm = trial, trial_value, trial_norm
        iterations += 1
        logger.debug("balance iteration %d: |F|=%.3e", iterations, norm)

    return BalanceResult(ConformalDilation.from_chart(v), norm, iterations)


def uniform_measure(level: int = constants.DEFAULT_BALANCE_LEVEL) -> WeightedMeasure:
    mesh = icosphere(level)
    return WeightedMeasure(mesh.vertices, lumped_mass(mesh.vertices, mesh.faces))


def skewed_measure(
    level: int = constants.DEFAULT_BALANCE_LEVEL,
    cap_mass: float = 0.9,
    concentration: float = 40.0,
    pole: Sequence[float] = (0.0, 0.0, 1.0),
) -> WeightedMeasure:
    """Mostly a narrow cap around pole, plus a uniform remainder."""
    if not 0.0 <= cap_mass < 1.0:
        raise ValueError("cap_mass must lie in [0, 1)")
    mesh = icosphere(level)
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    cosine = mesh.vertices @ pole
    density = (
        concentration
        / (2.0 * math.pi * (1.0 - math.exp(-2.0 * concentration)))
        * np.exp(concentration * (cosine - 1.0))
    )
    weights = lumped_mass(mesh.vertices, mesh.faces) * (
        (1.0 - cap_mass) / (4.0 * math.pi) + cap_mass * density
    )
    return WeightedMeasure(mesh.vertices, weights)


def atomic_measure(
    level: int = constants.DEFAULT_BALANCE_LEVEL,
    atom_mass: float = 0.4,
    pole: Sequence[float] = (0.0, 0.0, 1.0),
) -> WeightedMeasure:
    """Uniform measure with the vertex nearest pole carrying atom_mass of the total."""
    if not 0.0 <= atom_mass < 0.5:
        raise ValueError("atom_mass must lie in [0, 0.5)")
    mesh = icosphere(level)
    pole = np.asarray(pole, dtype=float)
    weights = lumped_mass(mesh.vertices, mesh.faces)
    atom = int(np.argmax(mesh.vertices @ pole))
    rest = float(weights.sum() - weights[atom])
    weights[atom] = atom_mass / (1.0 - atom_mass) * rest
    return WeightedMeasure(mesh.vertices, weights)


@dataclass(frozen=True)
class EnergyCheck:
    level: int
    energy: float
    expected: float
    relative_error: float


def energy_identity_check(level: int, dilation: ConformalDilation) -> EnergyCheck:
    """Dirichlet energy of the dilated coordinate functions, against 8 pi."""
    mesh = icosphere(level)
    image = apply_dilation(mesh.vertices, dilation)
    energy = dirichlet_energy(mesh, image)
    expected = 8.0 * math.pi
    return EnergyCheck(
        level=level,
        energy=energy,
        expected=expected,
        relative_error=abs(energy - expected) / expected,
    )


@dataclass(frozen=True)
class HerschVerdict:
    x: float
    index: int
    integral_one_L_one: float
    area_rate: float
    integral_holds: bool
    rate_holds: bool

    @property
    def vacuous(self) -> bool:
        return self.index > 1


def hersch_check_for_jet(
    jet: SliceJet, tolerances: Tolerances = DEFAULTS, tol_minimal: float = 1e-9
) -> HerschVerdict:
    """Index <= 1 forces int(|A|^2 + Ric(n,n)) <= 8 pi and dA/dt >= -16 pi.

    The index counts l = 1 as unstable once 2 - psi^2 P < -spectrum_zero, so a
    non-vacuous verdict has I <= 8 pi + 4 pi spectrum_zero before rounding.
    hersch_tol is absolute and must stay above that.
    """
    sphere = sphere_from_jet(jet, tol_minimal)
    if not sphere.is_minimal:
        raise NonMinimalSliceError(f"slice x={jet.x} is not minimal")
    spectrum = spectrum_for_sphere(sphere, 0, tolerances)
    integral = spectrum.integral_one_L_one
    rate = -8.0 * math.pi - integral
    vacuous = spectrum.index > 1
    tol = tolerances.hersch_tol
    return HerschVerdict(
        x=jet.x,
        index=spectrum.index,
        integral_one_L_one=integral,
        area_rate=rate,
        integral_holds=vacuous or integral <= 8.0 * math.pi + tol,
        rate_holds=vacuous or rate >= -16.0 * math.pi - tol,
    )


def hersch_inequality_check(
    profile: ProfileGrid,
    x: float,
    tolerances: Tolerances = DEFAULTS,
    tol_minimal: Optional[float] = None,
) -> HerschVerdict:
    sphere = sphere_data(profile, x, tol_minimal=tol_minimal, tolerances=tolerances)
    if not sphere.is_minimal:
        raise NonMinimalSliceError(f"slice x={x} is not minimal")
    return hersch_check_for_jet(sphere.jet, tolerances, tol_minimal=math.inf)
