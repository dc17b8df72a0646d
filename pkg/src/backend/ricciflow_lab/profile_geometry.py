"""Rotationally symmetric metrics on the three-sphere.

A metric is stored as two cell-centered arrays over x in (0, 1):

    g = phi(x)^2 dx^2 + psi(x)^2 g_S2

psi is the radius of the level sphere at x and phi the lapse, so that
ds = phi dx is the arclength along the axis. First derivatives use parity ghost
cells (psi odd, phi even). Second derivatives are taken from face slopes whose
pole values follow the series of a smooth cap, and the two pole cells use the
isotropic limit of the curvature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as poly
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import constants
from .tolerances import DEFAULTS, Tolerances

logger = logging.getLogger(__name__)


class DegenerateProfileError(ValueError):
    """psi or phi left the positive range, or psi fell under the floor."""


class ProfileValidationError(ValueError):
    """A profile request or sampled input is inconsistent."""


class SliceRangeError(ValueError):
    """A slice position lies outside the cell-center range."""


class NonMinimalSliceError(ValueError):
    """A stability quantity was requested on a slice that is not minimal."""


@dataclass(frozen=True, eq=False)
class ProfileGrid:
    psi: np.ndarray
    phi: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        psi = np.array(self.psi, dtype=float)
        phi = np.array(self.phi, dtype=float)
        if psi.ndim != 1 or psi.shape != phi.shape:
            raise ProfileValidationError("psi and phi must be 1-D arrays of equal length")
        if psi.size < constants.JET_STENCIL:
            raise ProfileValidationError(
                f"profile needs at least {constants.JET_STENCIL} cells, got {psi.size}"
            )
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(phi))):
            raise DegenerateProfileError("profile contains non-finite values")
        if np.any(phi <= 0):
            raise DegenerateProfileError("lapse phi must be positive on every cell")
        if np.any(psi <= 0):
            raise DegenerateProfileError("radius psi must be positive on every cell")
        psi.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n_cells(self) -> int:
        return int(self.psi.size)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_cells

    @property
    def x_centers(self) -> np.ndarray:
        return cell_centers(self.n_cells)

    @property
    def total_arclength(self) -> float:
        return float(np.sum(self.phi) * self.dx)

    @property
    def max_psi(self) -> float:
        return float(np.max(self.psi))

    def with_time(self, time: float) -> "ProfileGrid":
        return ProfileGrid(psi=self.psi, phi=self.phi, time=time)

    def scaled(self, factor: float) -> "ProfileGrid":
        """Parabolic rescaling: lengths by factor, time by factor squared."""
        return ProfileGrid(
            psi=self.psi * factor, phi=self.phi * factor, time=self.time * factor**2
        )


@dataclass(frozen=True, eq=False)
class CurvatureField:
    k_mix: np.ndarray
    k_sph: np.ndarray
    scalar: np.ndarray
    ric_nn: np.ndarray

    @property
    def ric_sph(self) -> np.ndarray:
        return self.k_mix + self.k_sph


@dataclass(frozen=True)
class SliceJet:
    """Value and arclength derivatives of psi at one slice."""

    x: float
    psi: float
    psi_s: float
    psi_ss: float
    phi: float


@dataclass(frozen=True)
class SphereData:
    x: float
    area: float
    mean_curvature: float
    second_fund_sq: float
    is_minimal: bool
    jet: SliceJet = field(repr=False)


@dataclass(frozen=True)
class ModeEigenvalue:
    l: int  # noqa: E741
    mu: float
    multiplicity: int


@dataclass(frozen=True)
class StabilitySpectrum:
    x: float
    modes: Tuple[ModeEigenvalue, ...]
    potential: float
    index: int
    integral_one_L_one: float


# Profile requests


@dataclass(frozen=True)
class RoundKind:
    radius: float = 1.0


@dataclass(frozen=True)
class DumbbellKind:
    neck: float
    lobe: float
    neck_stretch: float = 1.0


@dataclass(frozen=True)
class SamplesKind:
    x: Sequence[float]
    psi: Sequence[float]
    phi: Sequence[float]


@dataclass(frozen=True)
class RandomKind:
    seed: int
    modes: int = 3


@dataclass(frozen=True)
class PerturbedRoundKind:
    target_min_R: float = -1.0
    neck_stretch: float = 1.0


ProfileKind = Union[RoundKind, DumbbellKind, SamplesKind, RandomKind, PerturbedRoundKind]


def cell_centers(n_cells: int) -> np.ndarray:
    return (np.arange(n_cells) + 0.5) / n_cells


def extend_with_ghosts(values: np.ndarray, parity: int, layers: int) -> np.ndarray:
    """Pad both ends with mirrored cells, multiplied by parity (+1 even, -1 odd)."""
    left = parity * values[layers - 1 :: -1]
    right = parity * values[: -layers - 1 : -1]
    return np.concatenate([left, values, right])


# Pointwise curvature of the reduced metric. The grid and the slice code both
# come through these two functions.


def _mixed_curvature(psi, psi_ss):
    return -psi_ss / psi


def _sphere_curvature(psi, psi_s):
    return (1.0 - psi_s**2) / psi**2


def curvature_from_derivatives(psi, psi_s, psi_ss) -> CurvatureField:
    k_mix = _mixed_curvature(psi, psi_ss)
    k_sph = _sphere_curvature(psi, psi_s)
    return CurvatureField(
        k_mix=k_mix,
        k_sph=k_sph,
        scalar=4.0 * k_mix + 2.0 * k_sph,
        ric_nn=2.0 * k_mix,
    )


def face_slopes(profile: ProfileGrid) -> np.ndarray:
    """Return psi_s on the n + 1 cell faces, poles included.

    Interior faces use the centered difference with a face-averaged lapse. A
    pole face carries the regular slope +-1, lowered by the series term
    K h^2 / 24 of a smooth cap with sectional curvature K, where K is the
    mixed curvature of the second cell.
    """
    dx = profile.dx
    psi, phi = profile.psi, profile.phi
    phi_faces = 0.5 * (phi[:-1] + phi[1:])
    inner = np.diff(psi) / (dx * phi_faces)

    k_left = -(inner[1] - inner[0]) / (dx * phi[1] * psi[1])
    k_right = -(inner[-1] - inner[-2]) / (dx * phi[-2] * psi[-2])
    left = 1.0 - k_left * (dx * phi[0]) ** 2 / 24.0
    right = -(1.0 - k_right * (dx * phi[-1]) ** 2 / 24.0)
    return np.concatenate([[left], inner, [right]])


def grid_derivatives(profile: ProfileGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Return (psi_s, psi_ss) on the cell centers.

    psi_s uses the fourth-order centered difference; psi_ss is the
    conservative difference of the face slopes.
    """
    dx = profile.dx
    psi_e = extend_with_ghosts(profile.psi, -1, 2)

    psi_x = (-psi_e[4:] + 8.0 * psi_e[3:-1] - 8.0 * psi_e[1:-3] + psi_e[:-4]) / (12.0 * dx)
    psi_s = psi_x / profile.phi
    psi_ss = np.diff(face_slopes(profile)) / (dx * profile.phi)
    return psi_s, psi_ss


def isotropic_poles(field: CurvatureField) -> CurvatureField:
    """Replace the sphere curvature of the two pole cells by its limit there.

    At a smooth pole both sectional curvatures agree, and (1 - psi_s^2)/psi^2
    is a ratio of two vanishing quantities.
    """
    k_sph = field.k_sph.copy()
    k_sph[0] = field.k_mix[0]
    k_sph[-1] = field.k_mix[-1]
    return CurvatureField(
        k_mix=field.k_mix,
        k_sph=k_sph,
        scalar=4.0 * field.k_mix + 2.0 * k_sph,
        ric_nn=field.ric_nn,
    )


def check_psi_floor(profile: ProfileGrid, psi_floor_ratio: float = constants.PSI_FLOOR_RATIO):
    floor = psi_floor_ratio * profile.max_psi
    if float(np.min(profile.psi)) <= floor:
        raise DegenerateProfileError(
            f"psi dropped to {float(np.min(profile.psi)):.3e}, floor is {floor:.3e}"
        )


def curvature(
    profile: ProfileGrid, psi_floor_ratio: float = constants.PSI_FLOOR_RATIO
) -> CurvatureField:
    check_psi_floor(profile, psi_floor_ratio)
    psi_s, psi_ss = grid_derivatives(profile)
    return isotropic_poles(curvature_from_derivatives(profile.psi, psi_s, psi_ss))


def min_scalar(profile: ProfileGrid) -> float:
    return float(np.min(curvature(profile).scalar))


# Slices


@dataclass(frozen=True)
class _IntervalFit:
    x_left: float
    dx: float
    psi: Polynomial
    phi: Polynomial


_STENCIL_OFFSETS = np.arange(-3, constants.JET_STENCIL - 3, dtype=float)


def _interval_fit(profile: ProfileGrid, interval: int) -> _IntervalFit:
    """Degree-7 interpolants of psi and phi around [x_i, x_{i+1}] in u = (x - x_i)/dx."""
    layers = constants.GHOST_LAYERS
    psi_e = extend_with_ghosts(profile.psi, -1, layers)
    phi_e = extend_with_ghosts(profile.phi, 1, layers)
    start = interval - 3 + layers
    window = slice(start, start + constants.JET_STENCIL)
    degree = constants.JET_STENCIL - 1
    # offsets from the u = 0 sample
    psi_ref, phi_ref = psi_e[start + 3], phi_e[start + 3]
    psi_coef = poly.polyfit(_STENCIL_OFFSETS, psi_e[window] - psi_ref, degree)
    phi_coef = poly.polyfit(_STENCIL_OFFSETS, phi_e[window] - phi_ref, degree)
    return _IntervalFit(
        x_left=(interval + 0.5) * profile.dx,
        dx=profile.dx,
        psi=Polynomial(psi_coef) + psi_ref,
        phi=Polynomial(phi_coef) + phi_ref,
    )


def _interval_index(profile: ProfileGrid, x: float) -> int:
    centers = profile.x_centers
    slack = 1e-12
    if not (centers[0] - slack <= x <= centers[-1] + slack):
        raise SliceRangeError(
            f"slice x={x!r} outside cell-center range [{centers[0]}, {centers[-1]}]"
        )
    index = int(math.floor((x - centers[0]) / profile.dx))
    return min(max(index, 0), profile.n_cells - 2)


def _jet_from_fit(fit: _IntervalFit, x: float) -> SliceJet:
    u = (x - fit.x_left) / fit.dx
    dpsi = fit.psi.deriv()
    psi = float(fit.psi(u))
    psi_x = float(dpsi(u)) / fit.dx
    psi_xx = float(dpsi.deriv()(u)) / fit.dx**2
    phi = float(fit.phi(u))
    phi_x = float(fit.phi.deriv()(u)) / fit.dx
    if psi <= 0 or phi <= 0:
        raise DegenerateProfileError(f"interpolated profile is not positive at x={x}")
    psi_s = psi_x / phi
    psi_ss = (psi_xx - psi_x * phi_x / phi) / phi**2
    return SliceJet(x=float(x), psi=psi, psi_s=psi_s, psi_ss=psi_ss, phi=phi)


def slice_jet(profile: ProfileGrid, x: float) -> SliceJet:
    fit = _interval_fit(profile, _interval_index(profile, x))
    return _jet_from_fit(fit, x)


def minimal_tolerance(profile: ProfileGrid, tolerances: Tolerances = DEFAULTS) -> float:
    return tolerances.minimal_rel * profile.max_psi / profile.total_arclength


def sphere_from_jet(jet: SliceJet, tol_minimal: float) -> SphereData:
    ratio = jet.psi_s / jet.psi
    return SphereData(
        x=jet.x,
        area=4.0 * math.pi * jet.psi**2,
        mean_curvature=2.0 * ratio,
        second_fund_sq=2.0 * ratio**2,
        is_minimal=abs(jet.psi_s) <= tol_minimal,
        jet=jet,
    )


def sphere_data(
    profile: ProfileGrid,
    x: float,
    *,
    tol_minimal: Optional[float] = None,
    tolerances: Tolerances = DEFAULTS,
) -> SphereData:
    if tol_minimal is None:
        tol_minimal = minimal_tolerance(profile, tolerances)
    return sphere_from_jet(slice_jet(profile, x), tol_minimal)


def spectrum_for_sphere(
    sphere: SphereData,
    l_max: int = constants.DEFAULT_L_MAX,
    tolerances: Tolerances = DEFAULTS,
) -> StabilitySpectrum:
    """Jacobi operator spectrum of a minimal level sphere.

    On a round sphere of radius psi the operator -Lap - (|A|^2 + Ric(n,n))
    diagonalizes over spherical harmonics, with eigenvalue
    l(l+1)/psi^2 - P on a space of dimension 2l+1.
    """
    if l_max < 0:
        raise ValueError("l_max must be non-negative")
    jet = sphere.jet
    ric_nn = 2.0 * _mixed_curvature(jet.psi, jet.psi_ss)
    potential = sphere.second_fund_sq + ric_nn
    psi_sq = jet.psi**2
    zero = tolerances.spectrum_zero

    modes = tuple(
        ModeEigenvalue(l=l, mu=l * (l + 1) / psi_sq - potential, multiplicity=2 * l + 1)
        for l in range(l_max + 1)  # noqa: E741
    )
    index = 0
    l = 0  # noqa: E741
    while l * (l + 1) - psi_sq * potential < -zero:
        index += 2 * l + 1
        l += 1  # noqa: E741
    return StabilitySpectrum(
        x=sphere.x,
        modes=modes,
        potential=potential,
        index=index,
        integral_one_L_one=sphere.area * potential,
    )


def stability_spectrum(
    profile: ProfileGrid,
    x: float,
    l_max: int = constants.DEFAULT_L_MAX,
    *,
    tol_minimal: Optional[float] = None,
    tolerances: Tolerances = DEFAULTS,
) -> StabilitySpectrum:
    sphere = sphere_data(profile, x, tol_minimal=tol_minimal, tolerances=tolerances)
    if not sphere.is_minimal:
        raise NonMinimalSliceError(
            f"slice x={x} is not minimal: |psi_s|={abs(sphere.jet.psi_s):.3e}"
        )
    return spectrum_for_sphere(sphere, l_max, tolerances)


def intrinsic_curvature(profile: ProfileGrid, x: float) -> float:
    """Gauss curvature of the level sphere from the Gauss equation.

    The level sphere is umbilic with both principal curvatures psi_s/psi.
    """
    jet = slice_jet(profile, x)
    ratio = jet.psi_s / jet.psi
    return float(_sphere_curvature(jet.psi, jet.psi_s) + ratio**2)


def critical_jets(profile: ProfileGrid, tolerances: Tolerances = DEFAULTS) -> list[SliceJet]:
    """Locate every zero of psi_s on the cell-center range.

    Candidate intervals come from sign changes of the grid derivative; each
    root is then bisected on the interval interpolant so that the refined
    position is accurate to bisection_rel of the total arclength.
    """
    psi_s, _ = grid_derivatives(profile)
    signs = np.sign(psi_s)
    candidates = set()
    for i in np.flatnonzero(signs[:-1] * signs[1:] <= 0):
        for j in (i - 1, i, i + 1):
            if 0 <= j <= profile.n_cells - 2:
                candidates.add(int(j))

    xtol = tolerances.bisection_rel * profile.total_arclength / float(np.max(profile.phi))
    jets: list[SliceJet] = []
    for interval in sorted(candidates):
        fit = _interval_fit(profile, interval)
        dpsi = fit.psi.deriv()
        left, right = float(dpsi(0.0)), float(dpsi(1.0))
        if left == 0.0:
            root_u = 0.0
        elif right == 0.0:
            root_u = 1.0
        elif left * right > 0:
            continue
        else:
            root_u = brentq(dpsi, 0.0, 1.0, xtol=xtol / profile.dx)
        x = fit.x_left + root_u * profile.dx
        if jets and abs(jets[-1].x - x) <= 4.0 * xtol:
            continue
        jets.append(_jet_from_fit(fit, x))
    logger.debug("found %d critical slices", len(jets))
    return jets


# Profile builders


def _pole_slopes(profile: ProfileGrid) -> Tuple[float, float]:
    x = profile.x_centers
    left = profile.psi[0] / (profile.phi[0] * x[0])
    right = profile.psi[-1] / (profile.phi[-1] * (1.0 - x[-1]))
    return float(left), float(right)


def check_pole_regularity(profile: ProfileGrid) -> None:
    tolerance = max(constants.POLE_SLOPE_TOL, constants.POLE_SLOPE_PER_CELL * profile.dx)
    for name, slope in zip(("x=0", "x=1"), _pole_slopes(profile)):
        if abs(slope - 1.0) > tolerance:
            raise ProfileValidationError(
                f"pole {name} is not smooth: |d psi/ds| = {slope:.4f}, expected 1"
            )


def _round(kind: RoundKind, n_cells: int) -> ProfileGrid:
    if not kind.radius > 0:
        raise ProfileValidationError("round radius must be positive")
    x = cell_centers(n_cells)
    return ProfileGrid(
        psi=kind.radius * np.sin(math.pi * x),
        phi=np.full(n_cells, math.pi * kind.radius),
    )


def dumbbell_arclength(kind: DumbbellKind) -> float:
    width = _dumbbell_transition(kind)
    return math.pi * kind.lobe + 2.0 * width


def _dumbbell_transition(kind: DumbbellKind) -> float:
    # with neck_stretch = 1 the blend matches the cap curvature -1/lobe
    return kind.neck_stretch * math.pi * math.sqrt(kind.lobe * (kind.lobe - kind.neck) / 2.0)


def dumbbell_radius(kind: DumbbellKind, s: np.ndarray) -> np.ndarray:
    """psi as a function of arclength: two round caps joined by a cosine neck."""
    width = _dumbbell_transition(kind)
    total = math.pi * kind.lobe + 2.0 * width
    cap_end = math.pi * kind.lobe / 2.0
    s = np.minimum(np.asarray(s, dtype=float), total - np.asarray(s, dtype=float))
    cap = kind.lobe * np.sin(np.minimum(s, cap_end) / kind.lobe)
    u = np.clip(s - cap_end, 0.0, width)
    blend = kind.neck + (kind.lobe - kind.neck) * (1.0 + np.cos(math.pi * u / width)) / 2.0
    return np.where(s <= cap_end, cap, blend)


def _dumbbell(kind: DumbbellKind, n_cells: int) -> ProfileGrid:
    if not (0 < kind.neck < kind.lobe):
        raise ProfileValidationError(
            f"dumbbell needs 0 < neck < lobe, got neck={kind.neck}, lobe={kind.lobe}"
        )
    if not kind.neck_stretch > 0:
        raise ProfileValidationError("neck_stretch must be positive")
    total = dumbbell_arclength(kind)
    x = cell_centers(n_cells)
    return ProfileGrid(psi=dumbbell_radius(kind, x * total), phi=np.full(n_cells, total))


def _random(kind: RandomKind, n_cells: int) -> ProfileGrid:
    if kind.modes < 1:
        raise ProfileValidationError("random profile needs at least one mode")
    rng = np.random.default_rng(kind.seed)
    k = np.arange(1, kind.modes + 1, dtype=float)
    shape = rng.uniform(-0.2, 0.2, kind.modes) / k
    stretch = rng.uniform(-0.25, 0.25, kind.modes) / k
    radius = rng.uniform(0.5, 1.5)

    x = cell_centers(n_cells)
    s = math.pi * (x + np.sin(2.0 * math.pi * np.outer(x, k)) @ (stretch / (2.0 * math.pi * k)))
    ds_dx = math.pi * (1.0 + np.cos(2.0 * math.pi * np.outer(x, k)) @ stretch)
    bump = np.exp((np.cos(2.0 * np.outer(s, k)) - 1.0) @ shape)
    return ProfileGrid(psi=radius * np.sin(s) * bump, phi=radius * ds_dx)


def _samples(kind: SamplesKind, n_cells: int) -> ProfileGrid:
    x = np.asarray(kind.x, dtype=float)
    psi = np.asarray(kind.psi, dtype=float)
    phi = np.asarray(kind.phi, dtype=float)
    if not (x.shape == psi.shape == phi.shape) or x.ndim != 1:
        raise ProfileValidationError("samples need x, psi and phi columns of equal length")
    if x.size < 4:
        raise ProfileValidationError("samples need at least four rows")
    if np.any(np.diff(x) <= 0) or x[0] <= 0 or x[-1] >= 1:
        raise ProfileValidationError("sample positions must increase strictly inside (0, 1)")
    if np.any(psi <= 0) or np.any(phi <= 0):
        raise ProfileValidationError("sampled psi and phi must be positive")

    centers = cell_centers(n_cells)
    if x.size == n_cells and np.allclose(x, centers, rtol=0.0, atol=1e-12):
        return ProfileGrid(psi=psi, phi=phi)
    logger.info("resampling %d samples onto %d cells", x.size, n_cells)
    return ProfileGrid(
        psi=CubicSpline(x, psi)(centers),
        phi=CubicSpline(x, phi)(centers),
    )


def _perturbed_round(kind: PerturbedRoundKind, n_cells: int) -> ProfileGrid:
    """Unit dumbbell with the neck tuned until min R hits the target."""

    def excess(neck: float) -> float:
        grid = _dumbbell(DumbbellKind(neck, 1.0, kind.neck_stretch), n_cells)
        return min_scalar(grid) - kind.target_min_R

    low, high = 0.5, 0.95
    if excess(low) * excess(high) > 0:
        raise ProfileValidationError(
            f"target_min_R={kind.target_min_R} is not reachable by a shallow neck"
        )
    neck = brentq(excess, low, high, xtol=1e-10)
    logger.debug("perturbed round neck %.6f for min R %.3f", neck, kind.target_min_R)
    return _dumbbell(DumbbellKind(neck, 1.0, kind.neck_stretch), n_cells)


_BUILDERS = {
    RoundKind: _round,
    DumbbellKind: _dumbbell,
    SamplesKind: _samples,
    RandomKind: _random,
    PerturbedRoundKind: _perturbed_round,
}


def build_profile(kind: ProfileKind, n_cells: int) -> ProfileGrid:
    if n_cells < constants.MIN_CELLS:
        raise ProfileValidationError(
            f"n_cells must be at least {constants.MIN_CELLS}, got {n_cells}"
        )
    builder = _BUILDERS.get(type(kind))
    if builder is None:
        raise ProfileValidationError(f"unknown profile kind: {type(kind).__name__}")
    profile = builder(kind, n_cells)
    check_pole_regularity(profile)
    return profile
