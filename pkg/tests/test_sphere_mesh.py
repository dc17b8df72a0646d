from __future__ import annotations

import math

import numpy as np
import pytest

from ricciflow_lab.sphere_mesh import (
    cotangent_stiffness,
    dirichlet_energy,
    icosphere,
    laplace_beltrami_spectrum,
    lumped_mass,
    triangle_areas,
)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_counts(level: int) -> None:
    mesh = icosphere(level)
    assert mesh.n_vertices == 10 * 4**level + 2
    assert mesh.faces.shape == (20 * 4**level, 3)
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)


def test_icosphere_is_cached_and_frozen() -> None:
    assert icosphere(2) is icosphere(2)
    with pytest.raises(ValueError):
        icosphere(2).vertices[0, 0] = 0.0
    with pytest.raises(ValueError):
        icosphere(-1)


def test_lumped_mass_covers_the_polyhedron() -> None:
    mesh = icosphere(3)
    mass = lumped_mass(mesh.vertices, mesh.faces)
    assert np.all(mass > 0)
    assert mass.sum() == pytest.approx(triangle_areas(mesh.vertices, mesh.faces).sum())
    assert mass.sum() == pytest.approx(4.0 * math.pi, rel=1e-2)


def test_stiffness_annihilates_constants() -> None:
    mesh = icosphere(2)
    stiffness = cotangent_stiffness(mesh.vertices, mesh.faces)
    assert np.max(np.abs(stiffness @ np.ones(mesh.n_vertices))) <= 1e-12
    assert abs(stiffness - stiffness.T).max() <= 1e-14


def test_coordinate_energy_is_twice_the_area() -> None:
    mesh = icosphere(3)
    energy = dirichlet_energy(mesh, mesh.vertices)
    area = triangle_areas(mesh.vertices, mesh.faces).sum()
    assert energy == pytest.approx(2.0 * area, rel=1e-10)
    assert energy == pytest.approx(8.0 * math.pi, rel=1e-2)
    assert dirichlet_energy(mesh, np.ones(mesh.n_vertices)) == pytest.approx(0.0, abs=1e-10)


def test_spectrum_matches_round_sphere() -> None:
    eigenvalues = laplace_beltrami_spectrum(3, count=9)
    assert eigenvalues[0] == pytest.approx(0.0, abs=1e-8)
    assert eigenvalues[1:4] == pytest.approx([2.0] * 3, rel=5e-2)
    assert eigenvalues[4:9] == pytest.approx([6.0] * 5, rel=5e-2)


def test_spectrum_scales_with_radius_and_potential() -> None:
    unit = laplace_beltrami_spectrum(2, count=4)
    scaled = laplace_beltrami_spectrum(2, radius=2.0, potential=1.0, count=4)
    assert scaled == pytest.approx(unit / 4.0 - 1.0, abs=1e-10)
