"""Icosphere meshes with cotangent stiffness and lumped mass matrices."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix, csr_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SphereMesh:
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])


def _icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = np.array(
        [
            [-1, golden, 0],
            [1, golden, 0],
            [-1, -golden, 0],
            [1, -golden, 0],
            [0, -1, golden],
            [0, 1, golden],
            [0, -1, -golden],
            [0, 1, -golden],
            [golden, 0, -1],
            [golden, 0, 1],
            [-golden, 0, -1],
            [-golden, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )  # fmt: skip
    return vertices / np.linalg.norm(vertices, axis=1, keepdims=True), faces


def _subdivide(vertices: list, faces: np.ndarray) -> np.ndarray:
    midpoints: Dict[Tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        index = midpoints.get(key)
        if index is None:
            point = vertices[a] + vertices[b]
            vertices.append(point / np.linalg.norm(point))
            index = len(vertices) - 1
            midpoints[key] = index
        return index

    refined = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(refined, dtype=np.int64)


@functools.lru_cache(maxsize=8)
def icosphere(level: int) -> SphereMesh:
    """Unit icosphere with 10 * 4**level + 2 vertices."""
    if level < 0:
        raise ValueError("icosphere level must be non-negative")
    base_vertices, faces = _icosahedron()
    vertices = list(base_vertices)
    for _ in range(level):
        faces = _subdivide(vertices, faces)
    mesh = SphereMesh(vertices=np.array(vertices), faces=faces)
    mesh.vertices.setflags(write=False)
    mesh.faces.setflags(write=False)
    logger.debug("icosphere level %d: %d vertices", level, mesh.n_vertices)
    return mesh


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def lumped_mass(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Barycentric vertex areas: one third of every incident triangle."""
    areas = triangle_areas(vertices, faces)
    mass = np.zeros(vertices.shape[0])
    for k in range(3):
        np.add.at(mass, faces[:, k], areas / 3.0)
    return mass


def cotangent_stiffness(vertices: np.ndarray, faces: np.ndarray) -> csr_matrix:
    """Stiffness matrix L with f^T L f the Dirichlet energy of the linear interpolant."""
    n = vertices.shape[0]
    rows, cols, values = [], [], []
    for k in range(3):
        i = faces[:, k]
        j = faces[:, (k + 1) % 3]
        opposite = faces[:, (k + 2) % 3]
        u = vertices[i] - vertices[opposite]
        v = vertices[j] - vertices[opposite]
        cot = np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
        weight = -0.5 * cot
        rows.extend([i, j])
        cols.extend([j, i])
        values.extend([weight, weight])
    off_diagonal = coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    diagonal = -np.asarray(off_diagonal.sum(axis=1)).ravel()
    index = np.arange(n)
    return (off_diagonal + csr_matrix((diagonal, (index, index)), shape=(n, n))).tocsr()


def dirichlet_energy(mesh: SphereMesh, values: np.ndarray) -> float:
    """Sum of the Dirichlet energies of the columns of values."""
    stiffness = cotangent_stiffness(mesh.vertices, mesh.faces)
    values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
    return float(np.einsum("ik,ik->", values, stiffness @ values))


def laplace_beltrami_spectrum(
    level: int, radius: float = 1.0, potential: float = 0.0, count: int = 16
) -> np.ndarray:
    """Lowest eigenvalues of -Lap - potential on a round sphere of the given radius.

    Dense generalized problem L f = lambda M f with lumped M; intended as an
    oracle for the closed-form spectrum, so keep the level small.
    """
    mesh = icosphere(level)
    vertices = mesh.vertices * radius
    stiffness = cotangent_stiffness(vertices, mesh.faces).toarray()
    mass = lumped_mass(vertices, mesh.faces)
    count = min(count, mesh.n_vertices)
    eigenvalues = scipy.linalg.eigh(
        stiffness, np.diag(mass), eigvals_only=True, subset_by_index=[0, count - 1]
    )
    return eigenvalues - potential
