"""Benchmark geometries: the 2 m x 1 m rectangle and the 1 m L-bracket.

Rectangle: top edge clamped, horizontal and vertical loads spread over 0.2 m
at the middle of the bottom edge. L-bracket: the upper-right 0.6 m x 0.6 m
square is removed, the top edge of the vertical arm is clamped and the loads
are spread over the upper 0.06 m of the free right edge.
"""

from __future__ import annotations

import numpy as np

from .fem import ElasticMaterial, StructuredMesh
from .problem import Problem
from .uncertainty import Formulation, LoadModel, MeasureSettings

RECT_WIDTH, RECT_HEIGHT = 2.0, 1.0
RECT_LOAD_LENGTH = 0.2
LSHAPE_SIZE, LSHAPE_ARM = 1.0, 0.4
LSHAPE_LOAD_LENGTH = 0.06


def rectangle_mesh(nx: int, ny: int) -> StructuredMesh:
    if nx * RECT_HEIGHT != ny * RECT_WIDTH:
        raise ValueError("rectangle mesh needs nx = 2 ny for square elements")
    h = RECT_WIDTH / nx
    mesh = StructuredMesh(nx, ny, h)
    mesh.fix_segment((0.0, RECT_HEIGHT), (RECT_WIDTH, RECT_HEIGHT))
    x0, x1 = 0.5 * (RECT_WIDTH - RECT_LOAD_LENGTH), 0.5 * (RECT_WIDTH + RECT_LOAD_LENGTH)
    mesh.add_load_region((x0, 0.0), (x1, 0.0), (1.0, 0.0), "f_H")
    mesh.add_load_region((x0, 0.0), (x1, 0.0), (0.0, -1.0), "f_V")
    return mesh


def lshape_mesh(n: int) -> StructuredMesh:
    arm = int(round(n * LSHAPE_ARM / LSHAPE_SIZE))
    if not np.isclose(arm * LSHAPE_SIZE / n, LSHAPE_ARM):
        raise ValueError("L-bracket mesh needs the arm width to be a whole number of elements")
    h = LSHAPE_SIZE / n
    active = np.ones((n, n), dtype=bool)
    active[arm:, arm:] = False
    mesh = StructuredMesh(n, n, h, active)
    mesh.fix_segment((0.0, LSHAPE_SIZE), (LSHAPE_ARM, LSHAPE_SIZE))
    y0, y1 = LSHAPE_ARM - LSHAPE_LOAD_LENGTH, LSHAPE_ARM
    mesh.add_load_region((LSHAPE_SIZE, y0), (LSHAPE_SIZE, y1), (1.0, 0.0), "f_H")
    mesh.add_load_region((LSHAPE_SIZE, y0), (LSHAPE_SIZE, y1), (0.0, -1.0), "f_V")
    return mesh


def rectangle_problem(formulation="det", nx: int = 160, ny: int = 80, *, sigma_y: float = 1e5,
                      radius: float = 0.04, mean=(2.0, 10.0), std=(2.0, 2.0),
                      lower=(-2.0, 6.0), upper=(6.0, 14.0), measures: MeasureSettings | None = None,
                      material: ElasticMaterial | None = None) -> Problem:
    """Two uncertain magnitudes ``z = (f_H, f_V)`` in newtons."""
    mesh = rectangle_mesh(nx, ny)
    F_unit = np.stack([mesh.unit_load_vector(r) for r in mesh.load_regions])
    gaussian = LoadModel.gaussian(mean, std=std)
    formulation = Formulation(formulation)
    model = LoadModel.interval(lower, upper) if formulation is Formulation.ANTIOPT else gaussian
    if formulation is Formulation.DETERMINISTIC:
        model = LoadModel.deterministic(mean)
    return Problem(mesh, material or ElasticMaterial(), sigma_y, radius, np.zeros(mesh.ndof), F_unit,
                   model, formulation, measures or MeasureSettings(), reference_model=gaussian,
                   name=f"rect-{formulation.value}")


def lshape_problem(formulation="det", n: int = 150, *, sigma_y: float = 1.6e4, radius: float = 0.02,
                   f_v: float = 0.3, mean: float = 0.0, std: float = 0.015,
                   lower: float = -0.03, upper: float = 0.03, measures: MeasureSettings | None = None,
                   material: ElasticMaterial | None = None) -> Problem:
    """Deterministic vertical load ``f_v``; one uncertain horizontal magnitude ``z = (f_H,)``."""
    mesh = lshape_mesh(n)
    F_h = mesh.unit_load_vector(mesh.load_regions[0])
    F_base = f_v * mesh.unit_load_vector(mesh.load_regions[1])
    gaussian = LoadModel.gaussian([mean], std=[std])
    formulation = Formulation(formulation)
    model = LoadModel.interval([lower], [upper]) if formulation is Formulation.ANTIOPT else gaussian
    if formulation is Formulation.DETERMINISTIC:
        model = LoadModel.deterministic([mean])
    return Problem(mesh, material or ElasticMaterial(), sigma_y, radius, F_base, F_h[None, :],
                   model, formulation, measures or MeasureSettings(), reference_model=gaussian,
                   name=f"lshape-{formulation.value}")
