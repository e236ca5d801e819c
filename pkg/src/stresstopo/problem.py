"""A fully specified optimization problem: mesh, material, loads and formulation."""

from __future__ import annotations

import dataclasses

import numpy as np

from .fem import ElasticMaterial, StructuredMesh
from .filtering import DensityFilter, InterpolationConstants
from .stress import VonMisesContext
from .uncertainty import Formulation, LoadMode, LoadModel, MeasureSettings, check_mode


@dataclasses.dataclass
class Problem:
    """Loads are ``F_base + sum_i z_i F_unit[i]`` with ``z`` described by ``load_model``.

    ``reference_model`` is the Gaussian description used for Monte Carlo
    post-processing; it may differ from ``load_model`` (e.g. interval bounds
    during anti-optimization).
    """

    mesh: StructuredMesh
    material: ElasticMaterial
    sigma_y: float
    filter_radius: float
    F_base: np.ndarray
    F_unit: np.ndarray
    load_model: LoadModel
    formulation: Formulation = Formulation.DETERMINISTIC
    measures: MeasureSettings = dataclasses.field(default_factory=MeasureSettings)
    constants: InterpolationConstants = dataclasses.field(default_factory=InterpolationConstants)
    reference_model: LoadModel | None = None
    name: str = ""

    def __post_init__(self):
        self.formulation = Formulation(self.formulation)
        self.F_base = np.asarray(self.F_base, dtype=float)
        self.F_unit = np.asarray(self.F_unit, dtype=float).reshape(-1, self.mesh.ndof)
        if self.F_base.shape != (self.mesh.ndof,):
            raise ValueError("base load vector does not match the mesh")
        if self.F_unit.shape[0] != self.load_model.n:
            raise ValueError("number of unit loads does not match the load model")
        check_mode(self.load_model, self.formulation)
        if self.reference_model is None and self.load_model.mode is LoadMode.GAUSSIAN:
            self.reference_model = self.load_model
        self.filter = DensityFilter(self.mesh, self.filter_radius)
        self.stress_ctx = VonMisesContext.for_mesh(
            self.mesh, self.material, self.sigma_y, self.constants.delta_sigma)
        # the deterministic measure needs only the nominal load field
        if self.formulation is Formulation.DETERMINISTIC:
            self.loads = (self.F_base + self.load_model.nominal @ self.F_unit)[None, :]
            self.analysis_model = LoadModel.deterministic(np.zeros(0))
        else:
            self.loads = np.vstack([self.F_base[None, :], self.F_unit])
            self.analysis_model = self.load_model

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def element_volume(self) -> float:
        return self.mesh.h**2 * self.material.t

    def load_vector(self, z) -> np.ndarray:
        return self.F_base + np.asarray(z, dtype=float) @ self.F_unit

    def with_formulation(self, formulation, load_model: LoadModel | None = None) -> "Problem":
        return dataclasses.replace(self, formulation=Formulation(formulation),
                                   load_model=load_model or self.load_model)
