"""Monte Carlo reliability maps of a finished design and raster/CSV exports."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path

import numpy as np
from scipy import special

from .fem import Factorization, assemble_stiffness
from .filtering import f_sigma
from .problem import Problem
from .stress import StressBasis, quad_form, raw_stresses
from .uncertainty import ConfigurationError, LoadMode, LoadModel

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def inv_std_normal(p):
    """Inverse standard normal CDF, polished by one Newton step on ``ndtr``.

    Raises ``ValueError`` outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    x = special.ndtri(arr)
    # Newton on Phi(x) - p; the lower tail uses the complement for accuracy
    upper = x > 0
    resid = np.where(upper, -(special.ndtr(-x) - (1.0 - arr)), special.ndtr(x) - arr)
    x = x - resid * _SQRT_2PI * np.exp(0.5 * x * x)
    return float(x) if np.ndim(x) == 0 else x


@dataclasses.dataclass(frozen=True)
class MCSettings:
    n_samples: int = 1_000_000
    seed: int = 0
    beta_cap: float | None = None  # default -inv_std_normal(1 / n_samples)
    batch_size: int | None = None

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"number of samples must be a positive integer, got {self.n_samples}")
        if self.beta_cap is not None and not self.beta_cap > 0:
            raise ValueError("reliability index cap must be positive")

    @property
    def cap(self) -> float:
        if self.beta_cap is not None:
            return float(self.beta_cap)
        if self.n_samples == 1:
            return 0.0
        return -inv_std_normal(1.0 / self.n_samples)


@dataclasses.dataclass
class ReliabilityMap:
    failures: np.ndarray  # per-element failure counts
    pf: np.ndarray
    beta: np.ndarray
    beta_cap: float
    n_samples: int
    seed: int

    @property
    def beta_min(self) -> float:
        return float(self.beta.min())

    @property
    def pf_max(self) -> float:
        return float(self.pf.max())

    @property
    def worst_element(self) -> int:
        return int(np.argmax(self.failures))


def beta_from_pf(pf: np.ndarray, cap: float) -> np.ndarray:
    """``-inv_std_normal(pf)`` clipped to ``[-cap, cap]``; ``pf = 0`` maps to ``cap``."""
    pf = np.asarray(pf, dtype=float)
    out = np.full(pf.shape, cap)
    inner = (pf > 0) & (pf < 1)
    if inner.any():
        out[inner] = -inv_std_normal(pf[inner])
    out[pf >= 1] = -cap
    return np.clip(out, -cap, cap)


def _quadratic_coefficients(basis: StressBasis) -> np.ndarray:
    """Coefficients of ``s(z)^T M s(z)`` over the monomials ``[1, z_i, z_i z_j (i <= j)]``."""
    s0, su = basis.base, basis.units
    n = basis.n_uncertain
    cols = [quad_form(s0)]
    cols += [2.0 * quad_form(s0, su[i]) for i in range(n)]
    for i in range(n):
        for j in range(i, n):
            cols.append((1.0 if i == j else 2.0) * quad_form(su[i], su[j]))
    return np.stack(cols, axis=1)


def _monomials(z: np.ndarray) -> np.ndarray:
    n = z.shape[1]
    cols = [np.ones(len(z))] + [z[:, i] for i in range(n)]
    for i in range(n):
        for j in range(i, n):
            cols.append(z[:, i] * z[:, j])
    return np.stack(cols, axis=1)


def monte_carlo_map(basis: StressBasis, sigma_y: float, model: LoadModel, mc: MCSettings) -> ReliabilityMap:
    """Per-element failure probabilities from sampled Gaussian loads.

    Element ``k`` fails in a sample when its von Mises measure reaches the
    yield stress (equality counts as failure). Each sample costs one row of a
    dense product between load monomials and per-element quadratic
    coefficients; no finite-element solve is needed.
    """
    if model.mode is LoadMode.INTERVAL:
        raise ConfigurationError("Monte Carlo post-processing needs a Gaussian load model")
    if model.n != basis.n_uncertain:
        raise ConfigurationError("load model and stress basis disagree on the number of uncertain loads")
    coef = _quadratic_coefficients(basis)
    threshold = sigma_y**2 - basis.sigma_min**2
    ne = coef.shape[0]
    rng = np.random.default_rng(mc.seed)
    n = model.n
    if n:
        L = model.transform_factor()
    batch = mc.batch_size or max(1, min(mc.n_samples, 4_000_000 // max(ne, 1)))
    failures = np.zeros(ne, dtype=np.int64)
    done = 0
    while done < mc.n_samples:
        b = min(batch, mc.n_samples - done)
        if n:
            z = model.mean + rng.standard_normal((b, n)) @ L.T
        else:
            z = np.zeros((b, 0))
        q = _monomials(z) @ coef.T
        failures += np.count_nonzero(q >= threshold, axis=0)
        done += b
    pf = failures / mc.n_samples
    cap = mc.cap
    return ReliabilityMap(failures, pf, beta_from_pf(pf, cap), cap, mc.n_samples, mc.seed)


def design_stress_basis(problem: Problem, rho_bar: np.ndarray) -> StressBasis:
    """Relaxed stress basis of a fixed design for the base load and every unit load.

    Unlike the optimization analysis, the deterministic formulation is not
    collapsed to its nominal load, so any design can be sampled against the
    problem's reference Gaussian model.
    """
    c = problem.constants
    K = assemble_stiffness(problem.mesh, problem.material, rho_bar, c.penal, c.rho_min)
    U = Factorization(problem.mesh, K).solve(np.vstack([problem.F_base[None, :], problem.F_unit]))
    raw = raw_stresses(problem.mesh, problem.stress_ctx, U)
    return StressBasis(raw, f_sigma(rho_bar, c.delta_sigma), problem.stress_ctx.sigma_min)


def reliability_of_design(problem: Problem, rho_bar: np.ndarray, mc: MCSettings,
                          model: LoadModel | None = None) -> ReliabilityMap:
    model = model or problem.reference_model
    if model is None:
        raise ConfigurationError("problem has no Gaussian reference model for Monte Carlo sampling")
    return monte_carlo_map(design_stress_basis(problem, rho_bar), problem.sigma_y, model, mc)


# rasters ------------------------------------------------------------------

_RAMP = np.array([[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], dtype=float)


def colormap(t: np.ndarray) -> np.ndarray:
    """Blue (0) through cyan, green, yellow to red (1); input clipped to [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0) * (len(_RAMP) - 1)
    i = np.minimum(t.astype(int), len(_RAMP) - 2)
    w = (t - i)[..., None]
    return np.rint((1 - w) * _RAMP[i] + w * _RAMP[i + 1]).astype(np.uint8)


def _raster(mesh, values: np.ndarray, fill) -> np.ndarray:
    """Element values on the (ny, nx) grid, top row first; inactive cells get ``fill``."""
    shape = (mesh.ny, mesh.nx) + np.shape(fill)
    img = np.empty(shape, dtype=np.asarray(values).dtype)
    img[...] = fill
    ij = mesh.cell_ij
    img[ij[:, 1], ij[:, 0]] = values
    return img[::-1]


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by this module."""
    data = Path(path).read_bytes()
    magic, size, _, body = data.split(b"\n", 3)
    w, h = map(int, size.split())
    channels = {b"P5": 1, b"P6": 3}[magic]
    arr = np.frombuffer(body, dtype=np.uint8, count=w * h * channels)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3))


def density_image(mesh, rho_bar) -> np.ndarray:
    gray = np.rint(255 * (1 - np.clip(rho_bar, 0, 1))).astype(np.uint8)
    return _raster(mesh, gray, np.uint8(255))


def stress_image(mesh, ratios) -> np.ndarray:
    return _raster(mesh, colormap(ratios), np.array([255, 255, 255], dtype=np.uint8))


def beta_image(mesh, beta, beta_cap: float) -> np.ndarray:
    """Red at the smallest index, blue at the cap."""
    beta = np.asarray(beta, dtype=float)
    lo = beta.min()
    span = beta_cap - lo
    t = np.zeros_like(beta) if span <= 0 else (beta - lo) / span
    return _raster(mesh, colormap(1 - t), np.array([255, 255, 255], dtype=np.uint8))


FIELD_COLUMNS = ("element_id", "rho_bar", "sigma_ratio", "P_f", "beta")


def write_fields_csv(path, rho_bar, sigma_ratio, pf=None, beta=None) -> None:
    """Per-element fields; floats are written with ``repr`` so re-reading is exact."""
    n = len(rho_bar)
    nan = np.full(n, np.nan)
    pf = nan if pf is None else pf
    beta = nan if beta is None else beta
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(FIELD_COLUMNS)
        for k in range(n):
            w.writerow([k, repr(float(rho_bar[k])), repr(float(sigma_ratio[k])),
                        repr(float(pf[k])), repr(float(beta[k]))])


def read_fields_csv(path) -> dict:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    if tuple(header) != FIELD_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    cols = list(zip(*body)) if body else [()] * len(header)
    out = {"element_id": np.array(cols[0], dtype=np.int64)}
    for name, col in zip(header[1:], cols[1:]):
        out[name] = np.array([float(v) for v in col])
    return out


@dataclasses.dataclass
class ExportPaths:
    directory: Path
    density: str = "density.pgm"
    stress: str = "stress.ppm"
    beta: str = "beta.ppm"
    fields: str = "fields.csv"

    def __post_init__(self):
        self.directory = Path(self.directory)

    def __getitem__(self, name: str) -> Path:
        return self.directory / getattr(self, name)


def export_fields(mesh, rho_bar, sigma_ratio, rmap: ReliabilityMap | None, paths: ExportPaths) -> list[Path]:
    """Write density/stress/beta rasters (one pixel per element) and the field CSV."""
    written = []
    try:
        paths.directory.mkdir(parents=True, exist_ok=True)
        write_pgm(paths["density"], density_image(mesh, rho_bar))
        written.append(paths["density"])
        write_ppm(paths["stress"], stress_image(mesh, sigma_ratio))
        written.append(paths["stress"])
        if rmap is not None:
            write_ppm(paths["beta"], beta_image(mesh, rmap.beta, rmap.beta_cap))
            written.append(paths["beta"])
        write_fields_csv(paths["fields"], rho_bar, sigma_ratio,
                         None if rmap is None else rmap.pf, None if rmap is None else rmap.beta)
        written.append(paths["fields"])
    except OSError as exc:
        raise OSError(f"cannot write outputs under {paths.directory}: {exc}") from exc
    return written
