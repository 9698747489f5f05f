"""Photometric stereo with sparse outliers on a synthetic Lambertian sphere.

Observations follow ``o = rho L n + e`` with sparse ``e``. Projecting onto the
left null space of ``L`` removes the surface term, leaving a noiseless sparse
coding problem ``L_perp o = L_perp e``; once ``e`` is estimated the normal is
recovered by least squares on ``o - e`` and unit-normalized (which absorbs the
albedo).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .container import write_container
from .datagen import SparsityLaw
from .trace import fmt

IRLS_ITERS = 20
IRLS_FLOOR = 1e-6
DEGENERATE_TOL = 1e-12


class StereoError(ValueError):
    pass


@dataclass(eq=False)
class StereoScene:
    light_dirs: np.ndarray  # (q, 3) unit rows
    normals: np.ndarray  # (pixels, 3) unit rows
    albedo: np.ndarray  # (pixels,)
    outlier_law: SparsityLaw
    mask: np.ndarray = field(repr=False)  # (res, res) bool, pixels in row-major order

    def __post_init__(self):
        q = self.light_dirs.shape[0]
        if q < 4:
            raise StereoError(f"need at least 4 lights, got {q}")
        if not np.allclose(np.linalg.norm(self.light_dirs, axis=1), 1.0, atol=1e-12):
            raise StereoError("light directions must be unit vectors")
        if not np.allclose(np.linalg.norm(self.normals, axis=1), 1.0, atol=1e-12):
            raise StereoError("normals must be unit vectors")
        if np.any(self.albedo <= 0):
            raise StereoError("albedo must be positive")

    @property
    def q(self):
        return self.light_dirs.shape[0]

    @property
    def pixels(self):
        return self.normals.shape[0]


@dataclass(eq=False)
class Rendered:
    obs: np.ndarray  # (pixels, q)
    clean: np.ndarray
    outliers: np.ndarray


def hemisphere_lights(q, seed=0):
    """``q`` unit directions uniform on the upper (z > 0) hemisphere."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((q, 3))
    v[:, 2] = np.abs(v[:, 2])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_scene(q=15, resolution=64, outlier_law=SparsityLaw.fixed(0.8), seed=0):
    """Visible hemisphere of a unit sphere rasterized on a ``resolution^2`` grid."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    coords = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    yy, xx = np.meshgrid(-coords, coords, indexing="ij")
    r2 = xx**2 + yy**2
    mask = r2 < 1.0
    normals = np.stack([xx[mask], yy[mask], np.sqrt(1.0 - r2[mask])], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    albedo = rng.uniform(0.5, 1.0, size=normals.shape[0])
    lights = hemisphere_lights(q, seed=np.random.SeedSequence([seed, 2]))
    return StereoScene(lights, normals, albedo, outlier_law, mask)


def signal_rms(scene):
    clean = scene.albedo[:, None] * (scene.normals @ scene.light_dirs.T)
    return float(np.sqrt(np.mean(clean * clean)))


def outlier_codes(count, q, law, scale, seed):
    """Sparse outlier vectors: entries nonzero w.p. ``1 - p_b``, Gaussian with std ``scale``."""
    rng = np.random.default_rng(seed)
    p = law.sample_pb(rng, count)
    keep = rng.random((count, q)) >= p[:, None]
    return np.where(keep, rng.standard_normal((count, q)) * scale, 0.0)


def render(scene, seed=0, law=None):
    """``o = rho L n + e`` per pixel; ``law`` overrides the scene's outlier law."""
    law = scene.outlier_law if law is None else law
    clean = scene.albedo[:, None] * (scene.normals @ scene.light_dirs.T)
    e = outlier_codes(scene.pixels, scene.q, law, signal_rms(scene), seed)
    return Rendered(clean + e, clean, e)


def null_projector(light_dirs, tol=1e-10):
    """Orthonormal basis ``(q - 3, q)`` of the left null space of ``L``.

    Each row's largest-magnitude entry is made positive so the basis is
    reproducible.
    """
    light_dirs = np.asarray(light_dirs, dtype=np.float64)
    u, s, _ = np.linalg.svd(light_dirs, full_matrices=True)
    if s.size < 3 or s[2] <= tol * s[0]:
        raise StereoError(f"light matrix must have rank 3 (singular values {s})")
    perp = u[:, 3:].T.copy()
    lead = np.argmax(np.abs(perp), axis=1)
    perp *= np.sign(perp[np.arange(perp.shape[0]), lead])[:, None]
    return perp


def angular_error_deg(est, truth):
    # atan2 keeps precision near zero angle, where arccos loses half the digits
    cross = np.linalg.norm(np.cross(est, truth), axis=1)
    return np.degrees(np.arctan2(cross, np.sum(est * truth, axis=1)))


@dataclass(eq=False)
class NormalEstimate:
    normals: np.ndarray
    errors_deg: np.ndarray  # NaN where degenerate
    degenerate: np.ndarray
    flagged: np.ndarray | None = None

    @property
    def mean_error(self):
        ok = ~self.degenerate
        return float(np.mean(self.errors_deg[ok])) if ok.any() else float("nan")

    @property
    def degenerate_count(self):
        return int(self.degenerate.sum())


def _fit_normals(target, light_dirs, truth):
    """Least-squares normals for each row of ``target`` (o - e), unit-normalized."""
    sol = np.linalg.lstsq(light_dirs, target.T, rcond=None)[0].T
    norms = np.linalg.norm(sol, axis=1)
    degenerate = (np.linalg.norm(target, axis=1) <= DEGENERATE_TOL) | (norms <= DEGENERATE_TOL)
    normals = np.where(degenerate[:, None], 0.0, sol / np.where(norms > 0, norms, 1.0)[:, None])
    err = np.full(target.shape[0], np.nan)
    err[~degenerate] = angular_error_deg(normals[~degenerate], truth[~degenerate])
    return normals, err, degenerate


def estimate_normals(obs, l_perp, sparse_solver, light_dirs, truth):
    """Estimate outliers with ``sparse_solver`` on ``y = L_perp o``, then fit normals.

    ``sparse_solver`` maps a ``(pixels, q - 3)`` batch of projected
    observations to ``(pixels, q)`` outlier estimates.
    """
    y = obs @ l_perp.T
    e_hat = np.asarray(sparse_solver(y))
    normals, err, degenerate = _fit_normals(obs - e_hat, light_dirs, truth)
    return NormalEstimate(normals, err, degenerate)


def baselines(obs, light_dirs, truth):
    """Least-squares (``l_s``) and IRLS least-1-norm (``l_1``) normal estimates.

    IRLS runs 20 reweighted solves with weights ``1 / max(|r|, 1e-6)`` and keeps
    each pixel's best iterate by l1 residual. ``flagged`` marks pixels whose
    last iterate was not the best one.
    """
    ls_normals, ls_err, ls_deg = _fit_normals(obs, light_dirs, truth)
    ls = NormalEstimate(ls_normals, ls_err, ls_deg)

    sol = np.linalg.lstsq(light_dirs, obs.T, rcond=None)[0].T
    best = sol.copy()
    best_obj = np.sum(np.abs(obs - sol @ light_dirs.T), axis=1)
    last_is_best = np.ones(obs.shape[0], dtype=bool)
    for _ in range(IRLS_ITERS):
        resid = obs - sol @ light_dirs.T
        w = 1.0 / np.maximum(np.abs(resid), IRLS_FLOOR)
        lhs = np.einsum("pq,qi,qj->pij", w, light_dirs, light_dirs)
        rhs = np.einsum("pq,qi,pq->pi", w, light_dirs, obs)
        sol = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        obj = np.sum(np.abs(obs - sol @ light_dirs.T), axis=1)
        better = obj < best_obj
        best[better] = sol[better]
        best_obj = np.minimum(obj, best_obj)
        last_is_best = better | (obj == best_obj)
    norms = np.linalg.norm(best, axis=1)
    degenerate = (np.linalg.norm(obs, axis=1) <= DEGENERATE_TOL) | (norms <= DEGENERATE_TOL)
    normals = np.where(degenerate[:, None], 0.0, best / np.where(norms > 0, norms, 1.0)[:, None])
    err = np.full(obs.shape[0], np.nan)
    err[~degenerate] = angular_error_deg(normals[~degenerate], truth[~degenerate])
    l1 = NormalEstimate(normals, err, degenerate, flagged=~last_is_best)
    return ls, l1


def write_error_map(path, scene, errors_deg):
    """Per-pixel angular error on the full grid; background cells are blank."""
    grid = np.full(scene.mask.shape, np.nan)
    grid[scene.mask] = errors_deg
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow(["" if np.isnan(v) else fmt(v) for v in row])


def save_scene(path, scene, rendered=None):
    tensors = {
        "light_dirs": scene.light_dirs,
        "normals": scene.normals,
        "albedo": scene.albedo,
        "mask": scene.mask.astype(np.float64),
    }
    if rendered is not None:
        tensors["obs"] = rendered.obs
        tensors["outliers"] = rendered.outliers
    write_container(path, tensors, {"outlier_law": scene.outlier_law.to_dict()})
