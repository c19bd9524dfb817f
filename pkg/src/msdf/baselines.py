"""Fixed-budget competitor representations: dense SDF grid and triplane.

Both share the grid-bank evaluation interface (batched points to scalar
field values) so extraction and metrics code is representation-agnostic.
Budgets count stored parameters exactly; resolutions round down so a
budget is never exceeded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .extraction import chamfer_to_mesh, marching_cubes
from .finetune import DivergenceError, build_pools
from .geometry.mesh import TriangleMesh
from .geometry.oracle import SdfOracle
from .diffkit.optim import Adam
from .mosaic import MosaicSdf, initialize
from . import finetune

TRIPLANE_CHANNELS = 32
_CHUNK = 1 << 18


def _pair_weights(coord: np.ndarray, res: int):
    """Cell index and fractional weight of a 1-D coordinate on [-1, 1]."""
    u = (np.asarray(coord, np.float64) + 1.0) * 0.5 * (res - 1)
    cell = np.clip(np.floor(u), 0, res - 2).astype(np.int64)
    return cell, u - cell


@dataclass
class DenseGrid:
    """R x R x R SDF samples over [-1,1]^3 with trilinear evaluation."""

    values: np.ndarray  # (R, R, R) float32, indexed [ix, iy, iz]

    def __post_init__(self):
        v = np.asarray(self.values, np.float32)
        if v.ndim != 3 or len(set(v.shape)) != 1 or v.shape[0] < 2:
            raise ValueError(f"values must be (R, R, R) with R >= 2, got {v.shape}")
        self.values = v

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def param_count(self) -> int:
        return self.resolution ** 3

    def eval(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, np.float64)
        r = self.resolution
        ix, tx = _pair_weights(pts[:, 0], r)
        iy, ty = _pair_weights(pts[:, 1], r)
        iz, tz = _pair_weights(pts[:, 2], r)
        v = self.values.astype(np.float64, copy=False)
        out = np.zeros(len(pts))
        for dx in (0, 1):
            wx = tx if dx else 1.0 - tx
            for dy in (0, 1):
                wy = ty if dy else 1.0 - ty
                for dz in (0, 1):
                    wz = tz if dz else 1.0 - tz
                    out += wx * wy * wz * v[ix + dx, iy + dy, iz + dz]
        return out


def fit_dense_grid(oracle: SdfOracle, budget: int) -> DenseGrid:
    """Sample the oracle SDF on the largest node lattice within ``budget``."""
    if budget < 8:
        raise ValueError(f"budget must be at least 8, got {budget}")
    r = int(round(budget ** (1.0 / 3.0)))
    while r ** 3 > budget:
        r -= 1
    while (r + 1) ** 3 <= budget:
        r += 1
    axis = np.linspace(-1.0, 1.0, r)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    vals = np.empty(len(nodes), np.float32)
    for lo in range(0, len(nodes), _CHUNK):
        vals[lo:lo + _CHUNK] = oracle.signed_distance(nodes[lo:lo + _CHUNK])
    return DenseGrid(vals.reshape(r, r, r))


# Plane i projects onto the coordinate pair _PLANE_AXES[i].
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


@dataclass
class TriplaneLinear:
    """Three R x R feature planes with a linear decoder over summed features."""

    planes: np.ndarray  # (3, R, R, C) float32
    decoder_w: np.ndarray  # (C,) float32
    decoder_b: float

    def __post_init__(self):
        p = np.asarray(self.planes, np.float32)
        if p.ndim != 4 or p.shape[0] != 3 or p.shape[1] != p.shape[2] or p.shape[1] < 2:
            raise ValueError(f"planes must be (3, R, R, C), got {p.shape}")
        self.planes = p
        self.decoder_w = np.asarray(self.decoder_w, np.float32)
        if self.decoder_w.shape != (p.shape[3],):
            raise ValueError("decoder width does not match plane channels")
        self.decoder_b = float(self.decoder_b)

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def param_count(self) -> int:
        r, c = self.resolution, self.channels
        return 3 * r * r * c + c + 1

    def eval(self, points: np.ndarray) -> np.ndarray:
        feats = _plane_features(self.planes.astype(np.float64, copy=False),
                                np.asarray(points, np.float64))[0]
        return feats @ self.decoder_w.astype(np.float64) + self.decoder_b


def _plane_features(planes: np.ndarray, pts: np.ndarray):
    """Summed bilinear plane features and the lookup footprint.

    Returns (features (P, C), per-plane corner indices and weights) so the
    training step can scatter gradients back onto the same footprint.
    """
    res = planes.shape[1]
    feats = np.zeros((len(pts), planes.shape[3]))
    lookups = []
    for plane, (a, b) in zip(planes, _PLANE_AXES):
        ia, ta = _pair_weights(pts[:, a], res)
        ib, tb = _pair_weights(pts[:, b], res)
        corners = []
        for da in (0, 1):
            wa = ta if da else 1.0 - ta
            for db in (0, 1):
                w = wa * (tb if db else 1.0 - tb)
                flat = (ia + da) * res + (ib + db)
                feats += w[:, None] * plane.reshape(-1, planes.shape[3])[flat]
                corners.append((flat, w))
        lookups.append(corners)
    return feats, lookups


def triplane_loss_and_grad(planes: np.ndarray, w: np.ndarray, b: float,
                           points: np.ndarray, target_f: np.ndarray):
    """Mean absolute value error and its gradients for one batch.

    All inputs float64; gradients match the parameter shapes.  Scatter
    accumulation uses np.add.at, so results do not depend on how duplicate
    plane cells interleave within the batch.
    """
    feats, lookups = _plane_features(planes, points)
    f = feats @ w + b
    err = f - target_f
    loss = float(np.mean(np.abs(err)))
    alpha = np.sign(err) / len(points)
    grad_w = feats.T @ alpha
    grad_b = float(alpha.sum())
    grad_planes = np.zeros_like(planes)
    flat = grad_planes.reshape(3, -1, planes.shape[3])
    for i, corners in enumerate(lookups):
        for idx, wgt in corners:
            np.add.at(flat[i], idx, (alpha * wgt)[:, None] * w[None, :])
    return loss, grad_planes, grad_w, grad_b


def triplane_resolution(budget: int, channels: int = TRIPLANE_CHANNELS) -> int:
    r = int(np.sqrt(max(budget - channels - 1, 0) / (3.0 * channels)))
    while 3 * r * r * channels + channels + 1 > budget:
        r -= 1
    if r < 2:
        raise ValueError(f"budget {budget} too small for a {channels}-channel triplane")
    return r


def fit_triplane(oracle: SdfOracle, budget: int, steps: int = 1000, seed: int = 0,
                 *, batch: int = 16384, lr: float = 1e-4,
                 surface_count: int = 300_000, near_count: int = 200_000,
                 near_variance: float = 0.01,
                 history: list | None = None) -> TriplaneLinear:
    """Fit plane features and decoder to the oracle SDF with Adam on the
    mean-absolute value loss, using the same surface/near sample pools as
    the grid-bank fine-tuner."""
    res = triplane_resolution(budget)
    c = TRIPLANE_CHANNELS
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7121A]))
    params = {
        "planes": rng.normal(0.0, 0.01, size=(3, res, res, c)),
        "w": rng.normal(0.0, 1.0 / np.sqrt(c), size=c),
        "b": np.zeros(()),
    }
    points, target_f, _ = build_pools(oracle, surface_count, near_count,
                                      near_variance, seed)
    points = points.astype(np.float64)
    target_f = target_f.astype(np.float64)
    opt = Adam(params, lr=lr)
    initial = None
    for step in range(steps):
        pick = rng.integers(0, len(points), size=min(batch, len(points)))
        loss, g_planes, g_w, g_b = triplane_loss_and_grad(
            params["planes"], params["w"], float(params["b"]),
            points[pick], target_f[pick])
        if history is not None:
            history.append(loss)
        if initial is None:
            initial = loss
        if not np.isfinite(loss) or loss > 10.0 * initial:
            raise DivergenceError(step, loss, initial)
        opt.step({"planes": g_planes, "w": g_w, "b": np.asarray(g_b)})
    return TriplaneLinear(params["planes"].astype(np.float32),
                          params["w"].astype(np.float32), float(params["b"]))


@dataclass
class SweepRow:
    mesh_id: str
    representation: str
    budget: int
    chamfer: float
    fit_seconds: float
    extract_seconds: float


def _mosaic_shape_for_budget(budget: int, k: int) -> int:
    n = budget // (4 + k ** 3)
    if n < 1:
        raise ValueError(f"budget {budget} too small for k={k} grids")
    return n


def budget_sweep(oracle: SdfOracle, budgets: list[int],
                 reps: tuple[str, ...] = ("msdf", "dense_grid", "triplane"), *,
                 mesh_id: str = "", k: int = 7, fine_tune_steps: int = 300,
                 triplane_steps: int = 500, grid_res: int = 128, seed: int = 0,
                 chamfer_samples: int = 30_000) -> list[SweepRow]:
    """Fit each representation at each budget and score it against the
    oracle's mesh: extraction at ``grid_res`` plus sampled Chamfer."""
    known = {"msdf", "dense_grid", "triplane"}
    bad = set(reps) - known
    if bad:
        raise ValueError(f"unknown representations {sorted(bad)}")
    rows = []
    for budget in budgets:
        for rep in reps:
            begin = time.perf_counter()
            if rep == "msdf":
                n = _mosaic_shape_for_budget(budget, k)
                bank = initialize(oracle, n, k, seed)
                fitted = finetune.fine_tune(bank, oracle, steps=fine_tune_steps,
                                            seed=seed)
            elif rep == "dense_grid":
                fitted = fit_dense_grid(oracle, budget)
            else:
                fitted = fit_triplane(oracle, budget, steps=triplane_steps,
                                      seed=seed)
            fit_seconds = time.perf_counter() - begin
            assert fitted.param_count <= budget, (rep, fitted.param_count, budget)
            extraction = marching_cubes(fitted.eval, grid_res)
            if extraction.is_empty:
                chamfer = float("nan")
            else:
                chamfer = chamfer_to_mesh(extraction.to_mesh(), oracle.mesh,
                                          samples=chamfer_samples, seed=seed)
            rows.append(SweepRow(mesh_id, rep, budget, chamfer, fit_seconds,
                                 extraction.seconds))
    return rows
