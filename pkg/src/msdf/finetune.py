"""Gradient fine-tuning of a grid-bank representation against an SDF oracle.

Minimizes L = mean|F(x) - F*(x)| + lam * mean||grad F(x) - grad F*(x)||_2
over minibatches drawn from two pools: points sampled on the surface
(targets 0 and the face normal, free) and points near it (targets from the
oracle).  All of centers, scales, and grid values receive hand-derived
gradients; the forward pass reuses the evaluation pipeline so the optimized
quantity is exactly the deployed field.

Points that fall outside the support union carry no gradient signal and are
dropped from the batch means, as are points in the thin shell where the
total blend weight is almost zero: the normalized field's gradient scales
like 1/sum(w) there, so a single shell sample can dominate an entire batch
with noise that says nothing about the fit.  The hat-weight kinks use the
zero-side derivative, which only matters on a measure-zero set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._reduce import invariant_segment_sum
from .diffkit.optim import Adam
from .geometry.oracle import SdfOracle
from .geometry.sampling import sample_near_surface, sample_surface
from .mosaic import BallIndex, MosaicSdf, _interp_du, _trilinear

_SIGN = np.array([-1.0, 1.0])
_MIN_SCALE = 1e-3
# smallest total blend weight a point may have and still enter the loss
_W_FLOOR = 1e-2


class DivergenceError(RuntimeError):
    """Raised when an optimization loss blows past 10x its initial value."""

    def __init__(self, step: int, loss: float, initial: float,
                 history: "FineTuneHistory | None" = None):
        super().__init__(f"loss diverged at step {step}: "
                         f"{loss:.6g} vs initial {initial:.6g}")
        self.history = history


@dataclass
class FineTuneHistory:
    """Per-step loss traces filled in by fine_tune."""

    losses: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    covered_fraction: list = field(default_factory=list)

    def window_means(self, window: int = 100) -> np.ndarray:
        """Means of consecutive loss windows, for trend diagnostics."""
        x = np.asarray(self.losses)
        m = len(x) // window
        if m == 0:
            return np.array([x.mean()]) if len(x) else np.zeros(0)
        return x[: m * window].reshape(m, window).mean(axis=1)


def build_pools(oracle: SdfOracle, surface_count: int, near_count: int,
                near_variance: float, seed: int):
    """(points, target_sdf, target_grad) from surface + near-surface sampling."""
    surf = sample_surface(oracle.mesh, surface_count, seed)
    near = sample_near_surface(oracle.mesh, near_count, near_variance, seed + 1)
    near_f, near_g = oracle.query(near)
    points = np.concatenate([surf.points, near])
    target_f = np.concatenate([np.zeros(surface_count), near_f])
    target_g = np.concatenate([surf.normals, near_g])
    return points, target_f, target_g


def loss_and_grad(centers: np.ndarray, scales: np.ndarray, values: np.ndarray, k: int,
                  points: np.ndarray, target_f: np.ndarray, target_g: np.ndarray,
                  lam: float, index: BallIndex | None = None):
    """Loss and hand-derived parameter gradients for one batch (all float64).

    ``values`` is (n, k^3).  Returns (loss, l1, l2, dcenters, dscales,
    dvalues, covered_count).  Gradient accumulation uses fixed-order
    bincounts, so results are deterministic for a given representation.
    """
    n = len(centers)
    if index is None:
        index = BallIndex(centers, scales)
    pt_idx, grid_idx, starts = index.query(points)
    h = 2.0 / (k - 1)

    s = scales[grid_idx]
    u = (points[pt_idx] - centers[grid_idx]) / s[:, None]
    absu = np.abs(u)
    m_ax = absu.argmax(axis=1)
    rows = np.arange(len(u))
    sigma = np.sign(u[rows, m_ax])
    wbar = 1.0 - absu[rows, m_ax]
    v8, cw, axis_w, _ = _trilinear(values, k, grid_idx, u)
    interp = (v8 * cw).sum(axis=1)
    iu = _interp_du(v8, axis_w, k)            # dI/du, (P,3)
    grad_wbar = np.zeros_like(u)              # spatial
    grad_wbar[rows, m_ax] = -sigma / s
    grad_interp = iu / s[:, None]             # spatial

    w_sum = invariant_segment_sum(wbar, starts)
    n_sum = invariant_segment_sum(wbar * interp, starts)
    s_vec = np.stack([invariant_segment_sum(grad_wbar[:, a] * interp
                                            + wbar * grad_interp[:, a], starts)
                      for a in range(3)], axis=1)
    t_vec = np.stack([invariant_segment_sum(grad_wbar[:, a], starts)
                      for a in range(3)], axis=1)

    covered = w_sum > _W_FLOOR
    b = int(covered.sum())
    if b == 0:
        raise ValueError("no batch point lies inside the support union")
    w_safe = np.where(covered, w_sum, 1.0)
    f_val = np.where(covered, n_sum / w_safe, 0.0)
    g_val = np.where(covered[:, None], (s_vec - f_val[:, None] * t_vec) / w_safe[:, None], 0.0)

    e1 = f_val - target_f
    r = g_val - target_g
    rn = np.linalg.norm(r, axis=1)
    l1 = float(np.abs(e1[covered]).mean())
    l2 = float(rn[covered].mean())
    loss = l1 + lam * l2

    # per-point adjoints
    alpha = np.where(covered, np.sign(e1) / b, 0.0)
    safe_rn = np.where(rn > 1e-12, rn, 1.0)
    beta = np.where((covered & (rn > 1e-12))[:, None], lam * r / (safe_rn[:, None] * b), 0.0)
    phi = alpha - (beta * t_vec).sum(axis=1) / w_safe
    n_hat = phi / w_safe
    s_hat = beta / w_safe[:, None]
    t_hat = -f_val[:, None] * beta / w_safe[:, None]
    w_hat = -(phi * f_val + (beta * g_val).sum(axis=1)) / w_safe

    # per-pair adjoints
    nh = n_hat[pt_idx]
    sh = s_hat[pt_idx]
    g_wbar_hat = (nh * interp + w_hat[pt_idx]
                  + (sh * grad_interp).sum(axis=1))             # d/d wbar
    g_i_hat = nh * wbar + (sh * grad_wbar).sum(axis=1)          # d/d interp
    g_gw_hat = t_hat[pt_idx] + sh * interp[:, None]             # d/d grad_wbar
    g_gi_hat = sh * wbar[:, None]                               # d/d grad_interp

    # second derivative of the interpolation: hu[a,b] = d(iu_a)/du_b (diag 0)
    wx, wy, wz = axis_w
    c = np.arange(8)
    sx, sy, sz = _SIGN[c & 1], _SIGN[(c >> 1) & 1], _SIGN[c >> 2]
    hxy = (v8 * (sx * sy) * wz[:, c >> 2]).sum(axis=1) / (h * h)
    hxz = (v8 * (sx * sz) * wy[:, (c >> 1) & 1]).sum(axis=1) / (h * h)
    hyz = (v8 * (sy * sz) * wx[:, c & 1]).sum(axis=1) / (h * h)
    zero = np.zeros_like(hxy)
    hu = np.stack([np.stack([zero, hxy, hxz], axis=1),
                   np.stack([hxy, zero, hyz], axis=1),
                   np.stack([hxz, hyz, zero], axis=1)], axis=1)  # (P,3,3)

    # parameter gradients per pair
    dp = -g_i_hat[:, None] * iu / s[:, None]
    dp[rows, m_ax] += g_wbar_hat * sigma / s
    dp -= np.einsum("pa,pab->pb", g_gi_hat, hu) / (s * s)[:, None]

    ds = g_wbar_hat * absu[rows, m_ax] / s
    ds -= g_i_hat * (iu * u).sum(axis=1) / s
    ds += g_gw_hat[rows, m_ax] * sigma / (s * s)
    ds -= (g_gi_hat * (np.einsum("pab,pb->pa", hu, u) + iu)).sum(axis=1) / (s * s)

    # grid value gradients: dI/dv_c = cw_c, d(grad_interp_a)/dv_c = cwd_[a,c]/s
    cwd_x = sx * wy[:, (c >> 1) & 1] * wz[:, c >> 2] / h
    cwd_y = wx[:, c & 1] * sy * wz[:, c >> 2] / h
    cwd_z = wx[:, c & 1] * wy[:, (c >> 1) & 1] * sz / h
    dv_pair = (g_i_hat[:, None] * cw
               + (g_gi_hat[:, 0:1] * cwd_x + g_gi_hat[:, 1:2] * cwd_y
                  + g_gi_hat[:, 2:3] * cwd_z) / s[:, None])     # (P,8)

    pos = (u + 1.0) / h
    j = np.clip(np.floor(pos), 0, k - 2).astype(np.int64)
    base = (j[:, 2] * k + j[:, 1]) * k + j[:, 0]
    corner_off = np.array([(dz_ * k + dy_) * k + dx_
                           for cc in range(8)
                           for dx_, dy_, dz_ in [(cc & 1, (cc >> 1) & 1, cc >> 2)]])
    flat = grid_idx[:, None] * (k ** 3) + base[:, None] + corner_off[None, :]

    size = n * k ** 3
    dvalues = np.bincount(flat.ravel(), weights=dv_pair.ravel(), minlength=size).reshape(n, -1)
    dcenters = np.stack([np.bincount(grid_idx, weights=dp[:, a], minlength=n)
                         for a in range(3)], axis=1)
    dscales = np.bincount(grid_idx, weights=ds, minlength=n)
    return loss, l1, l2, dcenters, dscales, dvalues, b


def fine_tune(x: MosaicSdf, oracle: SdfOracle, steps: int = 1000, lam: float = 0.1, *,
              batch: int = 16384, lr: float = 1e-4, seed: int = 0,
              surface_count: int = 300_000, near_count: int = 200_000,
              near_variance: float = 0.01, freeze_geometry: bool = False,
              history: FineTuneHistory | None = None,
              log_every: int = 0) -> MosaicSdf:
    """Adam fine-tuning of all of (centers, scales, values); returns a new bank.

    ``freeze_geometry`` optimizes grid values only.  Aborts with
    DivergenceError when the loss exceeds 10x its initial value.
    """
    if steps < 1:
        raise ValueError(f"need steps >= 1, got {steps}")
    pool_pts, pool_f, pool_g = build_pools(oracle, surface_count, near_count,
                                           near_variance, seed)
    params = {"centers": x.centers.astype(np.float64),
              "scales": x.scales.astype(np.float64),
              "values": x.values.astype(np.float64).reshape(x.n, -1)}
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5DEECE66D]))
    hist = history if history is not None else FineTuneHistory()
    initial = None
    for step in range(steps):
        pick = rng.integers(0, len(pool_pts), min(batch, len(pool_pts)))
        loss, l1, l2, dc, dsc, dv, covered = loss_and_grad(
            params["centers"], params["scales"], params["values"], x.k,
            pool_pts[pick], pool_f[pick], pool_g[pick], lam)
        hist.losses.append(loss)
        hist.l1.append(l1)
        hist.l2.append(l2)
        hist.covered_fraction.append(covered / len(pick))
        if initial is None:
            initial = loss
        if not np.isfinite(loss) or loss > 10.0 * initial:
            raise DivergenceError(step, loss, initial, hist)
        grads = {"values": dv} if freeze_geometry else \
            {"centers": dc, "scales": dsc, "values": dv}
        opt.step(grads)
        np.maximum(params["scales"], _MIN_SCALE, out=params["scales"])
        if log_every and (step + 1) % log_every == 0:
            print(f"  step {step + 1}/{steps}  loss {loss:.5f}  "
                  f"l1 {l1:.5f}  l2 {l2:.5f}")
    return MosaicSdf(params["centers"], params["scales"],
                     params["values"].reshape(x.n, x.k, x.k, x.k))
