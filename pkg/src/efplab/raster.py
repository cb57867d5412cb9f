"""Soft single-channel triangle rasterizer with analytic gradients.

A triangle is ``theta = (x1, y1, x2, y2, x3, y3, c, a)``: three vertices in
normalized image coordinates, an intensity logit ``c`` and an opacity logit
``a``. Pixel ``(i, j)`` (row ``i``, column ``j``) has centre
``((j + 0.5) / W, (i + 0.5) / H)`` and value

    h_ij = sigmoid(a) * sigmoid(c) * s^2 * prod_e sigmoid(kappa * s * sd_e)

where ``sd_e`` is the signed distance to edge ``e`` (positive on the left of
the directed edge) and ``s = tanh(area / 1e-9)`` is a smoothed orientation sign.
The ``s^2`` factor sends degenerate (zero-area) triangles to zero coverage.

``render_triangle``/``render_grad`` are plain numpy and serve as the reference;
``render_batch``/``render_vjp`` are the compiled kernels used for training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .model import FeatureMap, check_ensemble

__all__ = [
    "RenderConfig",
    "render_triangle",
    "render_grad",
    "render_jacobian",
    "render_batch",
    "render_vjp",
    "image_expectation",
    "TrianglePixels",
]

AREA_EPS = 1e-9
# sigmoid(-40) ~ 4e-18: pixels this far outside an edge are skipped.
CULL = -40.0


@dataclass(frozen=True)
class RenderConfig:
    width: int = 64
    height: int = 64
    kappa: float = 50.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("image size must be at least 1x1")
        if not self.kappa > 0:
            raise ConfigError("edge sharpness must be positive")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major flattened ``(px, py)`` pixel centres."""
        i, j = np.divmod(np.arange(self.n_pixels), self.width)
        return (j + 0.5) / self.width, (i + 0.5) / self.height


_sigmoid = expit


_EDGES = ((0, 1), (1, 2), (2, 0))


def _render_parts(theta, px, py, kappa):
    theta = np.asarray(theta, dtype=float)
    v = theta[:6].reshape(3, 2)
    area = 0.5 * (
        (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    )
    s = math.tanh(area / AREA_EPS)
    sd = []
    for ia, ib in _EDGES:
        ex, ey = v[ib] - v[ia]
        length = math.sqrt(ex * ex + ey * ey + 1e-300)
        sd.append((ex * (py - v[ia, 1]) - ey * (px - v[ia, 0])) / length)
    return v, area, s, sd


def render_triangle(theta, cfg: RenderConfig) -> np.ndarray:
    """Render one triangle to a flat row-major image of ``W * H`` values in [0, 1]."""
    px, py = cfg.pixel_centers()
    _, _, s, sd = _render_parts(theta, px, py, cfg.kappa)
    cov = np.ones_like(px)
    for sde in sd:
        cov = cov * _sigmoid(cfg.kappa * s * sde)
    return _sigmoid(theta[7]) * _sigmoid(theta[6]) * s * s * cov


def render_jacobian(theta, cfg: RenderConfig) -> np.ndarray:
    """``d h_ij / d theta`` for every pixel, shape ``(W * H, 8)``."""
    theta = np.asarray(theta, dtype=float)
    kappa = cfg.kappa
    px, py = cfg.pixel_centers()
    v, area, s, sd = _render_parts(theta, px, py, kappa)
    ds_darea = (1.0 - s * s) / AREA_EPS
    darea = 0.5 * np.array(
        [
            v[1, 1] - v[2, 1], v[2, 0] - v[1, 0],
            v[2, 1] - v[0, 1], v[0, 0] - v[2, 0],
            v[0, 1] - v[1, 1], v[1, 0] - v[0, 0],
        ]
    )
    ds = ds_darea * darea  # (6,)

    sig = [_sigmoid(kappa * s * sde) for sde in sd]
    cov = sig[0] * sig[1] * sig[2]
    K = _sigmoid(theta[7]) * _sigmoid(theta[6])
    h = K * s * s * cov

    # d sd_e / d vertex coords, shape (P, 6) per edge
    dz_sum = np.zeros((px.size, 6))
    for e, (ia, ib) in enumerate(_EDGES):
        ax, ay = v[ia]
        ex, ey = v[ib] - v[ia]
        length = math.sqrt(ex * ex + ey * ey + 1e-300)
        c = sd[e] * length
        dc = np.zeros((px.size, 6))
        dc[:, 2 * ia] = v[ib, 1] - py
        dc[:, 2 * ia + 1] = px - v[ib, 0]
        dc[:, 2 * ib] = py - ay
        dc[:, 2 * ib + 1] = ax - px
        dlen = np.zeros(6)
        dlen[2 * ia], dlen[2 * ia + 1] = -ex / length, -ey / length
        dlen[2 * ib], dlen[2 * ib + 1] = ex / length, ey / length
        dsd = dc / length - np.outer(c / length**2, dlen)
        dz = kappa * (np.outer(sd[e], ds) + s * dsd)
        dz_sum += (1.0 - sig[e])[:, None] * dz

    jac = np.empty((px.size, 8))
    jac[:, :6] = (K * cov)[:, None] * (2.0 * s * ds[None, :] + s * s * dz_sum)
    jac[:, 6] = h * (1.0 - _sigmoid(theta[6]))
    jac[:, 7] = h * (1.0 - _sigmoid(theta[7]))
    return jac


def render_grad(theta, cfg: RenderConfig, pixel: tuple[int, int]) -> np.ndarray:
    """``d h_ij / d theta`` for one pixel ``(i, j)``."""
    i, j = pixel
    return render_jacobian(theta, cfg)[i * cfg.width + j]


# ---------------------------------------------------------------------------
# Compiled batch kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@numba.njit(cache=True)
def _setup(th, out):
    """Per-triangle constants: out[0:3] edge origins/dirs packed, returns (s, ds[6])."""
    x1, y1, x2, y2, x3, y3 = th[0], th[1], th[2], th[3], th[4], th[5]
    area = 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1))
    s = math.tanh(area / AREA_EPS)
    dsa = (1.0 - s * s) / AREA_EPS
    out[0] = 0.5 * dsa * (y2 - y3)
    out[1] = 0.5 * dsa * (x3 - x2)
    out[2] = 0.5 * dsa * (y3 - y1)
    out[3] = 0.5 * dsa * (x1 - x3)
    out[4] = 0.5 * dsa * (y1 - y2)
    out[5] = 0.5 * dsa * (x2 - x1)
    return s


@numba.njit(cache=True, fastmath=True)
def _render_batch(thetas, px, py, kappa, out):
    m = thetas.shape[0]
    P = px.shape[0]
    ds = np.empty(6)
    ax = np.empty(3)
    ay = np.empty(3)
    ex = np.empty(3)
    ey = np.empty(3)
    inv = np.empty(3)
    for r in range(m):
        th = thetas[r]
        s = _setup(th, ds)
        K = _sig(th[6]) * _sig(th[7]) * s * s
        for e in range(3):
            ia = e
            ib = (e + 1) % 3
            ax[e] = th[2 * ia]
            ay[e] = th[2 * ia + 1]
            ex[e] = th[2 * ib] - ax[e]
            ey[e] = th[2 * ib + 1] - ay[e]
            inv[e] = kappa * s / math.sqrt(ex[e] * ex[e] + ey[e] * ey[e] + 1e-300)
        for p in range(P):
            z0 = (ex[0] * (py[p] - ay[0]) - ey[0] * (px[p] - ax[0])) * inv[0]
            z1 = (ex[1] * (py[p] - ay[1]) - ey[1] * (px[p] - ax[1])) * inv[1]
            z2 = (ex[2] * (py[p] - ay[2]) - ey[2] * (px[p] - ax[2])) * inv[2]
            if z0 < CULL or z1 < CULL or z2 < CULL or K == 0.0:
                out[r, p] = 0.0
            else:
                out[r, p] = K * _sig(z0) * _sig(z1) * _sig(z2)


@numba.njit(cache=True, fastmath=True)
def _render_vjp(thetas, px, py, kappa, w, out):
    # Signed distances and their vertex derivatives are affine in the pixel
    # position, so per edge we only accumulate the moments
    # sum_p w_p cov_p (1 - sig_e) kappa * (1, px, py) and apply the chain rule once.
    m = thetas.shape[0]
    P = px.shape[0]
    ds = np.empty(6)
    sdc = np.empty((3, 3))  # sd_e = sdc[e,0] + sdc[e,1] px + sdc[e,2] py
    mom = np.empty((3, 3))
    dsd = np.empty(3)
    for r in range(m):
        th = thetas[r]
        s = _setup(th, ds)
        sa = _sig(th[7])
        sc = _sig(th[6])
        K = sa * sc
        for e in range(3):
            ia = e
            ib = (e + 1) % 3
            ax = th[2 * ia]
            ay = th[2 * ia + 1]
            ex = th[2 * ib] - ax
            ey = th[2 * ib + 1] - ay
            L = math.sqrt(ex * ex + ey * ey + 1e-300)
            sdc[e, 0] = (ey * ax - ex * ay) / L
            sdc[e, 1] = -ey / L
            sdc[e, 2] = ex / L
        ks = kappa * s
        a00 = ks * sdc[0, 0]; a01 = ks * sdc[0, 1]; a02 = ks * sdc[0, 2]
        a10 = ks * sdc[1, 0]; a11 = ks * sdc[1, 1]; a12 = ks * sdc[1, 2]
        a20 = ks * sdc[2, 0]; a21 = ks * sdc[2, 1]; a22 = ks * sdc[2, 2]
        A0 = 0.0
        for e in range(3):
            for j in range(3):
                mom[e, j] = 0.0
        for p in range(P):
            wp = w[p]
            if wp == 0.0:
                continue
            x = px[p]
            y = py[p]
            z0 = a00 + a01 * x + a02 * y
            z1 = a10 + a11 * x + a12 * y
            z2 = a20 + a21 * x + a22 * y
            if z0 < CULL or z1 < CULL or z2 < CULL:
                continue
            t0 = math.exp(-abs(z0))
            t1 = math.exp(-abs(z1))
            t2 = math.exp(-abs(z2))
            i0 = 1.0 / (1.0 + t0)
            i1 = 1.0 / (1.0 + t1)
            i2 = 1.0 / (1.0 + t2)
            # sigmoid and its complement from a single exp
            if z0 >= 0.0:
                g0 = i0; q0 = t0 * i0
            else:
                g0 = t0 * i0; q0 = i0
            if z1 >= 0.0:
                g1 = i1; q1 = t1 * i1
            else:
                g1 = t1 * i1; q1 = i1
            if z2 >= 0.0:
                g2 = i2; q2 = t2 * i2
            else:
                g2 = t2 * i2; q2 = i2
            wc = wp * g0 * g1 * g2
            A0 += wc
            f0 = wc * q0
            f1 = wc * q1
            f2 = wc * q2
            mom[0, 0] += f0; mom[0, 1] += f0 * x; mom[0, 2] += f0 * y
            mom[1, 0] += f1; mom[1, 1] += f1 * x; mom[1, 2] += f1 * y
            mom[2, 0] += f2; mom[2, 1] += f2 * x; mom[2, 2] += f2 * y
        for k in range(6):
            out[r, k] = 2.0 * s * ds[k] * A0
        for e in range(3):
            ia = e
            ib = (e + 1) % 3
            ax = th[2 * ia]
            ay = th[2 * ia + 1]
            bx = th[2 * ib]
            by = th[2 * ib + 1]
            ex = bx - ax
            ey = by - ay
            L = math.sqrt(ex * ex + ey * ey + 1e-300)
            L2 = L * L
            c0 = mom[e, 0]; c1 = mom[e, 1]; c2 = mom[e, 2]
            B = sdc[e, 0] * c0 + sdc[e, 1] * c1 + sdc[e, 2] * c2
            f = kappa * s * s
            for k in range(6):
                out[r, k] += f * ds[k] * B
            # d sd / d(ax, ay, bx, by), each affine in (1, px, py), contracted with mom
            dsd[0] = (by * c0 - c2) / L + ex / L2 * B
            dsd[1] = (-bx * c0 + c1) / L + ey / L2 * B
            dsd[2] = (-ay * c0 + c2) / L - ex / L2 * B
            g = f * s
            out[r, 2 * ia] += g * dsd[0]
            out[r, 2 * ia + 1] += g * dsd[1]
            out[r, 2 * ib] += g * dsd[2]
            out[r, 2 * ib + 1] += g * ((ax * c0 - c1) / L - ey / L2 * B)
        for k in range(6):
            out[r, k] *= K
        out[r, 6] = K * s * s * A0 * (1.0 - sc)
        out[r, 7] = K * s * s * A0 * (1.0 - sa)


def _as_thetas(thetas) -> np.ndarray:
    X = check_ensemble(thetas)
    if X.shape[1] != 8:
        raise ConfigError(f"triangle parameters have 8 coordinates, got {X.shape[1]}")
    return np.ascontiguousarray(X)


def render_batch(thetas, cfg: RenderConfig) -> np.ndarray:
    """Render every triangle: ``(m, 8) -> (m, W * H)``."""
    X = _as_thetas(thetas)
    px, py = cfg.pixel_centers()
    out = np.empty((len(X), cfg.n_pixels))
    _render_batch(X, px, py, float(cfg.kappa), out)
    return out


def render_vjp(thetas, cfg: RenderConfig, weights) -> np.ndarray:
    """``sum_ij w_ij * d h_ij / d theta`` for every triangle, shape ``(m, 8)``."""
    X = _as_thetas(thetas)
    px, py = cfg.pixel_centers()
    w = np.ascontiguousarray(np.asarray(weights, dtype=float).reshape(-1))
    if w.size != cfg.n_pixels:
        raise ConfigError(f"need {cfg.n_pixels} pixel weights, got {w.size}")
    out = np.empty((len(X), 8))
    _render_vjp(X, px, py, float(cfg.kappa), w, out)
    return out


def image_expectation(thetas, cfg: RenderConfig) -> np.ndarray:
    """Per-pixel mean of the rendered triangles, as an ``(H, W)`` image."""
    return render_batch(thetas, cfg).mean(axis=0).reshape(cfg.height, cfg.width)


class TrianglePixels(FeatureMap):
    """One feature per pixel: ``h_ij(theta)`` of the rendered triangle."""

    d = 8
    sup_bound = 1.0

    def __init__(self, cfg: RenderConfig):
        self.cfg = cfg
        self.n = cfg.n_pixels

    def values(self, X):
        return render_batch(X, self.cfg)

    def weighted_grad(self, X, w):
        return render_vjp(X, self.cfg, w)

    def jacobian(self, theta):
        return render_jacobian(theta, self.cfg)
