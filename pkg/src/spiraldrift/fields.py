"""Pointwise geometry evaluation for the drift equations.

The equations of motion need g^AB, sqrt(g), the curvature scalar and its
gradient at arbitrary chart points.  `AnalyticGeometryEvaluator` wraps the
closed-form route; `GridGeometryEvaluator` interpolates grid fields with
bicubic splines (smooth first derivatives, which matters because the
curvature gradient already contains third derivatives of the metric).
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RectBivariateSpline

__all__ = ["AnalyticGeometryEvaluator", "GridGeometryEvaluator"]


class AnalyticGeometryEvaluator:
    """Closed-form geometry queries on a chart domain."""

    def __init__(self, symbolic, grid):
        self._sym = symbolic
        self.grid = grid

    def contains(self, x, y):
        return self.grid.contains(x, y)

    def g_upper(self, x, y):
        return self._sym.g_upper(x, y)

    def sqrt_g(self, x, y):
        return self._sym.sqrt_g(x, y)

    def ricci(self, x, y):
        return self._sym.ricci(x, y)

    def ricci_grad(self, x, y):
        return self._sym.ricci_grad(x, y)

    def drift_basis(self, x, y):
        b1x, b1y, b2x, b2y = self._sym.drift_basis_fn()(np.asarray(x, float), np.asarray(y, float))
        shape = np.broadcast(np.asarray(x, float), np.asarray(y, float)).shape
        comps = [np.broadcast_to(np.asarray(c, float), shape) for c in (b1x, b1y, b2x, b2y)]
        b1 = np.stack(comps[:2], axis=-1)
        b2 = np.stack(comps[2:], axis=-1)
        return b1, b2

    def drift_basis_fn(self):
        fn = self._sym.drift_basis_fn()

        def basis(x, y):
            b1x, b1y, b2x, b2y = fn(x, y)
            return float(b1x), float(b1y), float(b2x), float(b2y)

        return basis


class GridGeometryEvaluator:
    """Bicubic-spline geometry queries built from a `MetricField`."""

    def __init__(self, metric):
        self.grid = metric.grid
        xs, ys = self.grid.xs, self.grid.ys
        self._ricci = RectBivariateSpline(xs, ys, metric.ricci, kx=3, ky=3)
        self._sqrt_g = RectBivariateSpline(xs, ys, metric.sqrt_g, kx=3, ky=3)
        self._gup = [
            [RectBivariateSpline(xs, ys, metric.g_upper[..., i, j], kx=3, ky=3) for j in range(2)]
            for i in range(2)
        ]
        self._metric_g_upper = metric.g_upper
        self._metric_sqrt_g = metric.sqrt_g

    def contains(self, x, y):
        return self.grid.contains(x, y)

    def _shape(self, x, y):
        return np.broadcast(np.asarray(x, float), np.asarray(y, float)).shape

    def g_upper(self, x, y):
        shape = self._shape(x, y)
        out = np.empty(shape + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = self._gup[i][j](x, y, grid=False)
        return out

    def sqrt_g(self, x, y):
        return np.asarray(self._sqrt_g(x, y, grid=False)).reshape(self._shape(x, y))

    def ricci(self, x, y):
        return np.asarray(self._ricci(x, y, grid=False)).reshape(self._shape(x, y))

    def ricci_grad(self, x, y):
        shape = self._shape(x, y)
        rx = np.asarray(self._ricci(x, y, dx=1, grid=False)).reshape(shape)
        ry = np.asarray(self._ricci(x, y, dy=1, grid=False)).reshape(shape)
        return np.stack([rx, ry], axis=-1)

    def _basis_splines(self):
        if not hasattr(self, "_basis"):
            xs, ys = self.grid.xs, self.grid.ys
            rx = self._ricci(xs, ys, dx=1)
            ry = self._ricci(xs, ys, dy=1)
            gup = self._metric_g_upper
            inv_sg = 1.0 / self._metric_sqrt_g
            comps = (
                -(gup[..., 0, 0] * rx + gup[..., 0, 1] * ry),
                -(gup[..., 1, 0] * rx + gup[..., 1, 1] * ry),
                inv_sg * ry,
                -inv_sg * rx,
            )
            self._basis = [RectBivariateSpline(xs, ys, c, kx=3, ky=3) for c in comps]
        return self._basis

    def drift_basis(self, x, y):
        shape = self._shape(x, y)
        splines = self._basis_splines()
        comps = [np.asarray(s(x, y, grid=False)).reshape(shape) for s in splines]
        b1 = np.stack(comps[:2], axis=-1)
        b2 = np.stack(comps[2:], axis=-1)
        return b1, b2

    def drift_basis_fn(self):
        s1x, s1y, s2x, s2y = self._basis_splines()

        def basis(x, y):
            return (
                float(s1x(x, y, grid=False)),
                float(s1y(x, y, grid=False)),
                float(s2x(x, y, grid=False)),
                float(s2y(x, y, grid=False)),
            )

        return basis
