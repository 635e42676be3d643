"""Matérn Gaussian random fields on regular grids and raster covariates.

Rasters follow the ESRI ASCII grid convention: ``values[0]`` is the
northernmost row. Lookups are nearest-cell with a floor rule, so a location
on an edge shared by two cells belongs to the cell to its east (or north);
locations on the outer east/north boundary belong to the last cell.

Note on the simulation-study covariates: their Matérn parameters are quoted
as ``(sigma, xi, nu) = (1/3, 28, 0.5)`` and ``(1/3, 16, 1.75)``. ``sigma`` is
read as a standard deviation, so the covariate fields use variance
``(1/3)**2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import special

from .core import Window
from .errors import ConfigError, DataError, DomainError, EmbeddingWarning

__all__ = [
    "MaternParams",
    "RasterField",
    "GRFSampler",
    "matern_cov",
    "matern_corr",
    "simulate_grf",
    "lookup",
    "read_ascii_grid",
    "write_ascii_grid",
]


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    nu: float
    xi: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.nu > 0 and self.xi > 0):
            raise ConfigError(f"Matérn parameters must be positive, got {self}")


def matern_corr(r, nu: float, xi: float):
    r"""Matérn correlation :math:`2^{1-\nu}/\Gamma(\nu)\,(r/\xi)^\nu K_\nu(r/\xi)`.

    Evaluated with ``scipy.special.kv``; ``r = 0`` gives 1 and very large
    lags underflow cleanly to 0.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    t = r / xi
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        # log-space to avoid 0 * inf at large lags
        logc = (1.0 - nu) * math.log(2.0) - special.gammaln(nu) + nu * np.log(tp) + np.log(special.kve(nu, tp)) - tp
        out[pos] = np.exp(logc)
    out[pos & ~np.isfinite(out)] = 0.0
    return out if out.ndim else float(out)


def matern_cov(r, p: MaternParams):
    """Matérn covariance ``sigma2 * matern_corr(r)``."""
    return p.sigma2 * matern_corr(r, p.nu, p.xi)


class RasterField:
    """Gridded real-valued field over a window.

    Parameters
    ----------
    window : Window
    cellsize : float
    values : ndarray, shape (nrows, ncols)
        Row 0 is the northern edge.
    nodata : float
        Sentinel for missing cells.
    """

    def __init__(self, window: Window, cellsize: float, values, nodata: float = -9999.0):
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise DataError("raster values must be two-dimensional")
        nrows, ncols = values.shape
        if cellsize <= 0:
            raise DataError("cellsize must be positive")
        if abs(ncols * cellsize - window.width) > cellsize or abs(nrows * cellsize - window.height) > cellsize:
            raise DataError(
                f"{nrows}x{ncols} grid of {cellsize} m cells does not cover window {window.as_tuple()}"
            )
        valid = values != nodata
        if not np.all(np.isfinite(values[valid])):
            raise DataError("raster contains non-finite values")
        values.setflags(write=False)
        self.window = window
        self.cellsize = float(cellsize)
        self.values = values
        self.nodata = float(nodata)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    def __repr__(self):
        return f"RasterField({self.nrows}x{self.ncols}, cellsize={self.cellsize}, window={self.window.as_tuple()})"

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) of the cells containing ``xy``; raises for outside points."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        inside = self.window.contains(xy)
        if not inside.all():
            raise DomainError(f"location(s) outside raster window: {xy[~inside][:5].tolist()}")
        col = np.floor((xy[:, 0] - self.window.xmin) / self.cellsize).astype(np.intp)
        row_s = np.floor((xy[:, 1] - self.window.ymin) / self.cellsize).astype(np.intp)
        col = np.clip(col, 0, self.ncols - 1)
        row_s = np.clip(row_s, 0, self.nrows - 1)
        return self.nrows - 1 - row_s, col

    def sample(self, xy) -> np.ndarray:
        """Vectorised :func:`lookup`."""
        row, col = self.cell_index(xy)
        v = self.values[row, col]
        bad = v == self.nodata
        if bad.any():
            raise DomainError(f"nodata cell(s) at {np.atleast_2d(xy)[bad][:5].tolist()}")
        return v

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """x coordinates of columns and y coordinates of rows (row 0 north)."""
        xs = self.window.xmin + (np.arange(self.ncols) + 0.5) * self.cellsize
        ys = self.window.ymin + (self.nrows - 1 - np.arange(self.nrows) + 0.5) * self.cellsize
        return xs, ys

    def crop(self, window: Window) -> "RasterField":
        """Sub-raster covering ``window``, which must be aligned with the grid."""
        if not self.window.contains_window(window):
            raise DomainError(f"crop window {window.as_tuple()} not inside {self.window.as_tuple()}")
        cs = self.cellsize
        c0 = (window.xmin - self.window.xmin) / cs
        c1 = (window.xmax - self.window.xmin) / cs
        r0 = (self.window.ymax - window.ymax) / cs
        r1 = (self.window.ymax - window.ymin) / cs
        idx = np.array([c0, c1, r0, r1])
        if not np.allclose(idx, np.round(idx), atol=1e-9):
            raise DomainError("crop window is not aligned with the raster grid")
        c0, c1, r0, r1 = (int(round(v)) for v in idx)
        return RasterField(window, cs, self.values[r0:r1, c0:c1], self.nodata)

    def same_as(self, other: "RasterField") -> bool:
        return (
            self.window == other.window
            and self.cellsize == other.cellsize
            and self.nodata == other.nodata
            and np.array_equal(self.values, other.values)
        )


def lookup(field: RasterField, u) -> float:
    """Value of the cell containing location ``u``."""
    return float(field.sample(np.asarray(u, dtype=float).reshape(1, 2))[0])


class GRFSampler:
    """Circulant-embedding sampler for a stationary Matérn field on a grid.

    The grid of ``nrows x ncols`` cells is embedded in a torus of twice the
    size in each direction. The embedding eigenvalues are computed once, so
    repeated draws cost one FFT each; the real and imaginary parts of one
    transform are independent fields, which :meth:`sample_many` exploits.

    Attributes
    ----------
    exact : bool
        False when negative eigenvalues beyond ``1e-9 * max`` were clipped.
    min_eigen_ratio : float
        Smallest eigenvalue relative to the largest.
    """

    def __init__(self, nrows: int, ncols: int, cellsize: float, params: MaternParams):
        if nrows * ncols > 4_000_000:
            raise ConfigError(f"grid of {nrows}x{ncols} cells is too large")
        self.nrows, self.ncols = int(nrows), int(ncols)
        self.cellsize = float(cellsize)
        self.params = params
        my, mx = 2 * self.nrows, 2 * self.ncols
        ly = np.minimum(np.arange(my), my - np.arange(my)) * self.cellsize
        lx = np.minimum(np.arange(mx), mx - np.arange(mx)) * self.cellsize
        base = matern_cov(np.hypot(ly[:, None], lx[None, :]), params)
        lam = np.fft.fft2(base).real
        lmax = lam.max()
        self.min_eigen_ratio = float(lam.min() / lmax)
        self.exact = bool(lam.min() >= -1e-9 * lmax)
        if not self.exact:
            warnings.warn(
                f"circulant embedding has negative eigenvalues (min/max = {self.min_eigen_ratio:.3g}); "
                "clipping to zero",
                EmbeddingWarning,
                stacklevel=2,
            )
        self._scale = np.sqrt(np.clip(lam, 0.0, None) / (mx * my))

    @property
    def path(self) -> str:
        return "exact" if self.exact else "clipped"

    def sample_many(self, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        """``n`` independent fields of shape ``(nrows, ncols)``."""
        out = []
        while len(out) < n:
            # complex white noise viewed straight from interleaved normals
            eps = rng.standard_normal(self._scale.shape + (2,)).view(np.complex128)[..., 0]
            eps *= self._scale
            y = sfft.fft2(eps, overwrite_x=True)[: self.nrows, : self.ncols]
            out.append(np.ascontiguousarray(y.real))
            if len(out) < n:
                out.append(np.ascontiguousarray(y.imag))
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(rng, 1)[0]


def grid_shape(window: Window, cellsize: float) -> tuple[int, int]:
    ncols = int(round(window.width / cellsize))
    nrows = int(round(window.height / cellsize))
    if ncols < 1 or nrows < 1:
        raise ConfigError(f"cellsize {cellsize} too large for window {window.as_tuple()}")
    return nrows, ncols


def simulate_grf(window: Window, cellsize: float, p: MaternParams, seed) -> RasterField:
    """One zero-mean Matérn field on the ``cellsize`` grid over ``window``.

    Deterministic given ``seed`` (anything accepted by
    ``numpy.random.default_rng``).
    """
    nrows, ncols = grid_shape(window, cellsize)
    sampler = GRFSampler(nrows, ncols, cellsize, p)
    values = sampler.sample(np.random.default_rng(seed))
    return RasterField(window, cellsize, values)


_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


def write_ascii_grid(field: RasterField, path) -> None:
    """Write an ESRI ASCII grid with 17 significant digits (exact round trip)."""
    w = field.window
    lines = [
        f"ncols {field.ncols}",
        f"nrows {field.nrows}",
        f"xllcorner {w.xmin!r}",
        f"yllcorner {w.ymin!r}",
        f"cellsize {field.cellsize!r}",
        f"NODATA_value {field.nodata!r}",
    ]
    body = "\n".join(" ".join(format(v, ".17g") for v in row) for row in field.values)
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_ascii_grid(path) -> RasterField:
    with open(path) as fh:
        header = {}
        for key in _HEADER:
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: truncated header")
            parts = line.split()
            if len(parts) != 2 or parts[0].lower() != key.lower():
                raise DataError(f"{path}: expected header '{key}', got '{line.strip()}'")
            header[key] = parts[1]
        try:
            values = np.loadtxt(fh, dtype=float, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: bad raster body: {exc}") from None
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if values.shape != (nrows, ncols):
        raise DataError(f"{path}: body is {values.shape}, header says {(nrows, ncols)}")
    cs = float(header["cellsize"])
    x0, y0 = float(header["xllcorner"]), float(header["yllcorner"])
    window = Window(x0, x0 + ncols * cs, y0, y0 + nrows * cs)
    return RasterField(window, cs, values, float(header["NODATA_value"]))
