"""Cell deployment, propagation and RSRP coverage maps."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

MIN_DISTANCE_M = 1.0


class CellKind(str, enum.Enum):
    MACRO = "macro"
    PICO = "pico"


@dataclass(frozen=True)
class PathlossModel:
    """Log-distance model ``PL = intercept + slope * log10(d_km)``."""

    intercept_db: float
    slope_db: float
    name: str = "log-distance"

    def __call__(self, distance_m):
        d_km = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M) / 1000.0
        return self.intercept_db + self.slope_db * np.log10(d_km)


MACRO_PATHLOSS = PathlossModel(128.1, 37.6, "macro-hex")
PICO_PATHLOSS = PathlossModel(140.7, 36.7, "pico-hex")

# 46 dBm / 30 dBm total power spread over 1200 resource elements (20 MHz).
DEFAULT_RS_POWER_DBM = {CellKind.MACRO: 15.2, CellKind.PICO: -0.8}
DEFAULT_HEIGHT_M = {CellKind.MACRO: 30.0, CellKind.PICO: 8.0}
DEFAULT_PATHLOSS = {CellKind.MACRO: MACRO_PATHLOSS, CellKind.PICO: PICO_PATHLOSS}


@dataclass(frozen=True)
class Cell:
    id: int
    kind: CellKind
    position: tuple[float, float]
    tx_power_rsrp_ref: float
    antenna_height: float = 0.0
    pathloss_model: PathlossModel = MACRO_PATHLOSS
    name: str = ""

    @property
    def is_pico(self) -> bool:
        return self.kind is CellKind.PICO

    @property
    def label(self) -> str:
        return self.name or f"{self.kind.value[0].upper()}{self.id}"


def make_cell(cell_id, kind, position, tx_power=None, height=None, pathloss=None, name=""):
    """Build a cell with the per-kind defaults filled in."""
    kind = CellKind(kind)
    return Cell(
        id=int(cell_id),
        kind=kind,
        position=(float(position[0]), float(position[1])),
        tx_power_rsrp_ref=DEFAULT_RS_POWER_DBM[kind] if tx_power is None else float(tx_power),
        antenna_height=DEFAULT_HEIGHT_M[kind] if height is None else float(height),
        pathloss_model=DEFAULT_PATHLOSS[kind] if pathloss is None else pathloss,
        name=name,
    )


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"grid cell_size must be > 0, got {self.cell_size}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def point_area(self) -> float:
        return self.cell_size**2

    def axes(self):
        x = self.origin[0] + self.cell_size * np.arange(self.nx)
        y = self.origin[1] + self.cell_size * np.arange(self.ny)
        return x, y

    def coordinates(self):
        """Return ``(X, Y)`` meshes of shape ``(ny, nx)``."""
        x, y = self.axes()
        return np.meshgrid(x, y)

    def index_of(self, point) -> tuple[int, int]:
        """Nearest grid index ``(iy, ix)`` to a point, clamped to the grid."""
        ix = int(round((point[0] - self.origin[0]) / self.cell_size))
        iy = int(round((point[1] - self.origin[1]) / self.cell_size))
        return min(max(iy, 0), self.ny - 1), min(max(ix, 0), self.nx - 1)


def pathloss_dB(cell: Cell, point) -> np.ndarray:
    """Pathloss from ``cell`` to ``point`` (x, y), or to arrays of points."""
    px = np.asarray(point[0], dtype=float)
    py = np.asarray(point[1], dtype=float)
    d = np.hypot(px - cell.position[0], py - cell.position[1])
    return cell.pathloss_model(d)


@dataclass(frozen=True)
class ShadowField:
    """Per-cell shadowing offsets in dB, shape ``(n_cells, ny, nx)``."""

    grid: GridSpec
    values: np.ndarray
    sigma: float
    correlation_distance: float
    seed: object

    def sample(self, x, y) -> np.ndarray:
        """Bilinear interpolation at points; returns ``(n_cells, *shape(x))``.

        Points outside the grid take the value of the nearest edge.
        """
        g = self.grid
        fx = np.clip((np.asarray(x, dtype=float) - g.origin[0]) / g.cell_size, 0, g.nx - 1)
        fy = np.clip((np.asarray(y, dtype=float) - g.origin[1]) / g.cell_size, 0, g.ny - 1)
        x0 = np.minimum(np.floor(fx).astype(int), max(g.nx - 2, 0))
        y0 = np.minimum(np.floor(fy).astype(int), max(g.ny - 2, 0))
        x1 = np.minimum(x0 + 1, g.nx - 1)
        y1 = np.minimum(y0 + 1, g.ny - 1)
        tx = fx - x0
        ty = fy - y0
        v = self.values
        return (
            v[:, y0, x0] * (1 - tx) * (1 - ty)
            + v[:, y0, x1] * tx * (1 - ty)
            + v[:, y1, x0] * (1 - tx) * ty
            + v[:, y1, x1] * tx * ty
        )


def _embedding_size(n: int, corr_cells: float) -> int:
    m = max(2 * n, n + int(np.ceil(8 * corr_cells)), 8)
    # even sizes keep the wrapped distance symmetric
    return m + (m % 2)


def generate_shadow_field(grid: GridSpec, sigma: float, corr_dist: float, seed, n_cells: int = 1) -> ShadowField:
    """Gaussian shadowing with exponential autocorrelation ``exp(-d / corr_dist)``.

    Sampled by circulant embedding on a padded torus; each cell gets an
    independent child stream of ``seed`` so adding cells leaves earlier
    fields untouched.
    """
    if not corr_dist > 0:
        raise ValueError(f"correlation distance must be > 0, got {corr_dist}")
    if sigma < 0:
        raise ValueError(f"shadowing sigma must be >= 0, got {sigma}")
    values = np.zeros((n_cells, grid.ny, grid.nx))
    if sigma == 0 or n_cells == 0:
        return ShadowField(grid, values, float(sigma), float(corr_dist), seed)

    corr_cells = corr_dist / grid.cell_size
    mx = _embedding_size(grid.nx, corr_cells)
    my = _embedding_size(grid.ny, corr_cells)
    kx = np.minimum(np.arange(mx), mx - np.arange(mx)) * grid.cell_size
    ky = np.minimum(np.arange(my), my - np.arange(my)) * grid.cell_size
    dist = np.hypot(kx[None, :], ky[:, None])
    eig = np.fft.fft2(np.exp(-dist / corr_dist)).real
    amp = np.sqrt(np.clip(eig, 0.0, None) / (mx * my))

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(n_cells)
    for c, child in enumerate(children):
        rng = np.random.default_rng(child)
        w = rng.standard_normal((my, mx)) + 1j * rng.standard_normal((my, mx))
        f = np.fft.fft2(amp * w).real
        values[c] = sigma * f[: grid.ny, : grid.nx]
    return ShadowField(grid, values, float(sigma), float(corr_dist), seed)


@dataclass(frozen=True)
class RsrpMap:
    grid: GridSpec
    cells: tuple[Cell, ...]
    rsrp: np.ndarray  # (n_cells, ny, nx) dBm

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def pico_mask(self) -> np.ndarray:
        return np.array([c.is_pico for c in self.cells], dtype=bool)

    def flat(self) -> np.ndarray:
        """RSRP as ``(n_cells, n_points)``."""
        return self.rsrp.reshape(self.n_cells, -1)

    def at(self, iy: int, ix: int) -> np.ndarray:
        return self.rsrp[:, iy, ix]

    def best_server(self) -> np.ndarray:
        """Unbiased best server per grid point, shape ``(ny, nx)``."""
        return np.argmax(self.rsrp, axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"] + [f"cell_{c.id}" for c in self.cells])
        X, Y = self.grid.coordinates()
        flat = self.flat()
        for k, (x, y) in enumerate(zip(X.ravel(), Y.ravel())):
            w.writerow([repr(float(x)), repr(float(y))] + [repr(float(v)) for v in flat[:, k]])
        return buf.getvalue()


def read_rsrp_csv(text: str, grid: GridSpec, cells) -> RsrpMap:
    """Inverse of :meth:`RsrpMap.to_csv` for a known grid and cell list."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n = len(header) - 2
    if n != len(cells):
        raise ValueError(f"map has {n} cell columns, scenario has {len(cells)} cells")
    if len(body) != grid.n_points:
        raise ValueError(f"map has {len(body)} points, grid has {grid.n_points}")
    data = np.array([[float(v) for v in r[2:]] for r in body]).T
    return RsrpMap(grid, tuple(cells), data.reshape(n, grid.ny, grid.nx))


def compute_rsrp_map(cells, grid: GridSpec, shadow: ShadowField | None = None) -> RsrpMap:
    """``rsrp[c] = tx_power(c) - pathloss(c, g) + shadow[c]`` on every grid point."""
    cells = tuple(cells)
    X, Y = grid.coordinates()
    rsrp = np.empty((len(cells), grid.ny, grid.nx))
    for k, cell in enumerate(cells):
        rsrp[k] = cell.tx_power_rsrp_ref - pathloss_dB(cell, (X, Y))
    if shadow is not None:
        if shadow.grid != grid or shadow.values.shape != rsrp.shape:
            raise ValueError(
                f"shadow field shape {shadow.values.shape} does not match map {rsrp.shape}"
            )
        rsrp += shadow.values
    return RsrpMap(grid, cells, rsrp)


def point_rsrp(cells, x, y, shadow: ShadowField | None = None) -> np.ndarray:
    """RSRP of every cell at arbitrary points (used along trajectories)."""
    out = np.array([c.tx_power_rsrp_ref - pathloss_dB(c, (x, y)) for c in cells])
    if shadow is not None:
        out = out + shadow.sample(x, y)
    return out


@dataclass
class CoverageAreas:
    server: np.ndarray  # (ny, nx) cell index, -1 where no stable server is reached
    area_m2: np.ndarray  # per cell
    unstable_points: int = 0
    n_cells: int = field(default=0)

    @property
    def total_area(self) -> float:
        return float(self.area_m2.sum())


def coverage_areas(rsrp_map: RsrpMap, bias=None, H_g: float = 0.0) -> CoverageAreas:
    """Per-cell coverage area and server map, optionally under a bias matrix.

    Without bias the server is the strongest cell. With bias it is the cell a
    UE settles on after following handovers from the strongest cell; points
    where that walk cycles are flagged ``-1``.
    """
    n = rsrp_map.n_cells
    if bias is None:
        server = rsrp_map.best_server()
    else:
        from .static import biased_server_map

        if bias.n != n:
            raise ValueError(f"bias matrix is {bias.n}x{bias.n}, map has {n} cells")
        server = biased_server_map(rsrp_map, bias, H_g)
    counts = np.bincount(server[server >= 0].ravel(), minlength=n)
    return CoverageAreas(
        server=server,
        area_m2=counts * rsrp_map.grid.point_area,
        unstable_points=int((server < 0).sum()),
        n_cells=n,
    )
