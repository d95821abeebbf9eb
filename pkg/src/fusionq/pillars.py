"""Sparse BEV pillars and the dense-grid arithmetic they are compared against."""

import math
from dataclasses import dataclass

import numpy as np

from fusionq.common_types import FloatArray
from fusionq.errors import ConfigurationError, ShapeError


@dataclass(slots=True, eq=False, match_args=False)
class PillarFeatureSet:
    """Occupied BEV cells: cell-center `positions` (P×2, meters) and the mean
    `contents` (P×F) of the point features that fell into each cell.
    """
    positions: FloatArray
    contents: FloatArray

    def __post_init__(self) -> None:
        if self.positions.shape[0] != self.contents.shape[0]:
            msg = "Pillar positions and contents must have the same row count."
            hint = f"Instead, {self.positions.shape[0]} and {self.contents.shape[0]} are given."
            raise ShapeError(msg + "\n" + hint)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls, feature_dim: int) -> "PillarFeatureSet":
        return cls(np.zeros((0, 2)), np.zeros((0, feature_dim)))


def grid_shape(extent: tuple[float, float], cell_size: float) -> tuple[int, int]:
    """Cells along x and y covering a symmetric extent ±extent[i] meters."""
    if cell_size <= 0:
        msg = "The cell size must be positive."
        hint = f"Instead, {cell_size=} is given."
        raise ConfigurationError(msg + "\n" + hint)
    # 408 / 0.6 evaluates to 680.0000000000001
    return tuple(math.ceil(2 * e / cell_size - 1e-9) for e in extent)  # type: ignore[return-value]


def dense_grid_count(extent: tuple[float, float], cell_size: float) -> int:
    n_x, n_y = grid_shape(extent, cell_size)
    return n_x * n_y


def pillarize(points: FloatArray,
              features: FloatArray,
              /, *,
              cell_size: float,
              extent: tuple[float, float]) -> PillarFeatureSet:
    """Average point features per occupied BEV cell (pooling along height).

    Points outside ±extent are dropped; empty cells are absent; pillars are
    ordered by their row-major cell index.
    """
    if points.shape[0] != features.shape[0]:
        msg = "Every point needs one feature row."
        hint = f"Instead, {points.shape[0]} points and {features.shape[0]} rows are given."
        raise ShapeError(msg + "\n" + hint)
    n_x, n_y = grid_shape(extent, cell_size)
    origin = -np.asarray(extent, dtype=np.float64)
    cells = np.floor((points[:, :2] - origin) / cell_size).astype(np.int64)
    inside = (cells[:, 0] >= 0) & (cells[:, 0] < n_x) & (cells[:, 1] >= 0) & (cells[:, 1] < n_y)
    if not inside.any():
        return PillarFeatureSet.empty(features.shape[1])

    cells = cells[inside]
    linear = cells[:, 0] * n_y + cells[:, 1]
    occupied, inverse, counts = np.unique(linear, return_inverse=True, return_counts=True)
    sums = np.zeros((occupied.size, features.shape[1]), dtype=np.float64)
    np.add.at(sums, inverse, features[inside])

    ix, iy = np.divmod(occupied, n_y)
    positions = origin + (np.stack((ix, iy), axis=-1) + 0.5) * cell_size
    return PillarFeatureSet(positions, sums / counts[:, None])
