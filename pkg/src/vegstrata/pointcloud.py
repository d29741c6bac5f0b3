"""Plot loading, validation, normalization, sampling and upsampling.

A plot is one cylindrical LiDAR acquisition: N points with 9 features each
(absolute x, y, z; RGB and near-infrared reflectance in [0, 255]; raw
intensity; return number) plus an optional triple of per-stratum occupancy
labels.  Normalization maps x, y onto [-1, 1]^2 by centering and scaling
with the plot radius, replaces z with the height above the lowest point in
a 0.5 m horizontal neighborhood, and rescales the radiometric features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .errors import ContractError, FormatError, ParseError, ValidationError

COLUMNS = ("x", "y", "z", "r", "g", "b", "nir", "intensity", "return_number")
CSV_HEADER = ("plot_id",) + COLUMNS
LABEL_HEADER = ("plot_id", "o_low", "o_medium", "o_high")

DEFAULT_RADIUS = 10.0
# Horizontal neighborhood (meters) for the local ground height.
GROUND_NEIGHBORHOOD = 0.5
RADIUS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RawPoint:
    """One LiDAR return with its 9 features."""

    x: float
    y: float
    z: float
    r: float
    g: float
    b: float
    nir: float
    intensity: float
    return_number: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.z, self.r, self.g, self.b, self.nir,
             self.intensity, self.return_number],
            dtype=float,
        )


@dataclass
class Plot:
    """A plot in raw (absolute) coordinates.

    ``points`` is an (N, 9) float array in the order of ``COLUMNS``.  The
    center defaults to the center of the minimum bounding circle of the
    horizontal point coordinates, which recovers the acquisition center
    whenever the returns reach the plot boundary.
    """

    id: str
    points: np.ndarray
    radius: float = DEFAULT_RADIUS
    labels: tuple[float, float, float] | None = None
    center: tuple[float, float] | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 9:
            raise ValidationError("points must be an (N, 9) array")
        if self.points.shape[0] < 1:
            raise ValidationError("a plot needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError(f"plot {self.id!r} contains non-finite features")
        if np.any(self.points[:, 8] < 1):
            raise ValidationError(f"plot {self.id!r}: return_number must be >= 1")
        if np.any(self.points[:, 7] < 0):
            raise ValidationError(f"plot {self.id!r}: intensity must be >= 0")
        if self.center is None:
            self.center = _bounding_circle_center(self.points[:, 0], self.points[:, 1])
        dx = self.points[:, 0] - self.center[0]
        dy = self.points[:, 1] - self.center[1]
        max_dist = float(np.sqrt(dx * dx + dy * dy).max())
        if max_dist > self.radius + RADIUS_TOLERANCE:
            raise ValidationError(
                f"plot {self.id!r}: point at distance {max_dist:.3f} m exceeds "
                f"the plot radius {self.radius} m"
            )
        if self.labels is not None:
            self.labels = tuple(float(v) for v in self.labels)
            if len(self.labels) != 3 or any(not 0.0 <= v <= 1.0 for v in self.labels):
                raise ValidationError(
                    f"plot {self.id!r}: labels must be three values in [0, 1]"
                )

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def point(self, i: int) -> RawPoint:
        row = self.points[i]
        return RawPoint(*row[:8], int(row[8]))


@dataclass
class NormalizedPlot:
    """A plot after normalization.

    ``features`` is (N, 9): x, y in [-1, 1]; height above local ground in
    meters; RGB/NIR in [0, 1]; per-plot min-max scaled intensity; return
    number divided by the plot's maximum return.  ``heights`` duplicates the
    height column for the elevation likelihood.
    """

    id: str
    features: np.ndarray
    heights: np.ndarray
    labels: tuple[float, float, float] | None = None

    @property
    def n_points(self) -> int:
        return self.features.shape[0]


def _bounding_circle_center(x, y) -> tuple[float, float]:
    if x.size == 1:
        return float(x[0]), float(y[0])
    circle = shapely.minimum_bounding_circle(
        shapely.multipoints(np.column_stack([x, y]))
    )
    c = circle.centroid
    return float(c.x), float(c.y)


def local_ground_heights(
    xy: np.ndarray, z: np.ndarray, neighborhood: float = GROUND_NEIGHBORHOOD
) -> np.ndarray:
    """Height of each point above the lowest point within ``neighborhood`` m.

    The neighborhood always contains the point itself, so results are >= 0
    and the local minimum return itself gets height 0.
    """
    z = np.asarray(z, dtype=float)
    zmin = z.copy()
    tree = cKDTree(xy)
    pairs = tree.query_pairs(neighborhood, output_type="ndarray")
    if pairs.size:
        np.minimum.at(zmin, pairs[:, 0], z[pairs[:, 1]])
        np.minimum.at(zmin, pairs[:, 1], z[pairs[:, 0]])
    return z - zmin


def normalize(plot: Plot) -> NormalizedPlot:
    """Map a raw plot into the normalized feature space.

    x, y are centered and divided by the plot radius, so the plot disk
    inscribes the unit square exactly.  A constant-intensity plot maps to
    intensity 0 everywhere.
    """
    pts = plot.points
    feats = np.empty_like(pts)
    feats[:, 0] = (pts[:, 0] - plot.center[0]) / plot.radius
    feats[:, 1] = (pts[:, 1] - plot.center[1]) / plot.radius
    feats[:, 2] = local_ground_heights(pts[:, :2], pts[:, 2])
    feats[:, 3:7] = pts[:, 3:7] / 255.0
    i_min, i_max = pts[:, 7].min(), pts[:, 7].max()
    feats[:, 7] = 0.0 if i_max == i_min else (pts[:, 7] - i_min) / (i_max - i_min)
    feats[:, 8] = pts[:, 8] / pts[:, 8].max()
    return NormalizedPlot(
        id=plot.id, features=feats, heights=feats[:, 2].copy(), labels=plot.labels
    )


def sample_points(plot: NormalizedPlot, m: int, seed: int):
    """Draw exactly ``m`` rows from a plot's feature matrix.

    With at least ``m`` points, a uniform subset of distinct indices; with
    fewer, every point once plus randomly chosen duplicates.  Returns the
    (m, 9) features and the source index of every sampled row.
    """
    if m < 1:
        raise ContractError("m must be >= 1")
    rng = np.random.default_rng(seed)
    n = plot.n_points
    if n >= m:
        idx = rng.choice(n, size=m, replace=False)
    else:
        extra = rng.integers(0, n, size=m - n)
        idx = np.concatenate([np.arange(n), extra])
        rng.shuffle(idx)
    return plot.features[idx], idx


def upsample_predictions(
    probs_m: np.ndarray,
    source_index: np.ndarray,
    n: int,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Spread per-sample predictions back onto the original ``n`` points.

    A point that was sampled receives the row of its first sampled copy.
    Unsampled points take the row of their nearest sampled neighbor in
    (x, y, height) space, which requires ``coords`` of shape (n, 3) for all
    original points.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    probs_m = np.asarray(probs_m)
    source_index = np.asarray(source_index)
    if probs_m.shape[0] != source_index.shape[0]:
        raise ContractError("probs_m and source_index lengths differ")
    out = np.empty((n, probs_m.shape[1]), dtype=probs_m.dtype)
    assigned = np.zeros(n, dtype=bool)
    # Reversed order so that the FIRST sampled copy wins.
    for j in range(source_index.shape[0] - 1, -1, -1):
        i = source_index[j]
        out[i] = probs_m[j]
        assigned[i] = True
    if not assigned.all():
        if coords is None:
            raise ContractError(
                "some points were never sampled; coordinates are required "
                "for nearest-neighbor upsampling"
            )
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (n, 3):
            raise ContractError("coords must have shape (n, 3)")
        tree = cKDTree(coords[source_index])
        _, nearest = tree.query(coords[~assigned])
        out[~assigned] = probs_m[nearest]
    return out


def _parse_rows(rows, path, has_plot_col):
    data = {}
    for lineno, row in rows:
        pid = row[0] if has_plot_col else "plot"
        try:
            values = [float(v) for v in (row[1:] if has_plot_col else row)]
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric value at data row {lineno}: {exc}")
        data.setdefault(pid, []).append(values)
    return data


def load_plots(
    path,
    radius: float = DEFAULT_RADIUS,
    labels: dict[str, tuple[float, float, float]] | None = None,
) -> list[Plot]:
    """Load one or several plots from a canonical CSV file.

    The header must be ``plot_id,x,y,z,r,g,b,nir,intensity,return_number``;
    rows are grouped by plot id with their order preserved.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header != list(CSV_HEADER):
            missing = set(CSV_HEADER) - set(header)
            if missing:
                raise FormatError(f"{path}: missing columns {sorted(missing)}")
            raise FormatError(f"{path}: columns must be ordered {','.join(CSV_HEADER)}")
        grouped = _parse_rows(
            ((i, row) for i, row in enumerate(reader, start=2)), path, True
        )
    plots = []
    for pid, rows in grouped.items():
        plot_labels = labels.get(pid) if labels else None
        plots.append(Plot(id=pid, points=np.asarray(rows), radius=radius,
                          labels=plot_labels))
    return plots


def load_plot(path, radius: float = DEFAULT_RADIUS) -> Plot:
    """Load a CSV expected to contain exactly one plot."""
    plots = load_plots(path, radius=radius)
    if len(plots) != 1:
        raise FormatError(f"{path}: expected a single plot, found {len(plots)}")
    return plots[0]


def save_plots(path, plots) -> None:
    """Write plots in the canonical CSV schema (floats kept round-trip exact)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for plot in plots:
            for row in plot.points:
                writer.writerow([plot.id] + [repr(float(v)) for v in row])


def load_labels(path) -> dict[str, tuple[float, float, float]]:
    """Read the labels CSV: ``plot_id,o_low,o_medium,o_high`` in [0, 1]."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file")
        if header != list(LABEL_HEADER):
            raise FormatError(f"{path}: header must be {','.join(LABEL_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                triple = tuple(float(v) for v in row[1:4])
            except ValueError as exc:
                raise ParseError(f"{path}: bad label at row {lineno}: {exc}")
            if any(not 0.0 <= v <= 1.0 for v in triple):
                raise ValidationError(f"{path}: labels at row {lineno} outside [0, 1]")
            out[row[0]] = triple
    return out


def save_labels(path, labels: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for pid, triple in labels.items():
            writer.writerow([pid] + [repr(float(v)) for v in triple])
