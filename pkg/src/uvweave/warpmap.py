"""Per-pixel UV maps and the warping grids between image and texture space.

A UV map assigns every foreground pixel a texture coordinate through the
displacement convention ``u = x - uv(x)``: the stored value is the offset
from the pixel's own normalized position to its texture position.  When a
part channel is present, ``u`` is a per-chart coordinate that gets routed
into the chart's tile of the texture atlas.

Two grids are derived from a UV map:

* ``image_grid`` targets texture space from each pixel (used to pull
  texture values back into the image);
* ``texture_grid`` is its forward-splatted inverse, targeting image space
  from each texel (used to unwrap a frame into the texture).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .errors import ValidationError
from .fields import Field2, _axis_split, pixel_center_grid, sample_bilinear

COVER_EPS = 1e-12


@dataclass(frozen=True)
class AtlasLayout:
    """Regular tiling of the unit square into per-part chart rectangles.

    Part indices are 1-based; part p occupies tile ((p-1) % tiles_x,
    (p-1) // tiles_x), row-major from the top-left.  The default 6 x 4
    layout holds 24 body-part charts.
    """

    tiles_x: int = 6
    tiles_y: int = 4

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValidationError("atlas must have at least one tile per axis")

    @property
    def parts(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_origin(self, part: np.ndarray) -> np.ndarray:
        """(..., 2) tile origins for 1-based part indices."""
        idx = np.asarray(part, dtype=np.int64) - 1
        out = np.empty(idx.shape + (2,), dtype=np.float64)
        out[..., 0] = (idx % self.tiles_x) / self.tiles_x
        out[..., 1] = (idx // self.tiles_x) / self.tiles_y
        return out

    @property
    def tile_scale(self) -> np.ndarray:
        return np.array([1.0 / self.tiles_x, 1.0 / self.tiles_y])

    def to_global(self, u_local: np.ndarray, part: np.ndarray) -> np.ndarray:
        """Route per-chart coordinates (clamped to [0, 1]) into atlas tiles."""
        u = np.clip(np.asarray(u_local, dtype=np.float64), 0.0, 1.0)
        return self.tile_origin(part) + u * self.tile_scale

    def to_local(self, u_global: np.ndarray, part: np.ndarray) -> np.ndarray:
        u = (np.asarray(u_global, dtype=np.float64) - self.tile_origin(part)) / self.tile_scale
        return np.clip(u, 0.0, 1.0)


class UVMap:
    """Dense UV assignment over an image grid.

    ``uv`` is a 2-channel displacement field (zero outside the silhouette),
    ``silhouette`` marks foreground pixels, and ``part`` is an optional
    integer chart label, 0 on background and 1-based on the silhouette.
    """

    __slots__ = ("uv", "silhouette", "part")

    def __init__(self, uv, silhouette, part=None):
        if not isinstance(uv, Field2):
            uv = Field2(uv)
        if uv.channels != 2:
            raise ValidationError(f"uv field must have 2 channels, got {uv.channels}")
        sil = np.asarray(silhouette, dtype=bool)
        if sil.shape != (uv.height, uv.width):
            raise ValidationError(
                f"silhouette shape {sil.shape} does not match uv {(uv.height, uv.width)}"
            )
        data = uv.data * sil[..., None]   # fresh array, zero off-silhouette
        if part is not None:
            part = np.asarray(part)
            if part.shape != sil.shape:
                raise ValidationError("part channel shape does not match silhouette")
            if not np.issubdtype(part.dtype, np.integer):
                part = np.rint(part).astype(np.int64)
            else:
                part = part.astype(np.int64)
            if part.min() < 0:
                raise ValidationError("part indices must be non-negative")
            if np.any((part == 0) != ~sil):
                raise ValidationError("part must be 0 exactly where the silhouette is false")
        # the product of validated-finite data with a 0/1 mask needs no
        # second validation pass
        self.uv = Field2._wrap(data)
        self.silhouette = sil
        self.part = part

    @property
    def width(self) -> int:
        return self.uv.width

    @property
    def height(self) -> int:
        return self.uv.height

    def copy(self) -> "UVMap":
        return UVMap(self.uv.copy(), self.silhouette.copy(),
                     None if self.part is None else self.part.copy())


@dataclass
class WarpGrid:
    """Per-cell sampling targets in the other domain plus a coverage weight.

    ``coverage == 0`` marks cells whose target is not backed by data (it is
    hole-filled for sampling but should be masked downstream).
    """

    target: Field2
    coverage: np.ndarray

    def __post_init__(self):
        if self.target.channels != 2:
            raise ValidationError("warp grid target must have 2 channels")
        self.coverage = np.asarray(self.coverage, dtype=np.float64)
        if self.coverage.shape != (self.target.height, self.target.width):
            raise ValidationError("coverage shape does not match target grid")
        if self.coverage.min() < 0.0 or self.coverage.max() > 1.0 + 1e-12:
            raise ValidationError("coverage must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.target.width

    @property
    def height(self) -> int:
        return self.target.height


def chart_positions(P: UVMap, atlas: AtlasLayout | None = None):
    """Global texture coordinates for every pixel, plus the local slopes.

    Returns ``(u_glob, slope)`` where ``u_glob`` is (H, W, 2) and ``slope``
    is the per-pixel derivative d(u_glob)/d(u_local): the atlas tile scale
    where routing is active (zeroed where the per-chart clamp binds), ones
    for part-free maps.  ``d(u_glob)/d(uv) = -slope``.
    """
    c = pixel_center_grid(P.width, P.height)
    u_local = c - P.uv.data
    if P.part is None:
        return u_local, np.broadcast_to(np.float64(1.0), u_local.shape)
    if atlas is None:
        atlas = AtlasLayout()
    if P.part.max() > atlas.parts:
        raise ValidationError(
            f"part index {P.part.max()} exceeds atlas capacity {atlas.parts}"
        )
    part = np.where(P.silhouette, P.part, 1)
    clamped = (u_local < 0.0) | (u_local > 1.0)
    u_glob = atlas.tile_origin(part) + np.clip(u_local, 0.0, 1.0) * atlas.tile_scale
    slope = np.where(clamped, 0.0, atlas.tile_scale)
    return u_glob, slope


def image_grid(P: UVMap, atlas: AtlasLayout | None = None) -> WarpGrid:
    """Grid over the image whose targets are texture-space positions."""
    u_glob, _ = chart_positions(P, atlas)
    return WarpGrid(Field2(u_glob), P.silhouette.astype(np.float64))


@dataclass
class SplatRecord:
    """Bookkeeping of one forward splat of foreground pixels into texels.

    Kept so gradient code can run the exact adjoint of the splat without
    re-deriving the inverse map.  ``corners`` are flat texel indices, one
    row of four per splatted pixel, with matching bilinear ``weights``.
    """

    tex_w: int
    tex_h: int
    pix_y: np.ndarray
    pix_x: np.ndarray
    values: np.ndarray      # (n, 2) deposited pixel-center coordinates
    corners: np.ndarray     # (n, 4) flat texel indices
    weights: np.ndarray     # (n, 4)
    fx: np.ndarray
    fy: np.ndarray
    slope: np.ndarray       # (n, 2) d(u_glob)/d(u_local) per pixel
    wsum: np.ndarray        # (tex_h * tex_w,)
    covered: np.ndarray     # (tex_h * tex_w,) bool


def splat_record(P: UVMap, tex_w: int, tex_h: int,
                 atlas: AtlasLayout | None = None) -> SplatRecord:
    if tex_w < 2 or tex_h < 2:
        raise ValidationError("texture grid must be at least 2x2")
    sil = P.silhouette
    if not sil.any():
        raise ValidationError("empty silhouette")
    pix_y, pix_x = np.nonzero(sil)
    u_glob, slope = chart_positions(P, atlas)
    u = u_glob[pix_y, pix_x]
    s = slope[pix_y, pix_x]
    c = pixel_center_grid(P.width, P.height)[pix_y, pix_x]
    gx = u[:, 0] * tex_w - 0.5
    gy = u[:, 1] * tex_h - 0.5
    x0, x1, fx = _axis_split(gx, tex_w)
    y0, y1, fy = _axis_split(gy, tex_h)
    corners = np.stack([y0 * tex_w + x0, y0 * tex_w + x1,
                        y1 * tex_w + x0, y1 * tex_w + x1], axis=1)
    weights = np.stack([(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy),
                        (1.0 - fx) * fy, fx * fy], axis=1)
    wsum = np.zeros(tex_w * tex_h, dtype=np.float64)
    np.add.at(wsum, corners.ravel(), weights.ravel())
    return SplatRecord(tex_w=tex_w, tex_h=tex_h, pix_y=pix_y, pix_x=pix_x,
                       values=c, corners=corners, weights=weights, fx=fx, fy=fy,
                       slope=s, wsum=wsum, covered=wsum > COVER_EPS)


def splat_average(rec: SplatRecord, values: np.ndarray):
    """Weight-normalized splat of per-pixel values; returns (flat avg, covered)."""
    ch = values.shape[1]
    acc = np.zeros((rec.tex_w * rec.tex_h, ch), dtype=np.float64)
    np.add.at(acc, rec.corners, rec.weights[:, :, None] * values[:, None, :])
    out = np.zeros_like(acc)
    cov = rec.covered
    out[cov] = acc[cov] / rec.wsum[cov, None]
    return out, cov


def fill_from_nearest(data: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Fill uncovered cells of an (H, W, C) array from the nearest covered cell."""
    if covered.all():
        return data
    inds = ndi.distance_transform_edt(~covered, return_distances=False,
                                      return_indices=True)
    return data[inds[0], inds[1]]


def texture_grid(P: UVMap, tex_w: int, tex_h: int,
                 atlas: AtlasLayout | None = None,
                 record: SplatRecord | None = None) -> WarpGrid:
    """Forward-splatted inverse grid: per-texel image-space positions.

    Each foreground pixel deposits its own center coordinate at its texture
    position with bilinear weights; deposits are weight-normalized, so
    texels hit by several pixels average them.  Texels no pixel touched are
    filled from the nearest covered texel and keep coverage 0.
    """
    rec = record if record is not None else splat_record(P, tex_w, tex_h, atlas)
    avg, cov = splat_average(rec, rec.values)
    tgt = avg.reshape(tex_h, tex_w, 2)
    cov2 = cov.reshape(tex_h, tex_w)
    tgt = fill_from_nearest(tgt, cov2)
    coverage = np.minimum(rec.wsum.reshape(tex_h, tex_w), 1.0)
    coverage[~cov2] = 0.0
    return WarpGrid(Field2(tgt), coverage)


def warp(src: Field2, g: WarpGrid) -> Field2:
    """Backward warp: sample ``src`` at every grid target.

    Output cells are valid where the grid is covered and the majority of
    the bilinear support in ``src`` is valid.
    """
    vals, validity = sample_bilinear(src, g.target.data)
    valid = (g.coverage > 0.0) & (validity > 0.5)
    return Field2(vals, valid=valid)
