"""Quadrature meshes of compact submanifolds of the model spaces.

Built-in charts only: flat disks and graphs over disks in Euclidean
space, geodesic balls in totally geodesic subspheres / hyperbolic
subspaces, and the closed equatorial subsphere used for tube
calibration.  Frames, second fundamental forms and mean curvature are
analytic per chart; quadrature is midpoint-rule on polar grids.
"""

from __future__ import annotations

import ast
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .errors import (
    DegenerateStencilError,
    LengthMismatchError,
    ResolutionTooCoarseError,
    UnboundedDomainError,
    UnsupportedChartError,
)
from .fields import ScalarField, height_from_expression
from .geometry import ModelManifold

MIN_INTERIOR_NODES = 16


# ---------------------------------------------------------------------------
# chart specifications


@dataclass(frozen=True)
class FlatDisk:
    """Flat 2-disk in the x1-x2 plane of Euclidean R^{2+codim}."""

    radius: float
    codim: int = 2


@dataclass(frozen=True)
class GraphOverDisk:
    """Graph {(u, h(u), 0, ...)} over a 2-disk in Euclidean R^{2+codim}."""

    radius: float
    height: str  # expression of u1, u2 in the safe field grammar
    codim: int = 2


@dataclass(frozen=True)
class GeodesicBallInSubsphere:
    """Geodesic ball in a totally geodesic S^2 inside the ambient sphere."""

    radius: float  # geodesic radius


@dataclass(frozen=True)
class GeodesicDiskInHyperbolicSubspace:
    """Geodesic disk in a totally geodesic H^2 inside the ambient hyperbolic space."""

    radius: float


@dataclass(frozen=True)
class EquatorialSubsphereBand:
    """Full equatorial subsphere of codimension 1 (tube-volume calibration)."""


# ---------------------------------------------------------------------------
# mesh


@dataclass
class SubmanifoldMesh:
    manifold: ModelManifold
    n: int
    m: int
    chart_id: str
    chart_args: dict
    params: np.ndarray          # (N, 2) chart parameters
    stencil_coords: np.ndarray  # (N, 2) coordinates for LSQ stencils
    points: np.ndarray          # (N, d)
    weights: np.ndarray         # (N,)
    tangent_frames: np.ndarray  # (N, n, d)
    normal_frames: np.ndarray   # (N, m, d)
    stencil_to_frame: np.ndarray  # (N, n, n)
    sff: np.ndarray             # (N, m, n, n)
    mean_curvature: np.ndarray  # (N, d) ambient vectors
    boundary_points: np.ndarray
    boundary_weights: np.ndarray
    boundary_params: np.ndarray
    h: float
    embed: Optional[Callable[[np.ndarray], np.ndarray]] = None
    param_cell: tuple = (0.0, 0.0)  # grid spacing per chart parameter
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.points)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.stencil_coords)
        return self._tree

    def mean_curvature_normal_components(self) -> np.ndarray:
        """(N, m) components of H against the normal frame."""
        return np.einsum("nad,nd->na", self._metric_frames(self.normal_frames),
                         self.mean_curvature)

    def _metric_frames(self, frames: np.ndarray) -> np.ndarray:
        # frames are stored as embedded vectors; pairing uses the ambient metric
        if self.manifold.variant == geometry.HYPERBOLIC:
            g = frames.copy()
            g[..., 0] = -g[..., 0]
            return g
        if self.manifold.variant == geometry.PRODUCT_WITH_LINE and \
                self.manifold.base.variant == geometry.HYPERBOLIC:
            g = frames.copy()
            g[..., 0] = -g[..., 0]
            return g
        return frames

    def tangent_components(self, vectors: np.ndarray) -> np.ndarray:
        """(N, n) components of per-node ambient vectors against the tangent frame."""
        return np.einsum("nad,nd->na", self._metric_frames(self.tangent_frames),
                         vectors)

    def normal_components(self, vectors: np.ndarray) -> np.ndarray:
        return np.einsum("nad,nd->na", self._metric_frames(self.normal_frames),
                         vectors)

    def frame_gram_residual(self) -> float:
        """Worst deviation of the combined frame Gram matrices from identity."""
        frames = np.concatenate([self.tangent_frames, self.normal_frames], axis=1)
        g = np.einsum("nad,nbd->nab", self._metric_frames(frames), frames)
        eye = np.eye(self.n + self.m)
        return float(np.abs(g - eye).max())


def geometry_at_node(mesh: SubmanifoldMesh, node_index: int):
    """Stored extrinsic data at one node: (tangent frame, normal frame, II, H)."""
    if not 0 <= node_index < mesh.node_count:
        raise IndexError(f"node index {node_index} out of range")
    return (mesh.tangent_frames[node_index], mesh.normal_frames[node_index],
            mesh.sff[node_index], mesh.mean_curvature[node_index])


# ---------------------------------------------------------------------------
# builders


def build_submanifold(manifold: ModelManifold, chart_spec,
                      resolution: int) -> SubmanifoldMesh:
    """Construct a quadrature mesh for one of the built-in charts.

    ``resolution`` is the number of radial (or colatitude) subdivisions.
    """
    if isinstance(chart_spec, FlatDisk):
        mesh = _build_flat_disk(manifold, chart_spec, resolution)
    elif isinstance(chart_spec, GraphOverDisk):
        mesh = _build_graph(manifold, chart_spec, resolution)
    elif isinstance(chart_spec, GeodesicBallInSubsphere):
        mesh = _build_sphere_ball(manifold, chart_spec, resolution)
    elif isinstance(chart_spec, GeodesicDiskInHyperbolicSubspace):
        mesh = _build_hyperbolic_disk(manifold, chart_spec, resolution)
    elif isinstance(chart_spec, EquatorialSubsphereBand):
        mesh = _build_equatorial_subsphere(manifold, chart_spec, resolution)
    else:
        raise UnsupportedChartError(f"unknown chart spec {chart_spec!r}")
    if mesh.node_count < MIN_INTERIOR_NODES:
        raise ResolutionTooCoarseError(
            f"{mesh.node_count} interior nodes < {MIN_INTERIOR_NODES}")
    return mesh


def _polar_grid(nr: int, rmax: float, ntheta: Optional[int] = None):
    if ntheta is None:
        ntheta = 4 * nr
    hr = rmax / nr
    ht = 2 * math.pi / ntheta
    r = (np.arange(nr) + 0.5) * hr
    th = (np.arange(ntheta) + 0.5) * ht
    R, T = np.meshgrid(r, th, indexing="ij")
    return R.ravel(), T.ravel(), hr, ht, ntheta


def _build_flat_disk(manifold, spec: FlatDisk, nr: int) -> SubmanifoldMesh:
    if manifold.variant != geometry.EUCLIDEAN:
        raise UnsupportedChartError("FlatDisk requires a Euclidean ambient space")
    m = spec.codim
    if manifold.ambient_dim != 2 + m:
        raise UnsupportedChartError("ambient dimension must equal 2 + codim")
    d = manifold.embedding_dim
    r, th, hr, ht, ntheta = _polar_grid(nr, spec.radius)
    N = len(r)
    params = np.stack([r, th], axis=1)
    u = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    points = np.zeros((N, d))
    points[:, :2] = u
    weights = r * hr * ht
    tangent = np.zeros((N, 2, d))
    tangent[:, 0, 0] = 1.0
    tangent[:, 1, 1] = 1.0
    normal = np.zeros((N, m, d))
    for a in range(m):
        normal[:, a, 2 + a] = 1.0
    thb = (np.arange(ntheta) + 0.5) * ht
    bpts = np.zeros((ntheta, d))
    bpts[:, 0] = spec.radius * np.cos(thb)
    bpts[:, 1] = spec.radius * np.sin(thb)

    def embed(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (d,))
        out[..., 0] = p[..., 0] * np.cos(p[..., 1])
        out[..., 1] = p[..., 0] * np.sin(p[..., 1])
        return out

    return SubmanifoldMesh(
        manifold, 2, m, "flat_disk",
        {"radius": spec.radius, "codim": m},
        params, u, points, weights, tangent, normal,
        np.broadcast_to(np.eye(2), (N, 2, 2)).copy(),
        np.zeros((N, m, 2, 2)), np.zeros((N, d)),
        bpts, np.full(ntheta, spec.radius * ht),
        np.stack([np.full(ntheta, spec.radius), thb], axis=1),
        h=hr, embed=embed, param_cell=(hr, ht))


def _build_graph(manifold, spec: GraphOverDisk, nr: int) -> SubmanifoldMesh:
    if manifold.variant != geometry.EUCLIDEAN:
        raise UnsupportedChartError("GraphOverDisk requires a Euclidean ambient space")
    m = spec.codim
    if manifold.ambient_dim != 2 + m:
        raise UnsupportedChartError("ambient dimension must equal 2 + codim")
    d = manifold.embedding_dim
    hval, hgrad, hhess = height_from_expression(spec.height)
    r, th, hr, ht, ntheta = _polar_grid(nr, spec.radius)
    N = len(r)
    params = np.stack([r, th], axis=1)
    u = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)

    def embed_u(uu):
        uu = np.asarray(uu, dtype=float)
        out = np.zeros(uu.shape[:-1] + (d,))
        out[..., :2] = uu
        out[..., 2] = hval(uu)
        return out

    points = embed_u(u)
    g = hgrad(u)                      # (N, 2)
    gnorm2 = np.sum(g * g, axis=1)
    weights = np.sqrt(1.0 + gnorm2) * r * hr * ht

    # chart basis dX/du_i, orthonormalized by QR per node
    J = np.zeros((N, 2, d))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 0, 2] = g[:, 0]
    J[:, 1, 2] = g[:, 1]
    tangent = np.zeros((N, 2, d))
    s2f = np.zeros((N, 2, 2))
    for i in range(N):
        q, rr = np.linalg.qr(J[i].T)   # (d,2), (2,2)
        sign = np.sign(np.diag(rr))
        sign[sign == 0] = 1.0
        q = q * sign
        rr = sign[:, None] * rr
        tangent[i] = q.T
        s2f[i] = np.linalg.inv(rr).T

    normal = np.zeros((N, m, d))
    nu1 = np.zeros((N, d))
    nu1[:, 0] = -g[:, 0]
    nu1[:, 1] = -g[:, 1]
    nu1[:, 2] = 1.0
    nu1 /= np.sqrt(1.0 + gnorm2)[:, None]
    normal[:, 0] = nu1
    for a in range(1, m):
        normal[:, a, 2 + a] = 1.0

    Huu = hhess(u)                    # (N, 2, 2) chart Hessian of the height
    # II in the orthonormal tangent frame; only the graph normal sees it
    II_frame = np.einsum("nai,nij,nbj->nab", s2f, Huu, s2f)
    cosg = 1.0 / np.sqrt(1.0 + gnorm2)
    sff = np.zeros((N, m, 2, 2))
    sff[:, 0] = II_frame * cosg[:, None, None]
    H = (np.trace(sff[:, 0], axis1=1, axis2=2))[:, None] * nu1

    thb = (np.arange(ntheta) + 0.5) * ht
    ub = np.stack([spec.radius * np.cos(thb), spec.radius * np.sin(thb)], axis=1)
    bpts = embed_u(ub)
    gb = hgrad(ub)
    # |dX/dtheta| along the boundary circle
    tb = np.stack([-ub[:, 1], ub[:, 0]], axis=1)
    dh = np.sum(gb * tb, axis=1)
    bspeed = np.sqrt(np.sum(tb * tb, axis=1) + dh * dh)

    def embed(p):
        p = np.asarray(p, dtype=float)
        uu = np.stack([p[..., 0] * np.cos(p[..., 1]),
                       p[..., 0] * np.sin(p[..., 1])], axis=-1)
        return embed_u(uu)

    return SubmanifoldMesh(
        manifold, 2, m, "graph_over_disk",
        {"radius": spec.radius, "codim": m, "height": spec.height},
        params, u, points, weights, tangent, normal, s2f, sff, H,
        bpts, bspeed * ht,
        np.stack([np.full(ntheta, spec.radius), thb], axis=1),
        h=hr, embed=embed, param_cell=(hr, ht))


def _build_sphere_ball(manifold, spec: GeodesicBallInSubsphere,
                       nr: int) -> SubmanifoldMesh:
    if manifold.variant != geometry.SPHERE:
        raise UnsupportedChartError("GeodesicBallInSubsphere requires a sphere")
    if manifold.ambient_dim < 3:
        raise UnsupportedChartError("ambient sphere dimension must be >= 3")
    R = manifold.radius
    if not 0 < spec.radius < math.pi * R:
        raise UnsupportedChartError("ball radius must lie in (0, pi R)")
    d = manifold.embedding_dim
    m = manifold.ambient_dim - 2
    amax = spec.radius / R
    al, ph, ha, hp, nphi = _polar_grid(nr, amax)
    N = len(al)
    params = np.stack([al, ph], axis=1)
    points = np.zeros((N, d))
    points[:, 0] = R * np.sin(al) * np.cos(ph)
    points[:, 1] = R * np.sin(al) * np.sin(ph)
    points[:, 2] = R * np.cos(al)
    weights = R**2 * np.sin(al) * ha * hp
    tangent = np.zeros((N, 2, d))
    tangent[:, 0, 0] = np.cos(al) * np.cos(ph)
    tangent[:, 0, 1] = np.cos(al) * np.sin(ph)
    tangent[:, 0, 2] = -np.sin(al)
    tangent[:, 1, 0] = -np.sin(ph)
    tangent[:, 1, 1] = np.cos(ph)
    normal = np.zeros((N, m, d))
    for a in range(m):
        normal[:, a, 3 + a] = 1.0
    # geodesic normal coordinates around the pole for stencil fits
    w = np.stack([R * al * np.cos(ph), R * al * np.sin(ph)], axis=1)
    s2f = np.zeros((N, 2, 2))
    wr = np.stack([np.cos(ph), np.sin(ph)], axis=1)
    wt = np.stack([-np.sin(ph), np.cos(ph)], axis=1)
    s2f[:, 0] = wr
    s2f[:, 1] = (al / np.sin(al))[:, None] * wt

    phb = (np.arange(nphi) + 0.5) * hp
    bpts = np.zeros((nphi, d))
    bpts[:, 0] = R * np.sin(amax) * np.cos(phb)
    bpts[:, 1] = R * np.sin(amax) * np.sin(phb)
    bpts[:, 2] = R * np.cos(amax)

    def embed(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (d,))
        out[..., 0] = R * np.sin(p[..., 0]) * np.cos(p[..., 1])
        out[..., 1] = R * np.sin(p[..., 0]) * np.sin(p[..., 1])
        out[..., 2] = R * np.cos(p[..., 0])
        return out

    return SubmanifoldMesh(
        manifold, 2, m, "sphere_geodesic_ball", {"radius": spec.radius},
        params, w, points, weights, tangent, normal, s2f,
        np.zeros((N, m, 2, 2)), np.zeros((N, d)),
        bpts, np.full(nphi, R * math.sin(amax) * hp),
        np.stack([np.full(nphi, amax), phb], axis=1),
        h=R * ha, embed=embed, param_cell=(ha, hp))


def _build_hyperbolic_disk(manifold, spec: GeodesicDiskInHyperbolicSubspace,
                           nr: int) -> SubmanifoldMesh:
    if manifold.variant != geometry.HYPERBOLIC:
        raise UnsupportedChartError(
            "GeodesicDiskInHyperbolicSubspace requires a hyperbolic ambient space")
    if manifold.ambient_dim < 3:
        raise UnsupportedChartError("ambient dimension must be >= 3")
    R = manifold.radius
    d = manifold.embedding_dim
    m = manifold.ambient_dim - 2
    amax = spec.radius / R
    al, ph, ha, hp, nphi = _polar_grid(nr, amax)
    N = len(al)
    params = np.stack([al, ph], axis=1)
    points = np.zeros((N, d))
    points[:, 0] = R * np.cosh(al)
    points[:, 1] = R * np.sinh(al) * np.cos(ph)
    points[:, 2] = R * np.sinh(al) * np.sin(ph)
    weights = R**2 * np.sinh(al) * ha * hp
    tangent = np.zeros((N, 2, d))
    tangent[:, 0, 0] = np.sinh(al)
    tangent[:, 0, 1] = np.cosh(al) * np.cos(ph)
    tangent[:, 0, 2] = np.cosh(al) * np.sin(ph)
    tangent[:, 1, 1] = -np.sin(ph)
    tangent[:, 1, 2] = np.cos(ph)
    normal = np.zeros((N, m, d))
    for a in range(m):
        normal[:, a, 3 + a] = 1.0
    w = np.stack([R * al * np.cos(ph), R * al * np.sin(ph)], axis=1)
    s2f = np.zeros((N, 2, 2))
    wr = np.stack([np.cos(ph), np.sin(ph)], axis=1)
    wt = np.stack([-np.sin(ph), np.cos(ph)], axis=1)
    s2f[:, 0] = wr
    s2f[:, 1] = (al / np.sinh(al))[:, None] * wt

    phb = (np.arange(nphi) + 0.5) * hp
    bpts = np.zeros((nphi, d))
    bpts[:, 0] = R * math.cosh(amax)
    bpts[:, 1] = R * math.sinh(amax) * np.cos(phb)
    bpts[:, 2] = R * math.sinh(amax) * np.sin(phb)

    def embed(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (d,))
        out[..., 0] = R * np.cosh(p[..., 0])
        out[..., 1] = R * np.sinh(p[..., 0]) * np.cos(p[..., 1])
        out[..., 2] = R * np.sinh(p[..., 0]) * np.sin(p[..., 1])
        return out

    return SubmanifoldMesh(
        manifold, 2, m, "hyperbolic_geodesic_disk", {"radius": spec.radius},
        params, w, points, weights, tangent, normal, s2f,
        np.zeros((N, m, 2, 2)), np.zeros((N, d)),
        bpts, np.full(nphi, R * math.sinh(amax) * hp),
        np.stack([np.full(nphi, amax), phb], axis=1),
        h=R * ha, embed=embed, param_cell=(ha, hp))


def _build_equatorial_subsphere(manifold, spec: EquatorialSubsphereBand,
                                nr: int) -> SubmanifoldMesh:
    if manifold.variant != geometry.SPHERE or manifold.ambient_dim != 3:
        raise UnsupportedChartError(
            "EquatorialSubsphereBand requires the ambient 3-sphere")
    R = manifold.radius
    d = manifold.embedding_dim
    ha = math.pi / (2 * nr)
    nphi = 4 * nr
    hp = 2 * math.pi / nphi
    al = (np.arange(2 * nr) + 0.5) * ha
    ph = (np.arange(nphi) + 0.5) * hp
    A, P = np.meshgrid(al, ph, indexing="ij")
    al, ph = A.ravel(), P.ravel()
    N = len(al)
    params = np.stack([al, ph], axis=1)
    points = np.zeros((N, d))
    points[:, 0] = R * np.sin(al) * np.cos(ph)
    points[:, 1] = R * np.sin(al) * np.sin(ph)
    points[:, 2] = R * np.cos(al)
    weights = R**2 * np.sin(al) * ha * hp
    tangent = np.zeros((N, 2, d))
    tangent[:, 0, 0] = np.cos(al) * np.cos(ph)
    tangent[:, 0, 1] = np.cos(al) * np.sin(ph)
    tangent[:, 0, 2] = -np.sin(al)
    tangent[:, 1, 0] = -np.sin(ph)
    tangent[:, 1, 1] = np.cos(ph)
    normal = np.zeros((N, 1, d))
    normal[:, 0, 3] = 1.0
    w = np.stack([R * al * np.cos(ph), R * al * np.sin(ph)], axis=1)
    s2f = np.zeros((N, 2, 2))
    s2f[:, 0] = np.stack([np.cos(ph), np.sin(ph)], axis=1)
    s2f[:, 1] = (al / np.sin(al))[:, None] * np.stack([-np.sin(ph), np.cos(ph)], axis=1)

    def embed(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (d,))
        out[..., 0] = R * np.sin(p[..., 0]) * np.cos(p[..., 1])
        out[..., 1] = R * np.sin(p[..., 0]) * np.sin(p[..., 1])
        out[..., 2] = R * np.cos(p[..., 0])
        return out

    return SubmanifoldMesh(
        manifold, 2, 1, "equatorial_subsphere", {},
        params, w, points, weights, tangent, normal, s2f,
        np.zeros((N, 1, 2, 2)), np.zeros((N, d)),
        np.zeros((0, d)), np.zeros(0), np.zeros((0, 2)),
        h=R * ha, embed=embed, param_cell=(ha, hp))


def boundary_stencil_coords(mesh: SubmanifoldMesh) -> np.ndarray:
    """Stencil coordinates of the boundary quadrature nodes."""
    p = mesh.boundary_params
    if len(p) == 0:
        return np.zeros((0, mesh.n))
    if mesh.chart_id in ("flat_disk", "graph_over_disk"):
        return np.stack([p[:, 0] * np.cos(p[:, 1]),
                         p[:, 0] * np.sin(p[:, 1])], axis=1)
    if mesh.chart_id in ("sphere_geodesic_ball", "hyperbolic_geodesic_disk"):
        R = mesh.manifold.radius
        return np.stack([R * p[:, 0] * np.cos(p[:, 1]),
                         R * p[:, 0] * np.sin(p[:, 1])], axis=1)
    raise UnsupportedChartError(
        f"no boundary chart coordinates for {mesh.chart_id}")


# ---------------------------------------------------------------------------
# integration and derivatives


def integrate(mesh: SubmanifoldMesh, values: np.ndarray,
              region: str = "interior") -> float:
    """Weighted sum of a per-node field over the interior or the boundary."""
    values = np.asarray(values, dtype=float)
    if region == "interior":
        w = mesh.weights
    elif region == "boundary":
        w = mesh.boundary_weights
    else:
        raise ValueError(f"unknown region {region!r}")
    if values.shape != w.shape:
        raise LengthMismatchError(
            f"field length {values.shape} != region length {w.shape}")
    return float(np.dot(values, w))


def intrinsic_gradient(mesh: SubmanifoldMesh, f: ScalarField,
                       stencil_radius: float = 2.0) -> np.ndarray:
    """Per-node tangent-frame components of the surface gradient of f."""
    if f.grad_chart is not None:
        g = f.grad_chart(mesh.stencil_coords)
        return np.einsum("nab,nb->na", mesh.stencil_to_frame, g)
    g = _lsq_gradient(mesh, f.values, stencil_radius)
    return np.einsum("nab,nb->na", mesh.stencil_to_frame, g)


def _lsq_gradient(mesh: SubmanifoldMesh, values: np.ndarray,
                  stencil_radius: float = 2.0) -> np.ndarray:
    """Linear least-squares fit of d(values)/d(stencil coords), ridge 1e-12."""
    tree = mesh.tree()
    N = mesh.node_count
    out = np.zeros((N, mesh.n))
    rad = stencil_radius * mesh.h
    groups = tree.query_ball_point(mesh.stencil_coords, rad)
    for i in range(N):
        idx = groups[i]
        if len(idx) < mesh.n + 1:
            raise DegenerateStencilError(f"node {i}: only {len(idx)} neighbors")
        dw = mesh.stencil_coords[idx] - mesh.stencil_coords[i]
        A = np.column_stack([np.ones(len(idx)), dw])
        b = values[idx]
        ata = A.T @ A + 1e-12 * np.eye(A.shape[1])
        sol = np.linalg.solve(ata, A.T @ b)
        out[i] = sol[1:]
    return out


def lsq_hessian(mesh: SubmanifoldMesh, values: np.ndarray,
                stencil_radius: float = 3.0) -> np.ndarray:
    """Quadratic least-squares Hessian in frame coordinates, symmetrized.

    Desk-scale surrogate for the Alexandrov Hessian: local quadratic fit
    over chart neighbors within ``stencil_radius * h``.
    """
    tree = mesh.tree()
    N = mesh.node_count
    hess = np.zeros((N, mesh.n, mesh.n))
    rad = stencil_radius * mesh.h
    groups = tree.query_ball_point(mesh.stencil_coords, rad)
    for i in range(N):
        idx = groups[i]
        if len(idx) < 6:
            raise DegenerateStencilError(f"node {i}: only {len(idx)} neighbors")
        dw = mesh.stencil_coords[idx] - mesh.stencil_coords[i]
        A = np.column_stack([
            np.ones(len(idx)), dw[:, 0], dw[:, 1],
            0.5 * dw[:, 0] ** 2, dw[:, 0] * dw[:, 1], 0.5 * dw[:, 1] ** 2,
        ])
        ata = A.T @ A + 1e-12 * np.eye(6)
        sol = np.linalg.solve(ata, A.T @ values[idx])
        hw = np.array([[sol[3], sol[4]], [sol[4], sol[5]]])
        a = mesh.stencil_to_frame[i]
        hf = a @ hw @ a.T
        hess[i] = 0.5 * (hf + hf.T)
    return hess


# ---------------------------------------------------------------------------
# tubular neighborhood volume (Monte Carlo)


@dataclass
class TubularVolumeResult:
    tube_volume: float
    standard_error: float
    complement_volume: Optional[float]
    ambient_volume: float
    samples: int


def distance_to_mesh(mesh: SubmanifoldMesh, pts: np.ndarray,
                     refine: int = 5) -> np.ndarray:
    """Min geodesic distance from each query point to the submanifold.

    Nearest-node search refined by a micro-grid in the chart cell around
    the nearest node.
    """
    M = mesh.manifold
    D = geometry.pairwise_distances(M, np.asarray(pts, float), mesh.points)
    nearest = np.argmin(D, axis=1)
    base = D[np.arange(len(pts)), nearest]
    if mesh.embed is None or refine <= 1:
        return base
    ca, cb = mesh.param_cell
    da = np.linspace(-0.5 * ca, 0.5 * ca, refine)
    db = np.linspace(-0.5 * cb, 0.5 * cb, refine)
    DA, DB = np.meshgrid(da, db, indexing="ij")
    offsets = np.stack([DA.ravel(), DB.ravel()], axis=1)  # (K, 2)
    cand = mesh.params[nearest][:, None, :] + offsets[None, :, :]
    # clamp the radial-type parameter into its valid range
    if mesh.chart_id in ("flat_disk", "graph_over_disk"):
        rmax = mesh.chart_args["radius"]
        cand[..., 0] = np.clip(cand[..., 0], 0.0, rmax)
    elif mesh.chart_id in ("sphere_geodesic_ball", "hyperbolic_geodesic_disk"):
        amax = mesh.params[:, 0].max() + 0.5 * ca
        cand[..., 0] = np.clip(cand[..., 0], 0.0, amax)
    elif mesh.chart_id == "equatorial_subsphere":
        cand[..., 0] = np.clip(cand[..., 0], 0.0, math.pi)
    cpts = mesh.embed(cand)  # (P, K, d)
    dists = geometry.distance(M, np.asarray(pts, float)[:, None, :], cpts)
    return np.minimum(base, dists.min(axis=1))


def ambient_samples(M: ModelManifold, n: int, rng: np.random.Generator,
                    bounding_center=None, bounding_radius=None):
    """Uniform samples of the ambient space (sphere) or a bounding ball."""
    if M.variant == geometry.SPHERE:
        g = rng.standard_normal((n, M.embedding_dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return M.radius * g, geometry.manifold_volume(M)
    if M.variant == geometry.EUCLIDEAN:
        if bounding_radius is None:
            raise UnboundedDomainError(
                "noncompact ambient space needs a bounding ball")
        d = M.embedding_dim
        center = np.zeros(d) if bounding_center is None else np.asarray(
            bounding_center, float)
        dirs = rng.standard_normal((n, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = bounding_radius * rng.random(n) ** (1.0 / d)
        vol = geometry.ball_volume(d) * bounding_radius**d
        return center + radii[:, None] * dirs, vol
    raise UnboundedDomainError(
        f"uniform ambient sampling unsupported for variant {M.variant}")


def tubular_volume(manifold: ModelManifold, mesh: SubmanifoldMesh, eps: float,
                   seed: int, n_samples: int = 20000,
                   bounding_center=None,
                   bounding_radius=None) -> TubularVolumeResult:
    """Monte Carlo estimate of vol(N_eps), reproducible for a fixed seed."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    pts, vol_ambient = ambient_samples(manifold, n_samples, rng,
                                       bounding_center, bounding_radius)
    inside = np.zeros(n_samples, dtype=bool)
    chunk = 4096
    for k in range(0, n_samples, chunk):
        dist = distance_to_mesh(mesh, pts[k:k + chunk])
        inside[k:k + chunk] = dist <= eps
    p = inside.mean()
    est = vol_ambient * p
    se = vol_ambient * math.sqrt(max(p * (1 - p), 0.0) / n_samples)
    comp = vol_ambient - est if manifold.is_compact else None
    return TubularVolumeResult(est, se, comp, vol_ambient, n_samples)


# ---------------------------------------------------------------------------
# export / import

_MESH_FORMAT_VERSION = 1


def write_mesh(mesh: SubmanifoldMesh, path) -> None:
    """Serialize a mesh to the documented structured-text record."""
    buf = io.StringIO()
    buf.write(f"otsobolev-mesh {_MESH_FORMAT_VERSION}\n")
    buf.write(f"chart {mesh.chart_id}\n")
    for k, v in sorted(mesh.chart_args.items()):
        buf.write(f"arg {k} {v!r}\n")
    buf.write(f"manifold {mesh.manifold.variant} {mesh.manifold.ambient_dim} "
              f"{mesh.manifold.curvature!r}\n")
    buf.write(f"dims {mesh.n} {mesh.m}\n")
    buf.write(f"spacing {mesh.h!r} {mesh.param_cell[0]!r} {mesh.param_cell[1]!r}\n")
    buf.write(f"nodes {mesh.node_count}\n")
    for i in range(mesh.node_count):
        row = np.concatenate([
            mesh.params[i], mesh.stencil_coords[i], [mesh.weights[i]],
            mesh.points[i], mesh.tangent_frames[i].ravel(),
            mesh.normal_frames[i].ravel(), mesh.stencil_to_frame[i].ravel(),
            mesh.sff[i].ravel(), mesh.mean_curvature[i],
        ])
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    buf.write(f"boundary {len(mesh.boundary_points)}\n")
    for i in range(len(mesh.boundary_points)):
        row = np.concatenate([
            mesh.boundary_params[i], [mesh.boundary_weights[i]],
            mesh.boundary_points[i],
        ])
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def read_mesh(path) -> SubmanifoldMesh:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    it = iter(lines)
    header = next(it).split()
    if header[0] != "otsobolev-mesh" or int(header[1]) != _MESH_FORMAT_VERSION:
        raise ValueError("not a mesh record of a supported version")
    chart_id = next(it).split(maxsplit=1)[1]
    chart_args = {}
    line = next(it)
    while line.startswith("arg "):
        _, key, val = line.split(maxsplit=2)
        chart_args[key] = ast.literal_eval(val)
        line = next(it)
    _, variant, adim, curv = line.split()
    if variant == geometry.EUCLIDEAN:
        manifold = geometry.euclidean(int(adim))
    elif variant == geometry.SPHERE:
        manifold = geometry.sphere(int(adim), float(curv))
    elif variant == geometry.HYPERBOLIC:
        manifold = geometry.hyperbolic(int(adim), float(curv))
    else:
        raise ValueError(f"cannot import meshes on variant {variant}")
    n, m = map(int, next(it).split()[1:])
    h, ca, cb = map(float, next(it).split()[1:])
    count = int(next(it).split()[1])
    d = manifold.embedding_dim
    widths = [2, 2, 1, d, n * d, m * d, n * n, m * n * n, d]
    rows = np.array([[float(x) for x in next(it).split()] for _ in range(count)])
    cuts = np.cumsum(widths)[:-1]
    (params, stencil, w, pts, tf, nf, s2f, sff, H) = np.split(rows, cuts, axis=1)
    bcount = int(next(it).split()[1])
    brows = np.array([[float(x) for x in next(it).split()] for _ in range(bcount)])
    if bcount:
        bparams, bw, bpts = np.split(brows, [2, 3], axis=1)
    else:
        bparams = np.zeros((0, 2))
        bw = np.zeros((0, 1))
        bpts = np.zeros((0, d))
    mesh = SubmanifoldMesh(
        manifold, n, m, chart_id, chart_args,
        params, stencil, pts, w.ravel(),
        tf.reshape(count, n, d), nf.reshape(count, m, d),
        s2f.reshape(count, n, n), sff.reshape(count, m, n, n), H,
        bpts, bw.ravel(), bparams, h=h, param_cell=(ca, cb))
    # rebuild the chart embedding for distance refinement
    try:
        rebuilt = _rebuild_embed(manifold, chart_id, chart_args)
        mesh.embed = rebuilt
    except UnsupportedChartError:
        mesh.embed = None
    return mesh


def _rebuild_embed(manifold, chart_id, chart_args):
    spec_by_id = {
        "flat_disk": lambda a: FlatDisk(a["radius"], a.get("codim", 2)),
        "graph_over_disk": lambda a: GraphOverDisk(a["radius"], a["height"],
                                                   a.get("codim", 2)),
        "sphere_geodesic_ball": lambda a: GeodesicBallInSubsphere(a["radius"]),
        "hyperbolic_geodesic_disk":
            lambda a: GeodesicDiskInHyperbolicSubspace(a["radius"]),
        "equatorial_subsphere": lambda a: EquatorialSubsphereBand(),
    }
    if chart_id not in spec_by_id:
        raise UnsupportedChartError(chart_id)
    tiny = build_submanifold(manifold, spec_by_id[chart_id](chart_args), 4)
    return tiny.embed
