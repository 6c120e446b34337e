"""Layer and volume potentials for the Laplace kernel.

All operators here use the fundamental solution -1/(4 pi |x - y|) and the
package-wide normal convention (surface normals point out of the exterior
domain, toward the origin for the unit sphere).  Sign ledger, fixed once:

* single layer     S rho(y) = + int_S rho(x) / (4 pi |x - y|) dS(x)
* double layer     D rho(y) = - int_S n(x).grad_x[-1/(4 pi |x-y|)] rho dS(x)
* newton potential N f(y)   = - int_V f(x) / (4 pi |x - y|) dx

so that on the unit sphere S[1](y) = 1/max(1, |y|) and D[1] is 1 in the
bounded complement, 0 in the exterior domain, and 1/2 in the principal-value
sense on the surface.  Direct values on the surface integrate with a Duffy
rule (single layer) or skip the flat panels through the collocation point
(double layer, exact for flat panels).
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import quadrature as quad
from .geometry import SurfaceMesh, VolumeMesh

FOUR_PI = 4.0 * np.pi

SPACE_TRIANGLE = "triangle-constant"
SPACE_VERTEX = "vertex-linear"
SUPPORT_ALL = "all"
SUPPORT_D = "D"
SUPPORT_N = "N"


# --- kernels ----------------------------------------------------------------

def fundamental_solution(x, y) -> np.ndarray:
    """Parametrix numerator -1/(4 pi |x - y|); broadcasts over leading axes."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.sqrt((d * d).sum(axis=-1))
    return -1.0 / (FOUR_PI * r)

def grad_fundamental_solution(x, y) -> np.ndarray:
    """Gradient in x of the fundamental solution: (x - y)/(4 pi |x - y|^3)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.sqrt((d * d).sum(axis=-1))
    return d / (FOUR_PI * r**3)[..., None]


def single_layer_kernel(nodes, normals, target):
    d = nodes - target[None, :]
    r = np.sqrt((d * d).sum(axis=-1))
    return 1.0 / (FOUR_PI * r)


def double_layer_kernel(nodes, normals, target):
    # -n(x) . grad_x fund_solution = -n.(x-y)/(4 pi |x-y|^3)
    d = nodes - target[None, :]
    r = np.sqrt((d * d).sum(axis=-1))
    return -np.einsum("...j,...j->...", normals, d) / (FOUR_PI * r**3)


# --- densities ---------------------------------------------------------------

@dataclass
class BoundaryDensity:
    """Discrete surface density.

    space_tag "triangle-constant" carries one coefficient per triangle;
    "vertex-linear" one per vertex (continuous piecewise-linear).  The
    support_tag restricts where coefficients may be nonzero: "D"/"N" limit a
    triangle-constant density to one part, and a vertex-linear density to
    vertices strictly interior to that part (zero on the interface).
    """

    space_tag: str
    support_tag: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.space_tag not in (SPACE_TRIANGLE, SPACE_VERTEX):
            raise ValueError(f"unknown space_tag {self.space_tag!r}")
        if self.support_tag not in (SUPPORT_ALL, SUPPORT_D, SUPPORT_N):
            raise ValueError(f"unknown support_tag {self.support_tag!r}")

    def validate_support(self, mesh: SurfaceMesh) -> None:
        n = mesh.n_triangles if self.space_tag == SPACE_TRIANGLE else mesh.n_vertices
        if self.values.shape != (n,):
            raise ValueError("density length does not match mesh")
        if self.support_tag == SUPPORT_ALL:
            return
        if mesh.part_label is None:
            raise ValueError("support restriction needs a partitioned mesh")
        if self.space_tag == SPACE_TRIANGLE:
            off = mesh.part_label != self.support_tag
        else:
            off = mesh.vertex_class != self.support_tag
        if np.any(self.values[off] != 0.0):
            raise ValueError(f"density has mass outside part {self.support_tag!r}")


@dataclass
class DomainDensity:
    """Cell-wise constant density on a volume mesh."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class OperatorBlock:
    """Dense operator matrix with target/basis descriptors."""

    matrix: np.ndarray
    row_meta: dict
    col_meta: dict

    @property
    def shape(self):
        return self.matrix.shape


# --- collocation -------------------------------------------------------------

KIND_FREE = "free"
KIND_CENTROID = "centroid"
KIND_VERTEX = "vertex"


@dataclass
class Collocation:
    """Evaluation points with their registration on the surface.

    Registered points (panel centroids or mesh vertices) get singular
    quadrature on the panels that contain them; free points must keep a
    positive distance from the surface for plain rules to apply.
    """

    points: np.ndarray
    kinds: list
    indices: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def free(points) -> "Collocation":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return Collocation(pts, [KIND_FREE] * len(pts), np.full(len(pts), -1))

    @staticmethod
    def centroids(mesh: SurfaceMesh, tri_indices=None) -> "Collocation":
        idx = np.arange(mesh.n_triangles) if tri_indices is None else np.asarray(tri_indices)
        return Collocation(mesh.centroids[idx], [KIND_CENTROID] * len(idx), idx)

    @staticmethod
    def vertices(mesh: SurfaceMesh, vert_indices=None) -> "Collocation":
        idx = np.arange(mesh.n_vertices) if vert_indices is None else np.asarray(vert_indices)
        return Collocation(mesh.vertices[idx], [KIND_VERTEX] * len(idx), idx)

    @staticmethod
    def concat(parts) -> "Collocation":
        return Collocation(
            np.concatenate([p.points for p in parts]),
            sum((p.kinds for p in parts), []),
            np.concatenate([p.indices for p in parts]),
        )


def _as_collocation(targets) -> Collocation:
    if isinstance(targets, Collocation):
        return targets
    return Collocation.free(targets)


# --- quadrature configuration and panel caches -------------------------------

@dataclass(frozen=True)
class QuadConfig:
    """Scheme-selection knobs shared by all surface operators."""

    far_order: int = quad.FAR_ORDER
    near_order: int = quad.NEAR_ORDER
    levels: int = quad.SUBDIVISION_LEVELS
    near_threshold: float = quad.NEAR_THRESHOLD
    duffy_order: int = quad.DUFFY_ORDER


DEFAULT_QUAD = QuadConfig()


class _PanelCache:
    """Per-mesh physical quadrature nodes for the far and near rules."""

    def __init__(self, mesh: SurfaceMesh, cfg: QuadConfig):
        corners = mesh.corners()
        fpts, fwts = quad.gauss_triangle(cfg.far_order)
        npts, nwts = quad.subdivided_triangle_rule(cfg.near_order, cfg.levels)
        self.far_nodes, self.far_wts = quad.map_to_panel(corners, fpts, fwts)
        self.near_nodes, self.near_wts = quad.map_to_panel(corners, npts, nwts)
        self.far_bary = np.stack([1 - fpts[:, 0] - fpts[:, 1], fpts[:, 0], fpts[:, 1]], 1)
        self.near_bary = np.stack([1 - npts[:, 0] - npts[:, 1], npts[:, 0], npts[:, 1]], 1)
        # Star panels per vertex, for vertex-registered targets.
        self.vertex_star = [[] for _ in range(mesh.n_vertices)]
        for t, tri in enumerate(mesh.triangles):
            for v in tri:
                self.vertex_star[v].append(t)


def _panel_cache(mesh: SurfaceMesh, cfg: QuadConfig) -> _PanelCache:
    store = getattr(mesh, "_panel_caches", None)
    if store is None:
        store = {}
        object.__setattr__(mesh, "_panel_caches", store)
    if cfg not in store:
        store[cfg] = _PanelCache(mesh, cfg)
    return store[cfg]


# --- density adapters ---------------------------------------------------------

class _NodeDensity:
    """Evaluates density * optional smooth factor at rule nodes of panels."""

    def __init__(self, mesh, density=None, fn=None, factor=None):
        self.mesh = mesh
        self.density = density
        self.fn = fn
        self.factor = factor
        if density is not None and density.space_tag == SPACE_VERTEX:
            self.vert_vals = density.values
        else:
            self.vert_vals = None

    def values(self, tri_idx, nodes, bary, normals):
        # nodes: (n_sel, n_q, 3); bary: (n_q, 3) or (n_sel, n_q, 3)
        if self.density is None and self.fn is None:
            out = np.ones(nodes.shape[:-1])
        elif self.fn is not None:
            out = np.asarray(self.fn(nodes), dtype=float)
        elif self.density.space_tag == SPACE_TRIANGLE:
            out = np.broadcast_to(
                self.density.values[tri_idx][:, None], nodes.shape[:-1]
            ).copy()
        else:
            corner_vals = self.vert_vals[self.mesh.triangles[tri_idx]]  # (n_sel, 3)
            if bary.ndim == 2:
                out = np.einsum("qk,sk->sq", bary, corner_vals)
            else:
                out = np.einsum("sqk,sk->sq", bary, corner_vals)
        if self.factor is not None:
            out = out * self.factor(nodes, normals)
        return out


# --- the assembly engine -------------------------------------------------------

def _singular_panels(cache: _PanelCache, kind: str, index: int):
    if kind == KIND_CENTROID:
        return [int(index)]
    if kind == KIND_VERTEX:
        return list(cache.vertex_star[int(index)])
    return []


def _duffy_contribution(mesh, cfg, kernel, dens, panel, target):
    corners = mesh.corners()[panel]
    duffy = quad._duffy_nodes_for_target(corners, target, cfg.duffy_order)
    if duffy is None:
        # Unregistered on-panel target: fall back to the near rule.
        pts, wts = quad._cached("subdiv", cfg.near_order, cfg.levels)
        duffy = quad.map_to_panel(corners, pts, wts)
    nodes, w = duffy
    normals = np.broadcast_to(mesh.normals[panel], nodes.shape)
    bary = _barycentric(corners, nodes)
    vals = kernel(nodes[None], normals[None], target)[0]
    g = dens.values(np.array([panel]), nodes[None], bary[None], normals[None])[0]
    return float(np.dot(w, vals * g)), np.dot(w * vals * g, bary)


def _barycentric(corners, nodes):
    e1 = corners[1] - corners[0]
    e2 = corners[2] - corners[0]
    d = nodes - corners[0]
    d11, d12, d22 = e1 @ e1, e1 @ e2, e2 @ e2
    det = d11 * d22 - d12**2
    p1 = d @ e1
    p2 = d @ e2
    s = (d22 * p1 - d12 * p2) / det
    t = (d11 * p2 - d12 * p1) / det
    return np.stack([1 - s - t, s, t], axis=-1)


def _surface_rows(
    mesh: SurfaceMesh,
    kernel: Callable,
    colloc: Collocation,
    dens: _NodeDensity,
    cfg: QuadConfig,
    singular_scheme: str,
    tri_mask: Optional[np.ndarray],
    matrix_space: Optional[str],
    workers: int = 1,
):
    """Core target-loop: returns values (m,) or a dense matrix.

    ``singular_scheme`` is "duffy" for weakly singular kernels or "skip" for
    the principal-value double layer (flat panels through the collocation
    point contribute zero exactly).
    """
    cache = _panel_cache(mesh, cfg)
    corners = mesh.corners()
    m = colloc.n
    if matrix_space is None:
        out = np.zeros(m)
    elif matrix_space == SPACE_TRIANGLE:
        out = np.zeros((m, mesh.n_triangles))
    else:
        out = np.zeros((m, mesh.n_vertices))
    active = np.ones(mesh.n_triangles, dtype=bool) if tri_mask is None else tri_mask

    def do_row(i):
        target = colloc.points[i]
        sing = _singular_panels(cache, colloc.kinds[i], colloc.indices[i])
        d = quad.point_triangle_distance(target, corners)
        regular = active.copy()
        for p in sing:
            regular[p] = False
        far = regular & (d >= cfg.near_threshold * mesh.diameters)
        near = regular & ~far
        row_val = 0.0
        for sel_mask, nodes_all, wts_all, bary in (
            (far, cache.far_nodes, cache.far_wts, cache.far_bary),
            (near, cache.near_nodes, cache.near_wts, cache.near_bary),
        ):
            sel = np.nonzero(sel_mask)[0]
            if sel.size == 0:
                continue
            nodes = nodes_all[sel]
            wts = wts_all[sel]
            normals = np.broadcast_to(mesh.normals[sel][:, None, :], nodes.shape)
            vals = kernel(nodes, normals, target)
            g = dens.values(sel, nodes, bary, normals)
            contrib = wts * vals * g                     # (n_sel, n_q)
            if matrix_space is None:
                row_val += contrib.sum()
            elif matrix_space == SPACE_TRIANGLE:
                out[i, sel] += contrib.sum(axis=1)
            else:
                per_vertex = contrib @ bary              # (n_sel, 3)
                np.add.at(out[i], mesh.triangles[sel], per_vertex)
        for p in sing:
            if not active[p] or singular_scheme == "skip":
                continue
            val, per_vert = _duffy_contribution(mesh, cfg, kernel, dens, p, target)
            if matrix_space is None:
                row_val += val
            elif matrix_space == SPACE_TRIANGLE:
                out[i, p] += val
            else:
                np.add.at(out[i], mesh.triangles[p], per_vert)
        if matrix_space is None:
            out[i] = row_val

    _run_rows(do_row, m, workers)
    return out


def _run_rows(do_row, m, workers):
    # Rows are independent and written to disjoint slots, so any worker
    # count yields bit-identical output.
    if workers <= 1:
        for i in range(m):
            do_row(i)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(do_row, range(m)))


def _support_mask(mesh: SurfaceMesh, support: Optional[str]):
    if support in (None, SUPPORT_ALL):
        return None
    return mesh.part_label == support


# --- public surface operators --------------------------------------------------

def single_layer(
    mesh: SurfaceMesh,
    density: Union[BoundaryDensity, Callable],
    targets,
    cfg: QuadConfig = DEFAULT_QUAD,
    factor: Optional[Callable] = None,
    workers: int = 1,
) -> np.ndarray:
    """Single layer potential of a surface density, evaluated at targets.

    Targets may be free points or a Collocation; for registered on-surface
    points the self-panel integral uses a Duffy rule (this is the direct
    value of the operator on the surface).

    Parameters
    ----------
    density : BoundaryDensity or callable(nodes) -> values
    factor : optional callable(nodes, normals) -> values
        Smooth rescaling applied at quadrature nodes.
    """
    colloc = _as_collocation(targets)
    dens = _make_dens(mesh, density, factor)
    mask = None
    if isinstance(density, BoundaryDensity) and density.support_tag != SUPPORT_ALL:
        mask = _support_mask(mesh, density.support_tag)
        if density.space_tag == SPACE_VERTEX:
            mask = None  # vertex support is enforced by zero coefficients
    return _surface_rows(
        mesh, single_layer_kernel, colloc, dens, cfg, "duffy", mask, None, workers
    )


def double_layer(
    mesh: SurfaceMesh,
    density: Union[BoundaryDensity, Callable],
    targets,
    cfg: QuadConfig = DEFAULT_QUAD,
    factor: Optional[Callable] = None,
    workers: int = 1,
) -> np.ndarray:
    """Double layer potential; for registered on-surface targets this is the
    principal value (panels through the target are skipped, exact for flat
    panels)."""
    colloc = _as_collocation(targets)
    dens = _make_dens(mesh, density, factor)
    return _surface_rows(
        mesh, double_layer_kernel, colloc, dens, cfg, "skip", None, None, workers
    )


def _make_dens(mesh, density, factor):
    if isinstance(density, BoundaryDensity):
        return _NodeDensity(mesh, density=density, factor=factor)
    if callable(density):
        return _NodeDensity(mesh, fn=density, factor=factor)
    raise TypeError("density must be a BoundaryDensity or a callable")


def single_layer_matrix(
    mesh: SurfaceMesh,
    space_tag: str,
    targets,
    cfg: QuadConfig = DEFAULT_QUAD,
    factor: Optional[Callable] = None,
    support: Optional[str] = None,
    workers: int = 1,
) -> np.ndarray:
    """Dense single-layer matrix mapping density coefficients to target values."""
    colloc = _as_collocation(targets)
    dens = _NodeDensity(mesh, factor=factor)
    mask = _support_mask(mesh, support) if space_tag == SPACE_TRIANGLE else None
    return _surface_rows(
        mesh, single_layer_kernel, colloc, dens, cfg, "duffy", mask, space_tag, workers
    )


def double_layer_matrix(
    mesh: SurfaceMesh,
    space_tag: str,
    targets,
    cfg: QuadConfig = DEFAULT_QUAD,
    factor: Optional[Callable] = None,
    support: Optional[str] = None,
    workers: int = 1,
) -> np.ndarray:
    """Dense double-layer matrix (principal value at registered targets)."""
    colloc = _as_collocation(targets)
    dens = _NodeDensity(mesh, factor=factor)
    mask = _support_mask(mesh, support) if space_tag == SPACE_TRIANGLE else None
    return _surface_rows(
        mesh, double_layer_kernel, colloc, dens, cfg, "skip", mask, space_tag, workers
    )


# Direct values are the on-surface evaluations; kept as named wrappers since
# they are distinct operators in the integral-equation system.

def single_layer_direct(mesh, density, colloc: Collocation, cfg=DEFAULT_QUAD, factor=None):
    """On-surface (direct) value of the single layer at registered points."""
    _require_registered(colloc)
    return single_layer(mesh, density, colloc, cfg, factor)


def double_layer_direct(mesh, density, colloc: Collocation, cfg=DEFAULT_QUAD, factor=None):
    """Principal value of the double layer at registered points."""
    _require_registered(colloc)
    return double_layer(mesh, density, colloc, cfg, factor)


def _require_registered(colloc: Collocation):
    if not isinstance(colloc, Collocation) or any(k == KIND_FREE for k in colloc.kinds):
        raise ValueError("direct values require registered collocation points")


# --- volume potential -----------------------------------------------------------

def exclusion_radii(volmesh: VolumeMesh, factor: float = 0.5) -> np.ndarray:
    """Per-node exclusion radius: factor times the local node spacing."""
    return np.repeat(factor * volmesh.node_spacing(), volmesh.n_nodes_per_cell)


def newton_potential(
    volmesh: VolumeMesh,
    density: Union[DomainDensity, Callable],
    targets,
    factor: Optional[Callable] = None,
    exclusion_factor: float = 0.5,
    workers: int = 1,
) -> np.ndarray:
    """Volume potential with kernel -1/(4 pi |x - y|) and an exclusion ball.

    Nodes within the per-cell exclusion radius of a target are skipped; the
    omitted mass is O(radius^2) for this kernel.
    """
    targets = np.atleast_2d(np.asarray(
        targets.points if isinstance(targets, Collocation) else targets, dtype=float
    ))
    nodes = volmesh.all_nodes()
    wts = volmesh.all_weights().copy()
    if isinstance(density, DomainDensity):
        dvals = np.repeat(density.values, volmesh.n_nodes_per_cell)
    else:
        dvals = np.asarray(density(nodes), dtype=float)
    if factor is not None:
        dvals = dvals * factor(nodes)
    excl = exclusion_radii(volmesh, exclusion_factor)
    out = np.zeros(len(targets))

    def do_row(i):
        d = nodes - targets[i]
        r = np.sqrt((d * d).sum(axis=1))
        keep = r > excl
        out[i] = np.dot(wts[keep] * dvals[keep], -1.0 / (FOUR_PI * r[keep]))

    _run_rows(do_row, len(targets), workers)
    return out


def newton_potential_matrix(
    volmesh: VolumeMesh,
    targets,
    factor: Optional[Callable] = None,
    exclusion_factor: float = 0.5,
    workers: int = 1,
) -> np.ndarray:
    """Dense matrix of the Newton potential on cell-wise constant densities."""
    return _volume_matrix(volmesh, targets, _newton_nodes_kernel, factor,
                          exclusion_factor, workers)


def _newton_nodes_kernel(nodes, target):
    d = nodes - target
    r = np.sqrt((d * d).sum(axis=1))
    return -1.0 / (FOUR_PI * r), r


def _volume_matrix(volmesh, targets, nodes_kernel, factor, exclusion_factor, workers):
    targets = np.atleast_2d(np.asarray(
        targets.points if isinstance(targets, Collocation) else targets, dtype=float
    ))
    nodes = volmesh.all_nodes()
    wts = volmesh.all_weights().copy()
    if factor is not None:
        wts = wts * factor(nodes)
    excl = exclusion_radii(volmesh, exclusion_factor)
    n_cells, n_q = volmesh.n_cells, volmesh.n_nodes_per_cell
    out = np.zeros((len(targets), n_cells))

    def do_row(i):
        vals, r = nodes_kernel(nodes, targets[i])
        vals = np.where(r > excl, vals, 0.0)
        out[i] = (wts * vals).reshape(n_cells, n_q).sum(axis=1)

    _run_rows(do_row, len(targets), workers)
    return out


# --- offset normal derivative -----------------------------------------------

def normal_derivative(potential: Callable, point, normal, offset: float) -> float:
    """Normal derivative of a potential probed from the exterior side.

    Uses two evaluations at point - k*offset*n (k = 1, 2), which lie inside
    the exterior domain since n points out of it; second-order accurate at
    the midpoint of the stencil.

    Parameters
    ----------
    potential : callable(points (m, 3)) -> (m,)
    """
    if offset <= 10.0 * np.finfo(float).eps:
        raise ValueError("offset too small for a stable stencil")
    p = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    pts = np.stack([p - offset * n, p - 2.0 * offset * n])
    v = np.asarray(potential(pts), dtype=float)
    # d/d(-n) g = (g(p - 2 eps n) - g(p - eps n)) / eps; flip sign for d/dn.
    return float(-(v[1] - v[0]) / offset)
