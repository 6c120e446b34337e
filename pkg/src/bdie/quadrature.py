"""Quadrature rules for weakly singular surface and volume integrals.

Surface rules live on the unit reference triangle {(x, y) : x, y >= 0,
x + y <= 1}; weights sum to its measure 1/2.  Three regimes are used when
integrating a kernel against a panel: a plain symmetric Gauss rule when the
target is well separated, a uniformly subdivided Gauss rule in the
near-singular band, and a Duffy (square-to-triangle) transform when the
target lies on the panel at a registered point.  All rules are deterministic:
the same inputs produce bit-identical outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

# Scheme-selection defaults: targets farther than NEAR_THRESHOLD panel
# diameters use the far rule; closer (but off-panel) targets use a 2-level
# subdivided rule.
NEAR_THRESHOLD = 3.0
FAR_ORDER = 3
NEAR_ORDER = 4
SUBDIVISION_LEVELS = 2
DUFFY_ORDER = 8


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (n, 2) on the reference triangle and weights summing to 1/2."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _orbit3(a: float) -> np.ndarray:
    """Symmetric 3-orbit with barycentric coordinates (1-2a, a, a)."""
    return np.array([[1 - 2 * a, a, a], [a, 1 - 2 * a, a], [a, a, 1 - 2 * a]])


def _orbit6(a: float, b: float) -> np.ndarray:
    c = 1.0 - a - b
    return np.array(
        [[a, b, c], [b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]]
    )


def _bary_to_ref(bary: np.ndarray) -> np.ndarray:
    return bary[:, 1:]


def gauss_triangle(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric Gauss rule on the reference triangle.

    Exact for polynomials of total degree ``order``; all weights positive.
    Orders 1, 2, 3, 4 and 6 are available (3 is served by the degree-4
    six-point rule, which is exact for degree 3 as well).

    Returns
    -------
    points : (n, 2) array
    weights : (n,) array summing to 1/2
    """
    if order == 1:
        bary = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif order == 2:
        bary = _orbit3(1 / 6)
        w = np.full(3, 1 / 3)
    elif order in (3, 4):
        bary = np.concatenate(
            [_orbit3(0.44594849091596489), _orbit3(0.09157621350977074)]
        )
        w = np.concatenate(
            [np.full(3, 0.22338158967801147), np.full(3, 0.10995174365532187)]
        )
    elif order == 6:
        bary = np.concatenate(
            [
                _orbit3(0.24928674517091042),
                _orbit3(0.06308901449150223),
                _orbit6(0.31035245103378440, 0.05314504984481695),
            ]
        )
        w = np.concatenate(
            [
                np.full(3, 0.11678627572637936),
                np.full(3, 0.05084490637020681),
                np.full(6, 0.08285107561837358),
            ]
        )
    else:
        raise ValueError(f"no rule of order {order}; available: 1, 2, 3, 4, 6")
    return _bary_to_ref(bary), w / 2.0


def gauss_legendre_interval(order: int, a: float, b: float):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def duffy_triangle(singular_vertex: int, order: int = DUFFY_ORDER):
    """Duffy rule on the reference triangle, singular at a chosen vertex.

    The square-to-triangle map (u, v) -> (u(1-v), uv) has Jacobian u, which
    cancels a 1/r singularity at the origin vertex.  For other vertices the
    barycentric coordinates are cyclically rolled, which leaves integrals of
    symmetric functions invariant.

    Parameters
    ----------
    singular_vertex : int
        0, 1 or 2; reference vertices are (0,0), (1,0), (0,1).
    order : int
        Tensor Gauss order per direction (order**2 nodes).
    """
    if singular_vertex not in (0, 1, 2):
        raise ValueError("singular_vertex must be 0, 1 or 2")
    if order < 1:
        raise ValueError("order must be >= 1")
    gx, gw = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (gx + 1.0)
    wu = 0.5 * gw
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    xi = (U * (1.0 - V)).ravel()
    eta = (U * V).ravel()
    w = (WU * WV * U).ravel()
    bary = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    bary = np.roll(bary, singular_vertex, axis=1)
    return _bary_to_ref(bary), w


def subdivided_triangle_rule(order: int, levels: int):
    """Gauss rule replicated on a uniform 4**levels subdivision."""
    pts, wts = gauss_triangle(order)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = [verts]
    for _ in range(levels):
        new = []
        for a, b, c in tris:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            new.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        tris = new
    all_pts, all_wts = [], []
    scale = 0.25**levels
    for a, b, c in tris:
        mapped = a + np.outer(pts[:, 0], b - a) + np.outer(pts[:, 1], c - a)
        all_pts.append(mapped)
        all_wts.append(wts * scale)
    return np.concatenate(all_pts), np.concatenate(all_wts)


# Cached reference rules used by the panel integrators.
_RULE_CACHE: dict = {}


def _cached(kind: str, *args):
    key = (kind, args)
    if key not in _RULE_CACHE:
        if kind == "gauss":
            _RULE_CACHE[key] = gauss_triangle(*args)
        elif kind == "subdiv":
            _RULE_CACHE[key] = subdivided_triangle_rule(*args)
        elif kind == "duffy":
            _RULE_CACHE[key] = duffy_triangle(*args)
        else:
            raise KeyError(kind)
    return _RULE_CACHE[key]


def map_to_panel(corners: np.ndarray, pts: np.ndarray, wts: np.ndarray):
    """Map a reference rule to a physical triangle.

    ``corners`` may be a single (3, 3) triangle or a batch (n_t, 3, 3);
    returned weights include the 2*area Jacobian.
    """
    single = corners.ndim == 2
    if single:
        corners = corners[None]
    a = corners[:, 0]
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    nodes = (
        a[:, None, :]
        + pts[None, :, 0, None] * e1[:, None, :]
        + pts[None, :, 1, None] * e2[:, None, :]
    )
    jac = np.linalg.norm(np.cross(e1, e2), axis=1)  # = 2 * area
    w = wts[None, :] * jac[:, None]
    if single:
        return nodes[0], w[0]
    return nodes, w


def point_triangle_distance(targets: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Euclidean distance from points to triangles.

    Parameters
    ----------
    targets : (m, 3) or (3,)
    corners : (n, 3, 3) or (3, 3)

    Returns
    -------
    (m, n) distances (squeezed when either input is unbatched).
    """
    t_single = np.ndim(targets) == 1
    c_single = np.ndim(corners) == 2
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    tri = np.asarray(corners, dtype=float)
    if c_single:
        tri = tri[None]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = b - a, c - a
    n = np.cross(e1, e2)
    nn = np.einsum("ij,ij->i", n, n)
    d = y[:, None, :] - a[None, :, :]                     # (m, n, 3)
    # Barycentric coordinates of the in-plane projection.
    d11 = np.einsum("ij,ij->i", e1, e1)
    d12 = np.einsum("ij,ij->i", e1, e2)
    d22 = np.einsum("ij,ij->i", e2, e2)
    p1 = np.einsum("mnj,nj->mn", d, e1)
    p2 = np.einsum("mnj,nj->mn", d, e2)
    det = d11 * d22 - d12**2
    s = (d22 * p1 - d12 * p2) / det
    t = (d11 * p2 - d12 * p1) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    plane_dist = np.abs(np.einsum("mnj,nj->mn", d, n)) / np.sqrt(nn)

    def seg_dist(p0, seg):
        # p0: (m, n, 3) offsets from segment start; seg: (n, 3)
        ss = np.einsum("ij,ij->i", seg, seg)
        tt = np.clip(np.einsum("mnj,nj->mn", p0, seg) / ss, 0.0, 1.0)
        diff = p0 - tt[:, :, None] * seg[None, :, :]
        return np.linalg.norm(diff, axis=2)

    edge = np.minimum(
        seg_dist(d, e1),
        np.minimum(seg_dist(d, e2), seg_dist(y[:, None, :] - b[None, :, :], c - b)),
    )
    out = np.where(inside, plane_dist, edge)
    if t_single and c_single:
        return out[0, 0]
    if t_single:
        return out[0]
    if c_single:
        return out[:, 0]
    return out


def _duffy_nodes_for_target(corners: np.ndarray, target: np.ndarray, order: int):
    """Duffy nodes/weights on a panel containing the target.

    The target must be (numerically) a vertex or the centroid; a centroid
    target splits the panel into three sub-triangles around it.
    """
    tol = 1e-9 * np.linalg.norm(corners[1] - corners[0])
    for k in range(3):
        if np.linalg.norm(target - corners[k]) <= tol:
            pts, wts = _cached("duffy", k, order)
            return map_to_panel(corners, pts, wts)
    centroid = corners.mean(axis=0)
    if np.linalg.norm(target - centroid) <= tol:
        pts, wts = _cached("duffy", 0, order)
        nodes, weights = [], []
        for k in range(3):
            sub = np.stack([centroid, corners[k], corners[(k + 1) % 3]])
            nd, w = map_to_panel(sub, pts, wts)
            nodes.append(nd)
            weights.append(w)
        return np.concatenate(nodes), np.concatenate(weights)
    return None


def integrate_layer(
    target,
    corners,
    kernel,
    density=None,
    near_threshold: float = NEAR_THRESHOLD,
    far_order: int = FAR_ORDER,
    near_order: int = NEAR_ORDER,
    levels: int = SUBDIVISION_LEVELS,
    duffy_order: int = DUFFY_ORDER,
) -> float:
    """Integrate kernel(x, target) * density(x) over one surface panel.

    The scheme is selected by d/h where d is the target-to-panel distance
    and h the panel diameter: d/h >= near_threshold uses the far Gauss rule,
    0 < d/h < near_threshold a subdivided Gauss rule, and d = 0 a Duffy rule
    when the target is a vertex or the centroid of the panel.  An on-panel
    target at an unregistered position falls back to the subdivided rule and
    logs a warning.

    Parameters
    ----------
    target : (3,) array
    corners : (3, 3) array of panel vertices
    kernel : callable(nodes (n, 3), target (3,)) -> (n,)
    density : optional callable(nodes) -> (n,); defaults to 1
    """
    target = np.asarray(target, dtype=float)
    corners = np.asarray(corners, dtype=float)
    h = max(
        np.linalg.norm(corners[1] - corners[0]),
        np.linalg.norm(corners[2] - corners[1]),
        np.linalg.norm(corners[0] - corners[2]),
    )
    d = point_triangle_distance(target, corners)
    if d >= near_threshold * h:
        pts, wts = _cached("gauss", far_order)
        nodes, w = map_to_panel(corners, pts, wts)
    elif d > 1e-12 * h:
        pts, wts = _cached("subdiv", near_order, levels)
        nodes, w = map_to_panel(corners, pts, wts)
    else:
        duffy = _duffy_nodes_for_target(corners, target, duffy_order)
        if duffy is None:
            log.warning(
                "on-panel target %s is neither a vertex nor the centroid; "
                "falling back to the subdivided rule",
                target,
            )
            pts, wts = _cached("subdiv", near_order, levels)
            nodes, w = map_to_panel(corners, pts, wts)
        else:
            nodes, w = duffy
    vals = kernel(nodes, target)
    if density is not None:
        vals = vals * density(nodes)
    return float(np.dot(w, vals))


def integrate_volume(
    target,
    nodes: np.ndarray,
    weights: np.ndarray,
    kernel,
    values=None,
    exclusion_radius: float = 0.0,
) -> float:
    """Weighted kernel sum over volume quadrature nodes with an exclusion ball.

    Nodes within ``exclusion_radius`` of the target are skipped; for 1/r
    kernels the omitted mass is O(exclusion_radius^2).

    Parameters
    ----------
    target : (3,) array
    nodes : (n, 3) array
    weights : (n,) array
    kernel : callable(nodes, target) -> (n,)
    values : optional (n,) density values at the nodes
    """
    target = np.asarray(target, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    w = np.asarray(weights, dtype=float)
    if exclusion_radius > 0.0:
        keep = np.linalg.norm(nodes - target[None, :], axis=1) > exclusion_radius
        nodes, w = nodes[keep], w[keep]
        if values is not None:
            values = np.asarray(values)[keep]
    vals = kernel(nodes, target)
    if values is not None:
        vals = vals * values
    return float(np.dot(w, vals))
