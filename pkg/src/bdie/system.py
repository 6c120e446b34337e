"""Coupled domain-boundary system for the exterior mixed problem.

The mixed Dirichlet-Neumann problem for div(a grad u) = f outside the unit
sphere is reduced to one linear system in three unknowns: the field u on the
truncated shell, the missing conormal derivative psi on the Dirichlet part
S_D, and the missing trace phi on the Neumann part S_N.  With fixed
extensions Phi0 (vertex-linear) and Psi0 (triangle-constant) of the given
boundary data, the rows read

    u + R u - V psi + W phi                    = F0           in the shell,
    (1/2) phi + R u - calV psi + calW phi      = F0^+ - Phi0   on S,

where F0 = P f + V Psi0 - W Phi0, the boundary row is the exterior trace of
the domain row, and F0^+ denotes that trace.  Script-style symbols (calV,
calW) are the on-surface direct values of the layer potentials.

Discretization: u is cell-wise constant collocated at cell centers, psi is
triangle-constant on S_D triangles, phi is vertex-linear supported at
interior-S_N vertices (zero on the interface, so the recovered trace stays
continuous across it).  Boundary rows collocate at S_D centroids plus
interior-S_N vertices, which makes the system square.  Exterior traces of
the double layer are direct (principal) values minus a jump coefficient
times the density; on the ideal smooth sphere that coefficient is 1/2, and
the assembly uses its discrete counterpart, the unit-density direct value
at each collocation point (the interior-cone solid angle fraction of the
faceted surface: 1/2 up to quadrature error at centroids, smaller at
vertices).  Collocating with the measured fraction keeps the boundary rows
consistent with the assembled operators; with the ideal 1/2 the vertex
rows carry an O(h) facet defect that dominates the recovered trace error.
Stored normals point out of the domain (toward the origin).

Everything is dense; sizes are guarded by the same caps as the operator
assembly routines.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import geometry as geo
from . import laplace as lp
from . import parametrix as px
from .coefficients import CoefficientField

ORDER_WEIGHTED = "0-weighted"
ORDER_SEMI = "1-semi"
ORDER_FULL = "full"


class SolverError(RuntimeError):
    """Dense factorization failed or is numerically singular."""


def _as_vertex_data(data, points):
    if callable(data):
        return np.asarray(data(points), dtype=float)
    return np.broadcast_to(np.asarray(data, dtype=float), (len(points),)).copy()


@dataclass(frozen=True)
class ExtensionPair:
    """Fixed extensions of the boundary data to the whole surface.

    phi0 is the vertex-linear extension of the Dirichlet datum (zero at
    interior-S_N vertices); psi0 is the triangle-constant extension of the
    Neumann datum (zero on S_D triangles).
    """

    phi0: lp.BoundaryDensity
    psi0: lp.BoundaryDensity


def build_extensions(mesh: geo.SurfaceMesh, dirichlet_data, neumann_data) -> ExtensionPair:
    """Extend boundary data by zero into the complementary parts.

    Parameters
    ----------
    mesh : SurfaceMesh with a D/N partition.
    dirichlet_data : scalar or callable(points) -> values
        Trace datum, sampled at S_D-adjacent vertices (classes D and I).
    neumann_data : scalar or callable(points) -> values
        Conormal datum, sampled at S_N triangle centroids.
    """
    if mesh.part_label is None:
        raise ValueError("mesh has no partition labels")
    phi_vals = np.zeros(mesh.n_vertices)
    touched = mesh.vertex_class != geo.PART_NEUMANN
    phi_vals[touched] = _as_vertex_data(dirichlet_data, mesh.vertices[touched])
    psi_vals = np.zeros(mesh.n_triangles)
    n_tris = mesh.triangles_with_label(geo.PART_NEUMANN)
    psi_vals[n_tris] = _as_vertex_data(neumann_data, mesh.centroids[n_tris])
    if not (np.all(np.isfinite(phi_vals)) and np.all(np.isfinite(psi_vals))):
        raise ValueError("boundary data is not finite")
    return ExtensionPair(
        phi0=lp.BoundaryDensity(lp.SPACE_VERTEX, lp.SUPPORT_ALL, phi_vals),
        psi0=lp.BoundaryDensity(lp.SPACE_TRIANGLE, lp.SUPPORT_ALL, psi_vals),
    )


def zero_extensions(mesh: geo.SurfaceMesh) -> ExtensionPair:
    return build_extensions(mesh, 0.0, 0.0)


def jump_coefficients(surfmesh: geo.SurfaceMesh, colloc: lp.Collocation,
                      workers: int = 1) -> np.ndarray:
    """Interior-cone solid angle fractions at registered boundary points.

    Computed as the direct value of the unit-density Laplace double layer,
    which on a closed faceted surface equals the solid angle of the inner
    cone at the point divided by 4 pi.  The exterior trace of W rho at a
    collocation point is then the principal value minus this fraction times
    rho; using the measured fraction instead of the smooth-surface 1/2
    keeps vertex rows consistent with the assembled operators.
    """
    ones = lp.BoundaryDensity(lp.SPACE_VERTEX, lp.SUPPORT_ALL,
                              np.ones(surfmesh.n_vertices))
    return lp.double_layer(surfmesh, ones, colloc, workers=workers)


def vertex_eval_matrix(mesh: geo.SurfaceMesh, colloc: lp.Collocation) -> np.ndarray:
    """Evaluation of vertex-linear densities at registered collocation points.

    Rows are collocation points; centroid rows average the three corner
    values, vertex rows pick the nodal value.
    """
    out = np.zeros((colloc.n, mesh.n_vertices))
    for i, (kind, idx) in enumerate(zip(colloc.kinds, colloc.indices)):
        if kind == lp.KIND_CENTROID:
            out[i, mesh.triangles[idx]] = 1.0 / 3.0
        elif kind == lp.KIND_VERTEX:
            out[i, idx] = 1.0
        else:
            raise ValueError("free points have no vertex-linear registration")
    return out


@dataclass(frozen=True)
class F0Data:
    """Right-hand side field F0 = P f + V Psi0 - W Phi0 of the system.

    cells holds F0 at the volume collocation points; boundary_trace holds
    the exterior trace of F0 at the registered boundary collocation points.
    """

    cells: np.ndarray
    boundary_trace: np.ndarray


def _f_density(f):
    if f is None:
        return None
    if isinstance(f, lp.DomainDensity) or callable(f):
        return f
    raise TypeError("f must be None, a DomainDensity, or a callable on nodes")


def assemble_F0(
    volmesh: geo.VolumeMesh,
    surfmesh: geo.SurfaceMesh,
    field: CoefficientField,
    f,
    extensions: ExtensionPair,
    colloc: Optional[lp.Collocation] = None,
    jump_c: Optional[np.ndarray] = None,
    workers: int = 1,
) -> F0Data:
    """Evaluate F0 at cell centers and its exterior trace on the boundary.

    The volume term, the single layer, and their traces are continuous, so
    those direct values serve on both sides; only the double layer needs
    the jump correction (principal value minus the jump coefficient times
    the density) on the boundary.
    """
    if colloc is None:
        colloc = boundary_collocation(surfmesh)
    dens = _f_density(f)
    cells = np.zeros(volmesh.n_cells)
    bdry = np.zeros(colloc.n)
    if dens is not None:
        cells += px.op_P(volmesh, field, dens, volmesh.centers, workers=workers)
        bdry += px.op_P(volmesh, field, dens, colloc.points, workers=workers)
    psi0, phi0 = extensions.psi0, extensions.phi0
    if np.any(psi0.values):
        cells += px.op_V(surfmesh, field, psi0, volmesh.centers, workers=workers)
        bdry += px.dv_V(surfmesh, field, psi0, colloc, workers=workers)
    if np.any(phi0.values):
        if jump_c is None:
            jump_c = jump_coefficients(surfmesh, colloc, workers=workers)
        phi0_at = vertex_eval_matrix(surfmesh, colloc) @ phi0.values
        cells -= px.op_W(surfmesh, field, phi0, volmesh.centers, workers=workers)
        bdry -= (px.dv_W(surfmesh, field, phi0, colloc, workers=workers)
                 - jump_c * phi0_at)
    return F0Data(cells=cells, boundary_trace=bdry)


def boundary_collocation(surfmesh: geo.SurfaceMesh) -> lp.Collocation:
    """S_D triangle centroids followed by interior-S_N vertices."""
    sd = surfmesh.triangles_with_label(geo.PART_DIRICHLET)
    nin = surfmesh.vertices_with_class(geo.PART_NEUMANN)
    return lp.Collocation.concat([
        lp.Collocation.centroids(surfmesh, sd),
        lp.Collocation.vertices(surfmesh, nin),
    ])


@dataclass(frozen=True)
class M12System:
    """Square dense system in the unknowns (u | psi on S_D | phi on S_N)."""

    matrix: np.ndarray
    rhs: np.ndarray
    surfmesh: geo.SurfaceMesh
    volmesh: geo.VolumeMesh
    field: CoefficientField
    psi_triangles: np.ndarray
    phi_vertices: np.ndarray
    colloc: lp.Collocation
    extensions: ExtensionPair
    f: Optional[Union[lp.DomainDensity, Callable]] = None
    jump_c: Optional[np.ndarray] = None

    @property
    def n_cells(self) -> int:
        return self.volmesh.n_cells

    @property
    def n_psi(self) -> int:
        return len(self.psi_triangles)

    @property
    def n_phi(self) -> int:
        return len(self.phi_vertices)

    @property
    def slice_u(self) -> slice:
        return slice(0, self.n_cells)

    @property
    def slice_psi(self) -> slice:
        return slice(self.n_cells, self.n_cells + self.n_psi)

    @property
    def slice_phi(self) -> slice:
        n = self.n_cells + self.n_psi
        return slice(n, n + self.n_phi)

    def with_data(self, f, extensions: ExtensionPair, workers: int = 1) -> "M12System":
        """Same operator blocks with a right-hand side built from new data."""
        f0 = assemble_F0(self.volmesh, self.surfmesh, self.field, f, extensions,
                         self.colloc, jump_c=self.jump_c, workers=workers)
        phi0_at = vertex_eval_matrix(self.surfmesh, self.colloc) @ extensions.phi0.values
        rhs = np.concatenate([f0.cells, f0.boundary_trace - phi0_at])
        return M12System(self.matrix, rhs, self.surfmesh, self.volmesh, self.field,
                         self.psi_triangles, self.phi_vertices, self.colloc,
                         extensions, f, self.jump_c)


def assemble_M12(
    volmesh: geo.VolumeMesh,
    surfmesh: geo.SurfaceMesh,
    field: CoefficientField,
    f=None,
    extensions: Optional[ExtensionPair] = None,
    workers: int = 1,
) -> M12System:
    """Assemble the dense blocks and (optionally) the data right-hand side.

    Domain rows are collocated at cell centers, boundary rows at S_D
    centroids plus interior-S_N vertices; with the unknown layout
    (u | psi | phi) this is square by construction.  Omitting f and
    extensions leaves a zero right-hand side, which is enough for the
    block-structure checks and for synthetic consistency studies.
    """
    px.check_dense_caps(n_triangles=surfmesh.n_triangles, n_cells=volmesh.n_cells)
    sd = surfmesh.triangles_with_label(geo.PART_DIRICHLET)
    nin = surfmesh.vertices_with_class(geo.PART_NEUMANN)
    colloc = boundary_collocation(surfmesh)
    n_c, n_psi, n_phi = volmesh.n_cells, len(sd), len(nin)
    n = n_c + n_psi + n_phi

    centers = volmesh.centers
    A = np.zeros((n, n))
    su = slice(0, n_c)
    spsi = slice(n_c, n_c + n_psi)
    sphi = slice(n_c + n_psi, n)
    rows_b = slice(n_c, n)

    A[su, su] = np.eye(n_c) + px.op_R_matrix(volmesh, field, centers, workers=workers)
    A[rows_b, su] = px.op_R_matrix(volmesh, field, colloc.points, workers=workers)
    A[su, spsi] = -px.op_V_matrix(surfmesh, field, lp.SPACE_TRIANGLE, centers,
                                  support=lp.SUPPORT_D, workers=workers)[:, sd]
    A[rows_b, spsi] = -px.op_V_matrix(surfmesh, field, lp.SPACE_TRIANGLE, colloc,
                                      support=lp.SUPPORT_D, workers=workers)[:, sd]
    A[su, sphi] = px.op_W_matrix(surfmesh, field, lp.SPACE_VERTEX, centers,
                                 workers=workers)[:, nin]
    jump_c = jump_coefficients(surfmesh, colloc, workers=workers)
    A[rows_b, sphi] = (
        px.op_W_matrix(surfmesh, field, lp.SPACE_VERTEX, colloc, workers=workers)[:, nin]
        + (1.0 - jump_c)[:, None] * vertex_eval_matrix(surfmesh, colloc)[:, nin]
    )

    if extensions is None:
        if f is not None:
            raise ValueError("a source term requires explicit extensions")
        extensions = zero_extensions(surfmesh)
        rhs = np.zeros(n)
    else:
        f0 = assemble_F0(volmesh, surfmesh, field, f, extensions, colloc,
                         jump_c=jump_c, workers=workers)
        phi0_at = vertex_eval_matrix(surfmesh, colloc) @ extensions.phi0.values
        rhs = np.concatenate([f0.cells, f0.boundary_trace - phi0_at])

    return M12System(A, rhs, surfmesh, volmesh, field, sd, nin, colloc,
                     extensions, f, jump_c)


@dataclass(frozen=True)
class M12Solution:
    """Solved unknowns plus the recovered full Cauchy data on the surface."""

    u: lp.DomainDensity
    psi: lp.BoundaryDensity
    phi: lp.BoundaryDensity
    recovered_trace: np.ndarray
    recovered_conormal: np.ndarray
    conditioning: float
    residual_norm: float
    method: str = "direct"

    def to_dict(self) -> dict:
        return {
            "u": self.u.values.tolist(),
            "psi": self.psi.values.tolist(),
            "phi": self.phi.values.tolist(),
            "recovered_trace": self.recovered_trace.tolist(),
            "recovered_conormal": self.recovered_conormal.tolist(),
            "conditioning": self.conditioning,
            "residual_norm": self.residual_norm,
            "method": self.method,
        }


def solve_M12(system: M12System, method: str = "direct") -> M12Solution:
    """Solve the assembled system by dense LU, optionally cross-checked GMRES.

    Reports the relative algebraic residual and a 1-norm condition estimate
    from the factorization.  method="iterative" runs restarted GMRES to
    tolerance 1e-8 and returns its iterate instead (the condition estimate
    still comes from the factorization).
    """
    A, b = system.matrix, system.rhs
    if A.shape[0] != A.shape[1]:
        raise ValueError("system is not square")
    anorm = np.linalg.norm(A, 1)
    lu, piv = sla.lu_factor(A)
    rcond = sla.lapack.dgecon(lu, anorm)[0]
    if not np.all(np.isfinite(lu)) or rcond == 0.0:
        raise SolverError(f"singular factorization (reciprocal condition {rcond:.3e})")
    x = sla.lu_solve((lu, piv), b)
    if method == "iterative":
        x_it, info = spla.gmres(spla.aslinearoperator(A), b, rtol=1e-8, atol=0.0,
                                restart=60, maxiter=200)
        if info != 0:
            raise SolverError(f"iterative solve did not converge (info={info})")
        x = x_it
    elif method != "direct":
        raise ValueError(f"unknown method {method!r}")

    bnorm = np.linalg.norm(b)
    rnorm = np.linalg.norm(A @ x - b)
    residual = 0.0 if (bnorm == 0.0 and rnorm == 0.0) else float(rnorm / max(bnorm, 1e-300))

    mesh = system.surfmesh
    psi_full = np.zeros(mesh.n_triangles)
    psi_full[system.psi_triangles] = x[system.slice_psi]
    phi_full = np.zeros(mesh.n_vertices)
    phi_full[system.phi_vertices] = x[system.slice_phi]
    return M12Solution(
        u=lp.DomainDensity(x[system.slice_u]),
        psi=lp.BoundaryDensity(lp.SPACE_TRIANGLE, lp.SUPPORT_D, psi_full),
        phi=lp.BoundaryDensity(lp.SPACE_VERTEX, lp.SUPPORT_N, phi_full),
        recovered_trace=system.extensions.phi0.values + phi_full,
        recovered_conormal=system.extensions.psi0.values + psi_full,
        conditioning=float(1.0 / rcond),
        residual_norm=residual,
        method=method,
    )


def evaluate_solution(system: M12System, solution: M12Solution, points,
                      workers: int = 1) -> np.ndarray:
    """Field values at points in the shell via the representation formula.

    u(y) = P f(y) + V(Psi0 + psi)(y) - W(Phi0 + phi)(y) - R u(y), which is
    the domain row rearranged; smooth in y away from the surface.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mesh, vol, field = system.surfmesh, system.volmesh, system.field
    total = np.zeros(len(pts))
    dens = _f_density(system.f)
    conormal = lp.BoundaryDensity(lp.SPACE_TRIANGLE, lp.SUPPORT_ALL,
                                  solution.recovered_conormal)
    trace = lp.BoundaryDensity(lp.SPACE_VERTEX, lp.SUPPORT_ALL,
                               solution.recovered_trace)
    total += px.op_V(mesh, field, conormal, pts, workers=workers)
    total -= px.op_W(mesh, field, trace, pts, workers=workers)
    total -= px.op_R(vol, field, solution.u, pts, workers=workers)
    if dens is not None:
        total += px.op_P(vol, field, dens, pts, workers=workers)
    return total


@dataclass(frozen=True)
class EquivalenceReport:
    """Max-norm mismatch of the recovered Cauchy data against exact data."""

    trace_residual: float
    trace_scale: float
    conormal_residual: float
    conormal_scale: float
    interior_error: float
    interior_scale: float
    details: dict = dc_field(default_factory=dict)

    @staticmethod
    def _rel(residual: float, scale: float) -> float:
        if scale:
            return residual / scale
        return 0.0 if residual == 0.0 else np.inf

    @property
    def trace_rel(self) -> float:
        return self._rel(self.trace_residual, self.trace_scale)

    @property
    def conormal_rel(self) -> float:
        return self._rel(self.conormal_residual, self.conormal_scale)

    @property
    def interior_rel(self) -> float:
        return self._rel(self.interior_error, self.interior_scale)

    def to_dict(self) -> dict:
        return {
            "trace_residual": self.trace_residual,
            "trace_scale": self.trace_scale,
            "trace_rel": self.trace_rel,
            "conormal_residual": self.conormal_residual,
            "conormal_scale": self.conormal_scale,
            "conormal_rel": self.conormal_rel,
            "interior_error": self.interior_error,
            "interior_scale": self.interior_scale,
            "interior_rel": self.interior_rel,
            "details": dict(self.details),
        }


def equivalence_residuals(solution: M12Solution, afield, field: CoefficientField,
                          surfmesh: geo.SurfaceMesh, volmesh: geo.VolumeMesh,
                          ) -> EquivalenceReport:
    """Compare recovered trace/conormal/field against a manufactured solution.

    The trace needs the exact field at vertices, the conormal its flux at
    centroids (normals point out of the domain), and the interior error is
    the discrete weighted norm of the cell-value mismatch.
    """
    gamma = np.asarray(afield.u(surfmesh.vertices), dtype=float)
    a_c = field.eval_a(surfmesh.centroids)
    grad_c = np.asarray(afield.grad_u(surfmesh.centroids), dtype=float)
    t_exact = a_c * np.einsum("ij,ij->i", grad_c, surfmesh.normals)

    trace_res = float(np.max(np.abs(solution.recovered_trace - gamma)))
    con_res = float(np.max(np.abs(solution.recovered_conormal - t_exact)))
    u_exact = np.asarray(afield.u(volmesh.centers), dtype=float)
    err = solution.u.values - u_exact
    interior = weighted_norm(err, volmesh, ORDER_WEIGHTED)
    interior_scale = weighted_norm(u_exact, volmesh, ORDER_WEIGHTED)

    cls, lbl = surfmesh.vertex_class, surfmesh.part_label
    details = {
        "trace_residual_on_N": float(np.max(np.abs(
            (solution.recovered_trace - gamma)[cls == geo.PART_NEUMANN]))),
        "conormal_residual_on_D": float(np.max(np.abs(
            (solution.recovered_conormal - t_exact)[lbl == geo.PART_DIRICHLET]))),
    }
    return EquivalenceReport(
        trace_residual=trace_res,
        trace_scale=float(np.max(np.abs(gamma))),
        conormal_residual=con_res,
        conormal_scale=float(np.max(np.abs(t_exact))),
        interior_error=interior,
        interior_scale=interior_scale,
        details=details,
    )


def weighted_norm(values, volmesh: geo.VolumeMesh, order: str = ORDER_FULL) -> float:
    """Discrete weighted norm of a cell-wise constant field on the shell.

    order "0-weighted" integrates |u|^2 / (1 + |x|^2) with the cell
    quadrature; order "1-semi" is the two-point flux energy over interior
    faces, sum of (face area / center distance) (u_j - u_i)^2, a first
    order consistent surrogate for the gradient seminorm on this mesh;
    "full" is the square root of the sum of the two squares.
    """
    v = np.asarray(values, dtype=float)
    if v.shape != (volmesh.n_cells,):
        raise ValueError("values must be cell-wise (one value per cell)")
    if order == ORDER_FULL:
        return float(np.hypot(weighted_norm(v, volmesh, ORDER_WEIGHTED),
                              weighted_norm(v, volmesh, ORDER_SEMI)))
    if order == ORDER_WEIGHTED:
        pts = volmesh.nodes
        w = volmesh.node_weights
        omega2 = 1.0 + (pts * pts).sum(axis=-1)
        cell_q = (w / omega2).sum(axis=1)
        return float(np.sqrt(np.dot(cell_q, v * v)))
    if order == ORDER_SEMI:
        i, j = volmesh.face_pairs[:, 0], volmesh.face_pairs[:, 1]
        d = np.linalg.norm(volmesh.centers[j] - volmesh.centers[i], axis=1)
        jump = v[j] - v[i]
        return float(np.sqrt(np.sum(volmesh.face_areas / d * jump * jump)))
    raise ValueError(f"unknown order {order!r}")
