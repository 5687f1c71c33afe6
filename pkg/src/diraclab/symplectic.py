"""Finite-dimensional symplectic linear algebra of the model boundary.

The boundary data of a model operator J(d/dx + B) + V lives on C^n carrying a
Hermitian tangential matrix B and a unitary skew-adjoint complex structure J
with J^2 = -I and JB + BJ = 0.  Self-adjoint boundary conditions are orthogonal
projections whose range is Lagrangian for the form w(f, g) = -<Jf, g>.  This
module builds those structures, converts between projections and their unitary
graph representatives, and computes Fredholm-pair indices.

Conventions fixed here and used everywhere else:

* standard structure: J = [[0, -I], [I, 0]], B = diag(B1, -B1);
* frames of the (+i)/(-i) eigenspaces of J are produced by deterministic
  Gram-Schmidt in coordinate order, so unitary graph representatives are
  concrete matrices (frame-relative, regression-tested, never canonical);
* two-component boundaries (both ends of an interval) use the doubled
  structure B' = B (+) (-B), J' = (-J) (+) J, i.e. outward normal -d/dx at the
  left end and +d/dx at the right end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TangentialStructure",
    "GrassmannianPoint",
    "UnitaryPhi",
    "CauchyData",
    "StructureError",
    "BoundaryConditionError",
    "standard_structure",
    "extend_with_kernel",
    "doubled_structure",
    "aps_projection",
    "phi_of",
    "projection_of_phi",
    "random_lagrangian",
    "fredholm_index",
    "symplectic_form",
    "calderon_graph_projection",
]

ATOL = 1e-12
RANK_TOL = 1e-8


class StructureError(ValueError):
    """Invalid tangential structure data."""


class BoundaryConditionError(ValueError):
    """Matrix fails the requirements of a boundary condition."""


def _hermitize(a):
    return 0.5 * (a + a.conj().T)


def _eigenframe(j_mat, eigval):
    """Orthonormal basis of the eigval-eigenspace of the unitary matrix J.

    Deterministic: project the standard basis vectors onto the eigenspace and
    Gram-Schmidt them in coordinate order, skipping near-dependent vectors.
    """
    n = j_mat.shape[0]
    # spectral projection (I -+ iJ)/2 for eigval = +-i
    proj = 0.5 * (np.eye(n) + j_mat / eigval)
    cols = []
    for k in range(n):
        v = proj[:, k].copy()
        for c in cols:
            v -= c * (c.conj() @ v)
        nv = np.linalg.norm(v)
        if nv > 1e-7:
            cols.append(v / nv)
    frame = np.column_stack(cols) if cols else np.zeros((n, 0), dtype=complex)
    if frame.shape[1] != n // 2:
        raise StructureError(
            f"eigenspace of J for {eigval} has dimension {frame.shape[1]}, expected {n // 2}"
        )
    return frame


@dataclass(frozen=True)
class TangentialStructure:
    """Finite model of the boundary data (B, J) with fixed J-eigenframes.

    B is Hermitian, J unitary with J* = -J, and JB + BJ = 0.  frame_i and
    frame_neg_i hold orthonormal bases (columns) of the +i and -i eigenspaces
    of J, fixed once at construction.
    """

    dim: int
    B: np.ndarray
    J: np.ndarray
    frame_i: np.ndarray = field(repr=False)
    frame_neg_i: np.ndarray = field(repr=False)

    @classmethod
    def from_matrices(cls, B, J):
        B = np.asarray(B, dtype=complex)
        J = np.asarray(J, dtype=complex)
        n = B.shape[0]
        if n % 2 or B.shape != (n, n) or J.shape != (n, n):
            raise StructureError("B and J must be square of the same even dimension")
        if np.linalg.norm(J.conj().T @ J - np.eye(n)) > ATOL * n:
            raise StructureError("J is not unitary")
        if np.linalg.norm(J.conj().T + J) > ATOL * n:
            raise StructureError("J is not skew-adjoint")
        if np.linalg.norm(B - B.conj().T) > ATOL * max(1.0, np.linalg.norm(B)):
            raise StructureError("B is not Hermitian")
        if np.linalg.norm(J @ B + B @ J) > ATOL * max(1.0, np.linalg.norm(B)):
            raise StructureError("J and B do not anticommute")
        return cls(
            dim=n,
            B=B,
            J=J,
            frame_i=_eigenframe(J, 1j),
            frame_neg_i=_eigenframe(J, -1j),
        )

    @property
    def half_dim(self):
        return self.dim // 2

    def b_eigensystem(self):
        """Eigenvalues (ascending) and orthonormal eigenvectors of B."""
        return np.linalg.eigh(self.B)

    def kernel_basis(self, tol=RANK_TOL):
        """Orthonormal basis (columns) of ker B; empty matrix if invertible."""
        vals, vecs = self.b_eigensystem()
        scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
        mask = np.abs(vals) <= tol * scale
        return vecs[:, mask]

    def positive_projection(self, tol=RANK_TOL):
        """Spectral projection of B onto (0, inf)."""
        vals, vecs = self.b_eigensystem()
        scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
        cols = vecs[:, vals > tol * scale]
        return cols @ cols.conj().T


def standard_structure(b_values) -> TangentialStructure:
    """Canonical structure with B = diag(B1, -B1), J = [[0,-I],[I,0]].

    b_values are the positive eigenvalues of the B1 block; zero modes are added
    separately via extend_with_kernel.
    """
    b = np.asarray(b_values, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise StructureError("b_values must be a non-empty 1-d sequence")
    if np.any(b <= 0):
        raise StructureError("b_values must be strictly positive")
    m = b.size
    B = np.diag(np.concatenate([b, -b])).astype(complex)
    J = np.zeros((2 * m, 2 * m), dtype=complex)
    J[:m, m:] = -np.eye(m)
    J[m:, :m] = np.eye(m)
    return TangentialStructure.from_matrices(B, J)


def extend_with_kernel(T: TangentialStructure, k: int) -> TangentialStructure:
    """Append a k-dimensional J-invariant kernel to B.

    k must be even: an odd-dimensional J-invariant subspace cannot carry a
    Lagrangian, so generalized boundary conditions would not exist.
    """
    if k <= 0 or k % 2:
        raise StructureError("kernel dimension must be a positive even integer")
    n = T.dim
    B = np.zeros((n + k, n + k), dtype=complex)
    B[:n, :n] = T.B
    J = np.zeros((n + k, n + k), dtype=complex)
    J[:n, :n] = T.J
    half = k // 2
    J[n : n + half, n + half :] = -np.eye(half)
    J[n + half :, n : n + half] = np.eye(half)
    return TangentialStructure.from_matrices(B, J)


def doubled_structure(T: TangentialStructure) -> TangentialStructure:
    """Two-component boundary structure B' = B (+) (-B), J' = (-J) (+) J.

    First block is the left end (outward normal -d/dx), second the right end
    (outward normal +d/dx); the sign pattern is the one under which interval
    Cauchy data spaces come out Lagrangian.
    """
    n = T.dim
    B = np.zeros((2 * n, 2 * n), dtype=complex)
    B[:n, :n] = T.B
    B[n:, n:] = -T.B
    J = np.zeros((2 * n, 2 * n), dtype=complex)
    J[:n, :n] = -T.J
    J[n:, n:] = T.J
    return TangentialStructure.from_matrices(B, J)


@dataclass(frozen=True)
class GrassmannianPoint:
    """Orthogonal projection with Lagrangian range: one boundary condition."""

    P: np.ndarray
    tag: str = "custom"
    provenance: str = ""

    def __post_init__(self):
        P = np.asarray(self.P, dtype=complex)
        object.__setattr__(self, "P", P)
        n = P.shape[0]
        if P.shape != (n, n):
            raise BoundaryConditionError("projection must be square")
        err = max(
            np.linalg.norm(P @ P - P),
            np.linalg.norm(P - P.conj().T),
        )
        if err > 1e-10 * max(1.0, n):
            raise BoundaryConditionError(f"not an orthogonal projection (defect {err:.2e})")

    @property
    def dim(self):
        return self.P.shape[0]

    @property
    def rank(self):
        return int(round(np.real(np.trace(self.P))))

    def range_basis(self):
        """Orthonormal basis (columns) of range(P)."""
        return _orthonormal_range(self.P, self.rank)

    def kernel_basis(self):
        """Orthonormal basis (columns) of ker(P) = range(I - P)."""
        return _orthonormal_range(np.eye(self.dim) - self.P, self.dim - self.rank)

    def complement(self, tag=None):
        return GrassmannianPoint(
            np.eye(self.dim) - self.P,
            tag=tag or f"complement({self.tag})",
            provenance=self.provenance,
        )

    def is_lagrangian(self, T: TangentialStructure, tol=1e-10):
        J = T.J
        return np.linalg.norm(J @ self.P @ J.conj().T - (np.eye(self.dim) - self.P)) <= tol * self.dim


def _orthonormal_range(mat, rank):
    """Deterministic orthonormal basis of the range via SVD truncation."""
    u, s, _ = np.linalg.svd(mat)
    return u[:, :rank]


def check_lagrangian(T: TangentialStructure, P: GrassmannianPoint, tol=1e-10):
    """Raise unless P is a Lagrangian projection for the structure T."""
    if P.dim != T.dim:
        raise BoundaryConditionError("dimension mismatch between projection and structure")
    if P.rank != T.half_dim:
        raise BoundaryConditionError(f"rank {P.rank} != n/2 = {T.half_dim}")
    if not P.is_lagrangian(T, tol=tol):
        raise BoundaryConditionError("range of P is not Lagrangian (JPJ* != I - P)")


@dataclass(frozen=True)
class UnitaryPhi:
    """Graph representative of a Lagrangian: a unitary in frame coordinates."""

    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=complex)
        object.__setattr__(self, "Phi", Phi)
        m = Phi.shape[0]
        if Phi.shape != (m, m):
            raise BoundaryConditionError("Phi must be square")
        if np.linalg.norm(Phi.conj().T @ Phi - np.eye(m)) > 1e-10 * max(1.0, m):
            raise BoundaryConditionError("Phi is not unitary")


@dataclass(frozen=True)
class CauchyData:
    """Orthonormal basis of the boundary traces of solutions."""

    basis: np.ndarray  # (ambient dim) x (number of solutions), orthonormal columns

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex)
        object.__setattr__(self, "basis", b)
        g = b.conj().T @ b
        if np.linalg.norm(g - np.eye(b.shape[1])) > 1e-9 * max(1.0, b.shape[0]):
            raise BoundaryConditionError("Cauchy data basis is not orthonormal")

    def projection(self, tag="calderon_graph"):
        return GrassmannianPoint(self.basis @ self.basis.conj().T, tag=tag)


def aps_projection(T: TangentialStructure, V=None) -> GrassmannianPoint:
    """Spectral projection of B onto (0, inf), plus a Lagrangian slice of ker B.

    With invertible B this is the plain positive spectral projection and V must
    be omitted.  With ker B != 0 a basis V of a half-dimensional subspace of
    ker B with V perp J(V) must be supplied; the result is wedged between the
    open and closed positive spectral projections.
    """
    ker = T.kernel_basis()
    pplus = T.positive_projection()
    if ker.shape[1] == 0:
        if V is not None:
            raise BoundaryConditionError("V given but B is invertible")
        return GrassmannianPoint(pplus, tag="aps", provenance="positive spectral projection")
    if V is None:
        raise BoundaryConditionError(
            f"B has a {ker.shape[1]}-dimensional kernel; a Lagrangian subspace of it is required"
        )
    V = np.atleast_2d(np.asarray(V, dtype=complex))
    if V.shape[0] != T.dim:
        V = V.T
    q, r = np.linalg.qr(V)
    if np.min(np.abs(np.diag(r))) < 1e-10:
        raise BoundaryConditionError("V is rank deficient")
    V = q
    # V must live in ker B and be isotropic there, with half the kernel dimension
    if np.linalg.norm(T.B @ V) > 1e-8 * max(1.0, np.linalg.norm(T.B)):
        raise BoundaryConditionError("V is not contained in ker B")
    if 2 * V.shape[1] != ker.shape[1]:
        raise BoundaryConditionError(
            f"dim V = {V.shape[1]} but ker B has dimension {ker.shape[1]}; need half"
        )
    if np.linalg.norm(V.conj().T @ (T.J @ V)) > 1e-8:
        raise BoundaryConditionError("V is not isotropic: V and J(V) overlap")
    P = pplus + V @ V.conj().T
    point = GrassmannianPoint(_hermitize(P), tag="generalized_aps", provenance="aps + kernel slice")
    check_lagrangian(T, point)
    return point


def phi_of(T: TangentialStructure, P: GrassmannianPoint) -> UnitaryPhi:
    """Unitary graph representative of a Lagrangian projection.

    range(P) is the graph of a unitary from the +i to the -i eigenspace of J;
    the matrix is expressed in the frames stored on T.
    """
    check_lagrangian(T, P)
    L = P.range_basis()
    a = T.frame_i.conj().T @ L
    c = T.frame_neg_i.conj().T @ L
    # a singular <=> range(P) meets the -i eigenspace, impossible for Lagrangians
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e8:
        raise BoundaryConditionError("projection of range(P) to the +i eigenspace is singular")
    return UnitaryPhi(c @ np.linalg.inv(a))


def projection_of_phi(T: TangentialStructure, Phi: UnitaryPhi | np.ndarray) -> GrassmannianPoint:
    """Inverse of phi_of: P = (1/2) [[I, Phi*], [Phi, I]] in frame coordinates."""
    if not isinstance(Phi, UnitaryPhi):
        Phi = UnitaryPhi(Phi)
    m = T.half_dim
    if Phi.Phi.shape[0] != m:
        raise BoundaryConditionError("Phi has the wrong block size for this structure")
    fp, fm = T.frame_i, T.frame_neg_i
    P = 0.5 * (
        fp @ fp.conj().T
        + fm @ fm.conj().T
        + fm @ Phi.Phi @ fp.conj().T
        + fp @ Phi.Phi.conj().T @ fm.conj().T
    )
    point = GrassmannianPoint(_hermitize(P), tag="custom", provenance="graph of unitary")
    check_lagrangian(T, point)
    return point


def random_lagrangian(T: TangentialStructure, seed: int) -> GrassmannianPoint:
    """Seed-deterministic Haar-ish Lagrangian via a random unitary graph."""
    rng = np.random.default_rng(seed)
    m = T.half_dim
    z = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    q, r = np.linalg.qr(z)
    # fix the QR phase ambiguity so the draw is deterministic across BLAS builds
    q = q @ np.diag(np.sign(np.diag(r)).astype(complex))
    point = projection_of_phi(T, UnitaryPhi(q))
    return GrassmannianPoint(point.P, tag="random", provenance=f"seed={seed}")


def fredholm_index(P: GrassmannianPoint, Q: GrassmannianPoint) -> int:
    """dim(ker P  ∩ range Q) - dim(range P ∩ ker Q) by numerically ranked intersections."""
    if P.dim != Q.dim:
        raise BoundaryConditionError("projections live in different dimensions")
    ker_p = P.kernel_basis()
    ran_q = Q.range_basis()
    ran_p = P.range_basis()
    ker_q = Q.kernel_basis()
    return _intersection_dim(ker_p, ran_q) - _intersection_dim(ran_p, ker_q)


def _intersection_dim(A, B):
    """dim(span A ∩ span B) for orthonormal column blocks A, B."""
    if A.shape[1] == 0 or B.shape[1] == 0:
        return 0
    stacked = np.concatenate([A, B], axis=1)
    s = np.linalg.svd(stacked, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    return A.shape[1] + B.shape[1] - rank


def intersection_dimension(A, B):
    """Public wrapper: dimension of the intersection of two column spans."""
    qa, _ = np.linalg.qr(np.asarray(A, dtype=complex))
    qb, _ = np.linalg.qr(np.asarray(B, dtype=complex))
    return _intersection_dim(qa, qb)


def symplectic_form(T: TangentialStructure, f, g) -> complex:
    """Boundary form w(f, g) = -<Jf, g> (inner product conjugate-linear in f)."""
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if f.shape != (T.dim,) or g.shape != (T.dim,):
        raise BoundaryConditionError("vectors must match the structure dimension")
    return complex(-(T.J @ f).conj() @ g)


def calderon_graph_projection(T: TangentialStructure, length: float) -> GrassmannianPoint:
    """Projection onto {(v, exp(-length B) v)} in the doubled structure.

    This is the trace space of solutions of J(u' + Bu) = 0 on an interval of
    the given length; it is Lagrangian for J' = (-J) (+) J, and converges to
    the doubled spectral projection as length -> inf for invertible B.
    """
    if length <= 0:
        raise BoundaryConditionError("length must be positive")
    from scipy.linalg import expm

    n = T.dim
    g = expm(-length * T.B)
    basis = np.concatenate([np.eye(n, dtype=complex), g], axis=0)
    q, _ = np.linalg.qr(basis)
    P = q @ q.conj().T
    point = GrassmannianPoint(
        _hermitize(P), tag="calderon_graph", provenance=f"length={length!r}"
    )
    check_lagrangian(doubled_structure(T), point)
    return point
