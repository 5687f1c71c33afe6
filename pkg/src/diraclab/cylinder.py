"""Model operators J(d/dx + B) + V(x) on intervals and circles.

Eigenvalues are located through the transfer matrix M(lambda) that propagates
solutions of the first-order system u' = -(B + lambda J - J V(x)) u across the
interval.  A boundary condition (product of two Lagrangians, or one joint
Lagrangian on the doubled trace space) turns the propagation into a square
characteristic matrix G(lambda) whose smallest singular value dips to zero
exactly at eigenvalues; minima are refined by bounded scalar minimization.

Completeness of every window is certified against an independent
grid discretization (midpoint least-squares form of the squared operator,
Hermitian, second-order accurate) whose eigenvalue counts must match exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, eig_banded, eigh
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .symplectic import (
    BoundaryConditionError,
    GrassmannianPoint,
    CauchyData,
    TangentialStructure,
    check_lagrangian,
    doubled_structure,
)

__all__ = [
    "PotentialSpec",
    "CylinderOperator",
    "Spectrum",
    "IntegrationFailure",
    "CompletenessError",
    "transfer_matrix",
    "characteristic_value",
    "eigenvalues_in_window",
    "fd_discretize",
    "cauchy_data",
    "circle_spectrum_closed_form",
    "random_potential_direction",
]

SIGMA_TOL = 1e-8


class IntegrationFailure(RuntimeError):
    """Propagator integration failed; carries the position of the failure."""


class CompletenessError(RuntimeError):
    """Transfer-matrix and discretization eigenvalue counts disagree."""

    def __init__(self, message, disputed=None):
        super().__init__(message)
        self.disputed = disputed or []


def _bump_profile(t):
    """C-infinity template exp(1 - 1/(1 - t^2)) on |t| < 1, zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


@dataclass(frozen=True)
class PotentialSpec:
    """Compactly supported Hermitian potential amplitude * s(x) * direction."""

    kind: str = "zero"  # zero | bump
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 0.0
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "bump"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "bump":
            if self.width <= 0:
                raise ValueError("bump potential needs a positive width")
            if self.direction is None:
                raise ValueError("bump potential needs a matrix direction")
            d = np.asarray(self.direction, dtype=complex)
            object.__setattr__(self, "direction", d)
            if np.linalg.norm(d - d.conj().T) > 1e-10 * max(1.0, np.linalg.norm(d)):
                raise ValueError("matrix direction must be Hermitian")
            nrm = np.linalg.norm(d, 2)
            if abs(nrm - 1.0) > 1e-8:
                raise ValueError("matrix direction must have unit operator norm")

    @property
    def is_zero(self):
        return self.kind == "zero" or self.amplitude == 0.0

    def support(self):
        if self.is_zero:
            return None
        return (self.center - 0.5 * self.width, self.center + 0.5 * self.width)

    def value(self, x):
        """V(x) as an (n, n) matrix (or zero matrix of the direction's size)."""
        if self.is_zero:
            raise ValueError("zero potential carries no matrix size; guard with is_zero")
        s = _bump_profile((x - self.center) / (0.5 * self.width))
        return self.amplitude * float(s) * self.direction


def random_potential_direction(T: TangentialStructure, seed: int) -> np.ndarray:
    """Seeded Hermitian direction with unit norm and tr(J W) = 0.

    The trace condition keeps the transfer matrix unimodular (the first-order
    coefficient stays trace-free), which the spectral scan relies on.
    """
    rng = np.random.default_rng(seed)
    n = T.dim
    h = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    h = 0.5 * (h + h.conj().T)
    # remove the iJ component: tr(J h) is purely imaginary, iJ is Hermitian
    y = np.trace(T.J @ h).imag
    h = h - (-y / n) * (1j * T.J)
    h = h / np.linalg.norm(h, 2)
    return h


@dataclass(frozen=True)
class CylinderOperator:
    """J(d/dx + B) + V(x) on [0, length] or a circle of that circumference.

    Interval geometry carries either a pair (p_left, p_right) of Lagrangian
    projections (condition P u(end) = 0 at each end) or a joint Lagrangian
    projection on the doubled trace space acting on (u(0), u(length)).
    Circle geometry carries no condition; it is handled internally as the
    joint condition with kernel equal to the diagonal.
    """

    structure: TangentialStructure
    length: float
    potential: PotentialSpec = PotentialSpec()
    geometry: str = "interval"
    p_left: GrassmannianPoint | None = None
    p_right: GrassmannianPoint | None = None
    p_joint: GrassmannianPoint | None = None
    _bc_kernel: np.ndarray = field(default=None, repr=False, compare=False)
    _bc_range: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.geometry not in ("interval", "circle"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        T = self.structure
        n = T.dim
        if not self.potential.is_zero:
            if self.potential.direction.shape != (n, n):
                raise ValueError("potential direction has the wrong size")
            lo, hi = self.potential.support()
            margin = 0.5 * self.potential.width
            if lo < margin or hi > self.length - margin:
                raise ValueError("potential support must keep clear of the boundary collars")
            if abs(np.trace(T.J @ self.potential.direction)) > 1e-10 * n:
                raise ValueError("potential direction must satisfy tr(J W) = 0")
        if self.geometry == "circle":
            if self.p_left is not None or self.p_right is not None or self.p_joint is not None:
                raise ValueError("circle geometry takes no boundary projections")
            diag = np.concatenate([np.eye(n), np.eye(n)], axis=0) / np.sqrt(2.0)
            anti = np.concatenate([np.eye(n), -np.eye(n)], axis=0) / np.sqrt(2.0)
            object.__setattr__(self, "_bc_kernel", diag.astype(complex))
            object.__setattr__(self, "_bc_range", anti.astype(complex))
            return
        if self.p_joint is not None:
            if self.p_left is not None or self.p_right is not None:
                raise ValueError("give either a joint condition or a left/right pair")
            check_lagrangian(doubled_structure(T), self.p_joint)
            object.__setattr__(self, "_bc_kernel", self.p_joint.kernel_basis())
            object.__setattr__(self, "_bc_range", self.p_joint.range_basis())
        else:
            if self.p_left is None or self.p_right is None:
                raise ValueError("interval geometry needs boundary conditions at both ends")
            check_lagrangian(T, self.p_left)
            check_lagrangian(T, self.p_right)
            kl = self.p_left.kernel_basis()
            kr = self.p_right.kernel_basis()
            ul = self.p_left.range_basis()
            ur = self.p_right.range_basis()
            z = np.zeros((n, n // 2), dtype=complex)
            object.__setattr__(self, "_bc_kernel", np.block([[kl, z], [z, kr]]))
            object.__setattr__(self, "_bc_range", np.block([[ul, z], [z, ur]]))

    @property
    def dim(self):
        return self.structure.dim

    def joint_condition(self) -> GrassmannianPoint:
        """The boundary condition as a projection on the doubled trace space."""
        if self.geometry == "circle":
            return GrassmannianPoint(
                self._bc_range @ self._bc_range.conj().T, tag="periodic"
            )
        if self.p_joint is not None:
            return self.p_joint
        return GrassmannianPoint(
            self._bc_range @ self._bc_range.conj().T, tag="product"
        )

    def coefficient(self, x, lam):
        """Right-hand side matrix of u' = A(x, lambda) u."""
        T = self.structure
        A = -(T.B + lam * T.J)
        if not self.potential.is_zero:
            A = A + T.J @ self.potential.value(x)
        return A

    def replace_boundary(self, p_left=None, p_right=None, p_joint=None):
        return CylinderOperator(
            structure=self.structure,
            length=self.length,
            potential=self.potential,
            geometry="interval",
            p_left=p_left,
            p_right=p_right,
            p_joint=p_joint,
        )


def transfer_matrix(op: CylinderOperator, lam: float, x0: float = 0.0, x1: float | None = None):
    """Propagator M with u(x1) = M u(x0) for solutions of (D - lambda) u = 0.

    Constant-coefficient stretches use the matrix exponential; across the
    potential support an adaptive high-order one-step method integrates the
    matrix ODE with embedded error control.
    """
    if x1 is None:
        x1 = op.length
    if x1 < x0:
        raise ValueError("x1 must be >= x0")
    T = op.structure
    n = T.dim
    A0 = -(T.B + lam * T.J)
    if op.potential.is_zero:
        return expm((x1 - x0) * A0)
    lo, hi = op.potential.support()
    a = max(x0, min(x1, lo))
    b = max(x0, min(x1, hi))
    M = np.eye(n, dtype=complex)
    if a > x0:
        M = expm((a - x0) * A0) @ M
    if b > a:
        M = _integrate_segment(op, lam, a, b) @ M
    if x1 > b:
        M = expm((x1 - b) * A0) @ M
    return M


def _integrate_segment(op, lam, a, b):
    n = op.dim

    def rhs(x, y):
        m = y.reshape(n, n)
        return (op.coefficient(x, lam) @ m).ravel()

    sol = solve_ivp(
        rhs,
        (a, b),
        np.eye(n, dtype=complex).ravel(),
        method="DOP853",
        rtol=1e-12,
        atol=1e-13,
    )
    if not sol.success:
        raise IntegrationFailure(f"propagator integration failed near x = {sol.t[-1]:.6f}")
    return sol.y[:, -1].reshape(n, n)


def characteristic_value(op: CylinderOperator, lam: float):
    """(sigma_min, nullity) of the characteristic matrix G(lambda).

    lambda is an eigenvalue iff some admissible trace (u(0), u(length)) with
    u(length) = M(lambda) u(0) lies in the kernel of the boundary condition;
    G collapses that statement to a square matrix whose rank defect is the
    eigenvalue multiplicity.
    """
    G = _characteristic_matrix(op, lam)
    s = np.linalg.svd(G, compute_uv=False)
    # the scale floor keeps the rank decision meaningful when G is 1x1 or
    # when every singular value dips at once
    smax = max(float(s[0]), 1.0)
    nullity = int(np.sum(s < SIGMA_TOL * smax))
    return float(s[-1]), nullity


def _characteristic_matrix(op, lam):
    n = op.dim
    M = transfer_matrix(op, lam)
    if op.geometry == "circle":
        return (M - np.eye(n)) / np.sqrt(2.0)
    if op.p_joint is not None or op.geometry == "circle":
        trace_map = np.concatenate([np.eye(n, dtype=complex), M], axis=0)
        return op._bc_range.conj().T @ trace_map
    # product case: reduced (n/2) x (n/2) matrix on ker(p_left)
    kl = op.p_left.kernel_basis()
    ur = op.p_right.range_basis()
    return ur.conj().T @ (M @ kl)


@dataclass(frozen=True)
class Spectrum:
    """Validated eigenvalues in a symmetric window, repeated by multiplicity."""

    eigenvalues: np.ndarray
    window: float
    method: str
    certificate: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def count(self):
        return int(self.eigenvalues.size)

    def positive(self):
        return self.eigenvalues[self.eigenvalues > 0]

    def negative(self):
        return self.eigenvalues[self.eigenvalues < 0]

    def kernel_dimension(self, tol=1e-7):
        return int(np.sum(np.abs(self.eigenvalues) <= tol))

    def count_in(self, cut):
        return int(np.sum(np.abs(self.eigenvalues) <= cut))


def _scan_minima(op, grid):
    """Candidate cells for roots: sampled sigma minima plus det phase flips.

    det G is analytic with a phase jump of pi across each odd-multiplicity
    zero, which catches narrow dips sitting between grid points on a sloping
    background; sampled local minima catch the even-multiplicity ones.
    """
    sigmas = np.empty(grid.size)
    phases = np.empty(grid.size, dtype=complex)
    for i, lam in enumerate(grid):
        G = _characteristic_matrix(op, lam)
        s = np.linalg.svd(G, compute_uv=False)
        sigmas[i] = s[-1]
        sign, _ = np.linalg.slogdet(G)
        phases[i] = sign if sign != 0 else 1.0
    cells = set()
    for i in range(1, grid.size - 1):
        if sigmas[i] <= sigmas[i - 1] and sigmas[i] <= sigmas[i + 1]:
            cells.add((i - 1, i + 1))
    for i in range(grid.size - 1):
        if np.real(phases[i] * np.conj(phases[i + 1])) < 0.0:
            cells.add((i, i + 1))
    return sigmas, sorted(cells)


def _refine_root(op, a, b, accept_scale):
    # sigma_min is V-shaped at a root; its square is smooth, so Brent plus a
    # final parabola-vertex polish reaches the abscissa to near roundoff
    res = minimize_scalar(
        lambda x: characteristic_value(op, x)[0] ** 2,
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-11},
    )
    lam = float(res.x)
    h = max(1e-7, 1e-9 * (1.0 + abs(lam)))
    f0 = characteristic_value(op, lam - h)[0] ** 2
    f1 = characteristic_value(op, lam)[0] ** 2
    f2 = characteristic_value(op, lam + h)[0] ** 2
    denom = f0 - 2.0 * f1 + f2
    if denom > 0:
        shift = 0.5 * h * (f0 - f2) / denom
        if abs(shift) < 2.0 * h:
            lam = lam + shift
    sigma, nullity = characteristic_value(op, lam)
    if sigma <= SIGMA_TOL * accept_scale and nullity >= 1:
        return lam, sigma, nullity
    return None


def _transfer_roots(op, lo, hi, step):
    """Scan [lo, hi] for characteristic minima and refine them to roots."""
    npts = max(8, int(math.ceil((hi - lo) / step)) + 1)
    grid = np.linspace(lo, hi, npts)
    sigmas, cells = _scan_minima(op, grid)
    scale = max(1.0, float(np.median(sigmas)))
    roots = []
    for a, b in cells:
        hit = _refine_root(op, grid[a], grid[b], scale)
        if hit is not None:
            roots.append(hit)
    # merge duplicates found from adjacent grid minima; keep the lower lambda
    roots.sort(key=lambda r: r[0])
    merged = []
    for lam, sigma, nullity in roots:
        if merged and abs(lam - merged[-1][0]) <= 1e-9 * (1.0 + abs(lam)):
            continue
        merged.append((lam, sigma, nullity))
    return merged


def eigenvalues_in_window(
    op: CylinderOperator,
    window: float,
    grid_factor: float = 1.0,
    certificate: bool = True,
    fd_points: int | None = None,
) -> Spectrum:
    """All eigenvalues in [-window, window] with multiplicities.

    Minima of the smallest singular value of G are located on a grid of step
    pi / (4 length) (divided by grid_factor) and refined by bounded scalar
    minimization; multiplicity is the rank defect at the refined point.  When
    certificate is set the count is cross-checked against fd_discretize and a
    mismatch escalates through local rescans before failing hard.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    step = math.pi / (4.0 * op.length) / grid_factor
    pad = 4.0 * step
    roots = _transfer_roots(op, -window - pad, window + pad, step)

    if certificate:
        roots = _certify(op, roots, window, step, fd_points)

    eigs = []
    for lam, _, nullity in roots:
        if abs(lam) <= window:
            eigs.extend([lam] * nullity)
    eigs = np.array(sorted(eigs))
    cert = {}
    if certificate:
        cert = op.__dict__.get("_last_certificate", {})
    return Spectrum(eigenvalues=eigs, window=window, method="transfer_matrix", certificate=cert)


def _certify(op, roots, window, step, fd_points):
    """Count cross-check against the discretization oracle, with local rescan."""
    cut, margin = _certificate_cut(roots, window)
    n_fd = fd_points or _auto_fd_points(op, window, margin)
    fd = fd_discretize(op, n_fd, window=window + 4.0 * step, certificate=False)
    for attempt in range(3):
        t_count = sum(nu for lam, _, nu in roots if abs(lam) <= cut)
        f_count = fd.count_in(cut)
        if t_count == f_count:
            object.__setattr__(op, "_last_certificate", {
                "fd_points": n_fd,
                "cut": cut,
                "transfer_count": t_count,
                "fd_count": f_count,
            })
            return roots
        disputed = _disputed_intervals(roots, fd, cut)
        finer = step / (4.0 ** (attempt + 1))
        for a, b in disputed:
            extra = _transfer_roots(op, a, b, finer)
            roots = _merge_roots(roots, extra)
    t_count = sum(nu for lam, _, nu in roots if abs(lam) <= cut)
    f_count = fd.count_in(cut)
    if t_count == f_count:
        object.__setattr__(op, "_last_certificate", {
            "fd_points": n_fd,
            "cut": cut,
            "transfer_count": t_count,
            "fd_count": f_count,
        })
        return roots
    disputed = _disputed_intervals(roots, fd, cut)
    raise CompletenessError(
        f"transfer count {t_count} != discretization count {f_count} in |lambda| <= {cut:.6g}",
        disputed=disputed,
    )


def _merge_roots(roots, extra):
    allr = sorted(roots + extra, key=lambda r: r[0])
    merged = []
    for lam, sigma, nullity in allr:
        if merged and abs(lam - merged[-1][0]) <= 1e-9 * (1.0 + abs(lam)):
            continue
        merged.append((lam, sigma, nullity))
    return merged


def _certificate_cut(roots, window):
    """A cut near the window edge staying clear of located eigenvalues."""
    positions = sorted(abs(lam) for lam, _, _ in roots)
    margin = 0.02 * (1.0 + window) / max(1, len(positions))
    margin = max(margin, 1e-4)
    cut = window
    for _ in range(64):
        if all(abs(p - cut) > margin for p in positions):
            return cut, margin
        cut -= margin
    return window, margin


def _disputed_intervals(roots, fd_spectrum, cut):
    """Subintervals between located roots whose fd counts disagree."""
    edges = [-cut] + sorted(lam for lam, _, _ in roots if abs(lam) <= cut) + [cut]
    fd_vals = fd_spectrum.eigenvalues
    disputed = []
    for a, b in zip(edges[:-1], edges[1:]):
        lo, hi = a + 1e-9, b - 1e-9
        if hi <= lo:
            continue
        inside = np.sum((fd_vals > lo) & (fd_vals < hi))
        if inside > 0:
            disputed.append((float(a), float(b)))
    return disputed or [(-cut, cut)]


def _auto_fd_points(op, window, margin):
    """Grid size keeping the oracle's eigenvalue error under the cut margin."""
    L, lam = op.length, max(window, 1.0)
    # midpoint scheme phase error ~ L lam^3 h^2 / 12; keep below margin/4
    h = math.sqrt(max(margin, 1e-4) * 3.0 / (L * lam**3))
    n = int(math.ceil(L / h))
    return int(min(max(400, n, 12 * lam * L), 4000))


# ---------------------------------------------------------------------------
# independent discretization oracle


def fd_discretize(
    op: CylinderOperator,
    n_points: int,
    window: float | None = None,
    certificate: bool = True,
) -> Spectrum:
    """Eigenvalues of a symmetric second-order grid discretization.

    The first-order action is sampled on cell midpoints (trapezoidal average
    of the endpoint values, exact derivative across the cell); the Hermitian
    least-squares form of that map, with boundary degrees of freedom
    eliminated against the condition's kernel, yields squared eigenvalues
    free of spurious grid modes.  Signs are recovered from the first-order
    Rayleigh quotient of each eigenvector.  Used as the counting oracle for
    the transfer-matrix spectra.
    """
    if n_points < 200:
        raise ValueError("discretization needs at least 200 grid points")
    if window is None:
        window = 10.0 * math.pi / op.length
    nyquist = 8.0 * window * op.length / (2.0 * math.pi)
    if n_points < nyquist:
        raise ValueError(
            f"{n_points} points cannot resolve the window {window:.3g}; need >= {int(nyquist) + 1}"
        )
    T = op.structure
    n = T.dim
    N = int(n_points)
    h = op.length / N

    mids = (np.arange(N) + 0.5) * h
    JB = T.J @ T.B
    left_blocks = np.empty((N, n, n), dtype=complex)
    right_blocks = np.empty((N, n, n), dtype=complex)
    for j in range(N):
        half = 0.5 * JB.copy()
        if not op.potential.is_zero:
            half = half + 0.5 * op.potential.value(mids[j])
        left_blocks[j] = -T.J / h + half
        right_blocks[j] = T.J / h + half

    if op.geometry == "interval" and op.p_joint is None:
        evals, evecs, weights, first_order = _assemble_product(
            op, N, h, left_blocks, right_blocks, window
        )
    else:
        evals, evecs, weights, first_order = _assemble_joint(
            op, N, h, left_blocks, right_blocks, window
        )

    eigs = _signed_from_clusters(evals, evecs, weights, first_order, h, op.length, window)
    return Spectrum(
        eigenvalues=eigs,
        window=window,
        method="discretization",
        certificate={"grid_points": N},
    )


def _signed_from_clusters(evals, evecs, weights, first_order, h, length, window):
    """Assign signs to sqrt-eigenvalues of the squared form.

    +-lambda pairs are degenerate for the squared operator, so single-vector
    Rayleigh quotients see arbitrary mixtures.  Within each near-degenerate
    cluster the first-order form restricted to the cluster eigenspace is
    diagonalized instead; its eigenvalues carry the signs.
    """
    mags = np.sqrt(np.clip(evals, 0.0, None))
    order = np.argsort(mags)
    mags = mags[order]
    vecs = evecs[:, order]
    out = []
    i = 0
    while i < mags.size:
        j = i + 1
        while j < mags.size:
            lam = mags[j - 1]
            tol = max(1e-8, 8.0 * h * h * lam**3 * length, 1e-7 * lam)
            if mags[j] - mags[j - 1] <= tol:
                j += 1
            else:
                break
        cluster = vecs[:, i:j]
        gram = cluster.conj().T @ (weights[:, None] * cluster)
        r_small = cluster.conj().T @ (first_order @ cluster)
        # solve the cluster-restricted generalized problem
        gl, gv = np.linalg.eigh(gram)
        ginv_half = gv @ np.diag(1.0 / np.sqrt(gl)) @ gv.conj().T
        r_std = ginv_half @ r_small @ ginv_half
        signed = np.sort(np.linalg.eigvalsh(0.5 * (r_std + r_std.conj().T)))
        cluster_mags = np.sort(mags[i:j])
        n_neg = int(np.sum(signed < 0))
        vals = [-m for m in cluster_mags[::-1][:n_neg]] + list(cluster_mags[: j - i - n_neg])
        out.extend(vals)
        i = j
    out = np.array(sorted(v for v in out if abs(v) <= window))
    return out


def _assemble_product(op, N, h, lb, rb, window):
    """Banded Hermitian assembly for left/right product conditions."""
    import scipy.sparse as sp

    n = op.dim
    m = n // 2
    kl = op.p_left.kernel_basis()
    kr = op.p_right.kernel_basis()
    size = m + (N - 1) * n + m
    bw = 2 * n - 1

    def col_map(node):
        """(offset, elimination basis or None) for a node's surviving DOFs."""
        if node == 0:
            return 0, kl
        if node == N:
            return m + (N - 1) * n, kr
        return m + (node - 1) * n, None

    blocks = {}
    first_rows, first_cols, first_vals = [], [], []
    for j in range(N):
        pairs = [(j, lb[j]), (j + 1, rb[j])]
        for (na, Ba) in pairs:
            oa, ea = col_map(na)
            for (nb, Bb) in pairs:
                ob, eb = col_map(nb)
                blk = h * (Ba.conj().T @ Bb)
                fo = (h / 2.0) * Bb  # <u, D u> cell pairing, trapezoid in u
                if ea is not None:
                    blk = ea.conj().T @ blk
                    fo = ea.conj().T @ fo
                if eb is not None:
                    blk = blk @ eb
                    fo = fo @ eb
                key = (oa, ob)
                if key in blocks:
                    blocks[key] = blocks[key] + blk
                else:
                    blocks[key] = blk
                r, c = fo.shape
                for a in range(r):
                    for b in range(c):
                        first_rows.append(oa + a)
                        first_cols.append(ob + b)
                        first_vals.append(fo[a, b])

    # trapezoid node weights; diagonal after elimination (kernels orthonormal)
    wvec = np.empty(size)
    wvec[:m] = h / 2.0
    wvec[m : m + (N - 1) * n] = h
    wvec[m + (N - 1) * n :] = h / 2.0
    scale = 1.0 / np.sqrt(wvec)

    band = np.zeros((bw + 1, size), dtype=complex)
    hs_rows, hs_cols, hs_vals = [], [], []
    for (i0, j0), blk in blocks.items():
        r, c = blk.shape
        for a in range(r):
            for b in range(c):
                i, jj = i0 + a, j0 + b
                v = blk[a, b] * scale[i] * scale[jj]
                hs_rows.append(i)
                hs_cols.append(jj)
                hs_vals.append(v)
                if jj >= i:
                    band[bw - (jj - i), jj] += v
    vmax = window * window * 1.000001
    evals = eig_banded(
        band, lower=False, eigvals_only=True, select="v", select_range=(-1e-9, vmax)
    )

    # eigenvectors via shift-invert Lanczos on the sparse scaled form; the
    # banded values above stay the authoritative count
    Hs = sp.coo_matrix((hs_vals, (hs_rows, hs_cols)), shape=(size, size)).tocsr()
    Hs = 0.5 * (Hs + Hs.conj().T)
    k = evals.size
    if k == 0:
        evecs = np.zeros((size, 0), dtype=complex)
    else:
        from scipy.sparse.linalg import eigsh

        vals2, vecs2 = eigsh(Hs, k=min(k, size - 2), sigma=-1e-3, which="LM")
        order = np.argsort(vals2)
        vals2, vecs2 = vals2[order], vecs2[:, order]
        if not np.allclose(np.sort(evals), vals2[: evals.size], atol=1e-6 * max(1.0, vmax)):
            raise CompletenessError("banded and shift-invert discretizations disagree")
        evecs = vecs2[:, : evals.size] * scale[:, None]

    A = sp.coo_matrix(
        (first_vals, (first_rows, first_cols)), shape=(size, size)
    ).tocsr()
    first = 0.5 * (A + A.conj().T)
    return evals, evecs, wvec, first


def _assemble_joint(op, N, h, lb, rb, window):
    """Dense Hermitian assembly for joint conditions (and circles)."""
    n = op.dim
    K = op._bc_kernel  # (2n, q) with q = n
    q = K.shape[1]
    size = q + (N - 1) * n

    def col_map(node):
        if node == 0:
            return 0, K[:n, :]
        if node == N:
            return 0, K[n:, :]
        return q + (node - 1) * n, None

    H = np.zeros((size, size), dtype=complex)
    A1 = np.zeros((size, size), dtype=complex)
    for j in range(N):
        pairs = [(j, lb[j]), (j + 1, rb[j])]
        for (na, Ba) in pairs:
            oa, ea = col_map(na)
            for (nb, Bb) in pairs:
                ob, eb = col_map(nb)
                blk = h * (Ba.conj().T @ Bb)
                fo = (h / 2.0) * Bb
                if ea is not None:
                    blk = ea.conj().T @ blk
                    fo = ea.conj().T @ fo
                if eb is not None:
                    blk = blk @ eb
                    fo = fo @ eb
                H[oa : oa + blk.shape[0], ob : ob + blk.shape[1]] += blk
                A1[oa : oa + fo.shape[0], ob : ob + fo.shape[1]] += fo

    wvec = np.empty(size)
    # kernel basis is orthonormal on the doubled space, so its gram is h/2 I
    wvec[:q] = h / 2.0
    wvec[q:] = h
    scale = 1.0 / np.sqrt(wvec)
    Hs = H * scale[:, None] * scale[None, :]
    Hs = 0.5 * (Hs + Hs.conj().T)
    vmax = window * window * 1.000001
    evals, evecs = eigh(Hs, subset_by_value=(-1e-9, vmax))
    evecs = evecs * scale[:, None]
    A1 = 0.5 * (A1 + A1.conj().T)
    return evals, evecs, wvec, A1


def cauchy_data(op: CylinderOperator) -> CauchyData:
    """Orthonormal basis of {(u(0), u(length)) : (D - 0) u = 0}.

    Boundary projections are ignored; the full n-dimensional solution space
    is propagated.  The span is Lagrangian for the doubled structure.
    """
    if op.geometry != "interval":
        raise ValueError("Cauchy data is defined for interval geometry")
    n = op.dim
    M0 = transfer_matrix(op, 0.0)
    raw = np.concatenate([np.eye(n, dtype=complex), M0], axis=0)
    q, _ = np.linalg.qr(raw)
    return CauchyData(basis=q)


def circle_spectrum_closed_form(T: TangentialStructure, circumference: float, window: float) -> Spectrum:
    """V = 0 circle eigenvalues: +-sqrt(b^2 + (2 pi k / L)^2) over blocks and k in Z."""
    vals = np.linalg.eigvalsh(T.B)
    pos = vals[vals > 0]
    eigs = []
    for b in pos:
        k = 0
        while True:
            mu = 2.0 * math.pi * k / circumference
            lam = math.hypot(b, mu)
            if lam > window:
                break
            mult = 1 if k == 0 else 2
            eigs.extend([lam] * mult + [-lam] * mult)
            k += 1
    return Spectrum(
        eigenvalues=np.array(sorted(eigs)),
        window=window,
        method="closed_form",
    )
