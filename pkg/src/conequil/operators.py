"""Finite difference diffusion operators with cached resolvent solves.

The shipped operator is the Dirichlet Laplacian on an interval or a
rectangle, acting componentwise on stacked multi-component states.  Stacked
means component-major: component 1 at every grid site, then component 2, and
so on.  The resolvent (I + lam*A)^{-1} is the workhorse of the fixed point
solver, so one sparse factorization per lam is kept on the operator.  An
accretivity shift omega is carried for bookkeeping (0 for the Laplacian);
resolvents of shifted operators are reduced to the unshifted cache by a
change of step and scale rather than factoring new matrices.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu


@dataclass(frozen=True)
class GridSpec:
    """Interior-node grid for a 1-D interval or 2-D rectangle."""

    dim: int
    extents: tuple
    nodes: tuple
    components: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        if len(self.extents) != self.dim or len(self.nodes) != self.dim:
            raise ValueError("extents and nodes must match dim")
        if any(e <= 0 for e in self.extents):
            raise ValueError("extents must be positive")
        if any(n < 1 for n in self.nodes):
            raise ValueError("need at least one interior node per axis")
        if self.components < 1:
            raise ValueError("components must be at least 1")

    def spacing(self) -> tuple:
        return tuple(e / (n + 1) for e, n in zip(self.extents, self.nodes))

    def n_sites(self) -> int:
        return int(np.prod(self.nodes))

    def size(self) -> int:
        """Length of a stacked state vector."""
        return self.components * self.n_sites()

    def coordinates(self) -> np.ndarray:
        """(n_sites, dim) interior node positions, row-major over axes."""
        hs = self.spacing()
        axes = [h * np.arange(1, n + 1) for h, n in zip(hs, self.nodes)]
        if self.dim == 1:
            return axes[0].reshape(-1, 1)
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


def _second_difference(n: int, h: float) -> sparse.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sparse.diags([off, main, off], offsets=(-1, 0, 1), format="csr")


class DiscreteOperator:
    """Componentwise linear diffusion operator over a grid.

    scalar_matrix is the per-component block; apply() and the resolvent act
    on stacked states.  Factorizations of (I + lam*A) are cached per lam
    behind a lock, so concurrent solver runs can share one operator.
    """

    def __init__(self, grid: GridSpec, scalar_matrix, omega: float = 0.0):
        self.grid = grid
        self.omega = float(omega)
        self.scalar_matrix = scalar_matrix.tocsr()
        self._csc = scalar_matrix.tocsc()
        self._factors = {}
        self._principal = None
        self._lock = threading.Lock()

    @property
    def resolvent_cache(self):
        """Read-only view of the cached step sizes."""
        return dict(self._factors)

    def apply(self, u) -> np.ndarray:
        """A u for a stacked state u."""
        u = np.asarray(u, dtype=float)
        m, ns = self.grid.components, self.grid.n_sites()
        if u.shape != (m * ns,):
            raise ValueError(f"expected a stacked state of length {m * ns}")
        blocks = u.reshape(m, ns)
        return np.asarray((self.scalar_matrix @ blocks.T).T).reshape(-1)

    def factor(self, lam: float):
        key = float(lam)
        with self._lock:
            fac = self._factors.get(key)
            if fac is None:
                n = self.scalar_matrix.shape[0]
                mat = (sparse.identity(n, format="csc") + key * self._csc).tocsc()
                fac = splu(mat)
                self._factors[key] = fac
        return fac


def laplacian_dirichlet(grid: GridSpec) -> DiscreteOperator:
    """Dirichlet Laplacian on the grid: tridiagonal in 1-D, a Kronecker sum in 2-D."""
    hs = grid.spacing()
    if grid.dim == 1:
        block = _second_difference(grid.nodes[0], hs[0])
    else:
        ax = _second_difference(grid.nodes[0], hs[0])
        ay = _second_difference(grid.nodes[1], hs[1])
        ix = sparse.identity(grid.nodes[0], format="csr")
        iy = sparse.identity(grid.nodes[1], format="csr")
        block = (sparse.kron(ax, iy) + sparse.kron(ix, ay)).tocsr()
    return DiscreteOperator(grid, block, omega=0.0)


def resolvent(op: DiscreteOperator, lam: float, v) -> np.ndarray:
    """Solve (I + lam*A) u = v componentwise; residual kept below 1e-10*|v|."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    v = np.asarray(v, dtype=float)
    m, ns = op.grid.components, op.grid.n_sites()
    if v.shape != (m * ns,):
        raise ValueError(f"expected a stacked state of length {m * ns}")
    fac = op.factor(lam)
    rhs = v.reshape(m, ns).T
    sol = fac.solve(rhs)
    resid = rhs - (sol + lam * (op.scalar_matrix @ sol))
    scale = max(np.linalg.norm(rhs), 1e-300)
    if np.linalg.norm(resid) > 1e-13 * scale:
        # one refinement step collapses the residual to solve noise
        sol = sol + fac.solve(resid)
        resid = rhs - (sol + lam * (op.scalar_matrix @ sol))
    if np.linalg.norm(resid) > 1e-10 * scale:
        raise RuntimeError("resolvent solve failed to reach tolerance")
    return np.asarray(sol.T).reshape(-1)


def resolvent_identity_check(op: DiscreteOperator, lambda1: float, lambda2: float,
                             n_samples: int = 20, seed: int = 0,
                             corruption: float = 0.0) -> float:
    """Worst residual of the two-parameter resolvent identity on random unit vectors.

    The identity J_{l1} v = J_{l2}((l2/l1) v + (1 - l2/l1) J_{l1} v) ties
    resolvents at different step sizes together; it degenerates to an exact
    tautology at l1 == l2.  `corruption` shifts the outer step on the right
    side only, which is how tests confirm the check can actually fail.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    ratio = lambda2 / lambda1
    for _ in range(n_samples):
        v = rng.standard_normal(op.grid.size())
        v /= np.linalg.norm(v)
        lhs = resolvent(op, lambda1, v)
        inner = ratio * v + (1.0 - ratio) * lhs
        rhs = resolvent(op, lambda2 + corruption, inner)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


def shifted_resolvent(op: DiscreteOperator, omega: float, lam: float, v) -> np.ndarray:
    """Resolvent (I + lam*(A + omega*I))^{-1} v through the unshifted cache.

    A change of step and scale maps the shifted solve onto the cached one:
    with s = 1 + lam*omega, the answer is J_{lam/s}(v / s).  Needs s > 0;
    steps with lam*omega >= 1 are rejected outright.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if lam * omega >= 1.0:
        raise ValueError("lam*omega must stay below 1")
    scale = 1.0 + lam * omega
    if scale <= 0.0:
        raise ValueError("1 + lam*omega must stay positive")
    if omega == 0.0:
        return resolvent(op, lam, v)
    return resolvent(op, lam / scale, np.asarray(v, dtype=float) / scale)


@dataclass
class EigenPair:
    """Principal eigenvalue/eigenvector of the scalar diffusion block."""

    value: float
    vector: np.ndarray  # unit norm, entrywise positive, over grid sites
    residual: float


def principal_eigenpair(op: DiscreteOperator, tol: float = 1e-11,
                        max_iters: int = 500) -> EigenPair:
    """Smallest eigenpair of the scalar block by deterministic inverse iteration.

    Starts from the all-ones vector, so the sign convention is positive.  The
    result is cached on the operator.
    """
    if op._principal is not None:
        return op._principal
    A = op.scalar_matrix
    n = A.shape[0]
    fac = splu(op._csc)
    x = np.ones(n) / np.sqrt(n)
    lam = float(x @ (A @ x))
    resid = float(np.linalg.norm(A @ x - lam * x))
    stall = 0
    for _ in range(max_iters):
        y = fac.solve(x)
        x = y / np.linalg.norm(y)
        lam = float(x @ (A @ x))
        new_resid = float(np.linalg.norm(A @ x - lam * x))
        if new_resid <= tol:
            resid = new_resid
            break
        stall = stall + 1 if new_resid >= 0.5 * resid else 0
        resid = new_resid
        if stall >= 8:
            break
    if resid > 1e-10:
        raise RuntimeError(f"inverse iteration stalled at residual {resid:.3e}")
    if np.sum(x) < 0:
        x = -x
    pair = EigenPair(value=lam, vector=x, residual=resid)
    op._principal = pair
    return pair


def low_spectrum(op: DiscreteOperator, k: int):
    """The k smallest eigenpairs of the scalar block (dense path, small grids).

    Used to verify eigen-structure hypotheses: simplicity of the principal
    eigenvalue and sign changes of the higher modes.
    """
    n = op.scalar_matrix.shape[0]
    if n > 4000:
        raise ValueError("dense spectrum only supported for small grids")
    import scipy.linalg

    vals, vecs = scipy.linalg.eigh(op.scalar_matrix.toarray())
    k = min(k, n)
    return vals[:k], vecs[:, :k]


def accretivity_check(op: DiscreteOperator, n_samples: int = 100,
                      seed: int = 0) -> float:
    """Minimum of <A u, u> over random unit states; nonnegative up to rounding."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_samples):
        u = rng.standard_normal(op.grid.size())
        u /= np.linalg.norm(u)
        worst = min(worst, float(u @ op.apply(u)))
    return worst
