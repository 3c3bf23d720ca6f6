"""Spectral certificates deciding whether a degree jump can be certified.

The reaction term is summarized by its slope matrices at the two ends of the
orthant (near zero and toward infinity), each paired with the slope matrix of
the diffusion substitution at the same end.  What matters for the solvability
count is where the spectral abscissa of reaction-slope times inverse
diffusion-slope sits relative to the principal diffusion eigenvalue: if the
two ends land on opposite sides (and the eigenvalue itself is safely excluded
from the distinguished spectrum at both ends), small balls and large balls
carry different counts and a nonzero profile must exist in between.

The distinguished spectrum collects real eigenvalues that own a nonzero
nonnegative eigenvector; for matrices with nonnegative off-diagonal entries
it contains the abscissa, which is the classical Perron situation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

_MAX_COMPONENTS = 12


def is_quasi_nonnegative(mat, tol: float = 1e-14) -> bool:
    """True when every off-diagonal entry is >= -tol."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("expected a square matrix")
    off = mat - np.diag(np.diag(mat))
    return bool(off.min() >= -tol)


def spectral_abscissa(mat) -> float:
    """Largest real part over the spectrum."""
    mat = np.asarray(mat, dtype=float)
    return float(np.max(np.linalg.eigvals(mat).real))


def _nonneg_in_line(b, tol: float) -> bool:
    scale = np.max(np.abs(b))
    if scale == 0.0:
        return False
    return bool(np.min(b) >= -tol * scale or np.max(b) <= tol * scale)


def _nonneg_in_plane(basis, tol: float) -> bool:
    # feasible directions form an intersection of closed half-planes through
    # the origin; if it is nonempty some constraint boundary angle (or any
    # fallback probe) lies inside it
    norms = np.linalg.norm(basis, axis=1)
    keep = norms > 1e-12 * max(norms.max(), 1.0)
    candidates = [0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi]
    for row in basis[keep]:
        theta = np.arctan2(row[1], row[0])
        candidates += [theta, theta + 0.5 * np.pi, theta - 0.5 * np.pi]
    candidates += list(np.linspace(0.0, 2.0 * np.pi, 361))
    for phi in candidates:
        x = basis @ np.array([np.cos(phi), np.sin(phi)])
        if np.min(x) >= -tol * max(1.0, np.max(np.abs(x))):
            return True
    return False


def _nonneg_feasible(basis, tol: float) -> bool:
    """Does span(basis columns) contain a nonzero nonnegative vector?"""
    k = basis.shape[1]
    if k == 1:
        return _nonneg_in_line(basis[:, 0], tol)
    if k == 2:
        return _nonneg_in_plane(basis, tol)
    # higher-dimensional eigenspace: normalize the coordinate sum to one and
    # solve the linear feasibility program over eigenspace coordinates
    n = basis.shape[0]
    res = linprog(c=np.zeros(k), A_ub=-basis, b_ub=np.full(n, tol),
                  A_eq=basis.sum(axis=0, keepdims=True), b_eq=np.array([1.0]),
                  bounds=[(None, None)] * k, method="highs")
    return bool(res.status == 0)


def sigma_plus(mat, tol: float = 1e-9) -> tuple:
    """Real eigenvalues that carry a nonzero nonnegative eigenvector, sorted.

    Eigenvalues are clustered to absorb multiplicity, the eigenspace basis is
    read off an SVD, and nonnegative feasibility over that basis is decided
    geometrically in dimensions one and two and by a feasibility program
    above that.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("expected a square matrix")
    n = mat.shape[0]
    if n > _MAX_COMPONENTS:
        raise ValueError(f"supported up to {_MAX_COMPONENTS} components, got {n}")
    scale = max(1.0, float(np.linalg.norm(mat, np.inf)))
    vals = np.linalg.eigvals(mat)
    reals = np.sort(vals.real[np.abs(vals.imag) <= tol * scale])
    if reals.size == 0:
        return ()
    clusters = [[reals[0]]]
    for v in reals[1:]:
        if v - clusters[-1][-1] <= 10 * tol * scale:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    found = []
    eye = np.eye(n)
    for group in clusters:
        lam = float(np.mean(group))
        svals = np.linalg.svd(mat - lam * eye, compute_uv=True)
        u_, s_, vh = svals
        cut = max(tol * scale, s_[0] * 1e-12) if s_.size else tol * scale
        k = int(np.sum(s_ <= cut))
        if k == 0:
            k = 1
        basis = vh[n - k:].T
        if _nonneg_feasible(basis, tol):
            found.append(lam)
    return tuple(found)


@dataclass(frozen=True)
class ReactionMatrices:
    """Slope summaries of the reaction and diffusion substitution at both ends."""

    reaction_at_zero: np.ndarray
    reaction_at_infinity: np.ndarray
    diffusion_at_zero: np.ndarray
    diffusion_at_infinity: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("reaction_at_zero", "reaction_at_infinity",
                     "diffusion_at_zero", "diffusion_at_infinity"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            mats[name] = m
            object.__setattr__(self, name, m)
        sizes = {m.shape[0] for m in mats.values()}
        if len(sizes) != 1:
            raise ValueError("all slope matrices must share one size")
        m = sizes.pop()
        if m < 1 or m > _MAX_COMPONENTS:
            raise ValueError(f"component count must be in 1..{_MAX_COMPONENTS}")
        for name in ("reaction_at_zero", "reaction_at_infinity"):
            if not is_quasi_nonnegative(mats[name]):
                raise ValueError(f"{name} must have nonnegative off-diagonal entries")
        for name in ("diffusion_at_zero", "diffusion_at_infinity"):
            if np.linalg.cond(mats[name]) > 1e12:
                raise ValueError(f"{name} is numerically singular")

    @property
    def components(self) -> int:
        return self.reaction_at_zero.shape[0]

    def ratio_at_zero(self) -> np.ndarray:
        return self.reaction_at_zero @ np.linalg.inv(self.diffusion_at_zero)

    def ratio_at_infinity(self) -> np.ndarray:
        return self.reaction_at_infinity @ np.linalg.inv(self.diffusion_at_infinity)


@dataclass(frozen=True)
class SpectralCertificate:
    """Outcome of the two-end comparison against the principal eigenvalue.

    verdict is one of 'degree_jump_exists', 'no_jump', 'inconclusive'.
    margin is the smallest of the quantities the verdict relies on, so a
    perturbation below it cannot flip the answer.
    """

    lambda1: float
    sigma_plus_at_zero: tuple
    sigma_plus_at_infinity: tuple
    abscissa_at_zero: float
    abscissa_at_infinity: float
    excluded_at_zero: bool
    excluded_at_infinity: bool
    verdict: str
    margin: float
    notes: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "sigma_plus_at_zero": list(self.sigma_plus_at_zero),
            "sigma_plus_at_infinity": list(self.sigma_plus_at_infinity),
            "abscissa_at_zero": self.abscissa_at_zero,
            "abscissa_at_infinity": self.abscissa_at_infinity,
            "excluded_at_zero": self.excluded_at_zero,
            "excluded_at_infinity": self.excluded_at_infinity,
            "verdict": self.verdict,
            "margin": self.margin,
            "notes": list(self.notes),
        }


def certificate(mats: ReactionMatrices, lambda1: float,
                exclusion_tol: float = 1e-8) -> SpectralCertificate:
    """Compare both ends of the reaction against the principal eigenvalue.

    The small-ball count is decided by the zero-end ratio matrix and the
    large-ball count by the infinity-end ratio matrix; opposite sides of
    lambda1 certify a jump.  Whenever lambda1 sits within exclusion_tol of
    the distinguished spectrum at either end the comparison is refused and
    the verdict is inconclusive.
    """
    lambda1 = float(lambda1)
    c0 = mats.ratio_at_zero()
    cinf = mats.ratio_at_infinity()
    sp0 = sigma_plus(c0)
    spinf = sigma_plus(cinf)
    s0 = spectral_abscissa(c0)
    sinf = spectral_abscissa(cinf)
    dist0 = min((abs(lambda1 - v) for v in sp0), default=np.inf)
    distinf = min((abs(lambda1 - v) for v in spinf), default=np.inf)
    excluded0 = dist0 > exclusion_tol
    excludedinf = distinf > exclusion_tol
    gap0 = s0 - lambda1
    gapinf = sinf - lambda1
    notes = [
        "small-ball count decided by reaction/diffusion slopes at zero, "
        "large-ball count by the slopes at infinity",
    ]
    if not (excluded0 and excludedinf):
        verdict = "inconclusive"
        notes.append("principal eigenvalue too close to the distinguished "
                     "spectrum; comparison refused")
    elif gap0 * gapinf < 0.0:
        verdict = "degree_jump_exists"
    elif gap0 * gapinf > 0.0:
        verdict = "no_jump"
    else:
        verdict = "inconclusive"
        notes.append("abscissa ties the principal eigenvalue exactly")
    margin = min(dist0, distinf, abs(gap0), abs(gapinf))
    return SpectralCertificate(
        lambda1=lambda1,
        sigma_plus_at_zero=sp0,
        sigma_plus_at_infinity=spinf,
        abscissa_at_zero=s0,
        abscissa_at_infinity=sinf,
        excluded_at_zero=excluded0,
        excluded_at_infinity=excludedinf,
        verdict=verdict,
        margin=float(margin),
        notes=tuple(notes),
    )
