"""Lattice geometry and long-range interaction matrices.

A bosonic lattice field with amplitudes ``a_n`` on M sites, two-body
interactions

    H_int = (1/2) sum_{nm} a+_n a+_m W_nm a_n a_m ,

and a soft-core power-law interaction kernel

    W(r) = -C6 / (r**p + eps**p)**q

evaluated at minimum-image distances on a periodic box.  ``W`` is then real
symmetric and circulant (translation invariant), so its eigenvalues are the
discrete Fourier transform of its first row.

Besides ``W`` itself the stochastic equations need:

* ``sqrt_w``  -- a symmetric matrix square root, complex when W has negative
  eigenvalues (sqrt taken as i*sqrt(|lambda|) on the negative branch);
* ``U = Re(sqrt_w sqrt_w^dagger)`` -- the "rectified" positive-semidefinite
  companion of W that controls sampling-variance growth;
* the spectrum ``w_tilde_p = dV * FFT(W row)`` used by the O(M log M) engine.

Lattice amplitudes relate to the continuum field by ``a_n = psi(x_n) sqrt(dV)``;
with that scaling the pair kernel enters the lattice equations as plain
``W(x_n - x_m)`` with no volume-element factors.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigurationError

#: relative tolerance for "this matrix/spectrum should be real" checks
REALNESS_RTOL = 1e-10


# ----------------------------------------------------------------------------
# lattice geometry
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class LatticeSpec:
    """Uniform periodic lattice on a d-dimensional box.

    Parameters
    ----------
    extents : tuple of int
        Number of sites along each axis; total sites M = prod(extents).
    lengths : tuple of float
        Full box length along each axis (site spacing = length/extent).
    periodic : bool
        Periodic wrapping.  The interaction-matrix builder requires periodic
        lattices (minimum-image convention); open boundaries are only
        supported by the hopping/kinetic builders.
    """

    extents: tuple[int, ...]
    lengths: tuple[float, ...]
    periodic: bool = True

    def __post_init__(self):
        if len(self.extents) != len(self.lengths):
            raise ConfigurationError("extents and lengths must have equal rank")
        if not self.extents or any(int(e) < 1 for e in self.extents):
            raise ConfigurationError("lattice extents must be positive integers")
        if any(l <= 0 for l in self.lengths):
            raise ConfigurationError("lattice lengths must be positive")
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "lengths", tuple(float(l) for l in self.lengths))

    @property
    def ndim(self) -> int:
        return len(self.extents)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(l / e for l, e in zip(self.lengths, self.extents))

    @property
    def cell_volume(self) -> float:
        """Volume element dV (product of spacings)."""
        return float(np.prod(self.spacings))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def positions(self) -> np.ndarray:
        """Site coordinates, shape (M, ndim); site 0 sits at the box corner."""
        axes = [np.arange(e) * dx for e, dx in zip(self.extents, self.spacings)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def min_image_distance(self, n: int, m: int) -> float:
        """Minimum-image distance between (flat) site indices n and m."""
        if not self.periodic:
            raise ConfigurationError("minimum-image distance needs a periodic lattice")
        mn = np.unravel_index(n, self.extents)
        mm = np.unravel_index(m, self.extents)
        d2 = 0.0
        for in_, im, e, dx, L in zip(mn, mm, self.extents, self.spacings, self.lengths):
            d = abs(in_ - im) * dx
            d = min(d, L - d)
            d2 += d * d
        return math.sqrt(d2)

    def distance_row(self) -> np.ndarray:
        """Minimum-image distances from site 0 to every site, shape (M,)."""
        if not self.periodic:
            raise ConfigurationError("minimum-image distance needs a periodic lattice")
        pos = self.positions()
        d = pos.copy()
        for ax, L in enumerate(self.lengths):
            w = d[:, ax]
            np.minimum(w, L - w, out=w)
        return np.sqrt((d * d).sum(axis=1))


# ----------------------------------------------------------------------------
# interaction kernel
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class InteractionPotential:
    """Soft-core power-law pair potential W(r) = -c6 / (r**p + eps**p)**q.

    ``c6 < 0`` gives a repulsive kernel with W(0) = -c6/eps**(p*q).
    The defaults p=2, q=3 give the 1/r^6 van-der-Waals tail.
    """

    c6: float
    eps: float
    power_r: float = 2.0
    power_outer: float = 3.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigurationError("softening length eps must be positive")

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return -self.c6 / (r ** self.power_r + self.eps ** self.power_r) ** self.power_outer


def build_potential_matrix(lattice: LatticeSpec, potential) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the pair kernel at minimum-image distances.

    Parameters
    ----------
    lattice : LatticeSpec (must be periodic)
    potential : callable r -> W(r), vectorized (e.g. InteractionPotential)

    Returns
    -------
    (W, row0) : W is the (M, M) real symmetric circulant matrix with
        W[n, m] = potential(min-image distance n->m); row0 = W[0, :].
    """
    if not lattice.periodic:
        raise ConfigurationError("interaction matrix requires a periodic lattice")
    row0 = np.asarray(potential(lattice.distance_row()), dtype=float)
    if row0.shape != (lattice.n_sites,):
        raise ConfigurationError("potential must map (M,) distances to (M,) values")
    if not np.all(np.isfinite(row0)):
        raise ConfigurationError("potential produced non-finite entries")
    W = _circulant_from_row(row0, lattice.extents)
    return W, row0


def _circulant_from_row(row0: np.ndarray, extents: tuple[int, ...]) -> np.ndarray:
    """Build the full translation-invariant matrix from its first row."""
    M = int(np.prod(extents))
    idx = np.arange(M)
    multi = np.array(np.unravel_index(idx, extents))          # (ndim, M)
    rel = (multi[:, None, :] - multi[:, :, None])              # (ndim, M, M) = m - n
    rel %= np.array(extents)[:, None, None]
    flat_rel = np.ravel_multi_index(tuple(rel), extents)       # (M, M)
    return row0[flat_rel]


def is_translation_invariant(W: np.ndarray, extents: tuple[int, ...], rtol: float = 1e-12) -> bool:
    W = np.asarray(W)
    ref = _circulant_from_row(np.asarray(W[0], dtype=W.dtype), extents)
    scale = max(1.0, float(np.max(np.abs(W))))
    return bool(np.max(np.abs(W - ref)) <= rtol * scale)


# ----------------------------------------------------------------------------
# square root, rectified companion, spectrum
# ----------------------------------------------------------------------------

def symmetric_sqrt(W: np.ndarray) -> np.ndarray:
    """Symmetric square root of a real symmetric matrix.

    Eigenvalues lambda >= 0 contribute sqrt(lambda); negative ones contribute
    i*sqrt(|lambda|), so the result S is complex symmetric with S @ S = W.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigurationError("symmetric_sqrt expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(W))))
    if np.max(np.abs(W - W.T)) > 1e-12 * scale:
        raise ConfigurationError("symmetric_sqrt expects a symmetric matrix")
    lam, vec = np.linalg.eigh(W)
    root = np.where(lam >= 0, np.sqrt(np.abs(lam)), 1j * np.sqrt(np.abs(lam)))
    return (vec * root) @ vec.T


def rectified_U(sqrt_w: np.ndarray) -> np.ndarray:
    """U = Re(S S^dagger) for S = symmetric_sqrt(W); positive semidefinite.

    Equals W itself when W is positive semidefinite, and flips the sign of
    the negative eigenvalue branch otherwise.  Raises if the imaginary
    residual of S S^dagger exceeds REALNESS_RTOL * ||W||.
    """
    S = np.asarray(sqrt_w)
    prod = S @ S.conj().T
    scale = max(1.0, float(np.max(np.abs(prod))))
    if np.max(np.abs(prod.imag)) > REALNESS_RTOL * scale:
        raise ConfigurationError("rectified_U: S S^dagger has a non-real residual "
                                 "beyond tolerance; sqrt matrix looks inconsistent")
    return prod.real


def potential_spectrum(row0: np.ndarray, lattice: LatticeSpec) -> np.ndarray:
    """w_tilde_p = dV * FFT(row0) over the lattice axes, shape (M,) real.

    The circulant eigenvalues of W are w_tilde / dV (numpy FFT frequency
    ordering).  Raises if the spectrum has an imaginary part beyond
    tolerance, which would mean the kernel is not even under r -> -r.
    """
    row0 = np.asarray(row0, dtype=float).reshape(lattice.extents)
    spec = np.fft.fftn(row0) * lattice.cell_volume
    scale = max(1.0, float(np.max(np.abs(spec))))
    if np.max(np.abs(spec.imag)) > REALNESS_RTOL * scale:
        raise ConfigurationError("potential spectrum is not real: kernel is not even")
    return spec.real.ravel()


# ----------------------------------------------------------------------------
# single-particle (quadratic) part
# ----------------------------------------------------------------------------

def _axis_neighbor_matrix(lattice: LatticeSpec, axis: int) -> np.ndarray:
    """Adjacency along one axis (both directions), respecting periodicity."""
    M = lattice.n_sites
    idx = np.arange(M)
    multi = np.array(np.unravel_index(idx, lattice.extents))
    adj = np.zeros((M, M))
    for step in (+1, -1):
        shifted = multi.copy()
        shifted[axis] = shifted[axis] + step
        e = lattice.extents[axis]
        if lattice.periodic:
            shifted[axis] %= e
            ok = np.ones(M, dtype=bool)
        else:
            ok = (shifted[axis] >= 0) & (shifted[axis] < e)
            shifted[axis] = np.clip(shifted[axis], 0, e - 1)
        target = np.ravel_multi_index(tuple(shifted), lattice.extents)
        adj[idx[ok], target[ok]] += 1.0
    return adj


def tunneling_omega(lattice: LatticeSpec, J: float) -> np.ndarray:
    """Nearest-neighbour hopping matrix omega_nm = J for |n-m| = 1 site."""
    M = lattice.n_sites
    omega = np.zeros((M, M))
    if J == 0.0:
        return omega
    for ax in range(lattice.ndim):
        omega += _axis_neighbor_matrix(lattice, ax)
    return J * omega


def kinetic_omega(lattice: LatticeSpec, mass: float) -> np.ndarray:
    """Discrete-Laplacian kinetic term -(nabla^2)/(2 mass) on the lattice."""
    if mass <= 0:
        raise ConfigurationError("mass must be positive")
    M = lattice.n_sites
    omega = np.zeros((M, M))
    for ax in range(lattice.ndim):
        dx = lattice.spacings[ax]
        lap = _axis_neighbor_matrix(lattice, ax) - 2.0 * np.eye(M)
        omega += -lap / (2.0 * mass * dx * dx)
    return omega


# ----------------------------------------------------------------------------
# assembled model
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Lattice + interaction matrix + derived quantities, ready for the SDEs.

    Attributes
    ----------
    lattice : LatticeSpec
    omega : (M, M) ndarray -- quadratic (hopping/kinetic) part, Hermitian
    W : (M, M) real symmetric circulant interaction matrix
    row0 : (M,) first row of W
    sqrt_w : (M, M) complex symmetric with sqrt_w @ sqrt_w = W
    U : (M, M) rectified positive-semidefinite companion of W
    w_tilde : (M,) real spectrum dV * FFT(row0)
    """

    lattice: LatticeSpec
    omega: np.ndarray
    W: np.ndarray
    row0: np.ndarray
    sqrt_w: np.ndarray
    U: np.ndarray
    w_tilde: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def W0(self) -> float:
        """On-site interaction strength W[0, 0]."""
        return float(self.W[0, 0])

    @property
    def U0(self) -> float:
        """Rectified on-site strength U[0, 0] = mean |circulant eigenvalue|."""
        return float(self.U[0, 0])

    @property
    def circulant_eigenvalues(self) -> np.ndarray:
        return self.w_tilde / self.lattice.cell_volume

    @property
    def has_quadratic_part(self) -> bool:
        return bool(np.any(self.omega != 0))

    @staticmethod
    def from_potential(lattice: LatticeSpec, potential, omega: np.ndarray | None = None) -> "ModelSpec":
        W, row0 = build_potential_matrix(lattice, potential)
        return ModelSpec._assemble(lattice, W, row0, omega)

    @staticmethod
    def from_interaction_matrix(lattice: LatticeSpec, W: np.ndarray,
                                omega: np.ndarray | None = None) -> "ModelSpec":
        W = np.asarray(W, dtype=float)
        M = lattice.n_sites
        if W.shape != (M, M):
            raise ConfigurationError(f"W must be ({M}, {M})")
        scale = max(1.0, float(np.max(np.abs(W))))
        if np.max(np.abs(W - W.T)) > 1e-12 * scale:
            raise ConfigurationError("W must be symmetric")
        if not is_translation_invariant(W, lattice.extents, rtol=1e-10):
            raise ConfigurationError("W must be translation invariant on the lattice")
        return ModelSpec._assemble(lattice, W, W[0].copy(), omega)

    @staticmethod
    def contact(lattice: LatticeSpec, g: float, omega: np.ndarray | None = None) -> "ModelSpec":
        """On-site (contact) interaction: W = (g / dV) * identity."""
        M = lattice.n_sites
        W = (g / lattice.cell_volume) * np.eye(M)
        return ModelSpec._assemble(lattice, W, W[0].copy(), omega)

    @staticmethod
    def _assemble(lattice, W, row0, omega):
        M = lattice.n_sites
        if omega is None:
            omega = np.zeros((M, M))
        else:
            omega = np.asarray(omega)
            if omega.shape != (M, M):
                raise ConfigurationError(f"omega must be ({M}, {M})")
            scale = max(1.0, float(np.max(np.abs(omega))))
            if np.max(np.abs(omega - omega.conj().T)) > 1e-12 * scale:
                raise ConfigurationError("omega must be Hermitian")
        sqrt_w = symmetric_sqrt(W)
        U = rectified_U(sqrt_w)
        w_tilde = potential_spectrum(row0, lattice)
        return ModelSpec(lattice=lattice, omega=omega, W=W, row0=np.asarray(row0, dtype=float),
                         sqrt_w=sqrt_w, U=U, w_tilde=w_tilde)
