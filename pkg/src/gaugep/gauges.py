"""Gauge freedoms of the trajectory equations and their optimization.

Two independent knobs reshape the stochastic equations without changing any
quantum expectation:

* a *drift gauge*: a weight field Omega absorbs the imaginary part of the
  local occupation n = alpha*beta out of the drift (removing the unstable
  part of the mean-field flow at the cost of a fluctuating weight);
* a *diffusion gauge*: the 2M real Wiener increments are premixed by a
  complex-orthogonal matrix O (O O^T = 1), which redistributes sampling
  noise between the alpha and beta fields.

Useful O families: identity; a global hyperbolic mix with one parameter
``a``; a nonlocal hyperbolic mix cosh/sinh of a symmetric matrix A; and a
fully numeric O = exp(iB) with B real antisymmetric, optimized against the
analytic spread estimate.

The choice of ``a`` trades weight spread against field spread.  With the
interaction-strength integrals

    I1  = sum_kk' U_kk'  Im(n_k) Im(n_k')
    I2  = sum_kk' U_kk'^2 Re(n_k n_k'*)
    I1P = (1/M) sum_kk' W_kk'^2 Re(n_k)
    I2P = (1/M) sum_k k' k''  U_kk' W_kk'' W_k'k'' Re(n_k n_k''*)

the near-optimal single parameter for a weighted (drift-gauged) run over a
remaining window t_opt is

    a = (1/6) log( 4 I2 t_opt / U0  +  (1 + 4 I1/U0)^{3/2} ) ,

and for an unweighted (diffusion-only) run

    a = (1/4) log( 4 t_opt^2 I2P / (3 U0) + 1 ) .

Both clamp to [0, 10].
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigurationError
from .model import ModelSpec

#: clamp range for hyperbolic gauge parameters
A_MIN, A_MAX = 0.0, 10.0
#: site cap for the numeric O optimizer (cost grows like M^6 per iteration)
OPTIMIZER_MAX_SITES = 64


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

DRIFT_KINDS = ("none", "standard")
DIFFUSION_KINDS = ("none", "global", "adaptive", "nonlocal", "numeric_o")


@dataclasses.dataclass
class GaugeConfig:
    """Which gauges a run uses.

    drift : "none" (plain positive-P drift) or "standard" (imaginary part of
        the occupation moved into the weight).
    diffusion : "none" | "global" (parameter ``a``) | "adaptive" (per-
        trajectory ``a`` refreshed from the instantaneous fields, needs
        ``t_fin``) | "nonlocal" (matrix ``A``) | "numeric_o" (explicit ``O``).
    """

    drift: str = "none"
    diffusion: str = "none"
    a: float = 0.0
    t_fin: float | None = None
    A: np.ndarray | None = None
    O: np.ndarray | None = None

    @property
    def weighted(self) -> bool:
        return self.drift == "standard"

    def validate(self, n_sites: int) -> None:
        if self.drift not in DRIFT_KINDS:
            raise ConfigurationError(f"unknown drift gauge {self.drift!r}")
        if self.diffusion not in DIFFUSION_KINDS:
            raise ConfigurationError(f"unknown diffusion gauge {self.diffusion!r}")
        if self.diffusion == "global" and not np.isfinite(self.a):
            raise ConfigurationError("global diffusion gauge needs finite a")
        if self.diffusion == "adaptive":
            if self.t_fin is None or self.t_fin <= 0:
                raise ConfigurationError("adaptive diffusion gauge needs t_fin > 0")
        if self.diffusion == "nonlocal":
            A = np.asarray(self.A, dtype=float) if self.A is not None else None
            if A is None or A.shape != (n_sites, n_sites):
                raise ConfigurationError("nonlocal gauge needs a real (M, M) matrix A")
            if np.max(np.abs(A - A.T)) > 1e-10 * max(1.0, np.max(np.abs(A))):
                raise ConfigurationError("nonlocal gauge matrix A must be symmetric")
        if self.diffusion == "numeric_o":
            O = self.O
            if O is None or np.asarray(O).shape != (2 * n_sites, 2 * n_sites):
                raise ConfigurationError("numeric_o gauge needs a (2M, 2M) matrix O")
            check_complex_orthogonal(np.asarray(O, dtype=complex))


def check_complex_orthogonal(O: np.ndarray, rtol: float = 1e-8) -> None:
    d = O.shape[0]
    resid = np.max(np.abs(O @ O.T - np.eye(d)))
    if resid > rtol * max(1.0, float(np.max(np.abs(O))) ** 2):
        raise ConfigurationError(f"O is not complex-orthogonal (|O O^T - 1| = {resid:.2e})")


# ----------------------------------------------------------------------------
# drift gauge
# ----------------------------------------------------------------------------

def drift_gauge_vector(n: np.ndarray) -> np.ndarray:
    """Standard drift-gauge choice f = i Im(n) on the doubled field space.

    n : (..., M) complex occupations alpha*beta; returns (..., 2M) with the
    same value i*Im(n) in the alpha and beta halves.
    """
    n = np.asarray(n)
    f_half = 1j * n.imag
    return np.concatenate([f_half, f_half], axis=-1)


# ----------------------------------------------------------------------------
# diffusion-gauge O matrices
# ----------------------------------------------------------------------------

def global_O(a: float, n_sites: int) -> np.ndarray:
    """One-parameter hyperbolic mix of the alpha/beta noise channels."""
    c, s = np.cosh(a), np.sinh(a)
    eye = np.eye(n_sites)
    return np.block([[c * eye, -1j * s * eye], [1j * s * eye, c * eye]])


def nonlocal_O(A: np.ndarray) -> np.ndarray:
    """Matrix-hyperbolic mix O = [[cosh A, -i sinh A], [i sinh A, cosh A]]."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("A must be square")
    if np.max(np.abs(A - A.T)) > 1e-10 * max(1.0, np.max(np.abs(A))):
        raise ConfigurationError("A must be symmetric")
    lam, vec = np.linalg.eigh(A)
    ch = (vec * np.cosh(lam)) @ vec.T
    sh = (vec * np.sinh(lam)) @ vec.T
    return np.block([[ch, -1j * sh], [1j * sh, ch]])


def exp_iB(B: np.ndarray) -> np.ndarray:
    """O = exp(iB) for real antisymmetric B: Hermitian positive-definite and
    complex-orthogonal (O O^T = exp(iB) exp(-iB) = 1)."""
    H = 1j * np.asarray(B, dtype=float)
    mu, vec = np.linalg.eigh(H)
    return (vec * np.exp(mu)) @ vec.conj().T


def mix_noise_global(xi1: np.ndarray, xi2: np.ndarray, a) -> tuple[np.ndarray, np.ndarray]:
    """Apply the global-O mix to the two real noise blocks.

    a may be a scalar or per-trajectory array broadcastable against xi;
    returns (eta_alpha, eta_beta) complex.
    """
    c, s = np.cosh(a), np.sinh(a)
    return c * xi1 - 1j * (s * xi2), 1j * (s * xi1) + c * xi2


def gauge_o_matrix(gauge: GaugeConfig, n_sites: int) -> np.ndarray | None:
    """Dense O for a gauge config; None for the per-trajectory adaptive mix."""
    if gauge.diffusion == "none":
        return np.eye(2 * n_sites, dtype=complex)
    if gauge.diffusion == "global":
        return global_O(gauge.a, n_sites)
    if gauge.diffusion == "nonlocal":
        return nonlocal_O(np.asarray(gauge.A, dtype=float))
    if gauge.diffusion == "numeric_o":
        return np.asarray(gauge.O, dtype=complex)
    return None


# ----------------------------------------------------------------------------
# interaction-strength integrals
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class GaugeIntegrals:
    """Lattice sums controlling sampling-variance growth.

    Scalars for a single field configuration; arrays with leading batch axes
    when evaluated on a batch of configurations.
    """

    I1: np.ndarray | float
    I2: np.ndarray | float
    I1P: np.ndarray | float
    I2P: np.ndarray | float
    U0: float
    W0: float


def gauge_integrals(model: ModelSpec, n: np.ndarray) -> GaugeIntegrals:
    """Evaluate I1, I2, I1P, I2P for occupations n (shape (..., M))."""
    n = np.asarray(n, dtype=complex)
    U = model.U
    W = model.W
    UU = U * U
    UWW = U * (W @ W)
    WWcol = (W * W).sum(axis=1)
    nim = n.imag
    nre = n.real
    M = model.n_sites
    I1 = np.einsum("...k,kl,...l->...", nim, U, nim)
    I2 = np.einsum("...k,kl,...l->...", n, UU, n.conj()).real
    I1P = (nre @ WWcol) / M
    I2P = np.einsum("...k,kl,...l->...", n, UWW, n.conj()).real / M
    if n.ndim == 1:
        I1, I2, I1P, I2P = float(I1), float(I2), float(I1P), float(I2P)
    return GaugeIntegrals(I1=I1, I2=I2, I1P=I1P, I2P=I2P, U0=model.U0, W0=model.W0)


# ----------------------------------------------------------------------------
# analytic gauge optima
# ----------------------------------------------------------------------------

def a_approx(integrals: GaugeIntegrals, t_opt: float):
    """Near-optimal global a for a weighted run over remaining window t_opt."""
    U0 = integrals.U0
    if U0 <= 0:
        raise ConfigurationError("gauge undefined: rectified on-site strength U0 <= 0")
    arg = 4.0 * integrals.I2 * t_opt / U0 + (1.0 + 4.0 * integrals.I1 / U0) ** 1.5
    return np.clip(np.log(arg) / 6.0, A_MIN, A_MAX)


def a_adaptive(model: ModelSpec, n: np.ndarray, t: float, t_fin: float):
    """Instantaneous per-configuration a: a_approx with t_opt = t_fin - t."""
    t_opt = max(t_fin - t, 0.0)
    return a_approx(gauge_integrals(model, n), t_opt)


def a_opt_diffusion_only(integrals: GaugeIntegrals, t_opt: float):
    """Near-optimal global a for an unweighted (no drift gauge) run."""
    U0 = integrals.U0
    if U0 <= 0:
        raise ConfigurationError("gauge undefined: rectified on-site strength U0 <= 0")
    arg = 4.0 * t_opt ** 2 * integrals.I2P / (3.0 * U0) + 1.0
    arg = np.maximum(arg, 1.0)        # negative I2P means no amplification: a = 0
    return np.clip(np.log(arg) / 4.0, A_MIN, A_MAX)


def a_approx_residual(integrals: GaugeIntegrals, t_opt: float) -> float:
    """Relative defect of the interpolation behind a_approx.

    a_approx solves  e^{6a} = (1 + 4 I1/U0)^{3/2} + 4 I2 t/U0,  which
    interpolates the exact stationarity condition
    e^{6a} = (1 + 4 I1/U0) e^{2a} + 4 I2 t/U0.  Small in the small- and
    large-t_opt regimes, worst in between.
    """
    U0 = integrals.U0
    c = 1.0 + 4.0 * np.asarray(integrals.I1) / U0
    X = c ** 1.5 + 4.0 * np.asarray(integrals.I2) * t_opt / U0
    return float(np.max(np.abs(c * (np.sqrt(c) - X ** (1.0 / 3.0))) / X))


def nonlocal_A(model: ModelSpec, n: np.ndarray, t_opt: float,
               eig_floor: float = 1e-12) -> np.ndarray:
    """Nonlocal gauge matrix A = (1/6) log(1 + 4 M t sqrtW^-1 N' W N' sqrtW).

    Preconditions: the kernel spectrum must be non-negative up to rounding
    (W coincides with its rectified companion) and the density profile must
    be uniform and real -- the matrix interpolation is only controlled
    there.  A singular kernel is handled by flooring eigenvalues at
    ``eig_floor`` * max eigenvalue when inverting the square root.
    """
    n = np.asarray(n, dtype=complex)
    M = model.n_sites
    if n.shape != (M,):
        raise ConfigurationError(f"n must have shape ({M},)")
    if np.max(np.abs(n.imag)) > 1e-9 * max(1.0, np.max(np.abs(n))):
        raise ConfigurationError("nonlocal gauge requires a real occupation profile")
    nre = n.real
    if np.max(np.abs(nre - nre.mean())) > 1e-9 * max(1.0, np.max(np.abs(nre))):
        raise ConfigurationError("nonlocal gauge requires a uniform occupation profile")
    lam, vec = np.linalg.eigh(model.W)
    lmax = float(lam.max())
    if lmax <= 0:
        raise ConfigurationError("nonlocal gauge needs a kernel with positive spectrum")
    if lam.min() < -1e-6 * lmax:
        raise ConfigurationError("nonlocal gauge requires a (near) positive-semidefinite "
                                 "kernel; rectify the model first")
    lam_f = np.maximum(lam, eig_floor * lmax)
    sq = (vec * np.sqrt(lam_f)) @ vec.T
    sq_inv = (vec / np.sqrt(lam_f)) @ vec.T
    Np = np.diag(nre)
    inner = np.eye(M) + 4.0 * M * t_opt * (sq_inv @ Np @ model.W @ Np @ sq)
    inner = 0.5 * (inner + inner.T)
    mu, uvec = np.linalg.eigh(inner)
    if mu.min() <= 0:
        raise ConfigurationError("nonlocal gauge: interpolation matrix not positive")
    A = (uvec * (np.log(mu) / 6.0)) @ uvec.T
    return 0.5 * (A + A.T)


# ----------------------------------------------------------------------------
# numeric O optimization
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class OptimizeResult:
    O: np.ndarray
    V_opt: float
    V_init: float
    n_iter: int
    converged: bool
    grad_norm: float
    a_site: np.ndarray        # asinh(Im O[M+m, m]), site-resolved mix strength
    a_profile: np.ndarray     # asinh(Im O[2M-1, m]), mixing row around last site
    history: list[float] = dataclasses.field(default_factory=list)


def extract_gauge_profiles(O: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hyperbolic mix strengths read off the beta<-alpha block of O.

    Returns (a_site, a_profile): entrywise asinh of the imaginary part of
    the mixing block's diagonal and of its last row.  For
    O = [[cosh A, -i sinh A], [i sinh A, cosh A]] with diagonal A these are
    exactly (diag A, last row of A); for weakly non-diagonal A they remain
    a faithful site-resolved strength and spatial profile.
    """
    M = O.shape[0] // 2
    mix = O[M:, :M]
    a_site = np.arcsinh(mix.diagonal().imag)
    a_profile = np.arcsinh(mix[M - 1, :].imag)
    return a_site, a_profile


def _pack_indices(d: int):
    return np.triu_indices(d, k=1)


def _unpack(p: np.ndarray, d: int, iu) -> np.ndarray:
    B = np.zeros((d, d))
    B[iu] = p
    return B - B.T


def optimize_O_numeric(model: ModelSpec, n0: np.ndarray, t_opt: float,
                       a_init: float | None = None, v0: float = 0.0,
                       max_iter: int = 200, fd_step: float = 1e-5,
                       tol: float = 1e-10) -> OptimizeResult:
    """Minimize the analytic spread estimate over O = exp(iB), B real
    antisymmetric, by nonlinear conjugate gradients with finite-difference
    gradients (central, step ``fd_step`` per entry of B).

    n0 : (M,) deterministic initial occupations (coherent start).
    a_init : optional starting point as a global-a gauge; defaults to
        a_approx for the same window.
    """
    from . import analytics  # deferred: analytics imports this module's types

    M = model.n_sites
    if M > OPTIMIZER_MAX_SITES:
        raise ConfigurationError(
            f"numeric O optimization capped at {OPTIMIZER_MAX_SITES} sites")
    n0 = np.asarray(n0, dtype=complex)
    moments = analytics.InitialMoments.deterministic(n0)
    d = 2 * M
    iu = _pack_indices(d)

    if a_init is None:
        a_init = float(np.asarray(a_approx(gauge_integrals(model, n0), t_opt)))
    # global a corresponds to B = [[0, -a 1], [a 1, 0]]
    B0 = np.zeros((d, d))
    B0[M:, :M] = a_init * np.eye(M)
    p = (B0 - B0.T)[iu]

    def objective(params: np.ndarray) -> float:
        O = exp_iB(_unpack(params, d, iu))
        return analytics.v_gauge_p(t_opt, model, O, moments, v0=v0)

    def gradient(params: np.ndarray) -> np.ndarray:
        g = np.empty_like(params)
        for k in range(params.size):
            params[k] += fd_step
            fp = objective(params)
            params[k] -= 2 * fd_step
            fm = objective(params)
            params[k] += fd_step
            g[k] = (fp - fm) / (2 * fd_step)
        return g

    v = objective(p)
    v_init = v
    history = [v]
    g = gradient(p)
    direction = -g
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= 1e-9 * max(1.0, abs(v)):
            converged = True
            break
        # backtracking line search along `direction`
        slope = float(g @ direction)
        if slope >= 0:            # lost conjugacy; restart on steepest descent
            direction = -g
            slope = float(g @ direction)
        step = 1.0 / max(np.max(np.abs(direction)), 1e-12)
        accepted = False
        for _ in range(40):
            cand = p + step * direction
            v_new = objective(cand)
            if v_new <= v + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True      # no descent possible at resolvable step
            break
        p = cand
        g_new = gradient(p)
        beta_pr = max(0.0, float(g_new @ (g_new - g)) / max(float(g @ g), 1e-300))
        direction = -g_new + beta_pr * direction
        g = g_new
        rel_drop = (v - v_new) / max(abs(v), 1e-300)
        v = v_new
        history.append(v)
        if rel_drop < tol:
            converged = True
            break

    O = exp_iB(_unpack(p, d, iu))
    a_site, a_profile = extract_gauge_profiles(O)
    return OptimizeResult(O=O, V_opt=v, V_init=v_init, n_iter=n_iter,
                          converged=converged, grad_norm=float(np.max(np.abs(g))),
                          a_site=a_site, a_profile=a_profile, history=history)
