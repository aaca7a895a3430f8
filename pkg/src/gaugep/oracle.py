"""Independent reference solvers for small or analytically tractable systems.

Two routes, deliberately independent of the stochastic engine:

1. Fock-diagonal evolution (``fock_diagonal_evolve``): with no hopping the
   interaction Hamiltonian is diagonal in the Fock basis, so expectations of
   normally ordered products evolve as truncated Poisson sums over number
   states -- each mode contributes a phase-weighted Poisson characteristic
   sum.  Works for any M; cost O(M * cutoff) per observable.

2. Brute-force diagonalization (``exact_diag_small``): sparse Hamiltonian in
   a truncated Fock space, Krylov propagation.  Guarded to at most 3 sites
   and 4096 basis states; refuses otherwise.  A two-component (two internal
   states per site) variant backs the spin-echo toy checks.

The closed forms ``closed_form_mean_field`` / ``closed_form_coherence`` are
the cutoff -> infinity limits of route 1 and are used as convergence
cross-checks; they are not a substitute for the truncated sums.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .errors import OracleGuardError
from .model import ModelSpec

#: largest truncated Hilbert space exact_diag_small will build
MAX_ED_DIM = 4096
#: largest site count exact_diag_small will accept
MAX_ED_SITES = 3
#: Poisson tail mass allowed beyond the cutoff
TAIL_TOL = 1e-12
#: hard ceiling for automatic cutoff search
MAX_CUTOFF = 2000


# ----------------------------------------------------------------------------
# truncated Poisson machinery
# ----------------------------------------------------------------------------

def poisson_weights(nbar: float, cutoff: int) -> np.ndarray:
    """P(k) = exp(-nbar) nbar^k / k! for k = 0..cutoff."""
    if nbar < 0:
        raise OracleGuardError("mean occupation must be non-negative")
    w = np.empty(cutoff + 1)
    w[0] = np.exp(-nbar)
    for k in range(1, cutoff + 1):
        w[k] = w[k - 1] * nbar / k
    return w


def choose_cutoff(nbar_max: float, tail_tol: float = TAIL_TOL) -> int:
    """Smallest cutoff whose Poisson tail mass is below tail_tol."""
    if nbar_max < 0:
        raise OracleGuardError("mean occupation must be non-negative")
    if nbar_max == 0:
        return 0
    w = np.exp(-nbar_max)
    total = w
    for k in range(1, MAX_CUTOFF + 1):
        if 1.0 - total <= tail_tol:
            return k - 1
        w *= nbar_max / k
        total += w
    raise OracleGuardError(f"no adequate cutoff below {MAX_CUTOFF} for nbar={nbar_max}")


def _check_tail(nbar: np.ndarray, cutoff: int, tail_tol: float = TAIL_TOL):
    need = choose_cutoff(float(np.max(nbar)), tail_tol)
    if cutoff < need:
        raise OracleGuardError(
            f"cutoff {cutoff} leaves Poisson tail above {tail_tol} (need >= {need})")


def _phase_sums(nbar: np.ndarray, thetas: np.ndarray, cutoff: int) -> np.ndarray:
    """S_b = sum_k P_k(nbar_b) exp(i theta_b k) for each mode b."""
    ks = np.arange(cutoff + 1)
    weights = np.stack([poisson_weights(nb, cutoff) for nb in nbar])   # (M, K)
    phases = np.exp(1j * np.outer(thetas, ks))                         # (M, K)
    return (weights * phases).sum(axis=1)


# ----------------------------------------------------------------------------
# Fock-diagonal oracle (no hopping)
# ----------------------------------------------------------------------------

def fock_diagonal_evolve(model: ModelSpec, phi: np.ndarray, t: float,
                         observable, cutoff: int | None = None) -> complex:
    """Expectation for a coherent initial state under the diagonal interaction.

    Parameters
    ----------
    model : ModelSpec with no quadratic part (guarded)
    phi : (M,) initial coherent amplitudes
    t : evolution time
    observable : ("a", m) or ("adaga", n, m)
    cutoff : per-mode number cutoff; auto-chosen for tail <= 1e-12 if None

    Notes
    -----
    With H diagonal in number states, each mode contributes an independent
    Poisson-weighted phase sum; e.g. <a_m>(t) picks up the factor
    sum_k P_k(|phi_b|^2) exp(-i W_bm t k) from every mode b.
    """
    if model.has_quadratic_part:
        raise OracleGuardError("fock-diagonal oracle requires zero hopping/kinetic part")
    phi = np.asarray(phi, dtype=complex)
    M = model.n_sites
    if phi.shape != (M,):
        raise OracleGuardError(f"phi must have shape ({M},)")
    nbar = np.abs(phi) ** 2
    if cutoff is None:
        cutoff = choose_cutoff(float(nbar.max()))
    else:
        _check_tail(nbar, cutoff)

    W = model.W
    kind = observable[0]
    if kind == "a":
        m = int(observable[1])
        thetas = -W[:, m] * t
        return complex(phi[m] * np.prod(_phase_sums(nbar, thetas, cutoff)))
    if kind == "adaga":
        n, m = int(observable[1]), int(observable[2])
        if n == m:
            return complex(nbar[m])      # densities are conserved without hopping
        thetas = (W[:, n] - W[:, m]) * t
        return complex(np.conj(phi[n]) * phi[m] * np.prod(_phase_sums(nbar, thetas, cutoff)))
    raise OracleGuardError(f"unknown observable {observable!r}")


def fock_g1(model: ModelSpec, phi: np.ndarray, t: float, dn: int,
            cutoff: int | None = None) -> complex:
    """Site-averaged normalized first-order coherence at separation dn."""
    phi = np.asarray(phi, dtype=complex)
    M = model.n_sites
    nbar = np.abs(phi) ** 2
    if np.any(nbar <= 0):
        raise OracleGuardError("g1 normalization needs nonzero density on every site")
    acc = 0.0 + 0.0j
    for n in range(M):
        m = (n + dn) % M
        val = fock_diagonal_evolve(model, phi, t, ("adaga", n, m), cutoff=cutoff)
        acc += val / np.sqrt(nbar[n] * nbar[m])
    return acc / M


def closed_form_mean_field(model: ModelSpec, phi: np.ndarray, t: float, m: int) -> complex:
    """Cutoff->infinity limit of fock_diagonal_evolve(("a", m))."""
    phi = np.asarray(phi, dtype=complex)
    nbar = np.abs(phi) ** 2
    return complex(phi[m] * np.exp(np.sum(nbar * (np.exp(-1j * model.W[:, m] * t) - 1.0))))


def closed_form_coherence(model: ModelSpec, phi: np.ndarray, t: float, n: int, m: int) -> complex:
    """Cutoff->infinity limit of fock_diagonal_evolve(("adaga", n, m))."""
    phi = np.asarray(phi, dtype=complex)
    nbar = np.abs(phi) ** 2
    if n == m:
        return complex(nbar[m])
    theta = (model.W[:, n] - model.W[:, m]) * t
    return complex(np.conj(phi[n]) * phi[m] * np.exp(np.sum(nbar * (np.exp(1j * theta) - 1.0))))


# ----------------------------------------------------------------------------
# truncated-Fock exact diagonalization (tiny systems)
# ----------------------------------------------------------------------------

def _local_annihilator(cutoff: int) -> sparse.csr_matrix:
    data = np.sqrt(np.arange(1, cutoff + 1, dtype=float))
    return sparse.diags(data, offsets=1, format="csr")


def _mode_operators(n_modes: int, cutoff: int) -> list[sparse.csr_matrix]:
    """Annihilation operator for each mode in the full tensor-product space."""
    dim_local = cutoff + 1
    a_loc = _local_annihilator(cutoff)
    eye = sparse.identity(dim_local, format="csr")
    ops = []
    for mode in range(n_modes):
        op = None
        for k in range(n_modes):
            factor = a_loc if k == mode else eye
            op = factor if op is None else sparse.kron(op, factor, format="csr")
        ops.append(op)
    return ops


def _coherent_vector(phi: complex, cutoff: int) -> np.ndarray:
    """Truncated, renormalized coherent state |phi>."""
    c = np.empty(cutoff + 1, dtype=complex)
    c[0] = 1.0
    for k in range(1, cutoff + 1):
        c[k] = c[k - 1] * phi / np.sqrt(k)
    c *= np.exp(-abs(phi) ** 2 / 2.0)
    norm = np.linalg.norm(c)
    if abs(1.0 - norm ** 2) > 1e-10:
        raise OracleGuardError("coherent-state tail above tolerance; raise the cutoff")
    return c / norm


def _product_state(phis, cutoff: int) -> np.ndarray:
    psi = None
    for phi in phis:
        v = _coherent_vector(phi, cutoff)
        psi = v if psi is None else np.kron(psi, v)
    return psi


def _guard_dimension(n_sites: int, n_modes: int, cutoff: int) -> int:
    if n_sites > MAX_ED_SITES:
        raise OracleGuardError(f"exact diagonalization limited to {MAX_ED_SITES} sites")
    if cutoff < 1:
        raise OracleGuardError("cutoff must be at least 1")
    dim = (cutoff + 1) ** n_modes
    if dim > MAX_ED_DIM:
        raise OracleGuardError(f"Hilbert dimension {dim} exceeds cap {MAX_ED_DIM}")
    return dim


def _interaction_hamiltonian(W: np.ndarray, ops) -> sparse.csr_matrix:
    """(1/2) sum_nm W_nm  a+_n a+_m a_n a_m in the truncated space."""
    M = W.shape[0]
    H = None
    for n in range(M):
        for m in range(M):
            if W[n, m] == 0.0:
                continue
            term = 0.5 * W[n, m] * (ops[n].conj().T @ ops[m].conj().T @ ops[n] @ ops[m])
            H = term if H is None else H + term
    if H is None:
        dim = ops[0].shape[0]
        H = sparse.csr_matrix((dim, dim))
    return H


def exact_diag_small(model: ModelSpec, phi: np.ndarray, cutoff: int, t: float,
                     observable) -> complex:
    """Brute-force expectation value for a tiny lattice.

    observable : ("a", m) | ("adaga", n, m) | ("pair_density", n, m)
               | ("n_total",) | ("energy",) | ("norm",)
    """
    M = model.n_sites
    _guard_dimension(M, M, cutoff)
    phi = np.asarray(phi, dtype=complex)
    ops = _mode_operators(M, cutoff)
    H = _interaction_hamiltonian(model.W, ops)
    if model.has_quadratic_part:
        for n in range(M):
            for m in range(M):
                if model.omega[n, m] != 0.0:
                    H = H + model.omega[n, m] * (ops[n].conj().T @ ops[m])
    psi = _product_state(phi, cutoff)
    if t != 0.0:
        psi = expm_multiply(-1j * H * t, psi)
    return _ed_expectation(psi, ops, H, observable)


def _ed_expectation(psi: np.ndarray, ops, H, observable) -> complex:
    kind = observable[0]
    if kind == "norm":
        return complex(np.vdot(psi, psi))
    if kind == "energy":
        return complex(np.vdot(psi, H @ psi))
    if kind == "n_total":
        val = 0.0 + 0.0j
        for op in ops:
            val += np.vdot(psi, op.conj().T @ (op @ psi))
        return complex(val)
    if kind == "a":
        return complex(np.vdot(psi, ops[int(observable[1])] @ psi))
    if kind == "adaga":
        n, m = int(observable[1]), int(observable[2])
        return complex(np.vdot(psi, ops[n].conj().T @ (ops[m] @ psi)))
    if kind == "pair_density":
        n, m = int(observable[1]), int(observable[2])
        vec = ops[m] @ (ops[n] @ psi)
        return complex(np.vdot(vec, vec))
    raise OracleGuardError(f"unknown observable {observable!r}")


# ----------------------------------------------------------------------------
# two-component variant (ground + excited field per site, echo drive)
# ----------------------------------------------------------------------------

def exact_diag_two_component(W: np.ndarray, kappa: float, phi_g: np.ndarray,
                             cutoff: int, t: float, observable,
                             flip_time: float | None = None) -> complex:
    """Tiny two-component system: excited field with pair kernel W, ground
    field coupled by a coherent drive (kappa/2)(e+_n g_n + g+_n e_n).

    The excited component starts in vacuum, the ground one coherent.  If
    ``flip_time`` is given and t > flip_time, the drive sign flips there
    (phase-echo protocol).

    observable : ("n_e_total",) | ("n_g_total",) | ("a_e", m) | ("adaga_e", n, m)
               | ("pair_density_e", n, m) | ("norm",) | ("n_total",)
    """
    W = np.asarray(W, dtype=float)
    M = W.shape[0]
    phi_g = np.asarray(phi_g, dtype=complex)
    n_modes = 2 * M                       # modes [e_0..e_{M-1}, g_0..g_{M-1}]
    _guard_dimension(M, n_modes, cutoff)
    ops = _mode_operators(n_modes, cutoff)
    ops_e, ops_g = ops[:M], ops[M:]

    def hamiltonian(k):
        H = _interaction_hamiltonian(W, ops_e)
        for n in range(M):
            H = H + (k / 2.0) * (ops_e[n].conj().T @ ops_g[n]
                                 + ops_g[n].conj().T @ ops_e[n])
        return H

    psi = _product_state(np.concatenate([np.zeros(M), phi_g]), cutoff)
    if flip_time is not None and t > flip_time:
        psi = expm_multiply(-1j * hamiltonian(kappa) * flip_time, psi)
        psi = expm_multiply(-1j * hamiltonian(-kappa) * (t - flip_time), psi)
    elif t != 0.0:
        psi = expm_multiply(-1j * hamiltonian(kappa) * t, psi)

    kind = observable[0]
    if kind == "n_e_total":
        return _ed_expectation(psi, ops_e, None, ("n_total",))
    if kind == "n_g_total":
        return _ed_expectation(psi, ops_g, None, ("n_total",))
    if kind == "a_e":
        return _ed_expectation(psi, ops_e, None, ("a", observable[1]))
    if kind == "adaga_e":
        return _ed_expectation(psi, ops_e, None, ("adaga", observable[1], observable[2]))
    if kind == "pair_density_e":
        return _ed_expectation(psi, ops_e, None, ("pair_density", observable[1], observable[2]))
    if kind == "norm":
        return _ed_expectation(psi, ops, None, ("norm",))
    if kind == "n_total":
        return _ed_expectation(psi, ops, None, ("n_total",))
    raise OracleGuardError(f"unknown observable {observable!r}")
