"""FFT application of translation-invariant kernels in the trajectory
equations.

For a periodic lattice the interaction matrix W is circulant, so both dense
operations in the equations of motion are circular convolutions:

* the drift term (W n)_m becomes ifftn(spectrum * fftn(n)),
* the coloured noise sqrtW @ eta becomes a synthesis from independent
  spectral amplitudes, Z = (1/sqrt(V)) sum_k e^{ikx} sqrt(w_tilde_k) chi_k,

which costs O(M log M) per step and O(M) memory -- no M x M array is ever
built.  ``E[Z_m Z_m'] = W_mm'`` holds exactly (negative spectral weight
contributes i*sqrt|.|, exactly like the dense symmetric square root).

The spectral amplitudes chi are built from the same 2M real unit normals
per step that the dense engine consumes, organised per FFT mode: one
complex amplitude (two reals) for each conjugate mode pair, one real
amplitude for each self-conjugate mode, with chi(-k) = chi(k)* so that the
synthesized field is real for a positive kernel spectrum.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .gauges import GaugeConfig
from .model import LatticeSpec, potential_spectrum

SQRT_I = np.exp(0.25j * np.pi)


def build_partition(extents):
    """Split flattened FFT modes into conjugate pairs and self-conjugate modes.

    Returns (r, r_conj, r_self): integer index arrays with r_conj[i] the
    negation (mod extents) of r[i], each pair listed once, and r_self the
    modes equal to their own negation (k = 0 and the Nyquist planes).  Every
    mode appears exactly once: 2 * len(r) + len(r_self) = M.
    """
    extents = tuple(int(e) for e in extents)
    M = int(np.prod(extents))
    idx = np.arange(M)
    multi = np.array(np.unravel_index(idx, extents))
    neg = (-multi) % np.asarray(extents)[:, None]
    neg_flat = np.ravel_multi_index(tuple(neg), extents)
    r_self = idx[neg_flat == idx]
    r = idx[idx < neg_flat]
    return r, neg_flat[r], r_self


def spectral_amplitudes(xi: np.ndarray, partition) -> np.ndarray:
    """Complex mode amplitudes from M real normals per row.

    The first 2*len(r) reals feed the paired modes ((re + i*im)/sqrt(2), with
    the conjugate value on the partner mode), the remaining len(r_self) fill
    the self-conjugate modes.  The map is an isometry: E[chi chi^dagger] = 1
    and E[chi_k chi_k'] = delta(k' = -k).
    """
    r, r_conj, r_self = partition
    nr = r.size
    chi = np.zeros(xi.shape, dtype=complex)
    if nr:
        pair = (xi[..., :nr] + 1j * xi[..., nr:2 * nr]) / np.sqrt(2.0)
        chi[..., r] = pair
        chi[..., r_conj] = pair.conj()
    if r_self.size:
        chi[..., r_self] = xi[..., 2 * nr:]
    return chi


class SpectralKernel:
    """A circulant interaction kernel held in spectral form.

    Stores only the kernel row and its FFT; suitable for lattices far too
    large for the dense ModelSpec matrices.  ``spectrum`` holds the circulant
    eigenvalues of W (= w_tilde / dV).
    """

    def __init__(self, lattice: LatticeSpec, row0: np.ndarray):
        row0 = np.asarray(row0, dtype=float)
        if row0.shape != (lattice.n_sites,):
            raise ConfigurationError("row0 must have one entry per site")
        self.lattice = lattice
        self.row0 = row0
        self.w_tilde = potential_spectrum(row0, lattice)
        self.spectrum = self.w_tilde / lattice.cell_volume
        self.sqrt_spectrum = np.where(
            self.spectrum >= 0,
            np.sqrt(np.abs(self.spectrum)) + 0j,
            1j * np.sqrt(np.abs(self.spectrum)))
        self.omega = None
        self._axes = tuple(range(1, lattice.ndim + 1))
        # Z = sqrt(M) ifftn(sqrt(lambda) chi): E[Z Z^T] = ifft of lambda = W
        self._scale = np.sqrt(lattice.n_sites)

    @classmethod
    def from_potential(cls, lattice: LatticeSpec, potential) -> "SpectralKernel":
        row0 = np.asarray(potential(lattice.distance_row()), dtype=float)
        if not np.all(np.isfinite(row0)):
            raise ConfigurationError("potential produced non-finite entries")
        return cls(lattice, row0)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def W0(self) -> float:
        return float(self.row0[0])

    @property
    def U0(self) -> float:
        """Diagonal of |W| (constant across sites): mean of |spectrum|."""
        return float(np.mean(np.abs(self.spectrum)))

    def _to_grid(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[:-1] + self.lattice.extents)

    def apply_W(self, x: np.ndarray) -> np.ndarray:
        """(x W)_m = sum_k W_mk x_k for batches x of shape (..., M)."""
        grid = self._to_grid(np.asarray(x))
        spec = self.spectrum.reshape(self.lattice.extents)
        out = np.fft.ifftn(np.fft.fftn(grid, axes=self._axes) * spec,
                           axes=self._axes)
        out = out.reshape(x.shape)
        return out.real if np.isrealobj(x) else out

    def synth_noise(self, chi: np.ndarray) -> np.ndarray:
        """Coloured noise Z with E[Z Z^T] = W from spectral amplitudes chi."""
        grid = self._to_grid(chi) * self.sqrt_spectrum.reshape(self.lattice.extents)
        out = np.fft.ifftn(grid, axes=self._axes) * self._scale
        return out.reshape(chi.shape)


class SpectralFieldPropagator:
    """Drop-in replacement for the dense single-field propagator.

    Accepts a ModelSpec (whose circulant row is re-used) or a bare
    SpectralKernel.  Only constant gauges are supported: the adaptive and
    matrix-valued mixings need dense per-trajectory kernel contractions.
    """

    n_fields = 1
    field_names = ("psi",)

    def __init__(self, model, gauge: GaugeConfig):
        if isinstance(model, SpectralKernel):
            kernel = model
            omega = None
        else:
            kernel = SpectralKernel(model.lattice, model.row0)
            omega = model.omega if model.has_quadratic_part else None
        gauge.validate(kernel.n_sites)
        if gauge.diffusion not in ("none", "global"):
            raise ConfigurationError(
                "spectral engine supports only the none/global diffusion gauges")
        self.kernel = kernel
        self.gauge = gauge
        self.omega = omega
        self.weighted = gauge.weighted
        self.n_noise = 2 * kernel.n_sites
        self.partition = build_partition(kernel.lattice.extents)
        a = float(gauge.a) if gauge.diffusion == "global" else 0.0
        self._a = a
        self._cosh_a = np.cosh(a)
        self._sinh_a = np.sinh(a)
        # constant-gauge Stratonovich corrections: field diag(W) = W(0),
        # weight 0.5 e^{-2a} diag|W| per site
        self._w_onsite = kernel.W0
        self._weight_coeff = 0.5 * np.exp(-2.0 * a) * kernel.U0

    def _mixed_noise(self, xi: np.ndarray):
        M = self.kernel.n_sites
        chi_a = spectral_amplitudes(xi[:, :M], self.partition)
        chi_b = spectral_amplitudes(xi[:, M:], self.partition)
        z_a = self.kernel.synth_noise(chi_a)
        z_b = self.kernel.synth_noise(chi_b)
        if self._a != 0.0:
            ca, sa = self._cosh_a, self._sinh_a
            z_a, z_b = ca * z_a - 1j * sa * z_b, 1j * sa * z_a + ca * z_b
        return z_a, z_b

    def velocity(self, alpha, beta, t, xi, strat: bool):
        a_f, b_f = alpha[:, 0, :], beta[:, 0, :]
        n = a_f * b_f
        z_a, z_b = self._mixed_noise(xi)
        n_drift = n.real if self.weighted else n
        wn = self.kernel.apply_W(n_drift)
        v_a = -1j * (a_f * wn) - 1j * SQRT_I * a_f * z_a
        v_b = 1j * (b_f * wn) + SQRT_I * b_f * z_b
        if self.omega is not None:
            v_a = v_a - 1j * (a_f @ self.omega.T)
            v_b = v_b + 1j * (b_f @ self.omega.conj().T)
        if self.weighted:
            v_w = (n.imag * (SQRT_I * z_a - SQRT_I.conjugate() * z_b)).sum(axis=1)
        else:
            v_w = np.zeros(a_f.shape[0], dtype=complex)
        if strat:
            v_a = v_a + 0.5j * self._w_onsite * a_f
            v_b = v_b - 0.5j * self._w_onsite * b_f
            if self.weighted:
                v_w = v_w + self._weight_coeff * n.conj().sum(axis=1)
        return v_a[:, None, :], v_b[:, None, :], v_w
