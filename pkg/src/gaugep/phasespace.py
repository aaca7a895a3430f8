"""Trajectory ensembles and weighted phase-space estimators.

A trajectory carries a pair of field configurations (alpha, beta) -- beta
plays the role of alpha* but is independent off the classical subspace --
plus a complex log-weight log(Omega).  Quantum expectations of normally
ordered operator products are ensemble ratios

    <prod a+ prod a> = E[ Omega prod(beta) prod(alpha) + c.c.-dual ]
                       / E[ Omega + Omega* ] ,

where the "c.c.-dual" term swaps (alpha, beta) -> (beta*, alpha*); averaging
the pair keeps estimates real where hermiticity demands it.  Ensembles are
stored struct-of-arrays: fields have shape (n_traj, n_fields, M).

Error bars come from a leave-one-batch-out jackknife of the full weighted
ratio (default 100 batches), which propagates numerator/denominator
correlations through the nonlinearity.  Weights are rescaled by
exp(-max Re log Omega) before exponentiation; the ratio is invariant, and
this keeps late-time weighted ensembles inside floating-point range.

The empirical spread statistic ``empirical_V`` tracks
(1/2FM) sum_mu var[log|Omega gamma_mu|]; a handful of units of it is the
practical end of a run's useful window (10 by convention here).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import EstimatorDegenerateError, RunFailedError

#: default number of jackknife batches for error bars
N_JACKKNIFE_BATCHES = 100
#: empirical spread at which a run stops being useful
V_HALT_THRESHOLD = 10.0


# ----------------------------------------------------------------------------
# containers
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class TrajectoryState:
    """One trajectory of a single-component field."""
    alpha: np.ndarray          # (M,) complex
    beta: np.ndarray           # (M,) complex
    log_weight: complex = 0.0
    t: float = 0.0


def init_coherent(phi: np.ndarray) -> TrajectoryState:
    """Classical (coherent-state) starting point: beta = alpha*, weight 1."""
    phi = np.asarray(phi, dtype=complex)
    return TrajectoryState(alpha=phi.copy(), beta=phi.conj(), log_weight=0.0 + 0.0j, t=0.0)


@dataclasses.dataclass
class Ensemble:
    """Struct-of-arrays trajectory ensemble.

    alpha, beta : (n_traj, n_fields, M) complex
    log_weight  : (n_traj,) complex
    active      : (n_traj,) bool -- False marks diverged/frozen trajectories
    field_names : e.g. ("psi",) or ("e", "g")
    """

    alpha: np.ndarray
    beta: np.ndarray
    log_weight: np.ndarray
    active: np.ndarray
    field_names: tuple[str, ...] = ("psi",)
    t: float = 0.0
    master_seed: int | None = None

    @property
    def n_traj(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_fields(self) -> int:
        return self.alpha.shape[1]

    @property
    def n_sites(self) -> int:
        return self.alpha.shape[2]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def excluded_fraction(self) -> float:
        return 1.0 - self.n_active / self.n_traj

    def field_index(self, component) -> int:
        if component is None:
            if self.n_fields != 1:
                raise EstimatorDegenerateError(
                    "component must be named for a multi-component ensemble")
            return 0
        if isinstance(component, str):
            try:
                return self.field_names.index(component)
            except ValueError:
                raise EstimatorDegenerateError(
                    f"unknown component {component!r}; have {self.field_names}") from None
        return int(component)

    def trajectory(self, j: int, component=None) -> TrajectoryState:
        f = self.field_index(component)
        return TrajectoryState(alpha=self.alpha[j, f].copy(), beta=self.beta[j, f].copy(),
                               log_weight=complex(self.log_weight[j]), t=self.t)


def ensemble_from_coherent(phi, n_traj: int, field_names: tuple[str, ...] = ("psi",),
                           master_seed: int | None = None) -> Ensemble:
    """Replicate a deterministic coherent start across n_traj trajectories.

    phi : (M,) amplitudes for a single field, or a sequence of per-field
          (M,) arrays matching field_names.
    """
    phi = np.asarray(phi, dtype=complex)
    if phi.ndim == 1:
        phi = phi[None, :]
    if phi.shape[0] != len(field_names):
        raise EstimatorDegenerateError("one amplitude row per field required")
    alpha = np.broadcast_to(phi, (n_traj,) + phi.shape).copy()
    return Ensemble(alpha=alpha, beta=alpha.conj().copy(),
                    log_weight=np.zeros(n_traj, dtype=complex),
                    active=np.ones(n_traj, dtype=bool),
                    field_names=tuple(field_names), t=0.0, master_seed=master_seed)


@dataclasses.dataclass
class ObservableEstimate:
    mean: complex
    stderr: float
    n_used: int
    name: str = ""

    @property
    def real(self) -> float:
        return float(np.real(self.mean))


# ----------------------------------------------------------------------------
# weighted-ratio machinery
# ----------------------------------------------------------------------------

def _active_weights(ens: Ensemble):
    """Active-trajectory view with overflow-guarded weights exp(logW - max)."""
    ok = ens.active & np.isfinite(ens.log_weight)
    if not ok.any():
        raise RunFailedError("no active trajectories left")
    logw = ens.log_weight[ok]
    shift = float(np.max(logw.real))
    w = np.exp(logw - shift)
    return ok, w


def _batch_edges(n: int, n_batches: int) -> np.ndarray:
    b = max(1, min(n_batches, n))
    return np.linspace(0, n, b + 1).astype(int)[:-1], b


def _weight_scale(w: np.ndarray) -> float:
    return float(np.mean(2.0 * np.abs(w)))


def _check_denominator(den_mean: float, weight_scale: float):
    """Degenerate when the mean weighted trace has cancelled away relative to
    the typical weight magnitude."""
    if not np.isfinite(den_mean) or abs(den_mean) < 1e-9 * max(weight_scale, 1e-300):
        raise EstimatorDegenerateError(
            "weighted-trace denominator indistinguishable from zero "
            f"(mean {den_mean:.3e}, weight scale {weight_scale:.3e})")


def _ratio_with_jackknife(num: np.ndarray, den: np.ndarray, weight_scale: float,
                          n_batches: int) -> tuple[complex, float, int]:
    """mean(num)/mean(den) with leave-one-batch-out jackknife stderr.

    num may be (n,) or (n, K); K columns are averaged *after* the ratio.
    """
    n = den.shape[0]
    num_tot = num.sum(axis=0)
    den_tot = den.sum()
    _check_denominator(float(den_tot.real) / n, weight_scale)
    theta = (num_tot / den_tot)
    theta = complex(theta.mean()) if np.ndim(theta) else complex(theta)
    edges, b = _batch_edges(n, n_batches)
    if b < 2:
        return theta, 0.0, n
    num_b = np.add.reduceat(num, edges, axis=0)
    den_b = np.add.reduceat(den, edges, axis=0)
    shape = (b,) + (1,) * (num.ndim - 1)
    # a batch can carry (numerically) the whole weight when spreads are huge;
    # the resulting inf/nan leave-one-out replicate just inflates the stderr
    with np.errstate(invalid="ignore", divide="ignore"):
        loo = (num_tot - num_b) / (den_tot - den_b).reshape(shape)
    if loo.ndim > 1:
        loo = loo.mean(axis=tuple(range(1, loo.ndim)))
    loo = loo[np.isfinite(loo)]
    if loo.size < 2:
        return theta, float("inf"), n
    b_eff = loo.size
    stderr = float(np.sqrt((b_eff - 1) / b_eff
                           * np.sum(np.abs(loo - loo.mean()) ** 2)))
    return theta, stderr, n


def estimate(ens: Ensemble, creation, annihilation, component=None,
             n_batches: int = N_JACKKNIFE_BATCHES, name: str = "") -> ObservableEstimate:
    """<prod_c a+_c prod_a a_a> for site-index lists creation/annihilation."""
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    alpha = ens.alpha[ok, f, :]
    beta = ens.beta[ok, f, :]
    fwd = np.ones_like(w)
    rev = np.ones_like(w)
    for c in creation:
        fwd = fwd * beta[:, c]
        rev = rev * alpha[:, c].conj()
    for a in annihilation:
        fwd = fwd * alpha[:, a]
        rev = rev * beta[:, a].conj()
    num = w * fwd + w.conj() * rev
    den = 2.0 * w.real
    mean, stderr, n = _ratio_with_jackknife(num, den, _weight_scale(w), n_batches)
    return ObservableEstimate(mean=mean, stderr=stderr, n_used=n, name=name)


def mean_field(ens: Ensemble, component=None,
               n_batches: int = N_JACKKNIFE_BATCHES) -> ObservableEstimate:
    """Site-averaged <a_n>."""
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    alpha = ens.alpha[ok, f, :]
    beta = ens.beta[ok, f, :]
    num = w * alpha.mean(axis=1) + w.conj() * beta.conj().mean(axis=1)
    den = 2.0 * w.real
    mean, stderr, n = _ratio_with_jackknife(num, den, _weight_scale(w), n_batches)
    return ObservableEstimate(mean=mean, stderr=stderr, n_used=n, name="mean_field")


def total_number(ens: Ensemble, component=None,
                 n_batches: int = N_JACKKNIFE_BATCHES) -> ObservableEstimate:
    """Total occupation sum_n <a+_n a_n> of one component."""
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    prod = (ens.beta[ok, f, :] * ens.alpha[ok, f, :]).sum(axis=1)
    num = w * prod + (w * prod).conj()
    den = 2.0 * w.real
    mean, stderr, n = _ratio_with_jackknife(num, den, _weight_scale(w), n_batches)
    return ObservableEstimate(mean=mean, stderr=stderr, n_used=n, name="total_number")


def density_profile(ens: Ensemble, component=None) -> np.ndarray:
    """Per-site densities <a+_n a_n> (no error bars), shape (M,)."""
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    prod = ens.beta[ok, f, :] * ens.alpha[ok, f, :]
    num = (w[:, None] * prod).sum(axis=0)
    den = float((2.0 * w.real).sum())
    _check_denominator(den / ok.sum(), _weight_scale(w))
    return ((num + num.conj()) / den).real


# ----------------------------------------------------------------------------
# normalized correlation functions
# ----------------------------------------------------------------------------

def g1(ens: Ensemble, dn: int, component=None,
       n_batches: int = N_JACKKNIFE_BATCHES) -> ObservableEstimate:
    """Site-averaged normalized first-order coherence at separation dn.

    g1(dn) = (1/M) sum_n <a+_n a_{n+dn}> / sqrt(nbar_n nbar_{n+dn});
    real part reported (the site average of a hermitian-pair estimate).
    """
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    alpha = ens.alpha[ok, f, :]
    beta = ens.beta[ok, f, :]
    M = alpha.shape[1]
    m_idx = (np.arange(M) + dn) % M
    coh = w[:, None] * beta * alpha[:, m_idx]
    coh = coh + (w[:, None].conj() * alpha.conj() * beta[:, m_idx].conj())
    dens = w[:, None] * beta * alpha
    dens = (dens + dens.conj()).real
    den = 2.0 * w.real

    _check_denominator(float(den.mean()), _weight_scale(w))

    def combine(coh_s, dens_s, den_s):
        nbar = dens_s / den_s
        if np.any(nbar <= 0):
            raise EstimatorDegenerateError("non-positive density in g1 normalization")
        vals = (coh_s / den_s) / np.sqrt(nbar * nbar[m_idx])
        return float(np.mean(vals.real))

    return _nonlinear_jackknife(combine, [coh, dens, den], n_batches, name=f"g1({dn})")


def g2(ens: Ensemble, r: int, component=None,
       n_batches: int = N_JACKKNIFE_BATCHES) -> ObservableEstimate:
    """Site-averaged normalized pair correlation at separation r.

    g2(r) = (1/M) sum_n <a+_n a+_{n+r} a_{n+r} a_n> / (nbar_n nbar_{n+r});
    the ratio is formed per site pair, then averaged (volume factors cancel).
    """
    f = ens.field_index(component)
    ok, w = _active_weights(ens)
    alpha = ens.alpha[ok, f, :]
    beta = ens.beta[ok, f, :]
    M = alpha.shape[1]
    m_idx = (np.arange(M) + r) % M
    pair = w[:, None] * beta * beta[:, m_idx] * alpha[:, m_idx] * alpha
    pair = (pair + pair.conj()).real
    dens = w[:, None] * beta * alpha
    dens = (dens + dens.conj()).real
    den = 2.0 * w.real

    _check_denominator(float(den.mean()), _weight_scale(w))

    def combine(pair_s, dens_s, den_s):
        nbar = dens_s / den_s
        if np.any(nbar <= 0):
            raise EstimatorDegenerateError("non-positive density in g2 normalization")
        vals = (pair_s / den_s) / (nbar * nbar[m_idx])
        return float(np.mean(vals))

    return _nonlinear_jackknife(combine, [pair, dens, den], n_batches, name=f"g2({r})")


def _nonlinear_jackknife(combine, samples, n_batches: int, name: str) -> ObservableEstimate:
    """Jackknife a nonlinear function of per-trajectory sums."""
    n = samples[-1].shape[0]
    totals = [s.sum(axis=0) for s in samples]
    theta = combine(*totals)
    edges, b = _batch_edges(n, n_batches)
    if b < 2:
        return ObservableEstimate(mean=theta, stderr=0.0, n_used=n, name=name)
    batch_sums = [np.add.reduceat(s, edges, axis=0) for s in samples]
    loo = np.array([combine(*[tot - bs[k] for tot, bs in zip(totals, batch_sums)])
                    for k in range(b)])
    stderr = float(np.sqrt((b - 1) / b * np.sum(np.abs(loo - loo.mean()) ** 2)))
    return ObservableEstimate(mean=theta, stderr=stderr, n_used=n, name=name)


# ----------------------------------------------------------------------------
# empirical spread of the sampled distribution
# ----------------------------------------------------------------------------

def empirical_V(ens: Ensemble) -> tuple[float, int]:
    """Mean variance of log|Omega gamma_mu| across phase-space components.

    Components that vanish on every active trajectory (e.g. a field still in
    vacuum) are skipped; trajectories with a zero entry in any remaining
    component are excluded from the statistic.  Returns (V, n_excluded)
    where n_excluded counts those excluded trajectories.
    """
    ok, w = _active_weights(ens)
    n = int(ok.sum())
    gamma = np.concatenate([ens.alpha[ok].reshape(n, -1),
                            ens.beta[ok].reshape(n, -1)], axis=1)
    mag = np.abs(gamma)
    live_cols = ~(np.all(mag == 0.0, axis=0))
    if not live_cols.any():
        return 0.0, 0
    mag = mag[:, live_cols]
    rows_ok = np.all(mag > 0.0, axis=1)
    n_excluded = int(n - rows_ok.sum())
    if rows_ok.sum() < 2:
        return 0.0, n_excluded
    L = np.log(mag[rows_ok]) + ens.log_weight[ok][rows_ok].real[:, None]
    V = float(np.mean(np.var(L, axis=0, ddof=1)))
    return V, n_excluded
