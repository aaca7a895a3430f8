"""Analytic sampling-variance growth and useful-simulation-time estimates.

The spread statistic V(t) = (1/2M) sum_mu var[log|Omega gamma_mu|] admits
closed short-time estimates obtained by integrating the linearized
log-magnitude dynamics with frozen occupations.  Three forms are provided:

* ``v_gauge_p``      -- weighted (drift-gauged) runs, any diffusion gauge O;
* ``v_no_drift_gauged`` -- unweighted runs, any O (2M-block form);
* ``v_positive_p``   -- unweighted runs with O = 1 (plain form, M x M sums);

plus their leading small-t expansions in terms of the interaction-strength
integrals I1, I2, I1P, I2P (see ``gauges.gauge_integrals``):

    weighted:    V0 + (t/2) U0 cosh 2a + t e^{-2a} I1 + (t^2/2) e^{-4a} I2
    unweighted:  V0 + (t/2) U0 cosh 2a - (t^2/2) I1P + (t^3/3) e^{-2a} I2P

Setting V(t_sim) ~ 10 (the practical end of usefulness) gives the rule-of-
thumb simulation windows

    weighted runs:    t_sim ~ 8 / sqrt(U0 sqrt(I2)),  capped by 20/U0
    unweighted runs:  t_sim ~ 3 / I2P^{1/3},          capped by 20/U0
    diffusion-gauged unweighted runs: t_sim ~ 4 / (U0 I2P)^{1/4}

All formulas drop the quadratic (hopping/kinetic) part of the Hamiltonian;
with a nonzero quadratic part they remain useful guidance and reports carry
a ``kinetic_caveat`` flag.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigurationError
from .gauges import GaugeIntegrals, gauge_integrals
from .model import ModelSpec

#: empirical spread at which runs stop being useful (shared convention)
V_USEFUL_LIMIT = 10.0
#: relative tolerance when matching analytic to empirical spread
ANALYTIC_MATCH_RTOL = 0.20
#: |x| below which the entrywise exp remainders switch to series
_SERIES_CUT = 1e-4


# ----------------------------------------------------------------------------
# initial moments of the sampled distribution
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class InitialMoments:
    """Second moments of the t=0 ensemble entering the variance formulas.

    n_mean : (M,) E[n]          with n = alpha*beta
    nn_star: (M, M) E[n_k n*_k']
    nini   : (M, M) E[n''_k n''_k']   (n'' = Im n)
    C0     : (M, M) covar[n''_k, n''_k']
    c_alpha, c_beta : (M, M) covar[n''_k, log|alpha_k'|], covar[n''_k, log|beta_k'|]
    V0     : initial spread of the (unweighted) ensemble
    """

    n_mean: np.ndarray
    nn_star: np.ndarray
    nini: np.ndarray
    C0: np.ndarray
    c_alpha: np.ndarray
    c_beta: np.ndarray
    V0: float = 0.0

    @staticmethod
    def deterministic(n0: np.ndarray) -> "InitialMoments":
        """Moments of a deterministic (coherent) start: no covariances."""
        n0 = np.asarray(n0, dtype=complex)
        M = n0.shape[0]
        z = np.zeros((M, M))
        return InitialMoments(n_mean=n0.copy(),
                              nn_star=np.outer(n0, n0.conj()),
                              nini=np.outer(n0.imag, n0.imag),
                              C0=z.copy(), c_alpha=z.copy(), c_beta=z.copy(), V0=0.0)

    @staticmethod
    def from_samples(alpha0: np.ndarray, beta0: np.ndarray) -> "InitialMoments":
        """Empirical moments of a sampled start (shapes (n_traj, M))."""
        alpha0 = np.asarray(alpha0, dtype=complex)
        beta0 = np.asarray(beta0, dtype=complex)
        n = alpha0 * beta0
        N = n.shape[0]
        nim = n.imag
        n_mean = n.mean(axis=0)
        nn_star = (n.T @ n.conj()) / N
        nini = (nim.T @ nim) / N
        C0 = nini - np.outer(nim.mean(axis=0), nim.mean(axis=0))
        la = np.log(np.abs(alpha0))
        lb = np.log(np.abs(beta0))
        c_alpha = (nim.T @ la) / N - np.outer(nim.mean(axis=0), la.mean(axis=0))
        c_beta = (nim.T @ lb) / N - np.outer(nim.mean(axis=0), lb.mean(axis=0))
        V0 = float(np.mean(np.var(np.concatenate([la, lb], axis=1), axis=0, ddof=1)))
        return InitialMoments(n_mean=n_mean, nn_star=nn_star, nini=nini, C0=C0,
                              c_alpha=c_alpha, c_beta=c_beta, V0=V0)


# ----------------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------------

def _stacked_noise_matrix(model: ModelSpec) -> np.ndarray:
    """S = diag(-i sqrtW, sqrtW) mapping mixed noises onto the two fields."""
    M = model.n_sites
    S = np.zeros((2 * M, 2 * M), dtype=complex)
    S[:M, :M] = -1j * model.sqrt_w
    S[M:, M:] = model.sqrt_w
    return S


def _soos(model: ModelSpec, O: np.ndarray) -> np.ndarray:
    S = _stacked_noise_matrix(model)
    return S @ O @ O.conj().T @ S.conj().T


def _block_f(M: int) -> np.ndarray:
    eye = np.eye(M)
    return np.block([[eye, eye], [eye, eye]])


def _tile(mat: np.ndarray) -> np.ndarray:
    return np.tile(mat, (2, 2))


def _exp_remainder_1(t: float, P: np.ndarray) -> np.ndarray:
    """(e^{tP} - 1 - tP) / P, entrywise, with series fallback near tP = 0."""
    x = t * P
    small = np.abs(x) < _SERIES_CUT
    P_safe = np.where(small, 1.0, P)
    out = (np.exp(x) - 1.0 - x) / P_safe
    series = 0.5 * t * t * P * (1.0 + x / 3.0 + x * x / 12.0)
    return np.where(small, series, out)


def _exp_remainder_2(t: float, P: np.ndarray) -> np.ndarray:
    """(e^{tP} - 1 - tP - (tP)^2/2) / P^2, entrywise, series near tP = 0."""
    x = t * P
    small = np.abs(x) < _SERIES_CUT
    P_safe = np.where(small, 1.0, P)
    out = (np.exp(x) - 1.0 - x - 0.5 * x * x) / (P_safe * P_safe)
    series = (t ** 3) * P * (1.0 + x / 4.0 + x * x / 20.0) / 6.0
    return np.where(small, series, out)


def _check_o(O: np.ndarray, M: int):
    O = np.asarray(O, dtype=complex)
    if O.shape != (2 * M, 2 * M):
        raise ConfigurationError(f"O must be (2M, 2M) = ({2*M}, {2*M})")
    return O


# ----------------------------------------------------------------------------
# full variance forms
# ----------------------------------------------------------------------------

def v_gauge_p(t: float, model: ModelSpec, O: np.ndarray,
              moments: InitialMoments, v0: float | None = None) -> float:
    """Spread estimate for a weighted (drift-gauged) run with noise mix O."""
    M = model.n_sites
    O = _check_o(O, M)
    soos = _soos(model, O)
    F = _block_f(M)
    P = F @ soos @ F
    npp = np.concatenate([moments.n_mean.imag, moments.n_mean.imag])
    Q = 0.5 * np.real(_tile(moments.nn_star) * _exp_remainder_1(t, P)) \
        + t * _tile(moments.nini)
    term_noise = 0.5 * t * float(np.trace(soos).real)
    term_linear = t * float(np.sum(soos.imag @ npp))
    term_q = M * float(np.trace(np.real(soos) @ Q))
    base = moments.V0 if v0 is None else v0
    return base + (term_noise + term_linear + term_q) / (2.0 * M)


def v_no_drift_gauged(t: float, model: ModelSpec, O: np.ndarray,
                      moments: InitialMoments, v0: float | None = None) -> float:
    """Spread estimate for an unweighted run with noise mix O (2M form)."""
    M = model.n_sites
    O = _check_o(O, M)
    soos = _soos(model, O)
    F = _block_f(M)
    P = F @ soos @ F
    W = model.W
    Wbar = np.zeros((2 * M, 2 * M))
    Wbar[:M, :M] = -W
    Wbar[M:, M:] = W
    Qt = np.real(_tile(moments.nn_star) * _exp_remainder_2(t, P))
    Npr = np.diag(np.concatenate([moments.n_mean.real, moments.n_mean.real]))
    Nst = np.diag(np.concatenate([moments.n_mean.conj(), moments.n_mean.conj()]))
    Ctil = np.block([[moments.c_alpha, moments.c_beta],
                     [moments.c_alpha, moments.c_beta]])
    term_noise = 0.5 * t * float(np.trace(soos).real)
    term_q = float(np.trace(Wbar @ Qt @ Wbar))
    term_c0 = t * t * float(np.trace(Wbar @ _tile(moments.C0) @ Wbar))
    term_drift = -0.5 * t * t * (float(np.trace(Wbar @ Npr @ F @ Wbar))
                                 - float(np.trace(np.imag(soos @ Nst) @ F @ Wbar)))
    term_ctil = -2.0 * t * float(np.trace(Wbar @ Ctil))
    base = moments.V0 if v0 is None else v0
    return base + (term_noise + term_q + term_c0 + term_drift + term_ctil) / (2.0 * M)


def v_positive_p(t: float, model: ModelSpec, moments: InitialMoments,
                 v0: float | None = None) -> float:
    """Spread estimate for a plain unweighted, unmixed run (O = 1; M x M form)."""
    W = model.W
    U = model.U
    M = model.n_sites
    x = 2.0 * t * U
    small = np.abs(x) < _SERIES_CUT
    U_safe = np.where(small, 1.0, U)
    h = (np.exp(x) - 1.0 - x - 0.5 * x * x) / (U_safe * U_safe)
    h_series = (4.0 / 3.0) * t ** 3 * U * (1.0 + x / 4.0 + x * x / 20.0)
    h = np.where(small, h_series, h)
    WW = W @ W
    term_noise = t * float(np.trace(U))
    term_drift = -t * t * float(np.trace(W @ np.diag(moments.n_mean.real) @ W))
    term_c0 = 2.0 * t * t * float(np.trace(W @ moments.C0 @ W))
    term_ctil = -2.0 * t * float(np.trace(W @ (moments.c_beta - moments.c_alpha)))
    term_q = float(np.sum(WW * np.real(0.5 * moments.nn_star * h)))
    base = moments.V0 if v0 is None else v0
    return base + (term_noise + term_drift + term_c0 + term_ctil + term_q) / (2.0 * M)


# ----------------------------------------------------------------------------
# small-t expansions
# ----------------------------------------------------------------------------

def v_gauge_p_expanded(t, integrals: GaugeIntegrals, a: float, v0: float = 0.0):
    t = np.asarray(t, dtype=float)
    return (v0 + 0.5 * t * integrals.U0 * np.cosh(2 * a)
            + t * np.exp(-2 * a) * integrals.I1
            + 0.5 * t ** 2 * np.exp(-4 * a) * integrals.I2)


def v_positive_p_expanded(t, integrals: GaugeIntegrals, v0: float = 0.0):
    t = np.asarray(t, dtype=float)
    return (v0 + 0.5 * t * integrals.U0 - 0.5 * t ** 2 * integrals.I1P
            + t ** 3 * integrals.I2P / 3.0)


def v_diffusion_only_expanded(t, integrals: GaugeIntegrals, a: float, v0: float = 0.0):
    t = np.asarray(t, dtype=float)
    return (v0 + 0.5 * t * integrals.U0 * np.cosh(2 * a)
            - 0.5 * t ** 2 * integrals.I1P
            + t ** 3 * np.exp(-2 * a) * integrals.I2P / 3.0)


# ----------------------------------------------------------------------------
# useful-simulation-time estimates and method choice
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class TsimEstimate:
    """Per-mechanism window estimates; ``governing`` is the binding one."""
    method: str
    times: dict
    governing: str
    kinetic_caveat: bool = False


def _safe(value: float) -> float:
    return float(value) if np.isfinite(value) and value > 0 else float("inf")


def tsim(integrals: GaugeIntegrals, method: str,
         kinetic_caveat: bool = False) -> TsimEstimate:
    """Rule-of-thumb useful windows; infinite when a mechanism is absent."""
    U0, I2, I2P = integrals.U0, float(np.asarray(integrals.I2)), float(np.asarray(integrals.I2P))
    direct = _safe(20.0 / U0) if U0 > 0 else float("inf")
    if method == "positive_p":
        amp = _safe(3.0 / I2P ** (1.0 / 3.0)) if I2P > 0 else float("inf")
        times = {"noise_amplification": amp, "direct_noise": direct}
    elif method == "gauge_p":
        spread = _safe(8.0 / np.sqrt(U0 * np.sqrt(I2))) if (U0 > 0 and I2 > 0) else float("inf")
        times = {"weight_spread": spread, "direct_noise": direct}
    elif method == "diffusion_only":
        amp = _safe(4.0 / (U0 * I2P) ** 0.25) if (U0 > 0 and I2P > 0) else float("inf")
        times = {"noise_amplification": amp, "direct_noise": direct}
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    governing = min(times, key=times.get)
    return TsimEstimate(method=method, times=times, governing=governing,
                        kinetic_caveat=kinetic_caveat)


@dataclasses.dataclass
class StrategyReport:
    integrals: GaugeIntegrals
    tsim_positive_p: TsimEstimate
    tsim_gauge_p: TsimEstimate
    tsim_diffusion_only: TsimEstimate
    diffusion_only_preferred: bool
    diffusion_gauge_useful: bool
    notes: list

    @property
    def recommended(self) -> str:
        if self.diffusion_only_preferred:
            return "diffusion_only"
        t_g = self.tsim_gauge_p.times[self.tsim_gauge_p.governing]
        t_d = self.tsim_diffusion_only.times[self.tsim_diffusion_only.governing]
        return "gauge_p" if t_g >= t_d else "diffusion_only"


def gauge_strategy(model: ModelSpec, n: np.ndarray) -> StrategyReport:
    """Compare methods for a given occupation profile.

    Unweighted diffusion-gauged runs beat weighted ones when
    I2P <= (U0/16) I2 (for contact kernels this reduces exactly to M >= 16);
    a diffusion gauge is worth using at all when I2P >= 0.03 U0^3.
    """
    ints = gauge_integrals(model, np.asarray(n, dtype=complex))
    caveat = model.has_quadratic_part
    I2 = float(np.asarray(ints.I2))
    I2P = float(np.asarray(ints.I2P))
    preferred = I2P <= (ints.U0 / 16.0) * I2
    useful = I2P >= 0.03 * ints.U0 ** 3
    notes = []
    if caveat:
        notes.append("quadratic part present: variance estimates are guidance only")
    if not useful:
        notes.append("noise amplification too weak for a diffusion gauge to matter")
    return StrategyReport(integrals=ints,
                          tsim_positive_p=tsim(ints, "positive_p", caveat),
                          tsim_gauge_p=tsim(ints, "gauge_p", caveat),
                          tsim_diffusion_only=tsim(ints, "diffusion_only", caveat),
                          diffusion_only_preferred=preferred,
                          diffusion_gauge_useful=useful, notes=notes)


# ----------------------------------------------------------------------------
# assembled report for one configuration
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class VarianceReport:
    method: str
    t_grid: np.ndarray
    v_analytic: np.ndarray
    a_used: float | None
    t_opt: float
    integrals: GaugeIntegrals
    tsim: TsimEstimate
    kinetic_caveat: bool
    t_sim_analytic: float | None = None


def variance_report(model: ModelSpec, n0: np.ndarray, method: str,
                    t_grid: np.ndarray, t_opt: float | None = None,
                    a: float | None = None, v0: float = 0.0) -> VarianceReport:
    """Analytic V(t) curve plus window estimates for one run setup.

    method : "positive_p" | "gauge_p" | "diffusion_only".  When ``a`` is not
    given, gauge methods use their recommended value at ``t_opt`` (default:
    end of the grid).
    """
    from .gauges import a_approx, a_opt_diffusion_only, global_O

    n0 = np.asarray(n0, dtype=complex)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_opt is None:
        t_opt = float(t_grid[-1]) if t_grid.size else 0.0
    ints = gauge_integrals(model, n0)
    caveat = model.has_quadratic_part
    moments = InitialMoments.deterministic(n0)
    if method == "gauge_p":
        a_used = float(a_approx(ints, t_opt)) if a is None else float(a)
        O = global_O(a_used, model.n_sites)
        v = np.array([v_gauge_p(t, model, O, moments, v0=v0) for t in t_grid])
    elif method == "positive_p":
        a_used = None
        v = np.array([v_positive_p(t, model, moments, v0=v0) for t in t_grid])
    elif method == "diffusion_only":
        a_used = float(a_opt_diffusion_only(ints, t_opt)) if a is None else float(a)
        O = global_O(a_used, model.n_sites)
        v = np.array([v_no_drift_gauged(t, model, O, moments, v0=v0) for t in t_grid])
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    est = tsim(ints, method, caveat)
    t_cross = None
    above = np.nonzero(v > V_USEFUL_LIMIT)[0]
    if above.size and above[0] > 0:
        k = above[0]
        t0, t1 = t_grid[k - 1], t_grid[k]
        v0_, v1_ = v[k - 1], v[k]
        t_cross = float(t0 + (V_USEFUL_LIMIT - v0_) * (t1 - t0) / (v1_ - v0_))
    return VarianceReport(method=method, t_grid=t_grid, v_analytic=v, a_used=a_used,
                          t_opt=t_opt, integrals=ints, tsim=est,
                          kinetic_caveat=caveat, t_sim_analytic=t_cross)
