"""Stochastic integration of the phase-space trajectory equations.

Trajectory equations integrated here (Ito form, one interacting field):

    dalpha/dt = -i [omega alpha + alpha (W n~)] - i sqrt(i) alpha (sqrtW eta_a)
    dbeta/dt  = +i [omega* beta + beta (W n~)] +   sqrt(i) beta (sqrtW eta_b)

with n = alpha*beta, n~ = n (plain) or Re n (standard drift gauge, which
moves the imaginary part into a trajectory weight:
dlog(Omega)/dt = sum_n (sqrtW n'')_n [sqrt(i) eta_a - sqrt(-i) eta_b]_n).
The 2M real noises xi (variance 1/dt per step) may be premixed by a
complex-orthogonal O: (eta_a, eta_b) = O xi -- this changes no expectation
value but reshapes sampling error.

Two schemes are provided: plain Euler (Ito) and the semi-implicit midpoint
rule, which solves the Stratonovich form; the Ito<->Stratonovich drift
corrections for these multiplicative noises are included exactly for
constant gauges, and in closed form for the adaptive (field-dependent)
gauge.

Noise is counter-based (Philox keyed by (seed, stream) with the step index
as counter), so a run is bit-reproducible for a given seed and a
trajectory's noise does not depend on the scheme, allowing same-path
comparisons between schemes and step sizes.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import gauges as gaugemod
from . import phasespace
from .errors import ConfigurationError, RunFailedError
from .gauges import GaugeConfig
from .model import ModelSpec

#: sqrt(i) = exp(i pi/4); its conjugate is 1/(i sqrt(i))
SQRT_I = np.exp(0.25j * np.pi)

SCHEME_EULER = "euler_ito"
SCHEME_MIDPOINT = "semi_implicit_midpoint_strat"
SCHEMES = (SCHEME_EULER, SCHEME_MIDPOINT)

#: a run whose excluded-trajectory fraction exceeds this is flagged unreliable
RELIABLE_EXCLUSION_MAX = 1e-3

#: noise stream tags (Philox key word 2)
STREAM_DYNAMICS = 0
STREAM_INITIAL = 1


@dataclasses.dataclass
class StepperConfig:
    """Fixed-step integration settings.

    dt : step size.
    scheme : "euler_ito" or "semi_implicit_midpoint_strat".
    midpoint_iters : fixed-point iterations of the implicit midpoint solve.
    max_field : |alpha|, |beta| beyond this freezes the trajectory as diverged.
    """

    dt: float
    scheme: str = SCHEME_MIDPOINT
    midpoint_iters: int = 3
    max_field: float = 1e15

    def validate(self) -> None:
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(
                f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.midpoint_iters < 1:
            raise ConfigurationError("midpoint_iters must be >= 1")
        if self.max_field <= 0:
            raise ConfigurationError("max_field must be positive")


def step_normals(master_seed: int, stream: int, step_index: int,
                 shape: tuple) -> np.ndarray:
    """Standard normals for one step, reproducible from (seed, stream, step)."""
    bg = np.random.Philox(counter=[0, 0, 0, step_index],
                          key=[master_seed & 0xFFFFFFFFFFFFFFFF, stream])
    return np.random.Generator(bg).standard_normal(shape)


# ----------------------------------------------------------------------------
# gauge engine: noise mixing + scheme corrections for one interacting field
# ----------------------------------------------------------------------------

class _GaugeEngine:
    """Noise mixing and Ito<->Stratonovich bookkeeping for one field.

    Precomputes everything constant: the dense O (when the gauge is not
    adaptive) and the diagonal entering the weight drift of the Stratonovich
    form, diag(sqrtW* [G*_aa + G*_bb + i G*_ab - i G*_ba] sqrtW), G = O O†,
    which reduces to 2 e^{-2a} diag(U) for the global mix.
    """

    def __init__(self, model: ModelSpec, gauge: GaugeConfig):
        gauge.validate(model.n_sites)
        if gauge.diffusion == "adaptive" and gauge.drift != "standard":
            raise ConfigurationError(
                "adaptive diffusion gauge requires the standard drift gauge")
        self.model = model
        self.gauge = gauge
        self.weighted = gauge.weighted
        M = model.n_sites
        self.n_sites = M
        self.wdiag = np.diag(model.W).copy()
        self.O = gaugemod.gauge_o_matrix(gauge, M)
        if self.O is not None:
            sw = model.sqrt_w
            G = self.O @ self.O.conj().T
            Gc = G.conj()
            core = (Gc[:M, :M] + Gc[M:, M:]
                    + 1j * Gc[:M, M:] - 1j * Gc[M:, :M])
            self._weight_dvec = np.diag(sw.conj() @ core @ sw)
        else:
            self._weight_dvec = None

    def mix(self, xi: np.ndarray, n: np.ndarray, t: float):
        """(eta_a, eta_b, a_state) for raw noises xi (n_traj, 2M)."""
        M = self.n_sites
        xi1, xi2 = xi[:, :M], xi[:, M:]
        kind = self.gauge.diffusion
        if kind == "none":
            return xi1, xi2, None
        if kind == "global":
            e1, e2 = gaugemod.mix_noise_global(xi1, xi2, self.gauge.a)
            return e1, e2, None
        if kind == "adaptive":
            ints = gaugemod.gauge_integrals(self.model, n)
            t_opt = max(self.gauge.t_fin - t, 0.0)
            a = np.asarray(gaugemod.a_approx(ints, t_opt))[:, None]
            e1, e2 = gaugemod.mix_noise_global(xi1, xi2, a)
            return e1, e2, (a, ints)
        eta = xi @ self.O.T
        return eta[:, :M], eta[:, M:], None

    def weight_velocity(self, n: np.ndarray, eta_a, eta_b) -> np.ndarray:
        """dlog(Omega)/dt noise coupling (zero array when unweighted)."""
        if not self.weighted:
            return np.zeros(n.shape[0], dtype=complex)
        swn = n.imag @ self.model.sqrt_w
        return (swn * (SQRT_I * eta_a - SQRT_I.conjugate() * eta_b)).sum(axis=1)

    def strat_corrections(self, alpha, beta, n, t, a_state):
        """Additive Stratonovich drift corrections (s_alpha, s_beta, s_logw)."""
        if self.gauge.diffusion != "adaptive":
            s_a = 0.5j * self.wdiag * alpha
            s_b = -0.5j * self.wdiag * beta
            if self.weighted:
                s_w = 0.25 * (n.conj() @ self._weight_dvec)
            else:
                s_w = np.zeros(alpha.shape[0], dtype=complex)
            return s_a, s_b, s_w
        return self._adaptive_corrections(alpha, beta, n, t, a_state)

    def _adaptive_corrections(self, alpha, beta, n, t, a_state):
        """Corrections when the mixing strength a depends on the fields.

        The extra terms (beyond the constant-gauge ones) come from
        differentiating a(n, t) through the noise coefficients; they are
        lattice sums over the interaction kernel:

            I3_m = sum_yz n_y n*_z U_yz^2 W_my      I4_m: same with U_my
            I5_m = sum_yz n_y n''_z U_yz W_my       I6_m: same with U_my
        """
        model = self.model
        U, W = model.U, model.W
        U0 = model.U0
        a, ints = a_state
        t_left = max(self.gauge.t_fin - t, 0.0) / 3.0
        q = n.conj() @ (U * U)
        p = n.imag @ U
        nq = n * q
        npv = n * p
        I3 = nq @ W
        I4 = nq @ U
        I5 = npv @ W
        I6 = npv @ U
        e2 = np.exp(-2.0 * a)
        e6 = np.exp(-6.0 * a)
        e8 = np.exp(-8.0 * a)
        root = np.sqrt(1.0 + 4.0 * np.asarray(ints.I1)[:, None] / U0)
        brace_a = t_left * (I3 - 1j * e2 * I4.conj()) \
            + 0.5 * root * (-1j * I5 + e2 * I6.conj())
        brace_b = t_left * (I3 + 1j * e2 * I4.conj()) \
            - 0.5 * root * (1j * I5 + e2 * I6.conj())
        s_a = 0.5j * self.wdiag * alpha + 1j * alpha * (e6 / U0) * brace_a
        s_b = -0.5j * self.wdiag * beta - 1j * beta * (e6 / U0) * brace_b
        brace_w = -2j * t_left * I4.conj() + root * I6.conj()
        s_w = 0.5 * (e2[:, 0] * (n.conj() @ np.diag(U).copy())) \
            - (e8[:, 0] / U0) * (n.imag * brace_w).sum(axis=1)
        return s_a, s_b, s_w


# ----------------------------------------------------------------------------
# propagators
# ----------------------------------------------------------------------------

class SingleFieldPropagator:
    """Velocity field for one bosonic component with pairwise interactions."""

    n_fields = 1
    field_names = ("psi",)

    def __init__(self, model: ModelSpec, gauge: GaugeConfig):
        self.model = model
        self.gauge = gauge
        self.engine = _GaugeEngine(model, gauge)
        self.n_noise = 2 * model.n_sites

    def velocity(self, alpha, beta, t, xi, strat: bool):
        """(v_alpha, v_beta, v_logw) for fields of shape (n_traj, 1, M)."""
        model = self.model
        a_f, b_f = alpha[:, 0, :], beta[:, 0, :]
        n = a_f * b_f
        eta_a, eta_b, a_state = self.engine.mix(xi, n, t)
        n_drift = n.real if self.engine.weighted else n
        wn = n_drift @ model.W
        v_a = -1j * (a_f * wn) - 1j * SQRT_I * a_f * (eta_a @ model.sqrt_w)
        v_b = 1j * (b_f * wn) + SQRT_I * b_f * (eta_b @ model.sqrt_w)
        if model.omega is not None:
            v_a = v_a - 1j * (a_f @ model.omega.T)
            v_b = v_b + 1j * (b_f @ model.omega.conj().T)
        v_w = self.engine.weight_velocity(n, eta_a, eta_b)
        if strat:
            s_a, s_b, s_w = self.engine.strat_corrections(a_f, b_f, n, t, a_state)
            v_a = v_a + s_a
            v_b = v_b + s_b
            v_w = v_w + s_w
        return v_a[:, None, :], v_b[:, None, :], v_w


class TwoComponentPropagator:
    """Excited (interacting) + ground (passive) components with linear coupling.

    Fields are ordered ("e", "g").  Only the e component carries interactions
    and noise; the coupling kappa/2 transfers amplitude between e and g and
    its sign flips for evaluation times at or past ``flip_time`` (an echo).
    Per-component quadratic parts come from ``model.omega`` (e) and
    ``omega_g`` (g).
    """

    n_fields = 2
    field_names = ("e", "g")

    def __init__(self, model: ModelSpec, kappa: float, gauge: GaugeConfig,
                 flip_time: float | None = None, omega_g: np.ndarray | None = None):
        self.model = model
        self.kappa = float(kappa)
        self.flip_time = flip_time
        self.engine = _GaugeEngine(model, gauge)
        self.gauge = gauge
        self.n_noise = 2 * model.n_sites
        self.omega_g = None if omega_g is None else np.asarray(omega_g, dtype=complex)

    def kappa_at(self, t: float) -> float:
        if self.flip_time is not None and t >= self.flip_time:
            return -self.kappa
        return self.kappa

    def velocity(self, alpha, beta, t, xi, strat: bool):
        model = self.model
        a_e, a_g = alpha[:, 0, :], alpha[:, 1, :]
        b_e, b_g = beta[:, 0, :], beta[:, 1, :]
        n_e = a_e * b_e
        eta_a, eta_b, a_state = self.engine.mix(xi, n_e, t)
        n_drift = n_e.real if self.engine.weighted else n_e
        wn = n_drift @ model.W
        half_k = 0.5 * self.kappa_at(t)
        v_ae = -1j * (a_e * wn + half_k * a_g) \
            - 1j * SQRT_I * a_e * (eta_a @ model.sqrt_w)
        v_be = 1j * (b_e * wn + half_k * b_g) \
            + SQRT_I * b_e * (eta_b @ model.sqrt_w)
        v_ag = -1j * half_k * a_e
        v_bg = 1j * half_k * b_e
        if model.omega is not None:
            v_ae = v_ae - 1j * (a_e @ model.omega.T)
            v_be = v_be + 1j * (b_e @ model.omega.conj().T)
        if self.omega_g is not None:
            v_ag = v_ag - 1j * (a_g @ self.omega_g.T)
            v_bg = v_bg + 1j * (b_g @ self.omega_g.conj().T)
        v_w = self.engine.weight_velocity(n_e, eta_a, eta_b)
        if strat:
            s_a, s_b, s_w = self.engine.strat_corrections(a_e, b_e, n_e, t, a_state)
            v_ae = v_ae + s_a
            v_be = v_be + s_b
            v_w = v_w + s_w
        v_a = np.stack([v_ae, v_ag], axis=1)
        v_b = np.stack([v_be, v_bg], axis=1)
        return v_a, v_b, v_w


# ----------------------------------------------------------------------------
# stepping
# ----------------------------------------------------------------------------

def step_ensemble(ens: phasespace.Ensemble, prop, cfg: StepperConfig,
                  step_index: int, noise_fn=None) -> None:
    """Advance the ensemble by one step in place.

    Trajectories whose fields leave the finite/|gamma| <= max_field region
    are rolled back to their pre-step state and deactivated.
    """
    dt = cfg.dt
    n_traj = ens.n_traj
    if noise_fn is None:
        xi = step_normals(ens.master_seed or 0, STREAM_DYNAMICS, step_index,
                          (n_traj, prop.n_noise))
    else:
        xi = noise_fn(step_index, (n_traj, prop.n_noise))
    xi = xi / np.sqrt(dt)
    a0, b0, w0 = ens.alpha, ens.beta, ens.log_weight
    # diverging rows may overflow here; they are rolled back and frozen below
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.scheme == SCHEME_EULER:
            v_a, v_b, v_w = prop.velocity(a0, b0, ens.t, xi, strat=False)
            a1 = a0 + dt * v_a
            b1 = b0 + dt * v_b
            w1 = w0 + dt * v_w
        else:
            t_mid = ens.t + 0.5 * dt
            a_bar, b_bar = a0, b0
            v_a = v_b = v_w = None
            for _ in range(cfg.midpoint_iters):
                v_a, v_b, v_w = prop.velocity(a_bar, b_bar, t_mid, xi, strat=True)
                a_bar = a0 + 0.5 * dt * v_a
                b_bar = b0 + 0.5 * dt * v_b
            a1 = 2.0 * a_bar - a0
            b1 = 2.0 * b_bar - b0
            w1 = w0 + dt * v_w
    bad = ens.active & ~_finite_rows(a1, b1, w1, cfg.max_field)
    if bad.any():
        a1[bad] = a0[bad]
        b1[bad] = b0[bad]
        w1[bad] = w0[bad]
        ens.active = ens.active & ~bad
    keep = ~ens.active
    if keep.any():
        a1[keep] = a0[keep]
        b1[keep] = b0[keep]
        w1[keep] = w0[keep]
    ens.alpha, ens.beta, ens.log_weight = a1, b1, w1
    ens.t = ens.t + dt
    if not ens.active.any():
        raise RunFailedError("all trajectories diverged")


def _finite_rows(a, b, w, max_field: float) -> np.ndarray:
    ok = np.isfinite(a).all(axis=(1, 2)) & np.isfinite(b).all(axis=(1, 2))
    ok &= np.isfinite(w)
    with np.errstate(invalid="ignore"):
        ok &= np.abs(a).max(axis=(1, 2)) <= max_field
        ok &= np.abs(b).max(axis=(1, 2)) <= max_field
    return ok


# ----------------------------------------------------------------------------
# recorded runs
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class ObservableSeries:
    name: str
    mean: np.ndarray           # (T,) complex
    stderr: np.ndarray         # (T,)
    n_used: np.ndarray         # (T,)


@dataclasses.dataclass
class EnsembleSeries:
    """Recorded output of a trajectory run.

    t : recorded times (multiples of dt).
    series : observable name -> ObservableSeries.
    V_emp : empirical spread at each recorded time.
    excluded_fraction : fraction of trajectories frozen out by each time.
    t_sim_empirical : interpolated time where V_emp crosses ``v_max``
        (None if it never does within the run).
    halted : True when recording stopped early because V_emp > v_max.
    """

    t: np.ndarray
    series: dict
    V_emp: np.ndarray
    excluded_fraction: np.ndarray
    t_sim_empirical: float | None
    halted: bool
    final: phasespace.Ensemble
    dt: float
    scheme: str
    seed: int
    v_max: float

    @property
    def reliable(self) -> bool:
        return (self.excluded_fraction.size == 0
                or float(self.excluded_fraction.max()) <= RELIABLE_EXCLUSION_MAX)

    def observable(self, name: str) -> ObservableSeries:
        return self.series[name]


def _grid_steps(t_grid, dt: float) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ConfigurationError("t_grid must be a non-empty 1-d array")
    steps = np.rint(t_grid / dt).astype(int)
    if np.any(steps < 0) or np.any(np.diff(steps) < 0):
        raise ConfigurationError("t_grid times must be non-negative and sorted")
    return steps


def _interp_crossing(ts, vs, v_max):
    above = np.nonzero(np.asarray(vs) > v_max)[0]
    if above.size == 0:
        return None
    k = above[0]
    if k == 0:
        return float(ts[0])
    t0, t1 = ts[k - 1], ts[k]
    v0, v1 = vs[k - 1], vs[k]
    if v1 == v0:
        return float(t1)
    return float(t0 + (v_max - v0) * (t1 - t0) / (v1 - v0))


def run_trajectories(prop, ens: phasespace.Ensemble, stepper: StepperConfig,
                     t_grid, observables=None, v_max: float = phasespace.V_HALT_THRESHOLD,
                     noise_fn=None, halt_on_v: bool = True) -> EnsembleSeries:
    """Integrate an ensemble, recording observables on t_grid.

    observables : dict name -> callable(ensemble) -> ObservableEstimate.
    Recording times snap to the nearest step boundary.  When the empirical
    spread exceeds v_max the run stops after recording that point (unless
    halt_on_v=False, e.g. for spread-curve studies).
    """
    stepper.validate()
    if observables is None:
        observables = {"mean_field": phasespace.mean_field,
                       "total_number": phasespace.total_number}
    steps = _grid_steps(t_grid, stepper.dt)
    names = list(observables)
    rec_t: list[float] = []
    rec_v: list[float] = []
    rec_excl: list[float] = []
    rec_obs: dict = {name: [] for name in names}
    halted = False
    step_now = 0
    for target in steps:
        while step_now < target:
            step_ensemble(ens, prop, stepper, step_now, noise_fn=noise_fn)
            step_now += 1
        rec_t.append(step_now * stepper.dt)
        v_emp, _ = phasespace.empirical_V(ens)
        rec_v.append(v_emp)
        rec_excl.append(ens.excluded_fraction)
        for name in names:
            rec_obs[name].append(observables[name](ens))
        if halt_on_v and v_emp > v_max:
            halted = True
            break
    series = {}
    for name in names:
        ests = rec_obs[name]
        series[name] = ObservableSeries(
            name=name,
            mean=np.array([e.mean for e in ests], dtype=complex),
            stderr=np.array([e.stderr for e in ests], dtype=float),
            n_used=np.array([e.n_used for e in ests], dtype=int))
    t_arr = np.array(rec_t)
    v_arr = np.array(rec_v)
    return EnsembleSeries(t=t_arr, series=series, V_emp=v_arr,
                          excluded_fraction=np.array(rec_excl),
                          t_sim_empirical=_interp_crossing(t_arr, v_arr, v_max),
                          halted=halted, final=ens, dt=stepper.dt,
                          scheme=stepper.scheme, seed=ens.master_seed or 0,
                          v_max=v_max)


def run_ensemble(model: ModelSpec, phi, gauge: GaugeConfig, stepper: StepperConfig,
                 n_traj: int, seed: int, t_grid, observables=None,
                 engine: str = "direct", v_max: float = phasespace.V_HALT_THRESHOLD,
                 noise_fn=None, halt_on_v: bool = True) -> EnsembleSeries:
    """Run a single-component ensemble from a coherent start.

    engine : "direct" (dense kernel matmuls) or "spectral" (circulant kernel
    applied by FFTs, O(M log M) per step).
    """
    if engine == "direct":
        prop = SingleFieldPropagator(model, gauge)
    elif engine == "spectral":
        from . import spectral
        prop = spectral.SpectralFieldPropagator(model, gauge)
    else:
        raise ConfigurationError(f"unknown engine {engine!r}")
    ens = phasespace.ensemble_from_coherent(phi, n_traj, master_seed=seed)
    return run_trajectories(prop, ens, stepper, t_grid, observables=observables,
                            v_max=v_max, noise_fn=noise_fn, halt_on_v=halt_on_v)
