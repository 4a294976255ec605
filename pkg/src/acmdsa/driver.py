"""AC-MDSA optimization loop, plain MDSA and the many-sample reference mode."""
import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .density import (build_filter, radius_schedule, scaled_upper_bounds, simp_modulus,
                      symmetrize)
from .errors import ACMDSAError, CalibrationError, NumericalError, ParameterError, RunError, StateError
from .prox import kl_project, solve_multiplier
from .stochastic import (STREAM_CALIBRATION, RngStream, RobustCompliance, estimate_gradient,
                         evaluate_design)

log = logging.getLogger(__name__)

MODES = ("acmdsa", "mdsa", "mc")


@dataclass
class ACMDSAConfig:
    theta: float
    m: int = 2
    N_max: int = 500
    N_min: int = 400
    eps: float = 0.01
    N_rst: int = 100
    delta_rst: int = 100
    eps_rst: float = 0.025
    N_damp: int = 400
    eps_damp: float = 0.05
    tau: float = 2.0
    N_D: int = 100
    N_M: int = 6
    move: float = 0.2
    alpha: float = 1.0
    m_eval: int = 10_000
    solver: str = "auto"
    cg_tol: float = 1e-8
    mode: str = "acmdsa"

    def validate(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.theta <= 0:
            raise ParameterError("theta must be positive")
        if self.m < 2:
            raise ParameterError("m must be at least 2")
        if not 1 <= self.N_min <= self.N_max:
            raise ParameterError("need 1 <= N_min <= N_max")
        if self.delta_rst < 1:
            raise ParameterError("delta_rst must be >= 1")
        if not 0 < self.move <= 1:
            raise ParameterError("move must lie in (0, 1]")
        if self.tau <= 1:
            raise ParameterError("tau must exceed 1")
        if self.N_D < 2 or self.N_M < 1:
            raise ParameterError("N_D >= 2 and N_M >= 1 required")
        if self.m_eval < 2:
            raise ParameterError("m_eval must be at least 2")
        if self.cg_tol <= 0:
            raise ParameterError("solver tolerance must be positive")


@dataclass
class StepPolicy:
    theta: float
    D: float
    N: int
    alpha: float = 1.0
    mode: str = "acmdsa"
    M: float = None
    Sigma: float = None
    eta_bar: float = None

    @property
    def calibrated(self):
        return self.eta_bar is not None


def base_step(alpha, D, N, M, Sigma):
    """Reference step for the accelerated policy."""
    return math.sqrt(6.0 * alpha) * D / ((N + 2) ** 1.5 * math.sqrt(4.0 * M * M + Sigma * Sigma))


def mdsa_base_step(alpha, D, N, M):
    """Constant robust-SA step used for the non-accelerated mode."""
    return math.sqrt(2.0 * alpha) * D / (M * math.sqrt(N))


def eta_k(policy, k_in):
    if not policy.calibrated:
        raise StateError("step policy used before calibration")
    if policy.mode == "acmdsa":
        return policy.theta * policy.eta_bar * (k_in + 1) / 2.0
    return policy.theta * policy.eta_bar


def beta_k(k_in):
    if k_in < 1:
        raise ParameterError("k_in must be >= 1")
    return (k_in + 1) / 2.0


def middle_point(x_tilde, x_ag, k_in):
    """Point where the gradient is sampled."""
    beta = beta_k(k_in)
    return x_tilde / beta + (1.0 - 1.0 / beta) * x_ag


def aggregate_update(x_new, x_ag, k_in):
    """Running weighted average of the iterates since the last (re)start."""
    beta = beta_k(k_in)
    return x_new / beta + (1.0 - 1.0 / beta) * x_ag


def gradient_bounds(samples):
    """(M, Sigma) from stacked scaled-gradient evaluations, one per row."""
    G = np.asarray(samples, dtype=float)
    M = math.sqrt(np.mean(np.max(np.abs(G), axis=1) ** 2))
    Q = G.mean(axis=0)
    Sigma = math.sqrt(np.mean(np.max(np.abs(G - Q), axis=1) ** 2))
    return M, Sigma


def calibrate_from_samples(policy, samples):
    M, Sigma = gradient_bounds(samples)
    if not M > 0:
        raise CalibrationError("all calibration gradients vanish; step size undefined")
    policy.M, policy.Sigma = M, Sigma
    if policy.mode == "acmdsa":
        policy.eta_bar = base_step(policy.alpha, policy.D, policy.N, M, Sigma)
    else:
        policy.eta_bar = mdsa_base_step(policy.alpha, policy.D, policy.N, M)
    return M, Sigma, policy.eta_bar


@dataclass
class RecalConfig:
    N_rst: int = 100
    delta_rst: int = 100
    eps_rst: float = 0.025


def maybe_recalibrate(k, k_in, dx_ag_l2, config):
    """True when the aggregate has stalled long enough to restart the momentum."""
    return k >= config.N_rst and k_in >= config.delta_rst and dx_ag_l2 < config.eps_rst


@dataclass
class DampingState:
    move: float
    tau: float = 2.0
    N_D: int = 100
    eps_damp: float = 0.05
    N_damp: int = 400
    history: deque = field(default=None, repr=False)
    n_zero_denominator: int = 0

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.N_D)

    def push(self, E):
        self.history.append(np.array(E, dtype=float))

    def ratio(self):
        if len(self.history) < self.N_D:
            return None
        R, zero = effective_step_ratio(self.history)
        self.n_zero_denominator += zero
        return R


def effective_step_ratio(window):
    """Average windowed change of E over the latest single-step change.

    ``window`` holds E_{k-N_D+1}, ..., E_k. Returns ``(R_k, zero_denominator)``.
    """
    window = list(window)
    N_D = len(window)
    if N_D < 2:
        raise ParameterError("window needs at least two modulus vectors")
    num = np.linalg.norm(window[-1] - window[0]) / N_D
    den = np.linalg.norm(window[-1] - window[-2])
    if den == 0.0:
        log.debug("effective step ratio: zero denominator, treating as stalled")
        return 0.0, True
    return float(num / den), False


def maybe_damp(R_k, k, damping):
    """Shrink the move limit when progress has stalled; returns the new move."""
    if R_k is not None and k >= damping.N_damp and R_k <= damping.eps_damp:
        damping.move = damping.move / damping.tau
        # the next reduction needs a fresh window of N_D moduli
        damping.history.clear()
    return damping.move


@dataclass
class HistoryRow:
    step: int
    J_m: float
    mu_m: float
    var_m: float
    eta: float
    move: float
    dx_ag_l2: float
    recal: int
    damp: int


@dataclass
class RunRecord:
    history: list
    x: np.ndarray
    xbar: np.ndarray
    J_hat: float
    mu_hat: float
    sigma_hat: float
    se_J: float
    N_step: int
    N_solve: int
    n_recal: int
    wall_s: float
    seed: int
    kappa: float
    config: dict
    terminated: bool = False
    final_radius: float = None
    calibrations: list = field(default_factory=list)

    def expected_solves(self):
        m, N_M = self.config["m"], self.config["N_M"]
        return m * self.N_step + m * N_M * (1 + self.n_recal)


class _Calibrator:
    def __init__(self, ctx, policy, cfg, rng, smap):
        self.ctx, self.policy, self.cfg, self.rng, self.smap = ctx, policy, cfg, rng, smap
        self.occasion = 0

    def __call__(self, xt, vt, filt):
        x = xt / vt
        samples = []
        for i in range(self.cfg.N_M):
            est = estimate_gradient(x, self.ctx, filt, self.cfg.m, self.rng, step=self.occasion,
                                    stream=STREAM_CALIBRATION, first_sample=i * self.cfg.m, v_tilde=vt)
            g = est.G_tilde
            samples.append(symmetrize(g, self.smap) if self.smap is not None else g)
        self.occasion += 1
        return calibrate_from_samples(self.policy, samples)


def run_acmdsa(problem, weights, cfg, seed=0, evaluate=True):
    """Run one optimization; returns a :class:`RunRecord`.

    ``problem`` supplies ``mesh``, ``fem``, ``loads``, ``Vf``, ``schedule``,
    ``material`` and ``symmetry`` (a SymmetryMap or None).
    """
    cfg.validate()
    t_start = time.perf_counter()
    mode = cfg.mode
    accelerated = mode == "acmdsa"
    mesh, mat = problem.mesh, problem.material
    ctx = RobustCompliance(problem.fem, mat, problem.loads, weights, solver=cfg.solver, tol=cfg.cg_tol)
    rng = RngStream(seed)
    smap = problem.symmetry
    v = mesh.volumes
    V0 = v.sum()
    Vf = problem.Vf
    n = mesh.n

    R = radius_schedule(1, problem.schedule)
    filt = build_filter(mesh, R)
    vt = scaled_upper_bounds(filt.H, v, V0, Vf)
    xt = kl_project(vt * Vf, vt)
    xt_ag = xt.copy()
    x_ag = xt_ag / vt

    policy = StepPolicy(cfg.theta, math.sqrt(math.log(n)), cfg.N_max, cfg.alpha,
                        "acmdsa" if accelerated else "mdsa")
    calibrate = _Calibrator(ctx, policy, cfg, rng, smap)
    recal_cfg = RecalConfig(cfg.N_rst, cfg.delta_rst, cfg.eps_rst)
    damping = DampingState(cfg.move, cfg.tau, cfg.N_D, cfg.eps_damp, cfg.N_damp)

    history = []
    calibrations = []
    n_recal = 0
    k_in = 1
    terminated = False
    k = 0
    try:
        calibrations.append((0,) + calibrate(xt, vt, filt))
        for k in range(1, cfg.N_max + 1):
            xt_md = middle_point(xt, xt_ag, k_in) if accelerated else xt
            est = estimate_gradient(xt_md / vt, ctx, filt, cfg.m, rng, step=k, v_tilde=vt)
            Gt = symmetrize(est.G_tilde, smap) if smap is not None else est.G_tilde
            eta = eta_k(policy, k_in)
            out = solve_multiplier(xt, Gt, eta, vt, damping.move)
            xt = out.x_tilde
            xt_ag_new = aggregate_update(xt, xt_ag, k_in) if accelerated else xt.copy()
            x_ag_new = xt_ag_new / vt
            dx = x_ag_new - x_ag
            dx_l2 = float(np.linalg.norm(dx))
            dx_inf = float(np.max(np.abs(dx)))
            xt_ag, x_ag = xt_ag_new, x_ag_new

            vol = float(v @ (filt.H @ x_ag))
            if abs(vol - Vf * V0) > 1e-8 * Vf * V0:
                raise NumericalError(f"volume drifted to {vol / V0:.10f} of the domain")

            row = HistoryRow(k, est.J, est.mu, est.var, eta, damping.move, dx_l2, 0, 0)
            history.append(row)
            if k >= cfg.N_min and dx_inf < cfg.eps:
                terminated = True
                break

            damping.push(simp_modulus(filt.H @ (xt / vt), mat))
            move_before = damping.move
            maybe_damp(damping.ratio(), k, damping)
            row.damp = int(damping.move < move_before)

            if maybe_recalibrate(k, k_in, dx_l2, recal_cfg):
                k_in = 1
                if accelerated:
                    xt = xt_ag.copy()
                calibrations.append((k,) + calibrate(xt, vt, filt))
                n_recal += 1
                row.recal = 1
            else:
                k_in += 1

            R_next = radius_schedule(k + 1, problem.schedule)
            if R_next != R:
                R = R_next
                x_cur, x_ag_cur = xt / vt, xt_ag / vt
                filt = build_filter(mesh, R)
                vt = scaled_upper_bounds(filt.H, v, V0, Vf)
                xt = kl_project(vt * x_cur, vt)
                xt_ag = kl_project(vt * x_ag_cur, vt)
                x_ag = xt_ag / vt
    except ACMDSAError as exc:
        raise RunError(k, exc) from exc

    N_step = len(history)
    x_star = x_ag
    xbar_star = filt.H @ x_star
    if evaluate:
        ev = evaluate_design(xbar_star, ctx, cfg.m_eval, rng)
        J_hat, mu_hat, sigma_hat, se_J = ev.J, ev.mu, ev.sigma, ev.se_J
    else:
        J_hat = mu_hat = sigma_hat = se_J = float("nan")
    record = RunRecord(
        history=history, x=x_star, xbar=xbar_star, J_hat=J_hat, mu_hat=mu_hat,
        sigma_hat=sigma_hat, se_J=se_J, N_step=N_step, N_solve=ctx.n_solves, n_recal=n_recal,
        wall_s=time.perf_counter() - t_start, seed=seed, kappa=weights.kappa, config=asdict(cfg),
        terminated=terminated, final_radius=R, calibrations=calibrations)
    if record.N_solve != record.expected_solves():
        raise NumericalError(f"solve accounting mismatch: {record.N_solve} != {record.expected_solves()}")
    return record
