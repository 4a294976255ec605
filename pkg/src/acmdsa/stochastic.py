"""Random load models, keyed sampling and the m-sample RTO estimators."""
from dataclasses import dataclass, field

import numpy as np

from .density import chain_gradient, scale_gradient, simp_modulus
from .errors import ParameterError, PreconditionError
from .fem import compliance, compliance_sensitivity

STREAM_GRADIENT = 0
STREAM_CALIBRATION = 1
STREAM_EVALUATION = 2


@dataclass(frozen=True)
class UniformAngle:
    """Fixed magnitude, direction angle uniform on [lo, hi] (radians from +x)."""
    lo: float
    hi: float
    magnitude: float = 1.0

    def sample(self, gen):
        a = gen.uniform(self.lo, self.hi) if self.hi > self.lo else self.lo
        return self.magnitude * np.cos(a), self.magnitude * np.sin(a)

    def mean(self):
        if self.hi == self.lo:
            return self.magnitude * np.cos(self.lo), self.magnitude * np.sin(self.lo)
        span = self.hi - self.lo
        mx = (np.sin(self.hi) - np.sin(self.lo)) / span
        my = (np.cos(self.lo) - np.cos(self.hi)) / span
        return self.magnitude * mx, self.magnitude * my

    def degenerate(self):
        mid = 0.5 * (self.lo + self.hi)
        return UniformAngle(mid, mid, self.magnitude)


@dataclass(frozen=True)
class NormalComponents:
    """Independent normal x/y components; a zero sd makes that axis deterministic."""
    mean_xy: tuple = (0.0, 0.0)
    sd_xy: tuple = (0.0, 0.0)

    def sample(self, gen):
        z = gen.standard_normal(2)
        return (self.mean_xy[0] + self.sd_xy[0] * z[0],
                self.mean_xy[1] + self.sd_xy[1] * z[1])

    def mean(self):
        return tuple(float(v) for v in self.mean_xy)

    def degenerate(self):
        return NormalComponents(self.mean_xy, (0.0, 0.0))


@dataclass(frozen=True)
class LoadPoint:
    node: int
    dist: object


@dataclass(frozen=True)
class LoadModel:
    points: tuple
    ndof: int

    def __post_init__(self):
        if not self.points:
            raise ParameterError("load model needs at least one load point")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def load_dofs(self):
        return np.array([[2 * p.node, 2 * p.node + 1] for p in self.points]).ravel()

    def sample_components(self, gen):
        return np.array([c for p in self.points for c in p.dist.sample(gen)])

    def mean_components(self):
        return np.array([c for p in self.points for c in p.dist.mean()])

    def to_vector(self, comps):
        comps = np.asarray(comps, dtype=float)
        F = np.zeros((self.ndof,) + comps.shape[1:])
        np.add.at(F, self.load_dofs, comps)
        return F

    def deterministic(self):
        return LoadModel(tuple(LoadPoint(p.node, p.dist.degenerate()) for p in self.points), self.ndof)


class RngStream:
    """Counter-based generator factory keyed by (seed, stream, step, sample).

    Each sample gets its own Philox counter block, so draws do not depend on
    evaluation order or on how samples are spread over workers.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._key = np.random.SeedSequence(self.seed).generate_state(2, dtype=np.uint64)

    def generator(self, stream, step, sample):
        counter = np.array([0, sample, step, stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))


def sample_load(model, rng, stream=STREAM_GRADIENT, step=0, sample=0):
    return model.to_vector(model.sample_components(rng.generator(stream, step, sample)))


def sample_components(model, rng, stream, step, indices):
    """Component draws (2 * n_points, len(indices)) for the given sample ids."""
    cols = [model.sample_components(rng.generator(stream, step, int(i))) for i in indices]
    return np.stack(cols, axis=1)


def mean_load(model):
    return model.to_vector(model.mean_components())


@dataclass(frozen=True)
class RtoWeights:
    kappa: float
    w: float

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ParameterError(f"kappa must lie in [0, 1], got {self.kappa}")
        if not self.w > 0:
            raise ParameterError("normalization w must be positive")

    @classmethod
    def for_model(cls, kappa, model, E0=1.0):
        fbar = model.mean_components()
        return cls(kappa, float(fbar @ fbar) / E0)

    @property
    def c_mean(self):
        return self.kappa / self.w

    @property
    def c_var(self):
        return (1.0 - self.kappa) / self.w ** 2


def estimate_objective(C, weights):
    """Sample mean, unbiased variance and weighted objective from compliances."""
    C = np.asarray(C, dtype=float)
    m = C.size
    if m < 1 or (m < 2 and weights.kappa < 1.0):
        raise PreconditionError("two i.i.d. samples are needed for the variance term")
    mu = C.mean()
    var = float(np.sum((C - mu) ** 2) / (m - 1)) if m >= 2 else 0.0
    return float(mu), var, weights.c_mean * mu + weights.c_var * var


@dataclass
class GradientEstimate:
    m: int
    C: np.ndarray
    mu: float
    var: float
    J: float
    G_mu: np.ndarray
    G_var: np.ndarray
    G: np.ndarray
    G_tilde: np.ndarray = None

    @property
    def sigma(self):
        return float(np.sqrt(self.var))


@dataclass
class RobustCompliance:
    """Everything needed to turn a raw design into compliance samples."""
    fem: object
    material: object
    loads: object
    weights: RtoWeights
    solver: str = "auto"
    tol: float = 1e-8
    n_solves: int = field(default=0, init=False)

    def solve_loads(self, xbar, F):
        E = simp_modulus(xbar, self.material)
        system = self.fem.assemble(E)
        U = self.fem.solve(system, F, tol=self.tol, method=self.solver)
        self.n_solves += F.shape[1] if F.ndim == 2 else 1
        return U

    def compliance_matrix(self, xbar):
        """Compliance restricted to the load DOFs: C(f) = c^T S c."""
        dofs = self.loads.load_dofs
        P = np.zeros((self.fem.mesh.ndof, dofs.size))
        P[dofs, np.arange(dofs.size)] = 1.0
        E = simp_modulus(xbar, self.material)
        system = self.fem.assemble(E)
        U = self.fem.solve(system, P, tol=self.tol, method=self.solver)
        S = U[dofs]
        return 0.5 * (S + S.T)


def gradient_from_loads(x, ctx, filt, F, v_tilde=None):
    """Estimator for frozen load samples, the columns of F (ndof, m)."""
    F = np.asarray(F, dtype=float)
    m = F.shape[1]
    if m < 2:
        raise PreconditionError("two i.i.d. samples are needed for the gradient estimator")
    xbar = filt.H @ x
    U = ctx.solve_loads(xbar, F)
    C = compliance(F, U)
    dC = chain_gradient(filt, compliance_sensitivity(ctx.fem, U, xbar, ctx.material))  # (n, m)
    mu, var, J = estimate_objective(C, ctx.weights)
    G_mu = dC.mean(axis=1)
    # d/dx of the unbiased variance: 2/(m-1) * (sum_j C_j dC_j - m * mu * G_mu)
    G_var = 2.0 / (m - 1) * (dC @ C - m * mu * G_mu)
    G = ctx.weights.c_mean * G_mu + ctx.weights.c_var * G_var
    Gt = scale_gradient(G, v_tilde) if v_tilde is not None else None
    return GradientEstimate(m, C, mu, var, J, G_mu, G_var, G, Gt)


def estimate_gradient(x, ctx, filt, m, rng, step, stream=STREAM_GRADIENT, first_sample=0, v_tilde=None):
    if m < 2:
        raise PreconditionError("two i.i.d. samples are needed for the gradient estimator")
    comps = sample_components(ctx.loads, rng, stream, step, range(first_sample, first_sample + m))
    return gradient_from_loads(x, ctx, filt, ctx.loads.to_vector(comps), v_tilde)


@dataclass(frozen=True)
class DesignEvaluation:
    J: float
    mu: float
    sigma: float
    m: int
    se_J: float
    se_mu: float

    def __iter__(self):
        return iter((self.J, self.mu, self.sigma))


def sample_compliances(xbar, ctx, m, rng, stream=STREAM_EVALUATION, step=0, method="subspace"):
    comps = sample_components(ctx.loads, rng, stream, step, range(m))
    if method == "subspace":
        S = ctx.compliance_matrix(xbar)
        return np.einsum("ij,ik,kj->j", comps, S, comps)
    if method == "direct":
        out = np.empty(m)
        for lo in range(0, m, 256):
            F = ctx.loads.to_vector(comps[:, lo:lo + 256])
            out[lo:lo + 256] = compliance(F, ctx.solve_loads(xbar, F))
        return out
    raise ParameterError(f"unknown evaluation method {method!r}")


def evaluate_design(xbar, ctx, m_eval=10_000, rng=None, step=0, method="subspace"):
    """Large-sample estimates of J, mean and std of compliance for a physical design."""
    rng = rng if rng is not None else RngStream(0)
    C = sample_compliances(xbar, ctx, m_eval, rng, STREAM_EVALUATION, step, method)
    mu, var, J = estimate_objective(C, ctx.weights) if m_eval >= 2 else (float(C[0]), 0.0, ctx.weights.c_mean * C[0])
    psi = ctx.weights.c_mean * C + ctx.weights.c_var * (C - mu) ** 2
    se_J = float(np.std(psi, ddof=1) / np.sqrt(m_eval)) if m_eval >= 2 else float("nan")
    se_mu = float(np.std(C, ddof=1) / np.sqrt(m_eval)) if m_eval >= 2 else float("nan")
    return DesignEvaluation(J, mu, float(np.sqrt(var)), m_eval, se_J, se_mu)
