"""Min-max solver for objectives that are strongly concave after a change of variables.

A problem ``min_x max_y f(x, y)`` is hidden strongly concave when an
invertible map ``u = c(y; x)`` turns ``f(x, .)`` into a ``nu``-strongly
concave function ``H(x, u)`` on ``U(x) = c(Y; x)``. Then the maximizer
``u*(x)`` is unique and 1/2-Hölder in ``x``, ``Phi(x) = max_y f(x, y)`` has a
Hölder gradient, and gradient descent on ``Phi`` driven by an approximate
max-oracle (``sgdmax``) reaches an approximate saddle point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from . import exact_oracles as eo
from .errors import NumericalError
from .policy import PolicyProfile
from .sampler import stream


def _arr(z):
    return np.atleast_1d(np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def make(cls, lo, hi, dim=1):
        return cls(np.full(dim, float(lo)) if np.ndim(lo) == 0 else _arr(lo),
                   np.full(dim, float(hi)) if np.ndim(hi) == 0 else _arr(hi))

    def project(self, z):
        return np.clip(_arr(z), self.lo, self.hi)

    def max_linear(self, g, z) -> float:
        """``max_{z' in box} g . (z' - z)``."""
        g, z = _arr(g), _arr(z)
        return float(np.sum(np.maximum(g * (self.lo - z), g * (self.hi - z))))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def sample(self, rng, k):
        return rng.uniform(self.lo, self.hi, size=(k, self.lo.size))


@dataclass
class HiddenConcaveProblem:
    """Objective, change of variables and regularity data of a hidden strongly concave problem.

    ``c(y, x)`` and ``c_inv(u, x)`` map between the original and hidden
    maximization variables. ``mu_c`` lower-bounds how much ``c`` expands
    distances in ``y``; it sets the curvature seen by gradient ascent in
    ``y``. ``y_star`` is an optional closed-form maximizer used only for
    cross-checks.
    """

    name: str
    f: Callable
    grad_x: Callable
    grad_y: Callable
    c: Callable
    c_inv: Callable
    H: Callable
    X: Box
    Y: Box
    nu: float
    L_c: float
    L_c_inv: float
    L_H: float
    ell_H: float
    L: float
    ell: float
    diam_U: float
    mu_c: float = 1.0
    sigma: float = 0.0
    y_star: Optional[Callable] = None

    @property
    def diam_X(self) -> float:
        return self.X.diameter

    def stochastic_grad(self, which, x, y, rng, M=1):
        """Mean of ``M`` noisy gradients; noise is Gaussian with total variance ``sigma^2``."""
        g = _arr(self.grad_x(x, y) if which == "x" else self.grad_y(x, y))
        if self.sigma > 0:
            g = g + rng.normal(0.0, self.sigma / math.sqrt(g.size), size=(M, g.size)).mean(axis=0)
        return g

    def phi(self, x) -> float:
        return float(self.f(x, inner_argmax(self, x)))

    def phi_gradient(self, x) -> np.ndarray:
        """Partial x-gradient at the exact inner maximizer."""
        return _arr(self.grad_x(x, inner_argmax(self, x)))

    def u_star(self, x) -> np.ndarray:
        return _arr(self.c(inner_argmax(self, x), x))


def check_problem(problem: HiddenConcaveProblem, k=50, seed=0, tol=1e-10) -> dict:
    """Largest round-trip and reformulation errors over ``k`` sampled pairs."""
    rng = stream(seed, 0, 0)
    xs, ys = problem.X.sample(rng, k), problem.Y.sample(rng, k)
    rt_y = rt_u = hf = 0.0
    for x, y in zip(xs, ys):
        u = _arr(problem.c(y, x))
        rt_y = max(rt_y, float(np.max(np.abs(_arr(problem.c_inv(u, x)) - y))))
        rt_u = max(rt_u, float(np.max(np.abs(_arr(problem.c(problem.c_inv(u, x), x)) - u))))
        hf = max(hf, abs(float(problem.H(x, u)) - float(problem.f(x, y))))
    out = {"roundtrip_y": rt_y, "roundtrip_u": rt_u, "hidden_vs_f": hf}
    bad = {k: v for k, v in out.items() if v > tol}
    if bad:
        raise ValueError(f"problem {problem.name!r} violates its change of variables: {bad}")
    return out


# ---------------------------------------------------------------------------
# inner maximization


def inner_argmax(problem: HiddenConcaveProblem, x, tol=1e-12, max_iter=100_000) -> np.ndarray:
    """Deterministic high-precision maximizer of ``f(x, .)`` over ``Y``.

    L-BFGS-B from the box center, then projected gradient ascent at step
    ``1 / ell`` until the step falls below ``tol``. Hidden strong concavity
    makes every stationary point global, so the polish cannot get stuck.
    """
    x = _arr(x)
    y0 = 0.5 * (problem.Y.lo + problem.Y.hi)
    res = minimize(
        lambda y: -float(problem.f(x, y)),
        y0,
        jac=lambda y: -_arr(problem.grad_y(x, y)),
        method="L-BFGS-B",
        bounds=list(zip(problem.Y.lo, problem.Y.hi)),
        options={"ftol": 1e-15, "gtol": 1e-13},
    )
    y = problem.Y.project(res.x)
    eta = 1.0 / problem.ell
    for _ in range(max_iter):
        y_new = problem.Y.project(y + eta * _arr(problem.grad_y(x, y)))
        if np.linalg.norm(y_new - y) <= tol:
            return y_new
        y = y_new
    raise NumericalError(f"inner solve at x={x} did not reach step {tol}")


@dataclass(frozen=True)
class OracleSchedule:
    eta_y: float
    T_y: int


def oracle_schedule(problem: HiddenConcaveProblem, zeta, c_T=4.5) -> OracleSchedule:
    """Step size and iteration count for stochastic ascent to accuracy ``zeta``.

    ``eta_y = min(2/(9L), mu^2 nu zeta / (10 L sigma^2))``; the count is
    ``c_T (L/(mu^2 nu) + L sigma^2 / (mu^4 nu^2 zeta)) log(L Diam_Y / zeta)``
    where ``mu`` is the problem's ``mu_c`` and ``c_T`` was calibrated on the
    bundled test problems.
    """
    if zeta <= 0:
        raise ValueError("oracle accuracy must be > 0")
    L, nu, mu, s2 = problem.L, problem.nu, problem.mu_c, problem.sigma**2
    eta = 2.0 / (9.0 * L)
    if s2 > 0:
        eta = min(eta, mu**2 * nu * zeta / (10.0 * L * s2))
    rate = L / (mu**2 * nu) + (L * s2 / (mu**4 * nu**2 * zeta) if s2 > 0 else 0.0)
    T = math.ceil(c_T * rate * math.log(max(math.e, L * problem.Y.diameter / zeta)))
    return OracleSchedule(eta, T)


def max_oracle_sga(problem: HiddenConcaveProblem, x, zeta, seed, t=0, y0=None, schedule=None) -> np.ndarray:
    """Stochastic projected gradient ascent on ``f(x, .)`` targeting gap ``zeta``.

    All steps draw their noise, in order, from stream ``(seed, t, 0)``.
    """
    sch = schedule or oracle_schedule(problem, zeta)
    y = problem.Y.project(0.5 * (problem.Y.lo + problem.Y.hi) if y0 is None else y0)
    x = _arr(x)
    rng = stream(seed, t, 0) if problem.sigma > 0 else None
    for k in range(sch.T_y):
        g = problem.stochastic_grad("y", x, y, rng)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in max-oracle at step {k}")
        y = problem.Y.project(y + sch.eta_y * g)
    return y


def exact_max_oracle(problem, x, zeta, seed, t=0, y0=None):
    if problem.y_star is not None:
        return problem.Y.project(problem.y_star(_arr(x)))
    return inner_argmax(problem, x)


# ---------------------------------------------------------------------------
# outer loop


@dataclass(frozen=True)
class SaddleCertificate:
    x: np.ndarray
    y: np.ndarray
    x_deviation: float  # max_{x'} -grad_x f . (x' - x)
    y_deviation: float  # max_{y'}  grad_y f . (y' - y)

    @property
    def value(self) -> float:
        return max(self.x_deviation, self.y_deviation)


def certificate(problem: HiddenConcaveProblem, x, y) -> SaddleCertificate:
    x, y = _arr(x), _arr(y)
    dx = problem.X.max_linear(-_arr(problem.grad_x(x, y)), x)
    dy = problem.Y.max_linear(_arr(problem.grad_y(x, y)), y)
    return SaddleCertificate(x, y, max(dx, 0.0), max(dy, 0.0))


@dataclass(frozen=True)
class SGDMaxSchedule:
    eta_x: float
    T_x: int
    M: int
    zeta: float
    stop_tol: float = 0.0


def default_schedule(problem: HiddenConcaveProblem, eps, c_T=1.0, c_zeta=1.0, T_cap=20_000) -> SGDMaxSchedule:
    """Step ``1/(2 ell)``, ``T = c_T/(nu^2 eps^3)`` capped at ``T_cap``, oracle accuracy ``c_zeta nu eps^2 / ell^2``.

    The constants are not pinned down by the analysis; the defaults were
    calibrated on the bundled problems. Iteration stops early once the
    certificate at the current pair is below ``eps / 2``.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    nu, ell = problem.nu, problem.ell
    T = min(T_cap, max(1, math.ceil(c_T / (nu**2 * eps**3))))
    M = max(1, math.ceil(9.0 * problem.sigma**2 / (2.0 * eps**2)))
    return SGDMaxSchedule(1.0 / (2.0 * ell), T, M, c_zeta * nu * eps**2 / ell**2, eps / 2.0)


@dataclass
class SGDMaxResult:
    x: np.ndarray
    y: np.ndarray
    certificate: SaddleCertificate
    t_star: int
    trace: list = field(default_factory=list)  # (t, x, y, x_dev, y_dev)


def sgdmax(problem: HiddenConcaveProblem, x0, schedule: SGDMaxSchedule, seed, oracle=max_oracle_sga) -> SGDMaxResult:
    """Gradient descent on ``x`` with the inner variable supplied by ``oracle``.

    Iteration ``t`` sets ``y^(t) = oracle(x^(t-1))``, averages ``M``
    stochastic x-gradients at ``(x^(t-1), y^(t))`` and takes a projected step;
    a last oracle call answers ``x^(T)``. Pair ``t`` is ``(x^(t), y^(t+1))``
    and the returned one has the smallest exact certificate.
    """
    x = problem.X.project(x0)
    y = oracle(problem, x, schedule.zeta, seed, t=_oracle_coord(0))
    trace = []
    for t in range(1, schedule.T_x + 1):
        rng = stream(seed, _grad_coord(t), 0) if problem.sigma > 0 else None
        g = problem.stochastic_grad("x", x, y, rng, schedule.M)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite x-gradient at iteration {t}")
        x = problem.X.project(x - schedule.eta_x * g)
        y = oracle(problem, x, schedule.zeta, seed, t=_oracle_coord(t))
        cert = certificate(problem, x, y)
        trace.append((t, x.copy(), y.copy(), cert.x_deviation, cert.y_deviation))
        if cert.value <= schedule.stop_tol:
            break
    k = int(np.argmin([max(r[3], r[4]) for r in trace]))
    _, xs, ys, _, _ = trace[k]
    return SGDMaxResult(xs, ys, certificate(problem, xs, ys), trace[k][0], trace)


def _oracle_coord(t):
    return 2 * t


def _grad_coord(t):
    return 2 * t + 1


def write_trace_csv(result: SGDMaxResult, path) -> None:
    dx = result.trace[0][1].size if result.trace else 0
    dy = result.trace[0][2].size if result.trace else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *[f"x{k}" for k in range(dx)], *[f"y{k}" for k in range(dy)], "x_deviation", "y_deviation"])
        for t, x, y, a, b in result.trace:
            w.writerow([t, *map(repr, map(float, x)), *map(repr, map(float, y)), repr(a), repr(b)])


def read_trace_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        dx = sum(h.startswith("x") and h[1:].isdigit() for h in head)
        out = []
        for row in r:
            vals = [float(v) for v in row[1:]]
            out.append((int(row[0]), np.array(vals[:dx]), np.array(vals[dx:-2]), vals[-2], vals[-1]))
        return out


# ---------------------------------------------------------------------------
# regularity constants and checks


def l_star(problem: HiddenConcaveProblem) -> float:
    """Hölder constant of ``u*``: ``(ell_H sqrt(Diam_X) + sqrt(nu ((1+2 ell_H) L_c Diam_U + 2 L_c L_H))) / nu``."""
    p = problem
    root = math.sqrt(p.nu * (1.0 + 2.0 * p.ell_H) * p.L_c * p.diam_U + 2.0 * p.nu * p.L_c * p.L_H)
    return (2.0 * p.ell_H * math.sqrt(p.diam_X) + 2.0 * root) / (2.0 * p.nu)


def ell_half(problem: HiddenConcaveProblem) -> float:
    """Hölder constant of ``grad Phi``."""
    p = problem
    return ((1.0 + p.L_c_inv) * math.sqrt(p.diam_X) + p.L_c_inv * l_star(p)) * p.ell


def _pairs(problem, pairs, k, seed):
    if pairs is None:
        rng = stream(seed, 0, 1)
        pairs = list(zip(problem.X.sample(rng, k), problem.X.sample(rng, k)))
    return [(_arr(a), _arr(b)) for a, b in pairs]


def _holder_ratio(values, pairs, min_dist):
    best = 0.0
    for (a, b), (va, vb) in zip(pairs, values):
        d = float(np.linalg.norm(a - b))
        if d < min_dist:
            continue
        best = max(best, float(np.linalg.norm(va - vb)) / math.sqrt(d))
    return best


def hidden_holder_check(problem: HiddenConcaveProblem, pairs=None, k=200, seed=0, min_dist=1e-6) -> float:
    """Largest ``||u*(x) - u*(x')|| / ||x - x'||^(1/2)``; pairs closer than ``min_dist`` are skipped."""
    pairs = _pairs(problem, pairs, k, seed)
    vals = [(problem.u_star(a), problem.u_star(b)) for a, b in pairs]
    return _holder_ratio(vals, pairs, min_dist)


def gradient_holder_check(problem: HiddenConcaveProblem, pairs=None, k=200, seed=0, min_dist=1e-6) -> float:
    """Largest ``||grad Phi(x) - grad Phi(x')|| / ||x - x'||^(1/2)``."""
    pairs = _pairs(problem, pairs, k, seed)
    vals = [(problem.phi_gradient(a), problem.phi_gradient(b)) for a, b in pairs]
    return _holder_ratio(vals, pairs, min_dist)


# ---------------------------------------------------------------------------
# problem library


def quadratic_problem(sigma=0.0) -> HiddenConcaveProblem:
    """``f = 2xy - y^2`` on ``[-1, 1]^2``: ``y*(x) = x``, ``Phi = x^2``, saddle at the origin."""
    box = Box.make(-1.0, 1.0)
    # Hessian [[0, 2], [2, -2]] has spectral norm 1 + sqrt(5)
    return HiddenConcaveProblem(
        name="quadratic",
        f=lambda x, y: float(2 * _arr(x)[0] * _arr(y)[0] - _arr(y)[0] ** 2),
        grad_x=lambda x, y: 2 * _arr(y),
        grad_y=lambda x, y: 2 * _arr(x) - 2 * _arr(y),
        c=lambda y, x: _arr(y).copy(),
        c_inv=lambda u, x: _arr(u).copy(),
        H=lambda x, u: float(2 * _arr(x)[0] * _arr(u)[0] - _arr(u)[0] ** 2),
        X=box,
        Y=box,
        nu=2.0,
        L_c=0.0,
        L_c_inv=1.0,
        L_H=math.sqrt(20.0),
        ell_H=1.0 + math.sqrt(5.0),
        L=math.sqrt(20.0),
        ell=1.0 + math.sqrt(5.0),
        diam_U=2.0,
        sigma=sigma,
        y_star=lambda x: np.clip(_arr(x), -1.0, 1.0),
    )


def hidden_sine_problem(sigma=0.0, shift=0.1) -> HiddenConcaveProblem:
    """``f = sin(3x) u - u^2/2`` with ``u = y + shift*x`` on ``[-1, 1]^2``.

    ``u*(x) = clip(sin 3x, [-1 + shift x, 1 + shift x])``, so ``Phi`` is
    ``sin^2(3x)/2`` away from the clip and its minimizers are ``sin 3x = 0``.
    """
    a = shift
    box = Box.make(-1.0, 1.0)
    umax = 1.0 + a  # |u| bound on U(x)

    def u_of(x, y):
        return _arr(y)[0] + a * _arr(x)[0]

    def f(x, y):
        u = u_of(x, y)
        return float(math.sin(3 * _arr(x)[0]) * u - 0.5 * u * u)

    def grad_x(x, y):
        x0, u = _arr(x)[0], u_of(x, y)
        return np.array([3 * math.cos(3 * x0) * u + a * math.sin(3 * x0) - a * u])

    def grad_y(x, y):
        return np.array([math.sin(3 * _arr(x)[0]) - u_of(x, y)])

    # H bounds on U: |H_x| <= 3 umax, |H_u| <= 1 + umax; |H_xx| <= 9 umax, |H_xu| <= 3, H_uu = -1
    L_H = math.hypot(3 * umax, 1 + umax)
    ell_H = math.sqrt((9 * umax) ** 2 + 2 * 9 + 1)
    # f bounds: |f_x| <= 3 umax + a + a umax, |f_y| <= 1 + umax
    L = math.hypot(3 * umax + a + a * umax, 1 + umax)
    fxx = 9 * umax + 6 * a + a * a
    fxy = 3 + a
    ell = math.sqrt(fxx**2 + 2 * fxy**2 + 1)
    return HiddenConcaveProblem(
        name="hidden_sine",
        f=f,
        grad_x=grad_x,
        grad_y=grad_y,
        c=lambda y, x: _arr(y) + a * _arr(x),
        c_inv=lambda u, x: _arr(u) - a * _arr(x),
        H=lambda x, u: float(math.sin(3 * _arr(x)[0]) * _arr(u)[0] - 0.5 * _arr(u)[0] ** 2),
        X=box,
        Y=box,
        nu=1.0,
        L_c=a,
        L_c_inv=1.0,
        L_H=L_H,
        ell_H=ell_H,
        L=L,
        ell=ell,
        diam_U=2.0,
        sigma=sigma,
        y_star=lambda x: np.clip(np.sin(3 * _arr(x)) - a * _arr(x), -1.0, 1.0),
    )


PROBLEMS = {"quadratic": quadratic_problem, "hidden_sine": hidden_sine_problem}


def get_problem(name, sigma=0.0) -> HiddenConcaveProblem:
    try:
        return PROBLEMS[name](sigma=sigma)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------------------
# team games as hidden problems


@dataclass
class ATMGHiddenProblem:
    """Adversary's regularized value, viewed through its visitation measure.

    ``c(y; x)`` is the adversary's state-action visitation measure, its
    inverse normalizes each state row, and ``H(x, lam) = r(x)^T lam -
    (nu/2) ||lam||^2`` is ``nu``-strongly concave in ``lam``.
    """

    spec: object
    nu: float
    constants: eo.PaperConstants

    def f(self, team, y) -> float:
        return eo.regularized_value(self.spec, PolicyProfile(tuple(team), y), self.nu)

    def c(self, y, team) -> np.ndarray:
        return eo.exact_visitation(self.spec, PolicyProfile(tuple(team), y))[1]

    def c_inv(self, lam, team) -> np.ndarray:
        mass = lam.sum(axis=1, keepdims=True)
        # full-support initial distribution keeps every row mass >= rho(s) > 0
        assert np.all(mass > 0), "visitation row with zero mass"
        return lam / mass

    def H(self, team, lam) -> float:
        r = eo.adversary_reward(self.spec, tuple(team))
        return float(np.sum(r * lam) - 0.5 * self.nu * np.sum(lam**2))


def atmg_as_hidden_problem(spec, nu) -> ATMGHiddenProblem:
    if nu <= 0:
        raise ValueError("nu must be > 0")
    return ATMGHiddenProblem(spec, nu, eo.paper_constants(spec, nu))


# ---------------------------------------------------------------------------
# estimator-style wrapper

class SGDMAX(BaseEstimator):
    """``fit(problem)`` runs ``sgdmax`` and sets ``x_``, ``y_`` and ``certificate_``."""

    def __init__(self, eps=0.05, x0=0.5, eta_x=None, T_x=None, M=None, zeta=None, exact_oracle=False, seed=0):
        self.eps = eps
        self.x0 = x0
        self.eta_x = eta_x
        self.T_x = T_x
        self.M = M
        self.zeta = zeta
        self.exact_oracle = exact_oracle
        self.seed = seed

    def fit(self, problem):
        if isinstance(problem, str):
            problem = get_problem(problem)
        base = default_schedule(problem, self.eps)
        sch = SGDMaxSchedule(
            base.eta_x if self.eta_x is None else self.eta_x,
            base.T_x if self.T_x is None else self.T_x,
            base.M if self.M is None else self.M,
            base.zeta if self.zeta is None else self.zeta,
            base.stop_tol,
        )
        oracle = exact_max_oracle if self.exact_oracle else max_oracle_sga
        x0 = np.full(problem.X.lo.size, self.x0) if np.ndim(self.x0) == 0 else self.x0
        res = sgdmax(problem, x0, sch, self.seed, oracle=oracle)
        self.x_ = res.x
        self.y_ = res.y
        self.certificate_ = res.certificate
        self.trace_ = res.trace
        return self
