"""Mini-batch stochastic projected gradient descent with an inexact oracle.

Targets constrained problems whose gradient is only Hölder continuous
(``||grad(z) - grad(z')|| <= l_p ||z - z'||^p``). Stationarity is measured by
the gradient mapping ``(z - Proj(z - eta g)) / eta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError
from .sampler import stream


@dataclass(frozen=True)
class SmoothnessSpec:
    p: float
    lp: float
    delta: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"Hölder exponent must lie in (0, 1], got {self.p}")
        if self.lp <= 0:
            raise ValueError("Hölder constant must be > 0")
        if self.p < 1.0 and self.delta <= 0:
            raise ValueError("delta must be > 0 when p < 1")

    @property
    def l_prime(self) -> float:
        """Quadratic surrogate constant ``l_p^(2/(1+p)) / delta^((1-p)/(1+p))``."""
        if self.p == 1.0:
            return self.lp
        return self.lp ** (2.0 / (1.0 + self.p)) / self.delta ** ((1.0 - self.p) / (1.0 + self.p))


@dataclass(frozen=True)
class OracleSpec:
    """Stochastic first-order oracle.

    ``grad(z, rng, M)`` returns the mean of ``M`` stochastic gradients at ``z``.
    ``value(z)``, when given, is used only for the trace.
    """

    grad: Callable
    theta: float = 0.0
    sigma2: float = 0.0
    batch: int = 1
    value: Optional[Callable] = None


@dataclass(frozen=True)
class Schedule:
    eta: float
    T: int
    delta: float
    M: int
    theta_ok: bool = True


def box_projector(lo, hi):
    def proj(z):
        return np.clip(z, lo, hi)

    return proj


def gradient_mapping(z, g, eta, projector):
    z = np.asarray(z, dtype=np.float64)
    return (z - projector(z - eta * np.asarray(g))) / eta


def step(z, grad, eta, projector):
    """``Proj(z - eta * g)``; ``grad`` is a vector or a callable of ``z``."""
    if eta <= 0:
        raise ValueError("step size must be > 0")
    g = grad(z) if callable(grad) else grad
    return projector(np.asarray(z, dtype=np.float64) - eta * np.asarray(g))


def schedule_delta(p, lp, eps) -> float:
    """Surrogate slack that makes ``1/(2 l')`` equal the schedule's step size."""
    if p == 1.0:
        return 0.0
    return (eps / (8.0 * lp ** (1.0 / (1.0 + p)))) ** ((1.0 + p) / p)


def paper_schedule(p, lp, eps, sigma2=0.0, phi_gap=1.0, theta=0.0, delta=None) -> Schedule:
    """Step size, horizon, slack and batch size targeting ``||r_eta|| <= eps``."""
    if not (0.0 < p <= 1.0):
        raise ValueError("p must lie in (0, 1]")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    eta = (eps ** (1.0 - p) / (2.0 ** (3.0 - 2.0 * p) * lp)) ** (1.0 / p)
    T = math.ceil(8.0 ** ((1.0 + p) / p) * lp ** (1.0 / p) * phi_gap / eps ** ((1.0 + p) / p))
    M = max(1, math.ceil(9.0 * sigma2 / (2.0 * eps**2)))
    if delta is None:
        delta = schedule_delta(p, lp, eps)
    return Schedule(eta, T, delta, M, theta <= eps / 8.0)


def certificate_translate(eps, eta, lp, p, theta) -> float:
    """Linearized-deviation bound at the projected point given ``||r_eta|| <= eps``.

    Optimality of the projection leaves ``-g - r_eta`` in the normal cone at
    ``z+``; swapping ``g`` for the true gradient at ``z+`` costs ``theta`` plus
    the Hölder term over the step ``eta * eps``.
    """
    if min(eps, eta, lp, theta) < 0:
        raise ValueError("inputs must be nonnegative")
    return theta + eps + lp * (eta * eps) ** p


def averaged_mapping_bound(p, lp, phi_gap, delta, T, sigma2, M, theta) -> float:
    """Bound on the average of ``E||r_eta||^2`` over ``T`` iterations at ``eta = 1/(2 l')``."""
    a = lp ** (2.0 / (1.0 + p))
    return (
        8.0 * a * phi_gap / (delta ** ((1.0 - p) / (1.0 + p)) * T)
        + 8.0 * sigma2 / M
        + 8.0 * a * delta ** (2.0 * p / (1.0 + p))
        + 4.0 * theta**2
    )


def translated_deviation_bound(p, lp, eps) -> float:
    return ((8.0 ** (1.0 - p) / lp) ** (2.0 / p) + 9.0) * eps


def minibatch_step_bound(eta, sigma2, M) -> float:
    """Expected squared distance between the stochastic and inexact-oracle steps."""
    return eta**2 * sigma2 / M


def holder_remainder_bound(lp, p, dist):
    return lp / (1.0 + p) * np.asarray(dist) ** (1.0 + p)


def quadratic_majorant(smooth: SmoothnessSpec, dist):
    return smooth.l_prime / 2.0 * np.asarray(dist) ** 2 + smooth.delta


@dataclass(frozen=True)
class Certificate:
    t_star: int
    grad_map_norm: float
    deviation_bound: float


@dataclass
class PGDResult:
    iterates: np.ndarray
    trace: list = field(default_factory=list)  # (t, objective, grad_map_norm, stepsize)
    certificate: Optional[Certificate] = None


def run(oracle: OracleSpec, projector, z0, schedule: Schedule, seed, lp=1.0, p=1.0,
        selection="resample", max_iter=None, stop_tol=None) -> PGDResult:
    """Projected stochastic gradient descent for ``schedule.T`` steps.

    Iteration ``t`` draws its batch from stream ``(seed, t, 0)``. The returned
    point ``t*`` is either the iterate with the smallest gradient-mapping norm
    re-estimated on a fresh batch from stream ``(seed, t, 1)``
    (``selection="resample"``) or a uniformly random iterate
    (``selection="random"``). ``max_iter`` caps the horizon; ``stop_tol``
    stops once the re-estimated norm falls below it.
    """
    if selection not in ("resample", "random"):
        raise ValueError(f"unknown selection rule {selection!r}")
    eta, M = schedule.eta, schedule.M
    T = schedule.T if max_iter is None else min(schedule.T, int(max_iter))
    z = projector(np.asarray(z0, dtype=np.float64))
    iterates = [z]
    trace = []
    norms = []
    for t in range(T):
        g = np.asarray(oracle.grad(z, stream(seed, t, 0), M))
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {t}")
        z_next = projector(z - eta * g)
        if selection == "resample":
            g_fresh = np.asarray(oracle.grad(z, stream(seed, t, 1), M))
            norms.append(float(np.linalg.norm(gradient_mapping(z, g_fresh, eta, projector))))
        obj = float(oracle.value(z)) if oracle.value is not None else float("nan")
        trace.append((t, obj, float(np.linalg.norm((z - z_next) / eta)), eta))
        z = z_next
        iterates.append(z)
        if stop_tol is not None and norms and norms[-1] <= stop_tol:
            break
    if selection == "resample":
        t_star = int(np.argmin(norms))
        norm = norms[t_star]
    else:
        t_star = int(stream(seed, T, 2).integers(len(trace)))
        norm = trace[t_star][2]
    cert = Certificate(t_star, norm, certificate_translate(norm, eta, lp, p, oracle.theta))
    return PGDResult(np.array(iterates), trace, cert)


def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "objective_estimate", "grad_map_norm_estimate", "stepsize"])
        for row in trace:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def read_trace_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(int(a), float(b), float(c), float(d)) for a, b, c, d in r]


# ---------------------------------------------------------------------------
# test family


def power_objective(p):
    """``phi(z) = sum |z|^(1+p) / (1+p)``; its gradient is ``(p, 2^(1-p))``-Hölder."""

    def value(z):
        return float(np.sum(np.abs(z) ** (1.0 + p)) / (1.0 + p))

    def grad(z):
        return np.sign(z) * np.abs(z) ** p

    return value, grad, 2.0 ** (1.0 - p)


def noisy_oracle(grad, sigma=0.0, bias=0.0, value=None) -> OracleSpec:
    """Exact gradient plus a constant bias of norm ``bias`` plus Gaussian noise."""

    def g(z, rng, M):
        z = np.asarray(z, dtype=np.float64)
        out = np.asarray(grad(z), dtype=np.float64) + bias / math.sqrt(z.size)
        if sigma > 0:
            out = out + rng.normal(0.0, sigma / math.sqrt(z.size), size=(M, *z.shape)).mean(axis=0)
        return out

    return OracleSpec(g, theta=bias, sigma2=sigma**2, value=value)
