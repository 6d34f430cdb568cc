"""Nested policy-gradient learning for adversarial team Markov games.

``vis_reg_pg`` is the adversary's inner loop: projected stochastic gradient
ascent on the visitation-regularized value ``r(x)^T lam - (nu/2)||lam||^2``.
``ispng`` is the outer loop: the adversary responds, then every team player
takes an independent projected REINFORCE step on its own policy.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import estimators as est
from . import exact_oracles as eo
from .errors import ConfigError, NumericalError
from .game_model import check_game
from .policy import PolicyProfile, check_policy, project_policy, uniform_policy, uniform_profile
from .sampler import sample_batch, stream

log = logging.getLogger("atmg")

# purpose tags folded into the stream coordinate t
_TEAM, _LAMBDA, _GRAD, _SELECT = 0, 1, 2, 3


def _coord(outer_t, purpose, epoch=0) -> int:
    return (int(outer_t) << 24) | (purpose << 20) | int(epoch)


@dataclass
class InnerConfig:
    nu: float = 0.05
    K: int = 100
    H: int = 30
    eta_y: float = 0.01
    zeta_y: float = 0.01
    T_y: int = 100
    eps_y: float = 1e-3
    u_mode: str = "oracle"
    stop_tol: float = 0.0  # stop early once the gradient-mapping norm is below this

    def validate(self, B=None) -> "InnerConfig":
        if self.nu < 0:
            raise ConfigError("inner.nu must be >= 0", "nu")
        if self.K < 1:
            raise ConfigError("inner.K must be >= 1", "K")
        if self.H < 1:
            raise ConfigError("inner.H must be >= 1", "H")
        if self.eta_y <= 0:
            raise ConfigError("inner.eta_y must be > 0", "eta_y")
        if self.T_y < 0:
            raise ConfigError("inner.T_y must be >= 0", "T_y")
        if self.u_mode not in ("oracle", "empirical"):
            raise ConfigError(f"inner.u_mode must be 'oracle' or 'empirical', got {self.u_mode!r}", "u_mode")
        if self.zeta_y < 0 or (B is not None and self.zeta_y > 1.0 / (2 * B)):
            raise ConfigError(f"inner.zeta_y={self.zeta_y} must lie in [0, 1/(2B)]", "zeta_y")
        return self


@dataclass
class OuterConfig:
    eta_x: float = 0.01
    T_x: int = 100
    M: int = 100
    zeta_x: float = 0.01
    eps: float = 0.05
    inner: InnerConfig = field(default_factory=InnerConfig)
    best_iterate: str = "gap"  # gap | random | grad_map
    warm_start: bool = False  # start each inner loop at the previous adversary policy

    def validate(self, spec=None) -> "OuterConfig":
        if self.eta_x <= 0:
            raise ConfigError("outer.eta_x must be > 0", "eta_x")
        if self.T_x < 1:
            raise ConfigError("outer.T_x must be >= 1", "T_x")
        if self.M < 1:
            raise ConfigError("outer.M must be >= 1", "M")
        if self.best_iterate not in ("gap", "random", "grad_map"):
            raise ConfigError(f"unknown best_iterate {self.best_iterate!r}", "best_iterate")
        if spec is not None:
            m = max(spec.team_action_sizes)
            if not (0 < self.zeta_x <= 1.0 / (2 * m)):
                raise ConfigError(f"outer.zeta_x={self.zeta_x} must lie in (0, 1/(2 max A_i)]", "zeta_x")
            self.inner.validate(spec.adversary_action_size)
            if self.inner.zeta_y <= 0:
                raise ConfigError("inner.zeta_y must be > 0 for sampled gradients", "zeta_y")
        else:
            self.inner.validate()
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        inner = out.pop("inner")
        return {"outer": out, "inner": inner}

    @classmethod
    def from_dict(cls, doc) -> "OuterConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object with 'outer' and 'inner'")
        for part in ("outer", "inner"):
            if part not in doc:
                raise ConfigError(f"missing config section {part!r}", part)
        inner = _build(InnerConfig, doc["inner"], "inner", optional={"u_mode", "stop_tol"})
        outer = _build(OuterConfig, doc["outer"], "outer", optional={"best_iterate", "warm_start", "inner"})
        outer.inner = inner
        return outer


def _build(klass, doc, section, optional):
    names = {f.name for f in fields(klass)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown field {section}.{sorted(unknown)[0]}", sorted(unknown)[0])
    for name in names - optional:
        if name not in doc:
            raise ConfigError(f"missing field {section}.{name}", name)
    kwargs = {k: v for k, v in doc.items() if k != "inner"}
    try:
        return klass(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


# ---------------------------------------------------------------------------
# inner loop


@dataclass(frozen=True)
class InnerResult:
    adversary: np.ndarray
    epochs: int
    value_est: float
    grad_map_norm: float


def vis_reg_pg(spec, x, inner: InnerConfig, seed, outer_t=0, exact=False, y0=None, provider=None) -> InnerResult:
    """Adversary's projected ascent on the visitation-regularized value.

    Each epoch draws ``K`` trajectories of length ``H`` to estimate the
    visitation measure, forms the utility ``r(x) - nu * lam_hat``, estimates
    its policy gradient from a second independent batch, and takes a step
    projected onto the ``zeta_y``-truncated simplex. ``exact=True`` replaces
    both estimates by exact gradients of the regularized value.
    """
    S, B = spec.num_states, spec.adversary_action_size
    x = tuple(x)
    if B == 1:
        y = np.ones((S, 1))
        return InnerResult(y, 0, eo.regularized_value(spec, PolicyProfile(x, y), inner.nu), 0.0)
    y = uniform_policy(S, B) if y0 is None else project_policy(y0, inner.zeta_y)
    if provider is None:
        provider = est.RewardVectorProvider(spec, inner.u_mode)
    g = spec.discount
    value_est = float("nan")
    norm = float("inf")
    epochs = 0
    for e in range(inner.T_y):
        profile = PolicyProfile(x, y)
        if exact:
            grad = eo.exact_adversary_gradient(spec, profile, inner.nu)
        else:
            lb = sample_batch(spec, profile, inner.K, seed, t=_coord(outer_t, _LAMBDA, e), H=inner.H)
            provider.update(lb)
            lam_hat = est.visitation_batch(lb, g, S, B)
            r_hat = provider.current(x)
            u = r_hat - inner.nu * lam_hat
            gb = sample_batch(spec, profile, inner.K, seed, t=_coord(outer_t, _GRAD, e), H=inner.H)
            grad = est.adversary_gradient_samples(gb, y, u, g).mean(axis=0)
            value_est = float(np.sum(r_hat * lam_hat) - 0.5 * inner.nu * np.sum(lam_hat**2))
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite adversary gradient at epoch {e}")
        y_new = project_policy(y + inner.eta_y * grad, inner.zeta_y)
        norm = float(np.linalg.norm(y_new - y) / inner.eta_y)
        y = y_new
        epochs = e + 1
        if norm <= inner.stop_tol:
            break
    if exact:
        value_est = eo.regularized_value(spec, PolicyProfile(x, y), inner.nu)
    return InnerResult(y, epochs, value_est, norm)


# ---------------------------------------------------------------------------
# outer loop


RUNLOG_COLUMNS = ("iter", "inner_epochs", "value_est", "nash_gap", "wall_ms", "seed")


@dataclass
class RunLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(tuple(row[c] for c in RUNLOG_COLUMNS))

    def column(self, name) -> np.ndarray:
        k = RUNLOG_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RUNLOG_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), repr(float(r[4])), r[5]])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        out = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                out.rows.append(
                    (
                        int(row["iter"]),
                        int(row["inner_epochs"]),
                        float(row["value_est"]),
                        float(row["nash_gap"]),
                        float(row["wall_ms"]),
                        int(row["seed"]),
                    )
                )
        return out


@dataclass
class ISPNGResult:
    team: tuple
    adversary: np.ndarray
    run_log: RunLog
    t_star: int
    history: list  # (x^(t), y^(t+1)) for t = 1..T


def team_step(x_i, grad_i, eta_x, zeta_x):
    """One player's update; it reads nothing but its own policy and gradient estimate."""
    return project_policy(x_i - eta_x * grad_i, zeta_x)


def ispng(spec, outer: OuterConfig, seed, exact=False, evaluate=True, workers=1, record_time=True) -> ISPNGResult:
    """Independent stochastic policy-nested gradient.

    Iteration ``t`` pairs ``x^(t)`` with the inner response ``y^(t+1)``; the
    returned pair is chosen by ``outer.best_iterate``: ``"gap"`` takes the
    smallest exact Nash gap, ``"random"`` a uniformly random iterate and
    ``"grad_map"`` the smallest team gradient-mapping norm.
    """
    check_game(spec)
    outer.validate(spec)
    if outer.best_iterate == "gap" and not evaluate:
        raise ConfigError("best_iterate='gap' needs evaluate=True", "best_iterate")
    inner = outer.inner
    n = spec.n_team
    provider = est.RewardVectorProvider(spec, inner.u_mode)
    x = tuple(project_policy(p, outer.zeta_x) for p in uniform_profile(spec).team)
    res = vis_reg_pg(spec, x, inner, seed, 0, exact, None, provider)
    y = res.adversary
    run_log = RunLog()
    history = []
    map_norms = []
    for t in range(1, outer.T_x + 1):
        tic = time.perf_counter()
        profile = PolicyProfile(x, y)
        if exact:
            grads = eo.exact_team_gradients(spec, profile)
        else:
            batch = sample_batch(spec, profile, outer.M, seed, t=_coord(t, _TEAM), H=None, workers=workers)
            grads = [est.reinforce_from_batch(batch, x[i], i, n).estimate for i in range(n)]
        x_new = tuple(team_step(x[i], grads[i], outer.eta_x, outer.zeta_x) for i in range(n))
        if t > 1:
            map_norms.append(math.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(x, x_new))) / outer.eta_x)
        x = x_new
        res = vis_reg_pg(spec, x, inner, seed, t, exact, y if outer.warm_start else None, provider)
        y = res.adversary
        gap = eo.nash_gap(spec, PolicyProfile(x, y)) if evaluate else float("nan")
        wall = (time.perf_counter() - tic) * 1e3 if record_time else 0.0
        run_log.append(iter=t, inner_epochs=res.epochs, value_est=res.value_est, nash_gap=gap, wall_ms=wall, seed=seed)
        history.append((x, y))
    if outer.best_iterate == "gap":
        k = int(np.argmin(run_log.column("nash_gap")))
    elif outer.best_iterate == "random":
        k = int(stream(seed, _coord(outer.T_x + 1, _SELECT), 0).integers(outer.T_x))
    else:
        # the mapping at x^(T) needs one more team estimate
        profile = PolicyProfile(x, y)
        if exact:
            grads = eo.exact_team_gradients(spec, profile)
        else:
            batch = sample_batch(spec, profile, outer.M, seed, t=_coord(outer.T_x + 1, _TEAM), H=None)
            grads = [est.reinforce_from_batch(batch, x[i], i, n).estimate for i in range(n)]
        last = tuple(team_step(x[i], grads[i], outer.eta_x, outer.zeta_x) for i in range(n))
        map_norms.append(math.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(x, last))) / outer.eta_x)
        k = int(np.argmin(map_norms))
    x_star, y_star = history[k]
    return ISPNGResult(x_star, y_star, run_log, k + 1, history)


# ---------------------------------------------------------------------------
# evaluation and tuning


def evaluate(spec, profile: PolicyProfile) -> eo.Evaluation:
    """Exact Nash gap together with every player's best-response gain."""
    return eo.deviation_gains(spec, profile)


def tuning_formulas(D_m, n, S, sigma, gamma, rho_min, eps) -> dict:
    """Raw outer/inner tuning values as closed-form expressions (no rounding or clamping)."""
    q = 1.0 - gamma
    out = {
        "T": 1061683200 * D_m**5 * n**0.5 * S**4.5 * sigma**6 / (q**24 * rho_min**2 * eps**5),
        "eta_x": rho_min**2 * q**22 * eps**3 / (33177600 * D_m**3 * n**0.5 * S**4.5 * sigma**6),
        "zeta_x": q**3 * eps / (6 * D_m * S * sigma**1.5),
        "M": 2034 * D_m**3 * S * sigma**3.5 / (q**10 * rho_min**4 * eps**3)
        * max(q**4 * rho_min**4 * sigma / S, 4.5),
        "nu": q**4 * eps / (48 * D_m * S * sigma),
        # leading term only; logarithmic factors are not specified
        "T_y": D_m**5 * S**6 * sigma**9 / (q**21 * rho_min**4 * eps**5),
        "eta_y": q**28 * rho_min**4 * eps**4 / (978447237120 * D_m**4 * S**5 * sigma**8),
        "zeta_y": q**15 * rho_min**2 * eps**3 / (18432 * D_m**2 * S**3.5 * sigma**6),
        "K": 19365101568 * D_m**4 * S**7 * sigma**12 / (q**36 * rho_min**4 * eps**6),
        "H": 2.0 / q * math.log(2293235712 * D_m**4 * S**4 * sigma**6 / (q**22 * rho_min**2 * eps**4)),
    }
    return out


@dataclass
class TuningResult:
    outer: OuterConfig
    raw: dict
    warnings: list

    def to_dict(self) -> dict:
        return {"raw": dict(self.raw), "config": self.outer.to_dict(), "warnings": list(self.warnings)}


def _int_or_huge(v):
    return int(math.ceil(v)) if math.isfinite(v) and v < 2**62 else 2**62


def paper_tuning(spec, eps, budget=None) -> TuningResult:
    """Evaluate the outer/inner tuning for target accuracy ``eps``.

    Truncation levels above ``1/(2m)`` are clamped with a warning, as is a
    horizon ``T`` beyond ``budget`` (when given).
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    consts = eo.paper_constants(spec)
    raw = tuning_formulas(
        consts.D_m, spec.n_team, spec.num_states, spec.num_params, spec.discount,
        float(spec.initial_dist.min()), eps,
    )
    warnings = []
    zx_max = 1.0 / (2 * max(spec.team_action_sizes))
    zy_max = 1.0 / (2 * spec.adversary_action_size)
    zeta_x, zeta_y = raw["zeta_x"], raw["zeta_y"]
    if zeta_x > zx_max:
        warnings.append(f"zeta_x={zeta_x:.6g} exceeds 1/(2m)={zx_max:.6g}; clamped")
        zeta_x = zx_max
    if zeta_y > zy_max:
        warnings.append(f"zeta_y={zeta_y:.6g} exceeds 1/(2m)={zy_max:.6g}; clamped")
        zeta_y = zy_max
    if budget is not None and raw["T"] > budget:
        warnings.append(f"T={raw['T']:.6g} exceeds the budget {budget:.6g}")
    for w in warnings:
        log.warning(w)
    nu = raw["nu"]
    inner = InnerConfig(
        nu=nu,
        K=_int_or_huge(raw["K"]),
        H=max(1, _int_or_huge(raw["H"])),
        eta_y=raw["eta_y"],
        zeta_y=zeta_y,
        T_y=_int_or_huge(raw["T_y"]),
        eps_y=nu * eps**2,
    )
    outer = OuterConfig(
        eta_x=raw["eta_x"],
        T_x=_int_or_huge(raw["T"]),
        M=_int_or_huge(raw["M"]),
        zeta_x=zeta_x,
        eps=eps,
        inner=inner,
    )
    return TuningResult(outer, raw, warnings)


# ---------------------------------------------------------------------------
# estimator-style wrappers


class VisRegPG(BaseEstimator):
    """Adversary inner loop as an estimator; ``fit(game, team=x)`` sets ``adversary_policy_``."""

    def __init__(self, nu=0.05, K=100, H=30, eta_y=0.01, zeta_y=0.01, T_y=100, eps_y=1e-3,
                 u_mode="oracle", stop_tol=0.0, exact=False, seed=0):
        self.nu = nu
        self.K = K
        self.H = H
        self.eta_y = eta_y
        self.zeta_y = zeta_y
        self.T_y = T_y
        self.eps_y = eps_y
        self.u_mode = u_mode
        self.stop_tol = stop_tol
        self.exact = exact
        self.seed = seed

    def _config(self) -> InnerConfig:
        return InnerConfig(self.nu, self.K, self.H, self.eta_y, self.zeta_y, self.T_y, self.eps_y,
                           self.u_mode, self.stop_tol)

    def fit(self, game, team=None):
        check_game(game)
        cfg = self._config().validate(game.adversary_action_size)
        if team is None:
            team = uniform_profile(game).team
        team = tuple(check_policy(x, game.num_states, a, name=f"team[{i}]")
                     for i, (x, a) in enumerate(zip(team, game.team_action_sizes)))
        res = vis_reg_pg(game, team, cfg, self.seed, exact=self.exact)
        self.adversary_policy_ = res.adversary
        self.n_epochs_ = res.epochs
        self.value_ = res.value_est
        return self

    def predict(self, game, team):
        """Regularized value of the fitted adversary policy against ``team``."""
        return eo.regularized_value(game, PolicyProfile(tuple(team), self.adversary_policy_), self.nu)


class ISPNG(BaseEstimator):
    """Team learner as an estimator; ``fit(game)`` sets ``team_policy_`` and ``adversary_policy_``."""

    def __init__(self, eta_x=0.01, T_x=100, M=100, zeta_x=0.01, eps=0.05, nu=0.05, K=100, H=30,
                 eta_y=0.01, zeta_y=0.01, T_y=100, eps_y=1e-3, u_mode="oracle", best_iterate="gap",
                 warm_start=False, exact=False, evaluate=True, seed=0):
        self.eta_x = eta_x
        self.T_x = T_x
        self.M = M
        self.zeta_x = zeta_x
        self.eps = eps
        self.nu = nu
        self.K = K
        self.H = H
        self.eta_y = eta_y
        self.zeta_y = zeta_y
        self.T_y = T_y
        self.eps_y = eps_y
        self.u_mode = u_mode
        self.best_iterate = best_iterate
        self.warm_start = warm_start
        self.exact = exact
        self.evaluate = evaluate
        self.seed = seed

    def _config(self) -> OuterConfig:
        inner = InnerConfig(self.nu, self.K, self.H, self.eta_y, self.zeta_y, self.T_y, self.eps_y, self.u_mode)
        return OuterConfig(self.eta_x, self.T_x, self.M, self.zeta_x, self.eps, inner, self.best_iterate,
                           self.warm_start)

    def fit(self, game):
        res = ispng(game, self._config(), self.seed, exact=self.exact, evaluate=self.evaluate)
        self.team_policy_ = res.team
        self.adversary_policy_ = res.adversary
        self.run_log_ = res.run_log
        self.t_star_ = res.t_star
        return self

    def profile(self) -> PolicyProfile:
        return PolicyProfile(self.team_policy_, self.adversary_policy_)

    def score(self, game):
        """Negative Nash gap of the fitted profile (higher is better)."""
        return -eo.nash_gap(game, self.profile())
