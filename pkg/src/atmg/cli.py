"""``atmg`` command line: generate games, train, evaluate, tune, bench and diagnose.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical abort.
Log verbosity comes from ``ATMG_LOG_LEVEL`` (error, warn, info, debug).
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import shlex
import sys
from pathlib import Path

import click
import numpy as np

from . import estimators as est
from . import exact_oracles as eo
from . import hidden_minmax as hm
from . import learners
from .errors import ConfigError, NumericalError
from .game_model import check_game, generate_random, read_game, write_game
from .policy import PolicyProfile, random_profile, read_profile, write_profile
from .sampler import stream

log = logging.getLogger("atmg")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("ATMG_LOG_LEVEL", "warn").lower()
    if name not in _LEVELS:
        raise click.UsageError(f"ATMG_LOG_LEVEL must be one of {sorted(_LEVELS)}, got {name!r}")
    log.setLevel(_LEVELS[name])
    if not log.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(h)


def _fail(code, msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as exc:
            _fail(4, f"numerical failure: {exc}")
        except ConfigError as exc:
            field = f" (field {exc.field!r})" if exc.field else ""
            _fail(3, f"invalid config{field}: {exc}")
        except (ValueError, FileNotFoundError) as exc:
            _fail(3, str(exc))

    return wrapper


def _config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _header(config_doc, seed) -> list:
    lines = [
        f"# command: {shlex.join(['atmg', *sys.argv[1:]])}",
        f"# config_hash: {_config_hash(config_doc)}",
        f"# seed: {seed}",
    ]
    for line in lines:
        log.info(line[2:])
    return lines


def _emit(doc):
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


def _int_list(text):
    try:
        out = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise click.BadParameter("need at least one team player")
    return out


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker cap for sampling; results do not depend on it.")
@click.pass_context
def main(ctx, threads):
    """Independent policy gradient for adversarial team Markov games."""
    _setup_logging()
    ctx.obj = {"threads": threads}


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--states", type=click.IntRange(min=1), required=True)
@click.option("--team-actions", required=True, help="Comma-separated action counts, one per team player.")
@click.option("--adv-actions", type=click.IntRange(min=1), required=True)
@click.option("--gamma", type=float, required=True)
@click.option("--sparsity", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def generate(seed, states, team_actions, adv_actions, gamma, sparsity, out):
    """Write a random validated game."""
    spec = generate_random(seed, states, _int_list(team_actions), adv_actions, gamma, sparsity)
    check_game(spec)
    write_game(spec, out)
    log.info("wrote %s", out)


def _load_config(path) -> tuple:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg} at line {exc.lineno}") from exc
    return learners.OuterConfig.from_dict(doc), doc


@main.command()
@click.option("--game", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--exact-oracles", is_flag=True, help="Use exact gradients instead of sampled estimates.")
@click.option("--no-evaluate", is_flag=True, help="Skip the per-iteration exact Nash gap.")
@click.option("--record-time", is_flag=True, help="Fill wall_ms with measured times (breaks byte-identical reruns).")
@click.pass_context
@_guard
def train(ctx, game, config_path, seed, out_dir, exact_oracles, no_evaluate, record_time):
    """Run the team learner and write run_log.csv, profile.json and train.log."""
    spec = read_game(game)
    outer, doc = _load_config(config_path)
    outer.validate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(doc, seed)
    res = learners.ispng(spec, outer, seed, exact=exact_oracles, evaluate=not no_evaluate,
                         workers=ctx.obj["threads"], record_time=record_time)
    res.run_log.to_csv(out / "run_log.csv")
    write_profile(PolicyProfile(res.team, res.adversary), out / "profile.json")
    gap = eo.nash_gap(spec, PolicyProfile(res.team, res.adversary))
    lines = [*header, f"t_star: {res.t_star}", f"nash_gap: {gap!r}"]
    if gap > outer.eps:
        msg = f"target eps={outer.eps} not met (gap {gap:.6g})"
        log.warning(msg)
        lines.append(f"warning: {msg}")
    (out / "train.log").write_text("\n".join(lines) + "\n")
    _emit({"t_star": res.t_star, "nash_gap": gap, "run_log": str(out / "run_log.csv"),
           "profile": str(out / "profile.json")})


@main.command()
@click.option("--game", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--profile", "profile_path", type=click.Path(exists=True, dir_okay=False), required=True)
@_guard
def evaluate(game, profile_path):
    """Print exact Nash gap and deviation gains as JSON."""
    spec = read_game(game)
    ev = learners.evaluate(spec, read_profile(profile_path, spec))
    _emit({"nash_gap": ev.nash_gap, "team_gains": list(ev.team_gains),
           "adversary_gain": ev.adversary_gain, "value": ev.value})


@main.command()
@click.option("--game", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--epsilon", type=float, required=True)
@click.option("--budget", type=float, default=None, help="Warn when the outer horizon exceeds this.")
@_guard
def tune(game, epsilon, budget):
    """Print the closed-form tuning for accuracy EPSILON as JSON."""
    spec = read_game(game)
    res = learners.paper_tuning(spec, epsilon, budget)
    _emit(res.to_dict())


@main.command()
@click.option("--problem", type=click.Choice(sorted(hm.PROBLEMS)), required=True)
@click.option("--eps", type=float, default=0.05, show_default=True)
@click.option("--sigma", type=float, default=0.0, show_default=True, help="Gradient noise level.")
@click.option("--x0", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Trace CSV.")
@_guard
def bench(problem, eps, sigma, x0, seed, out):
    """Run the max-oracle min-max solver on a library problem."""
    _header({"problem": problem, "eps": eps, "sigma": sigma, "x0": x0}, seed)
    prob = hm.get_problem(problem, sigma)
    sch = hm.default_schedule(prob, eps)
    res = hm.sgdmax(prob, np.full(prob.X.lo.size, x0), sch, seed)
    hm.write_trace_csv(res, out)
    cert = res.certificate
    _emit({"x": cert.x.tolist(), "y": cert.y.tolist(), "x_deviation": cert.x_deviation,
           "y_deviation": cert.y_deviation, "t_star": res.t_star, "certified": cert.value <= eps,
           "trace": out})


@main.command()
@click.option("--game", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--suite", type=click.Choice(["estimators"]), default="estimators", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--profile", "profile_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Profile to test at; defaults to a random interior one.")
@click.option("--K", "K", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--H", "H", type=click.IntRange(min=1), default=30, show_default=True)
@click.option("--nu", type=float, default=0.05, show_default=True)
@click.option("--M", "M", type=click.IntRange(min=1), default=2000, show_default=True)
@click.option("--reps", type=click.IntRange(min=2), default=20, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="diagnostics.csv", show_default=True)
@_guard
def diagnose(game, suite, seed, profile_path, K, H, nu, M, reps, out):
    """Check estimator statistics against their bounds and write a pass/fail CSV."""
    spec = read_game(game)
    _header({"suite": suite, "K": K, "H": H, "nu": nu, "M": M, "reps": reps}, seed)
    if profile_path:
        profile = read_profile(profile_path, spec)
    else:
        profile = random_profile(spec, stream(seed, 0, 0), zeta=0.05)
    rows = est.run_diagnostics(spec, profile, seed, K=K, H=H, nu=nu, M=M, reps=reps)
    est.write_diagnostics_csv(rows, out)
    _emit({"csv": out, "all_pass": all(r.passed for r in rows),
           "failed": [r.quantity for r in rows if not r.passed]})


if __name__ == "__main__":  # pragma: no cover
    main()
