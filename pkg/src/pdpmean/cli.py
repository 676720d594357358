"""Config-driven experiment runner.

    pdpmean <subcommand> --config cfg.json [--seed N] [--threads N] [--zero-noise] [--assert] [--out DIR]

Exit status: 0 success, 1 invalid config, 2 pipeline error, 3 ``--assert`` check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .audit import (
    AuditConfig,
    diffusion_audit,
    estimate_epsilon_hat,
    laplace_count_mechanism,
    mc_ratio_tail,
    mc_standard_error,
    mc_tail,
    random_instance,
    ratio_bound,
    size_mechanism,
    two_stage_bound,
)
from .core import Dataset, NoiseSource
from .diffusion import effective_budget
from .errors import ConfigError, PDPError
from .mean import lower_bound, lower_bound_argmax, pdp_mean_bounded
from .unbounded import pdp_mean_unbounded

COMMANDS = ("lowerbound", "estimate-bounded", "estimate-unbounded", "sweep", "audit",
            "check-concentration")
MECHANISMS = ("laplace_count", "identical", "size", "diffused_rr")


@dataclass(frozen=True)
class BudgetProfile:
    """``uniform`` (``value``), ``list`` (``values``, one per record) or ``categorical``
    (i.i.d. draws from ``levels`` with ``probs``, uniform when omitted)."""

    kind: str = "uniform"
    value: float = 1.0
    values: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def validate(self, prefix: str = "budgets") -> None:
        if self.kind == "uniform":
            if not self.value > 0:
                raise ConfigError(f"{prefix}.value", "must be > 0")
        elif self.kind == "list":
            if not self.values or min(self.values) <= 0:
                raise ConfigError(f"{prefix}.values", "must be a nonempty list of positive budgets")
        elif self.kind == "categorical":
            if not self.levels or min(self.levels) <= 0:
                raise ConfigError(f"{prefix}.levels", "must be a nonempty list of positive budgets")
            if self.probs:
                if len(self.probs) != len(self.levels) or min(self.probs) < 0 \
                        or not math.isclose(sum(self.probs), 1.0, abs_tol=1e-9):
                    raise ConfigError(f"{prefix}.probs", "must be a distribution over levels")
        else:
            raise ConfigError(f"{prefix}.kind", "must be uniform, list or categorical")

    def support(self) -> tuple[float, float]:
        pool = {"uniform": (self.value,), "list": self.values, "categorical": self.levels}[self.kind]
        return min(pool), max(pool)

    def draw(self, n: int, rng: NoiseSource) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(n, float(self.value))
        if self.kind == "list":
            if len(self.values) != n:
                raise ConfigError("budgets.values", f"has {len(self.values)} entries, n is {n}")
            return np.asarray(self.values, dtype=float)
        return np.asarray(rng.choice(self.levels, n, p=list(self.probs) or None), dtype=float)


@dataclass(frozen=True)
class Scenario:
    """One audit case. ``laplace_count``/``identical`` use ``epsilon``; ``diffused_rr``
    uses ``bits``, ``rates`` and ``tau`` and is audited at every index."""

    name: str
    mechanism: str
    epsilon: float = 1.0
    bits: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()
    tau: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int | None = None
    mu: float = 0.0
    sigma: float = 1.0
    n: int = 1000
    budgets: BudgetProfile = field(default_factory=BudgetProfile)
    model: str = "bounded"
    eps_min: float | None = None
    eps_max: float | None = None
    beta: float = 0.1
    trials: int = 100
    output: str | None = None
    rate_mode: str = "capped"
    envelope: float = 50.0
    ns: tuple[int, ...] = ()
    epsilons: tuple[float, ...] = ()
    sigmas: tuple[float, ...] = ()
    audit_trials: int = 10**6
    bins: int = 10
    smoothing: float = 1.0
    slack: float = 0.05
    scenarios: tuple[Scenario, ...] = ()
    instances: int = 100
    mc_trials: int = 10**5
    t_points: int = 10

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        cfg = _build(cls, doc, "")
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def sha256(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def validate(self) -> None:
        if self.seed is not None and not (0 <= self.seed < 2**64):
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if not 0 < self.beta < 1:
            raise ConfigError("beta", f"must lie in (0, 1), got {self.beta}")
        if self.n < 2:
            raise ConfigError("n", "must be >= 2")
        if not self.sigma >= 0:
            raise ConfigError("sigma", "must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.model not in ("bounded", "unbounded"):
            raise ConfigError("model", "must be bounded or unbounded")
        if self.rate_mode not in ("uncapped", "capped"):
            raise ConfigError("rate_mode", "must be uncapped or capped")
        if not self.envelope > 0:
            raise ConfigError("envelope", "must be > 0")
        self.budgets.validate()
        for name in ("eps_min", "eps_max"):
            v = getattr(self, name)
            if v is not None and not 0 < v <= 1:
                raise ConfigError(name, "must lie in (0, 1]")
        if any(v < 2 for v in self.ns):
            raise ConfigError("ns", "every n must be >= 2")
        if any(not 0 < v <= 1 for v in self.epsilons):
            raise ConfigError("epsilons", "every budget must lie in (0, 1]")
        if any(not v >= 0 for v in self.sigmas):
            raise ConfigError("sigmas", "every sigma must be >= 0")
        if self.audit_trials < 1 or self.bins < 2 or self.smoothing < 0 or self.slack < 0:
            raise ConfigError("audit_trials", "audit settings need trials >= 1, bins >= 2, "
                                              "smoothing >= 0 and slack >= 0")
        for i, sc in enumerate(self.scenarios):
            if sc.mechanism not in MECHANISMS:
                raise ConfigError(f"scenarios[{i}].mechanism", f"must be one of {MECHANISMS}")
            if sc.mechanism == "diffused_rr" and (not sc.bits or len(sc.bits) != len(sc.rates)):
                raise ConfigError(f"scenarios[{i}].rates", "needs one rate per bit")
            if sc.mechanism in ("laplace_count", "identical") and not sc.epsilon > 0:
                raise ConfigError(f"scenarios[{i}].epsilon", "must be > 0")
        if self.instances < 1 or self.mc_trials < 1 or self.t_points < 1:
            raise ConfigError("instances", "concentration settings must be positive")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, doc: dict, prefix: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown key")
    kwargs = {}
    for name, value in doc.items():
        where = prefix + name
        kwargs[name] = _coerce(known[name], value, where)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None


_INT_FIELDS = {"seed", "n", "trials", "audit_trials", "bins", "instances", "mc_trials", "t_points"}
_FLOAT_FIELDS = {"mu", "sigma", "eps_min", "eps_max", "beta", "envelope", "smoothing", "slack",
                 "value", "epsilon", "tau"}
_STR_FIELDS = {"model", "output", "rate_mode", "kind", "name", "mechanism"}


def _coerce(f: dataclasses.Field, value: Any, where: str):
    name = f.name
    if name == "budgets":
        if not isinstance(value, dict):
            raise ConfigError(where, "must be an object")
        return _build(BudgetProfile, value, where + ".")
    if name == "scenarios":
        if not isinstance(value, list):
            raise ConfigError(where, "must be a list")
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ConfigError(f"{where}[{i}]", "must be an object")
            out.append(_build(Scenario, item, f"{where}[{i}]."))
        return tuple(out)
    if value is None:
        if name in ("seed", "eps_min", "eps_max", "output"):
            return None
        raise ConfigError(where, "must not be null")
    if name in _INT_FIELDS or name == "ns":
        items = value if name == "ns" else [value]
        if name == "ns" and not isinstance(value, list):
            raise ConfigError(where, "must be a list")
        for v in items:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(where, "must be an integer")
        return tuple(items) if name == "ns" else value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, "must be a number")
        return float(value)
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(where, "must be a string")
        return value
    # remaining fields are lists of numbers
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float))
                                          for v in value):
        raise ConfigError(where, "must be a list of numbers")
    return tuple(float(v) for v in value)


# -- runner ----------------------------------------------------------------------

@dataclass
class RunContext:
    config: ExperimentConfig
    command: str
    mode: str
    threads: int
    out: Path

    def rng(self, stream: int) -> NoiseSource:
        return NoiseSource(self.config.seed, stream, self.mode)

    def map(self, fn: Callable[[int], Any], count: int) -> list:
        if self.threads <= 1:
            return [fn(i) for i in range(count)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, range(count)))  # map preserves input order

    def provenance(self) -> str:
        return (f"# seed={self.config.seed} config_sha256={self.config.sha256()} "
                f"version={__version__} command={self.command} mode={self.mode}")

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        buf = io.StringIO()
        buf.write(self.provenance() + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path = self.out / name
        path.write_text(buf.getvalue(), encoding="utf-8")
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        doc = {"provenance": {"seed": self.config.seed, "config_sha256": self.config.sha256(),
                              "version": __version__, "command": self.command, "mode": self.mode},
               "config": self.config.to_dict()}
        doc.update(payload)
        path = self.out / name
        path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _summary(errors: np.ndarray, lb: float, envelope: float) -> dict:
    med = float(np.median(errors))
    return {
        "trials": int(errors.size),
        "median_abs_error": med,
        "q90_abs_error": float(np.quantile(errors, 0.9)),
        "mean_abs_error": float(np.mean(errors)),
        "lower_bound": lb,
        "ratio_to_lower_bound": med / lb if lb > 0 else None,
        "envelope": envelope,
        "within_envelope": bool(med <= envelope * lb),
    }


def _bounded_trial(ctx: RunContext, n: int, sigma: float, profile: BudgetProfile, stream: int):
    cfg = ctx.config
    rng = ctx.rng(stream)
    x = rng.normal(cfg.mu, sigma, n)
    eps = profile.draw(n, rng)
    rep = pdp_mean_bounded(Dataset(x, eps), eps, cfg.beta, rng, cfg.rate_mode)
    return rep, lower_bound(eps, sigma)


def cmd_lowerbound(ctx: RunContext) -> bool:
    cfg = ctx.config
    rows = []
    for i, n in enumerate(cfg.ns or (cfg.n,)):
        n = len(cfg.budgets.values) if cfg.budgets.kind == "list" else n
        eps = cfg.budgets.draw(n, ctx.rng(i))
        for sigma in cfg.sigmas or (cfg.sigma,):
            bound, k = lower_bound_argmax(eps, sigma)
            rows.append([n, sigma, k, bound])
    ctx.write_csv("lowerbound.csv", ["n", "sigma", "k_star", "bound"], rows)
    ctx.write_json("lowerbound.json", {"rows": len(rows)})
    return True


def cmd_estimate(ctx: RunContext, model: str) -> bool:
    cfg = ctx.config
    lo_sup, hi_sup = cfg.budgets.support()
    eps_min = cfg.eps_min if cfg.eps_min is not None else lo_sup
    eps_max = cfg.eps_max if cfg.eps_max is not None else hi_sup

    def trial(t: int):
        if model == "bounded":
            return _bounded_trial(ctx, cfg.n, cfg.sigma, cfg.budgets, t)
        rng = ctx.rng(t)
        x = rng.normal(cfg.mu, cfg.sigma, cfg.n)
        eps = cfg.budgets.draw(cfg.n, rng)
        rep = pdp_mean_unbounded(Dataset(x, eps, "unbounded"), eps_min, eps_max, cfg.beta, rng)
        return rep, lower_bound(eps, cfg.sigma)

    results = ctx.map(trial, cfg.trials)
    header = ["trial", "estimate", "abs_error", "range_lo", "range_hi", "b", "warnings"]
    if model == "unbounded":
        header += ["shrunk_size", "deleted"]
    rows = []
    for t, (rep, _) in enumerate(results):
        interval = rep.range_used
        row = [t, rep.estimate, abs(rep.estimate - cfg.mu), interval.lo, interval.hi,
               interval.bucket, ";".join(rep.warnings)]
        if model == "unbounded":
            row += [rep.trace["shrunk_size"], rep.trace["deleted"]]
        rows.append(row)
    errors = np.array([abs(rep.estimate - cfg.mu) for rep, _ in results])
    lb = float(np.median([b for _, b in results]))
    summary = _summary(errors, lb, cfg.envelope)
    name = f"estimate-{model}"
    ctx.write_csv(f"{name}.csv", header, rows)
    ctx.write_json(f"{name}.json", {"summary": summary})
    return summary["within_envelope"]


def cmd_sweep(ctx: RunContext) -> bool:
    cfg = ctx.config
    cells = [(n, e, s) for n in (cfg.ns or (cfg.n,))
             for e in (cfg.epsilons or (cfg.budgets.value,))
             for s in (cfg.sigmas or (cfg.sigma,))]
    rows, summaries = [], []
    for c, (n, e, s) in enumerate(cells):
        profile = BudgetProfile("uniform", e)
        results = ctx.map(lambda t: _bounded_trial(ctx, n, s, profile, c * cfg.trials + t), cfg.trials)
        errs = np.array([abs(rep.estimate - cfg.mu) for rep, _ in results])
        for t, (rep, _) in enumerate(results):
            rows.append([n, e, s, t, rep.estimate, errs[t]])
        summ = _summary(errs, lower_bound(np.full(n, e), s), cfg.envelope)
        summ.update(n=n, epsilon=e, sigma=s)
        summaries.append(summ)
    ctx.write_csv("sweep.csv", ["n", "epsilon", "sigma", "trial", "estimate", "abs_error"], rows)
    ctx.write_json("sweep.json", {"cells": summaries})
    return all(s["within_envelope"] for s in summaries)


def _default_scenarios() -> tuple[Scenario, ...]:
    return (Scenario("laplace_count_0.5", "laplace_count", epsilon=0.5),)


def cmd_audit(ctx: RunContext) -> bool:
    cfg = ctx.config
    acfg = AuditConfig(trials=cfg.audit_trials, bins=cfg.bins, smoothing=cfg.smoothing,
                       slack=cfg.slack)
    d = Dataset([1.0, 2.0, -1.0, 3.0], [1.0] * 4)
    d_change = Dataset([1.0, 2.0, -1.0, -3.0], [1.0] * 4)
    d_remove = Dataset([1.0, 2.0, -1.0], [1.0] * 3)
    verdicts = []
    for s, sc in enumerate(cfg.scenarios or _default_scenarios()):
        rng = ctx.rng(s)
        if sc.mechanism == "diffused_rr":
            for i, p in enumerate(sc.rates):
                eh = diffusion_audit(sc.bits, i, sc.rates, sc.tau, acfg, rng)
                claimed = effective_budget(p, sc.tau)
                verdicts.append({"name": f"{sc.name}[{i}]", "mechanism": sc.mechanism,
                                 "epsilon_hat": eh, "claimed": claimed,
                                 "pass": bool(eh <= claimed + cfg.slack)})
            continue
        if sc.mechanism == "laplace_count":
            eh = estimate_epsilon_hat(laplace_count_mechanism(sc.epsilon), d, d_change, acfg, rng)
            claimed = sc.epsilon
        elif sc.mechanism == "identical":
            eh = estimate_epsilon_hat(laplace_count_mechanism(sc.epsilon), d, d, acfg, rng)
            claimed = 0.0
        else:
            eh = estimate_epsilon_hat(size_mechanism, d, d_remove, acfg, rng)
            claimed = math.inf
        verdicts.append({"name": sc.name, "mechanism": sc.mechanism, "epsilon_hat": eh,
                         "claimed": claimed, "pass": bool(eh <= claimed + cfg.slack)})
    ctx.write_json("audit.json", {"trials": cfg.audit_trials, "bins": cfg.bins,
                                  "smoothing": cfg.smoothing, "slack": cfg.slack,
                                  "verdicts": verdicts})
    return all(v["pass"] for v in verdicts)


def cmd_check_concentration(ctx: RunContext) -> bool:
    cfg = ctx.config
    gen = ctx.rng(0)
    instances = [random_instance(gen) for _ in range(cfg.instances)]

    def check(i: int) -> list[list]:
        params = instances[i]
        top = params.m * max(params.gamma, 1e-12)
        ts = np.linspace(top / cfg.t_points, top, cfg.t_points)
        out = []
        for kind, tail, bound in (("two_stage", mc_tail, two_stage_bound),
                                  ("ratio", mc_ratio_tail, ratio_bound)):
            emp = tail(params, ts, cfg.mc_trials, ctx.rng(1 + 2 * i + (kind == "ratio")))
            se = mc_standard_error(emp, cfg.mc_trials)
            for t, e, s in zip(ts, emp, se):
                b = bound(params, float(t))
                out.append([i, kind, params.n, params.m, float(t), float(e), float(s), b,
                            bool(e <= b + 3 * s)])
        return out

    rows = [r for chunk in ctx.map(check, len(instances)) for r in chunk]
    ctx.write_csv("check-concentration.csv",
                  ["instance", "bound_kind", "n", "m", "t", "empirical", "std_error", "bound", "ok"],
                  rows)
    ok = all(r[-1] for r in rows)
    ctx.write_json("check-concentration.json", {"instances": len(instances), "points": len(rows),
                                                "all_ok": ok})
    return ok


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdpmean", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--zero-noise", action="store_true", help="deterministic trace mode")
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit 3 when the run's acceptance check fails")
    ap.add_argument("--out", help="output directory (default: config output or '.')")
    return ap


def run(command: str, config: ExperimentConfig, out: Path, threads: int = 1,
        zero_noise: bool = False) -> bool:
    """Run one subcommand; returns whether its acceptance check passed."""
    if config.seed is None:
        raise ConfigError("seed", "a seed is required (config or --seed)")
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(config, command, "zero-noise" if zero_noise else "live", threads, out)
    handlers = {
        "lowerbound": cmd_lowerbound,
        "estimate-bounded": lambda c: cmd_estimate(c, "bounded"),
        "estimate-unbounded": lambda c: cmd_estimate(c, "unbounded"),
        "sweep": cmd_sweep,
        "audit": cmd_audit,
        "check-concentration": cmd_check_concentration,
    }
    return handlers[command](ctx)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
        config = ExperimentConfig.from_json(text)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
            config.validate()
        out = Path(args.out or config.output or ".")
        ok = run(args.command, config, out, args.threads, args.zero_noise)
    except ConfigError as exc:
        print(f"pdpmean: invalid config: {exc}", file=sys.stderr)
        return 1
    except PDPError as exc:
        print(f"pdpmean: {exc.operation or 'pipeline'} failed: {exc}", file=sys.stderr)
        return 2
    if args.check and not ok:
        print(f"pdpmean: {args.command} acceptance check failed", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
