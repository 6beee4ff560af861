"""Command-line experiment harness.

Configuration is an INI file with the sections below; every key has a
default taken from the reference barrier example except where noted, and
``--set section.key=value`` (or the dedicated flags) override file values.
Results go to CSV, preceded by a comment block holding the resolved config,
the seed and the package version.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
import time

import numpy as np

from . import __version__
from .analytic import BsParams, bs_barrier_greeks, bs_call, bs_up_and_out_call, reference_price
from .convergence import InsufficientPrecision, weak_order
from .estimators import SimConfig, run_estimator
from .greeks import GreekRequest, NonFiniteTangent, bb_pathwise_greeks, fd_greek, oss_pathwise_greeks
from .mlmc import MaxLevelExceeded, MlmcConfig, mlmc_price, variance_decay
from .model import CEV, GBM, OptionSpec
from .schemes import DegenerateSurvival

# None marks a key that has no default and must be supplied when needed
DEFAULTS: dict[str, dict[str, str | None]] = {
    "model": {"kind": "gbm", "r": "0.05", "vol": "0.2", "beta": None, "euler": "false"},
    "option": {"S0": "1.0", "B": "1.1", "K": "1.0", "T": "1.0", "t0": "0.0"},
    "sim": {"n_steps": "64", "n_paths": "100000", "scheme": "milstein", "seed": "0",
            "stream": "0", "discount": "true", "estimator": "oss_bb"},
    "greeks": {"components": "S0", "order": "first_pathwise", "step": "1e-4", "estimator": "oss_bb"},
    "mlmc": {"eps": "2e-4", "n0": "4", "max_level": "10", "n_initial": "100", "n_pilot": "16"},
    "converge": {"estimator": "oss_bb", "n_grid": "8,16,32,64,128", "M": "1000000", "M_cap": "16000000"},
    "figures": {"m_grid": "1000,10000,100000", "s0_grid": "0.80,0.82,0.84,0.86,0.88,0.90,0.92,0.94,0.96,0.98,1.00,1.02,1.04,1.06,1.08",
                "gamma_step": "1e-3", "gamma_paths": "100000", "levels": "0,1,2,3,4,5,6,7,8",
                "level_paths": "20000"},
}

FIGURES = ("fig1", "fig2", "fig3", "fig4")


class ConfigError(ValueError):
    pass


class RunConfig:
    """Resolved, validated configuration; ``values[section][key]`` holds strings."""

    def __init__(self, values: dict[str, dict[str, str | None]]):
        self.values = values

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        if path is not None:
            cp = configparser.ConfigParser(interpolation=None)
            cp.optionxform = str
            try:
                with open(path) as fh:
                    cp.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
            except configparser.Error as exc:
                raise ConfigError(f"malformed config file {path}: {exc}") from None
            for sec in cp.sections():
                for key, val in cp.items(sec):
                    cls._assign(values, sec, key, val)
        for item in overrides:
            name, sep, val = item.partition("=")
            sec, dot, key = name.partition(".")
            if not sep or not dot:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            cls._assign(values, sec.strip(), key.strip(), val.strip())
        return cls(values)

    @staticmethod
    def _assign(values, sec, key, val):
        if sec not in values:
            raise ConfigError(f"unknown config section [{sec}]")
        if key not in values[sec]:
            raise ConfigError(f"unknown config key {sec}.{key}")
        values[sec][key] = val

    def get(self, sec: str, key: str) -> str:
        v = self.values[sec][key]
        if v is None or v == "":
            raise ConfigError(f"missing required key {sec}.{key}")
        return v

    def num(self, sec, key, cast=float):
        raw = self.get(sec, key)
        try:
            return cast(float(raw)) if cast is int else cast(raw)
        except ValueError:
            raise ConfigError(f"{sec}.{key}: cannot parse {raw!r}") from None

    def flag(self, sec, key) -> bool:
        raw = self.get(sec, key).lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{sec}.{key}: expected a boolean, got {raw!r}")

    def numbers(self, sec, key, cast=float) -> list:
        return [cast(float(x)) if cast is int else cast(x) for x in self.get(sec, key).split(",") if x.strip()]

    # domain objects

    def model(self):
        kind = self.get("model", "kind").lower()
        euler = self.flag("model", "euler")
        r, vol = self.num("model", "r"), self.num("model", "vol")
        if kind == "gbm":
            return GBM(r=r, vol=vol, euler=euler)
        if kind == "cev":
            return CEV(r=r, vol=vol, beta=self.num("model", "beta"), euler=euler)
        raise ConfigError(f"model.kind: unknown model {kind!r} (gbm or cev)")

    def option(self) -> OptionSpec:
        return OptionSpec(B=self.num("option", "B"), K=self.num("option", "K"),
                          T=self.num("option", "T"), t0=self.num("option", "t0"))

    def s0(self) -> float:
        return self.num("option", "S0")

    def sim(self) -> SimConfig:
        return SimConfig(n_steps=self.num("sim", "n_steps", int), n_paths=self.num("sim", "n_paths", int),
                         scheme=self.get("sim", "scheme"), seed=self.num("sim", "seed", int),
                         stream=self.num("sim", "stream", int), discount=self.flag("sim", "discount"))

    def mlmc(self) -> MlmcConfig:
        sim = self.sim()
        return MlmcConfig(eps=self.num("mlmc", "eps"), n0=self.num("mlmc", "n0", int),
                          max_level=self.num("mlmc", "max_level", int),
                          n_initial=self.num("mlmc", "n_initial", int), n_pilot=self.num("mlmc", "n_pilot", int),
                          seed=sim.seed, stream=sim.stream, scheme=sim.scheme, discount=sim.discount)

    def comment_lines(self) -> list[str]:
        out = []
        for sec, kv in self.values.items():
            for key, val in kv.items():
                out.append(f"{sec}.{key} = {'' if val is None else val}")
        return out


def _fmt(v):
    # repr round-trips floats exactly
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(fh, cfg: RunConfig, command: str, rows: list[dict], summary: dict | None = None):
    print(f"# ossbb {__version__}", file=fh)
    print(f"# command = {command}", file=fh)
    print(f"# seed = {cfg.values['sim']['seed']}", file=fh)
    for line in cfg.comment_lines():
        print(f"# {line}", file=fh)
    if rows:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    if summary:
        print("# summary: " + ", ".join(f"{k}={_fmt(v)}" for k, v in summary.items()), file=fh)


# subcommands return (rows, summary)


def cmd_price(cfg: RunConfig, args):
    est = args.estimator or cfg.get("sim", "estimator")
    rep = run_estimator(est, cfg.model(), cfg.option(), cfg.s0(), cfg.sim())
    row = {k: v for k, v in rep.row().items() if k != "wall_time"}
    row.update(rep.diagnostics)
    print(f"{est}: {rep.mean:.8g} +- {rep.std_error:.3g} ({rep.wall_time:.2f}s)", file=sys.stderr)
    return [row], None


def cmd_greeks(cfg: RunConfig, args):
    est = args.estimator or cfg.get("greeks", "estimator")
    comps = tuple(c.strip() for c in cfg.get("greeks", "components").split(",") if c.strip())
    req = GreekRequest(components=comps, order=cfg.get("greeks", "order"))
    step = cfg.num("greeks", "step")
    model, opt, s0, sim = cfg.model(), cfg.option(), cfg.s0(), cfg.sim()
    if req.order == "first_pathwise":
        fn = oss_pathwise_greeks if est == "oss_bb" else bb_pathwise_greeks
        if est not in ("oss_bb", "bb"):
            raise ConfigError(f"greeks.estimator: pathwise Greeks need bb or oss_bb, got {est!r}")
        reports = fn(model, opt, s0, sim, comps)
    else:
        order = 1 if req.order == "first_fd" else 2
        reports = {c: fd_greek(model, opt, s0, sim, c, order=1 if req.order.endswith("of_pathwise") else order,
                               step=req.step(c, step), estimator=est,
                               of_pathwise=req.order == "second_fd_of_pathwise")
                   for c in comps}
    rows = [{"component": c, "estimator": r.estimator, "order": req.order, "N": r.n_steps, "M": r.n_paths,
             "value": r.mean, "std_error": r.std_error, "variance": r.sample_variance}
            for c, r in reports.items()]
    return rows, None


def cmd_mlmc(cfg: RunConfig, args):
    mcfg = cfg.mlmc()
    res = mlmc_price(cfg.model(), cfg.option(), cfg.s0(), mcfg)
    rows = [{k: v for k, v in l.row().items() if k != "var_Pl"} for l in res.levels]
    print(f"mlmc: {res.price:.8g} with {len(res.levels)} levels ({res.wall_time:.2f}s)", file=sys.stderr)
    return rows, {"price": res.price, "eps": mcfg.eps, "total_cost": res.total_cost}


def cmd_converge(cfg: RunConfig, args):
    est = args.estimator or cfg.get("converge", "estimator")
    sim = cfg.sim()
    fit = weak_order(est, cfg.model(), cfg.option(), cfg.s0(), cfg.numbers("converge", "n_grid", int),
                     M=cfg.num("converge", "M", int), M_cap=cfg.num("converge", "M_cap", int),
                     seed=sim.seed, stream=sim.stream, discount=sim.discount)
    rows = [{**p.row(est), "used_in_fit": p.resolved} for p in fit.points]
    return rows, {"slope": fit.slope, "intercept": fit.intercept, "oracle": fit.oracle}


def _bs(cfg: RunConfig) -> BsParams:
    model, opt = cfg.model(), cfg.option()
    if not isinstance(model, GBM):
        raise ConfigError("the closed-form oracle exists only for model.kind = gbm")
    return BsParams(S0=cfg.s0(), K=opt.K, B=opt.B, r=model.r, sigma=model.vol, tau=opt.tau)


def cmd_oracle(cfg: RunConfig, args):
    p = _bs(cfg)
    disc = cfg.flag("sim", "discount")
    scale = 1.0 if disc else math.exp(p.r * p.tau)
    rows = [
        {"quantity": "up_and_out_call", "value": bs_up_and_out_call(p) * scale},
        {"quantity": "european_call", "value": bs_call(p) * scale},
        {"quantity": "delta", "value": bs_barrier_greeks(p, "S0", 1) * scale},
        {"quantity": "gamma", "value": bs_barrier_greeks(p, "S0", 2) * scale},
        {"quantity": "vega", "value": bs_barrier_greeks(p, "vol", 1) * scale},
    ]
    return rows, None


def fig_price_mse(cfg: RunConfig, delta: bool):
    model, opt, s0, sim = cfg.model(), cfg.option(), cfg.s0(), cfg.sim()
    p = _bs(cfg)
    ref = bs_barrier_greeks(p, "S0", 1) if delta else reference_price(model, opt, s0, sim.discount)
    rows = []
    for est in ("bb", "oss_bb"):
        for k, m in enumerate(cfg.numbers("figures", "m_grid", int)):
            run = SimConfig(n_steps=sim.n_steps, n_paths=m, scheme=sim.scheme, seed=sim.seed,
                            stream=sim.stream + k, discount=sim.discount)
            t = time.process_time()
            if delta:
                fn = oss_pathwise_greeks if est == "oss_bb" else bb_pathwise_greeks
                rep = fn(model, opt, s0, run, ("S0",))["S0"]
            else:
                rep = run_estimator(est, model, opt, s0, run)
            cpu = time.process_time() - t
            bias = rep.mean - ref
            rows.append({"estimator": est, "M": m, "N": sim.n_steps, "value": rep.mean, "reference": ref,
                         "std_error": rep.std_error, "abs_error": abs(bias),
                         "mse": bias * bias + rep.std_error**2, "cpu_time": cpu})
    return rows


def fig_gamma(cfg: RunConfig):
    model, opt, sim = cfg.model(), cfg.option(), cfg.sim()
    p = _bs(cfg)
    step = cfg.num("figures", "gamma_step")
    run = SimConfig(n_steps=sim.n_steps, n_paths=cfg.num("figures", "gamma_paths", int), scheme=sim.scheme,
                    seed=sim.seed, stream=sim.stream, discount=sim.discount)
    rows = []
    for s0 in cfg.numbers("figures", "s0_grid"):
        g = {est: fd_greek(model, opt, s0, run, "S0", order=2, step=step, estimator=est) for est in ("bb", "oss_bb")}
        ref = bs_barrier_greeks(BsParams(S0=s0, K=p.K, B=p.B, r=p.r, sigma=p.sigma, tau=p.tau), "S0", 2)
        rows.append({"S0": s0, "gamma_bb": g["bb"].mean, "gamma_oss": g["oss_bb"].mean, "reference_gamma": ref,
                     "se_bb": g["bb"].std_error, "se_oss": g["oss_bb"].std_error})
    return rows


def fig_levels(cfg: RunConfig):
    sim = cfg.sim()
    stats = variance_decay(cfg.model(), cfg.option(), cfg.s0(), levels=cfg.numbers("figures", "levels", int),
                           n_samples=cfg.num("figures", "level_paths", int), n0=cfg.num("mlmc", "n0", int),
                           seed=sim.seed, stream=sim.stream)
    return [{"level": s.level, "h_l": s.h, "M_l": s.n_samples, "var_Pl": s.variance_fine, "var_Yl": s.variance,
             "log2_var_Pl": math.log2(s.variance_fine) if s.variance_fine > 0 else -np.inf,
             "log2_var_Yl": math.log2(s.variance) if s.variance > 0 else -np.inf, "mean_Yl": s.mean}
            for s in stats]


def cmd_figures(cfg: RunConfig, args):
    if args.figure == "fig1":
        return fig_price_mse(cfg, delta=False), None
    if args.figure == "fig2":
        return fig_price_mse(cfg, delta=True), None
    if args.figure == "fig3":
        return fig_gamma(cfg), None
    return fig_levels(cfg), None


COMMANDS = {"price": cmd_price, "greeks": cmd_greeks, "mlmc": cmd_mlmc, "converge": cmd_converge,
            "oracle": cmd_oracle, "figures": cmd_figures}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for --set sim.seed=...")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--out", help="CSV output path (default: stdout)")

    ap = argparse.ArgumentParser(prog="ossbb", description="Barrier option Monte Carlo experiments")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("price", "greeks", "converge"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--estimator", choices=("baseline", "bb", "oss_bb", "european"))
    sp = sub.add_parser("mlmc", parents=[common])
    sp.add_argument("--eps", type=float)
    sub.add_parser("oracle", parents=[common])
    sp = sub.add_parser("figures", parents=[common])
    sp.add_argument("figure", choices=FIGURES)
    return ap


def _set_threads(n: int):
    import numba

    if n < 1:
        raise ConfigError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"sim.seed={args.seed}")
    if getattr(args, "eps", None) is not None:
        overrides.append(f"mlmc.eps={args.eps}")
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.threads is not None:
            _set_threads(args.threads)
        rows, summary = COMMANDS[args.command](cfg, args)
    except (DegenerateSurvival, NonFiniteTangent, MaxLevelExceeded, InsufficientPrecision, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    command = args.command if args.command != "figures" else f"figures {args.figure}"
    buf = io.StringIO()
    _write_csv(buf, cfg, command, rows, summary)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
