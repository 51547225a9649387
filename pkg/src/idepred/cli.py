"""Command line: ``idepred simulate|certify|sweep <config>``.

Every command prints a JSON report (which embeds the fully resolved
configuration) and exits 0 when all checks pass, 1 when a check fails and 2 on
invalid input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .certify import SamplerConfig, certify_rates, check_assumptions, example41_closed_form
from .errors import ConfigError, DomainError
from .harness import ScenarioConfig, estimate_asymptotic_gain, robustness_sweep, run_scenario, write_sweep_csv


def _out(cfg: ScenarioConfig, key: str) -> Path:
    o = cfg.data["outputs"]
    d = Path(o["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d / o[key]


def _emit(report: dict, path: Path | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=float)
    if path is not None:
        path.write_text(text + "\n")
    print(text)


def cmd_simulate(cfg: ScenarioConfig) -> tuple[dict, list[str]]:
    res, m = run_scenario(cfg)
    failures = []
    if res is not None:
        res.to_csv(_out(cfg, "trajectory"))
        res.samples_to_csv(_out(cfg, "samples"))
    if m.status != "ok":
        failures.append(f"run diverged: {m.message}")
    else:
        if not m.converged:
            failures.append(f"not converged: tail sup |x| = {m.tail_sup_x:.3e}, sigma_hat = {m.sigma_hat:.3e}")
        failures += [f"invariant {k} violated" for k, v in m.invariants.items()
                     if isinstance(v, bool) and k != "all" and not v]
    return {"metrics": m.as_dict()}, failures


def cmd_certify(cfg: ScenarioConfig) -> tuple[dict, list[str]]:
    sys_, cert, shaping, _ = cfg.build()
    c = cfg.data["certify"]
    s = cfg.data["scheme"]
    rep = check_assumptions(sys_, cert, shaping, n_samples=int(c["n_samples"]), seed=int(c["seed"]),
                            outer_factor=float(c["outer_factor"]))
    rates = certify_rates(sys_, cert, shaping, float(s["sigma"]), int(s["N"]), float(s["Ts"]),
                          SamplerConfig(n_samples=int(c["constant_samples"]), seed=int(c["seed"])),
                          diagnostics=True)
    out = {"assumptions": rep.as_dict(), "rates": rates.as_dict()}
    failures = [f"{k}: {v.note}" for k, v in rep.results.items() if not v.passed]
    names = ("sigma bound", "predictor small-gain", "observer small-gain")
    failures += [f"rate inequality '{n}' fails (margin {mg:.3e})"
                 for n, ok, mg in zip(names, rates.verdict.passed, rates.verdict.margins) if not ok]
    if cfg.data["system"]["name"] == "example-4.1":
        p = cfg.params()
        cf = example41_closed_form(p.g, p.p, float(s["sigma"]), rates.delta, float(s["Ts"]))
        out["closed_form"] = cf.as_dict()
        failures += [f"closed-form condition '{ch.name}' fails (margin {ch.margin:.3e})"
                     for ch in cf.checks if not ch.passed]
    return out, failures


def cmd_sweep(cfg: ScenarioConfig, partitions: int | None, errors: list[float] | None) -> tuple[dict, list[str]]:
    failures = []
    if partitions is not None:
        recs, ok = robustness_sweep(cfg, partitions)
        rows = [{"seed": i + 1, **{k: v for k, v in r.as_dict().items() if k != "invariants"}}
                for i, r in enumerate(recs)]
        write_sweep_csv(_out(cfg, "sweep"), rows)
        out = {"kind": "partitions", "converged": sum(r.converged for r in recs), "runs": len(recs),
               "records": [r.as_dict() for r in recs]}
        if not ok:
            failures.append(f"{len(recs) - out['converged']} of {len(recs)} runs did not converge")
    else:
        g = estimate_asymptotic_gain(cfg, errors)
        rows = [{"eps": e, "tail": t, "verdict": v} for e, t, v in zip(g.eps, g.tails, g.verdicts)]
        write_sweep_csv(_out(cfg, "sweep"), rows)
        out = {"kind": "errors", **g.as_dict()}
        failures += [f"eps={e}: diverged" for e, v in zip(g.eps, g.verdicts) if v != "bounded"]
    return out, failures


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idepred", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "run one closed loop and write trajectory CSV + metrics"),
                       ("certify", "assumption checks, sampled constants and rate verdicts")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="YAML or JSON scenario file")
    p = sub.add_parser("sweep", help="robustness (partitions) or gain (error amplitudes) experiment")
    p.add_argument("config")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--partitions", type=int, metavar="N", help="number of random partitions (seeds 1..N)")
    grp.add_argument("--errors", type=lambda s: [float(v) for v in s.split(",")], metavar="E1,E2,...",
                     help="comma-separated error amplitudes")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.command == "simulate":
            body, failures = cmd_simulate(cfg)
        elif args.command == "certify":
            body, failures = cmd_certify(cfg)
        else:
            body, failures = cmd_sweep(cfg, args.partitions, args.errors)
    except (ConfigError, DomainError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc)}))
        return 2
    report = {"command": args.command, "config": cfg.data, "status": "pass" if not failures else "fail",
              "failures": failures, **body}
    _emit(report, _out(cfg, "report"))
    return 0 if not failures else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
