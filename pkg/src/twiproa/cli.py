"""Command-line pipeline: ``synth``, ``certify``, ``mc`` and ``report``.

Every stage writes JSON into the output directory and caches its fitted
objects under ``cache/``, keyed by a hash of the configuration sections it
depends on. Downstream stages refuse to run on missing or stale artifacts.

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 certification or admissibility failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import pickle
import sys
from pathlib import Path

import numpy as np

from . import __version__, defaults
from .certification import (
    CertifiedInvariantSet,
    build_invariant_set,
    check_admissibility,
    decrease_violations,
    revalidate,
)
from .config import CONTROLLERS, PipelineConfig, load_config
from .controllers import CTMPCController, LQRController, MPCController
from .exceptions import CertificationError, ConfigError, DependencyError, SynthesisError
from .mc import run_campaign, write_results
from .model import linear_model

logger = logging.getLogger("twiproa")

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_CERTIFICATION = 0, 2, 3, 4

SYNTH_SECTIONS = ("model", "Ts", "lqr", "mpc", "ctmpc")
CERT_SECTIONS = SYNTH_SECTIONS + ("substeps", "certification")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _read_json(path: Path, stage: str):
    if not path.exists():
        raise DependencyError(f"{path.name} not found in {path.parent}; run `twiproa {stage}` first")
    return json.loads(path.read_text())


def _cache_path(out: Path, stage: str, key: str) -> Path:
    return out / "cache" / f"{stage}-{key}.pkl"


def _load_cache(out: Path, stage: str, key: str):
    p = _cache_path(out, stage, key)
    if not p.exists():
        return None
    with open(p, "rb") as fh:
        return pickle.load(fh)


def _store_cache(out: Path, stage: str, key: str, obj) -> None:
    p = _cache_path(out, stage, key)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        pickle.dump(obj, fh)


def provenance_rows():
    return [{"setting": s, "value": v, "source": src} for s, v, src in defaults.PROVENANCE]


def synthesize(cfg: PipelineConfig) -> dict:
    """Fit the three controllers described by ``cfg``."""
    model = linear_model(cfg.params, cfg.Ts)
    lq = cfg.lqr
    common = dict(Q=np.array(lq.Q), R=np.array(lq.R), u_max=lq.u_max)
    lqr = LQRController(**common).fit(model)
    mpc = MPCController(horizon=cfg.mpc.horizon, state_bounds=cfg.mpc.bounds_array(),
                        slack_weight=cfg.mpc.slack_weight, **common).fit(model)
    ctmpc = CTMPCController(horizon=cfg.mpc.horizon, state_bounds=cfg.mpc.bounds_array(),
                            slack_weight=cfg.ctmpc.slack_weight, alpha=cfg.ctmpc.alpha,
                            w_max=cfg.ctmpc.w_max, **common).fit(model)
    return {"model": model, "lqr": lqr, "mpc": mpc, "ctmpc": ctmpc}


def synthesis_report(cfg: PipelineConfig, fitted: dict, key: str) -> dict:
    model, lqr, mpc, ct = fitted["model"], fitted["lqr"], fitted["mpc"], fitted["ctmpc"]
    return {
        "config_hash": key,
        "version": __version__,
        "model": {"params": cfg.model, "Ts": cfg.Ts, "A": model.A, "B": model.B},
        "lqr": {"K": lqr.K_, "P": lqr.P_,
                "closed_loop_eigenvalue_moduli": np.sort(np.abs(np.linalg.eigvals(lqr.A_cl_)))},
        "mpc": {"horizon": cfg.mpc.horizon, "slack_weight": cfg.mpc.slack_weight,
                "Q_N": mpc.P_, "terminal_set": mpc.terminal_set_.to_dict(),
                "terminal_set_rows": mpc.terminal_set_.n_rows},
        "ctmpc": {
            "alpha": cfg.ctmpc.alpha, "w_max": cfg.ctmpc.w_max,
            "slack_weight": cfg.ctmpc.slack_weight,
            "K_tube": ct.tube_.K_tube, "P_tube": ct.tube_.P_tube,
            "contraction_factor": ct.tube_.contraction_factor(model.A, model.B),
            "deltas": ct.deltas_,
            "tightened_input_bounds": [U.hi for U in ct.stage_inputs_],
            "tightened_state_offsets": [S.b for S in ct.stage_sets_],
            "terminal_set": ct.terminal_set_.to_dict(),
            "terminal_set_rows": ct.terminal_set_.n_rows,
        },
        "provenance": provenance_rows(),
    }


def cmd_synth(cfg: PipelineConfig, out: Path) -> dict:
    key = cfg.section_hash(*SYNTH_SECTIONS)
    fitted = _load_cache(out, "synth", key)
    if fitted is None:
        fitted = synthesize(cfg)
        _store_cache(out, "synth", key, fitted)
    else:
        logger.info("synthesis cache hit (%s)", key)
    report = synthesis_report(cfg, fitted, key)
    _write_json(out / "synthesis.json", report)
    return report


def _synthesized(cfg: PipelineConfig, out: Path) -> dict:
    key = cfg.section_hash(*SYNTH_SECTIONS)
    rep = _read_json(out / "synthesis.json", "synth")
    fitted = _load_cache(out, "synth", key)
    if rep.get("config_hash") != key or fitted is None:
        raise DependencyError("synthesis artifacts do not match the configuration; run `twiproa synth`")
    return fitted


def cmd_certify(cfg: PipelineConfig, out: Path) -> dict:
    fitted = _synthesized(cfg, out)
    key = cfg.section_hash(*CERT_SECTIONS)
    lqr, c = fitted["lqr"], cfg.certification
    params = cfg.params
    report = {"config_hash": key, "norm": "spectral"}
    try:
        cset = build_invariant_set(
            lqr.A_cl_, lqr.K_, params=params, Ts=cfg.Ts, substeps=cfg.substeps, u_max=lqr.u_max,
            margin=c.margin, safety=c.safety, r_max=c.r_max, n_sphere=c.n_sphere, n_ball=c.n_ball,
            n_bisect=c.n_bisect, random_state=c.seed)
    except CertificationError as e:
        report.update(certified=False, error=str(e))
        _write_json(out / "certification.json", report)
        raise
    check = revalidate(cset, lqr.A_cl_, params=params, Ts=cfg.Ts, substeps=cfg.substeps,
                       u_max=lqr.u_max, n=c.validation_samples, random_state=c.validation_seed)
    decrease = decrease_violations(cset, params=params, Ts=cfg.Ts, substeps=cfg.substeps,
                                   u_max=lqr.u_max, n=c.decrease_samples, random_state=c.validation_seed + 1)
    adm = [check_admissibility(cset, fitted[name], name).to_dict() for name in CONTROLLERS]
    ok = check["violations"] == 0 and decrease == 0 and all(a["admissible"] for a in adm)
    report.update(certified=ok, set=cset.to_dict(), revalidation=check,
                  decrease_violations=decrease, decrease_samples=c.decrease_samples,
                  admissibility=adm)
    _write_json(out / "certification.json", report)
    _store_cache(out, "certify", key, cset)
    if not ok:
        raise CertificationError("certified set failed revalidation or admissibility; see certification.json")
    return report


def _certified(cfg: PipelineConfig, out: Path) -> CertifiedInvariantSet:
    key = cfg.section_hash(*CERT_SECTIONS)
    rep = _read_json(out / "certification.json", "certify")
    if rep.get("config_hash") != key:
        raise DependencyError("certification does not match the configuration; run `twiproa certify`")
    if not rep.get("certified"):
        raise CertificationError("the stored certification failed; the stopping condition is unsound")
    cset = _load_cache(out, "certify", key)
    return cset if cset is not None else CertifiedInvariantSet.from_dict(rep["set"])


def cmd_mc(cfg: PipelineConfig, out: Path) -> dict:
    fitted = _synthesized(cfg, out)
    cset = _certified(cfg, out)
    mc_cfg = cfg.mc.to_mc_config(cfg.Ts, cfg.ctmpc.w_max, cfg.substeps)
    policies = {name: fitted[name] for name in cfg.mc.controllers()}
    summary, results = run_campaign(policies, cset, mc_cfg, params=cfg.params,
                                    threads=cfg.mc.threads)
    write_results(summary, results, out / "mc", config=cfg.to_dict())
    return summary.to_dict()


def _markdown_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


def cmd_report(cfg: PipelineConfig, out: Path) -> str:
    synth = _read_json(out / "synthesis.json", "synth")
    cert = _read_json(out / "certification.json", "certify")
    mc_path = out / "mc" / "summary.json"
    mc = json.loads(mc_path.read_text()) if mc_path.exists() else None

    parts = ["# Region-of-attraction summary", ""]
    parts += ["## Synthesis", "",
              f"LQR gain K = {np.round(np.array(synth['lqr']['K']), 5).tolist()}", "",
              f"Tube funnel delta_N = {synth['ctmpc']['deltas'][-1]:.6g}, "
              f"contraction factor = {synth['ctmpc']['contraction_factor']:.6g}", ""]
    parts += ["## Certified invariant set", ""]
    if "set" in cert:
        s = cert["set"]
        parts += [_markdown_table(("quantity", "value"), [
            ("gamma bound", f"{s['gamma_bound']:.6g}"), ("gamma", f"{s['gamma']:.6g}"),
            ("rho", f"{s['rho']:.6g}"), ("level c", f"{s['level']:.6g}"),
            ("lambda_min(P)", f"{s['lambda_min_P']:.6g}"), ("lambda_max(P)", f"{s['lambda_max_P']:.6g}"),
            ("max sampled ratio", f"{s['max_ratio']:.6g}"),
            ("revalidation violations", cert["revalidation"]["violations"]),
            ("decrease violations", cert["decrease_violations"]),
        ]), ""]
        parts += [_markdown_table(("controller", "alpha*", "level", "admissible"), [
            (a["controller"], "inf" if a["alpha_star_unbounded"] else f"{a['alpha_star']:.6g}",
             f"{a['level']:.6g}", a["admissible"]) for a in cert["admissibility"]]), ""]
    else:
        parts += [f"Certification failed: {cert.get('error', 'unknown error')}", ""]
    parts += ["## Monte Carlo", ""]
    if mc is None:
        parts += ["No campaign results; run `twiproa mc`.", ""]
    else:
        names = mc["controllers"]
        parts += [_markdown_table(("controller", "stable fraction", "std. error", "failures"), [
            (k, f"{100 * mc['fractions'][k]:.2f}%", f"{100 * mc['std_errors'][k]:.2f} pp",
             ", ".join(f"{r}: {n}" for r, n in sorted(mc["failures"][k].items())) or "-")
            for k in names]), "",
            f"Samples: {mc['n_samples']} (hash {mc['sample_hash'][:16]})", "",
            "Verdict agreement:", "",
            _markdown_table(("",) + tuple(names),
                            [(a,) + tuple(f"{v:.4f}" for v in row)
                             for a, row in zip(names, mc["agreement"])]),
            ""]
        samples = out / "mc" / "samples.csv"
        if samples.exists():
            _write_scatter(samples, out)
    parts += ["## Provenance", "",
              _markdown_table(("setting", "value", "source"),
                              [(r["setting"], r["value"], r["source"]) for r in synth["provenance"]]), ""]
    text = "\n".join(parts)
    (out / "report.md").write_text(text)
    return text


def _write_scatter(samples: Path, out: Path) -> None:
    rows = {}
    with open(samples, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["controller"], []).append(r)
    for name, rs in rows.items():
        with open(out / f"scatter_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("xdot_w", "theta", "thetadot", "verdict"))
            for r in rs:
                w.writerow((r["xdot_w"], r["theta"], r["thetadot"], r["verdict"]))


COMMANDS = {"synth": cmd_synth, "certify": cmd_certify, "mc": cmd_mc, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twiproa", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML or JSON configuration file")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="Monte Carlo seed")
        p.add_argument("--controller", choices=CONTROLLERS + ("all",))
        p.add_argument("--samples", type=int, help="Monte Carlo sample count")
        p.add_argument("--threads", type=int, help="Monte Carlo worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    data = cfg.to_dict()
    overrides = {"seed": args.seed, "controller": args.controller, "n_samples": args.samples,
                 "threads": args.threads}
    data["mc"].update({k: v for k, v in overrides.items() if v is not None})
    if args.out is not None:
        data["out"] = str(args.out)
    return PipelineConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as e:
        print(f"missing dependency: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except CertificationError as e:
        print(f"certification failed: {e}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except SynthesisError as e:
        print(f"synthesis failed: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "report":
        print(result)
    elif args.command == "mc":
        print(json.dumps({k: result[k] for k in ("fractions", "std_errors", "n_samples")}, indent=2))
    else:
        print(f"{args.command}: wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
