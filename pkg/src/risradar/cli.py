"""Command-line entry point: ``risradar <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .scenario import Scenario, ScenarioError, validate_scenario

log = logging.getLogger("risradar")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _uint64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="scenario JSON (default: shipped reference scenario)")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--seed", type=_uint64, help="override the scenario seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario field (dotted key, JSON value); repeatable")
    common.add_argument("--threads", type=int, default=1, help="worker processes for Monte Carlo trials")
    common.add_argument("--full-scale", action="store_true",
                        help="full-scale trial counts and false-alarm rate (hours)")
    common.add_argument("--cache-dir", type=Path, help="design/calibration cache (default ~/.cache/risradar)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="risradar", description="RIS-aided OFDM radar/communication simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="audit the scenario")

    d = sub.add_parser("design", parents=[common], help="design beamformers for every subvolume")
    d.add_argument("--gamma-r", type=float, help="radar power fraction (default: scenario)")
    d.add_argument("--users", type=int, help="number of users (default: scenario)")
    d.add_argument("--beta", type=float, help="penalty weight (default: scenario)")
    d.add_argument("--no-orthogonality", action="store_true", help="let the radar beam use the full space")
    d.add_argument("--pattern-step", type=float, default=1.0, help="beampattern CSV grid step in degrees")

    c = sub.add_parser("calibrate", parents=[common], help="TBD threshold under H0")
    c.add_argument("--n-scan", type=int, default=5)
    c.add_argument("--trials", type=int, help="H0 windows (default: campaign setting)")

    s = sub.add_parser("simulate", parents=[common], help="one H1 window with its plots and trajectory")
    s.add_argument("--gamma-r", type=float)
    s.add_argument("--users", type=int)
    s.add_argument("--n-scan", type=int, default=15)
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--pattern-step", type=float, default=1.0)

    w = sub.add_parser("sweep", parents=[common], help="operating points over the campaign grid")
    w.add_argument("--orthogonality-study", action="store_true", help="also run with the constraint disabled")
    w.add_argument("--h0-trials", type=int)
    w.add_argument("--h1-trials", type=int)

    r = sub.add_parser("report", parents=[common], help="plot-ready CSVs from sweep results")
    r.add_argument("--trajectory-trials", type=int, default=1, help="case-study windows for the trajectory table")
    return p


def load_scenario(args) -> Scenario:
    scn = Scenario.load(args.scenario, args.overrides)
    if args.seed is not None:
        scn = scn.with_overrides(f"seed={args.seed}")
    return scn


def _campaign(scn, args, p_fa=None):
    from .experiments import Campaign

    return Campaign(scn, args.cache_dir, threads=args.threads, p_fa=p_fa)


def _campaign_settings(scn, args):
    c = scn.doc.get("campaign") or {}
    if args.full_scale:
        fs = c["full_scale"]
        return fs["p_fa"], fs["h0_trials"], fs["h1_trials"]
    return scn.doc["detection"]["p_fa"], c.get("h0_trials", 2000), c.get("h1_trials", 500)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(scn, args) -> int:
    spec = scn.specs
    print(f"scenario {scn.digest()} seed {scn.seed}: ok")
    for k, v in spec.__dict__.items():
        print(f"  {k:22s} {v:.6g}")
    return EXIT_OK


def cmd_design(scn, args) -> int:
    from .beampattern import pattern_grid, write_pattern_csv
    from .designer import beamformer_set, design_case

    camp = _campaign(scn, args)
    gamma = scn.gamma_r if args.gamma_r is None else args.gamma_r
    k = scn.n_users if args.users is None else args.users
    orth = scn.doc["design"]["orthogonality"] and not args.no_orthogonality
    opts = camp.options if args.beta is None else camp.options.__class__(**{**camp.options.__dict__, "beta": args.beta})
    out = args.out / "designs"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(len(scn.grids.pointing)):
        case = camp.case(i, gamma, k, orth)
        ch = camp.channels_for(case.n_users)
        res = design_case(scn, ch, case, opts, camp.cache_dir)
        res.save(out / f"{case.key()}.json")
        bf = beamformer_set(ch, case, res)
        write_pattern_csv(out / f"{case.key()}_pattern.csv",
                          pattern_grid(scn, bf.omega, bf.f, bf.gammas, ch, step=args.pattern_step))
        files += [f"designs/{case.key()}.json", f"designs/{case.key()}_pattern.csv"]
        r = res.residuals
        print(f"subvolume {i}: mainlobe {r['mainlobe_power']:.4g}  sidelobe/eps {r['sidelobe']:.3g}  "
              f"eaves/eps {r['eavesdropper']:.3g}  jammer/eps {r['jammer']:.3g}  outer {res.iterations}")
    _manifest(args, scn, "design", files, {"gamma_r": gamma, "n_users": k, "orthogonality": orth, "beta": opts.beta})
    return EXIT_OK


def cmd_calibrate(scn, args) -> int:
    p_fa, h0, _ = _campaign_settings(scn, args)
    camp = _campaign(scn, args, p_fa)
    cal = camp.calibrate(args.n_scan, args.trials or h0)
    args.out.mkdir(parents=True, exist_ok=True)
    rec = {"n_scan": cal.n_scan, "p_fa": cal.p_fa, "trials": cal.trials, "threshold": cal.threshold,
           "gate_margin": camp.detector.gate_margin}
    name = f"calibration_n{cal.n_scan}.json"
    (args.out / name).write_text(json.dumps(rec, indent=2))
    print(json.dumps(rec))
    _manifest(args, scn, f"calibrate_n{cal.n_scan}", [name])
    return EXIT_OK


def cmd_simulate(scn, args) -> int:
    from .beampattern import pattern_grid, write_pattern_csv
    from .detection import write_plot_lists
    from .experiments import trajectory_case

    p_fa, h0, _ = _campaign_settings(scn, args)
    camp = _campaign(scn, args, p_fa)
    gamma = scn.gamma_r if args.gamma_r is None else args.gamma_r
    k = scn.n_users if args.users is None else args.users
    case = trajectory_case(camp, gamma, k, args.n_scan, args.trial)
    cal = camp.calibrate(args.n_scan, h0)
    out = args.out / f"simulate_t{args.trial}"
    out.mkdir(parents=True, exist_ok=True)
    write_plot_lists(out / "plots.jsonl", case["lists"])
    tg, traj, sm = case["target"], case["trajectory"], case["smoothed"]
    rec = {
        "declared": bool(traj is not None and case["score"] > cal.threshold),
        "score": case["score"], "threshold": cal.threshold,
        "xi": traj.xi.tolist() if traj is not None else [],
        "target_position": tg.position.tolist(), "target_velocity": tg.velocity.tolist(), "rcs": tg.rcs,
    }
    if sm is not None:
        rec["smoothed"] = {"times": sm.times.tolist(), "positions": sm.positions.tolist(),
                           "velocity": sm.velocity.tolist(), "degree": sm.degree}
        rec["truth_at_final"] = tg.at(sm.final_time).position.tolist()
    (out / "trajectory.json").write_text(json.dumps(rec, indent=2))
    files = ["plots.jsonl", "trajectory.json"]
    ch = camp.channels_for(camp.case(0, gamma, k).n_users)
    for i, bf in enumerate(camp.beamformers(gamma, k)):
        write_pattern_csv(out / f"pattern_sv{i}.csv", pattern_grid(scn, bf.omega, bf.f, bf.gammas, ch,
                                                                   step=args.pattern_step))
        files.append(f"pattern_sv{i}.csv")
    print(json.dumps({k2: rec[k2] for k2 in ("declared", "score", "threshold", "xi")}))
    _manifest(args, scn, f"simulate_t{args.trial}", [f"simulate_t{args.trial}/{f}" for f in files])
    return EXIT_OK


def cmd_sweep(scn, args) -> int:
    from .experiments import run_sweep, write_points_csv

    p_fa, h0, h1 = _campaign_settings(scn, args)
    h0 = args.h0_trials or h0
    h1 = args.h1_trials or h1
    c = scn.doc["campaign"]
    camp = _campaign(scn, args, p_fa)
    args.out.mkdir(parents=True, exist_ok=True)
    files = []
    variants = [True, False] if args.orthogonality_study else [True]
    for orth in variants:
        pts = run_sweep(camp, c["gamma_grid"], c["n_scans"], c["n_users"], h0, h1, orth)
        name = "sweep.csv" if orth else "sweep_no_orthogonality.csv"
        write_points_csv(args.out / name, pts)
        files.append(name)
        print(f"wrote {args.out / name} ({len(pts)} operating points)")
    _manifest(args, scn, "sweep", files, {"p_fa": p_fa, "h0_trials": h0, "h1_trials": h1,
                                          "rmse_conditioning": "detected trials only"})
    return EXIT_OK


def cmd_report(scn, args) -> int:
    from .experiments import read_points_csv, trajectory_case

    files = []
    sweep = args.out / "sweep.csv"
    if not sweep.exists():
        print(f"no sweep results in {args.out}; run 'risradar sweep' first", file=sys.stderr)
        return EXIT_RUNTIME
    on = read_points_csv(sweep)
    _write_rows(args.out / "operating_characteristic.csv",
                ["n_users", "n_scan", "gamma_r", "sum_rate", "pd", "pd_low", "pd_high", "rmse"],
                [[p.n_users, p.n_scan, p.gamma_r, p.sum_rate, p.pd, p.pd_low, p.pd_high, p.rmse] for p in on])
    files.append("operating_characteristic.csv")
    off_path = args.out / "sweep_no_orthogonality.csv"
    if off_path.exists():
        off = {(p.gamma_r, p.n_scan, p.n_users): p for p in read_points_csv(off_path)}
        rows = []
        for p in on:
            q = off.get((p.gamma_r, p.n_scan, p.n_users))
            if q is not None:
                rows.append([p.n_users, p.n_scan, p.gamma_r, p.sum_rate, p.pd, q.sum_rate, q.pd])
        _write_rows(args.out / "orthogonality_contrast.csv",
                    ["n_users", "n_scan", "gamma_r", "sum_rate_on", "pd_on", "sum_rate_off", "pd_off"], rows)
        files.append("orthogonality_contrast.csv")
    # smoothing case study
    p_fa, _, _ = _campaign_settings(scn, args)
    camp = _campaign(scn, args, p_fa)
    n_scan = max(scn.doc["campaign"]["n_scans"])
    rows = []
    for t in range(args.trajectory_trials):
        case = trajectory_case(camp, scn.gamma_r, scn.n_users, n_scan, t)
        traj, sm, lists = case["trajectory"], case["smoothed"], case["lists"]
        if traj is None:
            continue
        for (i, k), pos in zip(traj.observed(), sm.positions):
            when = lists[i].times[k]
            truth = case["target"].at(when).position
            rows.append([t, i, when, *truth, *lists[i].xyz[k], *pos])
    _write_rows(args.out / "trajectory_case.csv",
                ["trial", "scan", "time", "true_x", "true_y", "true_z", "plot_x", "plot_y", "plot_z",
                 "smooth_x", "smooth_y", "smooth_z"], rows)
    files.append("trajectory_case.csv")
    _manifest(args, scn, "report", files)
    print("wrote " + ", ".join(files))
    return EXIT_OK


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in r])


def _manifest(args, scn, command, files, extra=None) -> None:
    from .experiments import write_manifest

    info = {"overrides": args.overrides, "full_scale": args.full_scale, "threads": args.threads}
    if extra:
        info.update(extra)
    write_manifest(args.out, scn, command, files, info)


COMMANDS = {
    "validate": cmd_validate,
    "design": cmd_design,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scn = load_scenario(args)
        problems = validate_scenario(scn)
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if problems:
        print("scenario violations:", file=sys.stderr)
        for p in problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](scn, args)
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
