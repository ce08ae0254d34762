"""Command-line entry point.

Subcommands: profile, sample, mcheck, locallaw, decay, que, traceless,
spacing, flow.  Common flags: --config <json>, --seed <u64>, --out <dir>,
--samples <n>, --threads <n>.  Exit code 0 iff every check passed.

Heavy imports happen after argument parsing so that --threads can cap the
BLAS pool before numpy loads.
"""

import argparse
import os
import sys

EXPERIMENTS = ("mcheck", "locallaw", "decay", "que", "traceless", "spacing", "flow")


def _build_parser():
    parser = argparse.ArgumentParser(prog="rbmlab",
                                     description="band-matrix numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file mirroring ExperimentConfig")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--samples", type=int, help="sample count override")
        sp.add_argument("--threads", type=int, help="BLAS thread cap")
        sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    sp = sub.add_parser("profile", help="build and verify a variance profile")
    common(sp)
    sp.add_argument("--save", help="write the profile JSON here")

    sp = sub.add_parser("sample", help="draw one matrix and export it as CSV")
    common(sp)
    sp.add_argument("--csv", default="sample.csv", help="output CSV path")

    for name in EXPERIMENTS:
        common(sub.add_parser(name, help=f"run the {name} experiment"))
    return parser


def _load_config(args):
    from .harness import ExperimentConfig, config_from_json

    if args.config:
        with open(args.config) as fh:
            cfg = config_from_json(fh.read())
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.samples is not None:
        cfg.samples = args.samples
    if getattr(args, "no_plots", False):
        cfg.plots = False
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from . import harness
    from .ensemble import profile_to_json, sample_matrix, sample_to_csv, verify_profile

    cfg = _load_config(args)

    if args.command == "profile":
        p = cfg.build_profile()
        rep = verify_profile(p)
        if args.save:
            with open(args.save, "w") as fh:
                fh.write(profile_to_json(p))
        for c in rep.checks:
            state = "pass" if c.passed else "FAIL"
            print(f"{c.name}: measured={c.measured:.6g} bound={c.bound:.6g} [{state}]")
        if rep.empirical_decay_exponent is not None:
            print(f"empirical decay exponent D ~ {rep.empirical_decay_exponent:.2f}")
        return 0 if rep.all_passed else 1

    if args.command == "sample":
        p = cfg.build_profile()
        s = sample_matrix(p, cfg.symmetry_class(), cfg.distribution_kind(), cfg.seed)
        sample_to_csv(s, args.csv)
        print(f"wrote {args.csv} ({p.N}x{p.N}, {cfg.symmetry}, {cfg.distribution})")
        return 0

    runners = {
        "mcheck": harness.run_identity_suite,
        "locallaw": harness.run_local_law,
        "decay": harness.run_decay_profile,
        "que": harness.run_que,
        "traceless": harness.run_traceless_scaling,
        "spacing": harness.run_spacing,
        "flow": harness.run_flow,
    }
    report = runners[args.command](cfg)
    written = harness.emit_report(report, cfg.out, plots=cfg.plots)
    for r in report.rows:
        state = "pass" if r.passed else "FAIL"
        print(f"{report.experiment}/{r.name}: measured={r.measured:.6g} "
              f"bound={r.bound:.6g} [{state}]")
    for path in written:
        print(f"wrote {path}")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
