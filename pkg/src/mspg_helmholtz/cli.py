"""Command line entry point: ``mspg-helmholtz {run,audit,decay,sweep-k}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError
from .experiment import (
    RunConfig,
    audit,
    config_dict,
    decay_study,
    emit_plot_data,
    load_config,
    parse_size,
    preset,
    run_experiment,
    sweep_k,
    write_json,
)

log = logging.getLogger("mspg_helmholtz")


def _list(parse):
    def convert(text):
        return [parse(v) for v in text.split(",") if v.strip()]

    return convert


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with dotted keys")
    common.add_argument("--preset", choices=["example1", "example2", "example3"])
    common.add_argument("--paper-scale", action="store_true", help="k=32, h=2^-8, H=2^-3..2^-6")
    common.add_argument("--k", type=float)
    common.add_argument("--m", type=_list(int), help="oversampling list, e.g. 1,2,3")
    common.add_argument("--H-list", dest="H_list", type=_list(parse_size), help="e.g. 2^-3,2^-4")
    common.add_argument("--h-level", type=int, help="fine size h = 2^-LEVEL")
    common.add_argument("--out-dir")
    common.add_argument("--max-fine-dofs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mspg-helmholtz", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="convergence study")
    sub.add_parser("audit", parents=[common], help="stability hypotheses check")
    dec = sub.add_parser("decay", parents=[common], help="corrector decay in m")
    dec.add_argument("--node", type=int, help="coarse node id (default: nearest the centre)")
    sw = sub.add_parser("sweep-k", parents=[common], help="stability ratio over k")
    sw.add_argument("--k-list", type=_list(float), default=[4.0, 8.0, 16.0, 32.0])
    return parser


def config_from_args(args) -> RunConfig:
    base = preset(args.preset, args.paper_scale) if args.preset else (
        preset("example1", True) if args.paper_scale else RunConfig()
    )
    overrides = {}
    if args.k is not None:
        overrides["physics.k"] = args.k
    if args.m:
        overrides["method.m_list"] = args.m
        overrides["decay.m_list"] = args.m
    if args.H_list:
        overrides["mesh.H_list"] = args.H_list
    if args.h_level is not None:
        overrides["mesh.h"] = 2.0 ** -args.h_level
    if args.out_dir:
        overrides["output.dir"] = args.out_dir
    if args.max_fine_dofs:
        overrides["run.max_fine_dofs"] = args.max_fine_dofs
    return load_config(args.config, overrides, base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(config.out_dir)

    if args.command == "run":
        table = run_experiment(config, log.info)
        path = table.write(out)
        slopes = {}
        for kind in ("V", "L2"):
            for label, (_, slope) in emit_plot_data(table, kind, out).items():
                slopes[f"{kind}/{label}"] = slope
        write_json(out / "report.json", {
            "config": config_dict(config), "timings": table.timings,
            "row_timings": [r.timings for r in table.rows], "slopes": slopes, "notes": table.notes,
        })
        for note in table.notes:
            print(f"warning: {note}", file=sys.stderr)
        print(f"wrote {path} ({len(table.rows)} rows)")
        return 0

    if args.command == "audit":
        report = audit(config)
        write_json(out / "report.json", report)
        verdict = {True: "PASS", False: "FAIL", None: "UNSUPPORTED"}[report["passed"]]
        print(f"{config.example}: {verdict} (geometry {'ok' if report['geometry_ok'] else 'violated'})")
        return 0

    if args.command == "decay":
        prof = decay_study(config, args.node)
        emit_plot_data([prof], "decay", out)
        write_json(out / "report.json", {
            "node": prof.node, "m": prof.m_values, "deviation": prof.deviations,
            "ratios": prof.ratios.tolist(), "theta_hat": prof.theta_hat,
        })
        print(f"node {prof.node}: theta_hat = {prof.theta_hat:.4g}")
        return 0

    if args.command == "sweep-k":
        pairs = sweep_k(config, args.k_list)
        write_json(out / "report.json", {"k": [k for k, _ in pairs], "ratio": [r for _, r in pairs]})
        for k, r in pairs:
            print(f"k={k:g} ratio={r:.6g}")
        return 0
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
