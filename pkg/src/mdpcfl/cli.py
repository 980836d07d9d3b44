"""Command line entry point: ``mdpcfl <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from mdpcfl import config as cfgmod, security, simulation
from mdpcfl._accel import backend_name
from mdpcfl.errors import MdpcflError
from mdpcfl.mdpc_code import count_peeling_failures, keygen, save_key

log = logging.getLogger("mdpcfl")


def _load(args) -> cfgmod.ExperimentConfig:
    src = args.config or "toy"
    cfg = cfgmod.load_config(src) if os.path.exists(src) else cfgmod.preset(src)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "delta", None) is not None:
        cfg.delta = args.delta
    if getattr(args, "epochs", None) is not None:
        cfg.learning.epochs = args.epochs
    return cfg.validate()


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_keygen(args):
    cfg = _load(args)
    c = cfg.code
    seed = args.seed if args.seed is not None else c.key_seed
    t0 = time.perf_counter()
    key = keygen(c.n, c.k, c.check_degree, seed=seed)
    out = args.out or "key.npz"
    save_key(key, out)
    log.info("key %s written to %s in %.1f s (%s backend)", key.key_id, out, time.perf_counter() - t0, backend_name())
    print(out)


def cmd_fer(args):
    cfg = _load(args)
    key = simulation.get_key(cfg)
    seed = args.seed if args.seed is not None else 0
    fails = count_peeling_failures(key.h, cfg.support.t_tot, args.trials, seed=seed, n_jobs=args.jobs)
    doc = {
        "n": key.h.n, "k": key.g.k, "check_degree": key.h.check_degree,
        "t_tot": cfg.support.t_tot, "trials": args.trials, "seed": seed,
        "failures": fails, "fer": fails / args.trials,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_security(args):
    rows = security.table(nu=args.nu)
    text = security.table_csv(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _emit(tl, out, stem, baseline=None, cfg=None):
    simulation.emit_results(tl, "csv", os.path.join(out, f"{stem}.csv"))
    simulation.emit_results(tl, "json", os.path.join(out, f"{stem}.json"), baseline=baseline, cfg=cfg)
    if tl.trace:
        simulation.emit_results(tl, "trace", os.path.join(out, f"{stem}_trace.json"))


def cmd_simulate(args):
    cfg = _load(args)
    out = _outdir(args.out or "results")
    world = simulation.build_world(cfg)
    coded = simulation.run_simulation(cfg, world)
    base = simulation.run_baseline(cfg, world) if args.with_baseline else None
    _emit(coded, out, "coded", base, cfg)
    if base is not None:
        _emit(base, out, "baseline", None, cfg)
    print(json.dumps(coded.summary(base), sort_keys=True))


def cmd_baseline(args):
    cfg = _load(args)
    out = _outdir(args.out or "results")
    tl = simulation.run_baseline(cfg, simulation.build_world(cfg, with_crypto=False))
    _emit(tl, out, "baseline", None, cfg)
    print(json.dumps(tl.summary(), sort_keys=True))


def cmd_report(args):
    with open(args.coded) as fh:
        coded = json.load(fh)
    with open(args.baseline) as fh:
        base = json.load(fh)
    text = json.dumps(simulation.report(coded, base), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdpcfl", description="MDPC-encrypted federated learning with adaptive data sharing")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help=f"JSON config file or preset name ({', '.join(cfgmod.PRESETS)}); default toy")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("keygen", help="build a PEG parity-check matrix and its generator")
    common(sp, "key file (default key.npz)")
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("fer", help="Monte-Carlo peeling failure rate")
    common(sp, "JSON result file")
    sp.add_argument("--trials", type=int, default=200_000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_fer)

    sp = sub.add_parser("security", help="security-level table")
    sp.add_argument("--out", help="CSV file")
    sp.add_argument("--nu", type=int, default=2000, help="number of ciphertext rows seen by an attacker")
    sp.set_defaults(func=cmd_security)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "run the coded scheme"),
        ("baseline", cmd_baseline, "run mini-batch FL"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp, "output directory (default results/)")
        sp.add_argument("--delta", type=float, help="straggler threshold in seconds")
        sp.add_argument("--epochs", type=int)
        if name == "simulate":
            sp.add_argument("--with-baseline", action="store_true", help="also run the baseline and report speed-up")
        sp.set_defaults(func=func)

    sp = sub.add_parser("report", help="speed-up between a coded and a baseline JSON summary")
    sp.add_argument("--coded", required=True)
    sp.add_argument("--baseline", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MdpcflError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
