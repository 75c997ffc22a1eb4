"""Command line entry point: ``shipems <subcommand> --config FILE --seed N --out DIR``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .profiles import LoadProfile, ProfileError, ProfileSet, read_csv, write_csv

log = logging.getLogger("shipems")


class CliError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    if getattr(args, "clusters", None):
        cfg = dataclasses.replace(cfg, n_clusters=args.clusters, ship=cfg.ship.with_clusters(args.clusters))
    return cfg


def write_profile_set(pset: ProfileSet, out: Path) -> None:
    for split, profs in (("train", pset.train), ("validation", pset.validation)):
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        for p in profs:
            write_csv(p, d / f"{p.id}.csv")
    manifest = {"seed": pset.seed, "train": [p.id for p in pset.train],
                "validation": [p.id for p in pset.validation]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_profile_dir(path: str | Path) -> ProfileSet | list[LoadProfile]:
    """A ``generate-profiles`` output directory, or any directory of profile CSVs."""
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"profile directory {p} does not exist")
    if (p / "manifest.json").exists():
        man = json.loads((p / "manifest.json").read_text())
        train = tuple(read_csv(p / "train" / f"{i}.csv") for i in man["train"])
        val = tuple(read_csv(p / "validation" / f"{i}.csv") for i in man["validation"])
        return ProfileSet(train, val, int(man["seed"]))
    files = sorted(p.glob("*.csv"))
    if not files:
        raise CliError(f"no profile CSVs in {p}")
    return [read_csv(f) for f in files]


def _eval_profiles(args, cfg: RunConfig) -> list[LoadProfile]:
    from .harness import make_profiles

    if args.profiles:
        got = read_profile_dir(args.profiles)
        return list(got.validation) if isinstance(got, ProfileSet) else got
    return list(make_profiles(cfg, args.seed if args.seed is not None else None).validation)


def cmd_generate(args) -> int:
    from .harness import make_profiles

    cfg = _config(args)
    pset = make_profiles(cfg, args.seed)
    write_profile_set(pset, Path(args.out))
    print(f"wrote {len(pset.train)} training and {len(pset.validation)} validation profiles to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .harness import train_command

    cfg = _config(args)
    if args.workers:
        cfg = dataclasses.replace(cfg, n_workers=args.workers)
    pset = None
    if args.profiles:
        got = read_profile_dir(args.profiles)
        if not isinstance(got, ProfileSet):
            raise CliError("training needs a generate-profiles directory with train/validation splits")
        pset = got
    summary = train_command(cfg, args.out, base_seed=args.seed or 0, pset=pset)
    print(f"best seed {summary['best_seed']}: eval cost {summary['best_eval_cost']:.2f}, "
          f"validation cost {summary['validation_mean_cost']:.2f}, "
          f"{summary['n_converged']}/{cfg.n_seeds} converged")
    return 0


def cmd_evaluate(args) -> int:
    from .reports import baseline_report, evaluate_command

    cfg = _config(args)
    profiles = _eval_profiles(args, cfg)
    if args.checkpoint:
        blocks = evaluate_command(args.checkpoint, profiles, cfg, args.out, args.names)
    else:
        blocks = baseline_report(profiles, cfg, args.out)
    print((Path(args.out) / "report.txt").read_text().split("\n\n")[-1] if blocks else "")
    return 0


def cmd_benchmark(args) -> int:
    from .reports import benchmark_command

    cfg = _config(args)
    profiles = _eval_profiles(args, cfg)
    res = benchmark_command(args.checkpoint, profiles, cfg, args.out)
    for name, cost, ratio in res["rows"]:
        print(f"{name:<16} {cost:10.1f} {ratio:7.1f}%")
    return 0


def cmd_gradcheck(args) -> int:
    from . import nn

    rng = np.random.default_rng(args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    errs = []
    for i in range(args.nets):
        m = int(rng.integers(1, 5))
        h1, h2 = (int(v) for v in rng.integers(3, 9, 2))
        if i % 2 == 0:
            net = nn.init_net([m + 3, h1, h2, m], ["relu", "relu", "tanh"], rng, 0.04, 0.1)
            kind = "actor"
        else:
            net = nn.init_net([2 * m + 3, h1, h2, 1], ["relu", "relu", "identity"], rng)
            kind = "critic"
        x = rng.normal(size=(4, net.in_dim))
        if nn.near_relu_kink(net, x):
            rows.append([i, kind, net.in_dim, h1, h2, net.out_dim, "", "", "skipped: relu kink"])
            continue
        r = nn.gradcheck(net, x, rng.normal(size=(4, net.out_dim)))
        errs.append(r)
        rows.append([i, kind, net.in_dim, h1, h2, net.out_dim, repr(float(r.max())),
                     repr(float((r < 1e-4).mean())), "ok"])
    with open(out / "gradcheck.csv", "w") as fh:
        fh.write("net,kind,in,h1,h2,out,max_rel_err,frac_below_1e-4,status\n")
        for row in rows:
            fh.write(",".join(map(str, row)) + "\n")
    frac = float((np.concatenate(errs) < 1e-4).mean()) if errs else 0.0
    print(f"{len(errs)} networks checked, {100 * frac:.2f}% of parameters within 1e-4 relative error")
    return 0 if frac >= 0.99 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shipems", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", help="JSON config file (keys override the preset)")
        p.add_argument("--preset", default="desk", choices=["desk", "paper"])
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=need_out, help="output directory")
        p.add_argument("--clusters", type=int, help="override the number of fuel-cell clusters")
        return p

    p = common(sub.add_parser("generate-profiles", help="write a synthetic train/validation profile set"))
    p.set_defaults(func=cmd_generate)
    p = common(sub.add_parser("train", help="multi-seed training with periodic evaluation"))
    p.add_argument("--profiles", help="profile directory from generate-profiles")
    p.add_argument("--workers", type=int, help="parallel training runs")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("evaluate", help="cost/GWP breakdown report for one or two checkpoints"))
    p.add_argument("--checkpoint", nargs="*", default=[], help="agent checkpoint directories")
    p.add_argument("--names", nargs="*", help="column labels, one per checkpoint")
    p.add_argument("--profiles", help="profile directory (validation split is used)")
    p.set_defaults(func=cmd_evaluate)
    p = common(sub.add_parser("benchmark", help="compare an agent against the DP oracle"))
    p.add_argument("--checkpoint", help="agent checkpoint directory (omit for an oracle-only table)")
    p.add_argument("--profiles", help="profile directory (validation split is used)")
    p.set_defaults(func=cmd_benchmark)
    p = common(sub.add_parser("gradcheck", help="finite-difference check of network gradients"))
    p.add_argument("--nets", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProfileError, CliError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
