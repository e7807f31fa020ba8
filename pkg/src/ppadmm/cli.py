"""Command line entry point: ``ppadmm {keygen,run,bench,grid}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .harness import KINDS, Experiment, make_keys, run_experiment

KEY_CHOICES = (1024, 2048, 4096, 64)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of experiment fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--key-bits", type=int, choices=KEY_CHOICES)
    p.add_argument("--delta", type=int)
    p.add_argument("--nodes", type=int, help="edge node count K")
    p.add_argument("--variant", choices=("basic", "collab"))
    p.add_argument("--carrier", choices=("sim", "tcp"))
    p.add_argument("--out", help="directory for CSV tables and manifest.json")
    p.add_argument("--iters", type=int)


def _experiment(kind: str, args: argparse.Namespace, **extra) -> Experiment:
    fields = {}
    if args.config:
        fields.update(json.loads(Path(args.config).read_text()))
        kind = fields.pop("kind", kind)
    flags = {"seed": args.seed, "key_bits": args.key_bits, "delta": args.delta,
             "K": args.nodes, "variant": args.variant, "carrier": args.carrier,
             "out": args.out, "iters": args.iters, **extra}
    fields.update({k: v for k, v in flags.items() if v is not None})
    return Experiment.for_kind(kind, **fields)


def _report(tables) -> None:
    for name, rows in tables.items():
        print(f"# {name}: {len(rows)} rows")
        for row in rows[-3:] if len(rows) > 12 else rows:
            print(json.dumps(row, default=str))


def cmd_keygen(args) -> int:
    bits = args.key_bits or 2048
    keys = make_keys(bits, args.seed or 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "public.key").write_bytes(keys.public.to_bytes())
    (out / "private.key").write_bytes(keys.private.to_bytes())
    print(f"wrote {bits}-bit keypair to {out}")
    return 0


def cmd_run(args) -> int:
    _report(run_experiment(_experiment(args.kind, args, density=args.density, M=args.rows,
                                       N=args.cols, encrypted_iters=args.encrypted_iters)))
    return 0


def cmd_bench(args) -> int:
    extra = {"ops": tuple(args.ops) if args.ops else None, "n_samples": args.samples,
             "repeats": args.repeats}
    if args.key_bits:
        extra["key_sizes"] = (args.key_bits,)
    _report(run_experiment(_experiment("throughput", args, **extra)))
    return 0


def cmd_grid(args) -> int:
    extra = {"buses": args.buses, "avg_degree": args.degree, "encrypt_grid": args.encrypt or None,
             "data_ratios": tuple(args.ratios) if args.ratios else None,
             "noise_std": args.noise}
    _report(run_experiment(_experiment("power_grid", args, **extra)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppadmm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a deterministic keypair")
    _common(p)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("run", help="run an experiment")
    _common(p)
    p.add_argument("--kind", choices=KINDS, default="mse_compare")
    p.add_argument("--density", type=float, help="nonzero fraction of x_true")
    p.add_argument("--rows", type=int, help="M")
    p.add_argument("--cols", type=int, help="N")
    p.add_argument("--encrypted-iters", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="modular arithmetic throughput")
    _common(p)
    p.add_argument("--ops", nargs="+", choices=("ModMult", "ModExp", "EP", "EP_CRT"))
    p.add_argument("--samples", type=int)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="power network topology reconstruction")
    _common(p)
    p.add_argument("--buses", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--ratios", type=float, nargs="+", help="samples per bus count")
    p.add_argument("--noise", type=float)
    p.add_argument("--encrypt", action="store_true", help="also run the encrypted pipeline")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
