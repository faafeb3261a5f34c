"""``projcgan <train|sweep|eval|morph|superres> --config PATH [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from threadpoolctl import threadpool_limits

from .config import ConfigError, load_config

COMMANDS = ("train", "sweep", "eval", "morph", "superres")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projcgan", description="Conditional GAN experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the config out_dir")
    return p


def _summary(result) -> str:
    if hasattr(result, "records"):
        return "\n".join(json.dumps(r, sort_keys=True) for r in result.records)
    if isinstance(result, dict):
        keep = {k: v for k, v in result.items() if isinstance(v, (int, float, str))}
        return json.dumps(keep, sort_keys=True)
    return str(result)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return 2
    from . import harness

    threads = os.environ.get("PROJCGAN_THREADS", "").strip()
    limit = int(threads) if threads else None
    run = {"train": harness.cmd_train, "sweep": harness.cmd_sweep, "eval": harness.cmd_eval,
           "morph": harness.cmd_morph, "superres": harness.cmd_superres}[args.command]
    with threadpool_limits(limits=limit):
        try:
            result = run(cfg)
        except (ValueError, FileNotFoundError) as e:
            print(f"projcgan {args.command}: {e}", file=sys.stderr)
            return 1
    print(_summary(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
