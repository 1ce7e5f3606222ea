"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import parse_config
from .errors import ConfigError, DataFormatError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("freqcl")


def build_parser():
    p = argparse.ArgumentParser(prog="freqcl", description="Frequency-decoupled rehearsal experiments.")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--mode", choices=("run", "ablate", "inspect-buffer", "count"), default="run")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load_config(args):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    try:
        return parse_config(args.config, overrides)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def _print(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_run(config):
    from .experiment import run_experiment
    from .model import save_checkpoint
    from .rehearsal import save_buffer
    from .report import emit_report

    report = run_experiment(config)
    paths = emit_report(report, config.output_dir)
    save_buffer(report.learner.buffer_, os.path.join(config.output_dir, "buffer.bin"))
    save_checkpoint(report.learner.net_, os.path.join(config.output_dir, "model.bin"))
    summary = report.summary()
    _print({k: summary[k] for k in ("acc_class_il", "acc_task_il", "forgetting_class_il", "flops_train")})
    log.info("wrote %s", ", ".join(sorted(paths.values())))


def cmd_ablate(config):
    from .experiment import run_ablation
    from .report import emit_ablation

    reports = run_ablation(config)
    path = emit_ablation(reports, config.output_dir)
    _print({name: rep.summary()["acc_class_il"] for name, rep in reports.items()})
    log.info("wrote %s", path)


def cmd_count(config):
    from .experiment import count_model

    counts = count_model(config)
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "counts.json"), "w") as fh:
        json.dump(counts, fh, indent=2, sort_keys=True)
    _print(counts)


def cmd_inspect_buffer(config):
    from .rehearsal import load_buffer

    path = os.path.join(config.output_dir, "buffer.bin")
    if not os.path.exists(path):
        raise DataFormatError(f"no buffer snapshot at {path}; run --mode run first")
    buf = load_buffer(path)
    tasks = {}
    for e in buf.entries:
        tasks[e.task_id] = tasks.get(e.task_id, 0) + 1
    first = buf.entries[0] if buf.entries else None
    _print({
        "path": path,
        "capacity": buf.capacity,
        "seen": buf.seen,
        "entries": len(buf),
        "class_counts": {str(k): v for k, v in buf.class_counts().items()},
        "task_counts": {str(k): v for k, v in sorted(tasks.items())},
        "low_shape": list(first.low.shape) if first else None,
        "high_shape": list(first.high.shape) if first else None,
        "has_logits": bool(first is not None and first.logits is not None),
        "bytes": buf.nbytes(),
    })


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "count": cmd_count, "inspect-buffer": cmd_inspect_buffer}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = _load_config(args)
        COMMANDS[args.mode](config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
