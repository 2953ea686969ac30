"""Command-line entry point.

Subcommands: collect, train, eval, report, serve, verify. Exit codes:
0 success, 1 usage error, 2 I/O or format error, 3 verification failure.
An optional JSON config file provides flag defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

from . import dataset, evaluator, sim, spaces, trainer, verify
from .dataset import ExpertFailureError, FormatError, MixSpec
from .trainer import CheckpointError, TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VERIFY = 3

_MIX_RE = re.compile(r"^(?:N(\d+)\+H(\d+)|N(\d+)|H(\d+))$")

# marks a flag as required, enforced after the config overlay rather than
# by argparse so a --config file can supply the value
_MISSING = object()
_REQ = {"default": _MISSING}


class UsageError(Exception):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_mix(text: str) -> MixSpec:
    """Parse a mix label like "N25+H75", "N50", or "H50"."""
    m = _MIX_RE.match(text.strip())
    if not m:
        raise UsageError(f"malformed mix {text!r}; expected N<d>+H<d>, "
                         f"N<d>, or H<d>")
    both_n, both_h, only_n, only_h = m.groups()
    if both_n is not None:
        return MixSpec(int(both_n), int(both_h))
    if only_n is not None:
        return MixSpec(int(only_n), 0)
    return MixSpec(0, int(only_h))


def build_parser() -> _Parser:
    parser = _Parser(prog="hdlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of flag defaults")
        return p

    # requiredness is checked after the config overlay (see _check_required)
    # so a config file can supply any of these values

    p = add("collect", "record expert demonstration episodes")
    p.add_argument("--task", **_REQ, choices=sorted(sim.HORIZON_CAPS))
    p.add_argument("--mode", **_REQ, choices=["naive", "hd"])
    p.add_argument("--episodes", type=int, **_REQ)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", **_REQ)
    p.add_argument("--belt-speed", type=float, default=None)
    p.add_argument("--spaces", default=None,
                   help="comma-separated atomic space indices (hd mode)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("train", "train a chunking BC policy on a dataset mix")
    p.add_argument("--data", **_REQ)
    p.add_argument("--mix", **_REQ, help='e.g. "N25+H75"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=TrainConfig.steps)
    p.add_argument("--out", **_REQ)
    p.add_argument("--no-mask-aug", action="store_true")

    p = add("eval", "evaluate a checkpoint with seeded rollouts")
    p.add_argument("--ckpt", **_REQ)
    p.add_argument("--task", **_REQ, choices=sorted(sim.HORIZON_CAPS))
    p.add_argument("--episodes", type=int, **_REQ)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", dest="json_out", default=None)
    p.add_argument("--occlude", action="store_true")
    p.add_argument("--belt-speed", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = add("report", "combine eval JSON files into markdown + CSV")
    p.add_argument("--inputs", nargs="+", **_REQ)
    p.add_argument("--out", **_REQ, help="output path prefix")

    p = add("serve", "run the single-session teleop gateway")
    p.add_argument("--port", type=int, **_REQ)
    p.add_argument("--task", **_REQ, choices=sorted(sim.HORIZON_CAPS))
    p.add_argument("--out", **_REQ)
    p.add_argument("--belt-speed", type=float, default=None)

    p = add("verify", "run one property suite")
    p.add_argument("--suite", **_REQ, choices=sorted(verify.SUITES))
    return parser


def _apply_config(parser, argv, args):
    """Overlay JSON config values as defaults, then reparse so explicit
    flags win."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            overlay = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(overlay, dict):
        raise UsageError("config must be a JSON object of flag values")
    sub = next(a for a in parser._subparsers._group_actions)
    cmd_parser = sub.choices[args.command]
    known = {a.dest for a in cmd_parser._actions}
    defaults = {}
    for key, value in overlay.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r} for "
                             f"{args.command}")
        defaults[dest] = value
    cmd_parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _check_required(parser, args) -> None:
    sub = next(a for a in parser._subparsers._group_actions)
    cmd_parser = sub.choices[args.command]
    missing = [action.option_strings[0]
               for action in cmd_parser._actions
               if action.option_strings
               and getattr(args, action.dest, None) is _MISSING]
    if missing:
        raise UsageError("the following arguments are required: "
                         + ", ".join(missing))


def _collect_one(task, mode, seed, out_dir, belt_speed, space_index):
    ep = dataset.record_episode(task, mode, seed, belt_speed, space_index)
    path = os.path.join(out_dir, dataset.episode_filename(ep))
    dataset.write_episode(ep, path)
    return path


def _cmd_collect(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.mode == "hd":
        n_spaces = len(spaces.segment_task(args.task))
        if args.spaces is None:
            indices = list(range(n_spaces))
        else:
            try:
                indices = [int(t) for t in args.spaces.split(",")]
            except ValueError as exc:
                raise UsageError(f"bad --spaces list: {args.spaces!r}") from exc
            if not indices or any(not 0 <= i < n_spaces for i in indices):
                raise UsageError(f"--spaces indices must lie in "
                                 f"[0, {n_spaces}) for {args.task}")
    else:
        if args.spaces is not None:
            raise UsageError("--spaces only applies to --mode hd")
        indices = [None]

    os.makedirs(args.out, exist_ok=True)
    jobs = [(args.task, args.mode, args.seed + i, args.out, args.belt_speed,
             indices[i % len(indices)]) for i in range(args.episodes)]
    if args.jobs == 1:
        for job in jobs:
            _collect_one(*job)
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_collect_one, *job) for job in jobs]
            for f in futures:
                f.result()
    print(f"wrote {args.episodes} episodes to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    mix = parse_mix(args.mix)
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    handle = dataset.build_mix(args.data, mix, seed=args.seed)
    if args.no_mask_aug:
        cfg = TrainConfig(steps=args.steps, seed=args.seed, mask=None)
    else:
        cfg = TrainConfig(steps=args.steps, seed=args.seed)
    params, log = trainer.train(handle, cfg)
    trainer.save_checkpoint(params, args.out, cfg.digest())
    handle.save_manifest(args.out + ".manifest.json")
    trainer.write_loss_log(log, args.out + ".loss.csv")
    print(f"trained {mix.label()} for {cfg.steps} steps -> {args.out} "
          f"(final loss {log[-1][1]:.4f})")
    return EXIT_OK


def _eval_shard(ckpt, task, seeds, belt_speed, occlude):
    params = trainer.load_checkpoint(ckpt)
    return [evaluator.rollout(params, task, s, belt_speed, occlude)
            for s in seeds]


def _cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    seeds = [args.seed + i for i in range(args.episodes)]
    if args.jobs == 1:
        params = trainer.load_checkpoint(args.ckpt)
        results = [evaluator.rollout(params, args.task, s, args.belt_speed,
                                     args.occlude) for s in seeds]
    else:
        if not os.path.exists(args.ckpt):
            raise FileNotFoundError(args.ckpt)
        shards = [seeds[i::args.jobs] for i in range(args.jobs)]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_eval_shard, args.ckpt, args.task, shard,
                                   args.belt_speed, args.occlude)
                       for shard in shards if shard]
            by_seed = {r.seed: r for f in futures for r in f.result()}
        results = [by_seed[s] for s in seeds]
    metrics = evaluator.aggregate(results)
    payload = json.dumps(metrics.to_json(), sort_keys=True, indent=2)
    if args.json_out:
        _atomic_write_text(args.json_out, payload + "\n")
    print(payload)
    return EXIT_OK


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_report(args) -> int:
    entries = []
    for path in args.inputs:
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path} is not valid JSON: {exc}") from exc
        label = os.path.splitext(os.path.basename(path))[0]
        try:
            evaluator.Metrics.from_json(payload)  # shape validation
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path} is not an eval metrics file") from exc
        entries.append({"label": label, "metrics": payload})
    markdown, csv_text = evaluator.compare_report(entries)
    _atomic_write_text(args.out + ".md", markdown)
    _atomic_write_text(args.out + ".csv", csv_text)
    print(f"wrote {args.out}.md and {args.out}.csv")
    return EXIT_OK


def _cmd_serve(args) -> int:
    from . import gateway
    gateway.serve(port=args.port, task_id=args.task, out_dir=args.out,
                  belt_speed=args.belt_speed)
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = verify.run_suite(args.suite)
    print(json.dumps(report, indent=2, default=str))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


_COMMANDS = {
    "collect": _cmd_collect,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "serve": _cmd_serve,
    "verify": _cmd_verify,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        args = _apply_config(parser, argv, args)
        _check_required(parser, args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError, FileNotFoundError, OSError,
            KeyError, ExpertFailureError, ValueError) as exc:
        print(f"I/O or format error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
