"""Command-line entry point: ``tnaif {dataset,train,beliefs,plan,run}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .agent import History, Preferences, g_table_csv, parse_history, run_episode, select_action
from .env import TMaze, enumerate_all_paths, read_dataset, write_dataset
from .errors import IO_EXIT_CODE, ParseError, QueryError, TnaifError
from .features import Action, Context, modality_marginals
from .mps import SequenceMPS
from .training import TrainConfig, init_model, train

log = logging.getLogger("tnaif")


def _write_manifest(out: Path, command: str, args: argparse.Namespace, inputs, outputs, start: float) -> None:
    manifest = {
        "command": command,
        "config": str(args.config) if getattr(args, "config", None) else None,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "duration_s": round(time.perf_counter() - start, 3),
    }
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8", newline="\n")


def cmd_dataset(args) -> int:
    start = time.perf_counter()
    paths = enumerate_all_paths()
    write_dataset(paths, args.out)
    _write_manifest(args.out, "dataset", args, [], [args.out], start)
    log.info("wrote %d trajectories to %s", len(paths), args.out)
    return 0


def cmd_train(args) -> int:
    start = time.perf_counter()
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = TrainConfig(**{**config.__dict__, "rng_seed": args.seed})
    args.seed = config.rng_seed
    data = read_dataset(args.dataset)
    model = init_model(config)

    def progress(epoch, loss, lr):
        if epoch % 50 == 0 or epoch == config.epochs:
            log.info("epoch %d  nll %.5f  lr %.3g  bonds %s", epoch, loss, lr, model.bond_dims)

    model, report = train(model, data, config, on_epoch=progress)
    model.normalize()
    model.save(args.out)
    report_path = args.out.with_suffix(".report.csv")
    report_path.write_text(report.to_csv(), encoding="utf-8", newline="\n")
    inputs = [args.dataset] + ([args.config] if args.config else [])
    _write_manifest(args.out, "train", args, inputs, [args.out, report_path], start)
    log.info("final nll %.5f (ln|D| = %.5f)", report.loss_history[-1], np.log(len(data)))
    return 0


def _history(text: str | None):
    observations, actions = parse_history(text or "")
    if not observations:
        raise ParseError("history must contain at least the first observation")
    return observations, actions


def cmd_beliefs(args) -> int:
    """Per-modality marginals of the next observation for each candidate action."""
    model = SequenceMPS.load(args.model)
    observations, actions = _history(args.history)
    if len(actions) == len(observations):
        candidates = [actions.pop()]
    elif args.action is not None:
        candidates = [Action(args.action)]
    else:
        candidates = list(Action)
    if args.action is not None and candidates != [Action(args.action)]:
        raise QueryError("action given both in --history and --action")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["action", "modality", "value", "probability"])
    env = None
    for a in candidates:
        q, env = model.predictive(observations, actions, a, env=env)
        for name, marg in zip(("location", "reward", "context"), modality_marginals(q.probs)):
            for value, p in enumerate(marg):
                writer.writerow([int(a), name, value, format(p, ".10g")])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_plan(args) -> int:
    model = SequenceMPS.load(args.model)
    observations, actions = _history(args.history)
    if len(actions) != len(observations) - 1:
        raise ParseError("a planning history must end with an observation")
    decision = select_action(model, History(tuple(observations), tuple(actions)), Preferences())
    _emit(g_table_csv(decision), args.out)
    log.info("selected action %d (%s)", decision.action, decision.action.name.lower())
    return 0


def cmd_run(args) -> int:
    """Play episodes, alternating the true context between right and left."""
    start = time.perf_counter()
    model = SequenceMPS.load(args.model)
    seeds = np.random.SeedSequence(args.seed).spawn(args.episodes)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["episode", "context", "o1", "a1", "o2", "a2", "o3", "reward", "won"])
    wins = 0
    prefs = Preferences()
    for k, seed in enumerate(seeds):
        ep = run_episode(model, TMaze(np.random.default_rng(seed)), prefs, context=Context(k % 2))
        o1, o2, o3 = ep.observations
        a1, a2 = ep.actions
        writer.writerow([k, int(ep.context), o1, int(a1), o2, int(a2), o3, int(ep.reward), int(ep.won)])
        wins += ep.won
    out = args.out
    _emit(buf.getvalue(), out)
    summary = f"episodes={args.episodes} wins={wins} win_rate={wins / args.episodes:.4f}\n"
    sys.stderr.write(summary)
    if out is not None:
        _write_manifest(out, "run", args, [args.model], [out], start)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnaif", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="write every T-maze path as CSV")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("beliefs", help="predicted next-observation marginals")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--history", required=True, help="e.g. o0.0.0,a3,o3.0.0")
    p.add_argument("--action", type=int, choices=range(4))
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_beliefs)

    p = sub.add_parser("plan", help="expected free energy of each next action")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="play episodes with the planning agent")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except TnaifError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"error: {exc.filename or ''}: {exc.strerror or exc}\n")
        return IO_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
