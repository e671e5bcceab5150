"""Command-line entry point.

Every subcommand except ``fuzz`` and ``replay`` works on the output
directory of an earlier ``fuzz`` run, which holds the target source, the
effective config, the record log and the seed queue.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, attention, markov
from .attention import UntrainableBlock
from .coverage import GlobalCoverage, load_record_log
from .mutation import MutatorId, load_dictionary
from .orchestrator import ConfigError, FuzzerConfig, load_corpus, run_campaign
from .target import TargetSyntaxError, build_cfg, execute, load_target

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heatfuzz", description="Reward-directed, attention-guided fuzzing of toy targets.")
    p.add_argument("--version", action="version", version=f"heatfuzz {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fuzz", help="run a campaign")
    f.add_argument("--target", required=True, help="target program (.tgt)")
    f.add_argument("--corpus", required=True, help="directory of seed files, or one file")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--mode", choices=("attuzz", "baseline"))
    f.add_argument("--seed", type=int, help="campaign rng seed")
    f.add_argument("--max-execs", type=int, help="execution budget")
    f.add_argument("--config", help="key = value file of FuzzerConfig fields")
    f.add_argument("--dict", help="token dictionary, one token per line")

    r = sub.add_parser("rewards", help="recompute rewards and critical blocks from a campaign")
    r.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the classifier of one block on a campaign's records")
    t.add_argument("--out", required=True)
    t.add_argument("--block", required=True)

    h = sub.add_parser("heatmap", help="heat map of one (seed, mutator) pair")
    h.add_argument("--out", required=True)
    h.add_argument("--seed-id", required=True, type=int)
    h.add_argument("--mutator", required=True, help="label (e.g. arth-) or name (e.g. ARITH_MINUS)")
    h.add_argument("--block", help="model to use (default: every trained block the seed reaches)")

    rp = sub.add_parser("replay", help="execute one input and print its path")
    rp.add_argument("--target", required=True)
    rp.add_argument("--input", required=True)

    s = sub.add_parser("stats", help="print a campaign's summary")
    s.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# campaign directory helpers


def _need(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found (was this directory written by 'heatfuzz fuzz'?)")
    return path


def _load_run(out: Path):
    target = load_target(_need(out / "target.tgt"))
    config = FuzzerConfig.from_file(_need(out / "config.txt"))
    dictionary = load_dictionary(config.dict_path) if config.dict_path else []
    return target, config, dictionary


def _load_seeds(out: Path) -> dict[int, bytes]:
    queue = _need(out / "queue")
    return {int(p.stem): p.read_bytes() for p in sorted(queue.glob("*.bin"))}


def _load_coverage(out: Path, target) -> GlobalCoverage:
    counts = {}
    with open(_need(out / "counts.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            a, b, n = line.rstrip("\n").split(",")
            counts[(a, b)] = int(n)
    return GlobalCoverage.from_counts(target.block_ids, counts, covered=[target.init])


# ---------------------------------------------------------------------------
# subcommands


def cmd_fuzz(args) -> int:
    config = FuzzerConfig.from_file(args.config) if args.config else FuzzerConfig()
    flags = {"mode": args.mode, "rng_seed": args.seed, "max_execs": args.max_execs}
    if args.dict:
        flags["dict_path"] = str(Path(args.dict).resolve())
    config = config.replace(**{k: v for k, v in flags.items() if v is not None})
    target = load_target(args.target)
    corpus = load_corpus(args.corpus)
    dictionary = load_dictionary(config.dict_path) if config.dict_path else []
    report = run_campaign(config, target, corpus, out_dir=args.out, dictionary=dictionary)
    sys.stdout.write(report.summary())
    print(f"elapsed_seconds: {report.elapsed:.1f}")
    return EXIT_OK


def cmd_rewards(args) -> int:
    out = Path(args.out)
    target, config, _ = _load_run(out)
    gc = _load_coverage(out, target)
    cfg = build_cfg(target)
    dtmc = markov.estimate_dtmc(gc, cfg)
    rewards = markov.solve_rewards(dtmc, gc.covered)
    sel = markov.select_critical_blocks(rewards, gc.covered, cfg, dtmc, config.k_percent, config.k_prime,
                                        init=target.init)
    markov.write_rewards_csv(out / "rewards.csv", dtmc, rewards, gc.covered, sel, target.init)
    print(f"{'block':<8}{'covered':>8}{'reward':>12}{'reach':>10}  critical")
    for b in dtmc.states:
        print(f"{b:<8}{int(b in gc.covered):>8}{rewards[b]:>12.6f}{sel.reach.get(b, float('nan')):>10.4f}"
              f"  {'yes' if b in sel.critical else ''}")
    print(f"targets: {','.join(sel.target_uncovered) or '-'}")
    print(f"critical: {','.join(sel.critical) or '-'}")
    if not rewards.converged:
        print(f"warning: value iteration stopped at residual {rewards.residual:.3g}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    target, config, dictionary = _load_run(out)
    if args.block not in target.index:
        raise UsageError(f"unknown block {args.block!r}; blocks are {', '.join(target.block_ids)}")
    records = load_record_log(_need(out / "records.log"))
    seeds = _load_seeds(out)
    rng = np.random.default_rng([config.rng_seed, 0])
    data = attention.build_dataset(records, seeds, target.index[args.block], rng, dictionary,
                                   config.max_input_len, config.max_train_per_class)
    model, metrics = attention.train(data, config.train)
    models = out / "models"
    models.mkdir(exist_ok=True)
    attention.save_params(model, models / f"{args.block}.model")
    print(f"block {args.block}: {metrics.n_train} train / {metrics.n_holdout} held out, "
          f"train_acc {metrics.train_acc:.4f}, holdout_acc {metrics.holdout_acc:.4f}")
    print(f"saved {models / (args.block + '.model')}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    out = Path(args.out)
    target, config, dictionary = _load_run(out)
    try:
        mut = MutatorId.from_label(args.mutator)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seeds = _load_seeds(out)
    if args.seed_id not in seeds:
        raise UsageError(f"no seed {args.seed_id} in {out / 'queue'}")
    visited = set(execute(target, seeds[args.seed_id], config.step_limit).block_seq)
    models = out / "models"
    if args.block:
        blocks = [args.block]
    else:
        blocks = sorted((p.stem for p in models.glob("*.model")), key=lambda b: target.index.get(b, 1 << 30))
        blocks = [b for b in blocks if b in visited]
        if not blocks:
            raise FileNotFoundError(f"no trained model in {models} for a block seed {args.seed_id} reaches; "
                                    "run 'heatfuzz train' first")
    records = load_record_log(_need(out / "records.log"))
    for block in blocks:
        model = attention.load_params(_need(models / f"{block}.model"))
        samples = attention.pair_samples(records, seeds, args.seed_id, int(mut), model.n, dictionary)
        hm = attention.extract_heatmap(model, args.seed_id, mut, samples)
        if hm is None:
            print(f"block {block}: no single-site records for seed {args.seed_id} with {mut.label}")
            continue
        path = out / f"heatmap_{args.seed_id}_{mut.label}_{block}.csv"
        attention.write_heatmap_csv(hm, path)
        mean = float(hm.heat[:hm.valid_len].mean())
        hot = [i for i in range(hm.valid_len) if hm.heat[i] > mean]
        print(f"block {block}: {len(samples)} samples, hot bytes {hot}")
        print("  " + " ".join(f"{v:.3f}" for v in hm.heat[:hm.valid_len]))
        print(f"  wrote {path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    target = load_target(args.target)
    data = Path(args.input).read_bytes()
    trace = execute(target, data, 4096)
    print(" -> ".join(trace.block_seq))
    print(f"crashed: {str(trace.crashed).lower()}")
    return EXIT_OK


def cmd_stats(args) -> int:
    out = Path(args.out)
    sys.stdout.write(_need(out / "report.txt").read_text(encoding="utf-8"))
    rows = (out / "critical_ratio.csv").read_text(encoding="utf-8").splitlines()[1:]
    if rows:
        print("critical_ratio (window_end, generated, hits, ratio):")
        for row in rows:
            print("  " + row)
    return EXIT_OK


COMMANDS = {
    "fuzz": cmd_fuzz, "rewards": cmd_rewards, "train": cmd_train, "heatmap": cmd_heatmap,
    "replay": cmd_replay, "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"heatfuzz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"heatfuzz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TargetSyntaxError, UntrainableBlock, ValueError) as exc:
        print(f"heatfuzz: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
