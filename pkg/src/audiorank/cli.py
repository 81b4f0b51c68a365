"""Command-line interface: ``audiorank <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import io
import logging
import os
import sys

import numpy as np

from . import data_io
from ._fileutil import atomic_write
from .dual_encoder import score_matrix
from .estimator import OBJECTIVE_CHOICES, loss_config_for
from .exceptions import AudioRankError, MissingSplit, ZeroVariance
from .metrics import (
    METRIC_NAMES,
    aggregate_reports,
    evaluate,
    format_table,
    mean_per_query_ap,
    paired_t_test,
)
from .relevance import DEFAULT_INTERCEPT, DEFAULT_SLOPE, RelevanceTransform, relevance_matrix, textual_similarity
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("audiorank")

DIRECTIONS = ("text-to-audio", "audio-to-text")


def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def _labelled_path(text):
    label, sep, path = text.partition("=")
    if not sep:
        label, path = os.path.splitext(os.path.basename(text))[0], text
    return label, path


# -- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global random seed (default 0)")
    common.add_argument("--config", help="flat 'key = value' file; explicit flags take precedence")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", help="JSON-lines manifest (required)")
    data.add_argument("--audio-bank", help="EMB1 audio bank (default: audio.emb next to the manifest)")
    data.add_argument("--caption-bank", help="EMB1 caption bank (default: captions.emb next to the manifest)")
    data.add_argument("--text-bank", help="EMB1 text backbone bank (default: the caption bank)")

    relevance = argparse.ArgumentParser(add_help=False)
    relevance.add_argument("--transform", choices=("logistic", "minmax"), default="logistic",
                           help="similarity-to-relevance map (default logistic)")
    relevance.add_argument("--intercept", type=float, default=DEFAULT_INTERCEPT,
                           help=f"logistic intercept (default {DEFAULT_INTERCEPT})")
    relevance.add_argument("--slope", type=float, default=DEFAULT_SLOPE,
                           help=f"logistic slope (default {DEFAULT_SLOPE})")
    relevance.add_argument("--clamp-diagonal", action="store_true",
                           help="force annotated pairs to relevance 1")

    parser = argparse.ArgumentParser(prog="audiorank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    cmds = {}

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic clustered dataset")
    p.add_argument("--clusters", type=int, help="number of clusters (required)")
    p.add_argument("--per-cluster", type=int, default=32, help="items per cluster (default 32)")
    p.add_argument("--d-audio", type=int, default=128, help="audio embedding dim (default 128)")
    p.add_argument("--d-text", type=int, default=768, help="caption embedding dim (default 768)")
    p.add_argument("--d-latent", type=int, default=16, help="shared latent dim (default 16)")
    p.add_argument("--noise", type=float, default=0.15, help="item noise sigma (default 0.15)")
    p.add_argument("--caption-noise", type=float, default=0.05,
                   help="per-caption noise sigma (default 0.05)")
    p.add_argument("--concentration", type=float, default=0.0,
                   help="prototype concentration in [0, 1) (default 0)")
    p.add_argument("--eval-fraction", type=float, default=0.25,
                   help="fraction of each cluster held out for eval (default 0.25)")
    p.add_argument("--train-captions", type=int, default=1, help="captions per train item (default 1)")
    p.add_argument("--eval-captions", type=int, default=5, help="captions per eval item (default 5)")
    p.add_argument("--force", action="store_true", help="write into a non-empty out-dir")
    cmds["gen-synth"] = p

    p = sub.add_parser("relevance", parents=[common, data, relevance],
                       help="export the corpus relevance matrix as CSV")
    p.add_argument("--split", choices=data_io.SPLITS, default="train", help="split (default train)")
    p.add_argument("--output", default="relevance.csv", help="file name inside out-dir")
    cmds["relevance"] = p

    p = sub.add_parser("train", parents=[common, data, relevance], help="train a dual encoder")
    p.add_argument("--objective", choices=sorted(OBJECTIVE_CHOICES), default="listnet-audio",
                   help="training objective (default listnet-audio)")
    p.add_argument("--batch-size", type=int, default=32, help="default 32")
    p.add_argument("--epochs", type=int, default=25, help="default 25")
    p.add_argument("--lr-max", type=float, default=2e-5, help="initial learning rate (default 2e-5)")
    p.add_argument("--lr-min", type=float, default=1e-7, help="final learning rate (default 1e-7)")
    p.add_argument("--omega", type=float, default=0.05, help="target temperature (default 0.05)")
    p.add_argument("--tau", type=float, default=0.05, help="prediction temperature (default 0.05)")
    p.add_argument("--d-hidden", type=int, default=256, help="head hidden width (default 256)")
    p.add_argument("--d-out", type=int, default=256, help="shared embedding dim (default 256)")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds; one model per seed")
    p.add_argument("--name", help="output file prefix (default: the objective)")
    p.add_argument("--eval-every", type=int, default=0,
                   help="log eval-split mAP@10 every N epochs (does not affect training)")
    p.add_argument("--record-time", action="store_true",
                   help="add wall-clock seconds to the history CSV (not reproducible)")
    cmds["train"] = p

    p = sub.add_parser("evaluate", parents=[common, data], help="retrieval metrics for checkpoints")
    p.add_argument("--checkpoint", action="append", type=_labelled_path,
                   help="[LABEL=]PATH; repeatable; '{seed}' in PATH is expanded per seed")
    p.add_argument("--direction", choices=DIRECTIONS, default="text-to-audio",
                   help="default text-to-audio")
    p.add_argument("--split", choices=data_io.SPLITS, default="eval", help="default eval")
    p.add_argument("--runs", type=int, help="number of runs (default: number of seeds)")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated run seeds (default --seed)")
    cmds["evaluate"] = p

    p = sub.add_parser("significance", parents=[common],
                       help="paired t-test on two per-query AP CSVs")
    p.add_argument("report_a", help="per-query CSV of system A (from evaluate)")
    p.add_argument("report_b", help="per-query CSV of system B")
    cmds["significance"] = p

    p = sub.add_parser("export-scores", parents=[common, data],
                       help="write the model score matrix as CSV")
    p.add_argument("--checkpoint", type=str, help="checkpoint path (required)")
    p.add_argument("--split", choices=data_io.SPLITS, default="eval", help="default eval")
    p.add_argument("--output", default="scores.csv", help="file name inside out-dir")
    cmds["export-scores"] = p

    return parser, cmds


REQUIRED = {
    "gen-synth": ("clusters",),
    "relevance": ("manifest",),
    "train": ("manifest",),
    "evaluate": ("manifest", "checkpoint"),
    "export-scores": ("manifest", "checkpoint"),
}


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser, subparser, path):
    try:
        values = read_config(path)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config: {exc}")
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key == "config" or not action.option_strings:
            parser.error(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                parser.error(f"config key {key!r} expects a boolean")
            defaults[key] = value.lower() in ("true", "1", "yes")
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [action.type(v.strip()) if action.type else v.strip()
                             for v in value.split(";")]
        else:
            try:
                defaults[key] = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError):
                parser.error(f"config key {key!r}: invalid value {value!r}")
            if action.choices is not None and defaults[key] not in action.choices:
                parser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
    subparser.set_defaults(**defaults)


def parse_args(argv):
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _apply_config(parser, cmds[args.command], args.config)
        args = parser.parse_args(argv)
    sub = cmds[args.command]
    for name in REQUIRED.get(args.command, ()):
        if getattr(args, name) is None:
            sub.error(f"--{name.replace('_', '-')} is required")
    return args, sub


# -- helpers ----------------------------------------------------------------

def _load_banks(args):
    base = os.path.dirname(os.path.abspath(args.manifest))
    audio = data_io.read_bank(args.audio_bank or os.path.join(base, "audio.emb"))
    captions = data_io.read_bank(args.caption_bank or os.path.join(base, "captions.emb"))
    text = data_io.read_bank(args.text_bank) if args.text_bank else None
    return data_io.read_manifest(args.manifest), audio, captions, text


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_rows(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def _transform(args):
    return RelevanceTransform(args.transform, args.intercept, args.slope)


# -- subcommands ------------------------------------------------------------

def cmd_gen_synth(args):
    if os.path.isdir(args.out_dir) and os.listdir(args.out_dir) and not args.force:
        raise AudioRankError(f"{args.out_dir} is not empty; pass --force to overwrite")
    spec = data_io.SyntheticSpec(
        n_clusters=args.clusters, items_per_cluster=args.per_cluster,
        d_audio=args.d_audio, d_text=args.d_text, d_latent=args.d_latent,
        noise_sigma=args.noise, caption_sigma=args.caption_noise,
        prototype_concentration=args.concentration, eval_fraction=args.eval_fraction,
        train_captions=args.train_captions, eval_captions=args.eval_captions, seed=args.seed,
    )
    ds = data_io.generate_synthetic(spec)
    data_io.write_bank(_out(args, "audio.emb"), ds.audio_bank)
    data_io.write_bank(_out(args, "captions.emb"), ds.caption_bank)
    data_io.write_manifest(_out(args, "manifest.jsonl"), ds.records)
    save_checkpoint(ds.oracle_encoder(), _out(args, "oracle.denc"))
    within, cross = data_io.cluster_cosine_summary(ds.caption_bank, ds.caption_clusters())
    n_eval = sum(r.split == "eval" for r in ds.records)
    print(f"items: {len(ds.records)} ({len(ds.records) - n_eval} train, {n_eval} eval)")
    print(f"captions: {ds.caption_bank.shape[0]}")
    print(f"dims: audio {spec.d_audio}, text {spec.d_text}, latent {spec.d_latent}")
    print(f"caption cosine: within-cluster {within:.4f}, cross-cluster {cross:.4f}")
    return 0


def cmd_relevance(args):
    records, audio, captions, _ = _load_banks(args)
    chosen = [r for r in records if r.split == args.split]
    if not chosen:
        raise MissingSplit(f"manifest has no {args.split!r} items")
    data_io._select(records, args.split, audio, captions)
    query_rows, query_ids = [], []
    for r in chosen:
        query_rows.extend(r.caption_rows)
        query_ids.extend(data_io.caption_id(r.item_id, k) for k in range(len(r.caption_rows)))
    annotated = [r.caption_rows[0] for r in chosen]
    sim = textual_similarity(captions[query_rows], captions[annotated], query_ids,
                             [r.item_id for r in chosen])
    rel = relevance_matrix(sim, _transform(args), clamp_diagonal=args.clamp_diagonal)
    path = _out(args, args.output)
    data_io.export_scores(rel.values, path, rel.row_ids, rel.col_ids)
    print(f"wrote {rel.values.shape[0]}x{rel.values.shape[1]} relevance matrix to {path}")
    return 0


def cmd_train(args):
    records, audio, captions, text = _load_banks(args)
    train_set = data_io.load_training_set(records, audio, captions, "train", text)
    eval_set = None
    if args.eval_every:
        eval_set = data_io.load_eval_set(records, audio, captions, "eval", text)
    name = args.name or args.objective
    for seed in args.seeds or [args.seed]:
        config = TrainConfig(
            batch_size=args.batch_size, epochs=args.epochs, lr_max=args.lr_max,
            lr_min=args.lr_min, loss=loss_config_for(args.objective, args.omega, args.tau),
            transform=_transform(args), clamp_diagonal=args.clamp_diagonal, seed=seed,
            d_hidden=args.d_hidden, d_out=args.d_out,
        )

        def report(epoch, model, _seed=seed):
            if eval_set is not None and epoch % args.eval_every == 0:
                r = evaluate(model, eval_set.text_inputs, eval_set.audio_inputs,
                             eval_set.text_to_audio, caption_ids=eval_set.caption_ids,
                             audio_ids=eval_set.audio_ids)
                print(f"seed {_seed} epoch {epoch}: eval mAP@10 {r.map10:.4f}", file=sys.stderr)

        model, history = train(train_set, config, on_epoch_end=report)
        ckpt = _out(args, f"{name}_seed{seed}.denc")
        save_checkpoint(model, ckpt)
        history.to_csv(_out(args, f"{name}_seed{seed}_history.csv"), include_time=args.record_time)
        print(f"seed {seed}: final loss {history.mean_loss[-1]:.6f} "
              f"({sum(history.seconds):.1f}s) -> {ckpt}")
    return 0


def _run_seeds(args):
    seeds = args.seeds or ([args.seed] if not args.runs else list(range(1, args.runs + 1)))
    if args.runs is not None and args.runs != len(seeds):
        raise AudioRankError(f"--runs {args.runs} but {len(seeds)} seeds given")
    return seeds


def cmd_evaluate(args):
    records, audio, captions, text = _load_banks(args)
    eval_set = data_io.load_eval_set(records, audio, captions, args.split, text)
    qrels = eval_set.qrels(args.direction)
    seeds = _run_seeds(args)
    summary, metric_rows, summary_rows = {}, [], []
    for label, template in args.checkpoint:
        reports = []
        for seed in seeds:
            model = load_checkpoint(template.format(seed=seed))
            rep = evaluate(model, eval_set.text_inputs, eval_set.audio_inputs, qrels,
                           args.direction, eval_set.caption_ids, eval_set.audio_ids)
            reports.append(rep)
            metric_rows.append([label, seed] + [f"{rep.metrics[m]:.17g}" for m in METRIC_NAMES])
        agg = aggregate_reports(reports)
        summary[label] = agg
        for m in METRIC_NAMES:
            summary_rows.append([label, m, f"{agg[m][0]:.17g}", f"{agg[m][1]:.17g}", len(seeds)])
        per_query = mean_per_query_ap(reports)
        _write_rows(_out(args, f"per_query_{label}.csv"), ["query_id", "ap@10"],
                    [[q, f"{v:.17g}"] for q, v in zip(reports[0].query_ids, per_query)])
    _write_rows(_out(args, "metrics.csv"), ["method", "seed", *METRIC_NAMES], metric_rows)
    _write_rows(_out(args, "summary.csv"), ["method", "metric", "mean", "sd", "runs"], summary_rows)
    table = format_table(summary)
    title = f"{args.direction} retrieval, {len(seeds)} run(s), mean ± sd (%)\n"
    atomic_write(_out(args, "report.txt"), (title + table).encode("utf-8"))
    sys.stdout.write(title + table)
    return 0


def _read_per_query(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r[0] for r in rows], np.array([float(r[1]) for r in rows])


def cmd_significance(args):
    ids_a, a = _read_per_query(args.report_a)
    ids_b, b = _read_per_query(args.report_b)
    if ids_a != ids_b:
        raise AudioRankError("the two reports cover different queries")
    try:
        res = paired_t_test(a, b)
    except ZeroVariance:
        raise AudioRankError("per-query differences have zero variance "
                             "(identical reports?); the t statistic is undefined") from None
    print(f"t({res.df}) = {res.t:.4f}, p = {res.p:.4g}")
    return 0


def cmd_export_scores(args):
    records, audio, captions, text = _load_banks(args)
    eval_set = data_io.load_eval_set(records, audio, captions, args.split, text)
    model = load_checkpoint(args.checkpoint)
    S, _ = score_matrix(model, eval_set.text_inputs, eval_set.audio_inputs)
    path = _out(args, args.output)
    data_io.export_scores(S, path, eval_set.caption_ids, eval_set.audio_ids)
    print(f"wrote {S.shape[0]}x{S.shape[1]} score matrix to {path}")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "relevance": cmd_relevance,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "significance": cmd_significance,
    "export-scores": cmd_export_scores,
}


def main(argv=None):
    try:
        args, _ = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (AudioRankError, OSError) as exc:
        print(f"audiorank {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
