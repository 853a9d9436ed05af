"""Single command-line entry point.

Every subcommand that produces files writes a manifest (resolved config,
seed, library versions) into its output directory, so identical (config,
seed) pairs give identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arch import (
    ArchError,
    Geometry,
    HeadConfig,
    expand_layers,
    parse_arch_file,
    render_arch_file,
    spec_from_dict,
    spec_to_dict,
)
from .complexity import count_complexity


def _geometry(text: str) -> Geometry:
    try:
        h, w, c = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("geometry must look like 221x221x3")
    return Geometry(h, w, c)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _head_from_args(args) -> HeadConfig:
    return HeadConfig(
        spp_levels=args.spp,
        hidden_fc_widths=args.fc,
        dropout_rate=args.dropout,
        num_classes=args.classes,
    )


def _write_manifest(out_dir: Path, subcommand: str, config: dict, seed):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "versions": {"phototag": __version__, "numpy": np.__version__},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_arch_parse(args) -> int:
    spec = parse_arch_file(Path(args.arch).read_text())
    payload = json.dumps(spec_to_dict(spec), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload)
    else:
        sys.stdout.write(payload)
    return 0


def cmd_arch_render(args) -> int:
    data = json.loads(Path(args.infile).read_text())
    sys.stdout.write(render_arch_file(spec_from_dict(data)))
    return 0


def cmd_complexity(args) -> int:
    spec = parse_arch_file(Path(args.arch).read_text())
    plan = expand_layers(spec, args.input, _head_from_args(args))
    report = count_complexity(plan)
    out = report.to_csv() if args.report == "csv" else report.to_table()
    sys.stdout.write(out)
    sys.stdout.write(
        f"# {spec.name}: {report.total_ops / 1e6:.1f}M multiply-adds, "
        f"{report.total_params / 1e6:.1f}M params\n"
    )
    return 0


def cmd_tags(args) -> int:
    from . import tagselect as ts

    result = ts.ingest_metadata_file(args.metadata)
    if result.skipped_lines:
        print(f"skipped {result.skipped_lines} malformed lines", file=sys.stderr)
    stats = ts.compute_tag_stats(result.records)

    if args.tags_cmd == "stats":
        rows = sorted(stats.photo_count)
        payload = "".join(
            f"{t}\t{stats.photo_count[t]}\t{stats.user_count[t]}\n" for t in rows
        )
        _emit(args, payload, "stats.tsv")
        return 0

    if args.tags_cmd == "rank":
        ranked = ts.rank_tags(stats, args.key, args.n)
        _emit(args, "".join(f"{t}\t{c}\n" for t, c in ranked), "ranking.tsv")
        return 0

    if args.tags_cmd == "select":
        rules = ts.load_rules(args.rules)
        ranking = ts.rank_tags(stats, args.key, args.n)
        vocab = ts.apply_exclusions(ranking, rules, stats)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        ts.save_vocabulary(out_dir / "vocab.txt", vocab)
        _write_manifest(out_dir, "tags select",
                        {"metadata": str(args.metadata), "rules": str(args.rules),
                         "key": args.key, "n": args.n}, None)
        print(f"retained {len(vocab)} of {len(vocab.decisions)} ranked tags")
        return 0

    if args.tags_cmd == "build":
        vocab_tags = ts.load_vocabulary_tags(args.vocab)
        excluded = set()
        if args.exclude:
            excluded = {l.strip() for l in open(args.exclude, encoding="utf-8") if l.strip()}
        selection = ts.build_training_set(result.records, vocab_tags, args.k, excluded)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "training_set.tsv", "w", encoding="utf-8") as f:
            for tag in vocab_tags:
                sel = selection[tag]
                for pid, score in sel.photos:
                    f.write(f"{tag}\t{pid}\t{score!r}\n")
        shortfalls = [t for t in vocab_tags if selection[t].shortfall]
        (out_dir / "shortfalls.txt").write_text("".join(t + "\n" for t in shortfalls))
        _write_manifest(out_dir, "tags build",
                        {"metadata": str(args.metadata), "vocab": str(args.vocab),
                         "k": args.k, "excluded": sorted(excluded)}, None)
        return 0

    raise AssertionError(args.tags_cmd)


def _emit(args, payload: str, default_name: str):
    if getattr(args, "out", None):
        out = Path(args.out)
        if out.suffix:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(payload)
        else:
            out.mkdir(parents=True, exist_ok=True)
            (out / default_name).write_text(payload)
    else:
        sys.stdout.write(payload)


def cmd_train(args) -> int:
    from .datasets import load_dataset
    from .multilabel import randomized_softmax_loss
    from .network import TrainConfig, build_network, save_checkpoint, train

    dataset, vocab, _ = load_dataset(args.data)
    spec = parse_arch_file(Path(args.arch).read_text())

    cfg_fields = {}
    if args.config:
        cfg_fields.update(json.loads(Path(args.config).read_text()))
    for name in ("batch_size", "base_lr", "lr_decay_every", "total_epochs", "seed",
                 "base_size", "crop_size"):
        value = getattr(args, name, None)
        if value is not None:
            cfg_fields[name] = value
    config = TrainConfig(**cfg_fields)

    head = HeadConfig(spp_levels=args.spp, hidden_fc_widths=args.fc,
                      dropout_rate=args.dropout, num_classes=len(vocab))
    geom = Geometry(config.crop_size, config.crop_size, 3)
    plan = expand_layers(spec, geom, head)
    net = build_network(plan, head, init_seed=config.seed)
    net.arch_text = render_arch_file(spec)

    out_dir = Path(args.out)
    _write_manifest(out_dir, "train", {
        "arch": net.arch_text.strip(),
        "head": dataclasses.asdict(head),
        "train": dataclasses.asdict(config),
        "data": str(args.data),
    }, config.seed)

    if config.total_epochs == 0:
        save_checkpoint(out_dir / "epoch_init.ckpt", net, config, 0)
        print("0 epochs requested: wrote initialization checkpoint")
        return 0

    result = train(net, dataset, randomized_softmax_loss, config, out_dir=out_dir,
                   log=lambda msg: print(msg, flush=True))
    metrics = {
        "epoch_losses": result.epoch_losses,
        "avg_tags_per_image": result.avg_tags_per_image,
        "seconds": round(result.seconds, 3),
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    return 0


def cmd_eval_map(args) -> int:
    from .metrics import load_predictions, mean_ap

    with open(args.pred, encoding="utf-8") as pf, open(args.truth, encoding="utf-8") as tf:
        preds = load_predictions(pf, tf)
    subset = None
    if args.tags:
        subset = {l.strip() for l in open(args.tags, encoding="utf-8") if l.strip()}
    value = mean_ap(preds, subset)
    print(f"mAP\t{value:.6f}")
    return 0


def cmd_score(args) -> int:
    from .calib import score_corpus
    from .network import load_checkpoint
    from .tagselect import load_vocabulary_tags

    vocab = load_vocabulary_tags(args.vocab)
    geom = Geometry(args.crop, args.crop, 3)
    net, _, _, _ = load_checkpoint(args.checkpoint, geom)

    images = {}
    src = Path(args.images)
    if src.is_dir():
        for p in sorted(src.glob("*.npy")):
            images[p.stem] = np.load(p)
    else:
        with np.load(src) as z:
            images = {k: z[k] for k in z.files}

    index, skipped = score_corpus(net, images, vocab, crop_size=args.crop)
    index.save(args.out)
    print(f"scored {sum(len(v) for v in index.scores.values()) // max(len(vocab), 1)} photos, skipped {skipped}")
    return 0


def cmd_calibrate_serve(args) -> int:
    import os

    from .calib import CalibrationService, CalibrationTable, JudgmentJournal, ScoreIndex
    from .server import serve_forever

    index = ScoreIndex.load(args.index)
    table = CalibrationTable.load(args.table) if Path(args.table).exists() else CalibrationTable()
    journal = JudgmentJournal(args.journal)
    corpus = args.corpus or os.environ.get("PHOTOTAG_CORPUS")
    service = CalibrationService(index, table, journal, table_path=args.table,
                                 corpus_dir=corpus)
    serve_forever(service, args.host, args.port)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phototag", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_head_flags(p, classes_default=1000):
        p.add_argument("--spp", type=_int_list, default=(6, 3, 2, 1))
        p.add_argument("--fc", type=_int_list, default=(4096, 4096))
        p.add_argument("--dropout", type=float, default=0.2)
        p.add_argument("--classes", type=int, default=classes_default)

    arch = sub.add_parser("arch", help="parse or render architecture notation")
    arch_sub = arch.add_subparsers(dest="arch_cmd", required=True)
    ap = arch_sub.add_parser("parse")
    ap.add_argument("--arch", required=True)
    ap.add_argument("--out")
    ap.set_defaults(fn=cmd_arch_parse)
    ar = arch_sub.add_parser("render")
    ar.add_argument("--in", dest="infile", required=True)
    ar.set_defaults(fn=cmd_arch_render)

    comp = sub.add_parser("complexity", help="multiply-add and parameter report")
    comp.add_argument("--arch", required=True)
    comp.add_argument("--input", type=_geometry, default=_geometry("221x221x3"))
    comp.add_argument("--report", choices=("csv", "table"), default="table")
    add_head_flags(comp)
    comp.set_defaults(fn=cmd_complexity)

    tags = sub.add_parser("tags", help="tag statistics and vocabulary pipeline")
    tags_sub = tags.add_subparsers(dest="tags_cmd", required=True)
    t_stats = tags_sub.add_parser("stats")
    t_stats.add_argument("--metadata", required=True)
    t_stats.add_argument("--out")
    t_rank = tags_sub.add_parser("rank")
    t_rank.add_argument("--metadata", required=True)
    t_rank.add_argument("--key", choices=("photo_count", "user_count"), default="user_count")
    t_rank.add_argument("-n", type=int, default=100)
    t_rank.add_argument("--out")
    t_select = tags_sub.add_parser("select")
    t_select.add_argument("--metadata", required=True)
    t_select.add_argument("--rules", required=True)
    t_select.add_argument("--key", choices=("photo_count", "user_count"), default="user_count")
    t_select.add_argument("-n", type=int, default=1000)
    t_select.add_argument("--out", required=True)
    t_build = tags_sub.add_parser("build")
    t_build.add_argument("--metadata", required=True)
    t_build.add_argument("--vocab", required=True)
    t_build.add_argument("-k", type=int, required=True)
    t_build.add_argument("--exclude")
    t_build.add_argument("--out", required=True)
    for p in (t_stats, t_rank, t_select, t_build):
        p.set_defaults(fn=cmd_tags)

    tr = sub.add_parser("train", help="train a network on a dataset directory")
    tr.add_argument("--data", required=True)
    tr.add_argument("--arch", required=True)
    tr.add_argument("--config", help="JSON file of TrainConfig fields; flags override")
    tr.add_argument("--out", required=True)
    tr.add_argument("--epochs", dest="total_epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", dest="base_lr", type=float)
    tr.add_argument("--decay-every", dest="lr_decay_every", type=int)
    tr.add_argument("--base-size", dest="base_size", type=int)
    tr.add_argument("--crop-size", dest="crop_size", type=int)
    add_head_flags(tr, classes_default=0)  # classes come from the vocab
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluation metrics")
    ev_sub = ev.add_subparsers(dest="eval_cmd", required=True)
    ev_map = ev_sub.add_parser("map")
    ev_map.add_argument("--pred", required=True)
    ev_map.add_argument("--truth", required=True)
    ev_map.add_argument("--tags")
    ev_map.set_defaults(fn=cmd_eval_map)

    sc = sub.add_parser("score", help="score a corpus with a checkpoint")
    sc.add_argument("--checkpoint", required=True)
    sc.add_argument("--images", required=True, help=".npz archive or directory of .npy files")
    sc.add_argument("--vocab", required=True)
    sc.add_argument("--crop", type=int, required=True)
    sc.add_argument("--out", required=True)
    sc.set_defaults(fn=cmd_score)

    cal = sub.add_parser("calibrate", help="calibration service")
    cal_sub = cal.add_subparsers(dest="cal_cmd", required=True)
    serve = cal_sub.add_parser("serve")
    serve.add_argument("--index", required=True)
    serve.add_argument("--table", required=True)
    serve.add_argument("--journal", required=True)
    serve.add_argument("--corpus", help="photo directory; defaults to $PHOTOTAG_CORPUS")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.set_defaults(fn=cmd_calibrate_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ArchError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
