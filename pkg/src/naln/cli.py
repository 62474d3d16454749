"""Command-line driver: ``naln {synth,preprocess,train,evaluate,attribute,stats}``.

Exit status is 0 on success, 2 on a usage error and 1 when a stage fails.
Setting ``NALN_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import attribution, encoders, evalstats, io, preproc, retrieval, synthgen, trainer
from .errors import ConfigError, DataError, NalnError

logger = logging.getLogger("naln")


class UsageError(Exception):
    pass


def _hyper(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--hyper expects key=value, got {item!r}")
        try:
            out[key] = int(value)
        except ValueError:
            raise UsageError(f"--hyper {key} must be an integer") from None
    return out


# ----------------------------------------------------------------------
# synth
# ----------------------------------------------------------------------
def cmd_synth(args):
    cfg = synthgen.SynthConfig(
        n_classes=args.classes, embed_dim=args.embed_dim, channels=args.channels, samples=args.samples,
        sample_rate=args.sample_rate, noise_std=args.noise, misalignment_strength=args.strength,
        seed=args.seed, n_train_reps=args.train_reps, n_test_reps=args.test_reps,
        n_extra_images=args.extra_images)
    data = synthgen.generate(cfg)
    train, test = synthgen.holdout_split(data.epochs, cfg.n_test_reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train_epochs.naln": train.epochs, "train_labels.naln": train.labels,
        "test_epochs.naln": test.epochs, "test_labels.naln": test.labels,
        "image_ids.naln": data.aligned.ids,
        "images_aligned.naln": data.aligned.vectors, "images_misaligned.naln": data.misaligned.vectors,
    }
    for name, arr in files.items():
        io.write_tensor(out / name, np.asarray(arr, dtype=np.float64))
    if args.recording:
        rec = synthgen.to_recording(train)
        io.write_tensor(out / "recording.naln", rec.samples)
        io.write_tensor(out / "events.naln", np.column_stack([rec.onsets, rec.labels]).astype(np.float64))
    manifest = io.Manifest(
        sample_rate_hz=cfg.sample_rate, channel_names=list(train.channel_names),
        train={"epochs": "train_epochs.naln", "labels": "train_labels.naln"},
        test={"epochs": "test_epochs.naln", "labels": "test_labels.naln"},
        images={"ids": "image_ids.naln",
                "embeddings": {"aligned": "images_aligned.naln", "misaligned": "images_misaligned.naln"}},
        encoder={"family": args.family, "hyper": _hyper(args.hyper)},
        training={}, outputs={"dir": "out"}, base_dir=out)
    io.save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(train)} train and {len(test)} test epochs to {out}")
    return 0


# ----------------------------------------------------------------------
# preprocess
# ----------------------------------------------------------------------
def cmd_preprocess(args):
    samples = io.read_tensor(args.recording)
    events = io.read_ints(args.events)
    if events.ndim != 2 or events.shape[1] != 2:
        raise DataError("events must be an (n, 2) tensor of onset samples and labels")
    rec = preproc.Recording(samples, args.fs, events[:, 0], events[:, 1])
    ep = preproc.run_pipeline(rec, band=tuple(args.band), target_hz=args.target_hz,
                              window_ms=tuple(args.window), baseline_ms=args.baseline_ms,
                              shrinkage=args.shrinkage, average=args.average)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_tensor(out / "epochs.naln", ep.epochs)
    io.write_tensor(out / "labels.naln", ep.labels.astype(np.float64))
    io.write_tensor(out / "repetitions.naln", ep.repetition_index.astype(np.float64))
    print(f"wrote {len(ep)} epochs of {ep.n_channels}x{ep.n_samples} at {ep.sample_rate_hz:g} Hz to {out}")
    return 0


# ----------------------------------------------------------------------
# shared loaders
# ----------------------------------------------------------------------
def _embedding_name(manifest, name):
    names = sorted(manifest.images["embeddings"])
    if name is None:
        return names[0]
    if name not in names:
        raise ConfigError(f"manifest has no embeddings named {name!r}; available: {names}")
    return name


def _split(manifest, which):
    part = getattr(manifest, which)
    x = io.read_tensor(manifest.resolve(part["epochs"]))
    labels = io.read_ints(manifest.resolve(part["labels"]))
    return preproc.EpochSet(x, manifest.sample_rate_hz, labels, channel_names=manifest.channel_names)


def _images(manifest, name):
    ids = io.read_ints(manifest.resolve(manifest.images["ids"]))
    vec = io.read_tensor(manifest.resolve(manifest.images["embeddings"][name]))
    return retrieval.EmbeddingSet(vec, ids)


def _checkpoints(path):
    """``[(unit label, params)]`` for a single checkpoint or a directory of ``seed*`` checkpoints."""
    path = Path(path)
    if (path / io.ARCHITECTURE).is_file():
        return [(path.name, io.load_checkpoint(path))]
    dirs = sorted((p for p in path.glob("seed*") if (p / io.ARCHITECTURE).is_file()),
                  key=lambda p: int(p.name[4:]) if p.name[4:].isdigit() else p.name)
    if not dirs:
        raise DataError(f"no checkpoints under {path}")
    return [(p.name, io.load_checkpoint(p)) for p in dirs]


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------
def cmd_train(args):
    manifest = io.load_manifest(args.manifest)
    name = _embedding_name(manifest, args.embeddings)
    train = _split(manifest, "train")
    images = _images(manifest, name)
    settings = dict(manifest.training)
    for key in ("learning_rate", "batch_size", "temperature", "max_epochs", "patience"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    hyper = dict(manifest.encoder.get("hyper", {}))
    hyper.update(_hyper(args.hyper))
    family = args.family or manifest.encoder["family"]
    out = Path(args.out) if args.out else manifest.output_dir / f"train_{name}"
    out.mkdir(parents=True, exist_ok=True)
    rows, reports = [], {}
    for seed in range(args.seed_base, args.seed_base + args.seeds):
        ecfg = encoders.EncoderConfig(family, train.n_channels, train.n_samples, images.dim, hyper, seed)
        tcfg = trainer.TrainConfig(seed=seed, **settings)
        params, report = trainer.fit(ecfg, train, images, tcfg, checkpoint=f"seed{seed}")
        io.save_checkpoint(out / f"seed{seed}", params)
        reports[f"seed{seed}"] = report.to_dict()
        rows.append([f"seed{seed}", report.stopped_epoch, report.best_epoch,
                     report.initial_val_loss, report.best_val_loss])
        logger.info("seed %d: best val %.4f at epoch %d", seed, report.best_val_loss, report.best_epoch)
    mean = np.mean([[r[1], r[2], r[3], r[4]] for r in rows], axis=0)
    rows.append(["mean", float(mean[0]), float(mean[1]), float(mean[2]), float(mean[3])])
    summary = {"embeddings": name, "family": family, "hyper": hyper, "training": settings,
               "seeds": reports, "mean": dict(zip(["stopped_epoch", "best_epoch", "initial_val_loss",
                                                  "best_val_loss"], mean.tolist()))}
    (out / "train_report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = io.write_report(out / "train_report",
                           ["unit", "stopped_epoch", "best_epoch", "initial_val_loss", "best_val_loss"], rows,
                           title=f"training against {name}")
    print(text, end="")
    return 0


# ----------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------
def cmd_evaluate(args):
    manifest = io.load_manifest(args.manifest)
    name = _embedding_name(manifest, args.embeddings)
    test = _split(manifest, "test")
    images = _images(manifest, name)
    if args.database == "test":
        images = synthgen.select(images, np.unique(test.labels))
    index = retrieval.build_index(images)
    ks = sorted(set(args.k or [1, 5]))
    rows, per_k = [], {k: [] for k in ks}
    for unit, params in _checkpoints(args.checkpoint):
        report = retrieval.topk_accuracy(index, encoders.embed(params, test.epochs), test.labels, ks,
                                         keep_ranked=False)
        for k in ks:
            rows.append([unit, k, report.correct[k], report.n_queries, report.database_size, report.accuracy[k]])
            per_k[k].append(report.accuracy[k])
    for k in ks:
        m, se = evalstats.summarize(per_k[k])
        rows.append(["mean", k, "", len(test), len(index), m])
        rows.append(["se", k, "", len(test), len(index), se])
    stem = Path(args.out) if args.out else Path(args.checkpoint) / f"eval_{args.database}"
    text = io.write_report(stem, ["unit", "k", "correct", "n_queries", "database_size", "accuracy"], rows,
                           title=f"{len(index)}-way retrieval against {name} ({args.database} database)")
    print(text, end="")
    return 0


# ----------------------------------------------------------------------
# attribute
# ----------------------------------------------------------------------
def _attribution_runs(manifest, name, checkpoint):
    test = _split(manifest, "test")
    images = _images(manifest, name)
    targets = images.vectors[synthgen.rows_for(images, test.labels)]
    runs = []
    for unit, params in _checkpoints(checkpoint):
        maps = attribution.gradcam_batch(params, test.epochs, targets, test.labels)
        runs.append((unit, maps))
    return test, runs


def _seed_bands(maps, fs):
    usable = [m for m in maps if not m.degenerate]
    if not usable:
        raise DataError("every attribution map is degenerate")
    per = [attribution.map_band_energies(m, fs) for m in usable]
    return {b: float(np.mean([e[b] for e in per])) for b in per[0]}, len(maps) - len(usable)


def cmd_attribute(args):
    manifest = io.load_manifest(args.manifest)
    name = _embedding_name(manifest, args.embeddings)
    test, runs = _attribution_runs(manifest, name, args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint) / "attribution"
    fs = manifest.sample_rate_hz

    counts = attribution.threshold_histogram([maps for _, maps in runs], args.percentile)
    times = np.arange(len(counts)) * 1000.0 / fs
    io.write_report(out / "histogram", ["time_index", "time_ms", "count"],
                    [[i, t, int(c)] for i, (t, c) in enumerate(zip(times, counts))],
                    title=f"values above the per-seed {args.percentile:g}th percentile")

    names = attribution.BandSpec().names
    band_rows, energies = [], []
    for unit, maps in runs:
        e, skipped = _seed_bands(maps, fs)
        energies.append(e)
        band_rows.append([unit, *[e[b] for b in names], skipped])
    io.write_report(out / "bands", ["unit", *names, "degenerate_maps"], band_rows, title="band energy fractions")

    all_maps = [m for _, maps in runs for m in maps if not m.degenerate]
    scores = attribution.electrode_aggregate(all_maps, test.channel_names)
    io.write_report(out / "electrodes", ["channel", "score"], [[c, s] for c, s in scores.items()],
                    title="mean attribution per electrode")

    if args.against:
        other = _embedding_name(manifest, args.against_embeddings)
        _, other_runs = _attribution_runs(manifest, other, args.against)
        other_e = [_seed_bands(maps, fs)[0] for _, maps in other_runs]
        rows = attribution.band_compare(energies, other_e)
        io.write_report(out / "bands_compare", ["band", "mean_a", "se_a", "mean_b", "se_b", "t", "p", "df"],
                        rows, title=f"{name} vs {other}, unpaired")

    early = attribution.early_mass(counts, synthgen.EARLY_FRACTION)
    print(f"attribution maps: {sum(len(m) for _, m in runs)}; early-window mass {early:.4f}")
    print(f"reports written to {out}")
    return 0


# ----------------------------------------------------------------------
# stats
# ----------------------------------------------------------------------
def _scores(path, k):
    rows = io.read_csv_rows(path)
    if not rows:
        raise DataError(f"{path} holds no scores")
    if "score" in rows[0]:
        pairs = [(r["unit"], float(r["score"])) for r in rows]
    elif "accuracy" in rows[0]:
        pairs = [(r["unit"], float(r["accuracy"])) for r in rows
                 if r["unit"] not in ("mean", "se") and int(r["k"]) == k]
    else:
        raise DataError(f"{path} needs a 'score' or 'accuracy' column")
    units = [u for u, _ in pairs]
    if len(set(units)) != len(units):
        raise DataError(f"{path} repeats units")
    return units, [s for _, s in pairs]


def cmd_stats(args):
    ua, sa = _scores(args.a, args.k)
    ub, sb = _scores(args.b, args.k)
    a = evalstats.ConditionResults(args.name_a, sa, tuple(ua))
    b = evalstats.ConditionResults(args.name_b, sb, tuple(ub))
    paired = args.test == "paired"
    res = evalstats.compare_conditions(a, b, paired=paired)
    label = f"{args.test} over {args.pairing}" if paired else "unpaired"
    rows = [(label, *evalstats.summarize(a.scores), *evalstats.summarize(b.scores), res.t, res.p, res.df)]
    text = f"# {args.name_a} vs {args.name_b} ({label}, n={len(sa)} vs {len(sb)})\n" + evalstats.results_table(rows)
    if args.out:
        stem = Path(args.out)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".txt").write_text(text, encoding="utf-8")
        stem.with_suffix(".csv").write_text(
            io.table_csv(["label", "mean_a", "se_a", "mean_b", "se_b", "t", "p", "df"], rows), encoding="utf-8")
    print(text, end="")
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="naln", description="EEG-to-image embedding alignment toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=64)
    s.add_argument("--embed-dim", type=int, default=32)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--sample-rate", type=float, default=250.0)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--strength", type=float, default=1.0, help="misalignment blend weight")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-reps", type=int, default=24)
    s.add_argument("--test-reps", type=int, default=4)
    s.add_argument("--extra-images", type=int, default=0, help="distractor images for --database extended")
    s.add_argument("--family", default="nice_conv", choices=encoders.FAMILIES)
    s.add_argument("--hyper", action="append", metavar="KEY=INT", help="encoder hyperparameter (repeatable)")
    s.add_argument("--recording", action="store_true", help="also write the train split as a continuous recording")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="epoch a continuous recording")
    s.add_argument("--recording", required=True, help="(C, samples) tensor file")
    s.add_argument("--events", required=True, help="(n, 2) tensor file of onset samples and labels")
    s.add_argument("--fs", type=float, required=True, help="recording sample rate in Hz")
    s.add_argument("--out", required=True)
    s.add_argument("--band", type=float, nargs=2, default=[0.1, 100.0], metavar=("LO", "HI"))
    s.add_argument("--target-hz", type=float, default=250.0)
    s.add_argument("--window", type=float, nargs=2, default=[0.0, 1000.0], metavar=("START_MS", "END_MS"))
    s.add_argument("--baseline-ms", type=float, default=200.0)
    s.add_argument("--shrinkage", type=float, default=0.1)
    s.add_argument("--average", action="store_true", help="average repetitions per label")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="fit encoders against one embedding set")
    s.add_argument("--manifest", required=True)
    s.add_argument("--embeddings", help="embedding set name from the manifest")
    s.add_argument("--seeds", type=int, default=1, help="number of seeded fits")
    s.add_argument("--seed-base", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--family", choices=encoders.FAMILIES)
    s.add_argument("--hyper", action="append", metavar="KEY=INT")
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--temperature", type=float)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--patience", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="top-k retrieval of test epochs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--embeddings")
    s.add_argument("--checkpoint", required=True, help="checkpoint or directory of seed checkpoints")
    s.add_argument("--k", type=int, action="append", help="rank cutoff (repeatable, default 1 and 5)")
    s.add_argument("--database", choices=("test", "extended"), default="test")
    s.add_argument("--out", help="report path stem")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("attribute", help="Grad-CAM histogram, band and electrode tables")
    s.add_argument("--manifest", required=True)
    s.add_argument("--embeddings")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--percentile", type=float, default=99.0)
    s.add_argument("--against", help="second checkpoint for a band comparison")
    s.add_argument("--against-embeddings")
    s.add_argument("--out")
    s.set_defaults(func=cmd_attribute)

    s = sub.add_parser("stats", help="t-test between two score tables")
    s.add_argument("--a", required=True, help="CSV with unit,score or an evaluate report")
    s.add_argument("--b", required=True)
    s.add_argument("--name-a", default="a")
    s.add_argument("--name-b", default="b")
    s.add_argument("--k", type=int, default=1, help="rank cutoff to read from evaluate reports")
    s.add_argument("--test", choices=("paired", "unpaired"), default="paired")
    s.add_argument("--pairing", choices=("seeds", "subjects"), default="seeds", help="unit of pairing")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def _thread_limit():
    raw = os.environ.get("NALN_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"NALN_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"naln: error: {exc}", file=sys.stderr)
        return 2
    except (NalnError, OSError) as exc:
        print(f"naln {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
