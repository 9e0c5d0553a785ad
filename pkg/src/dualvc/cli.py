"""``dualvc`` command line: fixtures, frame caches, training, evaluation,
energy baselines and phone-recognizer utilities.

Exit status: 0 on success, 2 on invalid input or configuration, 1 on any
other failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._util import __version__, stable_hash

logger = logging.getLogger("dualvc")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    """Bad command-line input detected after argument parsing."""


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not JSON serialisable: {type(x)}")


def _stamp(obj, config_hash):
    return {**obj, "config_hash": config_hash, "version": __version__}


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args):
    from .config import load_config

    if not args.config:
        raise UsageError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _setup_determinism(args):
    if args.deterministic:
        from .training import set_deterministic
        set_deterministic(True)


# ---------------------------------------------------------------------------
# fixture
# ---------------------------------------------------------------------------

def cmd_fixture(args):
    from .fixture import FixtureSpec, generate_clip_fixture, generate_fixture, write_fixture_spec

    out = _out_dir(args, "fixture")
    seed = 0 if args.seed is None else args.seed
    if args.kind == "clips":
        manifest = generate_clip_fixture(out, seed, n_per_class=args.n_per_class, n_children=args.n_children or 6)
        info = {"kind": "clips", "seed": seed, "n_per_class": args.n_per_class}
    else:
        spec = FixtureSpec(n_sessions=args.n_sessions, duration_s=args.duration, n_children=args.n_children,
                           bleed_db=args.bleed_db)
        manifest = generate_fixture(spec, seed, out)
        write_fixture_spec(out / "fixture_spec.json", spec)
        info = {"kind": "sessions", "seed": seed, **spec.__dict__}
    _write_json(out / "fixture_info.json", _stamp({**info, "manifest": str(manifest)}, stable_hash(info)))
    print(manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def class_duration_table(sessions):
    """Seconds and segment counts per (channel, class), Table-1 style."""
    from .corpus import CHANNEL_TIER

    table = {}
    for ch, inv in CHANNEL_TIER.items():
        rows = {}
        for c in inv.classes:
            if c == inv.silence_class:
                continue
            segs = [s for sess in sessions for s in sess.tier_segments(ch) if s.label == c]
            rows[c] = {"count": len(segs), "seconds": round(sum(s.end_s - s.start_s for s in segs), 3)}
        table[ch] = rows
    return table


def cmd_prepare(args):
    from .corpus import CHI, ADU, load_sessions
    from .framing import FrameSpec, session_frame_labels, write_frame_cache

    if args.config:
        cfg = _load_cfg(args)
        manifest, spec, chash = cfg.corpus.manifest, cfg.frames, cfg.config_hash()
    else:
        if not args.manifest:
            raise UsageError("prepare needs --manifest or --config")
        manifest, spec = args.manifest, FrameSpec()
        chash = stable_hash({"frames": spec.__dict__})
    manifest = args.manifest or manifest
    sessions = load_sessions(manifest)
    if not sessions:
        raise UsageError(f"{manifest}: manifest lists no sessions")
    out = _out_dir(args, "prepared")
    write_frame_cache(out / "frames.jsonl", sessions, spec)
    counts = {"ADU": np.zeros(len(ADU), int), "CHI": np.zeros(len(CHI), int)}
    n_frames = 0
    for s in sessions:
        adu, chi = session_frame_labels(s, spec)
        counts["ADU"] += np.bincount(adu, minlength=len(ADU))
        counts["CHI"] += np.bincount(chi, minlength=len(CHI))
        n_frames += len(adu)
    stats = {
        "sessions": len(sessions),
        "children": len({s.child_id for s in sessions}),
        "hours": round(sum(s.duration_s for s in sessions) / 3600, 4),
        "frames": n_frames,
        "frame_labels": {t: dict(zip(inv.classes, counts[t].tolist())) for t, inv in (("ADU", ADU), ("CHI", CHI))},
        "durations": class_duration_table(sessions),
        "frame_spec": spec.__dict__,
    }
    _write_json(out / "stats.json", _stamp(stats, chash))
    print(_format_table(stats["durations"]))
    return EXIT_OK


def _format_table(durations):
    lines = [f"{'channel':<8}{'class':<8}{'count':>8}{'seconds':>12}"]
    for ch, rows in durations.items():
        for c, r in rows.items():
            lines.append(f"{ch:<8}{c:<8}{r['count']:>8}{r['seconds']:>12.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _pseudo(cfg):
    from .phonetics import load_inventory, read_pseudo_manifest

    if not cfg.corpus.pseudo_manifest:
        return None
    return read_pseudo_manifest(cfg.corpus.pseudo_manifest, load_inventory(cfg.corpus.inventory))


def _experiment_folds(cfg):
    """[(fold_id, fold_dict, train_items, eval_items, test_items_or_None, protocol)]"""
    from .corpus import load_clips, load_sessions, make_folds
    from .training import dev_split

    dev = cfg.eval.protocol == "dev-selection"
    out = []
    if cfg.corpus.mode == "babblecor_single":
        clips = load_clips(cfg.corpus.manifest)
        parts = {k: [c for c in clips if c.split == k] for k in ("train", "dev", "test")}
        if not parts["train"] or not parts["test"]:
            raise UsageError("clip manifest needs train and test splits")
        if dev and not parts["dev"]:
            raise UsageError("dev-selection needs a dev split in the clip manifest")
        ev = parts["dev"] if dev else parts["test"]
        out.append((1, {"fold_id": 1, "split": "manifest"}, parts["train"], ev,
                    parts["test"] if dev else None))
        return out
    sessions = load_sessions(cfg.corpus.manifest)
    if not sessions:
        raise UsageError("manifest lists no sessions")
    for fold in make_folds(sessions, cfg.corpus.folds, cfg.corpus.fold_seed):
        train, test = fold.split(sessions)
        if dev:
            train, dev_items = dev_split(train, cfg.eval.dev_fraction, cfg.seed)
            out.append((fold.fold_id, fold.to_dict(), train, dev_items, test))
        else:
            out.append((fold.fold_id, fold.to_dict(), train, test, None))
    return out


def cmd_train(args):
    from .training import cross_validate, make_frame_set, sample_indices, train_fold

    cfg = _load_cfg(args)
    _setup_determinism(args)
    out = _out_dir(args, f"runs/{cfg.name}")
    chash = cfg.config_hash()
    pseudo = _pseudo(cfg)
    tiers = cfg.model.tiers
    (out / "config.json").write_text(json.dumps(_stamp(cfg.to_dict(), chash), indent=2, sort_keys=True,
                                                default=_jsonable))
    records = []
    folds = _experiment_folds(cfg)
    if args.fold is not None:
        folds = [f for f in folds if f[0] == args.fold]
        if not folds:
            raise UsageError(f"no fold {args.fold}")
    for fold_id, fold_dict, train, ev, test in folds:
        train_set = make_frame_set(train, tiers, cfg.frames, pseudo)
        keep = sample_indices(train_set.labels, cfg.sampling, cfg.seed)
        if len(keep) != len(train_set):
            train_set = train_set.subset(keep)
        eval_set = make_frame_set(ev, tiers, cfg.frames)
        test_set = make_frame_set(test, tiers, cfg.frames) if test else None
        record, _ = train_fold(
            cfg.model, cfg.optim, train_set, eval_set, seed=cfg.seed, fold_id=fold_id,
            config_hash=chash, protocol=cfg.eval.protocol, test_set=test_set,
            out_dir=out / f"fold{fold_id}", resume=args.resume, collar_s=cfg.eval.collar_s,
            median_len=cfg.eval.median_len, checkpoint_config=cfg.to_dict(),
            checkpoint_extra={"fold": fold_dict, "corpus_mode": cfg.corpus.mode},
        )
        records.append(record)
        print(f"fold {fold_id}: best epoch {record.best_epoch} "
              f"{cfg.optim.selection_metric}={record.best_metric:.4f}")
    report = cross_validate(records, cfg.eval.sample_std)
    path = _write_json(out / "cv_report.json", report)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _metric_report(metrics, tiers, protocol, chash, ci=None, support=None):
    from .metrics import MetricReport

    return MetricReport(
        der=metrics.get("der"),
        f1={t.inventory: metrics[f"f1_{t.inventory}"] for t in tiers},
        f1_no_silence={t.inventory: metrics.get(f"f1ns_{t.inventory}") for t in tiers},
        uar={t.inventory: metrics[f"uar_{t.inventory}"] for t in tiers},
        ci=ci or {}, support=support or {}, protocol=protocol, config_hash=chash, version=__version__,
    )


def _eval_items(blob, manifest, fold_filter=True):
    from .corpus import load_clips, load_sessions

    extra = blob.get("extra", {})
    mode = extra.get("corpus_mode", "rabc_two_channel")
    if mode == "babblecor_single":
        clips = load_clips(manifest)
        test = [c for c in clips if c.split == "test"]
        return test or clips
    sessions = load_sessions(manifest)
    fold = extra.get("fold") or {}
    if fold_filter and fold.get("test_ids"):
        ids = set(fold["test_ids"])
        picked = [s for s in sessions if s.child_id in ids]
        if picked:
            return picked
        logger.warning("no session of the checkpoint's test children in %s; scoring all", manifest)
    return sessions


def cmd_eval(args):
    from .metrics import bootstrap_ci, f1_unweighted
    from .corpus import INVENTORIES
    from .model import load_checkpoint
    from .training import evaluate, make_frame_set, score

    if not args.checkpoint:
        raise UsageError("eval needs at least one --checkpoint")
    if not args.manifest:
        raise UsageError("eval needs --manifest")
    out = _out_dir(args, "eval")
    reports = []
    for i, ckpt in enumerate(args.checkpoint):
        model, blob = load_checkpoint(ckpt)
        tiers = model.config.tiers
        items = _eval_items(blob, args.manifest, not args.all_sessions)
        cfg = blob.get("config") or {}
        ev = cfg.get("eval", {}) if isinstance(cfg, dict) else {}
        collar = ev.get("collar_s", 0.25)
        median_len = ev.get("median_len", 11)
        frames = make_frame_set(items, tiers)
        if args.oracle:
            preds = {k: v.copy() for k, v in frames.labels.items()}
            metrics = score(frames, preds, tiers, collar, median_len)
        else:
            metrics, preds = evaluate(model, frames, tiers, collar, median_len)
        ci = {}
        if args.bootstrap:
            groups = frames.refs[:, 0]
            for t in tiers:
                n = len(INVENTORIES[t.inventory])
                ci[f"f1:{t.inventory}"] = bootstrap_ci(
                    frames.labels[t.inventory], preds[t.inventory],
                    lambda r, h, n=n: f1_unweighted(r, h, n), args.bootstrap, 0, groups)
        support = {t.inventory: dict(zip(INVENTORIES[t.inventory].classes,
                                         np.bincount(frames.labels[t.inventory],
                                                     minlength=len(INVENTORIES[t.inventory])).tolist()))
                   for t in tiers}
        protocol = "oracle" if args.oracle else (ev.get("protocol", "test-selection"))
        rep = _metric_report(metrics, tiers, protocol, blob["config_hash"], ci, support)
        d = rep.to_dict()
        d["checkpoint"] = str(ckpt)
        d["fold_id"] = (blob.get("extra") or {}).get("fold_id")
        reports.append(d)
        _write_json(out / f"report_{i}.json", d)
        print(f"{ckpt}: DER={_fmt(rep.der)} " + " ".join(f"F1-{k}={v:.1f}" for k, v in rep.f1.items()))
    if len(reports) > 1:
        agg = _aggregate(reports)
        _write_json(out / "report_aggregate.json", agg)
        print("mean: " + " ".join(f"{k}={v['mean']:.2f}±{v['std']:.2f}" for k, v in agg["metrics"].items()))
    return EXIT_OK


def _fmt(x):
    return "n/a" if x is None else f"{x:.2f}"


def _aggregate(reports):
    flat = []
    for r in reports:
        row = {"der": r["der"]}
        row.update({f"f1_{k}": v for k, v in r["f1"].items()})
        flat.append(row)
    keys = [k for k in flat[0] if all(f.get(k) is not None for f in flat)]
    metrics = {}
    for k in keys:
        vals = np.array([f[k] for f in flat], dtype=float)
        metrics[k] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    hashes = sorted({r["config_hash"] for r in reports})
    return {"per_checkpoint": reports, "metrics": metrics, "config_hash": hashes[0] if len(hashes) == 1 else hashes,
            "version": __version__}


# ---------------------------------------------------------------------------
# baseline-et
# ---------------------------------------------------------------------------

def cmd_baseline_et(args):
    from .corpus import load_sessions, make_folds
    from .energy import diarize_et, fit_unsupervised, fit_weak_supervised, session_tracks
    from .metrics import format_rttm, timeline_to_segments
    from .training import reference_segments
    from .metrics import der_components

    if args.config:
        cfg = _load_cfg(args)
        base = cfg.baseline or {}
        args.manifest = args.manifest or cfg.corpus.manifest
        args.mode = base.get("mode", args.mode)
        args.median_len = int(base.get("median_len", args.median_len))
        args.folds = cfg.corpus.folds
        args.collar = cfg.eval.collar_s
        args.seed = cfg.corpus.fold_seed if args.seed is None else args.seed
    if not args.manifest:
        raise UsageError("baseline-et needs --manifest")
    if args.median_len < 1 or args.median_len % 2 == 0:
        raise UsageError("--median-len must be an odd integer >= 1")
    sessions = load_sessions(args.manifest)
    if not sessions:
        raise UsageError("manifest lists no sessions")
    out = _out_dir(args, "baseline_et")
    opts = {"mode": args.mode, "median_len": args.median_len, "folds": args.folds, "collar_s": args.collar,
            "seed": args.seed or 0}
    chash = stable_hash(opts)
    if args.folds >= 2:
        splits = [(f.fold_id, *f.split(sessions)) for f in make_folds(sessions, args.folds, args.seed or 0)]
    else:
        splits = [(1, sessions, sessions)]
    per_fold = []
    for fold_id, train, test in splits:
        if args.mode == "weak":
            model = fit_weak_supervised(train, args.median_len)
        else:
            model = fit_unsupervised(session_tracks(train), median_len=args.median_len)
        tot = {"scored_ref_s": 0.0, "missed_s": 0.0, "false_alarm_s": 0.0, "confusion_s": 0.0}
        rttm = []
        for sess in test:
            hyp = timeline_to_segments(diarize_et(model, sess))
            rttm.append(format_rttm(sess.session_id, hyp, with_class=False))
            ref = reference_segments(sess, ("adult", "child"))
            for k, v in der_components(ref, hyp, args.collar).items():
                tot[k] += v
        err = tot["missed_s"] + tot["false_alarm_s"] + tot["confusion_s"]
        d = 100.0 * err / tot["scored_ref_s"] if tot["scored_ref_s"] > 0 else None
        (out / f"fold{fold_id}.rttm").write_text("".join(rttm))
        per_fold.append({"fold_id": fold_id, "der": d, "thresholds": model.to_dict(), **tot})
        print(f"fold {fold_id}: DER={_fmt(d)} thresholds adult={model.threshold_adult:.1f} "
              f"child={model.threshold_child:.1f} dBFS")
    ders = np.array([f["der"] for f in per_fold if f["der"] is not None], dtype=float)
    summary = {"mode": args.mode, "per_fold": per_fold,
               "der_mean": float(ders.mean()) if len(ders) else None,
               "der_std": float(ders.std(ddof=1)) if len(ders) > 1 else 0.0,
               "options": opts}
    _write_json(out / "et_report.json", _stamp(summary, chash))
    return EXIT_OK


# ---------------------------------------------------------------------------
# phone recognizer
# ---------------------------------------------------------------------------

def _load_utterances(path, inventory):
    from .corpus import read_wav
    from .phonetics import PhoneTranscript

    root = Path(path).parent
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append((read_wav(root / d["audio"]),
                            PhoneTranscript(inventory.encode(d["phones"]), "reference", len(inventory))))
    return out


def cmd_train_pr(args):
    import torch

    from .encoder import build_encoder
    from .phonetics import PrModel, PrStage, load_inventory, save_pr_checkpoint, train_pr

    if not args.stage:
        raise UsageError("train-pr needs at least one --stage NAME:MANIFEST:EPOCHS")
    _setup_determinism(args)
    inv = load_inventory(args.inventory)
    enc_cfg = json.loads(args.encoder) if args.encoder else {"type": "stub", "seed": 0, "num_layers": 2,
                                                              "hidden_dim": 32}
    seed = args.seed or 0
    torch.manual_seed(seed)
    model = PrModel(build_encoder(enc_cfg), len(inv), args.width)
    recipe = []
    for spec in args.stage:
        try:
            name, manifest, epochs = spec.rsplit(":", 2)
            epochs = int(epochs)
        except ValueError as exc:
            raise UsageError(f"bad --stage {spec!r}; expected NAME:MANIFEST:EPOCHS") from exc
        recipe.append(PrStage(name, _load_utterances(manifest, inv), epochs, args.lr_head, args.lr_encoder))
    model, hist = train_pr(model, recipe, args.batch_size, seed)
    out = _out_dir(args, "pr")
    save_pr_checkpoint(out / "pr.pt", model, enc_cfg, inv)
    chash = stable_hash({"encoder": enc_cfg, "stages": args.stage, "width": args.width, "seed": seed})
    _write_json(out / "pr_history.json", _stamp({
        "epoch_loss": hist.epoch_loss, "stage": hist.stage, "skipped_long": hist.skipped_long,
        "skipped_infeasible": hist.skipped_infeasible}, chash))
    print(out / "pr.pt")
    return EXIT_OK


def cmd_gen_pseudo(args):
    from .corpus import load_clips, load_sessions
    from .phonetics import child_segment_items, clip_items, gen_pseudo, load_pr_checkpoint, write_pseudo_manifest

    if not args.pr_checkpoint or not args.manifest:
        raise UsageError("gen-pseudo needs --pr-checkpoint and --manifest")
    model, inv = load_pr_checkpoint(args.pr_checkpoint)
    if args.clips:
        items = list(clip_items(load_clips(args.manifest)))
    else:
        items = list(child_segment_items(load_sessions(args.manifest)))
    records = gen_pseudo(model, items)
    out = _out_dir(args, "pseudo")
    write_pseudo_manifest(out / "pseudo.jsonl", records, inv)
    chash = stable_hash({"pr_checkpoint": Path(args.pr_checkpoint).name, "manifest": Path(args.manifest).name})
    _write_json(out / "pseudo_info.json", _stamp({
        "rows": len(records), "empty": sum(1 for r in records if not len(r.transcript))}, chash))
    print(out / "pseudo.jsonl")
    return EXIT_OK


def cmd_decode(args):
    from .corpus import read_wav
    from .phonetics import PhoneTranscript, corpus_per, load_pr_checkpoint

    if not args.pr_checkpoint:
        raise UsageError("decode needs --pr-checkpoint")
    model, inv = load_pr_checkpoint(args.pr_checkpoint)
    rows = []
    if args.utterances:
        root = Path(args.utterances).parent
        with open(args.utterances, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    ref = PhoneTranscript(inv.encode(d["phones"]), "reference", len(inv))
                    rows.append((d["audio"], model.transcribe(read_wav(root / d["audio"])), ref))
    for path in args.audio or []:
        rows.append((path, model.transcribe(read_wav(path)), None))
    if not rows:
        raise UsageError("decode needs audio files or --utterances")
    for path, hyp, _ in rows:
        print(f"{path}\t{inv.decode(hyp.phone_ids)}")
    scored = [(ref, hyp) for _, hyp, ref in rows if ref is not None]
    if scored:
        value, n_empty = corpus_per(scored)
        print(f"PER {value:.2f}% over {len(scored) - n_empty} utterances ({n_empty} empty references)")
        if args.out:
            out = _out_dir(args, "decode")
            _write_json(out / "per.json", _stamp({"per": value, "n": len(scored), "n_empty_ref": n_empty},
                                                 stable_hash({"pr": Path(args.pr_checkpoint).name})))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--deterministic", action="store_true", help="deterministic kernels only")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dualvc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dualvc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fixture", parents=[common], help="write a synthetic corpus")
    f.add_argument("--kind", choices=("sessions", "clips"), default="sessions")
    f.add_argument("--n-sessions", type=int, default=6)
    f.add_argument("--n-children", type=int, default=None)
    f.add_argument("--duration", type=float, default=60.0)
    f.add_argument("--bleed-db", type=float, default=-15.0)
    f.add_argument("--n-per-class", type=int, default=6)
    f.set_defaults(func=cmd_fixture)

    pr = sub.add_parser("prepare", parents=[common], help="frame cache and class statistics")
    pr.add_argument("--manifest")
    pr.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", parents=[common], help="cross-validated training from a config")
    t.add_argument("--resume", action="store_true", help="continue from fold checkpoints in --out")
    t.add_argument("--fold", type=int, default=None, help="run only this fold id")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score checkpoints on a manifest")
    e.add_argument("--checkpoint", action="append")
    e.add_argument("--manifest")
    e.add_argument("--oracle", action="store_true", help="score the reference against itself")
    e.add_argument("--all-sessions", action="store_true", help="ignore the checkpoint's fold")
    e.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for F1 intervals")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline-et", parents=[common], help="energy-threshold speech detection")
    b.add_argument("--manifest")
    b.add_argument("--mode", choices=("unsupervised", "weak"), default="weak")
    b.add_argument("--median-len", type=int, default=11)
    b.add_argument("--folds", type=int, default=3)
    b.add_argument("--collar", type=float, default=0.25)
    b.set_defaults(func=cmd_baseline_et)

    tp = sub.add_parser("train-pr", parents=[common], help="CTC phone-recognizer fine-tuning")
    tp.add_argument("--stage", action="append", help="NAME:MANIFEST:EPOCHS, applied in order")
    tp.add_argument("--inventory", help="phone list, one symbol per line (default: bundled)")
    tp.add_argument("--encoder", help="encoder config as JSON")
    tp.add_argument("--width", type=int, default=384)
    tp.add_argument("--batch-size", type=int, default=8)
    tp.add_argument("--lr-head", type=float, default=1e-3)
    tp.add_argument("--lr-encoder", type=float, default=1e-5)
    tp.set_defaults(func=cmd_train_pr)

    g = sub.add_parser("gen-pseudo", parents=[common], help="pseudo transcripts from a recognizer")
    g.add_argument("--pr-checkpoint")
    g.add_argument("--manifest")
    g.add_argument("--clips", action="store_true", help="manifest is a clip corpus")
    g.set_defaults(func=cmd_gen_pseudo)

    d = sub.add_parser("decode", parents=[common], help="greedy-decode audio with a recognizer")
    d.add_argument("--pr-checkpoint")
    d.add_argument("--utterances", help="JSONL with audio and reference phones, for PER")
    d.add_argument("audio", nargs="*")
    d.set_defaults(func=cmd_decode)
    return p


def main(argv=None):
    from .config import ConfigValidationError
    from .corpus import IngestError, SegmentValidationError
    from .model import CheckpointMismatchError, ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigValidationError, ConfigError, IngestError, SegmentValidationError,
            CheckpointMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
