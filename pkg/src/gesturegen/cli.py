"""Command-line entry point.

Subcommands: preprocess, train, train-extractor, synthesize, evaluate,
noise-bench, style-map, text-alter. Option precedence is defaults <
--config file < explicit flags; every command writes a run manifest next
to its outputs and honors a single --seed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import animation, corpus, fgd, models, noise, poses, training
from .errors import GestureError, InvalidInputError, OutputLockError
from .losses import LossWeights

LOCK_NAME = ".gesturegen.lock"


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: list
    seed: int
    started_at: float
    finished_at: float = 0.0
    duration_s: float = 0.0
    artifact_version: str = __version__

    def write(self, out_dir: str) -> None:
        self.finished_at = time.time()
        self.duration_s = self.finished_at - self.started_at
        path = os.path.join(out_dir, "manifest.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(asdict(self), f, sort_keys=True, indent=2)
        os.replace(tmp, path)


class _OutputLock:
    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, LOCK_NAME)

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockError(
                f"output directory is locked by another run: {self.path}") from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass


def _write_json(path, doc) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)


def _prepare_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _manifest(args, command: str, inputs: dict) -> RunManifest:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return RunManifest(command=command, config=config, inputs=inputs, outputs=[],
                       seed=getattr(args, "seed", 0), started_at=time.time())


def _select_split(proc: corpus.ProcessedCorpus, name: str) -> corpus.WindowSet:
    if name == "all":
        idx_all = np.arange(len(proc.train))
        parts = [proc.train, proc.val, proc.test]
        return corpus.WindowSet(
            np.concatenate([p.dirvecs for p in parts]),
            np.concatenate([p.tokens for p in parts]),
            np.concatenate([p.audio for p in parts]),
            np.concatenate([p.speaker for p in parts]),
            np.concatenate([p.clip_index for p in parts]),
            np.concatenate([p.frame_start for p in parts]))
    ws = getattr(proc, name, None)
    if ws is None:
        raise InvalidInputError(f"unknown split '{name}'")
    return ws


def dirvec_windows_to_poses(dirvecs: np.ndarray, bone_lengths, fps: float = 15.0) -> np.ndarray:
    """Reconstruct (N, t, 10, 3) joint coordinates from (N, t, 27) direction windows."""
    skel = poses.Skeleton().with_lengths(bone_lengths)
    out = np.empty((dirvecs.shape[0], dirvecs.shape[1], 10, 3))
    for i in range(dirvecs.shape[0]):
        seq = poses.DirVecSequence(dirvecs[i].reshape(-1, 9, 3), fps)
        out[i] = poses.dirvecs_to_coords(poses.normalize_dirvecs(seq), skel).frames
    return out


def _load_words_file(path) -> tuple[list, int | None]:
    with open(path) as f:
        doc = json.load(f)
    words = [corpus.TimedWord(w["text"], float(w["start"]), float(w["end"]))
             for w in doc["words"]]
    return words, doc.get("speaker_id")


def _load_audio_file(path) -> tuple[np.ndarray, int]:
    from scipy.io import wavfile
    rate, audio = wavfile.read(path)
    audio = np.asarray(audio)
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    if np.issubdtype(audio.dtype, np.integer):
        audio = audio.astype(np.float32) / np.iinfo(np.int16).max
    audio = audio.astype(np.float32)
    if rate != corpus.AUDIO_SR:
        from scipy.signal import resample_poly
        g = math.gcd(corpus.AUDIO_SR, int(rate))
        audio = resample_poly(audio, corpus.AUDIO_SR // g, int(rate) // g).astype(np.float32)
        rate = corpus.AUDIO_SR
    return audio, rate


def _checkpoint_extras(proc: corpus.ProcessedCorpus) -> dict:
    return {
        "vocab": proc.vocab.tokens,
        "bone_lengths": [float(v) for v in proc.bone_lengths],
        "mean_dirvecs": [float(v) for v in proc.mean_dirvecs],
        "scale": proc.scale,
    }


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "preprocess", {"corpus": args.corpus})
        clips, skipped = corpus.read_corpus(args.corpus)
        if not clips:
            raise InvalidInputError(
                f"no loadable clips in {args.corpus}; expected one directory per clip "
                "containing words.json, audio.wav, poses.csv")
        th = poses.ValidityThresholds(args.min_motion_variance,
                                      math.radians(args.min_spine_neck_angle_deg))
        ratios = tuple(float(r) for r in args.ratios.split(","))
        proc = corpus.preprocess_corpus(clips, th, ratios, args.seed, skipped)
        cache = os.path.join(out, "processed.npz")
        proc.save(cache)
        report_path = os.path.join(out, "ingest_report.json")
        _write_json(report_path, proc.report)
        man.outputs = [cache, report_path]
        man.write(out)
        print(f"processed {proc.report['clips']} clips -> {proc.report['windows_kept']} windows "
              f"({proc.report['windows_total']} examined)")
    return 0


def cmd_train(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "train", {"processed": args.processed,
                                        "extractor": args.extractor})
        proc = corpus.ProcessedCorpus.load(args.processed)
        mcfg = models.ModelConfig(
            vocab_size=len(proc.vocab), n_speakers=proc.n_speakers,
            hidden_size=args.hidden_size, num_layers=args.num_layers,
            dropout=args.dropout, use_speaker=not args.no_speaker)
        tcfg = training.TrainConfig(
            epochs=args.epochs, learning_rate=args.lr, warmup_epochs=args.warmup_epochs,
            batch_size=args.batch_size, seed=args.seed,
            use_style_loss=not args.no_style_loss)
        extractor = fgd.GestureFeatureExtractor.load(args.extractor) if args.extractor else None
        val = proc.val
        if extractor is not None and args.val_windows and len(val) > args.val_windows:
            val = val.subset(np.arange(args.val_windows))
        ckpt_dir = os.path.join(out, "checkpoints")
        result = training.train(
            proc.train, mcfg, tcfg, LossWeights(), val_windows=val, extractor=extractor,
            out_dir=ckpt_dir, checkpoint_extras=_checkpoint_extras(proc),
            log=lambda m: print(m, flush=True))
        history_path = os.path.join(out, "history.csv")
        training.write_history_csv(result.history, history_path)
        man.outputs = result.checkpoint_paths + [history_path]
        man.write(out)
    return 0


def cmd_train_extractor(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "train-extractor", {"processed": args.processed})
        proc = corpus.ProcessedCorpus.load(args.processed)
        windows = _select_split(proc, args.split)
        cfg = fgd.ExtractorConfig(latent_dim=args.latent_dim, epochs=args.epochs,
                                  batch_size=args.batch_size, learning_rate=args.lr,
                                  seed=args.seed)
        extractor, history = fgd.train_feature_extractor(
            windows, cfg, log=lambda m: print(m, flush=True))
        path = os.path.join(out, "extractor.npz")
        extractor.save(path)
        hist_path = os.path.join(out, "extractor_history.csv")
        with open(hist_path, "w") as f:
            f.write("epoch,recon_mse\n")
            for i, v in enumerate(history, 1):
                f.write(f"{i},{v!r}\n")
        man.outputs = [path, hist_path]
        man.write(out)
        print(f"extractor {extractor.extractor_id} trained on {len(windows)} windows")
    return 0


def cmd_synthesize(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "synthesize", {"checkpoint": args.checkpoint,
                                             "words": args.words, "audio": args.audio})
        if (args.speaker_id is None) == (args.style_vector is None):
            raise InvalidInputError("give exactly one of --speaker-id or --style-vector")
        model, _, extras = models.load_checkpoint(args.checkpoint)
        vocab = corpus.Vocab(extras["vocab"])
        words, _ = _load_words_file(args.words)
        audio, rate = _load_audio_file(args.audio)
        if words:
            transcript_end = max(w.end for w in words)
            if abs(transcript_end - len(audio) / rate) > 2.0:
                print(f"warning: transcript ends at {transcript_end:.1f}s but audio lasts "
                      f"{len(audio) / rate:.1f}s", file=sys.stderr)
        if args.style_vector is not None:
            vec = np.array([float(v) for v in args.style_vector.split(",")], dtype=np.float32)
            style = models.encode_style(model, explicit=vec)
        else:
            style = models.encode_style(model, speaker_id=args.speaker_id, sampling=False)
        seq = models.synthesize_long(model, words, audio, style,
                                     np.asarray(extras["mean_dirvecs"]), vocab, rate)
        skel = poses.Skeleton().with_lengths(extras["bone_lengths"])
        path = os.path.join(out, f"{args.name}.{args.format}")
        animation.export_animation(seq, skel, path, args.format)
        man.outputs = [path]
        man.write(out)
        print(f"wrote {len(seq)} frames to {path}")
    return 0


def cmd_evaluate(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "evaluate", {"checkpoint": args.checkpoint,
                                           "extractor": args.extractor,
                                           "processed": args.processed})
        model, _, extras = models.load_checkpoint(args.checkpoint)
        extractor = fgd.GestureFeatureExtractor.load(args.extractor)
        proc = corpus.ProcessedCorpus.load(args.processed)
        windows = _select_split(proc, args.split)
        if len(windows) < 2:
            raise InvalidInputError(f"split '{args.split}' has {len(windows)} windows; need >= 2")
        generated = training.generate_for_windows(model, windows)
        lengths = extras["bone_lengths"]
        real_poses = dirvec_windows_to_poses(windows.dirvecs, lengths)
        gen_poses = dirvec_windows_to_poses(generated, lengths)
        doc = {
            "fgd": fgd.fgd(windows.dirvecs, generated, extractor),
            "maej": fgd.maej(real_poses, gen_poses),
            "mae_accel": fgd.mae_accel(real_poses, gen_poses),
            "n_real": len(windows),
            "n_generated": len(generated),
            "extractor_id": extractor.extractor_id,
        }
        path = os.path.join(out, "metrics.json")
        _write_json(path, doc)
        man.outputs = [path]
        man.write(out)
        print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_noise_bench(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "noise-bench", {"extractor": args.extractor,
                                              "processed": args.processed,
                                              "grid": args.grid})
        extractor = fgd.GestureFeatureExtractor.load(args.extractor)
        proc = corpus.ProcessedCorpus.load(args.processed)
        windows = _select_split(proc, args.split)
        if args.max_windows and len(windows) > args.max_windows:
            windows = windows.subset(np.arange(args.max_windows))
        with open(args.grid) as f:
            grid = json.load(f)
        pose_windows = dirvec_windows_to_poses(windows.dirvecs, proc.bone_lengths)
        report = noise.run_validation(pose_windows, grid, extractor, seed=args.seed,
                                      min_windows=args.min_windows,
                                      log=lambda m: print(m, flush=True))
        report.meta["pose_source"] = ("windows reconstructed from direction vectors with "
                                      "corpus-global bone lengths; noise applied to joint "
                                      "coordinates, converted back for FGD")
        csv_path = os.path.join(out, "noise_report.csv")
        with open(csv_path, "w") as f:
            f.write("kind,zeta,fgd,maej,mae_accel\n")
            for row in report.rows:
                f.write(f"{row['kind']},{row['zeta']!r},{row.get('fgd', '')!r},"
                        f"{row.get('maej', '')!r},{row.get('mae_accel', '')!r}\n")
        meta_path = os.path.join(out, "noise_report.json")
        _write_json(meta_path, {"meta": report.meta, "rows": report.rows})
        man.outputs = [csv_path, meta_path]
        man.write(out)
    return 0


def cmd_style_map(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "style-map", {"checkpoint": args.checkpoint,
                                            "words": args.words, "audio": args.audio})
        model, _, extras = models.load_checkpoint(args.checkpoint)
        vocab = corpus.Vocab(extras["vocab"])
        words, _ = _load_words_file(args.words)
        audio, rate = _load_audio_file(args.audio)
        skel = poses.Skeleton().with_lengths(extras["bone_lengths"])
        rows = []
        means = []
        for spk in range(model.cfg.n_speakers):
            style = models.encode_style(model, speaker_id=spk, sampling=False)
            means.append(style.mean)
            seq = models.synthesize_long(model, words, audio, style,
                                         np.asarray(extras["mean_dirvecs"]), vocab, rate)
            pose_seq = poses.dirvecs_to_coords(seq, skel)
            var_all = poses.motion_variance(pose_seq)
            var_r = poses.motion_variance(pose_seq, poses.RIGHT_ARM_JOINTS)
            var_l = poses.motion_variance(pose_seq, poses.LEFT_ARM_JOINTS)
            ratio = var_r / var_l if var_l > 0 else float("inf")
            if ratio > 1.2:
                hand = "right"
            elif ratio < 1 / 1.2:
                hand = "left"
            else:
                hand = "balanced"
            rows.append({"speaker_id": spk, "style_mean": [float(v) for v in style.mean],
                         "motion_variance": var_all, "right_arm_variance": var_r,
                         "left_arm_variance": var_l, "handedness": hand})
        mat = np.stack(means).astype(np.float64)
        centered = mat - mat.mean(axis=0)
        # 2-D PCA projection of the style means
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        k = min(2, vt.shape[0])
        proj = centered @ vt[:k].T
        for i, row in enumerate(rows):
            coords = [float(v) for v in proj[i]] + [0.0] * (2 - k)
            row["pca"] = coords
        path = os.path.join(out, "style_map.json")
        _write_json(path, {"speakers": rows})
        csv_path = os.path.join(out, "style_map.csv")
        with open(csv_path, "w") as f:
            f.write("speaker_id,motion_variance,right_arm_variance,left_arm_variance,"
                    "handedness,pca_x,pca_y\n")
            for row in rows:
                f.write(f"{row['speaker_id']},{row['motion_variance']!r},"
                        f"{row['right_arm_variance']!r},{row['left_arm_variance']!r},"
                        f"{row['handedness']},{row['pca'][0]!r},{row['pca'][1]!r}\n")
        man.outputs = [path, csv_path]
        man.write(out)
    return 0


def cmd_text_alter(args) -> int:
    out = _prepare_out(args)
    with _OutputLock(out):
        man = _manifest(args, "text-alter", {"checkpoint": args.checkpoint,
                                             "extractor": args.extractor,
                                             "processed": args.processed,
                                             "substitutions": args.substitutions})
        model, _, extras = models.load_checkpoint(args.checkpoint)
        extractor = fgd.GestureFeatureExtractor.load(args.extractor)
        proc = corpus.ProcessedCorpus.load(args.processed)
        windows = _select_split(proc, args.split)
        if args.max_windows and len(windows) > args.max_windows:
            windows = windows.subset(np.arange(args.max_windows))
        with open(args.substitutions) as f:
            subs = json.load(f)
        vocab = proc.vocab
        sub_ids = {vocab.index[w]: vocab.encode(r) for w, r in subs.items()
                   if w in vocab.index}
        altered = windows.tokens.copy()
        affected = np.zeros(len(windows), dtype=bool)
        for src, dst in sub_ids.items():
            mask = windows.tokens == src
            altered[mask] = dst
            affected |= mask.any(axis=1)
        n_pairs = int(affected.sum())
        doc = {"n_pairs": n_pairs, "n_windows": len(windows),
               "extractor_id": extractor.extractor_id, "fgd_before_after": None}
        if n_pairs >= 2:
            sel = np.where(affected)[0]
            before = training.generate_for_windows(model, windows.subset(sel))
            altered_set = corpus.WindowSet(
                windows.dirvecs[sel], altered[sel], windows.audio[sel],
                windows.speaker[sel], windows.clip_index[sel], windows.frame_start[sel])
            after = training.generate_for_windows(model, altered_set)
            doc["fgd_before_after"] = fgd.fgd(before, after, extractor)
        path = os.path.join(out, "text_alter.json")
        _write_json(path, doc)
        man.outputs = [path]
        man.write(out)
        print(json.dumps(doc, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gesturegen",
                                     description="Co-speech gesture generation and evaluation")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="chunk a corpus directory into training windows")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--min-motion-variance", type=float, default=1e-4)
    p.add_argument("--min-spine-neck-angle-deg", type=float, default=30.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the gesture generation model")
    p.add_argument("--processed", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--warmup-epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.0005)
    p.add_argument("--hidden-size", type=int, default=256)
    p.add_argument("--num-layers", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--extractor", help="feature extractor for per-epoch validation FGD")
    p.add_argument("--val-windows", type=int, default=0,
                   help="cap validation windows used for per-epoch FGD (0 = all)")
    p.add_argument("--no-speaker", action="store_true",
                   help="ablation: drop the speaker-identity input")
    p.add_argument("--no-style-loss", action="store_true",
                   help="ablation: zero the style-diversity and KL loss terms")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-extractor", help="train the FGD feature extractor")
    p.add_argument("--processed", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--latent-dim", type=int, default=32)
    p.add_argument("--split", default="train", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_train_extractor)

    p = sub.add_parser("synthesize", help="generate an animation for speech input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--words", required=True, help="words.json with timestamped words")
    p.add_argument("--audio", required=True, help="mono WAV file")
    p.add_argument("--speaker-id", type=int)
    p.add_argument("--style-vector", help="8 comma-separated values")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="json", choices=["csv", "json", "bvh"])
    p.add_argument("--name", default="gesture")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="score a checkpoint against held-out gestures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--processed", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise-bench", help="metric-vs-disturbance validation sweep")
    p.add_argument("--extractor", required=True)
    p.add_argument("--processed", required=True)
    p.add_argument("--grid", required=True, help="JSON: noise kind -> list of zeta values")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-windows", type=int, default=0)
    p.add_argument("--min-windows", type=int, default=100)
    p.set_defaults(func=cmd_noise_bench)

    p = sub.add_parser("style-map", help="motion statistics per speaker style")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--words", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_style_map)

    p = sub.add_parser("text-alter", help="FGD between gestures before/after word substitution")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--processed", required=True)
    p.add_argument("--substitutions", required=True, help="JSON: word -> replacement")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--max-windows", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_text_alter)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        with open(known.config) as f:
            overrides = json.load(f)
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                sp.set_defaults(**{k: v for k, v in overrides.items()
                                   if any(a.dest == k for a in sp._actions)})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GestureError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
