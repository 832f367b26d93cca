"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 I/O, 4 bad file format or config,
5 numeric failure. ``SPKREFINE_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import encoder, metrics, tensorio
from .config import ConfigError, PipelineConfig, load_config
from .dsp import AudioFormatError, TooShortError, extract_features, read_wav
from .refine import ChunkConfig, RefinementConfig, RefinementStream, utterance_embedding
from .trainer import TeacherOracle, TrainingDivergedError, train_kd, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5

STREAM_BLOCK = 1600  # samples pushed per step by `refine` (100 ms)


def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else PipelineConfig()


def _load_weights(path, cfg: PipelineConfig):
    return tensorio.load_weights(path, expected_config=cfg.encoder)


def cmd_embed(args):
    cfg = _config(args)
    w = _load_weights(args.weights, cfg)
    feats = extract_features(read_wav(args.wav), cfg.feature)
    vec = utterance_embedding(feats, w, cfg.chunk)
    tensorio.save_embedding(vec.astype(np.float32), args.out, normalized=True)
    print(f"wrote {len(vec)}-dim embedding to {args.out}")
    return EXIT_OK


def cmd_train_kd(args):
    cfg = _config(args)
    result = train_kd(cfg.train, encoder_cfg=cfg.encoder)
    tensorio.save_weights(result.weights, args.out)
    if args.history:
        write_history_csv(result.history, args.history)
    last = result.history[-1]
    print(f"epochs {last['epoch']}  loss {result.history[0]['loss']:.4f} -> {last['loss']:.4f}  "
          f"tau {last['tau']:.3f}  val retrieval {last['retrieval_accuracy']:.3f}")
    print(f"weights written to {args.out}")
    return EXIT_OK


def cmd_refine(args):
    cfg = _config(args)
    mode = args.mode or cfg.refine.mode
    alpha = args.alpha
    if alpha is None and mode == cfg.refine.mode:
        alpha = cfg.refine.alpha
    if mode == "light" and not args.weights:
        print("error: refine in light mode needs --weights", file=sys.stderr)
        return EXIT_USAGE
    refine_cfg = RefinementConfig(alpha=alpha, mode=mode, scaling=cfg.refine.scaling,
                                  beta=cfg.refine.beta, upsample=cfg.refine.upsample)
    chunk_cfg = ChunkConfig.from_ms(args.chunk_ms, cfg.feature) if args.chunk_ms else cfg.chunk
    reference, _ = tensorio.load_embedding(args.reference)
    if mode == "light":
        embedder = _load_weights(args.weights, cfg)
    else:
        embedder = TeacherOracle(cfg.train.teacher_seed, cfg.encoder.in_dim, len(reference))
    audio = read_wav(args.wav)

    stream = RefinementStream(reference, embedder, chunk_cfg, refine_cfg, cfg.feature)
    pieces = [stream.push_audio(audio[i:i + STREAM_BLOCK]) for i in range(0, len(audio), STREAM_BLOCK)]
    pieces.append(stream.finish())
    raw, scaled, cond = (np.concatenate(p, axis=-1) for p in zip(*pieces))

    with open(args.csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_index", "raw_similarity", "scaled_clipped"])
        for t, (r, s) in enumerate(zip(raw, scaled)):
            writer.writerow([t, repr(float(r)), repr(float(s))])
    if args.conditioning:
        tensorio.write_tensors(args.conditioning, "conditioning", {"conditioning": cond}, {
            "alpha": refine_cfg.alpha, "mode": mode, "chunk_len": chunk_cfg.chunk_len,
            "hop_ms": cfg.feature.hop_ms,
        })
    print(f"{len(raw)} frames, alpha {refine_cfg.alpha:g} ({mode}), mean scaled {scaled.mean():.4f}")
    return EXIT_OK


def _parse_label(text):
    low = text.strip().lower()
    if low in ("1", "true", "target", "yes", "same"):
        return True
    if low in ("0", "false", "nontarget", "no", "different"):
        return False
    raise ConfigError(f"unrecognised trial label {text!r}")


def cmd_eval_sv(args):
    cfg = _config(args)
    w = _load_weights(args.weights, cfg)
    cache = {}

    def embedding(path):
        if path not in cache:
            if tensorio.is_embedding_file(path):
                cache[path] = tensorio.load_embedding(path)[0].astype(np.float64)
            else:
                cache[path] = utterance_embedding(extract_features(read_wav(path), cfg.feature), w, cfg.chunk)
        return cache[path]

    trials = []
    base = os.path.dirname(os.path.abspath(args.trials))
    with open(args.trials) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ConfigError(f"{args.trials}:{lineno}: expected enroll<TAB>test<TAB>label")
            e, t, lab = parts
            e, t = (p if os.path.isabs(p) else os.path.join(base, p) for p in (e, t))
            trials.append(metrics.Trial(embedding(e), embedding(t), _parse_label(lab)))
    scores = metrics.score_trials(trials)
    labels = np.array([t.label for t in trials])
    eer, eer_thr = metrics.eer(scores, labels)
    dcf, dcf_thr = metrics.min_dcf(scores, labels, metrics.DcfParams(args.p_target))
    print(f"trials {len(trials)}  targets {int(labels.sum())}  non-targets {int((~labels).sum())}")
    print(f"EER {100 * eer:.2f}%  threshold {eer_thr:.6f}")
    print(f"minDCF {dcf:.4f}  threshold {dcf_thr:.6f}  (p_target {args.p_target:g})")
    return EXIT_OK


def cmd_inspect_weights(args):
    w = tensorio.load_weights(args.weights)
    print(f"config: {w.config.as_dict()}")
    print(f"{'tensor':<28}{'shape':>14}{'count':>10}")
    for name, arr in w.tensors().items():
        kind = "" if name in w.params else "  (buffer)"
        print(f"{name:<28}{str(arr.shape):>14}{arr.size:>10}{kind}")
    print(f"parameters: {encoder.param_count(w.config)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spkrefine", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("embed", help="utterance embedding of a WAV file")
    s.add_argument("wav")
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train-kd", help="contrastive distillation on the synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output weight file")
    s.add_argument("--history", help="per-epoch CSV")
    s.set_defaults(func=cmd_train_kd)

    s = sub.add_parser("refine", help="similarity track and conditioning for a WAV file")
    s.add_argument("wav")
    s.add_argument("--reference", required=True, help="reference embedding file")
    s.add_argument("--weights", help="encoder weights (light mode)")
    s.add_argument("--alpha", type=float, help="scaling factor (default 6 light, 2 oracle)")
    s.add_argument("--mode", choices=["light", "oracle"])
    s.add_argument("--chunk-ms", type=float, help="chunk length in ms (default 1000)")
    s.add_argument("--csv", required=True, help="output similarity track CSV")
    s.add_argument("--conditioning", help="output conditioning tensor file")
    s.add_argument("--config")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval-sv", help="EER and minDCF over a trial list")
    s.add_argument("trials", help="TSV: enroll_path, test_path, label")
    s.add_argument("--weights", required=True)
    s.add_argument("--p-target", type=float, default=0.01)
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval_sv)

    s = sub.add_parser("inspect-weights", help="print the tensor table and parameter count")
    s.add_argument("weights")
    s.set_defaults(func=cmd_inspect_weights)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SPKREFINE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AudioFormatError, tensorio.TensorFileError, ConfigError, TooShortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (FloatingPointError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
