"""Command-line entry point.

Subcommands: gen-data, extract-features, train, extract, score, eval,
gradcheck, compare. Every command reads one JSON config (defaults apply when
none is given), accepts --set section.key=value overrides, and writes a
reproducibility stamp next to its outputs. Exit codes: 0 success, 1
validation error (bad config, bad input files), 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, gradcheck, kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import config_hash, load_config, set_key
from .dataio import (read_embeddings, read_manifest, read_scores, read_trials,
                     write_embeddings, write_manifest, write_metrics,
                     write_scores, write_trials)
from .errors import BmfaError, NumericError, ValidationError
from .evaluation import (evaluate_rows, extract_embeddings, score_trials)
from .frontend import FbankConfig, process_waveform, read_wav
from .model import Model
from .tensor import read_btf, write_btf
from .training import SyntheticCorpusConfig, gen_corpus, train

COMPARE_GRID = [
    ("baseline", None),
    ("mfa_s34", "concat"),
    ("mfa_s34", "afm"),
    ("mea_fpm", "add"),
    ("mea_fpm", "afm"),
    ("bmfa", "concat"),
    ("bmfa", "add"),
    ("bmfa", "afm"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _parse_set(raw: str):
    key, eq, value = raw.partition("=")
    if not eq:
        raise ValidationError(f"--set needs section.key=value, got {raw!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value  # bare strings allowed without quotes


def _config_from_args(args) -> dict:
    cfg = load_config(getattr(args, "config", None))
    for raw in getattr(args, "set", None) or []:
        key, value = _parse_set(raw)
        set_key(cfg, key, value)
    if getattr(args, "steps", None) is not None:
        set_key(cfg, "train.steps", args.steps)
    if getattr(args, "seed", None) is not None and hasattr(args, "corpus"):
        set_key(cfg, "train.seed", args.seed)
    if getattr(args, "strategy", None) is not None:
        set_key(cfg, "model.strategy", args.strategy)
        if args.strategy == "baseline":
            set_key(cfg, "model.fusion", None)
    if getattr(args, "fusion", None) is not None:
        set_key(cfg, "model.fusion", None if args.fusion == "none" else args.fusion)
    return cfg


def _write_stamp(out_dir, command: str, cfg: dict, seed) -> None:
    stamp = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "formats": {"tensor": "BTF1", "checkpoint": "BMFACKPT1",
                    "embeddings": "BMFAEMB1"},
        "version": __version__,
    }
    with open(os.path.join(out_dir, "stamp.json"), "w", encoding="utf-8") as f:
        json.dump(stamp, f, indent=2, sort_keys=True)
        f.write("\n")


def _build_model(cfg: dict, num_classes=None, seed: int = 0) -> Model:
    mc = cfg["model"]
    if mc["strategy"] == "baseline" and mc["fusion"] is not None:
        raise ValidationError(
            "strategy 'baseline' accepts no fusion choice; set model.fusion to null"
        )
    return Model(strategy=mc["strategy"], fusion=mc["fusion"],
                 stages=tuple(mc["stages"]), r=mc["r"],
                 embedding_dim=mc["embedding_dim"], num_classes=num_classes,
                 seed=seed)


def _load_features(manifest_path) -> list[tuple[str, str, np.ndarray]]:
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for utt, spk, rel in read_manifest(manifest_path):
        path = rel if os.path.isabs(rel) else os.path.join(base, rel)
        a = read_btf(path)
        if a.shape[0] != 1 or a.shape[1] != 1 or a.shape[3] != 64:
            raise ValidationError(f"{path}: features must be (1,1,T,64), got {a.shape}")
        out.append((utt, spk, np.asarray(a[0, 0], dtype=np.float32)))
    return out


def _find_manifest(corpus_dir, prefer: str) -> str:
    for name in (prefer, "manifest.txt"):
        path = os.path.join(corpus_dir, name)
        if os.path.exists(path):
            return path
    raise ValidationError(f"no manifest found under {corpus_dir}")


def _train_one(cfg: dict, corpus_dir, strategy: str, fusion,
               quiet: bool = False):
    """Train one system on the corpus's train split; returns the model."""
    tc = cfg["train"]
    seed = tc["seed"]
    if seed is None:
        raise ValidationError("training requires a seed: set train.seed or pass --seed")
    data = _load_features(_find_manifest(corpus_dir, "train.manifest"))
    speakers = sorted({spk for _, spk, _ in data})
    if len(speakers) < 2:
        raise ValidationError(f"need at least 2 speakers, found {len(speakers)}")
    label = {spk: i for i, spk in enumerate(speakers)}
    model = Model(strategy=strategy, fusion=fusion,
                  stages=tuple(cfg["model"]["stages"]), r=cfg["model"]["r"],
                  embedding_dim=cfg["model"]["embedding_dim"],
                  num_classes=len(speakers), seed=seed)
    utts = [(utt, label[spk], feats) for utt, spk, feats in data]
    every = max(1, tc["steps"] // 10)

    def log(step, lr, loss, acc):
        if not quiet and (step % every == 0 or step == tc["steps"]):
            print(f"step {step}/{tc['steps']} lr {lr:.3e} loss {loss:.4f} acc {acc:.3f}")

    metrics = train(model, utts, steps=tc["steps"], batch=tc["batch"],
                    crop=tc["crop"], seed=seed, lr_start=tc["lr_start"],
                    lr_end=tc["lr_end"], m=tc["m"], s=tc["s"], log=log)
    return model, metrics, seed


def _evaluate_model(cfg: dict, model: Model, corpus_dir):
    feats = {utt: f for utt, _, f in
             _load_features(_find_manifest(corpus_dir, "eval.manifest"))}
    trials = read_trials(os.path.join(corpus_dir, "trials.txt"))
    embeddings = extract_embeddings(model, feats)
    rows = score_trials(embeddings, trials)
    ec = cfg["eval"]
    return evaluate_rows(rows, ec["p_target"], ec["c_miss"], ec["c_fa"]), rows


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> None:
    cfg = _config_from_args(args)
    d = cfg["data"]
    scfg = SyntheticCorpusConfig(
        n_speakers=d["n_speakers"], utts_per_speaker=d["utts_per_speaker"],
        min_frames=d["min_frames"], max_frames=d["max_frames"],
        noise_scale=d["noise_scale"],
        eval_utts_per_speaker=d["eval_utts_per_speaker"],
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    split = gen_corpus(scfg, args.out)
    write_manifest(os.path.join(args.out, "manifest.txt"), split["all"])
    write_manifest(os.path.join(args.out, "train.manifest"), split["train"])
    write_manifest(os.path.join(args.out, "eval.manifest"), split["eval"])
    write_trials(os.path.join(args.out, "trials.txt"), split["trials"])
    _write_stamp(args.out, "gen-data", cfg, args.seed)
    print(f"wrote {len(split['all'])} utterances ({scfg.n_speakers} speakers, "
          f"{len(split['eval'])} held out, {len(split['trials'])} trials) to {args.out}")


def cmd_extract_features(args) -> None:
    cfg = _config_from_args(args)
    fc = FbankConfig(**cfg["frontend"])
    rng = np.random.default_rng(args.seed)
    base = os.path.dirname(os.path.abspath(args.manifest))
    feat_dir = os.path.join(args.out, "feats")
    os.makedirs(feat_dir, exist_ok=True)
    entries = []
    skipped = 0
    for utt, spk, rel in read_manifest(args.manifest):
        path = rel if os.path.isabs(rel) else os.path.join(base, rel)
        samples, rate = read_wav(path)
        if rate != fc.sample_rate:
            raise ValidationError(
                f"{path}: sample rate {rate} != configured {fc.sample_rate}"
            )
        chunks = process_waveform(samples, fc, rng)
        if not chunks:
            print(f"warning: {utt}: too short after VAD, skipped", file=sys.stderr)
            skipped += 1
            continue
        for j, ch in enumerate(chunks):
            chunk_id = f"{utt}-c{j:02d}"
            rel_out = os.path.join("feats", f"{chunk_id}.btf")
            write_btf(os.path.join(args.out, rel_out),
                      ch.astype(np.float32).reshape(1, 1, *ch.shape))
            entries.append((chunk_id, spk, rel_out))
    if not entries:
        raise ValidationError("no utterance produced any chunk")
    write_manifest(os.path.join(args.out, "manifest.txt"), entries)
    _write_stamp(args.out, "extract-features", cfg, args.seed)
    print(f"wrote {len(entries)} chunks to {args.out} ({skipped} utterances skipped)")


def cmd_train(args) -> None:
    cfg = _config_from_args(args)
    model, metrics, seed = _train_one(cfg, args.corpus, cfg["model"]["strategy"],
                                      cfg["model"]["fusion"])
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.ckpt"), model.state_dict())
    write_metrics(os.path.join(args.out, "metrics.txt"), metrics)
    _write_stamp(args.out, "train", cfg, seed)
    if metrics:
        _, _, loss, acc = metrics[-1]
        print(f"finished: final loss {loss:.4f}, accuracy {acc:.3f}")
    else:
        print("finished: 0 steps, checkpoint equals initialization")


def cmd_extract(args) -> None:
    cfg = _config_from_args(args)
    model = _build_model(cfg, num_classes=None, seed=0)
    model.load_state_dict(load_checkpoint(args.checkpoint))
    feats = {utt: f for utt, _, f in _load_features(args.manifest)}
    embeddings = extract_embeddings(model, feats)
    write_embeddings(args.out, embeddings)
    print(f"wrote {len(embeddings)} embeddings to {args.out}")


def cmd_score(args) -> None:
    embeddings = read_embeddings(args.embeddings)
    trials = read_trials(args.trials)
    rows = score_trials(embeddings, trials)
    write_scores(args.out, rows)
    print(f"scored {len(rows)} trials to {args.out}")


def cmd_eval(args) -> None:
    cfg = _config_from_args(args)
    if args.scores:
        rows = read_scores(args.scores)
    else:
        if not (args.checkpoint and args.manifest and args.trials):
            raise ValidationError(
                "eval needs either --scores or all of --checkpoint/--manifest/--trials"
            )
        model = _build_model(cfg, num_classes=None, seed=0)
        model.load_state_dict(load_checkpoint(args.checkpoint))
        feats = {utt: f for utt, _, f in _load_features(args.manifest)}
        rows = score_trials(extract_embeddings(model, feats),
                            read_trials(args.trials))
        if args.out:
            write_scores(args.out, rows)
    ec = cfg["eval"]
    m = evaluate_rows(rows, ec["p_target"], ec["c_miss"], ec["c_fa"])
    print(f"EER {100.0 * m.eer:.4f}%")
    print(f"minDCF {m.min_dcf:.4f}")
    print(f"threshold {m.threshold:.6f}")


def cmd_gradcheck(args) -> None:
    reports = gradcheck.run_all(args.filter, seed=args.seed)
    width = max(len(r.op) for r in reports)
    failures = 0
    for r in reports:
        flag = "PASS" if r.passed else "FAIL"
        failures += not r.passed
        print(f"{r.op:<{width}s}  max_rel_err {r.max_rel_err:.3e}  "
              f"tol {r.tolerance:.0e}  {flag}")
    if failures:
        raise NumericError(f"{failures} gradient check(s) failed")
    print(f"all {len(reports)} checks passed")


def cmd_compare(args) -> None:
    cfg = _config_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    lines = [f"{'system':<16s} {'EER(%)':>8s} {'minDCF':>8s}"]
    print(lines[0])
    for strategy, fusion in COMPARE_GRID:
        name = strategy if fusion is None else f"{strategy}+{fusion}"
        model, _, seed = _train_one(cfg, args.corpus, strategy, fusion, quiet=True)
        metrics, _ = _evaluate_model(cfg, model, args.corpus)
        line = f"{name:<16s} {100.0 * metrics.eer:8.4f} {metrics.min_dcf:8.4f}"
        lines.append(line)
        print(line)
    with open(os.path.join(args.out, "compare.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    _write_stamp(args.out, "compare", cfg, cfg["train"]["seed"])


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="bmfa",
                     description="speaker-embedding training and evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $BMFA_THREADS or 1)")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract-features", help="waveforms to feature chunks")
    common(p)
    p.add_argument("--manifest", required=True, help="lines: utt spk wav-path")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="chunking rng seed")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train one system")
    common(p)
    p.add_argument("--corpus", required=True, help="directory from gen-data")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=["baseline", "mfa_s34", "mea_fpm", "bmfa"])
    p.add_argument("--fusion", choices=["add", "concat", "afm", "none"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="checkpoint + features to embeddings")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=["baseline", "mfa_s34", "mea_fpm", "bmfa"])
    p.add_argument("--fusion", choices=["add", "concat", "afm", "none"])
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", help="cosine-score a trial list")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER/minDCF from scores or a checkpoint")
    common(p)
    p.add_argument("--scores")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--trials")
    p.add_argument("--out", help="score file to write (checkpoint mode)")
    p.add_argument("--strategy", choices=["baseline", "mfa_s34", "mea_fpm", "bmfa"])
    p.add_argument("--fusion", choices=["add", "concat", "afm", "none"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p)
    p.add_argument("--filter", help="run only checks whose name contains this")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="train and evaluate the strategy grid")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = args.threads
        if threads is None:
            threads = int(os.environ.get("BMFA_THREADS", "1"))
        kernels.set_num_threads(threads)
        args.func(args)
        return 0
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BmfaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
