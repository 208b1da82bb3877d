"""Line-oriented data files: manifests, trial lists, score files, training
metrics, and the embedding archive.

All formats are whitespace-delimited text, one record per line. Identifiers
therefore must not contain whitespace. The embedding archive ("BMFAEMB1") is
a text format: a header line ``BMFAEMB1 <dim>`` followed by one line per
utterance: the utterance id and <dim> float values.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, ValidationError

EMB_MAGIC = "BMFAEMB1"


def _check_id(token: str, what: str) -> str:
    if not token or any(ch.isspace() for ch in token):
        raise ValidationError(f"{what} must be non-empty and whitespace-free: {token!r}")
    return token


def _lines(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


# -- manifest: utt_id speaker_id path ---------------------------------------


def write_manifest(path, entries) -> None:
    """entries: iterable of (utt_id, speaker_id, feature_path)."""
    with open(path, "w", encoding="utf-8") as f:
        for utt, spk, p in entries:
            f.write(f"{_check_id(utt, 'utt id')} {_check_id(spk, 'speaker id')} {p}\n")


def read_manifest(path) -> list[tuple[str, str, str]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'utt speaker path', got {line!r}")
        out.append((parts[0], parts[1], parts[2]))
    if not out:
        raise FormatError(f"{path}: empty manifest")
    return out


# -- trials: enroll_id test_id target|nontarget ------------------------------


def write_trials(path, trials) -> None:
    """trials: iterable of (enroll_id, test_id, is_target: bool)."""
    with open(path, "w", encoding="utf-8") as f:
        for enroll, test, target in trials:
            label = "target" if target else "nontarget"
            f.write(f"{enroll} {test} {label}\n")


def read_trials(path) -> list[tuple[str, str, bool]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
            raise FormatError(
                f"{path}:{lineno}: expected 'enroll test target|nontarget', got {line!r}"
            )
        out.append((parts[0], parts[1], parts[2] == "target"))
    if not out:
        raise FormatError(f"{path}: empty trial list")
    return out


# -- scores: enroll_id test_id target|nontarget score ------------------------


def write_scores(path, rows) -> None:
    """rows: iterable of (enroll_id, test_id, is_target, score)."""
    with open(path, "w", encoding="utf-8") as f:
        for enroll, test, target, score in rows:
            label = "target" if target else "nontarget"
            f.write(f"{enroll} {test} {label} {score:.9e}\n")


def read_scores(path) -> list[tuple[str, str, bool, float]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 4 or parts[2] not in ("target", "nontarget"):
            raise FormatError(f"{path}:{lineno}: bad score line {line!r}")
        try:
            score = float(parts[3])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad score value {parts[3]!r}") from None
        out.append((parts[0], parts[1], parts[2] == "target", score))
    if not out:
        raise FormatError(f"{path}: empty score file")
    return out


# -- training metrics: step lr loss accuracy ---------------------------------


def write_metrics(path, records) -> None:
    """records: iterable of (step, lr, loss, accuracy)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# step lr loss accuracy\n")
        for step, lr, loss, acc in records:
            f.write(f"{step} {lr:.9e} {loss:.9e} {acc:.6f}\n")


def read_metrics(path) -> list[tuple[int, float, float, float]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: bad metrics line {line!r}")
        try:
            out.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad metrics values {line!r}") from None
    return out


# -- embedding archive --------------------------------------------------------


def write_embeddings(path, embeddings: dict[str, np.ndarray]) -> None:
    dims = {np.asarray(v).shape for v in embeddings.values()}
    if len(dims) > 1 or any(len(d) != 1 for d in dims):
        raise ValidationError(f"embeddings must share one 1-D shape, got {dims}")
    dim = next(iter(dims))[0] if dims else 0
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{EMB_MAGIC} {dim}\n")
        for utt in embeddings:
            vals = " ".join(f"{v:.9e}" for v in np.asarray(embeddings[utt], dtype=np.float64))
            f.write(f"{_check_id(utt, 'utt id')} {vals}\n")


def read_embeddings(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != EMB_MAGIC:
            raise FormatError(f"{path}: missing {EMB_MAGIC} header")
        try:
            dim = int(header[1])
        except ValueError:
            raise FormatError(f"{path}: bad dimension {header[1]!r}") from None
        out: dict[str, np.ndarray] = {}
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected id + {dim} values")
            if parts[0] in out:
                raise FormatError(f"{path}:{lineno}: duplicate utterance {parts[0]!r}")
            out[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
    if not out:
        raise FormatError(f"{path}: no embeddings")
    return out
