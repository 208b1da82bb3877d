"""Trial scoring and detection metrics (EER, minDCF).

Decisions are "accept iff score >= threshold". Operating points are swept
over the sorted unique scores plus a reject-all extreme, giving every
achievable (miss, false-alarm) pair; EER interpolates linearly between the
two adjacent points where the miss and false-alarm rates cross, and minDCF
minimizes the normalized detection cost over the same sweep with
P_target = 0.01 by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Node
from .errors import NumericError, ValidationError


@dataclass
class DetMetrics:
    eer: float
    min_dcf: float
    threshold: float  # score threshold at the EER crossing

    def __post_init__(self):
        if not 0.0 <= self.eer <= 1.0:
            raise ValidationError(f"eer must lie in [0, 1], got {self.eer}")
        if self.min_dcf < 0.0:
            raise ValidationError(f"min_dcf must be >= 0, got {self.min_dcf}")


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    """Inner product of the unit-normalized embeddings, in [-1, 1]."""
    a = np.asarray(e1, dtype=np.float64).ravel()
    b = np.asarray(e2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"embedding lengths differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("zero-norm embedding cannot be scored")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _operating_points(scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, miss rate, false-alarm rate) over the full sweep.

    Entry k is the operating point "accept iff score >= thresholds[k]"; the
    final entry is the reject-all point (threshold +inf). Miss rate is
    non-decreasing and false-alarm rate non-increasing along the sweep.
    """
    vals = np.array([s for s, _ in scores], dtype=np.float64)
    tgt = np.array([bool(t) for _, t in scores])
    if not np.all(np.isfinite(vals)):
        raise ValidationError("scores must be finite")
    n_tgt = int(tgt.sum())
    n_non = int((~tgt).sum())
    if n_tgt == 0 or n_non == 0:
        raise ValidationError(
            f"degenerate trial list: {n_tgt} targets, {n_non} nontargets"
        )
    thresholds = np.unique(vals)
    # counts strictly below each threshold, via one sort per class; rates are
    # exact integer-count ratios so they agree bit for bit with direct counting
    miss = np.searchsorted(np.sort(vals[tgt]), thresholds, side="left") / n_tgt
    fa = (n_non - np.searchsorted(np.sort(vals[~tgt]), thresholds, side="left")) / n_non
    thresholds = np.append(thresholds, np.inf)
    miss = np.append(miss, 1.0)
    fa = np.append(fa, 0.0)
    return thresholds, miss, fa


def compute_eer(scores) -> tuple[float, float]:
    """scores: iterable of (score, is_target). Returns (eer, threshold)."""
    thresholds, miss, fa = _operating_points(list(scores))
    diff = miss - fa
    k = int(np.argmax(diff >= 0.0))  # first crossing; diff[0] = -fa[0] < 0
    if diff[k] == 0.0:
        return float(miss[k]), float(thresholds[k])
    a, b = k - 1, k
    alpha = (fa[a] - miss[a]) / ((miss[b] - miss[a]) - (fa[b] - fa[a]))
    eer = miss[a] + alpha * (miss[b] - miss[a])
    thr_b = thresholds[b] if np.isfinite(thresholds[b]) else thresholds[a]
    threshold = thresholds[a] + alpha * (thr_b - thresholds[a])
    return float(eer), float(threshold)


def compute_min_dcf(scores, p_target: float = 0.01, c_miss: float = 1.0,
                    c_fa: float = 1.0) -> float:
    """Minimum normalized detection cost over all swept thresholds."""
    if not 0.0 < p_target < 1.0:
        raise ValidationError(f"p_target must lie in (0, 1), got {p_target}")
    if c_miss <= 0.0 or c_fa <= 0.0:
        raise ValidationError("detection costs must be > 0")
    _, miss, fa = _operating_points(list(scores))
    cost = c_miss * p_target * miss + c_fa * (1.0 - p_target) * fa
    return float(cost.min() / min(c_miss * p_target, c_fa * (1.0 - p_target)))


def extract_embeddings(model, feats_by_utt: dict[str, np.ndarray],
                       log=None) -> dict[str, np.ndarray]:
    """Run each (T, 64) feature matrix through the model in BN-infer mode.
    Odd trailing frames are dropped (the backbone needs even T)."""
    model.set_mode("infer")
    out = {}
    for utt in feats_by_utt:
        feats = np.asarray(feats_by_utt[utt], dtype=np.float32)
        t = feats.shape[0] & ~1
        if feats.ndim != 2 or feats.shape[1] != 64 or t < 2:
            raise ValidationError(f"{utt}: features must be (T>=2, 64), "
                                  f"got {feats.shape}")
        emb = model.embed(Node(feats[:t].reshape(1, 1, t, 64)))
        out[utt] = emb.value[0].copy()
        if log is not None:
            log(utt)
    return out


def score_trials(embeddings: dict[str, np.ndarray], trials):
    """trials: iterable of (enroll, test, is_target); returns rows of
    (enroll, test, is_target, cosine score)."""
    rows = []
    for enroll, test, target in trials:
        for utt in (enroll, test):
            if utt not in embeddings:
                raise ValidationError(f"trial references unknown utterance {utt!r}")
        rows.append((enroll, test, target, cosine_score(embeddings[enroll],
                                                        embeddings[test])))
    if not rows:
        raise ValidationError("empty trial list")
    return rows


def evaluate_rows(rows, p_target: float = 0.01, c_miss: float = 1.0,
                  c_fa: float = 1.0) -> DetMetrics:
    scores = [(score, target) for _, _, target, score in rows]
    eer, threshold = compute_eer(scores)
    dcf = compute_min_dcf(scores, p_target, c_miss, c_fa)
    return DetMetrics(eer=eer, min_dcf=dcf, threshold=threshold)


def evaluate(model, feats_by_utt: dict[str, np.ndarray], trials,
             p_target: float = 0.01, c_miss: float = 1.0,
             c_fa: float = 1.0) -> tuple[DetMetrics, list]:
    """Extract, score, and measure; returns (metrics, per-trial score rows)."""
    embeddings = extract_embeddings(model, feats_by_utt)
    rows = score_trials(embeddings, trials)
    return evaluate_rows(rows, p_target, c_miss, c_fa), rows
