"""Verification scoring: cosine scores, best-threshold accuracy, ROC and TAR@FAR.

A pair is accepted when ``score >= threshold``. Rates are empirical step
functions; nothing is interpolated between observed scores.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .directional import as_batch, check_unit, cosine_similarity, normalize
from .errors import DegenerateInputError, DomainError

DEFAULT_FAR_TARGETS = (0.01, 0.001)


@dataclass(frozen=True)
class Pair:
    a: int
    b: int
    genuine: bool


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=float).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=float).reshape(-1)

    def require_both(self):
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise DomainError("need at least one genuine and one impostor score")


@dataclass
class VerificationReport:
    accuracy: float
    threshold: float
    roc: list = field(default_factory=list)
    tar_at_far: dict = field(default_factory=dict)


def as_pairs(pairs) -> list[Pair]:
    return [p if isinstance(p, Pair) else Pair(int(p[0]), int(p[1]), bool(p[2])) for p in pairs]


def aggregate_template(features) -> np.ndarray:
    """Elementwise mean of unit features, renormalized."""
    x = check_unit(features)
    mean = x.mean(axis=0)
    if np.linalg.norm(mean) <= 1e-12:
        raise DegenerateInputError("template features cancel out; mean direction undefined")
    return normalize(mean)


def pair_scores(features, pairs) -> np.ndarray:
    x = as_batch(features, "features")
    pairs = as_pairs(pairs)
    if not pairs:
        return np.zeros(0)
    idx = np.array([(p.a, p.b) for p in pairs])
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise IndexError(f"pair index out of range for {x.shape[0]} features")
    return cosine_similarity(x[idx[:, 0]], x[idx[:, 1]]).reshape(-1)


def score_pairs(features, pairs) -> ScoreSet:
    """Cosine score for every pair, routed to genuine / impostor by its label."""
    pairs = as_pairs(pairs)
    s = pair_scores(features, pairs)
    flags = np.array([p.genuine for p in pairs], dtype=bool)
    return ScoreSet(s[flags], s[~flags])


def _candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    allv = np.concatenate([scores.genuine, scores.impostor])
    uniq = np.unique(allv)
    # one threshold above every score (accept nothing)
    return np.append(uniq, np.nextafter(uniq[-1], np.inf))


def _rates(scores: ScoreSet, thresholds: np.ndarray):
    g = np.sort(scores.genuine)
    im = np.sort(scores.impostor)
    tar = (g.size - np.searchsorted(g, thresholds, side="left")) / g.size
    far = (im.size - np.searchsorted(im, thresholds, side="left")) / im.size
    return far, tar


def tar_at_far(scores: ScoreSet, far_targets=DEFAULT_FAR_TARGETS) -> dict:
    """Map each FAR target to ``(tar, threshold)``.

    The threshold is the smallest observed-score threshold whose empirical
    FAR does not exceed the target.
    """
    scores.require_both()
    th = _candidate_thresholds(scores)
    far, tar = _rates(scores, th)
    out = {}
    for target in far_targets:
        if not 0 <= target <= 1:
            raise DomainError(f"FAR target must lie in [0, 1], got {target}")
        # far is non-increasing in the (ascending) thresholds; the last candidate always has far 0
        i = int(np.argmax(far <= target))
        out[float(target)] = (float(tar[i]), float(th[i]))
    return out


def roc_curve(scores: ScoreSet) -> list[tuple[float, float]]:
    """``(far, tar)`` points over all candidate thresholds, FAR ascending."""
    scores.require_both()
    th = _candidate_thresholds(scores)
    far, tar = _rates(scores, th)
    return [(float(f), float(t)) for f, t in zip(far[::-1], tar[::-1])]


def best_threshold_accuracy(scores: ScoreSet) -> tuple[float, float]:
    """Maximum verification accuracy over midpoint thresholds; ties go to the lowest threshold."""
    scores.require_both()
    uniq = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    th = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]])
    return _best_on(scores, th)


def _best_on(scores: ScoreSet, th: np.ndarray) -> tuple[float, float]:
    g = np.sort(scores.genuine)
    im = np.sort(scores.impostor)
    # integer counts keep the accuracy bit-identical to a direct count
    tp = g.size - np.searchsorted(g, th, side="left")
    tn = np.searchsorted(im, th, side="left")
    acc = (tp + tn) / (g.size + im.size)
    i = int(np.argmax(acc))
    return float(acc[i]), float(th[i])


def accuracy_at(scores: ScoreSet, threshold: float) -> float:
    tp = np.sum(scores.genuine >= threshold)
    tn = np.sum(scores.impostor < threshold)
    return float((tp + tn) / (scores.genuine.size + scores.impostor.size))


def kfold_accuracy(features, folds) -> tuple[float, list[float]]:
    """Threshold chosen on the union of the other folds, accuracy measured on the held-out fold."""
    if len(folds) < 2:
        raise DomainError("k-fold evaluation needs at least 2 folds")
    fold_scores = []
    for i, fold in enumerate(folds):
        pairs = as_pairs(fold)
        if not pairs:
            raise DomainError(f"fold {i} is empty")
        fold_scores.append(score_pairs(features, pairs))
    accs = []
    for i, held in enumerate(fold_scores):
        rest = ScoreSet(np.concatenate([s.genuine for j, s in enumerate(fold_scores) if j != i]),
                        np.concatenate([s.impostor for j, s in enumerate(fold_scores) if j != i]))
        _, threshold = best_threshold_accuracy(rest)
        accs.append(accuracy_at(held, threshold))
    return float(np.mean(accs)), accs


def verification_report(scores: ScoreSet, far_targets=DEFAULT_FAR_TARGETS) -> VerificationReport:
    far_targets = sorted(set(DEFAULT_FAR_TARGETS) | {float(f) for f in far_targets})
    acc, th = best_threshold_accuracy(scores)
    return VerificationReport(acc, th, roc_curve(scores), tar_at_far(scores, far_targets))


def scores_csv(pairs, scores) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair_a", "pair_b", "label", "score"])
    for p, s in zip(as_pairs(pairs), scores):
        w.writerow([p.a, p.b, int(p.genuine), repr(float(s))])
    return buf.getvalue()


def roc_csv(roc) -> str:
    return "far,tar\n" + "".join(f"{f!r},{t!r}\n" for f, t in roc)


def report_text(report: VerificationReport, n_genuine: int, n_impostor: int) -> str:
    """Plain ``key = value`` report; one ``tar@far=<target>`` line per FAR target."""
    lines = [
        "# vmfkit verification report",
        f"genuine_pairs = {n_genuine}",
        f"impostor_pairs = {n_impostor}",
        f"accuracy = {report.accuracy!r}",
        f"threshold = {report.threshold!r}",
    ]
    for far in sorted(report.tar_at_far, reverse=True):
        tar, th = report.tar_at_far[far]
        lines.append(f"tar@far={far!r} = {tar!r} (threshold {th!r})")
    return "\n".join(lines) + "\n"

