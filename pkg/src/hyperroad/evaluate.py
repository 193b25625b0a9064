"""Downstream probes on frozen embeddings.

The probe is one-vs-rest logistic regression trained by full-batch gradient
descent on standardised features: L2 1e-4, learning rate 0.1 halved after
10 epochs without validation improvement, at most 500 epochs, best
validation weights kept.  10% of each training fold is held out for that
validation signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError

PROBE_L2 = 1e-4
PROBE_EPOCHS = 500
PROBE_LR = 0.1
PROBE_PLATEAU = 10
PROBE_VAL_FRACTION = 0.1


def confusion_matrix(pred, gold, classes) -> np.ndarray:
    """Rows are gold classes, columns predicted classes."""
    index = {c: k for k, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, g in zip(pred, gold):
        cm[index[g], index[p]] += 1
    return cm


def f1_scores(pred, gold) -> tuple[float, float, float]:
    """Micro, macro and support-weighted F1.

    Classes absent from ``gold`` are left out of the macro and weighted
    averages; a class whose F1 denominator is zero scores 0.
    """
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gold)} gold labels")
    if len(gold) == 0:
        raise ValueError("f1_scores needs at least one example")
    classes = np.unique(np.concatenate([pred, gold]))
    cm = confusion_matrix(pred, gold, classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    support = cm.sum(axis=1)
    micro_den = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_den if micro_den else 0.0
    den = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, den, out=np.zeros_like(tp), where=den > 0)
    present = support > 0
    macro = float(per_class[present].mean())
    weighted = float((per_class[present] * support[present]).sum() / support[present].sum())
    return float(micro), macro, weighted


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Shuffled partition of ``range(n)`` into folds whose sizes differ by at most one."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise InputError(f"{n} labelled examples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _ovr_loss(x, y, w, b):
    p = _sigmoid(x @ w + b)
    eps = 1e-12
    ce = -(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean(axis=0).sum()
    return ce + 0.5 * PROBE_L2 * (w * w).sum()


def train_ovr(x: np.ndarray, y: np.ndarray, n_classes: int, x_val=None, y_val=None):
    """Independent binary logistic regressions, one per class, trained jointly."""
    n, d = x.shape
    t = np.zeros((n, n_classes))
    t[np.arange(n), y] = 1.0
    tv = None
    if x_val is not None and len(x_val):
        tv = np.zeros((len(x_val), n_classes))
        tv[np.arange(len(x_val)), y_val] = 1.0
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    lr = PROBE_LR
    best = (np.inf, w.copy(), b.copy())
    stale = 0
    for _ in range(PROBE_EPOCHS):
        p = _sigmoid(x @ w + b)
        g = (p - t) / n
        w -= lr * (x.T @ g + PROBE_L2 * w)
        b -= lr * g.sum(axis=0)
        if tv is None:
            continue
        val = _ovr_loss(x_val, tv, w, b)
        if val < best[0] - 1e-9:
            best = (val, w.copy(), b.copy())
            stale = 0
        else:
            stale += 1
            if stale >= PROBE_PLATEAU:
                lr *= 0.5
                stale = 0
                if lr < PROBE_LR / 64:
                    break
    if tv is not None:
        return best[1], best[2]
    return w, b


@dataclass
class FoldResult:
    micro_f1: float
    macro_f1: float
    weighted_f1: float
    confusion: list[list[int]]
    n_test: int


@dataclass
class EvalReport:
    task: str
    classes: list
    folds: list[FoldResult] = field(default_factory=list)

    @property
    def micro_f1(self) -> float:
        return float(np.mean([f.micro_f1 for f in self.folds]))

    @property
    def macro_f1(self) -> float:
        return float(np.mean([f.macro_f1 for f in self.folds]))

    @property
    def weighted_f1(self) -> float:
        return float(np.mean([f.weighted_f1 for f in self.folds]))

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "classes": [int(c) if isinstance(c, (int, np.integer)) else str(c) for c in self.classes],
            "folds": [asdict(f) for f in self.folds],
            "mean": {"micro_f1": self.micro_f1, "macro_f1": self.macro_f1, "weighted_f1": self.weighted_f1},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def logistic_probe(embeddings: np.ndarray, labels, folds: int = 5, seed: int = 0,
                   task: str = "label") -> EvalReport:
    """k-fold one-vs-rest logistic regression; ``None`` labels are excluded."""
    x_all = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if len(labels) != len(x_all):
        raise InputError(f"{len(labels)} labels for {len(x_all)} embedding rows")
    keep = [k for k, v in enumerate(labels) if v is not None]
    x = x_all[keep]
    classes = sorted({labels[k] for k in keep})
    index = {c: k for k, c in enumerate(classes)}
    y = np.array([index[labels[k]] for k in keep], dtype=np.int64)
    parts = kfold_indices(len(y), folds, seed)
    rng = np.random.default_rng(seed + 1)
    report = EvalReport(task, classes)
    for f, test in enumerate(parts):
        train = np.setdiff1d(np.arange(len(y)), test)
        if not len(np.unique(y[train])):
            raise InputError(f"fold {f}: no classes in the training split")
        perm = rng.permutation(train)
        n_val = int(round(PROBE_VAL_FRACTION * len(train)))
        val, fit = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        mu = x[fit].mean(axis=0)
        sd = x[fit].std(axis=0)
        sd[sd == 0] = 1.0
        z = (x - mu) / sd
        w, b = train_ovr(z[fit], y[fit], len(classes), z[val], y[val])
        pred = np.argmax(z[test] @ w + b, axis=1)
        micro, macro, weighted = f1_scores(pred, y[test])
        cm = confusion_matrix(pred, y[test], np.arange(len(classes)))
        report.folds.append(FoldResult(micro, macro, weighted, cm.tolist(), int(len(test))))
    return report


def query_similar(embeddings: np.ndarray, road: int, top_k: int = 5) -> list[tuple[int, float]]:
    """Roads ranked by cosine similarity to ``road``; ties go to the lower index."""
    e = np.asarray(embeddings, dtype=np.float64)
    if not 0 <= road < len(e):
        raise IndexError(f"road index {road} out of range")
    q = e[road]
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError(f"road {road} has a zero embedding")
    norms = np.linalg.norm(e, axis=1)
    scores = np.divide(e @ q, norms * qn, out=np.zeros(len(e)), where=norms > 0)
    idx = np.arange(len(e))
    order = np.lexsort((idx, -scores))
    order = order[order != road][:top_k]
    return [(int(k), float(scores[k])) for k in order]
