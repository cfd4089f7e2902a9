"""Quantitative evaluation protocols for aligned spaces.

Retrieval (rank-1 and mAP) runs on cosine similarity with ties broken by
lowest gallery index. Probing uses a deterministic full-batch multinomial
logistic classifier. Clustering is seeded k-means (k-means++ init) scored
by ARI/NMI. Agreement and drift summarize directional coherence of
matched views in universe coordinates.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .dataio import Correspondence
from .errors import InvalidInput, ShapeError
from .numkernel import as_matrix, row_normalize
from .seeding import rng_for


def _cosine_matrix(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = row_normalize(as_matrix(query, "query"))
    g = row_normalize(as_matrix(gallery, "gallery"))
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    return q @ g.T


def rank1_retrieval(query, gallery, truth: Correspondence) -> float:
    """Fraction of queries whose top-cosine gallery row is the true match."""
    if np.size(query) == 0 or np.size(gallery) == 0:
        raise InvalidInput("retrieval needs non-empty query and gallery")
    sim = _cosine_matrix(query, gallery)
    if sim.shape[0] != len(truth):
        raise InvalidInput(f"{sim.shape[0]} queries but truth has {len(truth)} entries")
    predicted = np.argmax(sim, axis=1)  # ties resolve to the lowest index
    return float(np.mean(predicted == truth.permutation))


def average_precision_scores(query, gallery, query_labels, gallery_labels):
    """Per-query average precision over the cosine-ranked gallery.

    Returns (ap array, excluded mask); queries whose label never occurs in
    the gallery are excluded from the mean but reported in the mask.
    """
    sim = _cosine_matrix(query, gallery)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if query_labels.shape[0] != sim.shape[0] or gallery_labels.shape[0] != sim.shape[1]:
        raise InvalidInput("label arrays do not match query/gallery row counts")
    aps = np.zeros(sim.shape[0])
    excluded = np.zeros(sim.shape[0], dtype=bool)
    for i in range(sim.shape[0]):
        order = np.argsort(-sim[i], kind="stable")
        relevant = gallery_labels[order] == query_labels[i]
        n_rel = int(relevant.sum())
        if n_rel == 0:
            excluded[i] = True
            continue
        hits = np.flatnonzero(relevant)
        precision_at_hits = (np.arange(1, n_rel + 1)) / (hits + 1)
        aps[i] = precision_at_hits.mean()
    return aps, excluded


def mean_average_precision(query, gallery, query_labels, gallery_labels) -> float:
    aps, excluded = average_precision_scores(query, gallery, query_labels, gallery_labels)
    if excluded.all():
        raise InvalidInput("every query label is absent from the gallery")
    return float(aps[~excluded].mean())


# ---------------------------------------------------------------------------
# linear probe


class LinearProbe:
    """Multinomial logistic classifier, deterministic full-batch descent.

    Features are standardized internally on the training data; the step
    size comes from a power-iteration bound on the softmax curvature, so
    fitting needs no tuning and is bit-reproducible.
    """

    def __init__(self, iters: int = 500, l2: float = 1e-4):
        self.iters = iters
        self.l2 = l2
        self.classes_: np.ndarray | None = None
        self.weights_: np.ndarray | None = None
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None

    def _features(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean_) / self.scale_
        return np.hstack([z, np.ones((z.shape[0], 1))])

    def fit(self, x, y) -> "LinearProbe":
        x = as_matrix(x, "probe features")
        y = np.asarray(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.mean_ = x.mean(axis=0)
        scale = x.std(axis=0)
        self.scale_ = np.where(scale < 1e-12, 1.0, scale)
        feats = self._features(x)
        n, d = feats.shape
        k = self.classes_.shape[0]
        onehot = np.eye(k)[y_idx]

        # softmax curvature is bounded by 0.5 * lambda_max(X^T X / n)
        v = np.ones(d) / np.sqrt(d)
        for _ in range(50):
            v = feats.T @ (feats @ v) / n
            v /= max(np.linalg.norm(v), 1e-30)
        lam_max = float(v @ (feats.T @ (feats @ v)) / n)
        lr = 1.0 / (0.5 * lam_max + self.l2 + 1e-12)

        w = np.zeros((d, k))
        for _ in range(self.iters):
            logits = feats @ w
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            grad = feats.T @ (p - onehot) / n + self.l2 * w
            w -= lr * grad
        self.weights_ = w
        return self

    def predict(self, x) -> np.ndarray:
        feats = self._features(as_matrix(x, "probe features"))
        return self.classes_[np.argmax(feats @ self.weights_, axis=1)]

    def accuracy(self, x, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))


def linear_probe_stitch(train_x, train_y, test_x_mapped, test_y) -> float:
    """Train a probe on one space, score it on mapped data from another."""
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if not set(train_y.tolist()) & set(test_y.tolist()):
        raise InvalidInput("train and test label sets are disjoint")
    probe = LinearProbe().fit(train_x, train_y)
    return probe.accuracy(test_x_mapped, test_y)


def avg_new(accuracies: dict, new_id: str, base_ids: list) -> float:
    """Mean directed stitching accuracy between an added space and the base set."""
    values = []
    for base in base_ids:
        for pair in ((new_id, base), (base, new_id)):
            if pair not in accuracies:
                raise InvalidInput(f"missing directed accuracy for {pair}")
            values.append(accuracies[pair])
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# clustering


def kmeans(x, k: int, seed: int, max_iter: int = 300, tol: float = 1e-6):
    """Seeded k-means++ with Lloyd iterations and a relative-inertia stop."""
    x = as_matrix(x, "kmeans data")
    n = x.shape[0]
    if not 2 <= k <= n:
        raise InvalidInput(f"k={k} outside [2, N={n}]")
    rng = rng_for(seed, "kmeans")

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    dist2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, np.sum((x - centers[j]) ** 2, axis=1))

    prev_inertia = np.inf
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), labels].sum())
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:  # re-seed an empty cluster on the worst-served point
                worst = int(np.argmax(d2[np.arange(n), labels]))
                centers[j] = x[worst]
                labels[worst] = j
        if prev_inertia - inertia <= tol * max(prev_inertia, 1e-30) and np.isfinite(prev_inertia):
            break
        prev_inertia = inertia
    return labels, centers, inertia


@dataclass
class ClusterReport:
    rows: list  # (space_id, seed, ari, nmi)
    mean_ari: float
    std_ari: float
    mean_nmi: float
    std_nmi: float

    def to_dict(self) -> dict:
        return {
            "rows": [{"space": s, "seed": sd, "ari": a, "nmi": n} for s, sd, a, n in self.rows],
            "mean_ari": self.mean_ari,
            "std_ari": self.std_ari,
            "mean_nmi": self.mean_nmi,
            "std_nmi": self.std_nmi,
        }


def cluster_eval(mapped_spaces: dict, labels, k: int, seeds: list) -> ClusterReport:
    """k-means per space per seed, ARI/NMI against labels.

    Aggregates are mean +/- std across spaces of the per-space seed means.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise InvalidInput("k must be >= 2")
    rows = []
    per_space_ari, per_space_nmi = [], []
    for space_id, x in mapped_spaces.items():
        x = as_matrix(x, f"mapped[{space_id}]")
        if x.shape[0] != labels.shape[0]:
            raise InvalidInput(f"{space_id}: {x.shape[0]} rows vs {labels.shape[0]} labels")
        aris, nmis = [], []
        for seed in seeds:
            predicted, _, _ = kmeans(x, k, seed)
            ari = float(adjusted_rand_score(labels, predicted))
            nmi = float(normalized_mutual_info_score(labels, predicted))
            rows.append((space_id, seed, ari, nmi))
            aris.append(ari)
            nmis.append(nmi)
        per_space_ari.append(np.mean(aris))
        per_space_nmi.append(np.mean(nmis))
    return ClusterReport(
        rows=rows,
        mean_ari=float(np.mean(per_space_ari)),
        std_ari=float(np.std(per_space_ari)),
        mean_nmi=float(np.mean(per_space_nmi)),
        std_nmi=float(np.std(per_space_nmi)),
    )


# ---------------------------------------------------------------------------
# agreement and drift


@dataclass
class AgreementReport:
    d_plus: np.ndarray  # per-sample mean pairwise cosine distance
    gamma: np.ndarray  # per-sample magnitude of the mean unit direction
    delta_plus: float
    gamma90: float

    def to_dict(self) -> dict:
        return {"delta_plus": self.delta_plus, "gamma90": self.gamma90, "n": int(self.d_plus.shape[0])}


def agreement_metrics(aligned_views: list, normalize: bool = True) -> AgreementReport:
    """Matched-triplet coherence of exactly three aligned views."""
    if len(aligned_views) != 3:
        raise InvalidInput(f"agreement metrics need exactly 3 views, got {len(aligned_views)}")
    views = [as_matrix(v) for v in aligned_views]
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise ShapeError("views disagree in shape")
    if normalize:
        views = [row_normalize(v) for v in views]
    a, b, c = views
    d_plus = (
        (1.0 - np.sum(a * b, axis=1)) + (1.0 - np.sum(a * c, axis=1)) + (1.0 - np.sum(b * c, axis=1))
    ) / 3.0
    gamma = np.linalg.norm((a + b + c) / 3.0, axis=1)
    return AgreementReport(
        d_plus=d_plus,
        gamma=gamma,
        delta_plus=float(d_plus.mean()),
        gamma90=float(np.percentile(gamma, 90)),  # linear interpolation
    )


@dataclass
class DriftReport:
    drift: np.ndarray
    mean: float
    median: float

    def to_dict(self) -> dict:
        return {"mean_drift": self.mean, "median_drift": self.median, "n": int(self.drift.shape[0])}


def drift_metric(before, after) -> DriftReport:
    """Per-row 1 - cos between corrected and original directions."""
    before = as_matrix(before, "before")
    after = as_matrix(after, "after")
    if before.shape != after.shape:
        raise ShapeError(f"shapes differ: {before.shape} vs {after.shape}")
    drift = 1.0 - np.sum(row_normalize(after) * row_normalize(before), axis=1)
    return DriftReport(drift=drift, mean=float(drift.mean()), median=float(np.median(drift)))


# ---------------------------------------------------------------------------
# retrieval report


@dataclass
class RetrievalReport:
    pairs: dict = field(default_factory=dict)  # (src, dst) -> {"rank1": .., "map": ..}

    def add(self, src: str, dst: str, **metrics) -> None:
        self.pairs[(src, dst)] = dict(metrics)

    def aggregate(self, metric: str = "rank1") -> dict:
        values = [v[metric] for v in self.pairs.values() if metric in v]
        if not values:
            raise InvalidInput(f"no ordered pair carries metric {metric!r}")
        return {
            "mean": float(np.mean(values)),
            "worst": float(np.min(values)),
            "best": float(np.max(values)),
        }

    def to_dict(self) -> dict:
        out = {"pairs": [{"src": s, "dst": d, **m} for (s, d), m in sorted(self.pairs.items())]}
        for metric in ("rank1", "map"):
            if any(metric in m for m in self.pairs.values()):
                out[metric] = self.aggregate(metric)
        return out

    def to_tsv(self) -> str:
        metrics = sorted({k for m in self.pairs.values() for k in m})
        lines = ["\t".join(["src", "dst"] + metrics)]
        for (s, d), m in sorted(self.pairs.items()):
            lines.append("\t".join([s, d] + [f"{m.get(k, float('nan')):.6f}" for k in metrics]))
        return "\n".join(lines) + "\n"
