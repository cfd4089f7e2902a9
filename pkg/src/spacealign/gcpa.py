"""Geometry-corrected universe mapping.

After GPA, matched samples still point in slightly different directions
across spaces. A single residual MLP, shared by all spaces, nudges every
row-normalized universe direction toward its per-sample consensus while a
hinge "trust" penalty (weight lambda) activates once the corrected
direction drifts more than tau in cosine distance from where GPA put it.

The network and its training loop are self-contained: forward, analytic
backprop, and plain seeded minibatch gradient descent, so runs are
reproducible bit for bit and the parameter gradients can be checked
against finite differences.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import Universe
from .dataio import EmbeddingMatrix, read_matrix, write_matrix
from .errors import InvalidInput, NumericalError, ShapeError
from .numkernel import as_matrix, row_normalize
from .seeding import rng_for

DEGENERATE_EPS = 1e-8


@dataclass
class ConsensusSet:
    """Unit consensus direction per sample; degenerate rows zeroed and flagged."""

    directions: np.ndarray
    degenerate: np.ndarray


def consensus_directions(universe_points: list[np.ndarray], eps: float = DEGENERATE_EPS) -> ConsensusSet:
    """Unit-mean direction of each sample's views in universe coordinates.

    Rows whose unit views sum to (near) zero carry no directional signal
    (e.g. two antipodal views); they are flagged and later excluded from
    corrector training.
    """
    if len(universe_points) < 2:
        raise InvalidInput("need at least two aligned point sets")
    views = [as_matrix(p) for p in universe_points]
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise ShapeError(f"aligned point sets disagree in shape: {v.shape} vs {shape}")
    summed = np.sum([row_normalize(v, eps) for v in views], axis=0)
    norms = np.linalg.norm(summed, axis=1)
    degenerate = norms < eps
    directions = summed / np.where(degenerate, 1.0, norms)[:, None]
    directions[degenerate] = 0.0
    return ConsensusSet(directions=directions, degenerate=degenerate)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    learning_rate: float = 0.05
    hidden: tuple | None = None  # defaults to (2d, 2d)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInput("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInput("learning_rate must be > 0")
        if self.hidden is not None:
            self.hidden = tuple(int(h) for h in self.hidden)
            if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
                raise InvalidInput("hidden must be two positive widths")


@dataclass
class Corrector:
    """Residual direction corrector T(u) = norm(norm(u) + mlp(norm(u)))."""

    weights: dict  # w1, b1, w2, b2, w3, b3
    dim: int
    hidden: tuple
    tau: float
    lam: float
    seed: int
    loss_log: list = field(default_factory=list)

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "dim": self.dim,
            "hidden": list(self.hidden),
            "tau": self.tau,
            "lambda": self.lam,
            "seed": self.seed,
            "loss_log": list(self.loss_log),
        }
        (directory / "corrector.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
        for name in self.PARAM_NAMES:
            write_matrix(directory / f"{name}.emb", np.atleast_2d(self.weights[name]), name)

    @classmethod
    def load(cls, directory) -> "Corrector":
        directory = Path(directory)
        meta = json.loads((directory / "corrector.json").read_text(encoding="utf-8"))
        weights = {}
        for name in cls.PARAM_NAMES:
            arr = read_matrix(directory / f"{name}.emb")
            weights[name] = arr[0] if name.startswith("b") else arr
        return cls(
            weights=weights,
            dim=int(meta["dim"]),
            hidden=tuple(meta["hidden"]),
            tau=float(meta["tau"]),
            lam=float(meta["lambda"]),
            seed=int(meta["seed"]),
            loss_log=list(meta["loss_log"]),
        )


def init_corrector(dim: int, tau: float = 0.10, lam: float = 1.0, hidden: tuple | None = None, seed: int = 0) -> Corrector:
    """Near-identity initialization: zero final layer, so T(u) = norm(u)."""
    if tau < 0 or lam < 0:
        raise InvalidInput("tau and lambda must be >= 0")
    h1, h2 = hidden if hidden is not None else (2 * dim, 2 * dim)
    rng = rng_for(seed, "corrector-init")
    weights = {
        "w1": rng.standard_normal((dim, h1)) / np.sqrt(dim),
        "b1": np.zeros(h1),
        "w2": rng.standard_normal((h1, h2)) / np.sqrt(h1),
        "b2": np.zeros(h2),
        "w3": np.zeros((h2, dim)),
        "b3": np.zeros(dim),
    }
    return Corrector(weights=weights, dim=dim, hidden=(h1, h2), tau=tau, lam=lam, seed=seed)


def _forward(corrector: Corrector, uhat: np.ndarray):
    w = corrector.weights
    h1 = np.tanh(uhat @ w["w1"] + w["b1"])
    h2 = np.tanh(h1 @ w["w2"] + w["b2"])
    delta = h2 @ w["w3"] + w["b3"]
    v = uhat + delta
    norms = np.maximum(np.linalg.norm(v, axis=1), 1e-300)
    y = v / norms[:, None]
    return y, (h1, h2, v, norms)


def corrector_forward(corrector: Corrector, u) -> np.ndarray:
    """Corrected unit directions for rows of u (any positive scaling of u)."""
    u = as_matrix(u)
    if u.shape[1] != corrector.dim:
        raise ShapeError(f"expected {corrector.dim} columns, got {u.shape[1]}")
    y, _ = _forward(corrector, row_normalize(u))
    return y


def gcpa_loss(corrector: Corrector, u_batch, c_batch) -> tuple[float, dict]:
    """Alignment-to-consensus loss plus the hinge trust penalty.

    Returns (loss, breakdown) where breakdown carries the align term, the
    raw trust term (before the lambda weight), and the mean drift.
    """
    loss, _, breakdown = loss_and_grads(corrector, u_batch, c_batch, need_grads=False)
    return loss, breakdown


def loss_and_grads(corrector: Corrector, u_batch, c_batch, need_grads: bool = True):
    u_batch = as_matrix(u_batch)
    c_batch = as_matrix(c_batch)
    if u_batch.shape != c_batch.shape:
        raise ShapeError(f"batch shapes differ: {u_batch.shape} vs {c_batch.shape}")
    n = u_batch.shape[0]
    uhat = row_normalize(u_batch)
    y, (h1, h2, _, vnorms) = _forward(corrector, uhat)

    align = 1.0 - np.sum(y * c_batch, axis=1)
    drift = 1.0 - np.sum(y * uhat, axis=1)
    active = drift > corrector.tau
    trust = np.where(active, drift - corrector.tau, 0.0)
    loss = float(align.mean() + corrector.lam * trust.mean())
    breakdown = {
        "align": float(align.mean()),
        "trust": float(trust.mean()),
        "drift": float(drift.mean()),
    }
    if not need_grads:
        return loss, None, breakdown

    w = corrector.weights
    g_y = (-c_batch - corrector.lam * active[:, None] * uhat) / n
    g_v = (g_y - np.sum(g_y * y, axis=1, keepdims=True) * y) / vnorms[:, None]
    grads = {}
    grads["w3"] = h2.T @ g_v
    grads["b3"] = g_v.sum(axis=0)
    g_h2 = g_v @ w["w3"].T
    g_z2 = g_h2 * (1.0 - h2**2)
    grads["w2"] = h1.T @ g_z2
    grads["b2"] = g_z2.sum(axis=0)
    g_h1 = g_z2 @ w["w2"].T
    g_z1 = g_h1 * (1.0 - h1**2)
    grads["w1"] = uhat.T @ g_z1
    grads["b1"] = g_z1.sum(axis=0)
    return loss, grads, breakdown


def training_pool(universe: Universe, spaces: list[EmbeddingMatrix], eps: float = DEGENERATE_EPS):
    """Pooled (unit universe view, consensus target) pairs across all spaces.

    Degenerate-consensus samples and zero-norm views are left out; the
    consensus itself is computed once, up front, from the GPA universe.
    """
    views = [s.data @ universe.omega(s.space_id) for s in spaces]
    consensus = consensus_directions(views, eps)
    inputs, targets = [], []
    for view in views:
        unit, flagged = row_normalize(view, eps, return_flags=True)
        keep = ~(consensus.degenerate | flagged)
        inputs.append(unit[keep])
        targets.append(consensus.directions[keep])
    return np.vstack(inputs), np.vstack(targets), consensus


def fit_corrector(
    universe: Universe,
    spaces: list[EmbeddingMatrix],
    cfg: TrainConfig | None = None,
    tau: float = 0.10,
    lam: float = 1.0,
) -> Corrector:
    """Train the shared corrector on the GPA universe views of the fit data.

    Minibatch gradient descent with a fixed learning rate and seeded
    shuffling; loss_log[k] is the full-pool loss after k epochs (entry 0 is
    the untrained loss).
    """
    cfg = cfg or TrainConfig()
    u_pool, c_pool, _ = training_pool(universe, spaces)
    if u_pool.shape[0] == 0:
        raise InvalidInput("no usable training rows: every consensus row is degenerate")
    corrector = init_corrector(universe.dim, tau=tau, lam=lam, hidden=cfg.hidden, seed=cfg.seed)

    loss, _, _ = loss_and_grads(corrector, u_pool, c_pool, need_grads=False)
    corrector.loss_log.append(loss)
    rng = rng_for(cfg.seed, "corrector-batches")
    n = u_pool.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads, _ = loss_and_grads(corrector, u_pool[batch], c_pool[batch])
            for name in corrector.PARAM_NAMES:
                corrector.weights[name] -= cfg.learning_rate * grads[name]
        loss, _, _ = loss_and_grads(corrector, u_pool, c_pool, need_grads=False)
        if not np.isfinite(loss):
            raise NumericalError(f"loss became non-finite at epoch {epoch}")
        corrector.loss_log.append(loss)
    return corrector


def gcpa_to_universe(universe: Universe, corrector: Corrector, x, space_id: str, rescale: bool = False) -> np.ndarray:
    """Corrected universe coordinates of x from one space.

    By default returns unit rows (the correction is directional). With
    rescale=True each row is scaled back to its pre-correction GPA norm,
    which matters for scale-sensitive probes.
    """
    u = as_matrix(x) @ universe.omega(space_id)
    y = corrector_forward(corrector, u)
    if rescale:
        return y * np.linalg.norm(u, axis=1, keepdims=True)
    return y


def prop32_identities(unit_vectors: list[np.ndarray]) -> tuple[float, float, float, float]:
    """Both sides of the two consensus-agreement identities.

    For unit vectors u_1..u_M with s = sum(u_m) and c = s/||s||:
    mean cosine to consensus equals ||s||/M, and the sum of pairwise
    cosines equals (||s||^2 - M)/2.
    """
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in unit_vectors]
    if len(vectors) < 2:
        raise InvalidInput("need at least two vectors")
    dim = vectors[0].shape[0]
    for v in vectors:
        if v.shape[0] != dim:
            raise ShapeError("vectors must share one dimension")
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise InvalidInput("inputs must be unit-norm")
    m = len(vectors)
    stacked = np.vstack(vectors)
    s = stacked.sum(axis=0)
    s_norm = float(np.linalg.norm(s))
    c = s / s_norm if s_norm > 0 else np.zeros(dim)
    lhs6 = float(np.mean(stacked @ c))
    rhs6 = s_norm / m
    gram = stacked @ stacked.T
    lhs7 = float(np.sum(np.triu(gram, k=1)))
    rhs7 = (s_norm**2 - m) / 2.0
    return lhs6, rhs6, lhs7, rhs7
