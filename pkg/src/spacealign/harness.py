"""Manifest-driven fitting and evaluation used by the CLI and test harness.

The pipeline per space is: standardize on the train split, optionally PCA
to a common dimension (only when the spaces disagree in dimension), then
fit the selected alignment method. A FittedMethod bundles the
preprocessing states with the fitted artifacts and knows how to produce
comparison coordinates and cross-space mappings for every method.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import align, gcca, gcpa
from .dataio import Correspondence, EmbeddingMatrix, Manifest, read_embeddings, read_labels
from .errors import ConfigError, CorrespondenceError, InvalidRank, UnknownSpaceError
from .evaluation import (
    RetrievalReport,
    agreement_metrics,
    average_precision_scores,
    cluster_eval,
    drift_metric,
    linear_probe_stitch,
    rank1_retrieval,
)
from .numkernel import PcaState, StandardizerState, pca_apply, pca_fit, standardize_apply, standardize_fit
from .seeding import derive_seed

METHODS = ("na", "pw", "gpa", "gcca", "gcpa")


@dataclass
class RunConfig:
    method: str = "gpa"
    seed: int = 0
    common_dim: int | None = None
    gpa_max_iters: int = 200
    gpa_tol: float = 1e-9
    gpa_init: str = "first-space"
    gcca_rank: int | None = None  # None -> common dimension after preprocessing
    gcca_svd_tol: float = 1e-12
    tau: float = 0.10
    lam: float = 1.0
    epochs: int = 150
    batch_size: int = 128
    learning_rate: float = 0.1
    hidden: tuple | None = None
    rescale_gpa_norm: bool = False
    eval_metrics: tuple = ("retrieval",)
    cluster_k: int | None = None
    cluster_seeds: tuple = (0, 1, 2, 3, 4)
    agreement_spaces: tuple | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**raw)
        if cfg.hidden is not None:
            cfg.hidden = tuple(cfg.hidden)
        cfg.eval_metrics = tuple(cfg.eval_metrics)
        cfg.cluster_seeds = tuple(cfg.cluster_seeds)
        if cfg.agreement_spaces is not None:
            cfg.agreement_spaces = tuple(cfg.agreement_spaces)
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    def train_config(self) -> gcpa.TrainConfig:
        return gcpa.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            hidden=self.hidden,
            seed=derive_seed(self.seed, "gcpa-train"),
        )


@dataclass
class Preprocessor:
    standardizer: StandardizerState
    pca: PcaState | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = standardize_apply(self.standardizer, x)
        if self.pca is not None:
            out = pca_apply(self.pca, out)
        return out

    def invert(self, y: np.ndarray) -> np.ndarray:
        """Right-inverse of apply (exact without PCA, subspace-exact with)."""
        if self.pca is not None:
            y = y @ self.pca.components.T + self.pca.mean
        return y * self.standardizer.scale + self.standardizer.mean

    def to_dict(self) -> dict:
        out = {
            "mean": self.standardizer.mean.tolist(),
            "scale": self.standardizer.scale.tolist(),
        }
        if self.pca is not None:
            out["pca_mean"] = self.pca.mean.tolist()
            out["pca_components"] = self.pca.components.tolist()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Preprocessor":
        state = StandardizerState(
            mean=np.asarray(raw["mean"], dtype=np.float64),
            scale=np.asarray(raw["scale"], dtype=np.float64),
        )
        pca = None
        if "pca_mean" in raw:
            pca = PcaState(
                mean=np.asarray(raw["pca_mean"], dtype=np.float64),
                components=np.asarray(raw["pca_components"], dtype=np.float64),
            )
        return cls(standardizer=state, pca=pca)


def load_split(manifest: Manifest, split: str) -> dict:
    """Load every space's matrix for one split, checking id alignment."""
    spaces = {}
    reference_ids = None
    for sid in manifest.space_ids():
        e = read_embeddings(manifest.embedding_path(sid, split))
        if e.space_id != sid:
            raise ConfigError(f"file for {sid} declares space_id {e.space_id!r}")
        if reference_ids is None:
            reference_ids = e.sample_ids
        elif e.sample_ids != reference_ids:
            raise CorrespondenceError(f"sample ids of {sid} ({split}) do not match the first space")
        spaces[sid] = e
    return spaces


def fit_preprocessing(manifest: Manifest, train: dict, common_dim: int | None) -> dict:
    """Standardizer per space, plus PCA only when dimensions differ."""
    dims = {sid: e.dim for sid, e in train.items()}
    preproc = {}
    if len(set(dims.values())) > 1:
        target = common_dim if common_dim is not None else manifest.common_dim
        if target is None:
            offender = max(dims, key=lambda s: dims[s])
            raise ConfigError(f"spaces disagree in dimension (e.g. {offender}: {dims[offender]}) and no common_dim is set")
        for sid, e in train.items():
            if target > e.dim:
                raise ConfigError(f"common_dim {target} exceeds dimension {e.dim} of space {sid}")
            state = standardize_fit(e.data)
            preproc[sid] = Preprocessor(state, pca_fit(standardize_apply(state, e.data), target))
    else:
        for sid, e in train.items():
            preproc[sid] = Preprocessor(standardize_fit(e.data))
    return preproc


def prepared_split(preproc: dict, spaces: dict, split: str) -> list:
    return [
        EmbeddingMatrix(sid, split, preproc[sid].apply(spaces[sid].data), spaces[sid].sample_ids)
        for sid in spaces
    ]


@dataclass
class FittedMethod:
    """One fitted alignment method plus its preprocessing, ready to map data."""

    method: str
    space_ids: list
    preproc: dict
    universe: align.Universe | None = None
    corrector: gcpa.Corrector | None = None
    shared_basis: gcca.SharedBasisModel | None = None
    pairwise: dict | None = None
    rescale_gpa_norm: bool = False
    fit_report: dict = field(default_factory=dict)

    def prepare(self, x: np.ndarray, space_id: str) -> np.ndarray:
        if space_id not in self.preproc:
            raise UnknownSpaceError(f"space {space_id!r} not fitted; have {self.space_ids}")
        return self.preproc[space_id].apply(x)

    def comparison_coords(self, x: np.ndarray, space_id: str) -> np.ndarray:
        """Coordinates in which cross-space cosine comparisons run."""
        prepared = self.prepare(x, space_id)
        if self.method == "na":
            return prepared
        if self.method == "gpa":
            return align.to_universe(self.universe, prepared, space_id)
        if self.method == "gcpa":
            return gcpa.gcpa_to_universe(self.universe, self.corrector, prepared, space_id, rescale=self.rescale_gpa_norm)
        if self.method == "gcca":
            return gcca.gcca_embed(self.shared_basis, prepared, space_id)
        raise ConfigError(f"method {self.method!r} has no shared comparison frame")

    def map_between(self, x: np.ndarray, src: str, dst: str) -> np.ndarray:
        """Rows of x moved from src coordinates into dst coordinates."""
        prepared = self.prepare(x, src)
        if src == dst:
            return prepared
        if self.method == "na":
            return prepared
        if self.method == "pw":
            try:
                return prepared @ self.pairwise[(src, dst)]
            except KeyError:
                raise UnknownSpaceError(f"no pairwise map {src!r} -> {dst!r}") from None
        if self.method == "gpa":
            return align.translate(self.universe, prepared, src, dst)
        if self.method == "gcpa":
            corrected = gcpa.gcpa_to_universe(self.universe, self.corrector, prepared, src, rescale=self.rescale_gpa_norm)
            return align.from_universe(self.universe, corrected, dst)
        raise ConfigError(f"method {self.method!r} cannot map into a target space")


def fit_method(manifest: Manifest, config: RunConfig) -> FittedMethod:
    train_raw = load_split(manifest, "train")
    preproc = fit_preprocessing(manifest, train_raw, config.common_dim)
    train = prepared_split(preproc, train_raw, "train")
    fitted = FittedMethod(
        method=config.method,
        space_ids=[e.space_id for e in train],
        preproc=preproc,
        rescale_gpa_norm=config.rescale_gpa_norm,
    )
    if config.method == "na":
        return fitted
    if config.method == "pw":
        fitted.pairwise = align.fit_pairwise(train)
        return fitted

    if config.method == "gcca":
        rank = config.gcca_rank if config.gcca_rank is not None else train[0].dim
        try:
            fitted.shared_basis = gcca.fit_gcca(train, rank=rank, svd_tol=config.gcca_svd_tol)
        except InvalidRank as exc:
            raise ConfigError(str(exc)) from exc
        fitted.fit_report = {
            "rank": rank,
            "eigenvalues": fitted.shared_basis.eigenvalues.tolist(),
            "objective": gcca.model_objective(fitted.shared_basis),
        }
        return fitted

    gpa_cfg = align.GpaConfig(
        max_iters=config.gpa_max_iters,
        dispersion_rel_tol=config.gpa_tol,
        init_mode=config.gpa_init,
    )
    fitted.universe = align.fit_gpa(train, gpa_cfg)
    fitted.fit_report = {"dispersion_log": list(fitted.universe.fit_log)}
    if config.method == "gcpa":
        fitted.corrector = gcpa.fit_corrector(
            fitted.universe, train, config.train_config(), tau=config.tau, lam=config.lam
        )
        fitted.fit_report["loss_log"] = list(fitted.corrector.loss_log)
    return fitted


# ---------------------------------------------------------------------------
# evaluation protocols


def retrieval_eval(fitted: FittedMethod, test: dict, labels=None) -> RetrievalReport:
    """Rank-1 (and mAP when labels are given) over all ordered space pairs."""
    ids = list(test)
    n = next(iter(test.values())).n
    truth = Correspondence.identity(n)
    report = RetrievalReport()
    for src in ids:
        for dst in ids:
            if src == dst:
                continue
            if fitted.method == "pw":
                query = fitted.map_between(test[src].data, src, dst)
                gallery = fitted.prepare(test[dst].data, dst)
            else:
                query = fitted.comparison_coords(test[src].data, src)
                gallery = fitted.comparison_coords(test[dst].data, dst)
            metrics = {"rank1": rank1_retrieval(query, gallery, truth)}
            if labels is not None:
                aps, excluded = average_precision_scores(query, gallery, labels, labels)
                metrics["map"] = float(aps[~excluded].mean())
            report.add(src, dst, **metrics)
    return report


def probe_eval(fitted: FittedMethod, train: dict, test: dict, train_labels, test_labels) -> dict:
    """Directed stitching accuracy for every ordered pair of spaces."""
    ids = list(train)
    accuracies = {}
    for dst in ids:
        if fitted.method == "gcca":
            probe_train = fitted.comparison_coords(train[dst].data, dst)
        else:
            probe_train = fitted.prepare(train[dst].data, dst)
        for src in ids:
            if src == dst:
                continue
            if fitted.method == "gcca":
                mapped = fitted.comparison_coords(test[src].data, src)
            else:
                mapped = fitted.map_between(test[src].data, src, dst)
            accuracies[(src, dst)] = linear_probe_stitch(probe_train, train_labels, mapped, test_labels)
    return accuracies


def agreement_eval(fitted: FittedMethod, test: dict, space_ids=None):
    ids = list(space_ids) if space_ids else list(test)[:3]
    if len(ids) != 3:
        raise ConfigError(f"agreement needs exactly 3 spaces, got {ids}")
    views = [fitted.comparison_coords(test[sid].data, sid) for sid in ids]
    return agreement_metrics(views)


def drift_eval(fitted: FittedMethod, test: dict):
    if fitted.method != "gcpa":
        raise ConfigError("drift is defined for the corrected universe (method gcpa)")
    before, after = [], []
    for sid, e in test.items():
        prepared = fitted.prepare(e.data, sid)
        before.append(align.to_universe(fitted.universe, prepared, sid))
        after.append(gcpa.gcpa_to_universe(fitted.universe, fitted.corrector, prepared, sid))
    return drift_metric(np.vstack(before), np.vstack(after))


def cluster_eval_method(fitted: FittedMethod, test: dict, labels, k: int, seeds) -> object:
    mapped = {sid: fitted.comparison_coords(e.data, sid) for sid, e in test.items()}
    return cluster_eval(mapped, labels, k=k, seeds=list(seeds))


def cycle_consistency_report(fitted: FittedMethod) -> dict | None:
    """Worst composed-vs-direct map deviation over all ordered triples.

    Universe methods compose exactly (deviation at float precision);
    independently fitted pairwise maps generally do not, which is the
    diagnostic worth reporting side by side.
    """
    ids = fitted.space_ids
    if len(ids) < 3:
        return None
    if fitted.method in ("gpa", "gcpa") and fitted.universe is not None:
        def direct(a, b):
            return align.induced_pairwise(fitted.universe, a, b)
    elif fitted.method == "pw" and fitted.pairwise is not None:
        def direct(a, b):
            return fitted.pairwise[(a, b)]
    else:
        return None
    worst = 0.0
    for a in ids:
        for b in ids:
            for c in ids:
                if len({a, b, c}) < 3:
                    continue
                dev = float(np.linalg.norm(direct(a, b) @ direct(b, c) - direct(a, c)))
                worst = max(worst, dev)
    return {"method": fitted.method, "max_composed_map_deviation": worst}


def sweep_trust_grid(
    universe: align.Universe,
    train: list,
    test: list,
    taus,
    lams,
    base_config: gcpa.TrainConfig,
) -> list:
    """Median/mean drift of the corrected universe per (tau, lambda) cell.

    The per-cell step size is base_lr / (1 + lambda): the hinge gradient
    scales with lambda, so a fixed step would overshoot at large weights
    while small weights train as before.
    """
    rows = []
    for tau in taus:
        for lam in lams:
            cfg = gcpa.TrainConfig(
                epochs=base_config.epochs,
                batch_size=base_config.batch_size,
                learning_rate=base_config.learning_rate / (1.0 + lam),
                hidden=base_config.hidden,
                seed=base_config.seed,
            )
            corrector = gcpa.fit_corrector(universe, train, cfg, tau=tau, lam=lam)
            before, after = [], []
            for e in test:
                u = align.to_universe(universe, e.data, e.space_id)
                before.append(u)
                after.append(gcpa.gcpa_to_universe(universe, corrector, e.data, e.space_id))
            report = drift_metric(np.vstack(before), np.vstack(after))
            rows.append(
                {
                    "tau": float(tau),
                    "lambda": float(lam),
                    "median_drift": report.median,
                    "mean_drift": report.mean,
                    "final_loss": corrector.loss_log[-1],
                }
            )
    return rows


def sweep_rows_to_tsv(rows: list) -> str:
    header = ["tau", "lambda", "median_drift", "mean_drift", "final_loss"]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(f"{row[k]:.8f}" for k in header))
    return "\n".join(lines) + "\n"


def load_manifest_labels(manifest: Manifest) -> dict | None:
    path = manifest.labels_path()
    return read_labels(path) if path else None
