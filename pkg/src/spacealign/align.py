"""Orthogonal alignment: pairwise maps, the GPA universe, and translation.

All maps act on row vectors from the right: x_universe = x @ omega, and
the induced translation from space `a` into space `b` is
x @ omega_a @ omega_b.T. Composition through the shared frame makes
multi-hop translation path-independent, which independently fitted
pairwise maps cannot guarantee.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import EmbeddingMatrix, read_matrix, write_matrix
from .errors import CorrespondenceError, InvalidInput, NumericalError, ShapeError, UnknownSpaceError
from .numkernel import as_matrix, orthogonal_procrustes


@dataclass
class OrthogonalMap:
    """A d x d member of the orthogonal group."""

    omega: np.ndarray

    def __post_init__(self):
        self.omega = as_matrix(self.omega, "omega")
        d = self.omega.shape[0]
        if self.omega.shape[1] != d:
            raise ShapeError(f"omega must be square, got {self.omega.shape}")
        if np.linalg.norm(self.omega.T @ self.omega - np.eye(d)) >= 1e-10:
            raise InvalidInput("omega is not orthogonal to 1e-10")


@dataclass
class GpaConfig:
    max_iters: int = 200
    dispersion_rel_tol: float = 1e-9
    init_mode: str = "first-space"

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be >= 1")
        if self.dispersion_rel_tol <= 0:
            raise InvalidInput("dispersion_rel_tol must be > 0")
        if self.init_mode not in ("first-space", "mean-of-raw"):
            raise InvalidInput(f"unknown init_mode {self.init_mode!r}")


@dataclass
class Universe:
    """GPA consensus over the fit data plus one orthogonal map per space."""

    space_ids: list[str]
    maps: dict  # space_id -> np.ndarray (d x d)
    consensus: np.ndarray
    fit_log: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.consensus.shape[1]

    def omega(self, space_id: str) -> np.ndarray:
        try:
            return self.maps[space_id]
        except KeyError:
            raise UnknownSpaceError(f"space {space_id!r} not registered; have {self.space_ids}") from None

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {
            "space_ids": self.space_ids,
            "d": self.dim,
            "dispersion_final": self.fit_log[-1] if self.fit_log else None,
            "fit_log": list(self.fit_log),
        }
        (directory / "index.json").write_text(json.dumps(index, sort_keys=True) + "\n", encoding="utf-8")
        write_matrix(directory / "consensus.emb", self.consensus, "consensus")
        for sid in self.space_ids:
            write_matrix(directory / f"omega_{sid}.emb", self.maps[sid], sid)

    @classmethod
    def load(cls, directory) -> "Universe":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
        maps = {sid: read_matrix(directory / f"omega_{sid}.emb") for sid in index["space_ids"]}
        return cls(
            space_ids=list(index["space_ids"]),
            maps=maps,
            consensus=read_matrix(directory / "consensus.emb"),
            fit_log=list(index.get("fit_log", [])),
        )


def _check_aligned(spaces: list[EmbeddingMatrix]) -> None:
    if len(spaces) < 2:
        raise InvalidInput("need at least two spaces")
    ids = spaces[0].sample_ids
    for s in spaces[1:]:
        if s.sample_ids != ids:
            raise CorrespondenceError(f"sample ids of {s.space_id} do not match {spaces[0].space_id}")
        if s.dim != spaces[0].dim:
            raise ShapeError(f"space {s.space_id} has dim {s.dim}, expected {spaces[0].dim}")
    seen = set()
    for s in spaces:
        if s.space_id in seen:
            raise InvalidInput(f"duplicate space id {s.space_id!r}")
        seen.add(s.space_id)


def fit_pairwise(spaces: list[EmbeddingMatrix]) -> dict:
    """All M(M-1) directed orthogonal maps, keyed (from_id, to_id).

    maps[(a, b)] right-multiplies data from space a to approximate space b.
    """
    _check_aligned(spaces)
    maps = {}
    for src in spaces:
        for dst in spaces:
            if src.space_id == dst.space_id:
                continue
            maps[(src.space_id, dst.space_id)] = orthogonal_procrustes(src.data, dst.data)
    return maps


def dispersion(spaces: list[EmbeddingMatrix], maps: dict, consensus: np.ndarray) -> float:
    return float(sum(np.linalg.norm(s.data @ maps[s.space_id] - consensus) ** 2 for s in spaces))


def fit_gpa(spaces: list[EmbeddingMatrix], cfg: GpaConfig | None = None) -> Universe:
    """Alternating minimization of the total dispersion around a consensus.

    Each round averages the mapped spaces into a new consensus and re-solves
    one orthogonal Procrustes problem per space; the logged dispersion is
    nonincreasing by construction.
    """
    cfg = cfg or GpaConfig()
    _check_aligned(spaces)
    if cfg.init_mode == "first-space":
        target = spaces[0].data
    else:
        target = np.mean([s.data for s in spaces], axis=0)
    maps = {s.space_id: orthogonal_procrustes(s.data, target) for s in spaces}

    fit_log: list[float] = []
    consensus = None
    for _ in range(cfg.max_iters):
        consensus = np.mean([s.data @ maps[s.space_id] for s in spaces], axis=0)
        maps = {s.space_id: orthogonal_procrustes(s.data, consensus) for s in spaces}
        disp = dispersion(spaces, maps, consensus)
        if not np.isfinite(disp):
            raise NumericalError("dispersion became non-finite during GPA")
        fit_log.append(disp)
        if len(fit_log) >= 2:
            prev = fit_log[-2]
            if prev == 0.0 or (prev - disp) / max(prev, 1e-300) < cfg.dispersion_rel_tol:
                break
    # consensus consistent with the final maps
    consensus = np.mean([s.data @ maps[s.space_id] for s in spaces], axis=0)
    return Universe(space_ids=[s.space_id for s in spaces], maps=maps, consensus=consensus, fit_log=fit_log)


def gpa_add(universe: Universe, new_space: EmbeddingMatrix) -> Universe:
    """Extend a fitted universe with one more space.

    Only the newcomer's map is fit (against the frozen consensus); existing
    maps and the consensus are carried over untouched, so translations among
    the base spaces are bit-identical before and after.
    """
    if new_space.space_id in universe.maps:
        raise InvalidInput(f"space id {new_space.space_id!r} already registered")
    if new_space.dim != universe.dim:
        raise ShapeError(f"new space dim {new_space.dim} != universe dim {universe.dim}")
    if new_space.n != universe.consensus.shape[0]:
        raise ShapeError(
            f"new space has {new_space.n} rows, consensus was fit on {universe.consensus.shape[0]}"
        )
    omega_new = orthogonal_procrustes(new_space.data, universe.consensus)
    maps = dict(universe.maps)
    maps[new_space.space_id] = omega_new
    return Universe(
        space_ids=universe.space_ids + [new_space.space_id],
        maps=maps,
        consensus=universe.consensus,
        fit_log=list(universe.fit_log),
    )


def to_universe(universe: Universe, x, space_id: str) -> np.ndarray:
    return as_matrix(x) @ universe.omega(space_id)


def from_universe(universe: Universe, u, space_id: str) -> np.ndarray:
    return as_matrix(u) @ universe.omega(space_id).T


def translate(universe: Universe, x, from_space: str, to_space: str) -> np.ndarray:
    """Map rows of x from one registered space into another via the universe."""
    x = as_matrix(x)
    if from_space == to_space:
        universe.omega(from_space)  # still validate registration
        return x.copy()
    return x @ universe.omega(from_space) @ universe.omega(to_space).T


def induced_pairwise(universe: Universe, from_space: str, to_space: str) -> np.ndarray:
    """The composed map omega_from @ omega_to.T that `translate` applies."""
    return universe.omega(from_space) @ universe.omega(to_space).T
