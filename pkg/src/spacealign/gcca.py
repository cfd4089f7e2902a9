"""Shared-basis multiset CCA via one symmetric eigenproblem.

Per space, a thin SVD X_m = U_m S_m V_m^T feeds a block matrix with
(M-1)*I diagonal blocks and -U_m^T U_n off-diagonal blocks; the bottom-R
eigenvectors, split per space, give orthonormal-stacked projections
phi_m whose sample embeddings U_m phi_m minimize the total pairwise
mismatch energy under the stacked orthonormality constraint. The exact
feature-side realization q_m = V_m S_m^{-1} phi_m satisfies
X_m q_m = U_m phi_m identically, so new rows embed by one matmul.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import EmbeddingMatrix, read_matrix, write_matrix
from .errors import InvalidRank, UnknownSpaceError
from .numkernel import DEFAULT_SVD_TOL, as_matrix, sym_eig_smallest, thin_svd


@dataclass
class SpaceBasis:
    """Per-space factors retained by the fit."""

    retained_rank: int
    phi: np.ndarray  # r_m x R block of the stacked eigenvector matrix
    q_exact: np.ndarray  # d_m x R, X q_exact == U phi
    q_scaled: np.ndarray  # d_m x R variant without the inverse-singular scaling
    left: np.ndarray | None = None  # U_m, absent on deserialized models
    singular: np.ndarray | None = None
    right: np.ndarray | None = None


@dataclass
class SharedBasisModel:
    space_ids: list[str]
    rank: int
    eigenvalues: np.ndarray  # R smallest, ascending
    per_space: dict  # space_id -> SpaceBasis

    def basis(self, space_id: str) -> SpaceBasis:
        try:
            return self.per_space[space_id]
        except KeyError:
            raise UnknownSpaceError(f"space {space_id!r} not in model; have {self.space_ids}") from None

    def stacked_phi(self) -> np.ndarray:
        return np.vstack([self.per_space[sid].phi for sid in self.space_ids])

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {
            "space_ids": self.space_ids,
            "R": self.rank,
            "eigenvalues": self.eigenvalues.tolist(),
            "retained_ranks": {sid: self.per_space[sid].retained_rank for sid in self.space_ids},
        }
        (directory / "index.json").write_text(json.dumps(index, sort_keys=True) + "\n", encoding="utf-8")
        for sid in self.space_ids:
            write_matrix(directory / f"qtilde_{sid}.emb", self.per_space[sid].q_exact, sid)
            write_matrix(directory / f"qscaled_{sid}.emb", self.per_space[sid].q_scaled, sid)
            write_matrix(directory / f"phi_{sid}.emb", self.per_space[sid].phi, sid)

    @classmethod
    def load(cls, directory) -> "SharedBasisModel":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
        per_space = {}
        for sid in index["space_ids"]:
            per_space[sid] = SpaceBasis(
                retained_rank=int(index["retained_ranks"][sid]),
                phi=read_matrix(directory / f"phi_{sid}.emb"),
                q_exact=read_matrix(directory / f"qtilde_{sid}.emb"),
                q_scaled=read_matrix(directory / f"qscaled_{sid}.emb"),
            )
        return cls(
            space_ids=list(index["space_ids"]),
            rank=int(index["R"]),
            eigenvalues=np.asarray(index["eigenvalues"], dtype=np.float64),
            per_space=per_space,
        )


def build_block_matrix(lefts: list[np.ndarray]) -> np.ndarray:
    """The symmetric PSD block matrix whose bottom eigenvectors solve the fit."""
    m = len(lefts)
    ranks = [u.shape[1] for u in lefts]
    offsets = np.concatenate([[0], np.cumsum(ranks)])
    total = offsets[-1]
    s = np.zeros((total, total))
    for i in range(m):
        sl_i = slice(offsets[i], offsets[i + 1])
        s[sl_i, sl_i] = (m - 1) * np.eye(ranks[i])
        for j in range(i + 1, m):
            sl_j = slice(offsets[j], offsets[j + 1])
            cross = -lefts[i].T @ lefts[j]
            s[sl_i, sl_j] = cross
            s[sl_j, sl_i] = cross.T
    return s


def fit_gcca(spaces: list[EmbeddingMatrix], rank: int, svd_tol: float = DEFAULT_SVD_TOL) -> SharedBasisModel:
    """Fit the shared basis of rank R on matched training matrices."""
    if len(spaces) < 2:
        raise InvalidRank("need at least two spaces")
    n = spaces[0].n
    for s in spaces[1:]:
        if s.n != n:
            raise InvalidRank(f"space {s.space_id} has {s.n} rows, expected {n}")
    svds = [thin_svd(s.data, rel_tol=svd_tol) for s in spaces]
    total_rank = sum(f.retained_rank for f in svds)
    if not 1 <= rank <= total_rank:
        raise InvalidRank(f"R={rank} outside [1, sum of retained ranks = {total_rank}]")

    s_block = build_block_matrix([f.left for f in svds])
    values, phi = sym_eig_smallest(s_block, rank)

    per_space = {}
    offset = 0
    for space, f in zip(spaces, svds):
        block = phi[offset : offset + f.retained_rank]
        offset += f.retained_rank
        per_space[space.space_id] = SpaceBasis(
            retained_rank=f.retained_rank,
            phi=block,
            q_exact=(f.right / f.singular) @ block,
            q_scaled=f.right @ block,
            left=f.left,
            singular=f.singular,
            right=f.right,
        )
    return SharedBasisModel(
        space_ids=[s.space_id for s in spaces],
        rank=rank,
        eigenvalues=values,
        per_space=per_space,
    )


def gcca_embed(model: SharedBasisModel, x, space_id: str, scaled: bool = False) -> np.ndarray:
    """Project rows of x (in one space's coordinates) into the shared basis."""
    basis = model.basis(space_id)
    q = basis.q_scaled if scaled else basis.q_exact
    return as_matrix(x) @ q


def gcca_objective(lefts: list[np.ndarray], phis: list[np.ndarray]) -> float:
    """Total pairwise mismatch energy sum_{i<j} ||U_i phi_i - U_j phi_j||_F^2."""
    embeddings = [u @ p for u, p in zip(lefts, phis)]
    total = 0.0
    for i in range(len(embeddings)):
        for j in range(i + 1, len(embeddings)):
            total += float(np.linalg.norm(embeddings[i] - embeddings[j]) ** 2)
    return total


def model_objective(model: SharedBasisModel) -> float:
    lefts = [model.per_space[sid].left for sid in model.space_ids]
    phis = [model.per_space[sid].phi for sid in model.space_ids]
    return gcca_objective(lefts, phis)


def shared_subspace(model: SharedBasisModel, spaces: list[EmbeddingMatrix]) -> np.ndarray:
    """Orthonormal basis (N x R) of the dominant shared subspace.

    Concatenates the per-space shared-basis embeddings and takes the top-R
    left singular vectors of the result.
    """
    stacked = np.hstack([gcca_embed(model, s.data, s.space_id) for s in spaces])
    factors = thin_svd(stacked, max_rank=model.rank, rel_tol=0.0)
    return factors.left
