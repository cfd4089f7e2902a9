"""Dense linear-algebra primitives and preprocessing transforms.

Everything here is pure and deterministic: factorizations carry a fixed
sign convention (largest-magnitude entry of each vector positive, ties
broken by lowest index) so downstream fits are reproducible bit for bit.
Matrices are plain float64 numpy arrays, rows = samples.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidRank, RankZero, ShapeError

DEFAULT_SVD_TOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return out


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-|entry| is positive.

    Ties in magnitude resolve to the lowest row index (argmax behaviour),
    which makes eigen/singular bases deterministic across runs.
    """
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass
class SvdResult:
    """Thin SVD a ~ left @ diag(singular) @ right.T, truncated to retained_rank."""

    left: np.ndarray
    singular: np.ndarray
    right: np.ndarray
    retained_rank: int

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular) @ self.right.T


def thin_svd(a, max_rank: int | None = None, rel_tol: float = DEFAULT_SVD_TOL) -> SvdResult:
    """Thin SVD with relative-tolerance truncation.

    Keeps the singular values strictly greater than rel_tol * sigma_max,
    capped at max_rank. Sign convention is applied to the left factor and
    mirrored on the right so the product is unchanged.
    """
    a = as_matrix(a)
    if not 0.0 <= rel_tol < 1.0:
        raise InvalidInput(f"rel_tol must be in [0, 1), got {rel_tol}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[0] <= 0.0:
        raise RankZero("zero matrix has no retainable singular values")
    rank = int(np.sum(s > rel_tol * s[0]))
    if max_rank is not None:
        rank = min(rank, int(max_rank))
    if rank < 1:
        raise RankZero("truncation retained no singular values")
    u, s, v = u[:, :rank], s[:rank], vt[:rank].T
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(rank)])
    signs[signs == 0] = 1.0
    return SvdResult(left=u * signs, singular=s, right=v * signs, retained_rank=rank)


def sym_eig_smallest(s, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs for the r smallest eigenvalues of a symmetric matrix.

    Returns (values ascending, vectors n x r) with the deterministic sign
    convention. Input symmetry is validated to 1e-8 relative Frobenius.
    """
    s = as_matrix(s, "symmetric matrix")
    n = s.shape[0]
    if s.shape[1] != n:
        raise ShapeError(f"expected square matrix, got {s.shape}")
    norm = np.linalg.norm(s)
    if norm > 0 and np.linalg.norm(s - s.T) / norm >= 1e-8:
        raise InvalidInput("matrix is not symmetric to 1e-8 relative Frobenius")
    if not 1 <= r <= n:
        raise InvalidRank(f"r={r} outside [1, {n}]")
    values, vectors = np.linalg.eigh((s + s.T) / 2.0)
    return values[:r].copy(), fix_signs(vectors[:, :r])


def orthogonal_procrustes(source, target) -> np.ndarray:
    """Orthogonal map minimizing ||source @ omega - target||_F.

    Classic closed form: omega = U V^T from the SVD of source^T target.
    """
    source = as_matrix(source, "source")
    target = as_matrix(target, "target")
    if source.shape != target.shape:
        raise ShapeError(f"source {source.shape} and target {target.shape} differ")
    u, _, vt = np.linalg.svd(source.T @ target)
    return u @ vt


@dataclass
class StandardizerState:
    """Per-dimension mean and scale fit on a train split."""

    mean: np.ndarray
    scale: np.ndarray


def standardize_fit(x) -> StandardizerState:
    """Fit per-dimension mean/std. Zero-variance dimensions get scale 1."""
    x = as_matrix(x)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    return StandardizerState(mean=mean, scale=scale)


def standardize_apply(state: StandardizerState, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != state.mean.shape[0]:
        raise ShapeError(f"expected {state.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - state.mean) / state.scale


@dataclass
class PcaState:
    """Centering vector plus orthonormal projection basis (d_in x d_out)."""

    mean: np.ndarray
    components: np.ndarray


def pca_fit(x, d_out: int) -> PcaState:
    """Principal directions of the centered data, deterministic signs."""
    x = as_matrix(x)
    n, d_in = x.shape
    if not 1 <= d_out <= min(n - 1, d_in):
        raise InvalidRank(f"d_out={d_out} exceeds min(N-1, d_in)={min(n - 1, d_in)}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return PcaState(mean=mean, components=fix_signs(vt[:d_out].T))


def pca_apply(state: PcaState, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != state.mean.shape[0]:
        raise ShapeError(f"expected {state.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - state.mean) @ state.components


def row_normalize(x, eps: float = 1e-12, return_flags: bool = False):
    """Row-wise l2 normalization.

    Rows with norm below eps are returned unchanged; with return_flags=True
    the boolean mask of those degenerate rows is returned alongside.
    """
    x = as_matrix(x)
    if eps <= 0:
        raise InvalidInput(f"eps must be positive, got {eps}")
    norms = np.linalg.norm(x, axis=1)
    small = norms < eps
    out = x / np.where(small, 1.0, norms)[:, None]
    out[small] = x[small]
    if return_flags:
        return out, small
    return out
