"""spacealign: align M >= 3 embedding spaces into one shared universe.

Three alignment families are provided:

* GPA  — orthogonal maps into a consensus frame (isometric universe)
* GCCA — spectral shared-basis projections minimizing pairwise mismatch
* GCPA — the GPA universe plus a trained consensus-direction corrector

plus binary persistence, synthetic matched-space generation, and an
evaluation harness (retrieval, probing, clustering, agreement, drift).
"""

__version__ = "0.1.0"

from .align import GpaConfig, OrthogonalMap, Universe, fit_gpa, fit_pairwise, from_universe, gpa_add, to_universe, translate
from .dataio import Correspondence, EmbeddingMatrix, Manifest, SynthSpec, corrupt_correspondence, generate_synthetic, read_embeddings, write_embeddings
from .errors import (
    ConfigError,
    CorrespondenceError,
    FormatError,
    InvalidInput,
    InvalidRank,
    InvalidSpec,
    NumericalError,
    RankZero,
    ShapeError,
    SpaceAlignError,
    UnknownSpaceError,
)
from .evaluation import (
    AgreementReport,
    ClusterReport,
    DriftReport,
    LinearProbe,
    RetrievalReport,
    agreement_metrics,
    avg_new,
    cluster_eval,
    drift_metric,
    kmeans,
    linear_probe_stitch,
    mean_average_precision,
    rank1_retrieval,
)
from .gcca import SharedBasisModel, fit_gcca, gcca_embed, gcca_objective, shared_subspace
from .gcpa import (
    ConsensusSet,
    Corrector,
    TrainConfig,
    consensus_directions,
    corrector_forward,
    fit_corrector,
    gcpa_loss,
    gcpa_to_universe,
    prop32_identities,
)
from .numkernel import (
    PcaState,
    StandardizerState,
    SvdResult,
    orthogonal_procrustes,
    pca_apply,
    pca_fit,
    row_normalize,
    standardize_apply,
    standardize_fit,
    sym_eig_smallest,
    thin_svd,
)
from .seeding import derive_seed, rng_for
