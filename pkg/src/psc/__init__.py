"""Principal subspace classifier: Bayesian nonparametric classification through a
low-dimensional affine projection of the predictors."""
from .geometry import (
    AffineSubspace,
    SubspaceCoordinates,
    complete_frame,
    frame_to_projection,
    project_point,
    random_frame,
)
from .model import (
    Atom,
    LabeledDataset,
    MixingMeasure,
    ModelState,
    NoiseScales,
    Standardization,
    assemble_covariance,
    conditional_class_prob,
    joint_log_density,
    log_marginal_density_x,
)
from .priors import PriorConfig, log_bmf_density_unnormalized, log_prior, sample_prior
from .gibbs import PosteriorChain, SamplerConfig, load_chain, run_chain, save_chain

__version__ = "0.1.0"
