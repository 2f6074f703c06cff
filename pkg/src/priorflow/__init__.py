"""Controllable sampling by density estimation: an invertible flow maps each
attribute's latent distribution to a diagonal Gaussian prior, control happens
analytically on the priors, and samples return through the inverse map."""

from .control import (
    ControlSpec,
    IntersectionResult,
    controlled_sample,
    equal_density_point,
    interpolate_distribution,
    intersection_alpha,
    intersection_center_1d,
    parse_weights,
)
from .estimator import PriorFlow
from .flow import (
    CouplingLayer,
    FlowModel,
    TrainConfig,
    build_flow,
    coupling_forward,
    coupling_inverse,
    flow_forward,
    flow_inverse,
    load_model,
    log_prob,
    save_model,
    train,
)
from .metrics import (
    ExclusivePair,
    QuadratureConfig,
    SweepRow,
    alpha_sweep,
    difference_expectation,
    lambda_sweep,
    surpass_probability,
)
from .priors import DiagonalGaussian, IsotropyStats, gaussian_cdf_1d, gaussian_log_pdf, isotropy_stats, sample
from .synthlab import (
    AttributeDistribution,
    LatentDataset,
    default_scene,
    generate_dataset,
    load_dataset,
    save_dataset,
    synth_log_density,
    synth_sample,
)

__version__ = "0.1.0"
