"""vmfkit: von Mises-Fisher mixtures on the hypersphere and the vMF mixture loss (vMFML)."""

from .errors import (
    CheckpointError,
    ConfigError,
    CorruptPayloadError,
    DegenerateInputError,
    DimensionMismatchError,
    DivergenceError,
    DomainError,
    VersionError,
    VmfkitError,
)
from .losses import VmfmlHead, vmfml_backward, vmfml_forward
from .mixture import EmReport, VmfMixture, fit_em
from .special import log_bessel_i, log_c_d, mean_resultant_ratio
from .vmf import VmfComponent, fit_mle, log_density, sample

__version__ = "0.1.0"
