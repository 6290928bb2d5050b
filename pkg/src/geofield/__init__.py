"""
geofield: spatial prediction with Gaussian fields.

Modules
-------
covmodel
    Covariance families, tapers and covariance-matrix assembly.
field
    Joint Gaussian model, simulation and simple/ordinary/universal kriging.
estimate
    Empirical variograms, least-squares and likelihood (ML/REML) fitting.
lowrank
    Fixed-rank, predictive-process and process-convolution models.
gmrf
    SPDE-based sparse precision matrices on regular grids.
sptemporal
    Autoregressive state-space model and Kalman filter.
compositional
    Centred log-ratio transform and regression for compositions.
io, cli
    File formats and the ``geofield`` command.
"""

from .covmodel import CovarianceModel, TaperSpec
from .errors import DomainError, EstimationError, GeofieldError, NumericalError, ParseError
from .field import GaussianFieldModel, KrigingResult, ObservationSet, krige
from .gmrf import GridSpec, SparsePrecision, SpdeParams

__version__ = "0.1.0"

__all__ = [
    "CovarianceModel",
    "TaperSpec",
    "GaussianFieldModel",
    "ObservationSet",
    "KrigingResult",
    "krige",
    "GridSpec",
    "SpdeParams",
    "SparsePrecision",
    "GeofieldError",
    "DomainError",
    "NumericalError",
    "EstimationError",
    "ParseError",
]
