"""Conditional quantum states of continuously measured oscillators."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AmbiguousProjection,
    CondStateError,
    DivergentMoments,
    DomainError,
    FitError,
    FormatError,
    NoSteadyState,
    NotAPSD,
    NotFactorizable,
)
from .ratfun import Polynomial, RationalFunction, partial_fractions  # noqa: E402
from .factorize import causal_part, spectral_factorize  # noqa: E402
from .wiener import CovarianceMatrix, conditional_covariance, kalman_covariance  # noqa: E402
from .gstate import (  # noqa: E402
    HBAR,
    SingleModeState,
    TwoModeState,
    effective_occupation,
    log_negativity,
    uncertainty_product,
)
from .markov import HomodyneConfig, MarkovModel, freemass_homodyne_cov, squeezed_input_cov  # noqa: E402
from .entangle import EntanglementSetup, maximize_entanglement  # noqa: E402
from .cavity import CavityModel, composite_state, conditional_cavity_state  # noqa: E402
from .budget import NoiseBudget, conditional_state_with_budget, ligo_budget, straw_man_budget  # noqa: E402
