"""Spectral analysis at the Fuchsian locus: scattering data, multipliers, oracle, certificate."""

from .certificate import (
    PositivityCertificate,
    imaginary_curve_rows,
    positivity_certificate,
    real_curve_rows,
    spot_check,
)
from .cylinder import (
    CylinderMode,
    block_weight,
    chebyshev_nodes,
    cylinder_linop_apply,
    dirichlet_ground_energy,
    indicial_roots,
    reduced_potential,
    substitution_power,
    weighted_pairing,
)
from .intervals import ROUNDING, Interval
from .oracle import OracleFit, frobenius_series, ode_oracle
from .special import (
    A_AT_ZERO,
    C0,
    PSI_FIVE_HALVES,
    a_imag,
    a_real,
    a_zero_enclosure,
    digamma,
    gamma_ratio,
    log_gamma,
    re_digamma_series,
    special_functions,
)
from .spectral import (
    LaurentData,
    SpectralMultiplier,
    SpectralPoint,
    g_from_scattering,
    get_multiplier,
    h0_imaginary_factored,
    h0_imaginary_quoted,
    h_lower_curve,
    hessian_multiplier_H,
    multiplier_G_display,
    multiplier_G_n4,
    multiplier_n_odd,
    obstruction_multiplier,
    scattering_laurent,
    scattering_S,
)
