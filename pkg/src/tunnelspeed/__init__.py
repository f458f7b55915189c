"""Particle speed in evanescent regimes.

Analytic coupled-waveguide and step-potential solutions, the standard
guiding equation, and a Monte Carlo of the bidirectional Bohmian model.
"""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    PhysicalParams,
    StepSolution,
    WaveguideSolution,
    characteristic_speed,
    compute_wavenumbers,
    dilation_transform,
    relative_population_asymptotic,
    relative_population_exact,
    step_density,
    step_solution,
    waveguide_fields,
)
from .bbm import (  # noqa: E402
    BbmConfig,
    BbmEstimates,
    bbm_dwell_analytic,
    entry_probability,
    run_ensemble,
    sample_turning_point,
    simulate_particle,
)
from .analysis import fit_speed, invariance_check, qm_dwell_time, sweep  # noqa: E402
