"""Two-photon absorption spectroscopy with chirped twin beams.

The package is organised in layers that can be used on their own:

``tpavss.source``
    Joint spectral amplitude, Schmidt decomposition and gain calibration.
``tpavss.state``
    Delay and chirp transforms and the Gaussian field moments.
``tpavss.tpa``
    Absorption probability of a ladder system and delay traces.
``tpavss.analysis``
    Spectra, peak detection, chirp-ensemble variance and level identification.
``tpavss.pipeline`` and ``tpavss.cli``
    Configuration-driven runs with an artifact cache.
"""

__version__ = "0.1.0"

from .errors import (CalibrationError, ConfigurationError, DispersionRangeError, DomainError,  # noqa: E402
                     EnsembleMemberError, NumericalError, StageError, TpavssError)
from .source import (CrystalParams, FrequencyGrid, JointSpectralAmplitude, PumpParams,  # noqa: E402
                     SchmidtDecomposition, SourceSettings, apply_gain, build_jsa, build_source,
                     calibrate_gain, default_grids, mean_photon_number, schmidt_decompose)
from .state import BeamTransform, MomentSet, compute_moments, g2_value, transform_modes  # noqa: E402
from .tpa import (MatterSystem, TpaTrace, tpa_probability, tpa_probability_oracle,  # noqa: E402
                  tpa_trace, transition_kernel)
from .analysis import (PeakSet, Spectrum, VarianceReport, chirp_ensemble, crystal_length_average,  # noqa: E402
                       detect_peaks, identify_levels, relative_variance, spectrum)

__all__ = [
    "__version__",
    "TpavssError", "ConfigurationError", "DomainError", "DispersionRangeError", "NumericalError",
    "CalibrationError", "EnsembleMemberError", "StageError",
    "FrequencyGrid", "CrystalParams", "PumpParams", "JointSpectralAmplitude", "SchmidtDecomposition",
    "SourceSettings", "build_jsa", "schmidt_decompose", "apply_gain", "calibrate_gain",
    "mean_photon_number", "default_grids", "build_source",
    "BeamTransform", "MomentSet", "transform_modes", "compute_moments", "g2_value",
    "MatterSystem", "TpaTrace", "transition_kernel", "tpa_probability", "tpa_probability_oracle", "tpa_trace",
    "Spectrum", "PeakSet", "VarianceReport", "spectrum", "detect_peaks", "chirp_ensemble",
    "relative_variance", "identify_levels", "crystal_length_average",
]
