"""Markov-switching state-space models.

Three model kinds share one toolkit: switching dynamics (``dyn``), switching
VAR (``var``) and switching observations (``obs``). Fitting uses EM with the
Kim filter and smoother; inference uses a parametric bootstrap of the
regime-wise stationary measures.
"""

__version__ = "0.1.0"

from .core import (ConstraintSet, Kind, ModelSpec, NotStationary, NumericalFailure,  # noqa: E402
                   RankDeficient, SingularMoment, ThetaParams, permute_regimes, validate)
from .simulate import make_study_theta, simulate_model  # noqa: E402
from .kim import kalman_fixed_regime, kim_filter, kim_smoother  # noqa: E402
from .initialize import initialize  # noqa: E402
from .em import (FitOptions, FitResult, accelerated_fit, daem_fit, em_fit, fit,  # noqa: E402
                 fixed_regime_em, selection_scores)
from .stationary import StationaryMeasures, stationary_measures  # noqa: E402
from .bootstrap import (BootstrapEnsemble, ConfidenceBands, confidence_intervals,  # noqa: E402
                        match_replicates, parametric_bootstrap)

__all__ = [
    "ConstraintSet", "Kind", "ModelSpec", "NotStationary", "NumericalFailure", "RankDeficient",
    "SingularMoment", "ThetaParams", "permute_regimes", "validate", "make_study_theta",
    "simulate_model", "kalman_fixed_regime", "kim_filter", "kim_smoother", "initialize",
    "FitOptions", "FitResult", "accelerated_fit", "daem_fit", "em_fit", "fit", "fixed_regime_em",
    "selection_scores", "StationaryMeasures", "stationary_measures", "BootstrapEnsemble",
    "ConfidenceBands", "confidence_intervals", "match_replicates", "parametric_bootstrap",
]
