"""Pick the number of regimes and the latent dimension by information criteria.

Data come from a two-regime model with a 2-dimensional latent state. We fit a
small grid of candidate models and rank them by BIC.

    python3 demos/choose_regimes.py
"""

import numpy as np

from switchssm import FitOptions, ModelSpec, fit, initialize, make_study_theta, simulate_model
from switchssm.em import selection_scores

true_spec = ModelSpec(kind="dyn", M=2, p=1, r=2, N=8)
rng = np.random.default_rng(11)
y = simulate_model(make_study_theta(true_spec, rng), true_spec, 500, rng).y

rows = []
for M in (1, 2, 3):
    for r in (1, 2, 3):
        spec = ModelSpec(kind="dyn", M=M, p=1, r=r, N=8)
        res = fit(y, spec, initialize(y, spec, seed=0), FitOptions(accelerate=True))
        s = selection_scores(res, spec, y)
        rows.append((s["bic"], s["aic"], s["mape"], M, r))

print(" M  r        BIC        AIC    MAPE")
for bic, aic, mape, M, r in sorted(rows):
    print(f"{M:2d} {r:2d} {bic:10.1f} {aic:10.1f} {mape:7.4f}")
