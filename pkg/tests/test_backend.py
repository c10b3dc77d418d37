import json
import os
import subprocess
import sys

import numpy as np

SNIPPET = """
import json
from vgpmil import FitConfig, SyntheticSpec, fit, generate_synthetic, predict_dataset
from vgpmil._backend import backend_name
ds = generate_synthetic(SyntheticSpec(n_bags=6, grid_height=3, grid_width=3, feature_dim=3,
                                      seed=1))
m = fit(ds, FitConfig(lam=0.5, n_inducing=8, n_iter=30))
preds = predict_dataset(m, ds, n_points=512)
print(json.dumps({"backend": backend_name(), "mu_u": m.mu_u.tolist(),
                  "bag": [p.bag_prob for p in preds]}))
"""


def _run(flag):
    env = dict(os.environ, VGPMIL_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def test_env_flag_selects_numpy_and_results_agree():
    fast, slow = _run("0"), _run("1")
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    np.testing.assert_allclose(fast["mu_u"], slow["mu_u"], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(fast["bag"], slow["bag"], atol=1e-9)
