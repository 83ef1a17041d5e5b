"""The pure-numpy fallback path must be selectable by env flag and agree
with the default backend."""
import json
import os
import subprocess
import sys

import numpy as np

from valid_decoding import kernels

PROBE = """
import json
import numpy as np
from valid_decoding import kernels
rng = np.random.default_rng(99)
logits = rng.normal(size=(5, 50)) * 3
probs = kernels.softmax_rows(logits)
print(json.dumps({
    "backend": kernels.backend(),
    "probs": probs.tolist(),
    "entropies": kernels.entropy_rows(probs).tolist(),
}))
"""


def run_probe(env_flag):
    env = dict(os.environ)
    if env_flag is None:
        env.pop("VALID_NO_NUMBA", None)
    else:
        env["VALID_NO_NUMBA"] = env_flag
    out = subprocess.run(
        [sys.executable, "-c", PROBE], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    return json.loads(out.stdout)


def test_env_flag_selects_numpy_backend():
    forced = run_probe("1")
    assert forced["backend"] == "numpy"


def test_flag_zero_means_default():
    default = run_probe("0")
    unset = run_probe(None)
    assert default["backend"] == unset["backend"]


def test_backends_numerically_agree():
    a = run_probe("1")
    b = run_probe(None)
    assert np.allclose(a["probs"], b["probs"], atol=1e-13)
    assert np.allclose(a["entropies"], b["entropies"], atol=1e-13)
