import os
import pickle
import subprocess
import sys

import numpy as np
import pytest

# every kernel-backed entry point; run once per path in a fresh interpreter
SCRIPT = r"""
import pickle, sys
import numpy as np
from piproute import _accel, env, instances, masking, policy, training

res = {"numba": _accel.USE_NUMBA}
p = policy.PolicyParams(np.array([-1.0, -2, -3, 0.5, 0.1, 1, 0]))
pred = training.PredictorParams(np.array([0.3, -2, 0.5, -1, 0, -3, 0.2]), 0.5)
for variant in ("tsptw", "tspdl"):
    for i, inst in enumerate(instances.generate_set(variant, 9, "hard", 4, 5)):
        u = np.random.default_rng(1).random((6, 9))
        for mode in ("pi0", "pi1", "pi2", "exact", "predicted"):
            out = policy.rollout_batch(p, inst, mode, u, collect_labels=True, predictor=pred)
            for k in out:
                res[(variant, i, mode, k)] = out[k]
        res[(variant, i, "greedy")] = (policy.greedy_l(inst), policy.greedy_c(inst))
        res[(variant, i, "solve")] = masking.exact_solve_small(inst)
        res[(variant, i, "metrics")] = env.fast_metrics(inst, policy.greedy_c(inst))
res["audit"] = masking.audit(instances.generate_set("tsptw", 8, "medium", 3, 2), 3, 0)
sys.stdout.buffer.write(pickle.dumps(res))
"""

# log-probabilities and scores go through exp/log, whose last bits differ
# between the compiled math library and numpy
ULP_KEYS = {"logps", "scores"}


def _run(no_numba):
    e = dict(os.environ, PIPROUTE_NO_NUMBA="1" if no_numba else "0")
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=e, capture_output=True, timeout=600)
    assert res.returncode == 0, res.stderr.decode()
    return pickle.loads(res.stdout)


def test_fallback_matches_compiled():
    fast, slow = _run(False), _run(True)
    assert slow.pop("numba") is False
    if not fast.pop("numba"):
        pytest.skip("numba not importable here")
    assert fast.keys() == slow.keys()
    for key, a in fast.items():
        b = slow[key]
        if isinstance(key, tuple) and key[-1] in ULP_KEYS:
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15, err_msg=str(key))
        elif isinstance(a, np.ndarray):
            assert a.dtype == b.dtype and np.array_equal(a, b), key
        else:
            assert repr(a) == repr(b), key
