"""Time the hot kernels with numba and with the plain numpy fallback.

    python3 benchmarks/bench_kernels.py [--reps 3]

Each path runs in its own interpreter (the switch is read at import time).
Both paths must produce the same checksum.
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, time, hashlib
import numpy as np
from piproute import _accel, instances, masking, policy

reps = int(__REPS__)
out = {"numba": _accel.USE_NUMBA}
tw = instances.generate_set("tsptw", 20, "medium", 8, 11)
small = instances.generate_set("tsptw", 10, "medium", 8, 12)
p = policy.PolicyParams(np.array([-1.0, -3, -3, -3, 0, 0, 0]))

def rollouts():
    return b"".join(policy.rollout_batch(p, inst, "pi1", np.random.default_rng(7).random((16, 20)),
                                         collect_labels=True)["tours"].tobytes() for inst in tw)

def pi2():
    return b"".join(policy.rollout_batch(p, inst, "pi2", np.random.default_rng(3).random((4, 20)))["tours"].tobytes()
                    for inst in tw)

def audit():
    return json.dumps(masking.audit(small, 4, 0)).encode()

def solve():
    return repr([masking.exact_solve_small(inst) for inst in small[:3]]).encode()

h = hashlib.sha256()
for name, fn in [("rollout_pi1", rollouts), ("rollout_pi2", pi2), ("audit_n10", audit), ("exact_solve_n10", solve)]:
    h.update(fn())  # first call also pays compilation
    t = time.perf_counter()
    for _ in range(reps):
        fn()
    out[name] = (time.perf_counter() - t) / reps
out["checksum"] = h.hexdigest()
print(json.dumps(out))
"""


def run(no_numba, reps):
    env = dict(os.environ)
    env["PIPROUTE_NO_NUMBA"] = "1" if no_numba else "0"
    res = subprocess.run([sys.executable, "-c", WORKER.replace("__REPS__", str(reps))],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()
    fast = run(False, args.reps)
    slow = run(True, 1)
    print(f"{'kernel':<18}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for k in ("rollout_pi1", "rollout_pi2", "audit_n10", "exact_solve_n10"):
        print(f"{k:<18}{fast[k]:>12.4f}{slow[k]:>12.4f}{slow[k] / fast[k]:>10.1f}")
    same = fast["checksum"] == slow["checksum"]
    print("checksums match" if same else "CHECKSUM MISMATCH")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=1)
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
