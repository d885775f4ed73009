"""Time the solver kernels with numba and with the plain-Python fallback.

Each mode runs in a fresh interpreter because the switch is read at import:

    python benchmarks/bench_kernels.py            # both modes, side by side
    python benchmarks/bench_kernels.py --worker   # one mode, per env flag
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _time(fn, repeat):
    fn()  # warm-up (includes compilation under numba)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def worker(repeat: int) -> dict:
    import numpy as np

    from stagewise_hfl import kernels as K
    from stagewise_hfl._accel import USE_NUMBA
    from stagewise_hfl.config import ScenarioConfig
    from stagewise_hfl.plan_a import pack_p0, pack_plan_a
    from stagewise_hfl.scenario import generate_scenario

    cfg = ScenarioConfig(seed=3)
    sc = generate_scenario(cfg)
    pa = pack_plan_a(sc, cfg, kld_mode="exact")
    rng = np.random.default_rng(0)
    xi = rng.random(sc.n_clients) < sc.online_prob
    p0 = pack_p0(sc, xi, cfg)
    members = np.arange(12, dtype=np.int64)
    sel = np.zeros(sc.n_clients, dtype=bool)
    sel[rng.choice(np.flatnonzero(xi), size=24, replace=False)] = True
    edge_of = np.full(sc.n_clients, -1, dtype=np.int64)
    feasible, _, _, _, edge_of = p0.goc(sel, 200)

    timings = {
        "exact_probs_k12": _time(lambda: K.exact_probs(members, 12, pa.p, pa.Y, pa.d, pa.q,
                                                       0.15, 2700.0, 10.0), repeat),
        "evaluate_p0": _time(lambda: p0.evaluate(edge_of), repeat * 20),
        "goc_p0_24_clients": _time(lambda: p0.goc(sel, 200), repeat),
    }
    return {"numba": USE_NUMBA, "seconds": timings}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.repeat)))
        return
    results = {}
    for label, flag in (("numba", "0"), ("fallback", "1")):
        env = dict(os.environ, STAGEWISE_HFL_NO_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        results[label] = json.loads(out.stdout.strip().splitlines()[-1])["seconds"]
    print(f"{'kernel':<22}{'numba [s]':>14}{'fallback [s]':>14}{'speed-up':>10}")
    for name in results["numba"]:
        a, b = results["numba"][name], results["fallback"][name]
        print(f"{name:<22}{a:>14.3e}{b:>14.3e}{b / a:>9.0f}x")


if __name__ == "__main__":
    main()
