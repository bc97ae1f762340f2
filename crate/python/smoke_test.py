"""Smoke test for the swarmscale_py extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math
import os
import tempfile

import swarmscale_py as ss


def main():
    value, flags = ss.run("search", {"lambda": 0.0, "N": 3}, seed=1)
    assert value == 1.0, value
    print("search P_A (no losses):", value, flags)

    params = dict(ss.resolve_params("pursuit", {"N_a": 8}))
    assert params["N_a"] == 8

    (px, py), t = ss.intercept_point((10.0, 0.0), (0.0, 0.5), (0.0, 0.0), 1.0)
    assert t is not None and abs(math.hypot(px, py) - t) < 1e-9
    print("intercept:", (px, py), t)

    sim = ss.Pursuit({"N_a": 6, "N_d": 6}, seed=3)
    steps = 0
    while sim.step() is None:
        steps += 1
    out = sim.step()
    print(f"pursuit: t_k={out['t_k']:.2f} after {steps} steps, kills={out['kills']}")

    assert abs(ss.predict_ndeff(24, 1.2, 1, 1.25, 5, 0.4) - 492.454614130461) < 1e-9
    xs = [10.0 * k for k in range(1, 30)]
    ys = [ss.tanh_threshold(x, 80.0) for x in xs]
    fit = ss.fit_tanh(xs, ys)
    assert abs(fit["n_eff"] - 80.0) < 0.08, fit
    pl = ss.fit_powerlaw([1, 2, 4, 8], [3 * x**0.5 for x in [1, 2, 4, 8]])
    assert abs(pl["exponent"] - 0.5) < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        out_path = os.path.join(tmp, "p.csv")
        spec = f"""
scenario = "pursuit"
ensemble = 2
base_seed = 5
output = "{out_path}"
[fixed]
N_d = 6
[grid]
N_a = [4, 8, 16]
tau = [5, 10]
"""
        assert len(ss.expand_grid(spec)) == 12
        records = ss.run_sweep(spec, workers=2)
        assert len(records) == 12
        again = sorted(ss.read_records(out_path), key=lambda r: r["run_index"])
        assert [r["value"] for r in again] == [r["value"] for r in records]
        report = ss.collapse(out_path)
        print("pursuit collapse score:", report["scores"][0][1]["score"])

    assert ss.path_length([(0, 0), (3, 4), (6, 8)], 0.5) == 10.0
    try:
        ss.run("pursuit", {"bogus": 1.0})
    except ValueError as e:
        print("config error surfaced:", e)
    else:
        raise AssertionError("unknown parameter accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
