"""Smoke test for the spde_lab extension module.

Build first:  pip install --no-build-isolation ./crates/python
"""

import math
import sys
import tempfile
from pathlib import Path

import spde_lab

CONFIG = """
schema_version = 1
n_paths = 32
seed_base = 11
out_stride = 8

[grid]
nx = 15
dt = 0.001953125
t_end = 0.25

[coefficients.drift]
family = "log_critical"
theta1 = 0.0
theta2 = 1.0

[coefficients.diffusion]
family = "constant"
sigma0 = 1.0

[initial_data]
kind = "sine_mode"
amplitude = 1.0
mode = 1

[snapshots]
stride = 16
"""


def check(name, cond, detail=""):
    print(f"{'ok  ' if cond else 'FAIL'} {name} {detail}")
    if not cond:
        sys.exit(1)


def main():
    k = spde_lab.HeatKernel()
    check("kernel symmetry", k.eval(0.05, 0.2, 0.7) == k.eval(0.05, 0.7, 0.2))
    gap = abs(k.spectral(0.1, 0.3, 0.6) - k.image_charge(0.1, 0.3, 0.6))
    check("kernel forms agree", gap < 1e-10, f"gap={gap:.2e}")
    mass, err = k.kernel_mass(0.5, 0.5)
    check("kernel mass below one", 0 < mass < 1, f"mass={mass:.6f}")

    check("lyapunov at zero", spde_lab.lyapunov_value(0.0) == 1.0 and spde_lab.lyapunov_value(1.0) == 2.0)
    n = 256
    h = [10 * math.sin(math.pi * i / n) + 3 * math.sin(7 * math.pi * i / n) for i in range(n + 1)]
    h[0] = h[-1] = 0.0
    r = spde_lab.log_sobolev_check(h, 0.1)
    check("log-sobolev holds", r["verdict"] == "pass", f"margin={r['margin']:.3f}")

    cfg = spde_lab.Config.from_toml(CONFIG)
    again = spde_lab.Config.from_toml(cfg.to_toml())
    check("config round trip", again.config_hash == cfg.config_hash)
    p1, p2 = cfg.simulate(3), cfg.simulate(3)
    check("replayable path", p1.series == p2.series and p1.final_field == p2.final_field)
    check("path record", p1.record["blew_up"] == p1.blew_up)

    paths = cfg.ensemble(jobs=1)
    m = spde_lab.moment_norm(paths, 0.0, 2.0)
    check("moment norm", m["value"] > 0 and m["n_paths"] == 32, f"value={m['value']:.4f}")
    fit = spde_lab.gaussian_moment_fit(paths, [2.0, 4.0, 6.0])
    check("gaussian fit", fit["c_hat"] > 0, f"c_hat={fit['c_hat']:.4f}")
    hf = spde_lab.holder_fit(paths, "space", [j / 16 for j in range(1, 8)], t_star=0.25)
    check("holder fit", math.isfinite(hf["exponent_hat"]), f"exponent={hf['exponent_hat']:.3f}")

    with tempfile.TemporaryDirectory() as tmp:
        summary = cfg.with_outputs(Path(tmp)).run(jobs=1)
        check("run summary", summary["n_paths"] == 32 and summary["schema_version"] == spde_lab.SCHEMA_VERSION)
        merged = spde_lab.aggregate(str(Path(tmp) / "paths" / "*.jsonl"))
        check("aggregate matches run", merged == summary)
        header, path = spde_lab.read_path(next((Path(tmp) / "paths").glob("*.jsonl")))
        check("path header", header["config_hash"] == cfg.config_hash and path.config_hash == cfg.config_hash)

    try:
        cfg.with_axis("nonsense", 1.0)
    except ValueError:
        check("bad axis rejected", True)
    else:
        check("bad axis rejected", False)
    print("smoke test passed")


if __name__ == "__main__":
    main()
