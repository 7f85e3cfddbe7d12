"""Sweep theta1 on the benchmark safety trigger at a fixed total budget.

For each theta1 the script reports tau_min, delta_max and the mean inter-sample
time of a closed-loop run from the bundled initial state.
"""
import argparse
from importlib import resources

from selftrig.config import load_config, resolve
from selftrig.sim import run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--total", type=float, default=0.999, help="theta1 + theta2")
    ap.add_argument("--thetas", type=float, nargs="+",
                    default=[0.5, 0.6, 0.7, 0.8, 0.9, 0.99])
    ap.add_argument("--t-final", type=float, default=500.0)
    args = ap.parse_args()
    path = str(resources.files("selftrig") / "configs" / "example1_selftrig_099.yaml")
    print(f"{'theta1':>7s} {'tau_min':>9s} {'delta_max':>10s} {'samples':>8s} {'mean tau':>9s}")
    for th1 in args.thetas:
        cfg = load_config(path, [("sampler.theta1", th1),
                                 ("sampler.theta2", args.total - th1),
                                 ("integration.t_final", args.t_final)])
        res = resolve(cfg)
        tr = run_scenario(res.scenario)
        pre = res.policy.precomputed
        print(f"{th1:7.3f} {pre.tau_min:9.4f} {pre.delta_max:10.3e} {tr.stats.n_samples:8d} "
              f"{tr.stats.mean_interval:9.4f}" + ("" if tr.safety.safe else "  UNSAFE"))


if __name__ == "__main__":
    main()
