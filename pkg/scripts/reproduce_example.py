"""Run every bundled benchmark scenario and print a summary table."""
import argparse
from importlib import resources

from selftrig.config import load_config, resolve
from selftrig.sim import run_scenario

SCENARIOS = ["example1_continuous", "example1_constant_2p1", "example1_selftrig_099",
             "example1_selftrig_05_delay9ms", "example1_perturbed"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    root = resources.files("selftrig") / "configs"
    print(f"{'scenario':32s} {'safe':>5s} {'first viol.':>11s} {'samples':>8s} "
          f"{'mean tau':>9s} {'tau_min':>8s} {'delta_max':>10s}")
    for name in SCENARIOS:
        res = resolve(load_config(str(root / f"{name}.yaml")), seed=args.seed)
        tr = run_scenario(res.scenario)
        pre = res.policy.precomputed if res.policy is not None else None
        viol = "-" if tr.safety.safe else f"{tr.safety.first_violation:.2f}"
        tmin = f"{pre.tau_min:.4f}" if pre else "-"
        dmax = f"{pre.delta_max:.3e}" if pre else "-"
        print(f"{name:32s} {str(tr.safety.safe):>5s} {viol:>11s} {tr.stats.n_samples:8d} "
              f"{tr.stats.mean_interval:9.4f} {tmin:>8s} {dmax:>10s}")


if __name__ == "__main__":
    main()
