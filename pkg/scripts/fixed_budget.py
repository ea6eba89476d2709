"""Trading trail count for trail length at r * m = 2500 observations (n=10, L=2, tau=0.1)."""
from common import parser, run

from ctmcmix.experiments import ExperimentConfig

if __name__ == "__main__":
    args = parser(__doc__, "fixed_budget.csv").parse_args()
    values = [25, 100] if args.quick else [10, 25, 50, 100, 250]
    cfg = ExperimentConfig(n=10, L=2, tau=0.1, axis="m", values=values, budget=2500, repeats=args.repeats,
                           methods=["dem", "ktt", "groundtruth"], seed=args.seed)
    run(cfg, args.out, args.workers)
