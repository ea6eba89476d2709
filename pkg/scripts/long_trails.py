"""Clustering error of KTT and dEM on long trails (n=10, L=2, r=50, tau=0.1)."""
from common import parser, run

from ctmcmix.experiments import ExperimentConfig

if __name__ == "__main__":
    args = parser(__doc__, "long_trails.csv").parse_args()
    values = [100, 500] if args.quick else [100, 250, 500, 1000, 2000]
    cfg = ExperimentConfig(n=10, L=2, r=50, tau=0.1, axis="m", values=values, repeats=args.repeats,
                           methods=["ktt", "dem", "verylong"], seed=args.seed)
    run(cfg, args.out, args.workers, key="clustering_error")
