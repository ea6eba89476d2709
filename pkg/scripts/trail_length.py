"""Recovery error as trails get longer (n=10, L=2, r=100, tau=0.1)."""
from common import parser, run

from ctmcmix.experiments import ExperimentConfig

if __name__ == "__main__":
    args = parser(__doc__, "trail_length.csv").parse_args()
    values = [25, 50, 100] if args.quick else [25, 50, 100, 200, 400, 800]
    cfg = ExperimentConfig(n=10, L=2, r=100, tau=0.1, axis="m", values=values, repeats=args.repeats,
                           methods=["dem", "ktt", "verylong", "cem", "groundtruth"], seed=args.seed)
    run(cfg, args.out, args.workers)
