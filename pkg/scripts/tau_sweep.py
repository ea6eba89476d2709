"""dEM recovery error across discretization intervals (n=10, L=2, r=100, m=200).

Too small a tau leaves few jumps inside the m observations; too large a tau
hides jumps between observations. The median error is smallest in between.
"""
from common import parser, run

from ctmcmix.experiments import ExperimentConfig

if __name__ == "__main__":
    args = parser(__doc__, "tau_sweep.csv").parse_args()
    values = [0.01, 0.1, 1.0] if args.quick else [0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
    cfg = ExperimentConfig(n=10, L=2, r=100, m=200, axis="tau", values=values, repeats=args.repeats,
                           methods=["dem"], seed=args.seed)
    run(cfg, args.out, args.workers)
