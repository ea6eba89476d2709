"""dEM on two chains K and f K under three starting strategies (n=10, r=100, m=200).

``good`` starts from rates drawn at the right scales, ``learned`` splits trails
by observed jump speed, ``random`` ignores the scale difference.
"""
from common import parser, run

from ctmcmix.experiments import ExperimentConfig

if __name__ == "__main__":
    ap = parser(__doc__, "proportional.csv")
    ap.add_argument("--inits", nargs="+", default=["good", "learned", "random"])
    args = ap.parse_args()
    values = [1.0, 4.0] if args.quick else [1.0, 1.5, 2.0, 4.0, 8.0]
    for init in args.inits:
        cfg = ExperimentConfig(n=10, r=100, m=200, tau=0.1, axis="f", values=values, init=init,
                               repeats=args.repeats, methods=["dem"], seed=args.seed)
        print(f"init={init}")
        run(cfg, args.out.replace(".csv", f"_{init}.csv"), args.workers)
