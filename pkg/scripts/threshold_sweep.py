"""Edge and community counts of the class correlation graph over a threshold grid.

Writes a delimited table (threshold, edges, communities, modularity,
largest community) for plotting.
"""

import argparse
import csv
import sys

import numpy as np

from avconsensus.graph import detect_communities, threshold_graph
from avconsensus.ingest import load_detections
from avconsensus.matrices import build_class_matrix, pearson_correlation
from avconsensus.normalize import default_ruleset, normalize_dataset
from avconsensus.synth import synthetic_dataset


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--input", help="detections file (default: synthetic data)")
    p.add_argument("--apps", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=0.6)
    p.add_argument("--steps", type=int, default=13)
    args = p.parse_args()

    ds = load_detections(args.input) if args.input else synthetic_dataset(args.apps, seed=args.seed)[0]
    rules = default_ruleset()
    corr = pearson_correlation(build_class_matrix(normalize_dataset(ds, rules), rules, ds.app_index))

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["corr_min", "edges", "communities", "modularity", "largest"])
    for t in np.linspace(args.lo, args.hi, args.steps):
        g = threshold_graph(corr, float(t))
        part = detect_communities(g)
        out.writerow([f"{t:.3f}", len(g.edges), len(part.communities), f"{part.modularity:.4f}",
                      " / ".join(part.communities[0])])


if __name__ == "__main__":
    main()
