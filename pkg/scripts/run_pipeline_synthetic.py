"""Generate a synthetic detections file and run the full pipeline on it twice.

Prints the stage counts and whether the two manifests are byte-identical.

    python scripts/run_pipeline_synthetic.py --apps 2500 --out runs/synthetic
"""

import argparse
import json
import time
from pathlib import Path

from avconsensus.cli import main as cli
from avconsensus.ingest import write_detections
from avconsensus.synth import synthetic_dataset


def run(args: argparse.Namespace) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, _ = synthetic_dataset(args.apps, args.engines, args.seed)
    data = out / "detections.csv"
    write_detections(ds, data)
    print(f"{len(ds)} records, {ds.n_apps} apps, {ds.n_engines} engines -> {data}")

    manifests = []
    for tag in ("first", "second"):
        start = time.perf_counter()
        code = cli(["report", "--input", str(data), "--out-dir", str(out / tag), "--seed", str(args.seed)])
        print(f"{tag} run: exit {code} in {time.perf_counter() - start:.2f}s")
        manifests.append((out / tag / "report.manifest.json").read_bytes())

    report = json.loads((out / "first" / "report.report.json").read_text())
    for key, value in sorted(report["counts"].items()):
        print(f"  {key:28s} {value}")
    print("manifests identical:", manifests[0] == manifests[1])


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--apps", type=int, default=2500)
    p.add_argument("--engines", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/synthetic")
    run(p.parse_args())
