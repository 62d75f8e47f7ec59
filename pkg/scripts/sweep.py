"""Language-LASSO sweeps over planted signal strength or vocabulary size.

    python scripts/sweep.py signal --values 0 0.5 1 2
    python scripts/sweep.py vocab --values 500 1000 2000 3000
"""

import argparse
import csv
import time
from pathlib import Path

from acurisk.pipeline import RunConfig, run_pipeline


def run_one(root: Path, n_patients: int, signal: float, vocab: int, n_boot: int) -> dict:
    cfg = RunConfig.from_dict({
        "cohort_path": str(root / "data" / "cohort.csv"),
        "notes_path": str(root / "data" / "notes.jsonl"),
        "output_dir": str(root / "out"),
        "models": ["language_lasso"],
        "tertile_models": ["language_lasso"],
        "vocab_size": vocab,
        "n_boot": n_boot,
        "synthetic": {"n_patients": n_patients, "signal_strength": signal},
    })
    t0 = time.perf_counter()
    out = run_pipeline(cfg)
    with open(out / "metrics.csv", newline="") as fh:
        m = {(r["horizon"], r["metric"]): r for r in csv.DictReader(fh)}
    r = m[("180", "auroc")]
    return {"auroc_180": float(r["point"]), "lo": float(r["lo"]), "hi": float(r["hi"]),
            "seconds": round(time.perf_counter() - t0, 1)}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("kind", choices=("signal", "vocab"))
    ap.add_argument("--values", nargs="+", type=float, required=True)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--n-patients", type=int, default=5000)
    ap.add_argument("--n-boot", type=int, default=200)
    args = ap.parse_args()

    results = []
    for v in args.values:
        signal, vocab = (v, 2000) if args.kind == "signal" else (1.0, int(v))
        root = Path(args.out) / f"{args.kind}_{v:g}"
        res = run_one(root, args.n_patients, signal, vocab, args.n_boot)
        results.append({args.kind: v, **res})
        print(results[-1], flush=True)

    path = Path(args.out) / f"{args.kind}_sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(results[0]))
        w.writeheader()
        w.writerows(results)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
