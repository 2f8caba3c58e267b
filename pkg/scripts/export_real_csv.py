"""Write scikit-learn's bundled breast-cancer table as data/breast_cancer.csv plus its schema.

    python3 scripts/export_real_csv.py [--out data]

The data ships inside scikit-learn, so no download happens.
"""
import argparse
from pathlib import Path

import yaml
from sklearn.datasets import load_breast_cancer


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    bunch = load_breast_cancer()
    names = [n.replace(" ", "_") for n in bunch.feature_names]
    classes = [str(c) for c in bunch.target_names]
    with (out / "breast_cancer.csv").open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names + ["diagnosis"]) + "\n")
        for row, y in zip(bunch.data, bunch.target):
            fh.write(",".join(repr(float(v)) for v in row) + f",{classes[y]}\n")

    schema = {"features": [{"name": n, "kind": "continuous"} for n in names]
              + [{"name": "diagnosis", "label": True, "categories": classes}]}
    (out / "breast_cancer.yaml").write_text(yaml.safe_dump(schema, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(bunch.target)} rows x {len(names)} features to {out}")


if __name__ == "__main__":
    main()
