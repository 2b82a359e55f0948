#!/usr/bin/env python3
"""Materialise the benchmark medical datasets that ship inside common PyPI
packages into headered CSV files.

Heart (Statlog) and Pima diabetes come from the KEEL repository copy bundled in
``keel-ds``; the Wisconsin diagnostic breast cancer data comes from
scikit-learn.  Hepatitis and Cleveland-Hungary are not redistributed by any of
these packages and must be supplied by the user (see data/README.md).
"""
import argparse
import csv
import io
import pathlib
import zipfile

HEART_COLUMNS = [
    "age", "sex", "chest_pain", "resting_bp", "cholesterol",
    "fasting_blood_sugar", "resting_ecg", "max_heart_rate",
    "exercise_angina", "oldpeak", "slope", "major_vessels", "thal", "class",
]
PIMA_COLUMNS = [
    "pregnancies", "glucose", "blood_pressure", "skin_thickness", "insulin",
    "bmi", "pedigree", "age", "class",
]


def keel_rows(wheel_or_pkg, member):
    try:
        import keel_ds  # noqa: F401
        base = pathlib.Path(keel_ds.__file__).parent
        return (base / member).read_text().strip().splitlines()
    except ImportError:
        with zipfile.ZipFile(wheel_or_pkg) as z:
            return z.read("keel_ds/" + member).decode().strip().splitlines()


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--keel-wheel", default=None,
                    help="path to a keel_ds wheel if the package is not installed")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    heart = [r.split(",") for r in keel_rows(args.keel_wheel, "data/balanced/raw/heart.dat")]
    write(out / "heart.csv", HEART_COLUMNS, heart)

    pima = [r.split(",") for r in keel_rows(args.keel_wheel, "data/balanced/raw/pima.dat")]
    for r in pima:
        r[-1] = "1" if r[-1] == "tested_positive" else "0"
    write(out / "diabetes.csv", PIMA_COLUMNS, pima)

    from sklearn.datasets import load_breast_cancer
    bc = load_breast_cancer()
    names = [n.replace(" ", "_") for n in bc.feature_names]
    rows = []
    for x, y in zip(bc.data, bc.target):
        rows.append([repr(float(v)) for v in x] + ["B" if y == 1 else "M"])
    write(out / "cancer.csv", names + ["diagnosis"], rows)


if __name__ == "__main__":
    main()
