#!/usr/bin/env python3
"""Tiny synthetic CSVs with the same headers and label vocabularies as the five
real benchmark files, for tests and CI.  Values are random but deterministic;
they carry no medical meaning."""
import argparse
import csv
import pathlib
import random

HEART = ["age", "sex", "chest_pain", "resting_bp", "cholesterol", "fasting_blood_sugar",
         "resting_ecg", "max_heart_rate", "exercise_angina", "oldpeak", "slope",
         "major_vessels", "thal", "class"]
PIMA = ["pregnancies", "glucose", "blood_pressure", "skin_thickness", "insulin", "bmi",
        "pedigree", "age", "class"]
HEPATITIS = ["class", "age", "sex", "steroid", "antivirals", "fatigue", "malaise", "anorexia",
             "liver_big", "liver_firm", "spleen_palpable", "spiders", "ascites", "varices",
             "bilirubin", "alk_phosphate", "sgot", "albumin", "protime", "histology"]
CLEVELAND = ["age", "sex", "chest pain type", "resting bp s", "cholesterol",
             "fasting blood sugar", "resting ecg", "max heart rate", "exercise angina",
             "oldpeak", "ST slope", "target"]


def cancer_header():
    feats = ["radius", "texture", "perimeter", "area", "smoothness", "compactness",
             "concavity", "concave_points", "symmetry", "fractal_dimension"]
    return ([f"mean_{f}" for f in feats] + [f"{f}_error" for f in feats]
            + [f"worst_{f}" for f in feats] + ["diagnosis"])


def rows_heart(rng, n):
    out = []
    for i in range(n):
        y = 1 + i % 2
        shift = 0.8 * (y - 1)
        out.append([rng.randint(30, 75), rng.randint(0, 1), rng.randint(1, 4),
                    round(rng.gauss(130 + 8 * shift, 15)), round(rng.gauss(245, 40)),
                    rng.randint(0, 1), rng.choice([0, 2]), round(rng.gauss(150 - 15 * shift, 20)),
                    rng.randint(0, 1), round(abs(rng.gauss(1 + shift, 1)), 1), rng.randint(1, 3),
                    rng.randint(0, 3), rng.choice([3, 6, 7]), y])
    return out


def rows_pima(rng, n):
    out = []
    for i in range(n):
        y = i % 2
        out.append([rng.randint(0, 10), 0 if i % 17 == 3 else round(rng.gauss(110 + 30 * y, 25)),
                    round(rng.gauss(70, 10)), 0 if i % 5 == 0 else round(rng.gauss(25, 8)),
                    0 if i % 3 == 0 else round(abs(rng.gauss(100, 60))),
                    round(rng.gauss(31 + 3 * y, 6), 1), round(abs(rng.gauss(0.45, 0.3)), 3),
                    rng.randint(21, 70), y])
    return out


def rows_hepatitis(rng, n):
    out = []
    for i in range(n):
        y = 1 + (i % 4 != 0)  # mostly "live"
        row = [y, rng.randint(20, 70), rng.randint(1, 2)]
        row += [rng.randint(1, 2) if rng.random() > 0.05 else "?" for _ in range(11)]
        row += [round(abs(rng.gauss(1.4 - 0.5 * (y - 1), 0.8)), 1),
                round(abs(rng.gauss(100, 40))) if rng.random() > 0.15 else "?",
                round(abs(rng.gauss(85, 60))), round(rng.gauss(3.8, 0.6), 1),
                round(abs(rng.gauss(60, 20))) if rng.random() > 0.4 else "?",
                rng.randint(1, 2)]
        out.append(row)
    return out


def rows_cleveland(rng, n):
    out = []
    for i in range(n):
        y = i % 2
        out.append([rng.randint(30, 75), rng.randint(0, 1), rng.randint(1, 4),
                    0 if i % 29 == 7 else round(rng.gauss(132, 17)),
                    0 if i % 6 == 1 else round(rng.gauss(230, 50)), rng.randint(0, 1),
                    rng.randint(0, 2), round(rng.gauss(140 - 12 * y, 22)), rng.randint(0, 1),
                    round(abs(rng.gauss(0.5 + y, 1)), 1), rng.randint(1, 3), y])
    return out


def rows_cancer(rng, n):
    out = []
    for i in range(n):
        y = "M" if i % 3 == 0 else "B"
        s = 1.3 if y == "M" else 1.0
        out.append([round(abs(rng.gauss(s, 0.2)) * (10 + j), 5) for j in range(30)] + [y])
    return out


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/fixtures")
    ap.add_argument("--rows", type=int, default=60)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    write(out / "heart.csv", HEART, rows_heart(rng, args.rows))
    write(out / "diabetes.csv", PIMA, rows_pima(rng, args.rows))
    write(out / "hepatitis.csv", HEPATITIS, rows_hepatitis(rng, args.rows))
    write(out / "cleveland_hungary.csv", CLEVELAND, rows_cleveland(rng, args.rows))
    write(out / "cancer.csv", cancer_header(), rows_cancer(rng, args.rows))


if __name__ == "__main__":
    main()
