#!/usr/bin/env python3
"""Independent reference for the eval corpus metrics.

Reads a labels file and a scores file (JSON lines) and writes the metrics
report the `eval` subcommand must reproduce. Uses exact rationals, pairwise
AUC and the textbook kappa formula, sharing no code with the Rust harness.

    python3 scripts/golden_eval.py fixtures/eval/labels.jsonl \
        fixtures/eval/scores.jsonl 0.25 > fixtures/eval/golden_metrics.json
"""
import json
import sys
from fractions import Fraction

KINDS = ["url", "domain", "email", "phone", "business"]


def load(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip() and not line.lstrip().startswith("#")]


def metrics(rows, threshold):
    tp = sum(1 for r in rows if r["score"] >= threshold and r["label"])
    fp = sum(1 for r in rows if r["score"] >= threshold and not r["label"])
    tn = sum(1 for r in rows if r["score"] < threshold and not r["label"])
    fn = sum(1 for r in rows if r["score"] < threshold and r["label"])
    p = Fraction(tp, tp + fp) if tp + fp else None
    r = Fraction(tp, tp + fn) if tp + fn else None
    f1 = 2 * p * r / (p + r) if p is not None and r is not None and p + r > 0 else None
    pos = [x["score"] for x in rows if x["label"]]
    neg = [x["score"] for x in rows if not x["label"]]
    auc = None
    if pos and neg:
        wins = Fraction(0)
        for a in pos:
            for b in neg:
                wins += 1 if a > b else Fraction(1, 2) if a == b else 0
        auc = wins / (len(pos) * len(neg))
    out = lambda v: None if v is None else float(v)
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn, "precision": out(p), "recall": out(r),
            "f1": out(f1), "auc": out(auc), "kappa": None}


def kappa(a, b):
    n = len(a)
    po = Fraction(sum(1 for x, y in zip(a, b) if x == y), n)
    pa, pb = Fraction(sum(a), n), Fraction(sum(b), n)
    pe = pa * pb + (1 - pa) * (1 - pb)
    return float((po - pe) / (1 - pe))


def main(labels_path, scores_path, threshold):
    labels = load(labels_path)
    scores = {s["entity"]: Fraction(str(s["score"])) for s in load(scores_path)}
    thr = Fraction(threshold)
    rows = [{"kind": l["kind"], "label": l["label"], "score": scores[l["entity"]]} for l in labels]
    overall = metrics(rows, thr)
    if all("label_b" in l for l in labels):
        overall["kappa"] = kappa([l["label"] for l in labels], [l["label_b"] for l in labels])
    per_kind = {}
    for k in KINDS:
        subset = [r for r in rows if r["kind"] == k]
        per_kind[k] = metrics(subset, thr) if subset else None
    report = {"threshold": float(thr), "n": len(rows), "overall": overall, "per_kind": per_kind}
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], sys.argv[3] if len(sys.argv) > 3 else "0.25")
