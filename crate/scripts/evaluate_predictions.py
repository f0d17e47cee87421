#!/usr/bin/env python3
"""Independent MAP scorer for explanation-ranking prediction files.

Reads gold explanations straight from a question TSV (QuestionID +
explanation columns, entries formatted uid|ROLE) and a prediction file of
tab-separated qid, uid lines in rank order. Prints the mean average
precision over all questions with at least one gold fact.

Exists as a cross-check for the Rust evaluator: same numbers, separate
implementation.
"""

import argparse
import csv
import sys


def load_gold(path):
    gold = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            qid = (row.get("QuestionID") or "").strip()
            if not qid:
                continue
            entries = (row.get("explanation") or "").split()
            uids = {e.split("|")[0] for e in entries if e.split("|")[0]}
            gold[qid] = uids
    return gold


def load_predictions(path):
    preds = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                sys.exit(f"{path}:{lineno}: expected qid<TAB>uid")
            preds.setdefault(parts[0], []).append(parts[1])
    return preds


def average_precision(ranking, gold):
    hits = 0
    total = 0.0
    for i, uid in enumerate(ranking):
        if uid in gold:
            hits += 1
            total += hits / (i + 1)
    return total / len(gold)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gold", required=True, help="question TSV with explanation column")
    parser.add_argument(
        "--facts",
        help="canonical uid<TAB>text corpus dump; gold uids absent from it are dropped",
    )
    parser.add_argument("predictions", help="tab-separated qid, uid lines in rank order")
    args = parser.parse_args()

    gold = load_gold(args.gold)
    if args.facts:
        with open(args.facts) as f:
            known = {line.split("\t")[0] for line in f if line.strip()}
        gold = {qid: uids & known for qid, uids in gold.items()}

    preds = load_predictions(args.predictions)
    scores = [
        average_precision(preds.get(qid, []), uids)
        for qid, uids in sorted(gold.items())
        if uids
    ]
    if not scores:
        sys.exit("no question has gold facts")
    print(f"MAP {sum(scores) / len(scores):.12f}")
    print(f"questions {len(scores)}")


if __name__ == "__main__":
    main()
