#!/usr/bin/env python3
"""Writes a small respondent-level survey plus independently tallied expected counts.

Run from this directory: python3 generate.py
"""
import csv
import json
import random

MIN_RESPONDENTS = 50
INVALID = {"not applicable", "refuse to answer"}

C1 = ["Arden", "Belmar", "Corvin", "Dunmore", "Eastvale", "Farrow", "Glenhaven", "Mirewood", "Oakridge"]
C2 = ["Halvard", "Isenmoor", "Juniper"]
C3 = ["Juniper", "Kestrel", "Larkspur"]
# present in the raw data but outside every configured set
EXTRA = ["Nettlebed"]

RESPONDENTS = {
    "Arden": 64, "Belmar": 71, "Corvin": 58, "Dunmore": 80, "Eastvale": 66, "Farrow": 55,
    # Glenhaven is configured but never surveyed
    "Mirewood": 50,  # exactly at the threshold: dropped
    "Oakridge": 51,  # one above: kept
    "Halvard": 62, "Isenmoor": 77, "Juniper": 69, "Kestrel": 59, "Larkspur": 73,
    "Nettlebed": 20,
}

Q2 = [17, 18, 19, 20]
Q3 = [21, 22, 23, 24, 25, 26]
EXCLUDED = [5, 9]
N_QUESTIONS = 26

# question 7 and 24 keep a single valid option, so the cleaner drops them
SINGLE_VALID = {7, 24}
# (question, country) cells with no answers at all
BLANK_CELLS = {(12, "Belmar"), (22, "Halvard"), (3, "Kestrel")}
# cells where everyone picked an invalid option
INVALID_ONLY = {(13, "Corvin"), (21, "Larkspur")}
# questions whose answers are sometimes out-of-codebook codes
UNKNOWN_CODE_QUESTIONS = {4: "-4", 15: "99"}


def codebook(rng):
    questions = []
    for qid in range(1, N_QUESTIONS + 1):
        if qid in SINGLE_VALID:
            options = [(1, "Yes"), (-1, "Not applicable"), (-2, "Refuse to answer")]
        else:
            n = rng.randint(2, 5)
            options = [(k, f"Choice {k}") for k in range(1, n + 1)]
            if qid % 3 == 0 or any(qid == q for q, _ in INVALID_ONLY):
                options.append((-1, "Not applicable"))
            if qid % 4 == 0:
                options.append((-2, "Refuse to answer"))
        questions.append({
            "question_id": qid,
            "column": f"Q{qid}",
            "text": f"Fixture question {qid}?",
            "dimension": f"Block {qid % 3}",
            "options": [{"code": c, "label": l} for c, l in options],
        })
    return {"survey_id": "FIX", "country_column": "B_COUNTRY", "questions": questions}


def answer(rng, q, country):
    qid = q["question_id"]
    if (qid, country) in BLANK_CELLS:
        return ""
    codes = [o["code"] for o in q["options"]]
    invalid = [o["code"] for o in q["options"] if o["label"].lower() in INVALID]
    if (qid, country) in INVALID_ONLY:
        return str(rng.choice(invalid))
    r = rng.random()
    if r < 0.05:
        return ""
    if r < 0.08 and qid in UNKNOWN_CODE_QUESTIONS:
        return UNKNOWN_CODE_QUESTIONS[qid]
    return str(rng.choice(codes))


def main():
    rng = random.Random(20240607)
    book = codebook(rng)
    header = ["B_COUNTRY"] + [q["column"] for q in book["questions"]]
    rows = []
    for country, n in RESPONDENTS.items():
        for _ in range(n):
            rows.append([country] + [answer(rng, q, country) for q in book["questions"]])
    # a row without a country is skipped
    rows.insert(7, [""] + ["1"] * N_QUESTIONS)
    rng.shuffle(rows)

    with open("raw.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open("codebook.json", "w") as f:
        json.dump(book, f, indent=2)
        f.write("\n")

    config = {
        "data": {"source": "microdata", "raw": "raw.csv", "codebook": "codebook.json",
                 "min_respondents": MIN_RESPONDENTS},
        "splits": {"c1": C1, "c2": C2, "c3": C3, "q2": Q2, "q3": Q3, "exclude_questions": EXCLUDED},
        "backend": {"kind": "toy_table"},
    }
    with open("config.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")

    # Independent tally: straight loops over the rows just written.
    kept_countries = {c for c, n in RESPONDENTS.items() if n > MIN_RESPONDENTS}
    valid = {}
    for q in book["questions"]:
        codes = {str(o["code"]) for o in q["options"] if o["label"].lower() not in INVALID}
        valid[q["question_id"]] = codes
    has_valid = set()
    unknown = set()
    for row in rows:
        country = row[0]
        for q, cell in zip(book["questions"], row[1:]):
            qid = q["question_id"]
            known = {str(o["code"]) for o in q["options"]}
            if cell and cell not in known:
                unknown.add((qid, cell))
            if country in kept_countries and cell in valid[qid]:
                has_valid.add((country, qid))
    questions = sorted(qid for qid, codes in valid.items()
                       if len(codes) >= 2 and any((c, qid) in has_valid for c in kept_countries))
    q1 = [qid for qid in questions if qid not in Q2 + Q3 + EXCLUDED]
    csets = {"C1": C1, "C2": C2, "C3": C3}
    qsets = {"Q1": q1, "Q2": Q2, "Q3": Q3}
    assignments = [("train", "C1", "Q1"), ("valid", "C1", "Q2"), ("C1-Q3", "C1", "Q3"),
                   ("C2-Q1", "C2", "Q1"), ("C2-Q3", "C2", "Q3"), ("C3-Q1", "C3", "Q1"),
                   ("C3-Q3", "C3", "Q3")]
    subsets = {}
    eff_c = {k: set() for k in csets}
    eff_q = {k: set() for k in qsets}
    for name, cs, qs in assignments:
        n = 0
        for c in csets[cs]:
            for qid in qsets[qs]:
                if qid in questions and (c, qid) in has_valid:
                    n += 1
                    eff_c[cs].add(c)
                    eff_q[qs].add(qid)
        subsets[name] = n
    expected = {
        "subsets": subsets,
        "set_sizes": {**{k: len(v) for k, v in eff_c.items()}, **{k: len(v) for k, v in eff_q.items()}},
        "questions_kept": len(questions),
        "countries_filtered": len([c for c, n in RESPONDENTS.items() if n <= MIN_RESPONDENTS]),
        "unknown_codes": len(unknown),
        "rows_without_country": 1,
    }
    with open("expected_counts.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
