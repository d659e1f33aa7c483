#!/usr/bin/env python3
"""Recompute evaluation metrics from prediction records with a confusion matrix.

Reads prediction-record JSONL on stdin and writes one JSON object with
per-parameter exact, win1 (null where not applicable) and macro F1, plus the
averages and both system-level rates.
"""
import json
import sys

VOCAB = [
    ("sampling_frequency", ["100Hz", "500Hz", "1kHz"], True),
    ("measurement_range_x", ["FULL", "1/2", "1/4"], False),
    ("exposure_time", ["60us", "120us", "240us"], True),
    ("cmos_dynamic_range", ["1", "5", "9"], True),
    ("light_intensity_range", ["Low", "Normal", "High"], True),
]


def confusion(records, name, values):
    m = [[0] * len(values) for _ in values]
    for r in records:
        p = r["parameters"][name]
        m[values.index(p["truth"])][values.index(p["prediction"])] += 1
    return m


def main():
    records = [json.loads(l) for l in sys.stdin if l.strip()]
    n = len(records)
    out = {"count": n, "parameters": {}}
    exacts, wins, f1s = [], [], []
    for name, values, eligible in VOCAB:
        m = confusion(records, name, values)
        k = len(values)
        hits = sum(m[i][i] for i in range(k))
        near = sum(m[i][j] for i in range(k) for j in range(k) if abs(i - j) <= 1)
        total = 0.0
        classes = 0
        for c in range(k):
            tp = m[c][c]
            fp = sum(m[i][c] for i in range(k)) - tp
            fn = sum(m[c]) - tp
            if tp + fp + fn == 0:
                continue
            classes += 1
            total += (2 * tp) / (2 * tp + fp + fn)
        exact = hits / n
        win1 = near / n if eligible else None
        f1 = total / classes
        out["parameters"][name] = {"exact": exact, "win1": win1, "macro_f1": f1}
        exacts.append(exact)
        f1s.append(f1)
        if win1 is not None:
            wins.append(win1)
    out["average_exact"] = sum(exacts) / len(exacts)
    out["average_win1"] = sum(wins) / len(wins)
    out["average_macro_f1"] = sum(f1s) / len(f1s)

    all_exact = 0
    win_range = 0
    for r in records:
        ok_exact = True
        ok_win = True
        for name, values, eligible in VOCAB:
            p = r["parameters"][name]
            t, y = values.index(p["truth"]), values.index(p["prediction"])
            ok_exact &= t == y
            ok_win &= (abs(t - y) <= 1) if eligible else (t == y)
        all_exact += ok_exact
        win_range += ok_win
    out["system_exact"] = all_exact / n
    out["system_win1_range_exact"] = win_range / n
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
