"""Regenerates the frozen reference values used by the metric tests.

KS: scipy.stats.ks_2samp statistic, p from the asymptotic Kolmogorov
distribution (scipy.stats.kstwobign) at sqrt(n*m/(n+m)) * D.
BLEU: nltk sentence_bleu, default 4-gram weights, SmoothingFunction().method2.

    python3 generate.py
"""

import json

import numpy as np
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu
from scipy.stats import ks_2samp, kstwobign


def ks_cases():
    rng = np.random.default_rng(20240611)
    cases = []
    sizes = [(5, 7), (10, 10), (12, 30), (40, 40), (25, 9), (3, 50), (60, 45), (8, 8), (33, 17), (100, 80)]
    for i, (n, m) in enumerate(sizes):
        shift = 0.15 * i
        a = np.round(rng.normal(0.0, 1.0, n), 6)
        b = np.round(rng.normal(shift, 1.0 + 0.1 * i, m), 6)
        d = ks_2samp(a, b).statistic
        en = n * m / (n + m)
        p = kstwobign.sf(np.sqrt(en) * d)
        cases.append({"a": a.tolist(), "b": b.tolist(), "d": float(d), "p": float(p)})
    return cases


def bleu_cases():
    pairs = [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the cat sat on the mat", "the cat is on the mat"),
        ("a quick brown fox", "the quick brown fox jumps over the lazy dog"),
        ("I'm not sure.", "Paper Moon"),
        ("Blue Lamps", "Blue Lamps"),
        ("the the the the the the", "the cat sat on the mat"),
        ("Gold Quill award winner", "Gold Quill"),
        ("It is a guide to action which ensures that the military always obeys the commands of the party",
         "It is a guide to action that ensures that the military will forever heed Party commands"),
        ("one two three four five six seven", "seven six five four three two one"),
        ("Ada Lind was born in Oslo and wrote Salt Road", "Ada Lind was born in Lima and wrote Iron Rain"),
    ]
    smooth = SmoothingFunction().method2
    out = []
    for hyp, ref in pairs:
        score = sentence_bleu([ref.split()], hyp.split(), smoothing_function=smooth)
        out.append({"hypothesis": hyp, "reference": ref, "bleu": float(score)})
    return out


if __name__ == "__main__":
    with open("ks.json", "w") as f:
        json.dump(ks_cases(), f, indent=1)
        f.write("\n")
    with open("bleu.json", "w") as f:
        json.dump(bleu_cases(), f, indent=1)
        f.write("\n")
