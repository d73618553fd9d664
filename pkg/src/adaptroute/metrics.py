"""Text quality metrics.  Every score lies in [0, 1] and higher is better."""

from __future__ import annotations

import math
from collections import Counter
from enum import Enum
from fractions import Fraction
from typing import Sequence


class MetricKind(str, Enum):
    EXACT_MATCH = "exact_match"
    BLEU = "bleu"
    ROUGE1 = "rouge1"
    ROUGE2 = "rouge2"
    ROUGEL = "rougeL"
    ROUGE_AVG = "rouge_avg"


def tokenize(text: str) -> list[str]:
    return text.casefold().split()


def exact_match(prediction: str, reference: str) -> float:
    return 1.0 if prediction.strip().casefold() == reference.strip().casefold() else 0.0


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, n_pred: int, n_ref: int) -> float:
    # 2PR/(P+R) with P = o/n_pred, R = o/n_ref, folded into one correctly rounded division
    return 2 * overlap / (n_pred + n_ref)


def rouge_n(prediction: Sequence[str], reference: Sequence[str], n: int) -> float:
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    pred, ref = ngrams(prediction, n), ngrams(reference, n)
    n_pred, n_ref = sum(pred.values()), sum(ref.values())
    if n_pred == 0 or n_ref == 0:
        return 0.0
    return _f1(sum((pred & ref).values()), n_pred, n_ref)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(prediction: Sequence[str], reference: Sequence[str]) -> float:
    if not prediction or not reference:
        return 0.0
    return _f1(lcs_length(prediction, reference), len(prediction), len(reference))


def bleu(prediction: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing on the n > 1 precisions.

    The unigram precision is unsmoothed, so a prediction sharing no token
    with the reference scores 0.  Precisions are multiplied as exact
    fractions before the geometric mean is taken.
    """
    if not prediction:
        return 0.0
    product = Fraction(1)
    for n in range(1, max_n + 1):
        pred, ref = ngrams(prediction, n), ngrams(reference, n)
        matched = sum((pred & ref).values())
        total = sum(pred.values())
        if n == 1:
            if matched == 0:
                return 0.0
            product *= Fraction(matched, total)
        else:
            product *= Fraction(matched + 1, total + 1)
    bp = 1.0 if len(prediction) >= len(reference) else math.exp(1 - len(reference) / len(prediction))
    return bp * float(product) ** (1 / max_n)


def score(metric: MetricKind | str, prediction: str, reference: str) -> float:
    metric = MetricKind(metric)
    if metric is MetricKind.EXACT_MATCH:
        return exact_match(prediction, reference)
    pred, ref = tokenize(prediction), tokenize(reference)
    if metric is MetricKind.BLEU:
        return bleu(pred, ref)
    if metric is MetricKind.ROUGE1:
        return rouge_n(pred, ref, 1)
    if metric is MetricKind.ROUGE2:
        return rouge_n(pred, ref, 2)
    if metric is MetricKind.ROUGEL:
        return rouge_l(pred, ref)
    return (rouge_n(pred, ref, 1) + rouge_n(pred, ref, 2) + rouge_l(pred, ref)) / 3
