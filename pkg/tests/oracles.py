"""Independent recomputations used to cross-check library results."""

from fractions import Fraction


def brute_frank(correct_id, ids, scores):
    """1 + candidates that beat the correct one: higher score, or equal score and smaller id."""
    s = dict(zip(ids, scores))
    return 1 + sum(1 for i in ids if i != correct_id and (s[i] > s[correct_id] or (s[i] == s[correct_id] and i < correct_id)))


def brute_metrics(franks, ks):
    """Exact rational S@k and MRR, converted to float only at the end."""
    n = len(franks)
    success = {k: float(Fraction(sum(1 for f in franks if f <= k), n)) for k in ks}
    mrr = float(sum(Fraction(1, f) for f in franks) / n)
    return success, mrr
