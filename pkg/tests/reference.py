"""Independent brute-force reference implementations.

Everything here is deliberately slow, loop-based, pure Python, and written
directly from the formula definitions. The test suite checks the library
against these on randomized instances. Nothing in this file may import from
labelforge: rows are plain (truth_set, pred_set) pairs of label-id sets and
labels is the ordered label-id list.
"""

from __future__ import annotations


# ------------------------------------------------------- exclusive mode

def ref_confusion(rows, labels):
    """M x (M+1) count table; last column collects empty predictions."""
    idx = {lab: i for i, lab in enumerate(labels)}
    m = len(labels)
    table = [[0] * (m + 1) for _ in range(m)]
    for truth, pred in rows:
        j = idx[next(iter(truth))]
        k = idx[next(iter(pred))] if pred else m
        table[j][k] += 1
    return table


def ref_accuracy(rows):
    if not rows:
        return None
    return sum(1 for t, p in rows if t == p) / len(rows)


def ref_class_counts(rows, j):
    tp = sum(1 for t, p in rows if j in t and j in p)
    fp = sum(1 for t, p in rows if j not in t and j in p)
    fn = sum(1 for t, p in rows if j in t and j not in p)
    tn = sum(1 for t, p in rows if j not in t and j not in p)
    return tp, fp, fn, tn


def ref_precision(rows, j):
    tp, fp, _, _ = ref_class_counts(rows, j)
    return None if tp + fp == 0 else tp / (tp + fp)


def ref_recall(rows, j):
    tp, _, fn, _ = ref_class_counts(rows, j)
    return None if tp + fn == 0 else tp / (tp + fn)


def ref_specificity(rows, j):
    _, fp, _, tn = ref_class_counts(rows, j)
    return None if tn + fp == 0 else tn / (tn + fp)


def ref_balanced_accuracy(rows, j):
    r = ref_recall(rows, j)
    s = ref_specificity(rows, j)
    if r is None or s is None:
        return None
    return (r + s) / 2


def ref_f1(rows, j):
    tp, fp, fn, _ = ref_class_counts(rows, j)
    denom = 2 * tp + fp + fn
    return None if denom == 0 else 2 * tp / denom


def ref_macro(values):
    defined = [v for v in values if v is not None]
    return None if not defined else sum(defined) / len(defined)


def ref_macro_balanced_accuracy(rows, labels):
    return ref_macro([ref_balanced_accuracy(rows, j) for j in labels])


def ref_macro_f1(rows, labels):
    return ref_macro([ref_f1(rows, j) for j in labels])


def ref_weighted_f1(rows, labels):
    total = 0.0
    weight = 0
    for j in labels:
        v = ref_f1(rows, j)
        if v is None:
            continue
        tp, _, fn, _ = ref_class_counts(rows, j)
        support = tp + fn
        total += support * v
        weight += support
    return None if weight == 0 else total / weight


# ------------------------------------------------------ set-based modes

def ref_hamming(rows, m):
    if not rows:
        return None
    mismatches = sum(len(t ^ p) for t, p in rows)
    return mismatches / (len(rows) * m)


def ref_jaccard_standard(rows):
    if not rows:
        return None
    total = 0.0
    for t, p in rows:
        if not t and not p:
            total += 1.0
        else:
            total += len(t & p) / len(t | p)
    return total / len(rows)


def ref_jaccard_paper(rows, m):
    if not rows:
        return None
    return sum(len(t & p) for t, p in rows) / (len(rows) * m)


def ref_at_least_one(rows):
    if not rows:
        return None
    hits = sum(1 for t, p in rows if (t & p) or (not t and not p))
    return hits / len(rows)


def ref_crosstab(rows):
    """(size_counts, exact_counts): size-pair tallies and per-size exact matches."""
    size_counts: dict[tuple[int, int], int] = {}
    exact_counts: dict[int, int] = {}
    for t, p in rows:
        key = (len(t), len(p))
        size_counts[key] = size_counts.get(key, 0) + 1
        if t == p:
            exact_counts[len(t)] = exact_counts.get(len(t), 0) + 1
    return size_counts, exact_counts


# ---------------------------------------------------------- reliability

def ref_cohen_kappa(pairs, categories):
    """Unweighted Cohen's kappa from (rating_a, rating_b) pairs.

    kappa = (p_o - p_e) / (1 - p_e); p_e from the two marginal
    distributions. Returns None when p_e == 1 (degenerate marginals).
    """
    n = len(pairs)
    p_o = sum(1 for a, b in pairs if a == b) / n
    p_e = 0.0
    for c in categories:
        pa = sum(1 for a, _ in pairs if a == c) / n
        pb = sum(1 for _, b in pairs if b == c) / n
        p_e += pa * pb
    if p_e == 1:
        return None
    return (p_o - p_e) / (1 - p_e)


def ref_fleiss_kappa(counts):
    """Fleiss' kappa from an item x category count table (equal row sums r)."""
    n_items = len(counts)
    r = sum(counts[0])
    total = n_items * r
    p_bar = 0.0
    for row in counts:
        assert sum(row) == r, "unequal rater counts"
        p_i = (sum(c * c for c in row) - r) / (r * (r - 1))
        p_bar += p_i
    p_bar /= n_items
    p_e = 0.0
    for j in range(len(counts[0])):
        p_j = sum(row[j] for row in counts) / total
        p_e += p_j * p_j
    if p_e == 1:
        return None
    return (p_bar - p_e) / (1 - p_e)
