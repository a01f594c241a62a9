"""Independent nested-loop transcription of the scoring rules.

Deliberately written in plain Python (lists, dicts, fractions) with no
shared code paths with the package internals; tests compare the fast
engine against these functions on small instances.
"""

from __future__ import annotations

from fractions import Fraction


def descending_order(scores, exclude=None):
    """Indices sorted by descending score, ties by ascending index."""
    idx = [i for i in range(len(scores)) if i != exclude]
    return sorted(idx, key=lambda i: (-float(scores[i]), i))


def gallery_rank_lists(gallery_sims):
    """Per-anchor ranking lists over the other gallery samples."""
    n = len(gallery_sims)
    return [descending_order(gallery_sims[g], exclude=g) for g in range(n)]


def position(lst, x):
    """1-based position of x in a ranking list."""
    return lst.index(x) + 1


def rank_sim(measure, l_ab, l_ba):
    if l_ab == 0 and l_ba == 0:
        return 1.0
    if measure == "nonreciprocal":
        return 1.0 / l_ab
    if measure == "max":
        return 1.0 / max(l_ab, l_ba)
    if measure == "sum":
        return 1.0 / (l_ab + l_ba)
    if measure == "combined":
        return 1.0 / (l_ab + l_ba + max(l_ab, l_ba))
    raise ValueError(measure)


def kappa_fraction(q, lists, k):
    """Literal double-sum reliability of anchor q, in exact arithmetic."""
    top = lists[q][:k]
    extended = set(top) | {q}
    num = Fraction(0)
    den = Fraction(0)
    for i, q_i in enumerate(top, start=1):
        for member in lists[q_i][:k]:
            den += Fraction(1, i)
            if member in extended:
                num += Fraction(1, i)
    return num / den


def mutual_positions(lists, target, entry):
    """(l_entry(R_target), l_target(R_entry)) with 0 self sentinels."""
    if target == entry:
        return 0, 0
    return position(lists[target], entry), position(lists[entry], target)


def stage_score(
    g, probe_list, lists, kappas, k0, k, measure, weighting, context_side, context_order
):
    """Bilateral score of candidate g against the current probe list."""
    if context_order == 2:
        gallery_ctx = []
        for j in range(k0):
            block_anchor = lists[g][j]
            for e in lists[block_anchor][:k]:
                if weighting == "reliability":
                    w = kappas[block_anchor]
                elif weighting == "uniform":
                    w = 1.0
                else:  # rank: combined mutual-rank weight vs the context anchor
                    w = rank_sim("combined", *mutual_positions(lists, g, e))
                gallery_ctx.append((e, w))
        probe_ctx = []
        for j in range(k0):
            block_anchor = probe_list[j]
            for e in lists[block_anchor][:k]:
                if weighting == "reliability":
                    w = kappas[block_anchor]
                elif weighting == "uniform":
                    w = 1.0
                else:  # rank: nonreciprocal position in the probe's list
                    w = 1.0 / position(probe_list, e)
                probe_ctx.append((e, w))
    elif context_order == 1:
        gallery_ctx = []
        for i, e in enumerate(lists[g][:k], start=1):
            if weighting == "uniform":
                w = 1.0
            else:
                w = rank_sim("combined", i, position(lists[e], g))
            gallery_ctx.append((e, w))
        probe_ctx = []
        for i, e in enumerate(probe_list[:k], start=1):
            w = 1.0 if weighting == "uniform" else 1.0 / i
            probe_ctx.append((e, w))
    else:
        raise ValueError(context_order)

    s_probe_side = 0.0
    for e, w in gallery_ctx:
        s_probe_side += w * (1.0 / position(probe_list, e))

    s_gallery_side = 0.0
    for e, w in probe_ctx:
        s_gallery_side += w * rank_sim(measure, *mutual_positions(lists, g, e))

    if context_side == "bilateral":
        return s_probe_side + s_gallery_side
    if context_side == "probe":
        return s_gallery_side
    if context_side == "gallery":
        return s_probe_side
    raise ValueError(context_side)


def rerank_reference(
    gallery_sims,
    probe_sims,
    k0,
    k,
    L,
    measure="combined",
    weighting="reliability",
    context_side="bilateral",
    stages="progressive",
):
    """Full re-rank of one probe; returns (final_order, per-candidate scores).

    Scores are keyed by gallery index, one value per executed stage.
    """
    lists = gallery_rank_lists(gallery_sims)
    n = len(lists)
    kappas = [float(kappa_fraction(q, lists, k)) for q in range(n)]

    initial = descending_order(probe_sims)
    L = min(L, n)
    current_list = list(initial)
    current_cands = initial[:L]
    records = {g: [] for g in current_cands}

    if stages in ("second", "progressive"):
        scores = [
            stage_score(
                g, current_list, lists, kappas, k0, k, measure, weighting,
                context_side, 2,
            )
            for g in current_cands
        ]
        for g, s in zip(current_cands, scores):
            records[g].append(s)
        by_score = sorted(range(len(current_cands)), key=lambda i: (-scores[i], i))
        current_cands = [current_cands[i] for i in by_score]
        current_list = current_cands + initial[L:]

    if stages in ("first", "progressive"):
        scores = [
            stage_score(
                g, current_list, lists, kappas, k0, k, measure, weighting,
                context_side, 1,
            )
            for g in current_cands
        ]
        for g, s in zip(current_cands, scores):
            records[g].append(s)
        by_score = sorted(range(len(current_cands)), key=lambda i: (-scores[i], i))
        current_cands = [current_cands[i] for i in by_score]

    return current_cands + initial[L:], records


def cmc_reference(orders, positives, junks, max_k):
    """Naive CMC: per-probe scan of the junk-cleaned list."""
    rates = [0.0] * max_k
    scored = 0
    for pid, order in orders:
        pos = positives.get(pid, set())
        if not pos:
            continue
        scored += 1
        junk = junks.get(pid, set())
        cleaned = [g for g in order if g not in junk]
        first = None
        for rank, g in enumerate(cleaned, start=1):
            if g in pos:
                first = rank
                break
        if first is not None:
            for kk in range(first, max_k + 1):
                rates[kk - 1] += 1.0
    return [r / scored for r in rates]


def map_reference(orders, positives, junks):
    """Naive mAP: by-definition per-probe average precision."""
    aps = []
    for pid, order in orders:
        pos = positives.get(pid, set())
        if not pos:
            continue
        junk = junks.get(pid, set())
        cleaned = [g for g in order if g not in junk]
        hits = 0
        total = 0.0
        for rank, g in enumerate(cleaned, start=1):
            if g in pos:
                hits += 1
                total += hits / rank
        aps.append(total / len(pos))
    return sum(aps) / len(aps)
