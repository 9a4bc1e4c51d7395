"""Reference-based text generation metrics: BLEU-4, ROUGE-L, CIDEr-D, and a
simplified exact-match METEOR (reported as meteor_s so nobody mistakes it for
the WordNet-backed official number).

All functions take a corpus: a list of (candidate, references) pairs where
the candidate is a token list and references is a nonempty list of token
lists.  Scores are plain Python floats in [0,1] except CIDEr, which follows
the conventional x10 scaling.

Aggregation choices worth knowing:
* bleu4 is corpus-level and count-pooled (clipped counts and totals summed
  over items before the ratio), not a mean of sentence scores.  Add-one
  smoothing applies only when an order n >= 2 has a pooled clipped count of
  zero.  Effective reference length is the closest to the candidate, ties
  toward the shorter.
* rougeL and meteor_s take the best reference per item, then the corpus mean.
* cider computes IDF over the corpus's reference sets; per item it averages
  the min-clipped TF-IDF cosine over orders 1..4 and over references,
  applying the Gaussian length penalty per reference, then scales by 10.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache

from .errors import ValidationError

_METEOR_EXACT_LIMIT = 24


def _validate_corpus(corpus, who: str):
    if not corpus:
        raise ValidationError(f"{who}: empty corpus")
    for i, (cand, refs) in enumerate(corpus):
        if not cand:
            raise ValidationError(f"{who}: empty candidate at item {i}")
        if not refs or any(not r for r in refs):
            raise ValidationError(f"{who}: item {i} needs nonempty references")


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU-4 -------------------------------------------------------------------


def bleu4(corpus, max_n: int = 4) -> float:
    _validate_corpus(corpus, "bleu4")
    clipped = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    eff_ref_len = 0
    for cand, refs in corpus:
        cand_len += len(cand)
        eff_ref_len += min((len(r) for r in refs),
                           key=lambda rl: (abs(rl - len(cand)), rl))
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            max_ref = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(c, max_ref[gram]) for gram, c in counts.items())

    if totals[0] == 0 or clipped[0] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        m, t = clipped[n - 1], totals[n - 1]
        if t == 0:
            # every candidate shorter than n tokens; drop the order entirely
            continue
        if m == 0:
            m, t = m + 1, t + 1  # add-one smoothing on zero counts, n >= 2 only
        log_sum += math.log(m / t) / max_n
    bp = 1.0 if cand_len >= eff_ref_len else math.exp(1.0 - eff_ref_len / cand_len)
    return bp * math.exp(log_sum)


# -- ROUGE-L ------------------------------------------------------------------


def _lcs_len(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(cur[j], prev[j + 1]))
        prev = cur
    return prev[-1]


def rougeL(corpus, beta: float = 1.2) -> float:
    _validate_corpus(corpus, "rougeL")
    total = 0.0
    for cand, refs in corpus:
        best = 0.0
        for ref in refs:
            lcs = _lcs_len(cand, ref)
            if lcs == 0:
                continue
            p = lcs / len(cand)
            r = lcs / len(ref)
            f = (1 + beta * beta) * r * p / (r + beta * beta * p)
            best = max(best, f)
        total += best
    return total / len(corpus)


# -- CIDEr-D ------------------------------------------------------------------


def _idf_tables(corpus, max_n: int):
    """Per-order IDF over reference sets: log(N) - log(max(1, df))."""
    n_docs = len(corpus)
    log_n = math.log(n_docs)
    tables = []
    for n in range(1, max_n + 1):
        df = Counter()
        for _, refs in corpus:
            seen = set()
            for ref in refs:
                seen.update(_ngrams(ref, n).keys())
            df.update(seen)
        tables.append({g: log_n - math.log(max(1.0, c)) for g, c in df.items()})
    return tables


def _tfidf_vec(tokens, n: int, idf: dict, default_idf: float):
    # grams unseen in any reference set keep df clamped to 1: idf = log(N)
    vec = {}
    norm_sq = 0.0
    for gram, count in _ngrams(tokens, n).items():
        w = count * idf.get(gram, default_idf)
        vec[gram] = w
        norm_sq += w * w
    return vec, math.sqrt(norm_sq)


def _cider_item(cand, refs, idf_by_n, n_docs: int, max_n: int, sigma: float) -> float:
    log_n = math.log(n_docs)
    item_score = 0.0
    for n in range(1, max_n + 1):
        idf = idf_by_n[n - 1]
        cvec, cnorm = _tfidf_vec(cand, n, idf, log_n)
        order_score = 0.0
        for ref in refs:
            rvec, rnorm = _tfidf_vec(ref, n, idf, log_n)
            dot = 0.0
            for gram, w in cvec.items():
                if gram in rvec:
                    dot += min(w, rvec[gram]) * rvec[gram]
            sim = dot / (cnorm * rnorm) if cnorm > 0 and rnorm > 0 else 0.0
            delta = len(cand) - len(ref)
            sim *= math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            order_score += sim
        item_score += order_score / len(refs)
    return 10.0 * item_score / max_n


def cider(corpus, max_n: int = 4, sigma: float = 6.0) -> float:
    _validate_corpus(corpus, "cider")
    if len(corpus) < 2:
        raise ValidationError("cider: needs >= 2 items for meaningful document frequencies")
    idf_by_n = _idf_tables(corpus, max_n)
    total = 0.0
    for cand, refs in corpus:
        total += _cider_item(cand, refs, idf_by_n, len(corpus), max_n, sigma)
    return total / len(corpus)


# -- simplified METEOR ---------------------------------------------------------


def _max_matches(cand, ref) -> int:
    cc, rc = Counter(cand), Counter(ref)
    return sum(min(c, rc[t]) for t, c in cc.items())


def _min_chunks_exact(cand, ref, m: int) -> int:
    """Minimum chunk count over all alignments with the maximum match count m.

    Exhaustive search over occurrence assignments, memoized on (candidate
    position, used-reference bitmask, previous reference slot).  A chunk
    continues only when both candidate and reference positions advance by
    one; skipping a candidate token therefore resets the run (prev_ref -2).
    """
    positions = {}
    for j, t in enumerate(ref):
        positions.setdefault(t, []).append(j)

    n_cand = len(cand)

    @lru_cache(maxsize=None)
    def go(ci, used_mask, prev_ref, left):
        if left == 0:
            return 0
        if ci >= n_cand or n_cand - ci < left:
            return math.inf
        tok = cand[ci]
        best = go(ci + 1, used_mask, -2, left)
        for j in positions.get(tok, ()):
            if used_mask >> j & 1:
                continue
            cont = 0 if j == prev_ref + 1 else 1
            best = min(best, cont + go(ci + 1, used_mask | (1 << j), j, left - 1))
        return best

    result = go(0, 0, -2, m)
    go.cache_clear()
    if math.isinf(result):
        raise ValidationError("meteor_s: internal alignment failure")
    return int(result)


def _min_chunks_greedy(cand, ref, m: int) -> int:
    """Fallback for very long references: greedy longest-run alignment."""
    used = [False] * len(ref)
    rc = Counter(ref)
    avail = Counter()
    for t, c in Counter(cand).items():
        avail[t] = min(c, rc[t])
    chunks = 0
    ci = 0
    while ci < len(cand):
        tok = cand[ci]
        if avail[tok] <= 0:
            ci += 1
            continue
        best_len, best_j = 0, -1
        for j in range(len(ref)):
            if used[j] or ref[j] != tok:
                continue
            length = 0
            budget = Counter(avail)
            while (ci + length < len(cand) and j + length < len(ref)
                   and not used[j + length]
                   and cand[ci + length] == ref[j + length]
                   and budget[cand[ci + length]] > 0):
                budget[cand[ci + length]] -= 1
                length += 1
            if length > best_len:
                best_len, best_j = length, j
        if best_j < 0:
            ci += 1
            continue
        for k in range(best_len):
            used[best_j + k] = True
            avail[cand[ci + k]] -= 1
        chunks += 1
        ci += best_len
    return chunks


def _meteor_pair(cand, ref) -> float:
    m = _max_matches(cand, ref)
    if m == 0:
        return 0.0
    if len(ref) <= _METEOR_EXACT_LIMIT:
        chunks = _min_chunks_exact(tuple(cand), tuple(ref), m)
    else:
        chunks = _min_chunks_greedy(cand, ref, m)
    p = m / len(cand)
    r = m / len(ref)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def meteor_s(corpus) -> float:
    _validate_corpus(corpus, "meteor_s")
    total = 0.0
    for cand, refs in corpus:
        total += max(_meteor_pair(cand, ref) for ref in refs)
    return total / len(corpus)


# -- bundle -------------------------------------------------------------------


METRIC_KEYS = ("bleu4", "meteor_s", "rougeL", "cider")


def score_corpus(corpus) -> dict:
    """All four metrics; cider falls back to 0.0 on a single-item corpus."""
    out = {
        "bleu4": bleu4(corpus),
        "meteor_s": meteor_s(corpus),
        "rougeL": rougeL(corpus),
    }
    out["cider"] = cider(corpus) if len(corpus) >= 2 else 0.0
    return out


def score_items(corpus) -> list:
    """Per-item breakdown; cider keeps corpus-level IDF context."""
    idf_by_n = _idf_tables(corpus, 4) if len(corpus) >= 2 else None
    rows = []
    for cand, refs in corpus:
        single = [(cand, refs)]
        rows.append({
            "bleu4": bleu4(single),
            "meteor_s": meteor_s(single),
            "rougeL": rougeL(single),
            "cider": _cider_item(cand, refs, idf_by_n, len(corpus), 4, 6.0) if idf_by_n else 0.0,
        })
    return rows
