"""Question-answering and captioning text metrics.

All metrics share one normalization: lowercase, punctuation characters
removed, whitespace split. Conventions, fixed here and mirrored by the test
oracles:

* sentence BLEU-n: uniform weights over the effective orders (orders the
  candidate is too short to populate are skipped, so a verbatim reference
  match always scores 1), clipped counts with a 1e-9 epsilon on zero clipped
  counts, brevity penalty against the closest reference length (ties ->
  shorter), empty prediction -> 0
* ROUGE-L: LCS F-measure with beta = 1.2, best reference wins
* meteor_lite: unigram precision/recall harmonic mean weighted 9:1 toward
  recall with a fragmentation penalty; matching is exact plus bare suffix
  stemming (no synonym or paraphrase resources, hence the "lite")
* CIDEr: consensus TF-IDF n-gram cosine (n = 1..4) over the evaluated corpus
  as the document set, averaged over references and n, scaled by 10

em_r1 relaxes exact match to contiguous token-sublist containment in either
direction; that relaxation is this artifact's own definition and reports
should treat it as such.
"""

from __future__ import annotations

import math

_EPS = 1e-9
_CIDER_N = 4


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation characters, split on whitespace."""
    kept = [ch if (ch.isalnum() or ch.isspace()) else "" for ch in text.lower()]
    return "".join(kept).split()


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


def _require_refs(refs) -> list[str]:
    refs = list(refs)
    if not refs:
        raise ValueError("reference list must be non-empty")
    return refs


def em1(pred: str, refs) -> int:
    """Strict exact match after normalization."""
    refs = _require_refs(refs)
    target = normalize(pred)
    return int(any(normalize(r) == target for r in refs))


def _contains(haystack: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    return any(
        haystack[i : i + len(needle)] == needle
        for i in range(len(haystack) - len(needle) + 1)
    )


def em_r1(pred: str, refs) -> int:
    """Relaxed exact match: equality or sublist containment either way."""
    refs = _require_refs(refs)
    if em1(pred, refs):
        return 1
    pred_tokens = tokenize(pred)
    for r in refs:
        ref_tokens = tokenize(r)
        if _contains(pred_tokens, ref_tokens) or _contains(ref_tokens, pred_tokens):
            return 1
    return 0


def _ngram_counts(tokens: list[str], n: int) -> dict:
    counts: dict[tuple, int] = {}
    for gram in zip(*(tokens[i:] for i in range(n))):
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def bleu(pred: str, refs, n: int = 4) -> float:
    """Sentence BLEU-n with epsilon smoothing and brevity penalty."""
    refs = _require_refs(refs)
    cand = tokenize(pred)
    if not cand:
        return 0.0
    ref_tokens = [tokenize(r) for r in refs]

    log_precision = 0.0
    effective_orders = min(n, len(cand))
    for order in range(1, effective_orders + 1):
        cand_counts = _ngram_counts(cand, order)
        total = len(cand) - order + 1
        clipped = 0
        for gram, count in cand_counts.items():
            best = max((_ngram_counts(rt, order).get(gram, 0) for rt in ref_tokens),
                       default=0)
            clipped += min(count, best)
        log_precision += math.log(max(clipped, _EPS) / total)

    cand_len = len(cand)
    ref_len = min((abs(len(rt) - cand_len), len(rt)) for rt in ref_tokens)[1]
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_precision / effective_orders)


def _lcs_length(a: list[str], b: list[str]) -> int:
    # two-row DP
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        row = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = row[j - 1] if row[j - 1] >= prev[j] else prev[j]
        prev = row
    return prev[len(b)]


def rouge_l(pred: str, refs, beta: float = 1.2) -> float:
    """LCS F-measure, best reference."""
    refs = _require_refs(refs)
    cand = tokenize(pred)
    if not cand:
        return 0.0
    best = 0.0
    b2 = beta * beta
    for r in refs:
        rt = tokenize(r)
        if not rt:
            continue
        lcs = _lcs_length(cand, rt)
        if lcs == 0:
            continue
        p = lcs / len(cand)
        rec = lcs / len(rt)
        score = (1 + b2) * p * rec / (rec + b2 * p)
        if score > best:
            best = score
    return best


_STEM_SUFFIXES = ("ing", "es", "ed", "s")


def _stem(token: str) -> str:
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def _align(cand: list[str], ref: list[str]):
    """One-to-one matches as (cand_pos, ref_pos), exact stage then stems."""
    matches: list[tuple[int, int]] = []
    used_ref = [False] * len(ref)
    matched_cand = [False] * len(cand)
    for exact in (True, False):
        for i, token in enumerate(cand):
            if matched_cand[i]:
                continue
            for j, rtoken in enumerate(ref):
                if used_ref[j]:
                    continue
                ok = token == rtoken if exact else _stem(token) == _stem(rtoken)
                if ok:
                    matches.append((i, j))
                    used_ref[j] = True
                    matched_cand[i] = True
                    break
    matches.sort()
    return matches


def _chunks(matches: list[tuple[int, int]]) -> int:
    count = 0
    prev = None
    for i, j in matches:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            count += 1
        prev = (i, j)
    return count


def meteor_lite(pred: str, refs) -> float:
    """Recall-weighted unigram F with fragmentation penalty; best reference."""
    refs = _require_refs(refs)
    cand = tokenize(pred)
    if not cand:
        return 0.0
    best = 0.0
    for r in refs:
        rt = tokenize(r)
        if not rt:
            continue
        matches = _align(cand, rt)
        m = len(matches)
        if m == 0:
            continue
        precision = m / len(cand)
        recall = m / len(rt)
        f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
        penalty = 0.5 * (_chunks(matches) / m) ** 3
        score = f_mean * (1.0 - penalty)
        if score > best:
            best = score
    return best


def cider_per_item(corpus) -> list[float]:
    """Consensus score per (prediction, references) corpus item."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cider needs a non-empty corpus")
    n_items = len(corpus)
    cand_tokens = [tokenize(pred) for pred, _ in corpus]
    ref_tokens = [[tokenize(r) for r in refs] for _, refs in corpus]

    doc_freq: list[dict] = [{} for _ in range(_CIDER_N)]
    for refs in ref_tokens:
        for order in range(1, _CIDER_N + 1):
            grams: set = set()
            for rt in refs:
                grams.update(_ngram_counts(rt, order))
            for gram in grams:
                table = doc_freq[order - 1]
                table[gram] = table.get(gram, 0) + 1

    log_n = math.log(n_items)

    def vector(tokens: list[str], order: int):
        table = doc_freq[order - 1]
        vec = {
            gram: count * (log_n - math.log(max(1.0, table.get(gram, 0))))
            for gram, count in _ngram_counts(tokens, order).items()
        }
        norm = math.sqrt(sum(w * w for w in vec.values()))
        return vec, norm

    scores = []
    for cand, refs in zip(cand_tokens, ref_tokens):
        item_total = 0.0
        for order in range(1, _CIDER_N + 1):
            cand_vec, cand_norm = vector(cand, order)
            ref_sims = 0.0
            for rt in refs:
                ref_vec, ref_norm = vector(rt, order)
                if cand_norm == 0.0 or ref_norm == 0.0:
                    continue
                dot = sum(w * ref_vec[g] for g, w in cand_vec.items() if g in ref_vec)
                ref_sims += dot / (cand_norm * ref_norm)
            item_total += ref_sims / len(refs)
        scores.append(10.0 * item_total / _CIDER_N)
    return scores


def cider(corpus) -> float:
    """Corpus-level consensus score (mean of per-item scores)."""
    scores = cider_per_item(corpus)
    return sum(scores) / len(scores)
