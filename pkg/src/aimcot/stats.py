"""Statistics used by the trace analyses.

Pearson correlation, exact one-sided binomial test (log-space, safe for
thousands of trials), two-sample t-test (pooled or unequal-variance),
nearest-rank upper quantile, and an LCS-based text overlap score. On top
of these sit the two trace-corpus procedures: per-response synchronized
insertion proportions correlated against response scores, and the
high-vs-low score group comparison.

Report conventions, recorded in every emitted report: correlation and
t-test p-values are two-sided; the t-test defaults to the pooled-variance
variant; zero-insertion responses are excluded from correlation and
counted separately; text overlap tokenizes on whitespace after case
folding, without stemming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .errors import ConstantInputError, ContractError, DataError


# -- primitive tests ---------------------------------------------------------

def pearson(x: list[float], y: list[float]) -> tuple[float, float]:
    """Sample correlation with its two-sided p-value.

    p comes from t = r * sqrt((n-2) / (1-r^2)) against the t distribution
    with n-2 degrees of freedom.
    """
    n = len(x)
    if n != len(y):
        raise ContractError("series lengths differ")
    if n < 3:
        raise DataError("correlation needs at least 3 points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((v - mx) ** 2 for v in x)
    syy = sum((v - my) ** 2 for v in y)
    if sxx == 0.0 or syy == 0.0:
        raise ConstantInputError("correlation undefined for a constant series")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(special.stdtr(n - 2, -abs(t)))
    return r, p


def binom_test_one_sided(k: int, n: int, p0: float) -> float:
    """Exact upper tail P(X >= k) for X ~ Binomial(n, p0), in log space."""
    if not (0 <= k <= n):
        raise ContractError(f"k={k} outside [0, {n}]")
    if not (0.0 < p0 < 1.0):
        raise ContractError("p0 must be inside (0, 1)")
    if k == 0:
        return 1.0
    log_terms = [
        math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
        + i * math.log(p0) + (n - i) * math.log1p(-p0)
        for i in range(k, n + 1)
    ]
    m = max(log_terms)
    return min(1.0, math.exp(m) * sum(math.exp(t - m) for t in log_terms))


def t_test_two_sample(
    a: list[float], b: list[float], variant: str = "student"
) -> tuple[float, float]:
    """Two-sided two-sample t-test; ``variant`` is ``student`` or ``welch``.

    Degenerate variance conventions: identical means with zero variance
    give p = 1; separated means with zero variance give p = 0.
    """
    if len(a) < 2 or len(b) < 2:
        raise DataError("each sample needs at least 2 observations")
    if variant not in ("student", "welch"):
        raise ContractError(f"unknown t-test variant {variant!r}")
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((v - ma) ** 2 for v in a) / (na - 1)
    vb = sum((v - mb) ** 2 for v in b) / (nb - 1)
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return 0.0, 1.0
        return math.inf if ma > mb else -math.inf, 0.0
    if variant == "student":
        pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
        df = float(na + nb - 2)
    else:
        se = math.sqrt(va / na + vb / nb)
        df = (va / na + vb / nb) ** 2 / (
            (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
        )
    t = (ma - mb) / se
    p = 2.0 * float(special.stdtr(df, -abs(t)))
    return t, p


def upper_quantile(xs: list[float], q: float) -> float:
    """Nearest-rank quantile: ascending sort, element ceil(q*n) - 1."""
    if not xs:
        raise DataError("quantile of an empty series")
    if not (0.0 < q < 1.0):
        raise ContractError("q must be inside (0, 1)")
    ordered = sorted(xs)
    return ordered[max(0, math.ceil(q * len(ordered)) - 1)]


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            curr[j] = prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l_f(candidate: str, reference: str) -> float:
    """Longest-common-subsequence F1 over case-folded whitespace tokens."""
    cand = candidate.lower().split()
    ref = reference.lower().split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_len(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


# -- trace-corpus procedures ---------------------------------------------------

@dataclass(frozen=True)
class ResponseShifts:
    """What one trace contributes: its shift series and insertion shifts."""

    question_id: str
    shift_series: tuple[float, ...]
    insertion_shifts: tuple[float | None, ...]


@dataclass(frozen=True)
class ResponseScorePair:
    question_id: str
    proportion_synchronized: float
    score: float


@dataclass(frozen=True)
class GroupReport:
    mean_high: float
    mean_low: float
    t_stat: float
    p_value: float
    n_high: int
    n_low: int


def synchronized_proportion(resp: ResponseShifts, quantile_q: float) -> float | None:
    """Fraction of insertions whose shift exceeds the response's own
    upper-quantile threshold; None when the response never inserted."""
    if not resp.insertion_shifts:
        return None
    if not resp.shift_series:
        return 0.0
    threshold = upper_quantile(list(resp.shift_series), quantile_q)
    synced = sum(
        1 for d in resp.insertion_shifts if d is not None and d > threshold
    )
    return synced / len(resp.insertion_shifts)


def synchronized_insertion_analysis(
    responses: list[ResponseShifts],
    scores: dict[str, float],
    quantile_q: float = 0.8,
) -> tuple[list[ResponseScorePair], float, float, int]:
    """Correlate per-response synchronized-insertion proportions with scores.

    Returns (pairs, r, p, excluded) where ``excluded`` counts responses
    without insertions, which carry no proportion and are left out.
    """
    pairs: list[ResponseScorePair] = []
    excluded = 0
    for resp in responses:
        if resp.question_id not in scores:
            raise DataError(f"no score for question {resp.question_id!r}")
        p_k = synchronized_proportion(resp, quantile_q)
        if p_k is None:
            excluded += 1
            continue
        pairs.append(
            ResponseScorePair(
                question_id=resp.question_id,
                proportion_synchronized=p_k,
                score=scores[resp.question_id],
            )
        )
    if len(pairs) < 3:
        raise DataError(f"only {len(pairs)} usable responses, need at least 3")
    r, p = pearson(
        [pair.proportion_synchronized for pair in pairs],
        [pair.score for pair in pairs],
    )
    return pairs, r, p, excluded


def group_analysis(
    pairs: list[ResponseScorePair], variant: str = "student"
) -> GroupReport:
    """Compare synchronized proportions between score extremes.

    Pairs are ranked by score (ties by question id); the top and bottom
    30 percent form the two groups.
    """
    if len(pairs) < 7:
        raise DataError(f"group analysis needs at least 7 pairs, got {len(pairs)}")
    ranked = sorted(pairs, key=lambda pr: (-pr.score, pr.question_id))
    g = max(1, int(0.3 * len(ranked)))
    high = [pr.proportion_synchronized for pr in ranked[:g]]
    low = [pr.proportion_synchronized for pr in ranked[-g:]]
    t, p = t_test_two_sample(high, low, variant=variant)
    return GroupReport(
        mean_high=sum(high) / len(high),
        mean_low=sum(low) / len(low),
        t_stat=t,
        p_value=p,
        n_high=len(high),
        n_low=len(low),
    )


def parse_scores(text: str) -> dict[str, float]:
    """Score file: one ``question_id<TAB>score`` per line."""
    scores: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"score line {lineno} is not 'id<TAB>score': {raw!r}")
        try:
            scores[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise DataError(f"score line {lineno} has a non-numeric score") from exc
    return scores
