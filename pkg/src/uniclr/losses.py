"""Contrastive losses over a batch score matrix.

Four losses sharing one pair-set convention (0-based indices):

  infonce   single positive per row:  -log(s_p / (s_p + sum_n s_n))
  milnce    positives pooled:         -log(sum_p s_p / (sum_p s_p + sum_n s_n))
  supcon    positives averaged with a shared denominator:
            mean_p -log(s_p / (sum_p' s_p' + sum_n s_n))
  mpnce     per-positive InfoNCE terms averaged, optionally over the trivial
            self pair too, each weighted by a domain-balancing factor:
            mean_{p in P_i (+ {i})} -w_D(i,p) log(s_p / (s_p + sum_n s_n))

All math runs on log scores with per-row shifts, so raw exponentials are never
materialized inside the loss; each per-positive term is softplus(LSE_neg - l_p)
where LSE_neg is the row's negative logsumexp.

`separated` restricts each positive term's negatives to the same domain
combination as the positive (per-domain independent supervision); the default
unified mode pits every positive against the whole negative set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .similarity import IMAGE_IMAGE, IMAGE_TEXT, TEXT_TEXT, ScoreMatrix


@dataclass(frozen=True)
class PairIndexSets:
    """Positive/negative index sets for every row of an (M, M) batch.

    Layout follows the multi-view batch convention: sample k appears at
    indices k + m*n for view m; views 0..v-1 are images, the rest are texts.
    j is a positive of i iff j != i and (j - i) is a multiple of n.
    """

    n: int
    image_views: int
    text_views: int
    pos_mask: np.ndarray  # (M, M) bool, diagonal False
    neg_mask: np.ndarray  # (M, M) bool

    @property
    def total(self) -> int:
        return (self.image_views + self.text_views) * self.n

    def positives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.pos_mask[i])

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neg_mask[i])


def build_pair_sets(n: int, image_views: int = 3, text_views: int = 1) -> PairIndexSets:
    """Positive sets {j != i : (j - i) % n == 0} and their complements."""
    if n < 1:
        raise ContractError("n must be at least 1")
    if image_views < 1 or text_views < 1:
        raise ContractError("need at least one image view and one text view")
    total = (image_views + text_views) * n
    idx = np.arange(total)
    same_sample = (idx[:, None] - idx[None, :]) % n == 0
    eye = np.eye(total, dtype=bool)
    pos = same_sample & ~eye
    neg = ~same_sample
    return PairIndexSets(
        n=n, image_views=image_views, text_views=text_views, pos_mask=pos, neg_mask=neg
    )


@dataclass(frozen=True)
class DomainWeights:
    """Per-domain balancing weights indexed by domain combination (1..3)."""

    w: np.ndarray  # shape (3,)

    def __post_init__(self):
        if self.w.shape != (3,):
            raise ShapeError("domain weights must have shape (3,)")
        if np.any(self.w <= 0):
            raise ContractError("domain weights must be positive")

    def of(self, domain: int) -> float:
        return float(self.w[domain - 1])


def domain_weights(image_views: int, text_views: int) -> DomainWeights:
    """Weights (1/v^2, 1/(2vt), 1/t^2) equalizing total positive mass per domain.

    With trivial pairs counted there are v^2 n image-image, 2vt n image-text and
    t^2 n text-text ordered positive pairs, so each domain contributes mass n.
    """
    if image_views < 1 or text_views < 1:
        raise ContractError("view counts must be at least 1")
    v, t = image_views, text_views
    return DomainWeights(w=np.array([1.0 / v**2, 1.0 / (2.0 * v * t), 1.0 / t**2]))


@dataclass
class LossReport:
    """Loss value plus everything needed to inspect or backpropagate it."""

    loss: float
    per_row: np.ndarray  # (M,) row losses L_i
    grad_log_scores: np.ndarray  # (M, M) dL/d log(s_ij)
    log_scores: np.ndarray
    pair_terms: np.ndarray | None = None  # structured (i, p, domain, weight, value)
    diagnostics: dict | None = None

    def grad_scores(self) -> np.ndarray:
        """dL/ds_ij = dL/dlog(s_ij) / s_ij. Reporting/verification only."""
        return self.grad_log_scores * np.exp(-self.log_scores)


_PAIR_TERM_DTYPE = np.dtype(
    [("i", np.int64), ("p", np.int64), ("domain", np.int64),
     ("weight", np.float64), ("value", np.float64)]
)


def _masked_row_logsumexp(ls: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp over masked entries; -inf where a row mask is empty."""
    neg_inf = np.full(ls.shape, -np.inf)
    vals = np.where(mask, ls, neg_inf)
    shift = vals.max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(vals - shift).sum(axis=1)) + shift[:, 0]
    return out


def _row_softmax(ls: np.ndarray, mask: np.ndarray, lse: np.ndarray) -> np.ndarray:
    """exp(l_ij - LSE_i) on masked entries, zero elsewhere."""
    out = np.zeros_like(ls)
    finite = np.isfinite(lse)
    if finite.any():
        out[finite] = np.exp(ls[finite] - lse[finite, None])
    return np.where(mask, out, 0.0)


def _diagnostics(sm: ScoreMatrix, sets: PairIndexSets) -> dict | None:
    """Per-domain mean positive/negative cosine, when cosines are available."""
    if sm.cos is None:
        return None
    out = {}
    for d in (IMAGE_IMAGE, IMAGE_TEXT, TEXT_TEXT):
        dmask = sm.domains == d
        for name, mask in (("pos", sets.pos_mask), ("neg", sets.neg_mask)):
            sel = mask & dmask
            out[f"{name}_cos_d{d}"] = float(sm.cos[sel].mean()) if sel.any() else float("nan")
    return out


def _check_shapes(sm: ScoreMatrix, sets: PairIndexSets) -> np.ndarray:
    ls = sm.log_scores
    if ls.shape != (sets.total, sets.total):
        raise ShapeError(
            f"score matrix {ls.shape} does not match pair sets for M={sets.total}"
        )
    return ls


def _per_positive_nce(
    sm: ScoreMatrix,
    sets: PairIndexSets,
    iter_mask: np.ndarray,
    weight_matrix: np.ndarray,
    separated: bool,
) -> LossReport:
    """Shared core of infonce/mpnce: mean of weighted per-positive NCE terms.

    Each iterated pair (i, p) contributes w_ip * softplus(LSE_neg - l_ip) where
    LSE_neg runs over N_i (restricted to domain D(i, p) when separated).
    """
    ls = sm.log_scores
    count = int(iter_mask[0].sum())
    if count == 0 or np.any(iter_mask.sum(axis=1) != count):
        raise ContractError("every row must iterate over the same nonempty pair set")

    grad = np.zeros_like(ls)
    if separated:
        term = np.zeros_like(ls)
        for d in (IMAGE_IMAGE, IMAGE_TEXT, TEXT_TEXT):
            dmask = sm.domains == d
            it_d = iter_mask & dmask
            if not it_d.any():
                continue
            neg_d = sets.neg_mask & dmask
            lse_neg = _masked_row_logsumexp(ls, neg_d)
            u = lse_neg[:, None] - ls
            term += np.where(it_d, np.logaddexp(0.0, u), 0.0) * weight_matrix
            sig = np.where(it_d, _sigmoid(u), 0.0) * weight_matrix
            grad -= sig / count
            coeff = sig.sum(axis=1) / count
            grad += coeff[:, None] * _row_softmax(ls, neg_d, lse_neg)
        term = np.where(iter_mask, term, 0.0)
    else:
        lse_neg = _masked_row_logsumexp(ls, sets.neg_mask)
        u = lse_neg[:, None] - ls
        term = np.where(iter_mask, np.logaddexp(0.0, u), 0.0) * weight_matrix
        sig = np.where(iter_mask, _sigmoid(u), 0.0) * weight_matrix
        grad -= sig / count
        coeff = sig.sum(axis=1) / count
        grad += coeff[:, None] * _row_softmax(ls, sets.neg_mask, lse_neg)

    per_row = term.sum(axis=1) / count
    ii, pp = np.nonzero(iter_mask)
    pair_terms = np.empty(ii.size, dtype=_PAIR_TERM_DTYPE)
    pair_terms["i"] = ii
    pair_terms["p"] = pp
    pair_terms["domain"] = sm.domains[ii, pp]
    pair_terms["weight"] = weight_matrix[ii, pp]
    pair_terms["value"] = term[ii, pp]
    return LossReport(
        loss=float(per_row.mean()),
        per_row=per_row,
        grad_log_scores=grad / sets.total,
        log_scores=ls,
        pair_terms=pair_terms,
        diagnostics=_diagnostics(sm, sets),
    )


def _sigmoid(u: np.ndarray) -> np.ndarray:
    # stable in both tails, tolerates -inf from empty negative sets
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def infonce_loss(scores: ScoreMatrix, sets: PairIndexSets) -> LossReport:
    """Single-positive NCE; requires exactly one positive per row."""
    _check_shapes(scores, sets)
    if np.any(sets.pos_mask.sum(axis=1) != 1):
        raise ContractError("infonce requires exactly one positive per row")
    ones = np.ones_like(scores.log_scores)
    return _per_positive_nce(scores, sets, sets.pos_mask, ones, separated=False)


def milnce_loss(scores: ScoreMatrix, sets: PairIndexSets) -> LossReport:
    """Pooled-positives NCE: L_i = LSE(P u N) - LSE(P)."""
    ls = _check_shapes(scores, sets)
    if np.any(~sets.pos_mask.any(axis=1)):
        raise ContractError("milnce requires a nonempty positive set per row")
    all_mask = sets.pos_mask | sets.neg_mask
    lse_all = _masked_row_logsumexp(ls, all_mask)
    lse_pos = _masked_row_logsumexp(ls, sets.pos_mask)
    per_row = lse_all - lse_pos
    grad = _row_softmax(ls, all_mask, lse_all) - _row_softmax(ls, sets.pos_mask, lse_pos)
    return LossReport(
        loss=float(per_row.mean()),
        per_row=per_row,
        grad_log_scores=grad / sets.total,
        log_scores=ls,
        diagnostics=_diagnostics(scores, sets),
    )


def supcon_loss(scores: ScoreMatrix, sets: PairIndexSets) -> LossReport:
    """Mean per-positive NCE with a shared full denominator."""
    ls = _check_shapes(scores, sets)
    pos_counts = sets.pos_mask.sum(axis=1)
    if np.any(pos_counts == 0):
        raise ContractError("supcon requires a nonempty positive set per row")
    all_mask = sets.pos_mask | sets.neg_mask
    lse_all = _masked_row_logsumexp(ls, all_mask)
    mean_pos = np.where(sets.pos_mask, ls, 0.0).sum(axis=1) / pos_counts
    per_row = lse_all - mean_pos
    grad = _row_softmax(ls, all_mask, lse_all) - sets.pos_mask / pos_counts[:, None]
    return LossReport(
        loss=float(per_row.mean()),
        per_row=per_row,
        grad_log_scores=grad / sets.total,
        log_scores=ls,
        diagnostics=_diagnostics(scores, sets),
    )


def mpnce_loss(
    scores: ScoreMatrix,
    sets: PairIndexSets,
    weights: DomainWeights | None = None,
    include_trivial: bool = True,
    separated: bool = False,
) -> LossReport:
    """Per-positive NCE terms averaged over P_i (plus the trivial pair).

    `weights=None` applies weight 1 to every term. The trivial pair (i, i)
    enters through the score-matrix diagonal, whose cosine is pinned at 1.
    """
    ls = _check_shapes(scores, sets)
    iter_mask = sets.pos_mask.copy()
    if include_trivial:
        np.fill_diagonal(iter_mask, True)
    if np.any(~iter_mask.any(axis=1)):
        raise ContractError("mpnce requires a nonempty positive iteration set per row")
    if weights is None:
        weight_matrix = np.ones_like(ls)
    else:
        weight_matrix = weights.w[scores.domains - 1]
    return _per_positive_nce(scores, sets, iter_mask, weight_matrix, separated)


LOSS_KINDS = ("infonce", "milnce", "supcon", "mpnce")
