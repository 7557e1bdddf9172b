"""Similarity scores between unified embeddings.

Three formulations, selected by mode:
  shared         s_ij = exp(cos(z_i, z_j) / tau)                  one learnable tau
  shared_offset  s_ij = exp((cos(z_i, z_j) - b) / tau)            one tau, one offset
  domain         s_ij = exp((cos(z_i, z_j) - b_D) / tau_D)        per domain combination

Domain combinations follow the batch index layout: indices below v*N are image
views, the rest are text views. D=1 image-image, D=2 image-text, D=3 text-text.

All downstream consumers work on log scores (cos - b_D) / tau_D; the raw
exponential is exposed only for reporting, so small temperatures cannot
overflow the loss math.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

MODES = ("shared", "shared_offset", "domain")

IMAGE_IMAGE = 1
IMAGE_TEXT = 2
TEXT_TEXT = 3


def domain_of(i: int, j: int, n: int, image_views: int = 3, text_views: int = 1) -> int:
    """Domain combination of the pair at 0-based batch indices (i, j)."""
    total = (image_views + text_views) * n
    if not (0 <= i < total and 0 <= j < total):
        raise ContractError(f"indices ({i}, {j}) out of range for batch of {total}")
    cut = image_views * n
    if i < cut and j < cut:
        return IMAGE_IMAGE
    if i >= cut and j >= cut:
        return TEXT_TEXT
    return IMAGE_TEXT


def domain_matrix(n: int, image_views: int = 3, text_views: int = 1) -> np.ndarray:
    """(M, M) int matrix of pairwise domain combinations, M = (v+t)*n."""
    total = (image_views + text_views) * n
    cut = image_views * n
    is_text = np.arange(total) >= cut
    d = np.full((total, total), IMAGE_TEXT, dtype=np.int64)
    d[np.ix_(~is_text, ~is_text)] = IMAGE_IMAGE
    d[np.ix_(is_text, is_text)] = TEXT_TEXT
    return d


def cosine(z_i: np.ndarray, z_j: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors."""
    ni = np.linalg.norm(z_i)
    nj = np.linalg.norm(z_j)
    if ni == 0.0 or nj == 0.0:
        raise DegenerateInputError("cosine of a zero-norm embedding is undefined")
    return float(z_i @ z_j / (ni * nj))


@dataclass
class SimilarityParams:
    """Learnable temperature/offset parameters.

    `log_tau` and `offset` hold the raw trainable arrays: length 3 in domain
    mode, length 1 when shared across domains. In plain shared mode the offset
    is fixed at zero and is not trainable.
    """

    mode: str
    log_tau: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        want = 3 if self.mode == "domain" else 1
        if self.log_tau.shape != (want,):
            raise ShapeError(f"log_tau must have shape ({want},) in mode {self.mode}")
        if self.offset.shape != (want,):
            raise ShapeError(f"offset must have shape ({want},) in mode {self.mode}")

    @classmethod
    def create(cls, mode: str, init_tau: float = 0.1, init_offset: float = 0.0):
        k = 3 if mode == "domain" else 1
        if init_tau <= 0:
            raise ContractError("init_tau must be positive")
        return cls(
            mode=mode,
            log_tau=np.full(k, np.log(init_tau)),
            offset=np.full(k, float(init_offset)),
        )

    def _index(self, domain: int) -> int:
        return domain - 1 if self.mode == "domain" else 0

    def tau(self, domain: int) -> float:
        return float(np.exp(self.log_tau[self._index(domain)]))

    def b(self, domain: int) -> float:
        if self.mode == "shared":
            return 0.0
        return float(self.offset[self._index(domain)])

    def tau_by_domain(self) -> np.ndarray:
        """tau value per domain combination, shape (3,)."""
        taus = np.exp(self.log_tau)
        return taus if self.mode == "domain" else np.repeat(taus, 3)

    def b_by_domain(self) -> np.ndarray:
        if self.mode == "shared":
            return np.zeros(3)
        return self.offset if self.mode == "domain" else np.repeat(self.offset, 3)

    def params(self) -> dict[str, np.ndarray]:
        """Trainable parameter dict; plain shared mode has no trainable offset."""
        out = {"sim.log_tau": self.log_tau}
        if self.mode != "shared":
            out["sim.offset"] = self.offset
        return out


def score(z_i: np.ndarray, z_j: np.ndarray, params: SimilarityParams, domain: int) -> float:
    """Pairwise similarity score exp((cos - b_D) / tau_D)."""
    c = cosine(z_i, z_j)
    return float(np.exp((c - params.b(domain)) / params.tau(domain)))


@dataclass
class ScoreMatrix:
    """All pairwise scores of a batch, kept in log space.

    The cosine diagonal is pinned to exactly 1 (the self pair is definitionally
    at cosine 1), so trivial-pair scores depend on tau/b but not the embeddings.
    """

    log_scores: np.ndarray
    domains: np.ndarray
    cos: np.ndarray | None = None
    params: SimilarityParams | None = None
    # backward caches
    _unit: np.ndarray | None = field(default=None, repr=False)
    _norms: np.ndarray | None = field(default=None, repr=False)

    @property
    def scores(self) -> np.ndarray:
        """Raw exponentials, for reporting only."""
        return np.exp(self.log_scores)

    @classmethod
    def from_log_scores(cls, log_scores: np.ndarray, domains: np.ndarray | None = None):
        """Wrap a precomputed log-score matrix (used by loss-level tests)."""
        log_scores = np.asarray(log_scores, dtype=float)
        if domains is None:
            domains = np.full(log_scores.shape, IMAGE_IMAGE, dtype=np.int64)
        return cls(log_scores=log_scores, domains=domains)


def score_matrix(
    z: np.ndarray,
    params: SimilarityParams,
    domains: np.ndarray,
) -> ScoreMatrix:
    """Pairwise log scores for a (M, d) embedding matrix with domain routing."""
    if z.ndim != 2:
        raise ShapeError(f"expected (M, d) embeddings, got {z.shape}")
    m = z.shape[0]
    if domains.shape != (m, m):
        raise ShapeError(f"domain matrix {domains.shape} does not match batch of {m}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm embedding in batch")
    unit = z / norms[:, None]
    cos = unit @ unit.T
    np.fill_diagonal(cos, 1.0)
    tau = params.tau_by_domain()[domains - 1]
    b = params.b_by_domain()[domains - 1]
    log_scores = (cos - b) / tau
    return ScoreMatrix(
        log_scores=log_scores,
        domains=domains,
        cos=cos,
        params=params,
        _unit=unit,
        _norms=norms,
    )


def score_matrix_backward(
    sm: ScoreMatrix, d_log_scores: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward through log s_ij = (cos_ij - b_D) / tau_D.

    Takes the upstream gradient w.r.t. log scores and returns gradients w.r.t.
    the embeddings, log_tau, and offset (shaped like the trainable arrays).
    The diagonal contributes to tau/b gradients but not to the embeddings,
    matching the pinned-cosine convention.
    """
    if sm.params is None or sm._unit is None:
        raise ContractError("score matrix was not built from embeddings")
    params = sm.params
    if d_log_scores.shape != sm.log_scores.shape:
        raise ShapeError("upstream gradient shape mismatch")
    tau_d = params.tau_by_domain()
    per_domain_tau = tau_d[sm.domains - 1]

    # d/d cos = 1/tau; embeddings never see the pinned diagonal
    d_cos = d_log_scores / per_domain_tau
    g = d_cos.copy()
    np.fill_diagonal(g, 0.0)
    unit, norms = sm._unit, sm._norms
    d_unit = (g + g.T) @ unit
    d_z = (d_unit - (d_unit * unit).sum(axis=1, keepdims=True) * unit) / norms[:, None]

    # d log s / d log tau_D = -(cos - b_D)/tau_D = -log s;  d log s / d b_D = -1/tau_D
    d_log_tau3 = np.zeros(3)
    d_offset3 = np.zeros(3)
    for d in (IMAGE_IMAGE, IMAGE_TEXT, TEXT_TEXT):
        mask = sm.domains == d
        if not mask.any():
            continue
        up = d_log_scores[mask]
        d_log_tau3[d - 1] = -(up * sm.log_scores[mask]).sum()
        d_offset3[d - 1] = -(up / tau_d[d - 1]).sum()

    if params.mode == "domain":
        d_log_tau = d_log_tau3
        d_offset = d_offset3
    else:
        d_log_tau = np.array([d_log_tau3.sum()])
        d_offset = np.array([d_offset3.sum()])
    if params.mode == "shared":
        d_offset = np.zeros(0)  # offset fixed at zero, not trainable
    return d_z, d_log_tau, d_offset


def score_backward(
    sm: ScoreMatrix, d_scores: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward taking the upstream gradient w.r.t. the raw scores s_ij.

    Equivalent to the log-space backward via dL/d(log s) = s * dL/ds; the
    per-entry factors are ds/dcos = s/tau_D, ds/db_D = -s/tau_D and
    ds/d(log tau_D) = -s (cos - b_D)/tau_D.
    """
    return score_matrix_backward(sm, d_scores * sm.scores)
