"""End-to-end training on the synthetic world.

A mini-batch of N samples yields (v + t) * N unified embeddings laid out
view-major: index k + m*N holds view m of sample k. Image view 0 is drawn
from the weak policy, the remaining image views from the strong policy, and
text views carry no augmentation. The loss consumes the full pairwise score
matrix; the optimizer updates the five networks and the similarity
temperatures/offsets together under a warmup+cosine schedule.

All randomness flows from the run seed through fixed substreams
(0 init, 1 data order, 2 augmentation, 3 evaluation), so a rerun with the
same config reproduces every metric bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .augment import IDENTITY, apply_batch, encode_batch, sample_instruction
from .config import RunConfig
from .encoders import EncoderConfig, Model
from .errors import ContractError, NonFiniteLossError
from .losses import (
    LossReport, PairIndexSets, build_pair_sets, domain_weights,
    infonce_loss, milnce_loss, mpnce_loss, supcon_loss,
)
from .numeric import ParamStore, adamw_step
from .similarity import (
    IMAGE_TEXT, SimilarityParams, ScoreMatrix, domain_matrix,
    score_matrix, score_matrix_backward,
)
from .world import SyntheticDataset, generate_dataset

STREAM_INIT, STREAM_DATA, STREAM_AUG, STREAM_EVAL = 0, 1, 2, 3


@dataclass
class EmbeddingBatch:
    """Unified embeddings of one mini-batch plus the instructions behind them."""

    z: np.ndarray  # ((v+t)*N, embed_width)
    n: int
    image_views: int
    text_views: int
    instructions: list  # instructions[k][m] for sample k, image view m
    aug_vecs: np.ndarray  # (v*N, 11) in batch order
    sample_indices: np.ndarray

    def modality(self, i: int) -> str:
        return "image" if i < self.image_views * self.n else "text"

    def view_tag(self, i: int) -> str:
        m = i // self.n
        if m == 0:
            return "weak"
        if m < self.image_views:
            return f"strong{m}"
        return "text"


def assemble_batch(
    images: np.ndarray,
    text_feats: np.ndarray,
    policies: tuple,
    model: Model,
    rng: np.random.Generator,
    image_views: int = 3,
    text_views: int = 1,
    sample_indices: np.ndarray | None = None,
) -> EmbeddingBatch:
    """Draw per-sample instructions, augment, and embed one mini-batch.

    `policies` is (weak, strong); view 0 uses weak, the rest strong. Requires
    N >= 2 so every row has negatives.
    """
    n = images.shape[0]
    if n < 2:
        raise ContractError("batches need at least 2 samples")
    weak, strong = policies
    instructions = [
        [sample_instruction(weak if m == 0 else strong, rng) for m in range(image_views)]
        for _ in range(n)
    ]
    flat_instr = [instructions[k][m] for m in range(image_views) for k in range(n)]
    tiled = np.tile(images, (image_views, 1, 1, 1))
    augmented = apply_batch(tiled, flat_instr)
    pixels = augmented.reshape(image_views * n, -1)
    aug_vecs = encode_batch(flat_instr)
    z_img = model.embed_images(pixels, aug_vecs)
    z_txt = model.embed_texts(np.tile(text_feats, (text_views, 1)))
    if sample_indices is None:
        sample_indices = np.arange(n)
    return EmbeddingBatch(
        z=np.concatenate([z_img, z_txt]),
        n=n,
        image_views=image_views,
        text_views=text_views,
        instructions=instructions,
        aug_vecs=aug_vecs,
        sample_indices=np.asarray(sample_indices),
    )


def make_loss_fn(cfg: RunConfig, sets: PairIndexSets):
    kind = cfg.loss.kind
    separated = cfg.supervision == "separated"
    if kind == "infonce":
        return lambda sm: infonce_loss(sm, sets)
    if kind == "milnce":
        return lambda sm: milnce_loss(sm, sets)
    if kind == "supcon":
        return lambda sm: supcon_loss(sm, sets)
    weights = domain_weights(cfg.image_views, cfg.text_views) if cfg.loss.weights else None
    return lambda sm: mpnce_loss(
        sm, sets, weights=weights, include_trivial=cfg.loss.trivial, separated=separated
    )


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup then cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def backward_step(
    model: Model, sim: SimilarityParams, sm: ScoreMatrix, report: LossReport,
    image_views: int, n: int,
) -> dict[str, np.ndarray]:
    """Backpropagate a loss report into a full gradient dict."""
    d_z, d_log_tau, d_offset = score_matrix_backward(sm, report.grad_log_scores)
    model.zero_grads()
    cut = image_views * n
    model.backward_images(d_z[:cut])
    model.backward_texts(d_z[cut:])
    grads = dict(model.grads())
    grads["sim.log_tau"] = d_log_tau
    if sim.mode != "shared":
        grads["sim.offset"] = d_offset
    return grads


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------


def _embed_eval(model: Model, images: np.ndarray, texts: np.ndarray):
    """Unified embeddings of unaugmented pairs (identity instruction)."""
    pixels = images.reshape(images.shape[0], -1)
    ident = encode_batch([IDENTITY] * images.shape[0])
    z_img = model.embed_images(pixels, ident)
    z_txt = model.embed_texts(texts)
    return z_img, z_txt


def retrieval_from_embeddings(
    z_img: np.ndarray, z_txt: np.ndarray, sim: SimilarityParams,
    ks: tuple[int, ...] = (1, 5),
) -> dict[str, float]:
    """Recall@k both ways, ranking pair i against all candidates by the
    learned image-text score."""
    n = z_img.shape[0]
    if max(ks) > n:
        raise ContractError(f"recall@{max(ks)} needs at least that many eval pairs")
    ui = z_img / np.linalg.norm(z_img, axis=1, keepdims=True)
    ut = z_txt / np.linalg.norm(z_txt, axis=1, keepdims=True)
    log_s = (ui @ ut.T - sim.b(IMAGE_TEXT)) / sim.tau(IMAGE_TEXT)
    out = {}
    for tag, mat in (("i2t", log_s), ("t2i", log_s.T)):
        true = np.diag(mat)
        rank = (mat > true[:, None]).sum(axis=1)
        for k in ks:
            out[f"r{k}_{tag}"] = float((rank < k).mean())
    return out


def eval_retrieval(
    model: Model, sim: SimilarityParams, images: np.ndarray, texts: np.ndarray,
    ks: tuple[int, ...] = (1, 5),
) -> dict[str, float]:
    """Embed unaugmented eval pairs and score retrieval both ways."""
    z_img, z_txt = _embed_eval(model, images, texts)
    return retrieval_from_embeddings(z_img, z_txt, sim, ks)


def linear_probe(
    model: Model,
    train_images: np.ndarray, train_labels: np.ndarray,
    eval_images: np.ndarray, eval_labels: np.ndarray,
    n_classes: int, steps: int = 60, lr: float = 0.1,
) -> float:
    """Softmax regression on the frozen representation h; returns accuracy."""
    h_train = model.image_repr(train_images.reshape(train_images.shape[0], -1))
    h_eval = model.image_repr(eval_images.reshape(eval_images.shape[0], -1))
    w = np.zeros((h_train.shape[1], n_classes))
    b = np.zeros(n_classes)
    store = ParamStore({"w": w, "b": b})
    onehot = np.eye(n_classes)[train_labels]
    for _ in range(steps):
        logits = h_train @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        d_logits = (p - onehot) / h_train.shape[0]
        adamw_step(store, {"w": h_train.T @ d_logits, "b": d_logits.sum(axis=0)}, lr=lr)
    pred = (h_eval @ w + b).argmax(axis=1)
    return float((pred == eval_labels).mean())


def auc_score(pos: np.ndarray, neg: np.ndarray) -> float:
    """Rank-based probability that a positive outscores a negative."""
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass
class DomainDensity:
    domain: int
    auc: float
    mean_pos: float
    mean_neg: float
    hist_pos: np.ndarray
    hist_neg: np.ndarray
    edges: np.ndarray


def similarity_density_stats(
    sm: ScoreMatrix, sets: PairIndexSets, bins: int = 40
) -> dict[int, DomainDensity]:
    """Cosine histograms and positive-vs-negative AUC split by domain.

    Key 0 pools all domains (the overall separation)."""
    edges = np.linspace(-1.0, 1.0, bins + 1)
    out = {}
    for d in (0, 1, 2, 3):
        dmask = (sm.domains == d) if d else np.ones_like(sm.domains, dtype=bool)
        pos = sm.cos[sets.pos_mask & dmask]
        neg = sm.cos[sets.neg_mask & dmask]
        out[d] = DomainDensity(
            domain=d,
            auc=auc_score(pos, neg),
            mean_pos=float(pos.mean()) if pos.size else float("nan"),
            mean_neg=float(neg.mean()) if neg.size else float("nan"),
            hist_pos=np.histogram(pos, bins=edges)[0],
            hist_neg=np.histogram(neg, bins=edges)[0],
            edges=edges,
        )
    return out


# -----------------------------------------------------------------------------
# Metrics and the training loop
# -----------------------------------------------------------------------------

METRIC_COLUMNS = (
    ["epoch", "loss", "r1_i2t", "r5_i2t", "r1_t2i", "r5_t2i", "probe_acc", "auc_all"]
    + [f"auc_d{d}" for d in (1, 2, 3)]
    + [f"pos_cos_d{d}" for d in (1, 2, 3)]
    + [f"neg_cos_d{d}" for d in (1, 2, 3)]
    + [f"tau_d{d}" for d in (1, 2, 3)]
    + [f"b_d{d}" for d in (1, 2, 3)]
)


@dataclass
class MetricsRecord:
    values: dict

    def row(self) -> list:
        return [self.values[c] for c in METRIC_COLUMNS]

    def __getitem__(self, key):
        return self.values[key]


@dataclass
class TrainResult:
    config: RunConfig
    history: list[MetricsRecord]
    model: Model
    sim: SimilarityParams
    dataset: SyntheticDataset

    @property
    def final(self) -> MetricsRecord:
        return self.history[-1]

    def summary(self) -> dict:
        keys = ("loss", "r1_i2t", "r5_i2t", "r1_t2i", "r5_t2i", "probe_acc",
                "auc_d1", "auc_d2", "auc_d3")
        out = {k: self.final[k] for k in keys}
        out["tau"] = [self.final[f"tau_d{d}"] for d in (1, 2, 3)]
        out["b"] = [self.final[f"b_d{d}"] for d in (1, 2, 3)]
        return out


def _epoch_metrics(
    cfg: RunConfig, model: Model, sim: SimilarityParams, dataset: SyntheticDataset,
    sets_eval: PairIndexSets, domains_eval: np.ndarray,
    epoch: int, mean_loss: float, seed: int,
) -> MetricsRecord:
    train_images, _, train_labels = dataset.stacked("train")
    eval_images, eval_texts, eval_labels = dataset.stacked("eval")
    vals = {"epoch": epoch, "loss": mean_loss}
    vals.update(eval_retrieval(model, sim, eval_images, eval_texts))
    vals["probe_acc"] = linear_probe(
        model, train_images, train_labels, eval_images, eval_labels,
        n_classes=cfg.world.n_classes, steps=cfg.eval.probe_steps, lr=cfg.eval.probe_lr,
    )

    # density batch: fixed by seed alone, so epochs of one run and runs
    # differing only in the trained parameters are compared on identical
    # pairs and instructions
    rng_eval = np.random.default_rng([seed, STREAM_EVAL])
    nd = min(cfg.eval.density_batch, eval_images.shape[0])
    pick = rng_eval.choice(eval_images.shape[0], size=nd, replace=False)
    batch = assemble_batch(
        eval_images[pick], eval_texts[pick], _policies(cfg), model, rng_eval,
        cfg.image_views, cfg.text_views, sample_indices=pick,
    )
    sm = score_matrix(batch.z, sim, domains_eval)
    density = similarity_density_stats(sm, sets_eval)
    vals["auc_all"] = density[0].auc
    for d in (1, 2, 3):
        vals[f"auc_d{d}"] = density[d].auc
        vals[f"pos_cos_d{d}"] = density[d].mean_pos
        vals[f"neg_cos_d{d}"] = density[d].mean_neg
    taus = sim.tau_by_domain()
    bs = sim.b_by_domain()
    for d in (1, 2, 3):
        vals[f"tau_d{d}"] = float(taus[d - 1])
        vals[f"b_d{d}"] = float(bs[d - 1])
    return MetricsRecord(values=vals)


def _policies(cfg: RunConfig):
    return (cfg.weak, cfg.strong)


def build_model(cfg: RunConfig, rng: np.random.Generator) -> Model:
    c, h, w = cfg.world.resolution
    enc = EncoderConfig(
        image_pixels=c * h * w,
        text_dim=cfg.world.text_dim,
        **{f: getattr(cfg.encoder, f) for f in (
            "repr_width", "aug_width", "embed_width", "image_hidden", "text_hidden",
            "text_repr_width", "aug_hidden", "head_blocks", "head_expansion", "aug_input",
        )},
    )
    return Model(enc, rng)


_DATASET_MEMO: dict = {}


def _dataset_for(cfg: RunConfig, seed: int) -> SyntheticDataset:
    """Per-process dataset cache; ablation cells sharing (world, seed) reuse it."""
    key = (cfg.world, seed)
    if key not in _DATASET_MEMO:
        if len(_DATASET_MEMO) > 8:
            _DATASET_MEMO.clear()
        _DATASET_MEMO[key] = generate_dataset(cfg.world, seed)
    return _DATASET_MEMO[key]


def train(cfg: RunConfig) -> TrainResult:
    """Run the full loop; deterministic given the config (incl. its seed)."""
    seed = cfg.seed
    dataset = _dataset_for(cfg, seed)
    model = build_model(cfg, np.random.default_rng([seed, STREAM_INIT]))
    sim = SimilarityParams.create(
        cfg.similarity.mode, cfg.similarity.init_tau, cfg.similarity.init_offset
    )
    store = ParamStore(model.params())
    # temperatures/offsets follow the same schedule, optionally rescaled
    store_sim = ParamStore(sim.params())
    sets = build_pair_sets(cfg.batch_size, cfg.image_views, cfg.text_views)
    domains = domain_matrix(cfg.batch_size, cfg.image_views, cfg.text_views)
    loss_fn = make_loss_fn(cfg, sets)

    nd = min(cfg.eval.density_batch, len(dataset.eval))
    sets_eval = build_pair_sets(nd, cfg.image_views, cfg.text_views)
    domains_eval = domain_matrix(nd, cfg.image_views, cfg.text_views)

    train_images, train_texts, _ = dataset.stacked("train")
    n_train = train_images.shape[0]
    steps_per_epoch = n_train // cfg.batch_size
    if steps_per_epoch < 1:
        raise ContractError("training split smaller than one batch")
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.optim.warmup_epochs * steps_per_epoch

    rng_data = np.random.default_rng([seed, STREAM_DATA])
    rng_aug = np.random.default_rng([seed, STREAM_AUG])

    history: list[MetricsRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng_data.permutation(n_train)
        losses = []
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            batch = assemble_batch(
                train_images[idx], train_texts[idx], _policies(cfg), model, rng_aug,
                cfg.image_views, cfg.text_views, sample_indices=idx,
            )
            sm = score_matrix(batch.z, sim, domains)
            report = loss_fn(sm)
            if not np.isfinite(report.loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {s}",
                    dump={
                        "epoch": epoch, "step": s, "sample_indices": idx,
                        "z": batch.z, "log_scores": sm.log_scores,
                        "log_tau": sim.log_tau.copy(), "offset": sim.offset.copy(),
                        "aug_vecs": batch.aug_vecs,
                    },
                )
            losses.append(report.loss)
            grads = backward_step(model, sim, sm, report, cfg.image_views, cfg.batch_size)
            lr = lr_at(step, total_steps, warmup_steps, cfg.optim.lr)
            kw = dict(betas=(cfg.optim.beta1, cfg.optim.beta2), eps=cfg.optim.eps)
            adamw_step(store, grads, lr=lr,
                       weight_decay=cfg.optim.weight_decay, **kw)
            adamw_step(store_sim, {k: grads[k] for k in store_sim.params},
                       lr=lr * cfg.optim.sim_lr_scale, weight_decay=0.0, **kw)
            step += 1
        history.append(
            _epoch_metrics(
                cfg, model, sim, dataset, sets_eval, domains_eval,
                epoch, float(np.mean(losses)), seed,
            )
        )
    return TrainResult(config=cfg, history=history, model=model, sim=sim, dataset=dataset)
