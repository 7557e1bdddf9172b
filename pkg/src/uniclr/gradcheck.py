"""Finite-difference certification of every analytic gradient in the package.

Each check compares a hand-derived backward pass against the central
difference oracle on randomized instances and reports the worst relative
error. The suite runs in seconds and backs the `grad-check` CLI subcommand.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .augment import apply_batch
from .config import RunConfig, EncoderSizes, EvalConfig
from .losses import (
    build_pair_sets, domain_weights, infonce_loss, milnce_loss, mpnce_loss, supcon_loss,
)
from .numeric import (
    Linear, LayerNorm, ResidualBlock, finite_difference_gradient, flatten_params,
    gelu, gelu_grad, relative_error, set_flat_params,
)
from .similarity import (
    ScoreMatrix, SimilarityParams, domain_matrix, score_matrix, score_matrix_backward,
)
from .training import assemble_batch, backward_step, build_model, make_loss_fn
from .world import WorldConfig, generate_dataset


@dataclass
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.passed == self.total


LOSS_VARIANTS = {
    "infonce": dict(kind="infonce"),
    "milnce": dict(kind="milnce"),
    "supcon": dict(kind="supcon"),
    "mpnce_plain": dict(kind="mpnce", trivial=False, weights=False),
    "mpnce_trivial": dict(kind="mpnce", trivial=True, weights=False),
    "mpnce_full": dict(kind="mpnce", trivial=True, weights=True),
    "mpnce_separated": dict(kind="mpnce", trivial=True, weights=True, separated=True),
}


def loss_variant_fn(name: str, sets, weights=None):
    spec = LOSS_VARIANTS[name]
    kind = spec["kind"]
    if kind == "infonce":
        return lambda sm: infonce_loss(sm, sets)
    if kind == "milnce":
        return lambda sm: milnce_loss(sm, sets)
    if kind == "supcon":
        return lambda sm: supcon_loss(sm, sets)
    return lambda sm: mpnce_loss(
        sm, sets,
        weights=weights if spec.get("weights") else None,
        include_trivial=spec.get("trivial", True),
        separated=spec.get("separated", False),
    )


def _instance_shape(name: str):
    # infonce needs a single positive per row, i.e. one image and one text view
    if name == "infonce":
        return 3, 1, 1
    return 2, 3, 1


def check_loss_vs_scores(name: str, trials: int, rng, tol: float = 1e-5) -> CheckResult:
    """Gradient w.r.t. the log-score matrix against the oracle."""
    n, v, t = _instance_shape(name)
    sets = build_pair_sets(n, v, t)
    weights = domain_weights(v, t)
    domains = domain_matrix(n, v, t)
    fn = loss_variant_fn(name, sets, weights)
    m = sets.total
    passed, worst = 0, 0.0
    for _ in range(trials):
        ls = rng.normal(scale=2.0, size=(m, m))
        ls = (ls + ls.T) / 2.0

        def f(flat):
            sm = ScoreMatrix.from_log_scores(flat.reshape(m, m), domains)
            return fn(sm).loss

        sm = ScoreMatrix.from_log_scores(ls, domains)
        analytic = fn(sm).grad_log_scores.ravel()
        numeric = finite_difference_gradient(f, ls.ravel())
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        passed += err <= tol
    return CheckResult(f"loss/{name}/scores", passed, trials, worst, tol)


def check_loss_vs_embeddings(name: str, trials: int, rng, tol: float = 1e-4) -> CheckResult:
    """Gradient through cosine, temperature, and offset against the oracle."""
    n, v, t = _instance_shape(name)
    sets = build_pair_sets(n, v, t)
    weights = domain_weights(v, t)
    domains = domain_matrix(n, v, t)
    fn = loss_variant_fn(name, sets, weights)
    m, dim = sets.total, 5
    passed, worst = 0, 0.0
    for _ in range(trials):
        z = rng.normal(size=(m, dim))
        sim = SimilarityParams(
            mode="domain",
            log_tau=np.log(rng.uniform(0.2, 1.0, size=3)),
            offset=rng.uniform(-0.3, 0.3, size=3),
        )
        point = np.concatenate([z.ravel(), sim.log_tau, sim.offset])

        def f(flat):
            zz = flat[: m * dim].reshape(m, dim)
            s = SimilarityParams(
                mode="domain",
                log_tau=flat[m * dim : m * dim + 3].copy(),
                offset=flat[m * dim + 3 :].copy(),
            )
            return fn(score_matrix(zz, s, domains)).loss

        sm = score_matrix(z, sim, domains)
        report = fn(sm)
        d_z, d_lt, d_off = score_matrix_backward(sm, report.grad_log_scores)
        analytic = np.concatenate([d_z.ravel(), d_lt, d_off])
        numeric = finite_difference_gradient(f, point)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        passed += err <= tol
    return CheckResult(f"loss/{name}/embeddings", passed, trials, worst, tol)


def _check_module(module, x, d_out_fn):
    """Worst gradient error of one layer (parameters and input) vs the oracle."""
    probe = d_out_fn()
    params = module.params()

    def f(flat):
        set_flat_params(params, flat)
        return float((module.forward(x) * probe).sum())

    point = flatten_params(params).copy()
    module.zero_grads()
    out = module.forward(x)
    d_x = module.backward(probe)
    analytic_p = flatten_params(module.grads())
    numeric_p = finite_difference_gradient(f, point)
    set_flat_params(params, point)
    err_p = relative_error(analytic_p, numeric_p)

    def fx(flat):
        return float((module.forward(flat.reshape(x.shape)) * probe).sum())

    numeric_x = finite_difference_gradient(fx, x.ravel())
    err_x = relative_error(d_x.ravel(), numeric_x)
    return max(err_p, err_x)


def check_layers(trials: int, rng, tol: float = 1e-5) -> list[CheckResult]:
    """Linear, GELU, layer norm, and residual block backward passes."""
    results = []

    passed, worst = 0, 0.0
    for _ in range(trials):
        lin = Linear("lin", 4, 3, rng)
        x = rng.normal(size=(5, 4))
        err = _check_module(lin, x, lambda: rng.normal(size=(5, 3)))
        worst = max(worst, err)
        passed += err <= tol
    results.append(CheckResult("layer/linear", passed, trials, worst, tol))

    passed, worst = 0, 0.0
    for _ in range(trials):
        x = rng.normal(scale=3.0, size=64)
        numeric = finite_difference_gradient(lambda v: float(gelu(v).sum()), x)
        err = relative_error(gelu_grad(x), numeric)
        worst = max(worst, err)
        passed += err <= tol
    results.append(CheckResult("layer/gelu", passed, trials, worst, tol))

    passed, worst = 0, 0.0
    for _ in range(trials):
        ln = LayerNorm("ln", 6)
        ln.g[...] = rng.normal(scale=0.5, size=6) + 1.0
        ln.b[...] = rng.normal(scale=0.5, size=6)
        x = rng.normal(size=(4, 6))
        err = _check_module(ln, x, lambda: rng.normal(size=(4, 6)))
        worst = max(worst, err)
        passed += err <= tol
    results.append(CheckResult("layer/layernorm", passed, trials, worst, tol))

    passed, worst = 0, 0.0
    for _ in range(trials):
        blk = ResidualBlock("blk", 5, rng, expansion=2)
        x = rng.normal(size=(3, 5))
        err = _check_module(blk, x, lambda: rng.normal(size=(3, 5)))
        worst = max(worst, err)
        passed += err <= tol
    results.append(CheckResult("layer/residual_block", passed, trials, worst, tol))

    return results


def tiny_config(seed: int = 0) -> RunConfig:
    """A config small enough for whole-model finite differences."""
    return RunConfig(
        seed=seed,
        epochs=1,
        batch_size=2,
        world=WorldConfig(n_pairs=12, n_classes=2, latent_dim=3, n_hues=2,
                          resolution=(3, 8, 8), eval_fraction=0.25),
        encoder=EncoderSizes(
            repr_width=6, aug_width=4, embed_width=5, image_hidden=7,
            text_hidden=6, text_repr_width=5, aug_hidden=5,
            head_blocks=1, head_expansion=2,
        ),
        eval=EvalConfig(probe_steps=5, density_batch=2),
    )


def check_end_to_end(rng, tol: float = 1e-4, aug_input: str = "head") -> CheckResult:
    """Full-pipeline gradient: images through encoders, scores, and the loss."""
    cfg = tiny_config()
    cfg = dataclasses.replace(cfg, encoder=dataclasses.replace(cfg.encoder, aug_input=aug_input))
    dataset = generate_dataset(cfg.world, seed=0)
    model = build_model(cfg, rng)
    sim = SimilarityParams.create("domain", init_tau=0.3)
    sets = build_pair_sets(cfg.batch_size, cfg.image_views, cfg.text_views)
    domains = domain_matrix(cfg.batch_size, cfg.image_views, cfg.text_views)
    loss_fn = make_loss_fn(cfg, sets)
    images, texts, _ = dataset.stacked("train")
    batch = assemble_batch(
        images[: cfg.batch_size], texts[: cfg.batch_size], (cfg.weak, cfg.strong),
        model, np.random.default_rng(7), cfg.image_views, cfg.text_views,
    )
    flat_pixels = np.tile(images[: cfg.batch_size], (cfg.image_views, 1, 1, 1))
    flat_instr = [batch.instructions[k][m]
                  for m in range(cfg.image_views) for k in range(cfg.batch_size)]
    aug_pixels = apply_batch(flat_pixels, flat_instr).reshape(cfg.image_views * cfg.batch_size, -1)
    text_feats = texts[: cfg.batch_size]

    trainables = {**model.params(), **sim.params()}

    def forward() -> float:
        z_img = model.embed_images(aug_pixels, batch.aug_vecs)
        z_txt = model.embed_texts(text_feats)
        z = np.concatenate([z_img, z_txt])
        return loss_fn(score_matrix(z, sim, domains)).loss

    def f(flat):
        set_flat_params(trainables, flat)
        return forward()

    point = flatten_params(trainables).copy()
    z_img = model.embed_images(aug_pixels, batch.aug_vecs)
    z_txt = model.embed_texts(text_feats)
    z = np.concatenate([z_img, z_txt])
    sm = score_matrix(z, sim, domains)
    report = loss_fn(sm)
    grads = backward_step(model, sim, sm, report, cfg.image_views, cfg.batch_size)
    analytic = flatten_params({k: grads[k] for k in trainables})
    numeric = finite_difference_gradient(f, point)
    set_flat_params(trainables, point)
    err = relative_error(analytic, numeric)
    return CheckResult(f"end_to_end/{aug_input}", int(err <= tol), 1, err, tol)


def run_suite(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    """The full oracle suite; `trials` counts randomized instances per check."""
    rng = np.random.default_rng(seed)
    results = check_layers(max(10, trials // 5), rng)
    for name in LOSS_VARIANTS:
        results.append(check_loss_vs_scores(name, max(3, trials // 5), rng))
        results.append(check_loss_vs_embeddings(name, trials, rng))
    for mode in ("head", "none", "encoder"):
        results.append(check_end_to_end(rng, aug_input=mode))
    return results
