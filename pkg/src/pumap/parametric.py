"""Parametric UMAP: a dense encoder trained on the fuzzy cross-entropy.

Optional extras share the encoder trunk: a decoder (autoencoder hybrid), a
batch-wise Pearson distance-correlation term and a softmax classifier head
for semi-supervised training.
"""
import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_data, check_labels, check_random_state, derive_seeds
from .exceptions import CapabilityError, DataError, DimensionError, NumericError, ParameterError
from .fuzzy import FuzzyGraph, KernelParams, fit_kernel_params, fuzzy_simplicial_set
from .knn import exact_knn, nearest_neighbors
from .nn import AdamState, Network, adam_step, network_from_bytes, network_to_bytes

logger = logging.getLogger(__name__)

# squared distances get this offset so -log q stays differentiable at 0
DIST_EPS = 1e-10
# floor on 1 - q for negatives; below it the term is constant
REPULSION_FLOOR = 1e-4
PROB_FLOOR = 1e-12
TERMS = ("umap", "reconstruction", "global_correlation", "classifier")


@dataclass
class LossWeights:
    umap: float = 1.0
    reconstruction: float = 0.0
    global_correlation: float = 0.0
    classifier: float = 0.0

    def __post_init__(self):
        vals = self.as_dict()
        if any(v < 0 for v in vals.values()):
            raise ParameterError(f"loss weights must be >= 0, got {vals}")
        if not any(v > 0 for v in vals.values()):
            raise ParameterError("at least one loss weight must be positive")

    def as_dict(self):
        return {name: float(getattr(self, name)) for name in TERMS}


@dataclass
class ParametricSchedule:
    """Minibatch schedule. One epoch draws as many positive edges as the graph holds
    (both orientations)."""

    n_epochs: int = 20
    batch_size: int = 256
    negative_sample_rate: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    # linear decay of the Adam step size to 0 over training
    decay: bool = True

    def __post_init__(self):
        if self.n_epochs < 0 or self.batch_size < 1 or self.negative_sample_rate < 0:
            raise ParameterError("n_epochs >= 0, batch_size >= 1, negative_sample_rate >= 0 required")


@dataclass
class ParametricModel:
    encoder: Network
    kernel: KernelParams
    decoder: Network | None = None
    classifier: Network | None = None

    def __post_init__(self):
        d = self.encoder.output_dim
        if self.decoder is not None and self.decoder.input_dim != d:
            raise DimensionError(f"decoder expects {self.decoder.input_dim} inputs, encoder gives {d}")
        if self.classifier is not None:
            if self.classifier.input_dim != d:
                raise DimensionError(
                    f"classifier expects {self.classifier.input_dim} inputs, encoder gives {d}"
                )
            if self.classifier.layers[-1].activation != "softmax":
                raise ParameterError("classifier head must end in a softmax layer")

    @classmethod
    def build(
        cls,
        input_dim,
        n_components=2,
        hidden=(100, 100, 100),
        kernel=None,
        decoder=False,
        n_classes=None,
        classifier_hidden=(),
        seed=None,
    ):
        """MLP encoder, optional mirrored decoder and classifier head."""
        rng = check_random_state(seed)
        kernel = kernel or fit_kernel_params()
        enc = Network.mlp([input_dim, *hidden, n_components], rng=rng)
        dec = None
        if decoder:
            dec = Network.mlp([n_components, *reversed(hidden), input_dim], rng=rng)
        head = None
        if n_classes:
            head = Network.mlp(
                [n_components, *classifier_hidden, n_classes], output_activation="softmax", rng=rng
            )
        return cls(enc, kernel, dec, head)

    def networks(self):
        out = [("encoder", self.encoder)]
        if self.decoder is not None:
            out.append(("decoder", self.decoder))
        if self.classifier is not None:
            out.append(("classifier", self.classifier))
        return out

    def parameters(self, include_encoder=True):
        params = []
        for name, net in self.networks():
            if name == "encoder" and not include_encoder:
                continue
            params.extend(net.parameters())
        return params

    def copy(self):
        return ParametricModel(
            self.encoder.copy(),
            self.kernel,
            None if self.decoder is None else self.decoder.copy(),
            None if self.classifier is None else self.classifier.copy(),
        )


@dataclass
class EdgeBatch:
    """Encoder inputs and targets for one step.

    ``x_heads``/``x_tails`` are the endpoints of positive edges. ``x_pool``
    holds uniformly drawn rows and ``neg_index`` (B, R) pairs each head with
    R pool members as negatives. ``clean_heads`` are the un-augmented head
    rows (reconstruction target and data-space distances).
    """

    x_heads: np.ndarray
    x_tails: np.ndarray
    x_pool: np.ndarray
    neg_index: np.ndarray
    clean_heads: np.ndarray
    x_labeled: np.ndarray | None = None
    y_labeled: np.ndarray | None = None

    @property
    def batch_size(self):
        return self.x_heads.shape[0]


@dataclass
class TrainResult:
    model: ParametricModel
    loss_history: dict = field(default_factory=dict)


# -- individual loss terms --------------------------------------------------


def _log_q_terms(s, kernel):
    """``s`` is the offset squared distance. Returns (a s^b, d(a s^b)/ds)."""
    a, b = kernel.a, kernel.b
    asb = a * s**b
    return asb, b * asb / s


def umap_pair_loss(z_heads, z_tails, z_neg, kernel):
    """Mean binary cross-entropy over positive and negative pairs.

    Returns ``(loss, grad_heads, grad_tails, grad_neg)``. ``z_neg`` has shape
    ``(B, R, d)``; each negative is paired with its row's head.
    """
    n_pos = z_heads.shape[0]
    n_neg = z_neg.shape[0] * z_neg.shape[1]
    denom = n_pos + n_neg

    diff = z_heads - z_tails
    s = np.einsum("ij,ij->i", diff, diff) + DIST_EPS
    asb, dasb = _log_q_terms(s, kernel)
    pos_loss = np.log1p(asb).sum()
    g_pos = (dasb / (1.0 + asb))[:, None] * 2.0 * diff / denom

    ndiff = z_heads[:, None, :] - z_neg
    ns = np.einsum("ijk,ijk->ij", ndiff, ndiff) + DIST_EPS
    nasb, ndasb = _log_q_terms(ns, kernel)
    one_minus_q = nasb / (1.0 + nasb)
    live = one_minus_q > REPULSION_FLOOR
    neg_loss = np.where(live, -np.log(np.maximum(one_minus_q, REPULSION_FLOOR)), -np.log(REPULSION_FLOOR)).sum()
    # d/ds of -log(1 - q) = -b / (s (1 + a s^b))
    coeff = np.where(live, -kernel.b / (ns * (1.0 + nasb)), 0.0)
    g_neg_pair = coeff[:, :, None] * 2.0 * ndiff / denom

    grad_heads = g_pos + g_neg_pair.sum(axis=1)
    return (pos_loss + neg_loss) / denom, grad_heads, -g_pos, -g_neg_pair


def reconstruction_loss(recon, target):
    """Mean squared error and its gradient with respect to ``recon``."""
    diff = recon - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def _pairwise_dist(x, eps=0.0):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2 + eps)


def pearson_loss(d_x, d_z):
    """Negative Pearson correlation between two distance vectors.

    Returns ``(loss, grad_wrt_d_z, degenerate)``. A constant vector gives a
    zero loss and gradient with ``degenerate=True``.
    """
    d_x = np.asarray(d_x, dtype=np.float64).ravel()
    d_z = np.asarray(d_z, dtype=np.float64).ravel()
    if d_x.size != d_z.size:
        raise DimensionError("distance vectors differ in length")
    if d_x.size < 3:
        raise ParameterError("need at least 3 pairwise distances")
    u = d_x - d_x.mean()
    v = d_z - d_z.mean()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    scale_u = max(np.abs(d_x).max(), 1e-300)
    scale_v = max(np.abs(d_z).max(), 1e-300)
    if nu <= 1e-12 * scale_u * np.sqrt(u.size) or nv <= 1e-12 * scale_v * np.sqrt(v.size):
        return 0.0, np.zeros_like(d_z), True
    r = float(u @ v / (nu * nv))
    grad = -(u / (nu * nv) - r * v / nv**2)
    return -r, grad, False


def batch_pearson_loss(x_clean, z):
    """Correlation term over every pair of batch rows; returns (loss, dL/dz, degenerate)."""
    n = z.shape[0]
    iu = np.triu_indices(n, k=1)
    dx = _pairwise_dist(x_clean)[iu]
    dz_full = _pairwise_dist(z, DIST_EPS)
    loss, g, degenerate = pearson_loss(dx, dz_full[iu])
    if degenerate:
        return 0.0, np.zeros_like(z), True
    W = np.zeros((n, n))
    W[iu] = g / dz_full[iu]
    W = W + W.T
    grad_z = W.sum(axis=1)[:, None] * z - W @ z
    return loss, grad_z, False


def classifier_loss(probs, labels):
    """Softmax cross-entropy (mean) and its gradient with respect to the probabilities."""
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    safe = np.maximum(picked, PROB_FLOOR)
    grad = np.zeros_like(probs)
    grad[np.arange(n), labels] = np.where(picked > PROB_FLOOR, -1.0 / (n * safe), 0.0)
    return float(-np.log(safe).mean()), grad


# -- composite objective -----------------------------------------------------


def _split_grads(model, enc_grads, dec_grads, head_grads, train_encoder=True):
    grads = []
    for name, net in model.networks():
        if name == "encoder":
            if train_encoder:
                grads.extend(enc_grads)
        elif name == "decoder":
            grads.extend(dec_grads if dec_grads is not None else [np.zeros_like(p) for p in net.parameters()])
        else:
            grads.extend(head_grads if head_grads is not None else [np.zeros_like(p) for p in net.parameters()])
    return grads


def composite_loss(model, batch, weights, with_grads=True):
    """Weighted loss on one batch.

    Returns ``(total, terms, grads)`` with ``grads`` aligned to
    ``model.parameters()``; inactive terms are reported as 0.
    """
    B = batch.batch_size
    enc_in = np.concatenate([batch.x_heads, batch.x_tails, batch.x_pool])
    z_all, enc_cache = model.encoder.forward(enc_in)
    zh, zt, z_pool = z_all[:B], z_all[B : 2 * B], z_all[2 * B :]
    g_z = np.zeros_like(z_all)
    terms = dict.fromkeys(TERMS, 0.0)

    if weights.umap > 0:
        loss, gh, gt, gn = umap_pair_loss(zh, zt, z_pool[batch.neg_index], model.kernel)
        terms["umap"] = loss
        g_z[:B] += weights.umap * gh
        g_z[B : 2 * B] += weights.umap * gt
        g_pool = np.zeros_like(z_pool)
        np.add.at(g_pool, batch.neg_index.ravel(), gn.reshape(-1, gn.shape[-1]))
        g_z[2 * B :] += weights.umap * g_pool

    dec_grads = None
    if weights.reconstruction > 0:
        if model.decoder is None:
            raise CapabilityError("reconstruction weight > 0 needs a decoder")
        recon, dec_cache = model.decoder.forward(zh)
        loss, g_recon = reconstruction_loss(recon, batch.clean_heads)
        terms["reconstruction"] = loss
        dec_grads, g_zh = model.decoder.backward(dec_cache, weights.reconstruction * g_recon)
        g_z[:B] += g_zh

    if weights.global_correlation > 0:
        if B < 3:
            raise ParameterError("the correlation term needs batches of at least 3 rows")
        loss, g_zh, degenerate = batch_pearson_loss(batch.clean_heads, zh)
        if degenerate:
            logger.debug("degenerate batch for the correlation term")
        terms["global_correlation"] = loss
        g_z[:B] += weights.global_correlation * g_zh

    head_grads = None
    cls_enc_grads = None
    if weights.classifier > 0:
        if model.classifier is None:
            raise CapabilityError("classifier weight > 0 needs a classifier head")
        if batch.x_labeled is not None and len(batch.x_labeled):
            zl, lab_cache = model.encoder.forward(batch.x_labeled)
            probs, head_cache = model.classifier.forward(zl)
            loss, g_probs = classifier_loss(probs, batch.y_labeled)
            terms["classifier"] = loss
            head_grads, g_zl = model.classifier.backward(head_cache, weights.classifier * g_probs)
            if with_grads:
                cls_enc_grads, _ = model.encoder.backward(lab_cache, g_zl, input_grad=False)

    total = sum(getattr(weights, name) * terms[name] for name in TERMS)
    if not with_grads:
        return total, terms, None
    enc_grads, _ = model.encoder.backward(enc_cache, g_z, input_grad=False)
    if cls_enc_grads is not None:
        enc_grads = [g + h for g, h in zip(enc_grads, cls_enc_grads)]
    return total, terms, _split_grads(model, enc_grads, dec_grads, head_grads)


# -- batch sampling ----------------------------------------------------------


class _EdgeSampler:
    def __init__(self, graph, data, labels, schedule, rng, augment):
        self.data = data
        self.heads = np.concatenate([graph.heads, graph.tails])
        self.tails = np.concatenate([graph.tails, graph.heads])
        w = np.concatenate([graph.weights, graph.weights])
        self.cdf = np.cumsum(w / w.sum())
        self.cdf[-1] = 1.0
        self.schedule = schedule
        self.rng = rng
        self.augment = augment
        self.labeled = None if labels is None else np.flatnonzero(labels >= 0)
        self.labels = labels

    def _aug(self, x):
        return x if self.augment is None else np.asarray(self.augment(x, self.rng), dtype=np.float64)

    def draw(self, with_labels):
        B = self.schedule.batch_size
        R = self.schedule.negative_sample_rate
        pick = np.searchsorted(self.cdf, self.rng.random(B), side="right")
        h, t = self.heads[pick], self.tails[pick]
        pool = self.rng.integers(0, self.data.shape[0], size=B)
        neg_index = self.rng.integers(0, B, size=(B, R))
        clean = self.data[h]
        xl = yl = None
        if with_labels:
            lab = self.labeled[self.rng.integers(0, self.labeled.size, size=B)]
            xl, yl = self._aug(self.data[lab]), self.labels[lab]
        return EdgeBatch(
            self._aug(clean),
            self._aug(self.data[t]),
            self._aug(self.data[pool]),
            neg_index,
            clean,
            xl,
            yl,
        )


def _check_finite(total, terms, weights):
    if np.isfinite(total):
        return
    bad = [n for n in TERMS if getattr(weights, n) > 0 and not np.isfinite(terms[n])]
    raise NumericError(f"non-finite loss in term(s): {', '.join(bad) or 'total'}")


def train_parametric(graph, data, model, weights=None, schedule=None, labels=None, augment=None):
    """Minibatch Adam training of ``model`` on ``graph`` built over ``data``.

    ``labels`` uses -1 for unlabeled rows and is required when the classifier
    weight is positive. ``augment(x, rng)`` transforms encoder inputs only.
    The model is trained in place and also returned inside a :class:`TrainResult`.
    """
    weights = weights or LossWeights()
    schedule = schedule or ParametricSchedule()
    data = check_data(data)
    if graph.n_points != data.shape[0]:
        raise DimensionError(f"graph has {graph.n_points} points, data has {data.shape[0]} rows")
    if data.shape[1] != model.encoder.input_dim:
        raise DimensionError(f"encoder expects {model.encoder.input_dim} features, data has {data.shape[1]}")
    if graph.n_edges == 0 and weights.umap > 0:
        raise DataError("graph has no edges")
    if weights.classifier > 0:
        if labels is None:
            raise ParameterError("classifier weight > 0 requires labels")
        labels = check_labels(labels, data.shape[0])
        if model.classifier is None:
            raise CapabilityError("classifier weight > 0 needs a classifier head")
        n_classes = model.classifier.output_dim
        if labels.max() >= n_classes:
            raise ParameterError(f"label {labels.max()} out of range for {n_classes} classes")
        missing = np.setdiff1d(np.arange(n_classes), labels[labels >= 0])
        if missing.size:
            raise ParameterError(f"classes without any label: {missing.tolist()}")
    if weights.reconstruction > 0 and model.decoder is None:
        raise CapabilityError("reconstruction weight > 0 needs a decoder")

    rng = check_random_state(schedule.seed)
    sampler = _EdgeSampler(graph, data, labels, schedule, rng, augment)
    params = model.parameters()
    state = AdamState.for_params(params, learning_rate=schedule.learning_rate)
    n_oriented = max(2 * graph.n_edges, schedule.batch_size)
    per_epoch = int(np.ceil(n_oriented / schedule.batch_size))
    total_steps = per_epoch * schedule.n_epochs
    history = {name: [] for name in ("total", *TERMS)}
    step = 0
    for epoch in range(schedule.n_epochs):
        sums = dict.fromkeys(history, 0.0)
        for _ in range(per_epoch):
            batch = sampler.draw(weights.classifier > 0)
            total, terms, grads = composite_loss(model, batch, weights)
            _check_finite(total, terms, weights)
            lr = schedule.learning_rate * (1.0 - step / total_steps) if schedule.decay else None
            adam_step(params, grads, state, lr)
            for _, net in model.networks():
                net.mark_updated()
            step += 1
            sums["total"] += total
            for name in TERMS:
                sums[name] += terms[name]
        for name in history:
            history[name].append(sums[name] / per_epoch)
        logger.info("epoch %d/%d loss %.5f", epoch + 1, schedule.n_epochs, history["total"][-1])
    for _, net in model.networks():
        if not all(np.all(np.isfinite(p)) for p in net.parameters()):
            raise NumericError("network parameters became non-finite")
    return TrainResult(model, {k: np.asarray(v) for k, v in history.items()})


def semi_supervised_train(graph, data, labels, model, weights=None, schedule=None, augment=None):
    """:func:`train_parametric` with a positive classifier weight (default 1)."""
    weights = weights or LossWeights(umap=1.0, classifier=1.0)
    if weights.classifier <= 0:
        raise ParameterError("semi-supervised training needs a positive classifier weight")
    return train_parametric(graph, data, model, weights, schedule, labels, augment)


# -- inference ---------------------------------------------------------------


def transform(model, data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.encoder.input_dim:
        raise DimensionError(f"expected (n, {model.encoder.input_dim}) input, got {data.shape}")
    return model.encoder.predict(data)


def inverse_transform(model, coords):
    if model.decoder is None:
        raise CapabilityError("model has no decoder")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != model.decoder.input_dim:
        raise DimensionError(f"expected (n, {model.decoder.input_dim}) embedding rows, got {coords.shape}")
    return model.decoder.predict(coords)


def predict_proba(model, data):
    if model.classifier is None:
        raise CapabilityError("model has no classifier head")
    return model.classifier.predict(transform(model, data))


def _regression_fit(net, inputs, targets, schedule, params=None):
    """Adam on mean squared error of ``net(inputs)`` against ``targets``."""
    rng = check_random_state(schedule.seed)
    params = net.parameters() if params is None else params
    state = AdamState.for_params(params, learning_rate=schedule.learning_rate)
    n = inputs.shape[0]
    per_epoch = int(np.ceil(n / schedule.batch_size))
    total_steps = max(per_epoch * schedule.n_epochs, 1)
    history = []
    step = 0
    for _ in range(schedule.n_epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            out, cache = net.forward(inputs[idx])
            loss, g = reconstruction_loss(out, targets[idx])
            if not np.isfinite(loss):
                raise NumericError("non-finite regression loss")
            grads, _ = net.backward(cache, g, input_grad=False)
            lr = schedule.learning_rate * (1.0 - step / total_steps) if schedule.decay else None
            adam_step(params, grads, state, lr)
            net.mark_updated()
            step += 1
            acc += loss * len(idx)
        history.append(acc / n)
    return np.asarray(history)


def fit_posthoc_decoder(model, data, hidden=(100, 100, 100), schedule=None, seed=None):
    """Train a fresh decoder on the frozen encoder's embeddings."""
    data = check_data(data)
    schedule = schedule or ParametricSchedule(n_epochs=50)
    z = transform(model, data)
    dec = Network.mlp([z.shape[1], *hidden, data.shape[1]], rng=check_random_state(seed))
    history = _regression_fit(dec, z, data, schedule)
    out = ParametricModel(model.encoder, model.kernel, dec, model.classifier)
    return TrainResult(out, {"reconstruction": history})


def indirect_mse_fit(embedding, data, hidden=(100, 100, 100), schedule=None, kernel=None, seed=None):
    """Baseline: regress an encoder onto fixed (non-parametric) embedding coordinates."""
    data = check_data(data)
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 2 or embedding.shape[0] != data.shape[0]:
        raise DimensionError("embedding rows must align with data rows")
    schedule = schedule or ParametricSchedule(n_epochs=50)
    enc = Network.mlp([data.shape[1], *hidden, embedding.shape[1]], rng=check_random_state(seed))
    history = _regression_fit(enc, data, embedding, schedule)
    model = ParametricModel(enc, kernel or fit_kernel_params())
    return TrainResult(model, {"mse": history})


def latent_arithmetic(model_or_coords, data, features, ridge=1e-8):
    """Per-feature OLS direction vectors in embedding space.

    ``features`` is an ``(n, F)`` annotation matrix. Returns
    ``(coefficients (F, d), intercept (d,))``; adding ``coefficients[f]`` to an
    embedding moves it along feature ``f``.
    """
    if isinstance(model_or_coords, ParametricModel):
        z = transform(model_or_coords, data)
    else:
        z = np.asarray(model_or_coords, dtype=np.float64)
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != z.shape[0]:
        raise DimensionError("annotations must align with rows")
    A = np.column_stack([np.ones(F.shape[0]), F])
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        warnings.warn("annotation matrix is rank deficient; using the least-norm solution", RuntimeWarning)
        # centre so the least-norm solution leaves constant columns at zero
        coef_f, *_ = np.linalg.lstsq(F - F.mean(axis=0), z - z.mean(axis=0), rcond=None)
        intercept = z.mean(axis=0) - F.mean(axis=0) @ coef_f
        return coef_f, intercept
    gram = A.T @ A + ridge * np.eye(A.shape[1])
    beta = np.linalg.solve(gram, A.T @ z)
    return beta[1:], beta[0]


def penultimate_activations(model, data):
    """Classifier-head input to its final layer (the embedding for a one-layer head)."""
    if model.classifier is None:
        raise CapabilityError("model has no classifier head")
    h = transform(model, data)
    for layer in model.classifier.layers[:-1]:
        h = Network([layer]).predict(h)
    return h


def learned_metric_graph(model, data, k=15, method="exact", seed=0):
    """Fuzzy graph over the classifier's penultimate activations."""
    acts = penultimate_activations(model, data)
    graph = exact_knn(acts, k) if method == "exact" else nearest_neighbors(acts, k, seed=seed, method=method)
    return fuzzy_simplicial_set(graph)[0]


def graph_hash(graph):
    h = hashlib.sha256()
    h.update(np.int64(graph.n_points).tobytes())
    for arr in (graph.heads, graph.tails, graph.weights):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_model(model, path, weights=None, graph=None, extra=None):
    """Write ``<path>`` (concatenated PUMAP1 networks) and ``<path>.json``."""
    path = Path(path)
    blob = b"".join(network_to_bytes(net) for _, net in model.networks())
    path.write_bytes(blob)
    meta = {
        "networks": [name for name, _ in model.networks()],
        "kernel": asdict(model.kernel),
        "loss_weights": (weights or LossWeights()).as_dict(),
        "graph_hash": None if graph is None else graph_hash(graph),
        "data_dim": model.encoder.input_dim,
        "n_components": model.encoder.output_dim,
    }
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, metadata)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: model file not found")
    side = sidecar_path(path)
    if not side.exists():
        raise DataError(f"{side}: sidecar not found")
    meta = json.loads(side.read_text())
    blob = path.read_bytes()
    nets, offset = {}, 0
    for name in meta["networks"]:
        nets[name], offset = network_from_bytes(blob, offset)
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    model = ParametricModel(
        nets["encoder"], KernelParams(**meta["kernel"]), nets.get("decoder"), nets.get("classifier")
    )
    if model.encoder.input_dim != meta["data_dim"]:
        raise DataError("sidecar data_dim does not match the encoder")
    return model, meta


# -- estimator ---------------------------------------------------------------


class ParametricUMAP(TransformerMixin, BaseEstimator):
    """Encoder network trained on the UMAP objective.

    Parameters
    ----------
    n_neighbors, n_components, min_dist, spread
        As for :class:`pumap.UMAP`.
    hidden_layers : tuple of int, default=(100, 100, 100)
        Encoder widths; the decoder mirrors them.
    decoder : bool, default=False
        Train a decoder jointly (autoencoder hybrid).
    weight_umap, weight_reconstruction, weight_global, weight_classifier : float
        ``weight_reconstruction=None`` means 1.0 with a decoder and 0 without.
        A positive classifier weight adds a softmax head fed by ``y``.
    classifier_hidden : tuple of int, default=(100,)
    n_epochs, batch_size, negative_sample_rate, learning_rate
        Minibatch schedule (see :class:`ParametricSchedule`).
    augment : callable or None
        ``augment(x, rng) -> x'`` applied to encoder inputs only.
    knn_method : {"auto", "exact", "nn_descent"}
    random_state : int or None
    """

    def __init__(
        self,
        n_neighbors=15,
        n_components=2,
        min_dist=0.1,
        spread=1.0,
        hidden_layers=(100, 100, 100),
        decoder=False,
        weight_umap=1.0,
        weight_reconstruction=None,
        weight_global=0.0,
        weight_classifier=0.0,
        classifier_hidden=(100,),
        n_epochs=20,
        batch_size=256,
        negative_sample_rate=5,
        learning_rate=1e-2,
        augment=None,
        knn_method="auto",
        random_state=None,
    ):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.min_dist = min_dist
        self.spread = spread
        self.hidden_layers = hidden_layers
        self.decoder = decoder
        self.weight_umap = weight_umap
        self.weight_reconstruction = weight_reconstruction
        self.weight_global = weight_global
        self.weight_classifier = weight_classifier
        self.classifier_hidden = classifier_hidden
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.negative_sample_rate = negative_sample_rate
        self.learning_rate = learning_rate
        self.augment = augment
        self.knn_method = knn_method
        self.random_state = random_state

    def _loss_weights(self):
        recon = self.weight_reconstruction
        if recon is None:
            recon = 1.0 if self.decoder else 0.0
        return LossWeights(self.weight_umap, recon, self.weight_global, self.weight_classifier)

    def fit(self, X, y=None, graph=None):
        """Fit on ``X``; ``y`` (with -1 for unlabeled rows) feeds the classifier head.

        A precomputed :class:`FuzzyGraph` may be passed as ``graph``.
        """
        X = check_data(X)
        n = X.shape[0]
        if self.n_neighbors < 2 or self.n_neighbors >= n:
            raise ParameterError(f"n_neighbors must lie in [2, {n})")
        weights = self._loss_weights()
        seeds = derive_seeds(self.random_state, 3)
        n_classes = None
        if weights.classifier > 0:
            if y is None:
                raise ParameterError("weight_classifier > 0 requires y")
            y = check_labels(y, n)
            n_classes = int(y.max()) + 1
        if graph is None:
            knn = nearest_neighbors(X, self.n_neighbors, seed=seeds[0], method=self.knn_method)
            graph, _ = fuzzy_simplicial_set(knn)
        elif not isinstance(graph, FuzzyGraph) or graph.n_points != n:
            raise DimensionError("graph must be a FuzzyGraph over the rows of X")
        self.graph_ = graph
        kernel = fit_kernel_params(self.min_dist, self.spread)
        model = ParametricModel.build(
            X.shape[1],
            self.n_components,
            tuple(self.hidden_layers),
            kernel,
            decoder=self.decoder,
            n_classes=n_classes,
            classifier_hidden=tuple(self.classifier_hidden),
            seed=seeds[1],
        )
        schedule = ParametricSchedule(
            self.n_epochs, self.batch_size, self.negative_sample_rate, self.learning_rate, seeds[2]
        )
        result = train_parametric(graph, X, model, weights, schedule, y, self.augment)
        self.model_ = result.model
        self.loss_history_ = result.loss_history
        self.kernel_ = kernel
        self.loss_weights_ = weights
        self.n_features_in_ = X.shape[1]
        self.embedding_ = transform(self.model_, X)
        if n_classes:
            self.classes_ = np.arange(n_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise CapabilityError("estimator is not fitted")

    def transform(self, X):
        self._check_fitted()
        return transform(self.model_, check_data(X))

    def inverse_transform(self, Z):
        self._check_fitted()
        return inverse_transform(self.model_, check_data(Z))

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.model_, check_data(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path):
        self._check_fitted()
        save_model(self.model_, path, self.loss_weights_, self.graph_)
