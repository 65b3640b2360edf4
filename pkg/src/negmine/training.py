"""Contrastive finetuning over a trainable dual encoder.

The similarity of a text/image embedding pair is exp(cosine / tau) with a
learnable temperature tau; the loss is the symmetric (row- plus column-wise)
cross entropy over an N x N similarity matrix, implemented as the negation of
a sum of log-probabilities so it is a minimization target. Gradients are
analytic; a finite-difference oracle pins them down in the test suite.

Batches mix floor(r*N) generated pairs with N - floor(r*N) real pairs, drawn
without replacement per pool within an epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Embedding, TrainConfig
from .seeding import image_digest, rng_from, unit_vector

log = logging.getLogger(__name__)

PROVENANCE_GENERATED = "generated"
PROVENANCE_REAL = "real"


# ---------------------------------------------------------------------------
# similarity and loss

def _as_matrix(embeddings) -> np.ndarray:
    rows = [e.vector if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
            for e in embeddings]
    return np.asarray(rows, dtype=np.float64)


def similarity(e_text, e_image, tau: float) -> float:
    """exp(cosine(e_text, e_image) / tau)."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    t = e_text.vector if isinstance(e_text, Embedding) else np.asarray(e_text, float)
    v = e_image.vector if isinstance(e_image, Embedding) else np.asarray(e_image, float)
    nt, nv = np.linalg.norm(t), np.linalg.norm(v)
    if nt == 0.0 or nv == 0.0:
        raise ValueError("similarity is undefined for zero-norm embeddings")
    return float(np.exp(float(t @ v) / (nt * nv * tau)))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """entries[i, j] = exp(cos(text_i, image_j) / tau)."""

    entries: np.ndarray
    tau: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)) or np.any(entries <= 0):
            raise ValueError("similarity entries must be finite and positive")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _normalized_rows(embeddings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding")
    return embeddings / norms[:, None], norms


def similarity_matrix(embeddings_text, embeddings_image, tau: float) -> SimilarityMatrix:
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    texts = _as_matrix(embeddings_text)
    images = _as_matrix(embeddings_image)
    if texts.shape != images.shape:
        raise ValueError(
            f"embedding shapes differ: {texts.shape} vs {images.shape}")
    that, _ = _normalized_rows(texts)
    vhat, _ = _normalized_rows(images)
    cosines = that @ vhat.T
    return SimilarityMatrix(entries=np.exp(cosines / tau), tau=tau)


def contrastive_loss(sim: SimilarityMatrix) -> float:
    """-sum_i [log(S_ii / row_sum_i) + log(S_ii / col_sum_i)]; >= 0, and 0 at N=1."""
    entries = sim.entries if isinstance(sim, SimilarityMatrix) else \
        SimilarityMatrix(entries=np.asarray(sim, dtype=np.float64), tau=1.0).entries
    diag = np.diag(entries)
    row_terms = np.log(diag / entries.sum(axis=1))
    col_terms = np.log(diag / entries.sum(axis=0))
    return float(-(row_terms.sum() + col_terms.sum())) + 0.0


@dataclass(frozen=True)
class LossGradients:
    loss: float
    grad_text: np.ndarray   # (N, d) gradient w.r.t. text embeddings
    grad_image: np.ndarray  # (N, d) gradient w.r.t. image embeddings
    grad_tau: float


def loss_gradient(embeddings_text, embeddings_image, tau: float) -> LossGradients:
    """Analytic gradient of contrastive_loss(similarity_matrix(...)).

    Works in logit space z = cosine / tau for stability; the cosine pulls in
    the usual normalization term, so the gradient of each embedding is
    orthogonal to the embedding itself (scale invariance).
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    texts = _as_matrix(embeddings_text)
    images = _as_matrix(embeddings_image)
    if texts.shape != images.shape:
        raise ValueError(f"embedding shapes differ: {texts.shape} vs {images.shape}")
    that, text_norms = _normalized_rows(texts)
    vhat, image_norms = _normalized_rows(images)
    cosines = that @ vhat.T
    z = cosines / tau

    def _log_softmax(logits, axis):
        shifted = logits - logits.max(axis=axis, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    log_p = _log_softmax(z, axis=1)   # text -> images
    log_q = _log_softmax(z, axis=0)   # image -> texts
    n = z.shape[0]
    loss = float(-(np.diag(log_p).sum() + np.diag(log_q).sum()))

    # dL/dz = P + Q - 2I
    g = np.exp(log_p) + np.exp(log_q) - 2.0 * np.eye(n)
    d_cos = g / tau
    # project out the radial component per embedding
    row_weights = (d_cos * cosines).sum(axis=1)
    col_weights = (d_cos * cosines).sum(axis=0)
    grad_text = (d_cos @ vhat - row_weights[:, None] * that) / text_norms[:, None]
    grad_image = (d_cos.T @ that - col_weights[:, None] * vhat) / image_norms[:, None]
    grad_tau = float(-(g * cosines).sum() / (tau * tau))
    return LossGradients(loss=loss, grad_text=grad_text, grad_image=grad_image,
                         grad_tau=grad_tau)


# ---------------------------------------------------------------------------
# batch mixing

@dataclass(frozen=True)
class Batch:
    texts: tuple
    images: tuple
    provenance: tuple

    def __post_init__(self):
        if not (len(self.texts) == len(self.images) == len(self.provenance)):
            raise ValueError("texts, images, and provenance must have equal length")
        bad = set(self.provenance) - {PROVENANCE_GENERATED, PROVENANCE_REAL}
        if bad:
            raise ValueError(f"unknown provenance values: {sorted(bad)}")

    def __len__(self):
        return len(self.texts)

    @property
    def generated_count(self) -> int:
        return sum(1 for p in self.provenance if p == PROVENANCE_GENERATED)


class MixedBatchSampler:
    """Emits batches of floor(r*N) generated + (N - floor(r*N)) real pairs.

    Pools hold (text, image) tuples. Each pool is shuffled per epoch by seed
    and dealt without replacement; a pool smaller than its per-epoch demand
    wraps with a reshuffle (logged once per epoch).
    """

    def __init__(self, generated_pool: Sequence, real_pool: Sequence,
                 batch_size: int, mix_ratio: float, seed: int = 0):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if not 0.0 <= mix_ratio <= 1.0:
            raise ValueError(f"mix_ratio must be in [0, 1], got {mix_ratio}")
        self.generated_pool = list(generated_pool)
        self.real_pool = list(real_pool)
        self.batch_size = batch_size
        self.mix_ratio = mix_ratio
        self.seed = seed
        self.generated_per_batch = math.floor(mix_ratio * batch_size)
        self.real_per_batch = batch_size - self.generated_per_batch
        if self.generated_per_batch > 0 and not self.generated_pool:
            raise ValueError("generated pool is empty but its batch share is > 0")
        if self.real_per_batch > 0 and not self.real_pool:
            raise ValueError("real pool is empty but its batch share is > 0")

    @property
    def batches_per_epoch(self) -> int:
        demands = []
        if self.generated_per_batch > 0:
            demands.append(math.ceil(len(self.generated_pool) / self.generated_per_batch))
        if self.real_per_batch > 0:
            demands.append(math.ceil(len(self.real_pool) / self.real_per_batch))
        return max(demands) if demands else 1

    def _epoch_order(self, pool: list, name: str, epoch: int, total_needed: int) -> list:
        rng = rng_from("sampler", self.seed, name, epoch)
        order = list(rng.permutation(len(pool)))
        wrapped = False
        while len(order) < total_needed:
            wrapped = True
            order.extend(rng.permutation(len(pool)))
        if wrapped:
            log.info("pool %r (size %d) smaller than epoch demand %d; "
                     "wrapping with reshuffle", name, len(pool), total_needed)
        return order[:total_needed]

    def batches_for_epoch(self, epoch: int) -> List[Batch]:
        count = self.batches_per_epoch
        gen_order = self._epoch_order(self.generated_pool, "generated", epoch,
                                      count * self.generated_per_batch)
        real_order = self._epoch_order(self.real_pool, "real", epoch,
                                       count * self.real_per_batch)
        batches = []
        for b in range(count):
            gen_slice = gen_order[b * self.generated_per_batch:
                                  (b + 1) * self.generated_per_batch]
            real_slice = real_order[b * self.real_per_batch:
                                    (b + 1) * self.real_per_batch]
            items = [(self.generated_pool[i], PROVENANCE_GENERATED) for i in gen_slice]
            items += [(self.real_pool[i], PROVENANCE_REAL) for i in real_slice]
            batches.append(Batch(
                texts=tuple(pair[0] for pair, _ in items),
                images=tuple(pair[1] for pair, _ in items),
                provenance=tuple(p for _, p in items),
            ))
        return batches


# ---------------------------------------------------------------------------
# trainable dual encoder

def text_hash_features(text: str, feature_dim: int) -> np.ndarray:
    return unit_vector(feature_dim, "text-feat", text)


def image_hash_features(image: np.ndarray, feature_dim: int) -> np.ndarray:
    return unit_vector(feature_dim, "image-feat", image_digest(image))


class LinearDualEncoder:
    """Linear projections over fixed featurizers; the desk-scale stand-in for
    a finetunable dual-encoder VLM. tau is learned through its logarithm so it
    stays positive without clamping."""

    def __init__(self, feature_dim: int, embedding_dim: int, seed: int = 0,
                 init_tau: float = 0.07,
                 image_augment: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        if init_tau <= 0:
            raise ValueError(f"init_tau must be > 0, got {init_tau}")
        self.feature_dim = feature_dim
        self.embedding_dim = embedding_dim
        self.image_augment = image_augment  # identity when None
        rng = rng_from("dual-encoder-init", seed)
        scale = 1.0 / math.sqrt(feature_dim)
        self.params: Dict[str, np.ndarray] = {
            "w_text": rng.normal(0.0, scale, size=(embedding_dim, feature_dim)),
            "w_image": rng.normal(0.0, scale, size=(embedding_dim, feature_dim)),
            "log_tau": np.array(math.log(init_tau)),
        }

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["log_tau"]))

    def _features(self, item, kind: str) -> np.ndarray:
        if isinstance(item, np.ndarray) and item.ndim == 1:
            if item.shape[0] != self.feature_dim:
                raise ValueError(
                    f"feature vector has dim {item.shape[0]}, expected "
                    f"{self.feature_dim}")
            return np.asarray(item, dtype=np.float64)
        if kind == "text":
            return text_hash_features(str(item), self.feature_dim)
        image = np.asarray(item)
        if self.image_augment is not None:
            image = self.image_augment(image)
        return image_hash_features(image, self.feature_dim)

    def encode(self, texts: Sequence, images: Sequence):
        x_text = np.stack([self._features(t, "text") for t in texts])
        x_image = np.stack([self._features(i, "image") for i in images])
        return (x_text, x_text @ self.params["w_text"].T,
                x_image, x_image @ self.params["w_image"].T)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        self.params = {k: v.copy() for k, v in snapshot.items()}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **self.params)

    @classmethod
    def load(cls, path) -> "LinearDualEncoder":
        data = np.load(path)
        encoder = cls(feature_dim=data["w_text"].shape[1],
                      embedding_dim=data["w_text"].shape[0])
        encoder.params = {k: np.array(data[k]) for k in ("w_text", "w_image", "log_tau")}
        return encoder


class TrainedMatcher:
    """MatcherBackend-shaped view of a (possibly finetuned) dual encoder."""

    def __init__(self, encoder: LinearDualEncoder):
        self.encoder = encoder

    @property
    def dim(self) -> int:
        return self.encoder.embedding_dim

    def _embed(self, item, kind: str) -> Embedding:
        x = self.encoder._features(item, kind)
        w = self.encoder.params["w_text" if kind == "text" else "w_image"]
        vec = w @ x
        norm = np.linalg.norm(vec)
        return Embedding(vector=vec / norm if norm else vec)

    def embed_text(self, text) -> Embedding:
        return self._embed(text, "text")

    def embed_image(self, image) -> Embedding:
        return self._embed(image, "image")

    def itm_score(self, image, text) -> float:
        return float(self.embed_image(image).vector @ self.embed_text(text).vector)


class AdamW:
    """Adam with decoupled weight decay; decay applies only to listed params."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float,
                 weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8,
                 decay_params: Sequence[str] = ("w_text", "w_image")):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay_params = set(decay_params)
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for key, grad in grads.items():
            p = self.params[key]
            self._m[key] = self.beta1 * self._m[key] + (1 - self.beta1) * grad
            self._v[key] = self.beta2 * self._v[key] + (1 - self.beta2) * grad * grad
            m_hat = self._m[key] / (1 - self.beta1 ** t)
            v_hat = self._v[key] / (1 - self.beta2 ** t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if key in self.decay_params and self.weight_decay:
                update = update + self.weight_decay * p
            self.params[key] = p - self.lr * update


# ---------------------------------------------------------------------------
# finetune loop

@dataclass
class FinetuneResult:
    encoder: LinearDualEncoder
    curve: List[dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.curve[-1]["loss"] if self.curve else None

    @property
    def initial_loss(self) -> Optional[float]:
        return self.curve[0]["loss"] if self.curve else None


def finetune(encoder: LinearDualEncoder, sampler: MixedBatchSampler,
             config: TrainConfig, out_dir=None,
             max_steps: Optional[int] = None) -> FinetuneResult:
    """Run epochs x batches of AdamW steps on the contrastive loss.

    The per-step curve records loss / (2N) so curves are comparable across
    batch sizes. On divergence (non-finite loss) the encoder is restored to
    the last epoch checkpoint and the run is marked aborted.
    """
    result = FinetuneResult(encoder=encoder)
    optimizer = AdamW(encoder.params, lr=config.learning_rate,
                      weight_decay=config.weight_decay)
    last_good = encoder.snapshot()
    step = 0
    for epoch in range(config.epochs):
        for batch in sampler.batches_for_epoch(epoch):
            x_text, e_text, x_image, e_image = encoder.encode(batch.texts,
                                                              batch.images)
            grads = loss_gradient(e_text, e_image, encoder.tau)
            if not math.isfinite(grads.loss):
                encoder.restore(last_good)
                result.aborted = True
                result.abort_reason = f"non-finite loss at step {step}"
                log.error("finetune aborted: %s", result.abort_reason)
                return result
            param_grads = {
                "w_text": grads.grad_text.T @ x_text,
                "w_image": grads.grad_image.T @ x_image,
                "log_tau": np.array(grads.grad_tau * encoder.tau),
            }
            optimizer.step(param_grads)
            step += 1
            result.curve.append({
                "step": step,
                "epoch": epoch,
                "loss": grads.loss / (2 * len(batch)),
                "tau": encoder.tau,
            })
            if max_steps is not None and step >= max_steps:
                last_good = encoder.snapshot()
                if out_dir is not None:
                    path = Path(out_dir) / f"ckpt-epoch-{epoch:03d}.npz"
                    encoder.save(path)
                    result.checkpoints.append(str(path))
                return result
        last_good = encoder.snapshot()
        if out_dir is not None:
            path = Path(out_dir) / f"ckpt-epoch-{epoch:03d}.npz"
            encoder.save(path)
            result.checkpoints.append(str(path))
    return result
