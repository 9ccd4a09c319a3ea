"""Two-stage training.

Stage 1 learns the feature extractor and base-class rows from photos and
sketches jointly, merging the two per-domain gradients by sign consensus
so updates only follow directions both domains agree on.

Stage 2 freezes the extractor and base rows and trains the weight
generator episodically: a few base classes are synthetically dropped,
their rows regenerated from support exemplars, and the refreshed
classifier is scored on real photos with a classification loss plus a
distillation loss against the frozen stage-1 classifier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import classifier as C
from . import generator as G
from . import tensor as T
from .backbone import BackboneConfig, embed_graph, embed_many, freeze, init_backbone
from .checkpoint import Checkpoint, ClassRegistry, RegistryEntry
from .consensus import consensus_merge, sign_agreement, zeroed_fraction
from .data import ClassSplit, Dataset, Domain, base_pool
from .tensor import Array, GradientSet, ParameterSet

CLASSIFIER_WEIGHTS = "classifier.weights"
CLASSIFIER_SCALE = "classifier.scale"


@dataclass(frozen=True)
class Stage1Config:
    epochs: int = 100            # reference default; desk-scale runs pass ~8
    batch_size: int = 8
    lr: float = 0.01
    gc_enabled: bool = True
    scale: float = 10.0
    learnable_scale: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr <= 0 or self.scale <= 0:
            raise ValueError("stage-1 config values must be positive")


@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 60             # reference default; desk-scale runs pass ~5
    episodes_per_epoch: int = 20
    n_drop: int = 5              # pseudo-novel classes per episode
    k_shot: int = 5
    q_per_class: int = 5
    lr: float = 0.01
    kd_enabled: bool = True
    cmt_enabled: bool = True
    gc_enabled: bool = True
    use_gat: bool = True
    gat_rounds: int = 1
    literal_self_message: bool = False
    freeze_backbone: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.episodes_per_epoch, self.n_drop, self.k_shot,
               self.q_per_class) < 1 or self.lr <= 0:
            raise ValueError("stage-2 config values must be positive")


def onehot(labels, positions: dict[int, int]) -> Array:
    out = np.zeros((len(labels), len(positions)))
    for i, y in enumerate(labels):
        out[i, positions[y]] = 1.0
    return out


def _images(dataset: Dataset, indices) -> Array:
    return np.stack([dataset.items[i].image for i in indices])


def _batch_loss(leaves, images: Array, targets: Array, bcfg: BackboneConfig,
                scale: float, learnable_scale: bool) -> T.Tensor:
    f = embed_graph(leaves, images, bcfg)
    cos = T.matmul(T.l2_normalize(f), T.transpose(T.l2_normalize(leaves[CLASSIFIER_WEIGHTS])))
    if learnable_scale:
        logits = T.mul(cos, leaves[CLASSIFIER_SCALE])
    else:
        logits = T.scale(cos, scale)
    return T.softmax_cross_entropy(logits, targets)


def _restrict(grads: GradientSet, names) -> GradientSet:
    return GradientSet({n: grads.values[n] for n in names}, tag=grads.tag)


def _sgd(params: ParameterSet, grads: GradientSet, lr: float) -> None:
    for name, g in grads.values.items():
        params.entries[name] -= lr * g


def stage1_step(params: ParameterSet, photo_batch, sketch_batch, cfg: Stage1Config,
                bcfg: BackboneConfig, positions: dict[int, int]):
    """One paired update step. Returns (params, loss_photo, loss_sketch,
    fraction of gradient components zeroed by consensus)."""
    p_imgs, p_labels = photo_batch
    s_imgs, s_labels = sketch_batch
    p_targets = onehot(p_labels, positions)
    s_targets = onehot(s_labels, positions)

    def photo_loss(leaves):
        return _batch_loss(leaves, p_imgs, p_targets, bcfg, cfg.scale, cfg.learnable_scale)

    def sketch_loss(leaves):
        return _batch_loss(leaves, s_imgs, s_targets, bcfg, cfg.scale, cfg.learnable_scale)

    loss_p, g_photo = T.forward_backward(photo_loss, params, tag="photo")
    loss_s, g_sketch = T.forward_backward(sketch_loss, params, tag="sketch")
    if cfg.gc_enabled:
        merged = consensus_merge(g_photo, g_sketch)
        zero_frac = zeroed_fraction(sign_agreement(g_photo, g_sketch))
    else:
        merged = g_photo + g_sketch
        zero_frac = 0.0
    _sgd(params, merged, cfg.lr)
    return params, loss_p, loss_s, zero_frac


def subset_accuracy(params: ParameterSet, bcfg: BackboneConfig, cw: C.ClassifierWeights,
                    dataset: Dataset, indices) -> float:
    """Top-1 accuracy over the given items, label space = cw.class_ids.
    Argmax ties break to the lowest class id (rows are id-ordered)."""
    if not indices:
        return float("nan")
    embs = embed_many(params, _images(dataset, indices), bcfg)
    probs = C.predict_batch(cw, embs)
    order = np.argsort(cw.class_ids, kind="stable")
    pred = [cw.class_ids[order[j]] for j in np.argmax(probs[:, order], axis=1)]
    truth = [dataset.items[i].label for i in indices]
    return float(np.mean([p == t for p, t in zip(pred, truth)]))


def base_classifier(ckpt: Checkpoint) -> C.ClassifierWeights:
    """Stage-1 classifier over the checkpoint's base classes."""
    base_ids = tuple(e.class_id for e in ckpt.registry if e.origin == "base")
    rows = ckpt.params.entries[CLASSIFIER_WEIGHTS][:len(base_ids)]
    return C.ClassifierWeights(rows, base_ids, scale=ckpt.scale)


def train_stage1(dataset: Dataset, split: ClassSplit, cfg: Stage1Config,
                 bcfg: BackboneConfig, log=None) -> Checkpoint:
    """Cross-domain pretraining on the base-class train subsets."""
    rng = np.random.default_rng(cfg.seed)
    entries = init_backbone(bcfg, rng)
    params = ParameterSet(entries)
    # imprint initial class rows from both domains' train items; a random
    # cosine head tends to collapse to one class under plain SGD
    rows = []
    for c in split.base:
        idx = (list(split.base_items[(c, Domain.photo)]["train"])
               + list(split.base_items[(c, Domain.sketch)]["train"]))
        embs = embed_many(params, _images(dataset, idx), bcfg)
        rows.append(G.class_prototype(embs))
    params.add(CLASSIFIER_WEIGHTS, np.stack(rows))
    if cfg.learnable_scale:
        params.add(CLASSIFIER_SCALE, np.array([cfg.scale]))

    positions = {c: i for i, c in enumerate(split.base)}
    photo_train = [i for c in split.base for i in split.base_items[(c, Domain.photo)]["train"]]
    sketch_train = [i for c in split.base for i in split.base_items[(c, Domain.sketch)]["train"]]
    if not photo_train or not sketch_train:
        raise ValueError("base split is empty in one of the domains")
    photo_val = [i for c in split.base for i in split.base_items[(c, Domain.photo)]["val"]]
    sketch_val = [i for c in split.base for i in split.base_items[(c, Domain.sketch)]["val"]]

    b = cfg.batch_size
    history = []
    for epoch in range(cfg.epochs):
        p_order = rng.permutation(len(photo_train))
        s_order = rng.permutation(len(sketch_train))
        steps = min(len(photo_train), len(sketch_train)) // b
        ep_lp, ep_ls, ep_zf = [], [], []
        for step in range(steps):
            p_idx = [photo_train[i] for i in p_order[step * b:(step + 1) * b]]
            s_idx = [sketch_train[i] for i in s_order[step * b:(step + 1) * b]]
            photo_batch = (_images(dataset, p_idx), [dataset.items[i].label for i in p_idx])
            sketch_batch = (_images(dataset, s_idx), [dataset.items[i].label for i in s_idx])
            _, lp, ls, zf = stage1_step(params, photo_batch, sketch_batch, cfg, bcfg, positions)
            ep_lp.append(lp)
            ep_ls.append(ls)
            ep_zf.append(zf)
        scale = float(params.entries[CLASSIFIER_SCALE][0]) if cfg.learnable_scale else cfg.scale
        cw = C.ClassifierWeights(params.entries[CLASSIFIER_WEIGHTS], tuple(split.base), scale)
        row = {"epoch": epoch,
               "loss_photo": float(np.mean(ep_lp)),
               "loss_sketch": float(np.mean(ep_ls)),
               "zero_fraction": float(np.mean(ep_zf)),
               "val_acc_photo": subset_accuracy(params, bcfg, cw, dataset, photo_val),
               "val_acc_sketch": subset_accuracy(params, bcfg, cw, dataset, sketch_val)}
        history.append(row)
        if log:
            log(f"stage1 epoch={epoch} loss_photo={row['loss_photo']:.4f} "
                f"loss_sketch={row['loss_sketch']:.4f} zero_fraction={row['zero_fraction']:.3f} "
                f"val_photo={row['val_acc_photo']:.3f} val_sketch={row['val_acc_sketch']:.3f}")

    registry = ClassRegistry([
        RegistryEntry(c, dataset.class_names[c], "base",
                      len(split.base_items[(c, Domain.photo)]["train"]))
        for c in split.base])
    scale = float(params.entries[CLASSIFIER_SCALE][0]) if cfg.learnable_scale else cfg.scale
    meta = {"stage1": {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
                       "gc_enabled": cfg.gc_enabled, "seed": cfg.seed},
            "stage1_history": history}
    return Checkpoint(bcfg, params, registry, scale=scale, metadata=meta)


@dataclass(frozen=True)
class PseudoEpisode:
    dropped: tuple[int, ...]
    retained: tuple[int, ...]
    support_sketch: dict
    support_photo: dict
    query_idx: tuple[int, ...]
    query_labels: tuple[int, ...]


def make_pseudo_episode(split: ClassSplit, cfg: Stage2Config,
                        rng: np.random.Generator) -> PseudoEpisode:
    """Drop n_drop base classes; support exemplars come from their train
    items, queries are train photos of every base class."""
    if cfg.n_drop >= len(split.base):
        raise ValueError(f"n_drop={cfg.n_drop} must be smaller than the "
                         f"{len(split.base)} base classes")
    dropped = tuple(int(c) for c in rng.choice(np.array(split.base), size=cfg.n_drop,
                                               replace=False))
    retained = tuple(c for c in split.base if c not in dropped)

    support_sketch, support_photo = {}, {}
    query_idx: list[int] = []
    query_labels: list[int] = []
    for c in split.base:
        photos = np.array(split.base_items[(c, Domain.photo)]["train"])
        taken: set[int] = set()
        if c in dropped:
            sketches = np.array(split.base_items[(c, Domain.sketch)]["train"])
            if len(sketches) < cfg.k_shot or len(photos) < cfg.k_shot + cfg.q_per_class:
                raise ValueError(f"class {c} lacks items for a pseudo episode")
            support_sketch[c] = tuple(int(i) for i in
                                      rng.choice(sketches, size=cfg.k_shot, replace=False))
            support_photo[c] = tuple(int(i) for i in
                                     rng.choice(photos, size=cfg.k_shot, replace=False))
            taken = set(support_photo[c])
        pool = np.array([i for i in photos if i not in taken])
        if len(pool) < cfg.q_per_class:
            raise ValueError(f"class {c} lacks photo queries for a pseudo episode")
        q = rng.choice(pool, size=cfg.q_per_class, replace=False)
        query_idx.extend(int(i) for i in q)
        query_labels.extend([c] * cfg.q_per_class)
    return PseudoEpisode(dropped, retained, support_sketch, support_photo,
                         tuple(query_idx), tuple(query_labels))


def episode_losses(query_embs: Array, query_labels, w_new: T.Tensor,
                   episode_ids: tuple[int, ...], teacher_probs: Array,
                   teacher_ids: tuple[int, ...], scale: float,
                   kd_enabled: bool = True):
    """Classification + distillation losses over an episode's query set.

    Teacher columns follow teacher_ids; the student is re-softmaxed over
    the rows of w_new matching those ids.
    """
    positions = {c: i for i, c in enumerate(episode_ids)}
    targets = onehot(query_labels, positions)
    q = T.constant(query_embs)
    logits = C.cosine_logits(w_new, q, scale)
    l_cls = T.softmax_cross_entropy(logits, targets)
    if not kd_enabled:
        return l_cls, None, l_cls
    try:
        rows = [positions[c] for c in teacher_ids]
    except KeyError as exc:
        raise ValueError(f"class-id alignment failure: teacher class {exc} "
                         f"missing from episode rows") from exc
    student_base_logits = T.gather_rows(T.transpose(logits), rows)
    l_distil = T.softmax_cross_entropy(T.transpose(student_base_logits), teacher_probs)
    l_total = T.add(l_cls, l_distil)
    return l_cls, l_distil, l_total


class _EmbeddingCache:
    """Embeddings of dataset items under a frozen backbone."""

    def __init__(self, params, bcfg, dataset, chunk: int = 256):
        self.params, self.bcfg, self.dataset = params, bcfg, dataset
        self.chunk = chunk
        self._cache: dict[int, Array] = {}

    def ensure(self, indices) -> None:
        missing = sorted(set(indices) - self._cache.keys())
        for start in range(0, len(missing), self.chunk):
            batch = missing[start:start + self.chunk]
            embs = embed_many(self.params, _images(self.dataset, batch), self.bcfg)
            for i, e in zip(batch, embs):
                self._cache[i] = e

    def rows(self, indices) -> Array:
        self.ensure(indices)
        return np.stack([self._cache[i] for i in indices])


def train_stage2(ckpt: Checkpoint, dataset: Dataset, split: ClassSplit,
                 cfg: Stage2Config, log=None) -> Checkpoint:
    """Episodic pseudo-incremental training of the weight generator."""
    out = ckpt.copy()
    rng = np.random.default_rng(cfg.seed)
    gat = G.init_generator(out.backbone_cfg.embed_dim, rng, rounds=cfg.gat_rounds)
    for name, arr in gat.as_entries().items():
        out.params.add(name, arr)
    frozen_prefixes = ["classifier."]
    if cfg.freeze_backbone:
        frozen_prefixes.append("backbone.")
    view = freeze(out.params, tuple(frozen_prefixes))
    trainable_names = [n for n in out.params.names() if view.trainable(n)]

    base_ids = tuple(split.base)
    base_positions = {c: i for i, c in enumerate(base_ids)}
    teacher_cw = base_classifier(out)
    cache = _EmbeddingCache(out.params, out.backbone_cfg, dataset)

    def run_pass(pe: PseudoEpisode, support_of, query_embs, teacher_probs, tag):
        def loss_fn(leaves):
            w_all = leaves[CLASSIFIER_WEIGHTS]
            retained_rows = T.gather_rows(w_all, [base_positions[c] for c in pe.retained])
            if cfg.freeze_backbone:
                support = [T.constant(cache.rows(support_of[c])) for c in pe.dropped]
            else:
                support = [embed_graph(leaves, _images(dataset, support_of[c]),
                                       out.backbone_cfg) for c in pe.dropped]
            gen_leaves = {k: leaves[k] for k in (G.QUERY, G.KEY, G.VALUE)}
            w_new, _ = G.generate(gen_leaves, retained_rows, support,
                                  base_ids=pe.retained, novel_ids=pe.dropped,
                                  use_gat=cfg.use_gat, rounds=cfg.gat_rounds,
                                  literal_self_message=cfg.literal_self_message)
            _, _, l_total = episode_losses(query_embs, pe.query_labels, w_new,
                                           pe.retained + pe.dropped, teacher_probs,
                                           teacher_cw.class_ids, out.scale,
                                           kd_enabled=cfg.kd_enabled)
            return l_total

        loss, grads = T.forward_backward(loss_fn, out.params, trainable=view.trainable,
                                         tag=tag)
        return loss, _restrict(grads, trainable_names)

    history = []
    for epoch in range(cfg.epochs):
        ep_loss, ep_zf = [], []
        for _ in range(cfg.episodes_per_epoch):
            pe = make_pseudo_episode(split, cfg, rng)
            if cfg.freeze_backbone:
                query_embs = cache.rows(pe.query_idx)
            else:
                query_embs = embed_many(out.params, _images(dataset, pe.query_idx),
                                        out.backbone_cfg)
            teacher_probs = C.predict_batch(teacher_cw, query_embs)
            if cfg.cmt_enabled and cfg.gc_enabled:
                # dual pass: sketch-support and photo-support gradients must agree
                loss_s, g_sketch = run_pass(pe, pe.support_sketch, query_embs,
                                            teacher_probs, "sketch")
                loss_p, g_photo = run_pass(pe, pe.support_photo, query_embs,
                                           teacher_probs, "photo")
                merged = consensus_merge(g_photo, g_sketch)
                zf = zeroed_fraction(sign_agreement(g_photo, g_sketch))
                loss = 0.5 * (loss_s + loss_p)
            elif cfg.cmt_enabled:
                # mixed support, no consensus: coin-flip domain per support item
                support = {c: tuple(pe.support_photo[c][j] if rng.random() < 0.5
                                    else pe.support_sketch[c][j]
                                    for j in range(cfg.k_shot))
                           for c in pe.dropped}
                loss, merged = run_pass(pe, support, query_embs, teacher_probs, "merged")
                zf = 0.0
            else:
                loss, merged = run_pass(pe, pe.support_sketch, query_embs,
                                        teacher_probs, "sketch")
                zf = 0.0
            _sgd(out.params, merged, cfg.lr)
            ep_loss.append(loss)
            ep_zf.append(zf)
        row = {"epoch": epoch, "loss": float(np.mean(ep_loss)),
               "zero_fraction": float(np.mean(ep_zf))}
        history.append(row)
        if log:
            log(f"stage2 epoch={epoch} loss={row['loss']:.4f} "
                f"zero_fraction={row['zero_fraction']:.3f}")

    out.gat_rounds = cfg.gat_rounds
    out.metadata = dict(out.metadata)
    out.metadata["stage2"] = {"epochs": cfg.epochs, "episodes_per_epoch": cfg.episodes_per_epoch,
                              "n_drop": cfg.n_drop, "k_shot": cfg.k_shot,
                              "q_per_class": cfg.q_per_class, "lr": cfg.lr,
                              "kd_enabled": cfg.kd_enabled, "cmt_enabled": cfg.cmt_enabled,
                              "gc_enabled": cfg.gc_enabled, "use_gat": cfg.use_gat,
                              "seed": cfg.seed}
    out.metadata["stage2_history"] = history
    return out
