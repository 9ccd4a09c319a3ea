"""Episode-based accuracy suites over novel, base, and joint label spaces,
with multi-seed averaging and deterministic report files.

Every episode increments the classifier from sketch exemplars first, then
scores photo queries against a structurally restricted label space: rows
outside the episode's label set are never consulted.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import classifier as C
from . import generator as G
from .backbone import embed_many
from .checkpoint import Checkpoint, checkpoint_hash
from .data import ClassSplit, Dataset, Domain, EpisodePool, base_pool, novel_pool, sample_episode
from .tensor import Array
from .training import _EmbeddingCache, base_classifier


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 600
    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 15
    support_domain: str = "sketch"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    use_gat: bool = True
    literal_self_message: bool = False

    def __post_init__(self):
        if min(self.n_episodes, self.n_way, self.k_shot, self.q_per_class) < 1:
            raise ValueError("eval config values must be positive")

    def to_dict(self) -> dict:
        return {"n_episodes": self.n_episodes, "n_way": self.n_way, "k_shot": self.k_shot,
                "q_per_class": self.q_per_class, "support_domain": self.support_domain,
                "seeds": list(self.seeds), "use_gat": self.use_gat,
                "literal_self_message": self.literal_self_message}


@dataclass(frozen=True)
class EvalReport:
    metric: str
    mean: float
    std: float
    per_seed: tuple[float, ...]
    config: dict
    checkpoint_hash: str
    extras: dict


def _gat_of(ckpt: Checkpoint) -> G.GatParams | None:
    if G.QUERY not in ckpt.params.entries:
        return None
    return G.GatParams.from_entries(ckpt.params.entries, rounds=ckpt.gat_rounds)


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, episode)))


def _score(rows: Array, class_ids, query_embs: Array, truth, scale: float) -> float:
    """Accuracy with the label space fixed to class_ids; rows are ordered
    by ascending class id so argmax ties break to the lowest id."""
    order = np.argsort(np.asarray(class_ids), kind="stable")
    cw = C.ClassifierWeights(rows[order], tuple(np.asarray(class_ids)[order]), scale)
    probs = C.predict_batch(cw, query_embs)
    pred = [cw.class_ids[j] for j in np.argmax(probs, axis=1)]
    return float(np.mean([p == t for p, t in zip(pred, truth)]))


def _increment(ckpt: Checkpoint, cache: _EmbeddingCache, episode, cfg: EvalConfig):
    """Generate the incremented weight matrix from episode support items.
    Returns (all rows, base ids, novel way ids)."""
    base_cw = base_classifier(ckpt)
    gat = _gat_of(ckpt)
    use_gat = cfg.use_gat and gat is not None
    if cfg.use_gat and gat is None:
        raise ValueError("checkpoint has no generator parameters; evaluate with use_gat=False")
    supports = [cache.rows(episode.support_idx[w * episode.k_shot:(w + 1) * episode.k_shot])
                for w in range(len(episode.way_classes))]
    if gat is None:
        gat = G.GatParams(np.zeros((ckpt.backbone_cfg.embed_dim,) * 2),
                          np.zeros((ckpt.backbone_cfg.embed_dim,) * 2),
                          np.zeros((ckpt.backbone_cfg.embed_dim,) * 2))
    rows = G.generate_rows(gat, base_cw.weights, supports, use_gat=use_gat,
                           literal_self_message=cfg.literal_self_message)
    return rows, base_cw.class_ids, episode.way_classes


def _sample_queries(pool: EpisodePool, classes, q: int, rng) -> tuple[list[int], list[int]]:
    idx: list[int] = []
    labels: list[int] = []
    for c in classes:
        avail = np.array(pool.items[(c, Domain.photo)])
        if len(avail) < q:
            raise ValueError(f"class {c} has only {len(avail)} photos, need {q}")
        idx.extend(int(i) for i in rng.choice(avail, size=q, replace=False))
        labels.extend([c] * q)
    return idx, labels


def acc_novel(ckpt: Checkpoint, dataset: Dataset, split: ClassSplit,
              cfg: EvalConfig) -> EvalReport:
    """Per episode: increment from exemplars, score photo queries against
    the sampled novel classes only."""
    pool = novel_pool(dataset, split)
    cache = _EmbeddingCache(ckpt.params, ckpt.backbone_cfg, dataset)
    per_seed = []
    for seed in cfg.seeds:
        accs = []
        for e in range(cfg.n_episodes):
            rng = _episode_rng(seed, e)
            ep = sample_episode(dataset, pool, cfg.n_way, cfg.k_shot, cfg.q_per_class,
                                cfg.support_domain, rng)
            rows, base_ids, way_ids = _increment(ckpt, cache, ep, cfg)
            novel_rows = rows[len(base_ids):]
            q_embs = cache.rows(ep.query_idx)
            truth = [dataset.items[i].label for i in ep.query_idx]
            accs.append(_score(novel_rows, way_ids, q_embs, truth, ckpt.scale))
        per_seed.append(float(np.mean(accs)))
    return _report("acc_novel", per_seed, cfg, ckpt)


def acc_base(ckpt: Checkpoint, dataset: Dataset, split: ClassSplit, cfg: EvalConfig,
             pre_increment: bool = False) -> EvalReport:
    """Base-class episodes scored on the incremented classifier (novel rows
    present, label space restricted to the sampled base classes). With
    pre_increment=True the frozen stage-1 rows are scored instead."""
    npool = novel_pool(dataset, split)
    bpool = base_pool(dataset, split, "test")
    cache = _EmbeddingCache(ckpt.params, ckpt.backbone_cfg, dataset)
    base_cw = base_classifier(ckpt)
    per_seed = []
    for seed in cfg.seeds:
        accs = []
        for e in range(cfg.n_episodes):
            rng = _episode_rng(seed, e)
            ep = sample_episode(dataset, npool, cfg.n_way, cfg.k_shot, 0,
                                cfg.support_domain, rng)
            sampled_base = [int(c) for c in rng.choice(np.array(bpool.classes),
                                                       size=cfg.n_way, replace=False)]
            q_idx, truth = _sample_queries(bpool, sampled_base, cfg.q_per_class, rng)
            q_embs = cache.rows(q_idx)
            if pre_increment:
                rows, ids = base_cw.weights, base_cw.class_ids
            else:
                rows, ids, _ = _increment(ckpt, cache, ep, cfg)
                ids = list(ids)
            keep = [i for i, c in enumerate(ids) if c in set(sampled_base)]
            accs.append(_score(np.asarray(rows)[keep], [ids[i] for i in keep],
                               q_embs, truth, ckpt.scale))
        per_seed.append(float(np.mean(accs)))
    name = "acc_base_pre" if pre_increment else "acc_base"
    return _report(name, per_seed, cfg, ckpt)


def acc_both(ckpt: Checkpoint, dataset: Dataset, split: ClassSplit,
             cfg: EvalConfig) -> EvalReport:
    """Joint label space: n_way sampled base classes plus n_way novel
    classes, photo queries from both sides."""
    npool = novel_pool(dataset, split)
    bpool = base_pool(dataset, split, "test")
    cache = _EmbeddingCache(ckpt.params, ckpt.backbone_cfg, dataset)
    per_seed = []
    restricted_base, restricted_novel = [], []
    for seed in cfg.seeds:
        accs, rb, rn = [], [], []
        for e in range(cfg.n_episodes):
            rng = _episode_rng(seed, e)
            ep = sample_episode(dataset, npool, cfg.n_way, cfg.k_shot, cfg.q_per_class,
                                cfg.support_domain, rng)
            sampled_base = [int(c) for c in rng.choice(np.array(bpool.classes),
                                                       size=cfg.n_way, replace=False)]
            bq_idx, b_truth = _sample_queries(bpool, sampled_base, cfg.q_per_class, rng)
            rows, base_ids, way_ids = _increment(ckpt, cache, ep, cfg)
            ids = list(base_ids) + list(way_ids)
            label_set = set(sampled_base) | set(way_ids)
            keep = [i for i, c in enumerate(ids) if c in label_set]
            kept_rows = np.asarray(rows)[keep]
            kept_ids = [ids[i] for i in keep]
            nq_embs = cache.rows(ep.query_idx)
            n_truth = [dataset.items[i].label for i in ep.query_idx]
            bq_embs = cache.rows(bq_idx)
            q_embs = np.concatenate([bq_embs, nq_embs])
            truth = list(b_truth) + list(n_truth)
            accs.append(_score(kept_rows, kept_ids, q_embs, truth, ckpt.scale))
            # side-restricted accuracies on the same episodes
            bkeep = [i for i, c in enumerate(ids) if c in set(sampled_base)]
            nkeep = [i for i, c in enumerate(ids) if c in set(way_ids)]
            rb.append(_score(np.asarray(rows)[bkeep], [ids[i] for i in bkeep],
                             bq_embs, b_truth, ckpt.scale))
            rn.append(_score(np.asarray(rows)[nkeep], [ids[i] for i in nkeep],
                             nq_embs, n_truth, ckpt.scale))
        per_seed.append(float(np.mean(accs)))
        restricted_base.append(float(np.mean(rb)))
        restricted_novel.append(float(np.mean(rn)))
    report = _report("acc_both", per_seed, cfg, ckpt)
    return replace(report, extras={"restricted_base": restricted_base,
                                   "restricted_novel": restricted_novel})


def _report(metric: str, per_seed, cfg: EvalConfig, ckpt: Checkpoint) -> EvalReport:
    arr = np.asarray(per_seed)
    if np.any((arr < 0) | (arr > 1)):
        raise ValueError("accuracy outside [0, 1]")
    return EvalReport(metric=metric, mean=float(arr.mean()),
                      std=float(arr.std(ddof=0)), per_seed=tuple(float(a) for a in arr),
                      config=cfg.to_dict(), checkpoint_hash=checkpoint_hash(ckpt),
                      extras={})


METRIC_FNS = {"novel": acc_novel, "base": acc_base, "both": acc_both}


def run_matrix(entries, dataset: Dataset, split: ClassSplit, cfg: EvalConfig,
               metrics=("novel", "base", "both"), shots=(5,)) -> list[dict]:
    """Evaluate every (checkpoint variant, shot count, seed) cell.

    `entries` is a list of (name, checkpoint, config overrides) triples;
    one output row per variant x shot x seed with a column per metric.
    """
    rows = []
    for name, ckpt, overrides in entries:
        for k_shot in shots:
            run_cfg = replace(cfg, k_shot=k_shot, **(overrides or {}))
            reports = {m: METRIC_FNS[m](ckpt, dataset, split, run_cfg) for m in metrics}
            for si, seed in enumerate(run_cfg.seeds):
                row = {"variant": name, "k_shot": k_shot, "n_way": run_cfg.n_way,
                       "episodes": run_cfg.n_episodes,
                       "support": run_cfg.support_domain, "seed": seed}
                for m in metrics:
                    row[f"acc_{m}"] = reports[m].per_seed[si]
                row["checkpoint"] = reports[metrics[0]].checkpoint_hash
                rows.append(row)
    return rows


def format_report(report: EvalReport) -> str:
    lines = [f"metric: {report.metric}",
             f"checkpoint: {report.checkpoint_hash}",
             f"mean: {report.mean:.6f}",
             f"std: {report.std:.6f}"]
    for seed, acc in zip(report.config["seeds"], report.per_seed):
        lines.append(f"seed {seed}: {acc:.6f}")
    for key in sorted(report.extras):
        vals = " ".join(f"{v:.6f}" for v in report.extras[key])
        lines.append(f"{key}: {vals}")
    lines.append("config: " + " ".join(f"{k}={report.config[k]}"
                                       for k in sorted(report.config)))
    return "\n".join(lines) + "\n"


def matrix_to_tsv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    out = ["\t".join(cols)]
    for row in rows:
        out.append("\t".join(f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c])
                             for c in cols))
    return "\n".join(out) + "\n"


def matrix_to_text(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)\n"
    cols = list(rows[0])
    cells = [[(f"{row[c]:.4f}" if isinstance(row[c], float) else str(row[c]))
              for c in cols] for row in rows]
    widths = [max(len(cols[i]), max(len(r[i]) for r in cells)) for i in range(len(cols))]
    header = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    sep = "  ".join("-" * w for w in widths)
    body = ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join([header, sep] + body) + "\n"
