"""Model state, the end-to-end forward/backward pass, and the training loop.

One step runs embedding lookup -> (item self-supervision) -> intent
disentanglement -> backbone under each intent -> novelty-weighted loss, then a
fused Adam update over the flat parameter buffer.  Gradients are derived by
hand; ``gradient_check`` compares them with central finite differences.
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import kernels
from .backbones import (BackboneConfig, NCFParams, clip_to_unit_ball, pairwise_loss,
                        pointwise_grad, pointwise_loss, score_backward, score_forward)
from .dataset import Dataset, Split, TrainBatch, make_batches
from .disentangle import IntentModule, disentangle_backward, disentangle_forward
from .errors import DivergenceError
from .loss import pairwise_intent_weight, pointwise_intent_weight
from .params import ParamLayout, ParamSpec
from .selfsup import (SelfSupModule, sample_mim_negatives, self_supervision_backward,
                      self_supervision_forward)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_ss", "no_ss_exp", "no_ss_id")
FUSIONS = ("mean", "pop", "pref")
DEFAULT_EPOCHS = {"lfm": 40, "ncf": 40, "cml": 30}
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dim: int = 50
    batch_size: int = 128
    lr: float = 0.001
    epochs: int | None = None  # None: 40 for lfm/ncf, 30 for cml
    gamma: float = 0.01
    lam: float = 1e-5
    negatives: int = 4
    seed: int = 0
    ablation: str = "full"
    fusion: str = "mean"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        for name in ("dim", "batch_size", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.gamma < 0 or self.lam < 0:
            raise ValueError("lr must be > 0; gamma and lam >= 0")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def num_epochs(self):
        return DEFAULT_EPOCHS[self.backbone.kind] if self.epochs is None else self.epochs

    @property
    def uses_intents(self):
        return self.ablation != "no_ss_id"

    @property
    def effective_gamma(self):
        return self.gamma if self.ablation == "full" else 0.0

    @property
    def effective_lam(self):
        # metric learning keeps embeddings in the unit ball instead
        return 0.0 if self.backbone.kind == "cml" else self.lam

    def to_dict(self):
        d = asdict(self)
        bb = d.pop("backbone")
        d["backbone"] = bb["kind"]
        d["ncf_tower_dims"] = list(bb["ncf_tower_dims"]) if bb["ncf_tower_dims"] else None
        d["cml_margin"] = bb["cml_margin"]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tower = d.pop("ncf_tower_dims", None)
        bb = BackboneConfig(d.pop("backbone", "cml"), tuple(tower) if tower else None,
                            float(d.pop("cml_margin", 1.0)))
        return cls(backbone=bb, **d)


@dataclass
class FeatureTables:
    """Dataset-derived lookup structures the forward pass needs."""

    user_index: np.ndarray
    user_weight: np.ndarray
    item_index: np.ndarray
    item_weight: np.ndarray
    item_value_indptr: np.ndarray
    item_value_ids: np.ndarray
    cold_mask: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: Dataset, cold_items=()):
        ui, uw = dataset.user_attrs.padded()
        ii, iw = dataset.item_attrs.padded()
        cold = np.zeros(dataset.num_items, dtype=bool)
        cold[np.asarray(cold_items, dtype=np.int64)] = True
        return cls(ui, uw, ii, iw, dataset.item_attrs.indptr.copy(),
                   dataset.item_attrs.value_ids.copy(), cold)

    def arrays(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _uniform_bound(shape):
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    return 1.0 / math.sqrt(max(fan_in, 1))


def build_layout(num_users, num_items, num_user_values, num_item_values,
                 user_fields, item_fields, config: TrainConfig) -> ParamLayout:
    D = config.dim
    specs = [
        ParamSpec("embedding/user", "embedding", (num_users, D)),
        ParamSpec("embedding/item", "embedding", (num_items, D)),
        ParamSpec("embedding/user_attr", "embedding", (num_user_values, D)),
        ParamSpec("embedding/item_attr", "embedding", (num_item_values, D)),
    ]
    if item_fields:
        for k, s in SelfSupModule.shapes(item_fields * D, D).items():
            specs.append(ParamSpec(f"selfsup/{k}", "selfsup", s))
    for side in ("user", "item"):
        for k, s in IntentModule.shapes(D).items():
            specs.append(ParamSpec(f"disentangle/{side}/{k}", "disentangle", s))
    if config.backbone.kind == "ncf":
        for k, s in NCFParams.shapes(D, config.backbone.tower(D)).items():
            specs.append(ParamSpec(f"backbone/{k}", "backbone", s))
    return ParamLayout(specs)


class ModelState:
    """All trainable arrays (views into ``theta``), their gradient views
    (into ``grad``), Adam moments and the dataset lookup tables."""

    def __init__(self, config: TrainConfig, layout: ParamLayout, theta: np.ndarray,
                 features: FeatureTables, m=None, v=None, step=0):
        self.config = config
        self.layout = layout
        self.theta = theta
        self.grad = np.zeros_like(theta)
        self.m = np.zeros_like(theta) if m is None else m
        self.v = np.zeros_like(theta) if v is None else v
        self.step = step
        self.features = features
        self.params = layout.views(theta)
        self.grads = layout.views(self.grad)
        self._bind()

    def _bind(self):
        P, G = self.params, self.grads
        self.user_emb, self.item_emb = P["embedding/user"], P["embedding/item"]
        self.user_attr_emb, self.item_attr_emb = P["embedding/user_attr"], P["embedding/item_attr"]
        self.has_selfsup = "selfsup/enc_w" in P
        if self.has_selfsup:
            self.selfsup = SelfSupModule(**self.layout.group(P, "selfsup"))
            self.selfsup_grad = SelfSupModule(**self.layout.group(G, "selfsup"))
        self.intent = {s: IntentModule(**self.layout.group(P, f"disentangle/{s}"))
                       for s in ("user", "item")}
        self.intent_grad = {s: IntentModule(**self.layout.group(G, f"disentangle/{s}"))
                            for s in ("user", "item")}
        if self.config.backbone.kind == "ncf":
            self.ncf = NCFParams.from_arrays(self.layout.group(P, "backbone"))
            self.ncf_grad = NCFParams.from_arrays(self.layout.group(G, "backbone"))
        else:
            self.ncf = self.ncf_grad = None

    @property
    def dtype(self):
        return self.theta.dtype

    @property
    def dim(self):
        return self.config.dim

    @property
    def item_fields(self):
        return self.features.item_index.shape[1]

    @property
    def user_fields(self):
        return self.features.user_index.shape[1]

    @property
    def selfsup_active(self):
        return self.has_selfsup and self.config.effective_gamma > 0

    def astype(self, dtype):
        f = self.features
        feats = replace(f, user_weight=f.user_weight.astype(dtype),
                        item_weight=f.item_weight.astype(dtype))
        return ModelState(self.config, self.layout, self.theta.astype(dtype), feats,
                          self.m.astype(dtype), self.v.astype(dtype), self.step)

    def copy(self):
        return self.astype(self.dtype)

    def with_config(self, **changes):
        """Same parameters under a modified config (e.g. another fusion)."""
        return ModelState(replace(self.config, **changes), self.layout, self.theta,
                          self.features, self.m, self.v, self.step)

    def side_tables(self, side):
        f = self.features
        if side == "user":
            return self.user_emb, self.user_attr_emb, f.user_index, f.user_weight
        return self.item_emb, self.item_attr_emb, f.item_index, f.item_weight

    def grad_tables(self, side):
        g = self.grads
        if side == "user":
            return g["embedding/user"], g["embedding/user_attr"]
        return g["embedding/item"], g["embedding/item_attr"]


def init_model(dataset: Dataset, config: TrainConfig, cold_items=(),
               dtype=np.float32) -> ModelState:
    """Embeddings and prototypes ~ N(0, 1/D); affine maps ~ U(+-1/sqrt(fan_in)).

    Each array draws from its own seed derived from (config.seed, name), so
    the two intent prototypes never coincide.
    """
    layout = build_layout(dataset.num_users, dataset.num_items,
                          dataset.user_attrs.num_values, dataset.item_attrs.num_values,
                          dataset.user_attrs.num_fields, dataset.item_attrs.num_fields,
                          config)
    theta = np.zeros(layout.size, dtype=np.float64)
    views = layout.views(theta)
    std = 1.0 / math.sqrt(config.dim)
    for spec in layout:
        rng = np.random.default_rng([config.seed, zlib.crc32(spec.name.encode())])
        leaf = spec.name.rsplit("/", 1)[-1]
        if spec.section == "embedding" or leaf in ("c_pop", "c_pref"):
            views[spec.name][...] = rng.normal(0.0, std, spec.shape)
        else:
            bound = _uniform_bound(spec.shape)
            views[spec.name][...] = rng.uniform(-bound, bound, spec.shape)
    features = FeatureTables.from_dataset(dataset, cold_items)
    model = ModelState(config, layout, theta, features).astype(dtype)
    if config.backbone.kind == "cml":
        project_embeddings(model)
    return model


def count_parameters(model: ModelState, by_section=False):
    """Trainable scalars under the model's ablation."""
    cfg = model.config
    counts = {}
    for spec in model.layout:
        if spec.section == "selfsup" and cfg.ablation != "full":
            continue
        if spec.section == "disentangle" and not cfg.uses_intents:
            continue
        counts[spec.section] = counts.get(spec.section, 0) + spec.size
    return counts if by_section else sum(counts.values())


# -- forward / backward -------------------------------------------------------

def gather_features(model, side, ids, collaborative=None, with_collab=True):
    """Feature bundles (B, 1 + k, D), or (B, k, D) without the collaborative slot."""
    emb, attr, index, weight = model.side_tables(side)
    k = index.shape[1]
    off = 1 if with_collab else 0
    feats = np.empty((len(ids), k + off, model.dim), dtype=model.dtype)
    if with_collab:
        feats[:, 0] = emb[ids] if collaborative is None else collaborative
    if k:
        feats[:, off:] = np.einsum("bkl,bkld->bkd", weight[ids], attr[index[ids]])
    return feats


def scatter_feature_grads(model, side, ids, d_feats, with_collab=True):
    g_emb, g_attr = model.grad_tables(side)
    _, _, index, weight = model.side_tables(side)
    off = 1 if with_collab else 0
    if with_collab:
        kernels.scatter_add_rows(g_emb, ids, d_feats[:, 0])
    k = index.shape[1]
    if k:
        vals = weight[ids][..., None] * d_feats[:, off:, None, :]
        kernels.scatter_add_rows(g_attr, index[ids].reshape(-1), vals.reshape(-1, model.dim))


def _represent(model, side, feats):
    if model.config.uses_intents:
        pop, pref, cache = disentangle_forward(model.intent[side], feats)
        return {"pop": pop, "pref": pref}, cache
    return {"mean": feats.mean(axis=1)}, None


def _represent_backward(model, side, feats, cache, d_reps):
    if cache is not None:
        return disentangle_backward(model.intent[side], model.intent_grad[side], cache,
                                    d_reps["pop"], d_reps["pref"])
    d = d_reps["mean"] / feats.shape[1]
    return np.broadcast_to(d[:, None, :], feats.shape)


@dataclass
class SelfSupBatch:
    items: np.ndarray
    neg_items: np.ndarray
    eps: np.ndarray


def make_selfsup_batch(model, batch: TrainBatch, rng) -> SelfSupBatch | None:
    items = batch.positive_items()
    if not len(items):
        return None
    f = model.features
    negs = kernels.sample_disjoint(items, f.item_value_indptr, f.item_value_ids,
                                   ~f.cold_mask, int(rng.integers(0, 2**63 - 1)))
    eps = rng.standard_normal((len(items), model.dim)).astype(model.dtype)
    return SelfSupBatch(items, negs, eps)


@dataclass
class StepLoss:
    total: float
    rec: float
    ss: float


def _intent_weights(model, batch):
    """Per-example weight on each intent's loss."""
    if not model.config.uses_intents:
        return {"mean": np.ones(len(batch))}
    if model.config.ablation == "no_ss_exp":
        w = np.full(len(batch), 0.5)
    elif batch.mode == "pairwise":
        w = pairwise_intent_weight(batch.alpha, batch.alpha_neg)
    else:
        w = pointwise_intent_weight(batch.alpha)
    return {"pref": w, "pop": 1.0 - w}


def loss_and_grad(model: ModelState, batch: TrainBatch, aux: SelfSupBatch | None = None):
    """Joint loss of one batch; leaves its gradient in ``model.grad``."""
    cfg = model.config
    kind = cfg.backbone.kind
    dt = model.dtype
    model.grad[...] = 0.0
    B = len(batch)
    weights = {k: w.astype(dt) / B for k, w in _intent_weights(model, batch).items()}

    u_feats = gather_features(model, "user", batch.users)
    u_reps, u_cache = _represent(model, "user", u_feats)
    i_feats = gather_features(model, "item", batch.items)
    i_reps, i_cache = _represent(model, "item", i_feats)
    du = {k: 0.0 for k in u_reps}
    di = {}
    rec = 0.0

    if batch.mode == "pairwise":
        n_feats = gather_features(model, "item", batch.neg_items)
        n_reps, n_cache = _represent(model, "item", n_feats)
        dn = {}
        for key, w in weights.items():
            s_pos, c_pos = score_forward(kind, model.ncf, u_reps[key], i_reps[key])
            s_neg, c_neg = score_forward(kind, model.ncf, u_reps[key], n_reps[key])
            hinge = pairwise_loss(s_pos, s_neg, cfg.backbone.cml_margin)
            rec += float(np.dot(w, hinge))
            active = (hinge > 0).astype(dt) * w
            du_pos, di[key] = score_backward(kind, model.ncf, model.ncf_grad, c_pos, -active)
            du_neg, dn[key] = score_backward(kind, model.ncf, model.ncf_grad, c_neg, active)
            du[key] = du_pos + du_neg
        d_nf = _represent_backward(model, "item", n_feats, n_cache, dn)
        scatter_feature_grads(model, "item", batch.neg_items, d_nf)
    else:
        y = batch.labels.astype(dt)
        for key, w in weights.items():
            s, c = score_forward(kind, model.ncf, u_reps[key], i_reps[key])
            rec += float(np.dot(w, pointwise_loss(y, s)))
            du[key], di[key] = score_backward(kind, model.ncf, model.ncf_grad, c,
                                              (pointwise_grad(y, s) * w).astype(dt))

    d_uf = _represent_backward(model, "user", u_feats, u_cache, du)
    scatter_feature_grads(model, "user", batch.users, d_uf)
    d_if = _represent_backward(model, "item", i_feats, i_cache, di)
    scatter_feature_grads(model, "item", batch.items, d_if)

    lam = cfg.effective_lam
    if lam > 0:
        rec += _regularize(model, lam)

    ss = 0.0
    gamma = cfg.effective_gamma
    if model.selfsup_active and aux is not None and len(aux.items):
        ss = _selfsup_step(model, aux, gamma)

    model.grads["embedding/item"][model.features.cold_mask] = 0.0
    return StepLoss(rec + gamma * ss, rec, ss)


def _regularize(model, lam):
    warm = ~model.features.cold_mask
    total = 0.0
    for name in ("embedding/user", "embedding/item", "embedding/user_attr",
                 "embedding/item_attr"):
        table = model.params[name]
        if name == "embedding/item":
            total += float(np.sum(np.square(table[warm])))
        else:
            total += float(np.sum(np.square(table)))
        model.grads[name] += (2.0 * lam) * table
    return lam * total


def _selfsup_step(model, aux, gamma):
    k = model.item_fields
    x_feats = gather_features(model, "item", aux.items, with_collab=False)
    x = x_feats.reshape(len(aux.items), k * model.dim)
    q_pos = model.item_emb[aux.items]
    q_neg = model.item_emb[aux.neg_items]
    loss, cache = self_supervision_forward(model.selfsup, x, q_pos, q_neg, aux.eps)
    dx, dq_pos, dq_neg = self_supervision_backward(model.selfsup, model.selfsup_grad,
                                                   cache, scale=gamma)
    g_item = model.grads["embedding/item"]
    kernels.scatter_add_rows(g_item, aux.items, dq_pos)
    kernels.scatter_add_rows(g_item, aux.neg_items, dq_neg)
    scatter_feature_grads(model, "item", aux.items, dx.reshape(x_feats.shape),
                          with_collab=False)
    return loss


def adam_step(model: ModelState):
    model.step += 1
    kernels.adam_update(model.theta, model.grad, model.m, model.v, model.config.lr,
                        ADAM_BETA1, ADAM_BETA2, ADAM_EPS, model.step)


def project_embeddings(model: ModelState):
    """Unit-ball projection of the user and item embedding tables.

    Attribute tables stay unconstrained: they are shared by many entities and
    clipping them too shrinks averaged representations below the margin.
    """
    clip_to_unit_ball(model.user_emb)
    clip_to_unit_ball(model.item_emb, skip=model.features.cold_mask)


# -- training loop -----------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rec: float
    ss: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_tsv(self):
        lines = ["epoch\tloss\tL_rec\tL_SS\tseconds"]
        lines += [f"{r.epoch}\t{r.loss!r}\t{r.rec!r}\t{r.ss!r}\t{r.seconds:.3f}"
                  for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text):
        rows = [line.split("\t") for line in text.strip().splitlines()[1:]]
        return cls([EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                                float(r[4])) for r in rows])


def train(model: ModelState, split: Split, config: TrainConfig | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Run the configured number of epochs in place; returns (model, history).

    Raises DivergenceError as soon as a batch loss is not finite.
    """
    cfg = config or model.config
    if config is not None and config != model.config:
        model = model.with_config(**{k: getattr(config, k)
                                     for k in config.__dataclass_fields__})
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    history = TrainHistory()
    mode = cfg.backbone.objective
    for epoch in range(1, cfg.num_epochs + 1):
        start = time.perf_counter()
        tot = rec = ss = 0.0
        n = 0
        for step, batch in enumerate(make_batches(split, mode, cfg.batch_size, rng,
                                                  cfg.negatives), start=1):
            aux = make_selfsup_batch(model, batch, rng) if model.selfsup_active else None
            out = loss_and_grad(model, batch, aux)
            if not math.isfinite(out.total):
                raise DivergenceError(epoch, step, out.total)
            adam_step(model)
            if cfg.backbone.kind == "cml":
                project_embeddings(model)
            tot += out.total
            rec += out.rec
            ss += out.ss
            n += 1
        n = max(n, 1)
        record = EpochRecord(epoch, tot / n, rec / n, ss / n, time.perf_counter() - start)
        history.records.append(record)
        log.info("epoch %d loss %.5f rec %.5f ss %.5f (%.1fs)", epoch, record.loss,
                 record.rec, record.ss, record.seconds)
        if on_epoch is not None:
            on_epoch(record)
    return model, history


# -- gradient verification ---------------------------------------------------

def relative_error(analytic, numeric, floor=1e-10):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numerical_gradient(fn, array, eps=1e-4):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``array`` (in place)."""
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn()
        flat[i] = old - eps
        lo = fn()
        flat[i] = old
        g[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_gradients(fn, grad_fn, arrays: dict, eps=1e-4):
    """Per-array relative error between ``grad_fn()`` and central differences."""
    analytic = {k: np.array(v, dtype=np.float64) for k, v in grad_fn().items()}
    return {k: relative_error(analytic[k], numerical_gradient(fn, arrays[k], eps))
            for k in arrays}


def gradient_check(model: ModelState, batch: TrainBatch, aux: SelfSupBatch | None = None,
                   eps=1e-4, report=False):
    """Max relative error of the analytic joint-loss gradient against
    central differences, over every parameter array (float64 copy)."""
    m64 = model.astype(np.float64)
    if aux is not None:
        aux = SelfSupBatch(aux.items, aux.neg_items, aux.eps.astype(np.float64))
    loss_and_grad(m64, batch, aux)
    analytic = {k: v.copy() for k, v in m64.grads.items()}

    def fn():
        return loss_and_grad(m64, batch, aux).total

    errors = {k: relative_error(analytic[k], numerical_gradient(fn, m64.params[k], eps))
              for k in m64.params}
    worst = max(errors.values()) if errors else 0.0
    return (worst, errors, analytic) if report else worst
