"""Training loop, Adam optimizer, metrics, and the k-fold CV harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from . import autodiff as ad
from . import model as model_mod
from .data import Dataset, stratified_split
from .errors import DataError, NumericError, SplitError
from .model import ModelConfig, ModelInputs
from .rri import build_edge_matrix

_allocator_tuned = False


def _tune_allocator() -> None:
    """Keep large malloc blocks on the heap instead of mmap round-trips.

    The training loop allocates and frees dozens of multi-megabyte arrays
    per epoch; with glibc defaults each one is a fresh mmap whose pages
    must be faulted in, which dominates the epoch time on this workload.
    Raising the mmap/trim thresholds lets the allocator recycle them.
    No-op on non-glibc platforms.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass

DEFAULT_LAMBDA_T = 0.2
DEFAULT_LAMBDA_R = 0.1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 2000
    eta1: float = 1.0
    eta2: float = 1.0
    seed: int = 0
    lambda_t: float = DEFAULT_LAMBDA_T
    lambda_r: float = DEFAULT_LAMBDA_R

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0:
            raise DataError("learning rate and epochs must be positive")
        if self.eta1 < 0 or self.eta2 < 0:
            raise DataError("loss weights must be nonnegative")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with decoupled weight decay."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; step aborted")
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# input preparation

@dataclass
class Normalizer:
    """Per-modality, per-column standardization fit on the training split."""

    means: list[np.ndarray]
    stds: list[np.ndarray]

    @classmethod
    def fit(cls, dataset: Dataset, idx: np.ndarray) -> "Normalizer":
        means, stds = [], []
        for fm in dataset.modalities:
            sub = fm.values[idx]
            mu = sub.mean(axis=0)
            sd = sub.std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            means.append(mu)
            stds.append(sd)
        return cls(means, stds)

    def apply(self, dataset: Dataset, idx: np.ndarray) -> list[np.ndarray]:
        return [
            (fm.values[idx] - mu) / sd
            for fm, mu, sd in zip(dataset.modalities, self.means, self.stds)
        ]


def build_graphs(dataset: Dataset, train_idx: np.ndarray, lambda_t: float,
                 lambda_r: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Edge matrices: transcriptomic from expression, radiomic per modality.

    Radiomic correlations are computed on the training split only, so a
    held-out fold never shapes the graph it is evaluated on.
    """
    adj_t = build_edge_matrix(dataset.expression.values, lambda_t, "transcriptomic").adjacency
    adj_r = [
        build_edge_matrix(fm.values[train_idx], lambda_r, fm.modality_id).adjacency
        for fm in dataset.modalities
    ]
    return adj_t, adj_r


@dataclass
class TrainedModel:
    params: dict[str, np.ndarray]
    cfg: ModelConfig
    normalizer: Normalizer
    adj_t: np.ndarray
    adj_r: list[np.ndarray]
    history: list[float]


def make_inputs(trained_or_norm, dataset: Dataset, idx: np.ndarray,
                adj_t=None, adj_r=None) -> ModelInputs:
    if isinstance(trained_or_norm, TrainedModel):
        norm, adj_t, adj_r = trained_or_norm.normalizer, trained_or_norm.adj_t, trained_or_norm.adj_r
    else:
        norm = trained_or_norm
    return ModelInputs(features=norm.apply(dataset, idx), adj_t=adj_t, adj_r=adj_r)


def train(dataset: Dataset, cfg: ModelConfig, train_cfg: TrainConfig,
          train_idx: np.ndarray | None = None) -> TrainedModel:
    """Full-batch training; deterministic given (dataset, seed)."""
    if dataset.n_classes < 2:
        raise DataError("training needs at least two classes")
    if train_idx is None:
        train_idx = np.arange(dataset.n_samples)
    cfg.eta1, cfg.eta2 = train_cfg.eta1, train_cfg.eta2
    norm = Normalizer.fit(dataset, train_idx)
    adj_t, adj_r = build_graphs(dataset, train_idx, train_cfg.lambda_t, train_cfg.lambda_r)
    inputs = make_inputs(norm, dataset, train_idx, adj_t, adj_r)
    labels = dataset.labels[train_idx]

    params = model_mod.init_params(cfg, train_cfg.seed)
    state = AdamState()
    history: list[float] = []
    _tune_allocator()
    # skip per-primitive finiteness checks in the hot loop; the loss is
    # checked every epoch and adam_step rejects non-finite gradients
    with ad.finite_checks(False):
        for epoch in range(train_cfg.epochs):
            wrapped = model_mod.wrap_params(params)
            loss = model_mod.total_loss(wrapped, inputs, cfg, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            ad.backward(loss)
            grads = ad.collect_gradients(wrapped)
            adam_step(params, grads, state, train_cfg.learning_rate,
                      train_cfg.weight_decay)
            history.append(value)
    return TrainedModel(params, cfg, norm, adj_t, adj_r, history)


def predict_proba(trained: TrainedModel, dataset: Dataset, idx: np.ndarray) -> np.ndarray:
    inputs = make_inputs(trained, dataset, idx)
    wrapped = model_mod.wrap_params(trained.params, requires_grad=False)
    out = model_mod.forward(wrapped, inputs, trained.cfg, labels=None)
    return ad.softmax(out.final_logits, axis=-1).data


# ---------------------------------------------------------------------------
# metrics

def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return float((y_true == y_pred).mean())


def f1_score(y_true, y_pred) -> float:
    """Binary F1 of class 1; weighted macro average when C > 2."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = np.unique(y_true)

    def _f1_for(c):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        if tp == 0:
            return 0.0
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        return 2 * precision * recall / (precision + recall)

    if classes.size <= 2:
        return float(_f1_for(1))
    weights = np.array([(y_true == c).mean() for c in classes])
    return float(sum(w * _f1_for(c) for c, w in zip(classes, weights)))


def auc_score(y_true, scores) -> float:
    """Mann-Whitney AUC of the positive-class score, ties credited 0.5."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[y_true == 1]
    neg = scores[y_true != 1]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUC undefined: evaluation set has a single class")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def evaluate(trained: TrainedModel, dataset: Dataset, idx: np.ndarray):
    """(acc, f1, auc) on the given sample indices."""
    probs = predict_proba(trained, dataset, idx)
    y = dataset.labels[idx]
    y_pred = probs.argmax(axis=1)
    acc = accuracy(y, y_pred)
    f1 = f1_score(y, y_pred)
    if dataset.n_classes == 2:
        auc = auc_score(y, probs[:, 1])
    else:  # macro one-vs-rest extension; the reference tasks are binary
        aucs = [auc_score((y == c).astype(int), probs[:, c]) for c in range(probs.shape[1])]
        auc = float(np.mean(aucs))
    return acc, f1, auc


@dataclass
class MetricsReport:
    task: str
    per_fold: list[tuple[float, float, float]]

    def _column(self, i: int) -> np.ndarray:
        return np.array([f[i] for f in self.per_fold])

    @property
    def acc(self) -> tuple[float, float]:
        col = self._column(0)
        return float(col.mean()), float(col.std())

    @property
    def f1(self) -> tuple[float, float]:
        col = self._column(1)
        return float(col.mean()), float(col.std())

    @property
    def auc(self) -> tuple[float, float]:
        col = self._column(2)
        return float(col.mean()), float(col.std())

    def to_csv(self) -> str:
        lines = ["task,fold,acc,f1,auc"]
        for i, (a, f, u) in enumerate(self.per_fold):
            lines.append(f"{self.task},{i},{a:.10g},{f:.10g},{u:.10g}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        (am, asd), (fm, fsd), (um, usd) = self.acc, self.f1, self.auc
        return (
            f"{self.task}: ACC {100*am:.1f}±{100*asd:.1f}  "
            f"F1 {100*fm:.1f}±{100*fsd:.1f}  AUC {100*um:.1f}±{100*usd:.1f}"
        )


def cross_validate(dataset: Dataset, k: int, cfg: ModelConfig,
                   train_cfg: TrainConfig, task: str = "synthetic") -> MetricsReport:
    """k independent trainings, one per held-out stratified fold."""
    folds = stratified_split(dataset.labels, k, train_cfg.seed)
    per_fold = []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        fold_cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate,
            weight_decay=train_cfg.weight_decay,
            epochs=train_cfg.epochs,
            eta1=train_cfg.eta1,
            eta2=train_cfg.eta2,
            seed=train_cfg.seed + i,
            lambda_t=train_cfg.lambda_t,
            lambda_r=train_cfg.lambda_r,
        )
        fresh_cfg = ModelConfig(**{**cfg.__dict__})
        trained = train(dataset, fresh_cfg, fold_cfg, train_idx)
        per_fold.append(evaluate(trained, dataset, test_idx))
    return MetricsReport(task=task, per_fold=per_fold)


def welch_t_test(a, b) -> float:
    """Two-sided Welch p-value (Welch-Satterthwaite degrees of freedom)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("each sample needs at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise DataError("degenerate t-test: both samples have zero variance")
    se2 = va / a.size + vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2 ** 2 / (
        (va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1)
    )
    return float(2.0 * scipy_stats.t.sf(abs(t), df))
