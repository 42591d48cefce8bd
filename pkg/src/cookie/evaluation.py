"""Downstream probes, ablation and modality sweeps, and complexity accounting."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, StratificationError
from .numerics import (AdamState, MlpParams, MlpSpec, adam_step, init_mlp, mlp_backward_cached,
                       mlp_forward_cached, softmax_rows)
from .objectives import Assembly, Scheme, assemble
from .synth import N_CLASSES, SyntheticRegionDataset
from .train import TrainConfig, TrainedModel, encoder_spec, export_embeddings, train

METRIC_EPS = 1e-12


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded random partition of ``range(n)`` into ``folds`` near-equal test folds."""
    if folds < 2:
        raise InputError(f"need at least 2 folds, got {folds}")
    if n < folds:
        raise InputError(f"{n} samples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _train_test(n: int, folds: int, seed: int):
    parts = fold_indices(n, folds, seed)
    for k, test in enumerate(parts):
        yield np.concatenate([p for j, p in enumerate(parts) if j != k]), test


def _summary(rows: list[dict], keys) -> dict:
    out = {}
    for key in keys:
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    return out


# -- regression ---------------------------------------------------------------

@dataclass
class RegressionReport:
    folds: list[dict]
    mean: dict
    constant_labels: bool = False

    @property
    def r2(self) -> float:
        return self.mean["r2_mean"]


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float = 1.0):
    """Closed-form ridge on standardized features; returns a predictor."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xs = (x - mu) / sd
    y0 = y.mean()
    coef = np.linalg.solve(xs.T @ xs + lam * np.eye(x.shape[1]), xs.T @ (y - y0))
    return lambda xt: ((xt - mu) / sd) @ coef + y0


def regression_metrics(y: np.ndarray, pred: np.ndarray) -> dict:
    err = pred - y
    sst = float(((y - y.mean()) ** 2).sum())
    return {
        "mae": float(np.abs(err).mean()),
        "rmse": float(np.sqrt((err ** 2).mean())),
        "r2": 1.0 - float((err ** 2).sum()) / sst if sst > 0 else float("nan"),
    }


def regression_probe(embeddings, labels, folds: int = 5, seed: int = 0, lam: float = 1.0) -> RegressionReport:
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise InputError(f"embeddings {x.shape} do not match {y.size} labels")
    constant = bool(np.ptp(y) == 0)
    rows = []
    for k, (tr, te) in enumerate(_train_test(y.size, folds, seed)):
        pred = ridge_fit(x[tr], y[tr], lam)(x[te])
        rows.append({"fold": k, **regression_metrics(y[te], pred)})
    constant = constant or any(np.isnan(r["r2"]) for r in rows)
    return RegressionReport(rows, _summary(rows, ("mae", "rmse", "r2")), constant)


# -- classification -------------------------------------------------------------

@dataclass
class ClassificationReport:
    folds: list[dict]
    mean: dict

    @property
    def cosine(self) -> float:
        return self.mean["cosine_mean"]


def distribution_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """Mean per-row L1 distance, KL(target || pred) and cosine similarity."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"prediction {pred.shape} and target {target.shape} shapes differ")
    l1 = np.abs(pred - target).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(target > 0, target * (np.log(target) - np.log(np.maximum(pred, METRIC_EPS))), 0.0)
    kl = terms.sum(axis=1)
    norms = np.linalg.norm(pred, axis=1) * np.linalg.norm(target, axis=1)
    cos = np.einsum("ij,ij->i", pred, target) / np.maximum(norms, METRIC_EPS)
    return {"l1": float(l1.mean()), "kl": float(max(kl.mean(), 0.0)), "cosine": float(cos.mean())}


def one_hot(classes: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((classes.size, n_classes))
    out[np.arange(classes.size), classes] = 1.0
    return out


def fit_classifier(x: np.ndarray, target: np.ndarray, *, hidden: int = 64, epochs: int = 300,
                   lr: float = 1e-2, seed: int = 0):
    """Two-layer MLP fitted full-batch with Adam on KL(target || softmax)."""
    mu = x.mean(axis=0)
    sd = np.where(x.std(axis=0) > 1e-12, x.std(axis=0), 1.0)
    xs = (x - mu) / sd
    spec = MlpSpec((x.shape[1], hidden, target.shape[1]))
    arrays = init_mlp(spec, np.random.default_rng([seed, 11])).arrays()
    state = AdamState.init(arrays, lr=lr)
    n = x.shape[0]
    for _ in range(epochs):
        params = MlpParams.from_arrays(arrays)
        logits, cache = mlp_forward_cached(spec, params, xs)
        grads, _ = mlp_backward_cached(spec, params, cache, (softmax_rows(logits) - target) / n)
        arrays, state = adam_step(arrays, grads.arrays(), state)
    params = MlpParams.from_arrays(arrays)
    return lambda xt: softmax_rows(mlp_forward_cached(spec, params, (xt - mu) / sd)[0])


def classification_probe(embeddings, classes, folds: int = 5, seed: int = 0, *, n_classes: int = N_CLASSES,
                         hidden: int = 64, epochs: int = 300, lr: float = 1e-2) -> ClassificationReport:
    x = np.asarray(embeddings, dtype=np.float64)
    c = np.asarray(classes).astype(np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != c.size:
        raise InputError(f"embeddings {x.shape} do not match {c.size} labels")
    if c.min() < 0 or c.max() >= n_classes:
        raise InputError(f"class labels must lie in [0, {n_classes})")
    target = one_hot(c, n_classes)
    splits = list(_train_test(c.size, folds, seed))
    for k, (tr, _) in enumerate(splits):
        missing = sorted(set(range(n_classes)) - set(np.unique(c[tr]).tolist()))
        if missing:
            raise StratificationError(f"training fold {k} has no samples of class(es) {missing}")
    rows = []
    for k, (tr, te) in enumerate(splits):
        predict = fit_classifier(x[tr], target[tr], hidden=hidden, epochs=epochs, lr=lr, seed=seed * 100 + k)
        rows.append({"fold": k, **distribution_metrics(predict(x[te]), target[te])})
    return ClassificationReport(rows, _summary(rows, ("l1", "kl", "cosine")))


# -- complexity -------------------------------------------------------------------

def layer_flops(spec: MlpSpec) -> int:
    """Per-sample forward cost: 2*in*out per affine layer plus one op per output."""
    dims = spec.layer_dims
    return sum(2 * a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class ComplexityReport:
    scheme: str
    m: int
    n_objectives: int
    n_terms: int
    params: int
    flops: int

    def to_json(self) -> dict:
        return asdict(self)


def _specs(model_or_assembly, encoders=None) -> tuple[list[MlpSpec], Assembly]:
    if isinstance(model_or_assembly, TrainedModel):
        return list(model_or_assembly.encoders.specs), model_or_assembly.assembly
    return list(encoders or []), model_or_assembly


def count_params(model_or_assembly, encoders: list[MlpSpec] | None = None) -> int:
    """Trainable scalars over encoders and every critic of every objective.

    Accepts a trained model, or an assembly plus the encoder specs.
    """
    encs, asm = _specs(model_or_assembly, encoders)
    return sum(s.n_params() for s in encs) + sum(asm.critic_specs[t.critic_id].n_params() for t in asm.all_terms)


def count_flops(model_or_assembly, batch: int = 1, encoders: list[MlpSpec] | None = None) -> int:
    """Forward cost of one pass of ``batch`` samples through every encoder and critic."""
    if batch < 1:
        raise InputError("batch must be >= 1")
    encs, asm = _specs(model_or_assembly, encoders)
    per = sum(layer_flops(s) for s in encs) + sum(layer_flops(asm.critic_specs[t.critic_id]) for t in asm.all_terms)
    return batch * per


def complexity_report(m: int, scheme: Scheme | str, config: TrainConfig, input_dims, batch: int = 1) -> ComplexityReport:
    dims = (int(input_dims),) * m if np.isscalar(input_dims) else tuple(input_dims)
    encs = [encoder_spec(d, config) for d in dims]
    asm = assemble(m, scheme, config.embed_dim, critic_hidden=config.critic_hidden,
                   disable_unique=config.disable_unique)
    return ComplexityReport(Scheme(scheme).value, m, len(asm.objectives), len(asm.all_terms),
                            count_params(asm, encs), count_flops(asm, batch, encs))


_NUMERIC_FIELDS = ("n_objectives", "n_terms", "params", "flops")


def percent_increase(base: ComplexityReport, other: ComplexityReport) -> dict[str, float]:
    """``100 * (other - base) / base`` for every count field."""
    if base.m != other.m:
        raise InputError(f"reports cover different modality counts ({base.m} vs {other.m})")
    out = {}
    for name in _NUMERIC_FIELDS:
        b, o = getattr(base, name), getattr(other, name)
        if b == 0:
            raise InputError(f"base {name} is 0; percent increase undefined")
        out[name] = 100.0 * (o - b) / b
    return out


def complexity_table(ms, config: TrainConfig, input_dim: int) -> list[dict]:
    """Pairwise vs factorized rows with the factorized percent increase."""
    rows = []
    for m in ms:
        p = complexity_report(m, Scheme.PAIRWISE, config, input_dim)
        f = complexity_report(m, Scheme.FACTORIZED, config, input_dim)
        inc = percent_increase(p, f)
        rows.append({"m": m, "pairwise_objectives": p.n_objectives, "factorized_objectives": f.n_objectives,
                     "pairwise_terms": p.n_terms, "factorized_terms": f.n_terms,
                     "pairwise_params": p.params, "factorized_params": f.params,
                     "pairwise_flops": p.flops, "factorized_flops": f.flops,
                     "params_increase_pct": inc["params"], "flops_increase_pct": inc["flops"]})
    return rows


# -- ablation and sweeps ----------------------------------------------------------

VARIANTS = {"cookie": {}, "ir": {"disable_intra": True}, "ur": {"disable_unique": True}}


@dataclass
class ArmResult:
    name: str
    seeds: list[int]
    r2: list[float] = field(default_factory=list)
    cosine: list[float] = field(default_factory=list)

    def row(self) -> dict:
        out = {"variant": self.name, "r2_mean": float(np.mean(self.r2)), "r2_std": float(np.std(self.r2))}
        if self.cosine:
            out["cosine_mean"] = float(np.mean(self.cosine))
            out["cosine_std"] = float(np.std(self.cosine))
        return out


def probe_run(dataset: SyntheticRegionDataset, config: TrainConfig, *, classification: bool = True,
              folds: int = 5) -> tuple[float, float | None]:
    model = train(dataset, config)
    emb = export_embeddings(model, dataset)
    r2 = regression_probe(emb, dataset.y, folds, config.seed).r2
    cos = classification_probe(emb, dataset.classes, folds, config.seed).cosine if classification else None
    return r2, cos


def run_ablation(dataset: SyntheticRegionDataset, config: TrainConfig, seeds=(0, 1, 2, 3, 4), *,
                 variants=("cookie", "ir", "ur"), classification: bool = True) -> list[ArmResult]:
    """Train and probe each variant for every seed; only the ablation flags differ between arms."""
    arms = []
    for name in variants:
        if name not in VARIANTS:
            raise InputError(f"unknown variant {name!r}")
        arm = ArmResult(name, list(seeds))
        for s in seeds:
            flags = {"disable_intra": False, "disable_unique": False, **VARIANTS[name]}
            cfg = config.replace(seed=s, **flags)
            r2, cos = probe_run(dataset, cfg, classification=classification)
            arm.r2.append(r2)
            if cos is not None:
                arm.cosine.append(cos)
        arms.append(arm)
    return arms


def modality_sweep(dataset: SyntheticRegionDataset, config: TrainConfig, subsets, seeds=(0,), *,
                   classification: bool = False) -> list[dict]:
    """One train and probe run per modality subset (and seed)."""
    unique: list[tuple[int, ...]] = []
    for sub in subsets:
        key = tuple(sorted(int(i) for i in sub))
        if len(set(key)) < 2:
            raise InputError(f"modality subset {sub} has fewer than 2 modalities")
        if any(not 0 <= i < dataset.m for i in key):
            raise InputError(f"modality subset {sub} out of range for {dataset.m} modalities")
        if key in unique:
            label = "+".join(str(i + 1) for i in key)
            warnings.warn(f"duplicate modality subset {label} ignored", stacklevel=2)
            continue
        unique.append(key)
    rows = []
    for key in unique:
        sub = dataset.subset(key)
        arm = ArmResult("+".join(str(i + 1) for i in key), list(seeds))
        for s in seeds:
            r2, cos = probe_run(sub, config.replace(seed=s), classification=classification)
            arm.r2.append(r2)
            if cos is not None:
                arm.cosine.append(cos)
        row = arm.row()
        rows.append({"subset": row.pop("variant"), "n_modalities": len(key), **row})
    return rows


# -- output ---------------------------------------------------------------------

def write_csv(rows: list[dict], path, columns=None) -> Path:
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
