"""Two-stage training: intra-view pretraining per modality, then joint
inter-view training under the pairwise or factorized scheme.

Every random draw comes from a generator seeded by ``(config.seed, stage,
...)``, so a given dataset and config always produce the same model.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentKind, AugmentSpec, augment_batch
from .errors import ConfigError, InputError, TrainingAbort
from .estimators import Critic
from .numerics import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    mlp_backward_cached,
    mlp_forward,
    mlp_forward_cached,
)
from .objectives import Assembly, ObjectiveEval, Scheme, assemble, evaluate_objectives, intra_loss_grad
from .synth import SyntheticRegionDataset

_PRETRAIN, _JOINT, _CRITIC_INIT, _ENCODER_INIT = 1, 2, 3, 4


@dataclass(frozen=True)
class TrainConfig:
    scheme: Scheme = Scheme.PAIRWISE
    embed_dim: int = 32
    encoder_hidden: tuple[int, ...] = (64,)
    critic_hidden: int | None = None
    lr: float = 1e-4
    batch_size: int = 128
    pretrain_epochs: int = 100
    joint_epochs: int = 200
    alpha: float = 1.0
    tau: float = 0.07
    seed: int = 0
    disable_intra: bool = False
    disable_unique: bool = False
    club_pairwise: bool = False
    count_probability: float = 0.1
    noise_sigma: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        try:
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        except ValueError:
            raise ConfigError("scheme", f"must be 'pairwise' or 'factorized', got {self.scheme!r}") from None
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))
        if self.lr <= 0:
            raise ConfigError("lr", "must be > 0")
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim", "must be > 0")
        for name in ("pretrain_epochs", "joint_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2")
        if self.alpha < 0:
            raise ConfigError("alpha", "must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau", "must be > 0")
        if self.critic_hidden is not None and self.critic_hidden <= 0:
            raise ConfigError("critic_hidden", "must be > 0 or null")
        if any(h <= 0 for h in self.encoder_hidden):
            raise ConfigError("encoder_hidden", "widths must be > 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["scheme"] = self.scheme.value
        out["encoder_hidden"] = list(self.encoder_hidden)
        out["scale_range"] = list(self.scale_range)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kwargs = {}
        for key, value in obj.items():
            default = known[key].default
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(key, f"expected a boolean, got {value!r}")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(key, f"expected a number, got {value!r}")
                if isinstance(default, int) and key != "critic_hidden" and not float(value).is_integer():
                    raise ConfigError(key, f"expected an integer, got {value!r}")
                value = type(default)(value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_json(obj)


def encoder_spec(d_in: int, config: TrainConfig) -> MlpSpec:
    return MlpSpec((d_in, *config.encoder_hidden, config.embed_dim))


def augment_spec(modality: int, dataset: SyntheticRegionDataset, config: TrainConfig) -> AugmentSpec:
    if modality in dataset.count_modalities:
        return AugmentSpec(AugmentKind.COUNT_PERTURB, probability=config.count_probability)
    return AugmentSpec(AugmentKind.FEATURE_NOISE, noise_sigma=config.noise_sigma,
                       scale_range=config.scale_range)


@dataclass
class Encoders:
    """Per-modality encoders with the input standardization they were trained with."""

    specs: list[MlpSpec]
    params: list[MlpParams]
    mean: list[np.ndarray]
    std: list[np.ndarray]
    history: list[list[float]] = field(default_factory=list)

    def encode(self, i: int, raw: np.ndarray) -> np.ndarray:
        return mlp_forward(self.specs[i], self.params[i], (raw - self.mean[i]) / self.std[i])


@dataclass
class TrainedModel:
    config: TrainConfig
    encoders: Encoders
    assembly: Assembly
    critics: dict[str, Critic]
    history: list[dict[str, float]] = field(default_factory=list)
    losses: list[dict[str, float]] = field(default_factory=list)

    @property
    def objective_labels(self) -> list[str]:
        return [o.label for o in self.assembly.objectives]


def _standardization(dataset: SyntheticRegionDataset):
    mean = [x.mean(axis=0) for x in dataset.modalities]
    std = [np.where(x.std(axis=0) > 1e-8, x.std(axis=0), 1.0) for x in dataset.modalities]
    return mean, std


def _batches(n: int, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[k:k + batch] for k in range(0, n - batch + 1, batch)]


def init_encoders(dataset: SyntheticRegionDataset, config: TrainConfig) -> Encoders:
    specs = [encoder_spec(d, config) for d in dataset.dims]
    params = [init_mlp(s, np.random.default_rng([config.seed, _ENCODER_INIT, i])) for i, s in enumerate(specs)]
    mean, std = _standardization(dataset)
    return Encoders(specs, params, mean, std, [[] for _ in specs])


def _embed_views(enc: Encoders, i: int, x: np.ndarray, x_aug: np.ndarray):
    spec, p = enc.specs[i], enc.params[i]
    z, cache = mlp_forward_cached(spec, p, (x - enc.mean[i]) / enc.std[i])
    zp, cache_p = mlp_forward_cached(spec, p, (x_aug - enc.mean[i]) / enc.std[i])
    return z, zp, cache, cache_p


def _intra_terms(z, zp, tau):
    """Intra-view loss on L2-normalized embeddings and its gradients w.r.t. the raw ones."""
    zn, zpn = l2_normalize_rows(z), l2_normalize_rows(zp)
    value, dzn, dzpn = intra_loss_grad(zn, zpn, tau)
    return value, l2_normalize_rows_backward(z, dzn), l2_normalize_rows_backward(zp, dzpn)


def pretrain_intra(dataset: SyntheticRegionDataset, config: TrainConfig) -> Encoders:
    """Train each encoder independently on the intra-view loss.

    Returns the seeded random initialization untouched when intra-view
    learning is disabled or there are no pretraining epochs.
    """
    if dataset.n < 2:
        raise InputError("dataset is empty")
    if config.batch_size > dataset.n:
        raise InputError(f"batch size {config.batch_size} exceeds {dataset.n} regions")
    enc = init_encoders(dataset, config)
    if config.disable_intra or config.pretrain_epochs == 0:
        return enc
    for i in range(dataset.m):
        spec = enc.specs[i]
        arrays = enc.params[i].arrays()
        state = AdamState.init(arrays, lr=config.lr)
        aug = augment_spec(i, dataset, config)
        x_all = dataset.modalities[i]
        for epoch in range(config.pretrain_epochs):
            rng = np.random.default_rng([config.seed, _PRETRAIN, i, epoch])
            losses = []
            for idx in _batches(dataset.n, config.batch_size, rng):
                x = x_all[idx]
                x_aug = augment_batch(x, aug, rng)
                params = MlpParams.from_arrays(arrays)
                enc.params[i] = params
                z, zp, cache, cache_p = _embed_views(enc, i, x, x_aug)
                value, dz, dzp = _intra_terms(z, zp, config.tau)
                if not np.isfinite(value):
                    raise TrainingAbort(epoch, f"intra(modality {i + 1})", "intra", value)
                g1, _ = mlp_backward_cached(spec, params, cache, dz)
                g2, _ = mlp_backward_cached(spec, params, cache_p, dzp)
                grads = [a + b for a, b in zip(g1.arrays(), g2.arrays())]
                arrays, state = adam_step(arrays, grads, state)
                losses.append(value)
            enc.history[i].append(float(np.mean(losses)))
        enc.params[i] = MlpParams.from_arrays(arrays)
    return enc


def init_critics(assembly: Assembly, seed: int) -> dict[str, Critic]:
    critics = {}
    for k, t in enumerate(assembly.all_terms):
        spec = assembly.critic_specs[t.critic_id]
        d_a, d_b, d_c = assembly.critic_widths[t.critic_id]
        params = init_mlp(spec, np.random.default_rng([seed, _CRITIC_INIT, k]))
        critics[t.critic_id] = Critic(spec, params, d_a, d_b, d_c)
    return critics


def _copy_encoders(enc: Encoders) -> Encoders:
    return Encoders(list(enc.specs), [p.copy() for p in enc.params], list(enc.mean), list(enc.std),
                    [list(h) for h in enc.history])


def make_assembly(m: int, config: TrainConfig) -> Assembly:
    return assemble(m, config.scheme, config.embed_dim, critic_hidden=config.critic_hidden,
                    disable_unique=config.disable_unique)


@dataclass
class StepResult:
    loss: float
    intra: float
    objectives: ObjectiveEval
    encoder_grads: list[MlpParams]
    critic_grads: dict[str, MlpParams]


def joint_step(enc: Encoders, critics: dict[str, Critic], assembly: Assembly, xs: list[np.ndarray],
               xs_aug: list[np.ndarray], config: TrainConfig, *, club_seed: int = 0,
               club_critics: str = "fit") -> StepResult:
    """Loss ``alpha * intra - sum(objectives)`` on one batch and its descent gradients.

    With ``club_critics="exact"`` every gradient is the true gradient of the
    returned loss.
    """
    m = assembly.m
    zs, zps, caches = [], [], []
    for i in range(m):
        z, zp, c1, c2 = _embed_views(enc, i, xs[i], xs_aug[i])
        zs.append(z)
        zps.append(zp)
        caches.append((c1, c2))
    ev = evaluate_objectives(assembly, zs, zps, critics, grad=True, club_seed=club_seed,
                             club_pairwise=config.club_pairwise, club_critics=club_critics)
    d_z = [-g for g in ev.d_z]
    d_zp = [-g for g in ev.d_zp]
    intra = 0.0
    if not config.disable_intra and config.alpha > 0:
        for i in range(m):
            v, a, b = _intra_terms(zs[i], zps[i], config.tau)
            intra += v
            d_z[i] += config.alpha * a
            d_zp[i] += config.alpha * b
    enc_grads = []
    for i in range(m):
        g1, _ = mlp_backward_cached(enc.specs[i], enc.params[i], caches[i][0], d_z[i])
        g2, _ = mlp_backward_cached(enc.specs[i], enc.params[i], caches[i][1], d_zp[i])
        enc_grads.append(MlpParams.from_arrays([a + b for a, b in zip(g1.arrays(), g2.arrays())]))
    critic_grads = {c: MlpParams.from_arrays([-g for g in p.arrays()]) for c, p in ev.d_critic.items()}
    return StepResult(config.alpha * intra - ev.total, intra, ev, enc_grads, critic_grads)


def train_inter(encoders: Encoders, dataset: SyntheticRegionDataset, config: TrainConfig) -> TrainedModel:
    """Joint training of encoders and critics with a single Adam optimizer.

    Minimizes ``alpha * intra - sum(objectives)``; the intra term is
    dropped when ``disable_intra`` is set. Per-epoch means of every
    objective are logged in ``history``.
    """
    m = dataset.m
    if len(encoders.specs) != m or any(s.d_in != d for s, d in zip(encoders.specs, dataset.dims)):
        raise InputError("encoders do not match the dataset modalities")
    if config.batch_size > dataset.n:
        raise InputError(f"batch size {config.batch_size} exceeds {dataset.n} regions")
    enc = _copy_encoders(encoders)
    assembly = make_assembly(m, config)
    critics = init_critics(assembly, config.seed)
    ids = [t.critic_id for t in assembly.all_terms]
    model = TrainedModel(config, enc, assembly, critics)
    if config.joint_epochs == 0:
        return model

    layout = [len(p.arrays()) for p in enc.params] + [len(critics[c].params.arrays()) for c in ids]
    arrays = [a for p in enc.params for a in p.arrays()] + [a for c in ids for a in critics[c].params.arrays()]
    state = AdamState.init(arrays, lr=config.lr)
    augs = [augment_spec(i, dataset, config) for i in range(m)]
    step = 0

    for epoch in range(config.joint_epochs):
        rng = np.random.default_rng([config.seed, _JOINT, epoch])
        sums = {o.label: 0.0 for o in assembly.objectives}
        intra_sum, total_sum, nb = 0.0, 0.0, 0
        for idx in _batches(dataset.n, config.batch_size, rng):
            _unpack(arrays, layout, enc, critics, ids)
            xs = [x[idx] for x in dataset.modalities]
            xs_aug = [augment_batch(x, augs[i], rng) for i, x in enumerate(xs)]
            res = joint_step(enc, critics, assembly, xs, xs_aug, config, club_seed=step)
            _check_step(res, assembly, epoch)
            grads = [a for g in res.encoder_grads for a in g.arrays()]
            grads += [a for c in ids for a in res.critic_grads[c].arrays()]
            arrays, state = adam_step(arrays, grads, state)
            step += 1
            for label, v in res.objectives.objective_values.items():
                sums[label] += v
            intra_sum += res.intra
            total_sum += res.loss
            nb += 1
        model.history.append({label: v / nb for label, v in sums.items()})
        model.losses.append({"intra": intra_sum / nb, "total": total_sum / nb})
    _unpack(arrays, layout, enc, critics, ids)
    return model


def _check_step(res: StepResult, assembly: Assembly, epoch: int) -> None:
    for obj in assembly.objectives:
        for t in assembly.terms[obj.label]:
            v = res.objectives.term_values[t.critic_id]
            if not np.isfinite(v):
                raise TrainingAbort(epoch, obj.label, t.describe(), v)
    if not np.isfinite(res.intra):
        raise TrainingAbort(epoch, "intra", "intra", res.intra)
    for g in [*res.encoder_grads, *res.critic_grads.values()]:
        if not all(np.all(np.isfinite(a)) for a in g.arrays()):
            raise TrainingAbort(epoch, "gradient", "all", float("nan"))


def _unpack(arrays, layout, enc: Encoders, critics: dict[str, Critic], ids: list[str]) -> None:
    pos = 0
    m = len(enc.params)
    for k, size in enumerate(layout):
        chunk = MlpParams.from_arrays(arrays[pos:pos + size])
        if k < m:
            enc.params[k] = chunk
        else:
            cid = ids[k - m]
            critics[cid] = critics[cid].with_params(chunk)
        pos += size


def train(dataset: SyntheticRegionDataset, config: TrainConfig) -> TrainedModel:
    """Pretraining followed by joint training."""
    return train_inter(pretrain_intra(dataset, config), dataset, config)


def export_embeddings(model: TrainedModel | Encoders, dataset: SyntheticRegionDataset) -> np.ndarray:
    """Concatenate every modality encoder's output in modality order."""
    enc = model.encoders if isinstance(model, TrainedModel) else model
    if len(enc.specs) != dataset.m:
        raise InputError(f"model has {len(enc.specs)} encoders, dataset has {dataset.m} modalities")
    return np.concatenate([enc.encode(i, x) for i, x in enumerate(dataset.modalities)], axis=1)


# -- persistence -----------------------------------------------------------------

def _save_params(out: Path, prefix: str, params: MlpParams) -> list[str]:
    names = []
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        for tag, arr in (("W", w), ("b", b[None, :])):
            name = f"{prefix}_{tag}{k}.csv"
            np.savetxt(out / name, arr, fmt="%.17g", delimiter=",")
            names.append(name)
    return names


def _load_params(src: Path, prefix: str, n_layers: int) -> MlpParams:
    ws, bs = [], []
    for k in range(n_layers):
        ws.append(np.loadtxt(src / f"{prefix}_W{k}.csv", delimiter=",", ndmin=2))
        bs.append(np.loadtxt(src / f"{prefix}_b{k}.csv", delimiter=",", ndmin=1).reshape(-1))
    return MlpParams(ws, bs)


def write_traces(model: TrainedModel, path) -> None:
    """Long-form ``epoch,objective,value`` CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "objective", "value"])
        for epoch, row in enumerate(model.history):
            for label in model.objective_labels:
                w.writerow([epoch, label, repr(float(row[label]))])


def write_wide_traces(model: TrainedModel, path) -> None:
    """One column per objective."""
    labels = model.objective_labels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *labels])
        for epoch, row in enumerate(model.history):
            w.writerow([epoch, *(repr(float(row[lb])) for lb in labels)])


def write_losses(model: TrainedModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "intra", "total"])
        for epoch, loss in enumerate(model.losses):
            w.writerow([epoch, repr(float(loss["intra"])), repr(float(loss["total"]))])


def save_model(model: TrainedModel, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    enc = model.encoders
    for i, p in enumerate(enc.params):
        files += _save_params(out, f"encoder{i}", p)
        np.savetxt(out / f"encoder{i}_mean.csv", enc.mean[i][None, :], fmt="%.17g", delimiter=",")
        np.savetxt(out / f"encoder{i}_std.csv", enc.std[i][None, :], fmt="%.17g", delimiter=",")
        files += [f"encoder{i}_mean.csv", f"encoder{i}_std.csv"]
    ids = [t.critic_id for t in model.assembly.all_terms]
    for k, cid in enumerate(ids):
        files += _save_params(out, f"critic{k}", model.critics[cid].params)
    manifest = {
        "config": model.config.to_json(),
        "m": model.assembly.m,
        "encoders": [s.to_json() for s in enc.specs],
        "critics": [{"id": cid, "file_prefix": f"critic{k}", "spec": model.critics[cid].spec.to_json(),
                     "widths": list(model.assembly.critic_widths[cid])} for k, cid in enumerate(ids)],
        "objectives": model.objective_labels,
        "files": files,
    }
    (out / "model.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_traces(model, out / "traces.csv")
    write_wide_traces(model, out / "objectives.csv")
    write_losses(model, out / "losses.csv")
    extra = ["model.json", "traces.csv", "objectives.csv", "losses.csv"]
    return [out / f for f in files + extra]


def load_model(in_dir) -> TrainedModel:
    src = Path(in_dir)
    manifest = json.loads((src / "model.json").read_text())
    config = TrainConfig.from_json(manifest["config"])
    specs = [MlpSpec.from_json(s) for s in manifest["encoders"]]
    params, mean, std = [], [], []
    for i, s in enumerate(specs):
        params.append(_load_params(src, f"encoder{i}", s.n_layers))
        mean.append(np.loadtxt(src / f"encoder{i}_mean.csv", delimiter=",", ndmin=1).reshape(-1))
        std.append(np.loadtxt(src / f"encoder{i}_std.csv", delimiter=",", ndmin=1).reshape(-1))
    enc = Encoders(specs, params, mean, std, [[] for _ in specs])
    assembly = make_assembly(manifest["m"], config)
    critics = {}
    for entry in manifest["critics"]:
        spec = MlpSpec.from_json(entry["spec"])
        critics[entry["id"]] = Critic(spec, _load_params(src, entry["file_prefix"], spec.n_layers), *entry["widths"])
    model = TrainedModel(config, enc, assembly, critics)
    traces = src / "traces.csv"
    if traces.exists():
        rows: dict[int, dict[str, float]] = {}
        with open(traces) as fh:
            for rec in csv.DictReader(fh):
                rows.setdefault(int(rec["epoch"]), {})[rec["objective"]] = float(rec["value"])
        model.history = [rows[e] for e in sorted(rows)]
    return model
