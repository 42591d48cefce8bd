"""Seeded synthetic multimodal region datasets with known information structure.

Each region has a shared latent ``s`` and one unique latent ``u_i`` per
modality. Modality ``i`` observes ``A_i s + B_i u_i + noise``; modality 0 is
rendered as Poisson counts with a log link so count augmentations act on
real counts. The regression label mixes the shared and unique latents and
the class label bins it into five equal-frequency classes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, UnsupportedError
from .oracle import GaussianPair, gaussian_mi

N_CLASSES = 5


@dataclass
class GaussianFactorModel:
    """Linear-Gaussian latent factor model for ``m`` modalities.

    ``shared_loadings[i]`` is ``(dims[i], d_s)``, ``unique_loadings[i]`` is
    ``(dims[i], d_u[i])``. ``count_modalities`` lists modalities rendered as
    Poisson counts.
    """

    shared_loadings: list[np.ndarray]
    unique_loadings: list[np.ndarray]
    sigma_obs: float
    w_s: np.ndarray
    w_u: list[np.ndarray]
    sigma_y: float
    seed: int = 0
    count_modalities: tuple[int, ...] = (0,)

    def __post_init__(self):
        self.shared_loadings = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in self.shared_loadings]
        self.unique_loadings = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in self.unique_loadings]
        self.w_s = np.asarray(self.w_s, dtype=np.float64).reshape(-1)
        self.w_u = [np.asarray(w, dtype=np.float64).reshape(-1) for w in self.w_u]
        self.count_modalities = tuple(int(i) for i in self.count_modalities)
        m = len(self.shared_loadings)
        if len(self.unique_loadings) != m or len(self.w_u) != m:
            raise InputError("loadings and unique label weights must cover every modality")
        if self.sigma_obs < 0 or self.sigma_y < 0:
            raise InputError("noise scales must be >= 0")
        d_s = self.w_s.size
        for i, (a, b) in enumerate(zip(self.shared_loadings, self.unique_loadings)):
            if a.shape[1] != d_s or a.shape[0] != b.shape[0] or b.shape[1] != self.w_u[i].size:
                raise InputError(f"modality {i}: inconsistent loading shapes {a.shape}, {b.shape}")
            if a.size == 0 or b.size == 0:
                raise InputError(f"modality {i}: dimensions must be > 0")
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise InputError(f"modality {i}: loadings must be finite")
        if any(not 0 <= i < m for i in self.count_modalities):
            raise InputError(f"count modality index out of range: {self.count_modalities}")

    @property
    def m(self) -> int:
        return len(self.shared_loadings)

    @property
    def d_s(self) -> int:
        return self.w_s.size

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.shared_loadings)

    @property
    def d_u(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.unique_loadings)

    @classmethod
    def random(cls, m: int = 4, dim: int = 16, d_s: int = 4, d_u: int = 2, *, sigma_obs: float = 0.3,
               shared_weight: float = 1.0, unique_weight: float = 0.0, sigma_y: float = 0.1,
               unique_signal: tuple[int, ...] | None = None, seed: int = 0,
               count_modalities: tuple[int, ...] = (0,)) -> "GaussianFactorModel":
        """Random loadings with unit-scale rows.

        Each label weight vector is unit-norm times ``shared_weight`` or
        ``unique_weight``. ``unique_signal`` restricts nonzero unique label
        weights to the listed modalities (default: all).
        """
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_s + d_u)
        a = [rng.normal(0.0, scale, size=(dim, d_s)) for _ in range(m)]
        b = [rng.normal(0.0, scale, size=(dim, d_u)) for _ in range(m)]
        w_s = rng.normal(size=d_s)
        w_s *= shared_weight / np.linalg.norm(w_s)
        w_u = []
        for i in range(m):
            w = rng.normal(size=d_u)
            w *= unique_weight / np.linalg.norm(w)
            if unique_signal is not None and i not in unique_signal:
                w = np.zeros(d_u)
            w_u.append(w)
        return cls(a, b, sigma_obs, w_s, w_u, sigma_y, seed, count_modalities)

    def to_json(self) -> dict:
        return {
            "shared_loadings": [a.tolist() for a in self.shared_loadings],
            "unique_loadings": [b.tolist() for b in self.unique_loadings],
            "sigma_obs": self.sigma_obs,
            "w_s": self.w_s.tolist(),
            "w_u": [w.tolist() for w in self.w_u],
            "sigma_y": self.sigma_y,
            "seed": self.seed,
            "count_modalities": list(self.count_modalities),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GaussianFactorModel":
        return cls(obj["shared_loadings"], obj["unique_loadings"], obj["sigma_obs"], obj["w_s"],
                   obj["w_u"], obj["sigma_y"], obj.get("seed", 0), tuple(obj.get("count_modalities", (0,))))

    def covariance(self, a: int, b: int) -> np.ndarray:
        """Cross-covariance of the pre-count modality vectors ``a`` and ``b``."""
        cov = self.shared_loadings[a] @ self.shared_loadings[b].T
        if a == b:
            ub = self.unique_loadings[a]
            cov = cov + ub @ ub.T + self.sigma_obs ** 2 * np.eye(cov.shape[0])
        return cov


@dataclass
class SyntheticRegionDataset:
    modalities: list[np.ndarray]
    y: np.ndarray
    classes: np.ndarray
    count_modalities: tuple[int, ...] = ()
    seed: int = 0
    model: GaussianFactorModel | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.y.shape[0]
        for i, x in enumerate(self.modalities):
            if x.ndim != 2 or x.shape[0] != n:
                raise InputError(f"modality {i} has shape {x.shape}, expected {n} rows")
        if self.classes.shape != (n,):
            raise InputError("class labels must be one per region")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def m(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(x.shape[1] for x in self.modalities)

    def subset(self, modalities) -> "SyntheticRegionDataset":
        """Keep only the listed modalities, re-indexed in the given order."""
        modalities = list(modalities)
        counts = tuple(k for k, i in enumerate(modalities) if i in self.count_modalities)
        return SyntheticRegionDataset([self.modalities[i] for i in modalities], self.y, self.classes,
                                      counts, self.seed, None)

    def save(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for i, x in enumerate(self.modalities):
            path = out / f"modality_{i}.csv"
            fmt = "%d" if i in self.count_modalities else "%.17g"
            np.savetxt(path, x, fmt=fmt, delimiter=",")
            written.append(path)
        labels = out / "labels.csv"
        with open(labels, "w") as fh:
            fh.write("y,class\n")
            for yv, cv in zip(self.y, self.classes):
                fh.write(f"{float(yv)!r},{int(cv)}\n")
        written.append(labels)
        manifest = {
            "n": self.n,
            "m": self.m,
            "dims": list(self.dims),
            "count_modalities": list(self.count_modalities),
            "seed": self.seed,
            "files": [p.name for p in written],
            "sha256": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in written},
            "model": self.model.to_json() if self.model is not None else None,
        }
        mpath = out / "dataset.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(mpath)
        return written

    @classmethod
    def load(cls, in_dir) -> "SyntheticRegionDataset":
        src = Path(in_dir)
        manifest = json.loads((src / "dataset.json").read_text())
        mods = []
        for i in range(manifest["m"]):
            x = np.loadtxt(src / f"modality_{i}.csv", delimiter=",", ndmin=2, dtype=np.float64)
            mods.append(x)
        raw = np.genfromtxt(src / "labels.csv", delimiter=",", skip_header=1, ndmin=2, dtype=np.float64)
        model = GaussianFactorModel.from_json(manifest["model"]) if manifest.get("model") else None
        return cls(mods, raw[:, 0].copy(), raw[:, 1].astype(np.int64), tuple(manifest["count_modalities"]),
                   manifest["seed"], model)


def quantile_classes(y: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Equal-frequency bins by rank (ties broken by index)."""
    n = y.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(y, kind="stable")] = np.arange(n)
    return (ranks * n_classes) // n


def generate(model: GaussianFactorModel, n: int, seed: int) -> SyntheticRegionDataset:
    """Draw ``n`` regions.

    Region ``r`` uses its own generator seeded with ``(seed, r)``, so the
    output does not depend on the order regions are produced in.
    """
    if n < 2:
        raise InputError(f"need at least 2 regions, got {n}")
    m, d_s, d_u, dims = model.m, model.d_s, model.d_u, model.dims
    width = d_s + sum(d_u) + sum(dims) + 1
    draws = np.empty((n, width))
    for r in range(n):
        draws[r] = np.random.default_rng([seed, r]).standard_normal(width)
    s = draws[:, :d_s]
    col = d_s
    us = []
    for i in range(m):
        us.append(draws[:, col:col + d_u[i]])
        col += d_u[i]
    mods = []
    for i in range(m):
        noise = draws[:, col:col + dims[i]]
        col += dims[i]
        mods.append(s @ model.shared_loadings[i].T + us[i] @ model.unique_loadings[i].T
                    + model.sigma_obs * noise)
    y = s @ model.w_s + sum(us[i] @ model.w_u[i] for i in range(m)) + model.sigma_y * draws[:, col]
    counts_rng = np.random.default_rng([seed, n, 7])
    for i in model.count_modalities:
        mods[i] = counts_rng.poisson(np.exp(mods[i])).astype(np.float64)
    return SyntheticRegionDataset(mods, y, quantile_classes(y), model.count_modalities, seed, model)


def _real(model: GaussianFactorModel, *idx: int) -> None:
    for i in idx:
        if not 0 <= i < model.m:
            raise InputError(f"modality {i} out of range")
        if i in model.count_modalities:
            raise UnsupportedError(f"modality {i} is a count modality; no exact MI oracle")


def ground_truth_mi(model: GaussianFactorModel, a: int, b: int) -> float:
    """Exact MI in nats between two real-valued modalities."""
    if a == b:
        raise InputError("ground_truth_mi needs two distinct modalities")
    _real(model, a, b)
    caa, cbb, cab = model.covariance(a, a), model.covariance(b, b), model.covariance(a, b)
    cov = np.block([[caa, cab], [cab.T, cbb]])
    return gaussian_mi(GaussianPair(cov, caa.shape[0]))


def unique_latent_mi(model: GaussianFactorModel, a: int) -> float:
    """Exact MI in nats between real modality ``a`` and its unique latent."""
    _real(model, a)
    caa = model.covariance(a, a)
    bu = model.unique_loadings[a]
    cov = np.block([[caa, bu], [bu.T, np.eye(bu.shape[1])]])
    return gaussian_mi(GaussianPair(cov, caa.shape[0]))
