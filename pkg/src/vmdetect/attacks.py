"""Gradient-sign attacks under an l-infinity budget.

All attacks differentiate the cross-entropy of the deterministic network
and accept either one input vector or a batch of rows.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NumericError
from .nn import Network, grad_input

KINDS = ("fgsm", "bim", "mim")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 0.1
    eps_iter: float | None = None  # defaults to epsilon / iters
    iters: int = 20
    decay: float = 1.0
    box: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if int(self.iters) < 1:
            raise ValueError("iters must be at least 1")
        if self.decay < 0:
            raise ValueError("decay must be nonnegative")
        lo, hi = self.box
        if not lo < hi:
            raise ValueError("box must satisfy lo < hi")
        step = self.epsilon / int(self.iters) if self.eps_iter is None else float(self.eps_iter)
        if step < 0 or step > self.epsilon:
            raise ValueError("eps_iter must lie in [0, epsilon]")
        object.__setattr__(self, "eps_iter", step)
        object.__setattr__(self, "iters", int(self.iters))
        object.__setattr__(self, "box", (float(lo), float(hi)))

    @property
    def name(self) -> str:
        if self.kind == "fgsm":
            return f"fgsm-eps{self.epsilon:g}"
        return f"{self.kind}-eps{self.epsilon:g}-it{self.iters}"

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["box"] = list(self.box)
        return d


@dataclass(frozen=True)
class AdversarialPair:
    """Clean and perturbed inputs with labels and full-network predictions.

    Fields hold a single example or aligned batches.
    """

    clean: np.ndarray
    adv: np.ndarray
    label: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray

    def __len__(self):
        return 1 if self.clean.ndim == 1 else self.clean.shape[0]


def _gradient(net, x, label):
    g = grad_input(net, x, label)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite attack gradient")
    return g


def _pair(net, x, adv, label):
    return AdversarialPair(x, adv, np.asarray(label), net.predict(x), net.predict(adv))


def _project(adv, x, cfg):
    adv = np.clip(adv, x - cfg.epsilon, x + cfg.epsilon)
    return np.clip(adv, *cfg.box)


def fgsm(net: Network, x, label, cfg: AttackConfig) -> AdversarialPair:
    x = np.asarray(x, dtype=float)
    adv = np.clip(x + cfg.epsilon * np.sign(_gradient(net, x, label)), *cfg.box)
    return _pair(net, x, adv, label)


def bim(net: Network, x, label, cfg: AttackConfig) -> AdversarialPair:
    x = np.asarray(x, dtype=float)
    adv = x.copy()
    for _ in range(cfg.iters):
        adv = np.clip(adv + cfg.eps_iter * np.sign(_gradient(net, adv, label)), *cfg.box)
        adv = _project(adv, x, cfg)
    return _pair(net, x, adv, label)


def momentum_update(g_acc, grad, decay: float) -> np.ndarray:
    """``decay * g_acc + grad / ||grad||_1`` per row; zero rows are left raw."""
    grad = np.asarray(grad, dtype=float)
    norm = np.sum(np.abs(grad), axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return decay * g_acc + grad / safe


def mim(net: Network, x, label, cfg: AttackConfig) -> AdversarialPair:
    x = np.asarray(x, dtype=float)
    adv = x.copy()
    g_acc = np.zeros_like(x)
    for _ in range(cfg.iters):
        g_acc = momentum_update(g_acc, _gradient(net, adv, label), cfg.decay)
        adv = np.clip(adv + cfg.eps_iter * np.sign(g_acc), *cfg.box)
        adv = _project(adv, x, cfg)
    return _pair(net, x, adv, label)


ATTACKS = {"fgsm": fgsm, "bim": bim, "mim": mim}


def run_attack(net: Network, X, labels, cfg: AttackConfig) -> AdversarialPair:
    return ATTACKS[cfg.kind](net, X, labels, cfg)


def save_adversarial(pair: AdversarialPair, out_dir, cfg: AttackConfig | None = None) -> None:
    """Write ``clean.csv``, ``adv.csv`` (label then features) and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clean = np.atleast_2d(pair.clean)
    adv = np.atleast_2d(pair.adv)
    labels = np.atleast_1d(pair.label)
    for name, X in (("clean.csv", clean), ("adv.csv", adv)):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"x{j}" for j in range(X.shape[1])])
            for lab, row in zip(labels, X):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])
    manifest = {
        "count": int(clean.shape[0]),
        "features": int(clean.shape[1]),
        "attack": cfg.as_dict() if cfg is not None else None,
        "clean_pred": np.atleast_1d(pair.clean_pred).astype(int).tolist(),
        "adv_pred": np.atleast_1d(pair.adv_pred).astype(int).tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_adversarial(in_dir) -> tuple[AdversarialPair, dict]:
    d = Path(in_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        arrays = []
        for name in ("clean.csv", "adv.csv"):
            with open(d / name, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            arrays.append(np.array(rows, dtype=float))
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read adversarial set in {d}: {exc}") from exc
    clean, adv = arrays
    if clean.shape != adv.shape or clean.shape[0] != manifest["count"]:
        raise DataFormatError(f"adversarial set in {d} is inconsistent")
    pair = AdversarialPair(
        clean[:, 1:],
        adv[:, 1:],
        clean[:, 0].astype(int),
        np.asarray(manifest["clean_pred"]),
        np.asarray(manifest["adv_pred"]),
    )
    return pair, manifest
