"""Detection evaluation: eval-set filtering, scoring, ROC/AUC and sweeps."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attacks import AdversarialPair
from .errors import NumericError, VMDetectError
from .metrics import ADVERSARIAL, CLEAN, score_batch
from .nn import Network
from .sampling import SamplingConfig, run_mc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalSet:
    """Inputs classified correctly when clean and wrongly after the attack."""

    ids: tuple[str, ...]
    clean: np.ndarray
    adv: np.ndarray
    labels: np.ndarray
    n_candidates: int = 0

    def __len__(self):
        return len(self.ids)

    @classmethod
    def union(cls, sets: Iterable["EvalSet"]) -> "EvalSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls((), np.empty((0, 0)), np.empty((0, 0)), np.empty(0, dtype=int))
        return cls(
            tuple(itertools.chain.from_iterable(s.ids for s in sets)),
            np.vstack([s.clean for s in sets]),
            np.vstack([s.adv for s in sets]),
            np.concatenate([s.labels for s in sets]),
            sum(s.n_candidates for s in sets),
        )


def build_eval_set(net: Network, pair: AdversarialPair, name: str = "adv") -> EvalSet:
    """Keep test inputs that the full network gets right clean and wrong attacked."""
    clean = np.atleast_2d(pair.clean)
    adv = np.atleast_2d(pair.adv)
    labels = np.atleast_1d(pair.label)
    keep = (net.predict(clean) == labels) & (net.predict(adv) != labels)
    idx = np.flatnonzero(keep)
    log.info("%s: %d of %d inputs enter the eval set", name, idx.size, labels.size)
    if idx.size == 0:
        log.warning("%s: eval set is empty; nothing to evaluate for this attack", name)
    return EvalSet(
        tuple(f"{name}/{i}" for i in idx), clean[idx], adv[idx], labels[idx], n_candidates=int(labels.size)
    )


@dataclass(frozen=True)
class DetectionRecord:
    input_id: str
    truth: str
    mi: float
    var_trace: float

    def score(self, statistic: str = "mi") -> float:
        return self.mi if statistic == "mi" else self.var_trace


def score_all(net: Network, eval_set: EvalSet, cfg: SamplingConfig) -> list[DetectionRecord]:
    """MC-score every clean and adversarial member of ``eval_set``.

    Input ``i`` uses RNG stream ``(i, 0)`` when clean and ``(i, 1)`` when
    adversarial, so results depend only on ``cfg`` and the eval set.
    """
    if len(eval_set) == 0:
        raise ValueError("eval set is empty")
    cfg.check_network(net)
    records = []
    for kind, truth, X in ((0, CLEAN, eval_set.clean), (1, ADVERSARIAL, eval_set.adv)):
        for i, (input_id, x) in enumerate(zip(eval_set.ids, X)):
            try:
                s = score_batch(run_mc(net, x, cfg, stream=(i, kind)))
            except NumericError as exc:
                exc.input_id = input_id
                raise
            records.append(DetectionRecord(input_id, truth, s.mi, s.var_trace))
    return records


def write_scores(records: Sequence[DetectionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input_id", "truth", "mi", "var_trace"])
        for r in records:
            w.writerow([r.input_id, r.truth, repr(r.mi), repr(r.var_trace)])


def read_scores(path) -> list[DetectionRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [DetectionRecord(r["input_id"], r["truth"], float(r["mi"]), float(r["var_trace"])) for r in rows]


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by increasing threshold, from (1, 1) down to (0, 0)."""

    tau: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "fpr", "tpr"])
            for t, f, p in zip(self.tau, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "RocCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        tau = np.array([float(r["tau"]) for r in rows])
        fpr = np.array([float(r["fpr"]) for r in rows])
        tpr = np.array([float(r["tpr"]) for r in rows])
        return cls(tau, fpr, tpr, trapezoid_auc(fpr, tpr))


def trapezoid_auc(fpr, tpr) -> float:
    """Area under a curve traced with fpr non-increasing."""
    fpr = np.asarray(fpr, dtype=float)[::-1]
    tpr = np.asarray(tpr, dtype=float)[::-1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_from_scores(scores, is_adversarial) -> RocCurve:
    """Sweep the threshold over every distinct score (rule: flag if score > tau)."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(is_adversarial, dtype=bool)
    if np.any(np.isnan(scores)):
        raise ValueError("scores contain NaN")
    pos = np.sort(scores[positive])
    neg = np.sort(scores[~positive])
    if pos.size == 0 or neg.size == 0:
        raise ValueError("ROC needs both clean and adversarial records")
    tau = np.concatenate([[-math.inf], np.unique(scores), [math.inf]])
    tpr = (pos.size - np.searchsorted(pos, tau, side="right")) / pos.size
    fpr = (neg.size - np.searchsorted(neg, tau, side="right")) / neg.size
    return RocCurve(tau, fpr, tpr, trapezoid_auc(fpr, tpr))


def roc_and_auc(records: Sequence[DetectionRecord], statistic: str = "mi") -> RocCurve:
    scores = [r.score(statistic) for r in records]
    truth = [r.truth == ADVERSARIAL for r in records]
    return roc_from_scores(scores, truth)


@dataclass(frozen=True)
class SweepCell:
    method: str
    block: int
    param: float  # f for variance-minimizing methods, keep probability for dropout
    attack: str
    auc: float
    error: str = ""


@dataclass
class SweepResult:
    cells: list[SweepCell] = field(default_factory=list)

    def best(self, method: str, attack: str) -> SweepCell | None:
        ok = [c for c in self.cells if c.method == method and c.attack == attack and not c.error]
        return max(ok, key=lambda c: c.auc) if ok else None

    def best_cells(self) -> list[SweepCell]:
        keys = dict.fromkeys((c.method, c.attack) for c in self.cells)
        return [b for b in (self.best(m, a) for m, a in keys) if b is not None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "block", "param", "attack", "auc", "error"])
            for c in self.cells:
                w.writerow([c.method, c.block, repr(c.param), c.attack, repr(c.auc), c.error])


def _cell_config(base: SamplingConfig, method: str, block: int, param: float) -> SamplingConfig:
    if method == "uniform-dropout":
        return base.replace(method=method, block=(block,), dropout_keep=param)
    return base.replace(method=method, block=(block,), f=param)


def evaluate_cell(net, eval_set, base, method, block, param, attack, statistic="mi") -> SweepCell:
    try:
        cfg = _cell_config(base, method, block, param)
        auc = roc_and_auc(score_all(net, eval_set, cfg), statistic).auc
        return SweepCell(method, block, float(param), attack, auc)
    except (VMDetectError, ValueError) as exc:
        log.warning("sweep cell %s/B=%d/%g/%s failed: %s", method, block, param, attack, exc)
        return SweepCell(method, block, float(param), attack, math.nan, str(exc) or type(exc).__name__)


def sweep(
    net: Network,
    eval_sets: Mapping[str, EvalSet],
    *,
    methods: Sequence[str],
    blocks: Sequence[int],
    f_grid: Sequence[float] = (1.0,),
    keep_grid: Sequence[float] = (0.5,),
    base: SamplingConfig | None = None,
    combination: bool = False,
    statistic: str = "mi",
    workers: int = 1,
) -> SweepResult:
    """AUC over the cartesian grid of (attack, method, block, f or keep).

    Each cell is scored with the same base seed, so a cell's value does not
    depend on which other cells are in the grid. With ``combination`` the
    union of all eval sets is evaluated as one extra attack named
    ``combination``.
    """
    base = base or SamplingConfig()
    sets = {k: v for k, v in eval_sets.items() if len(v)}
    if combination and len(sets) > 1:
        sets["combination"] = EvalSet.union(sets.values())
    jobs = []
    for attack, es in sets.items():
        for method in methods:
            grid = keep_grid if method == "uniform-dropout" else f_grid
            for block, param in itertools.product(blocks, grid):
                jobs.append((net, es, base, method, block, param, attack, statistic))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda a: evaluate_cell(*a), jobs))
    else:
        cells = [evaluate_cell(*a) for a in jobs]
    return SweepResult(cells)
