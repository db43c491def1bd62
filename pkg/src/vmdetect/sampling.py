"""Randomized sampling units and Monte-Carlo inference through them.

A *sampling unit* sits on the output of a hidden layer. Each pass draws a
binary mask ``z`` for it and rescales the survivors by ``1/pi`` so that the
masked activation is unbiased. Blocks are numbered from 1: block ``b``
samples the output of hidden layer ``b``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import solvers
from .errors import DegenerateLayerError, NumericError, ShapeError
from .nn import ActivationTrace, Network, forward_full

log = logging.getLogger(__name__)

FIXED_METHODS = ("vm-exact", "vm-lin", "vm-log", "uniform-dropout")
DYNAMIC_METHODS = ("dvm-lin", "dvm-log")
METHODS = FIXED_METHODS + DYNAMIC_METHODS
METHOD_ALIASES = {"sap": "dvm-lin"}
MASK_MODES = ("independent-bernoulli", "or-composition")


@dataclass(frozen=True)
class SamplingConfig:
    method: str = "vm-exact"
    block: tuple[int, ...] = (1,)
    f: float = 1.0
    dropout_keep: float = 0.5
    R: int = 20
    mask_mode: str = "independent-bernoulli"
    seed: int = 0

    def __post_init__(self):
        method = METHOD_ALIASES.get(self.method, self.method)
        if method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}")
        block = (self.block,) if isinstance(self.block, (int, np.integer)) else tuple(self.block)
        if not block or any(int(b) < 1 for b in block):
            raise ValueError("blocks are numbered from 1")
        if int(self.R) < 2:
            raise ValueError("R must be at least 2")
        if not self.f > 0:
            raise ValueError("sampling ratio f must be positive")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError("dropout_keep must lie in (0, 1]")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "block", tuple(sorted({int(b) for b in block})))
        object.__setattr__(self, "R", int(self.R))

    @property
    def dynamic(self) -> bool:
        return self.method in DYNAMIC_METHODS

    def check_network(self, net: Network) -> None:
        if max(self.block) > net.n_hidden:
            raise ShapeError(f"block {max(self.block)} exceeds the {net.n_hidden} hidden layers")

    def replace(self, **changes) -> "SamplingConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block"] = list(self.block)
        return d


@dataclass(frozen=True)
class PlanEntry:
    """Sampling unit parameters at one block.

    ``p`` and ``C`` are ``None`` for uniform dropout, which has no
    categorical draws.
    """

    block: int
    pi: np.ndarray
    p: np.ndarray | None = None
    C: float | None = None


@dataclass(frozen=True)
class SamplingPlan:
    entries: tuple[PlanEntry, ...]
    skipped: tuple[int, ...] = ()

    def entry(self, block: int) -> PlanEntry | None:
        for e in self.entries:
            if e.block == block:
                return e
        return None


@dataclass(frozen=True)
class SamplingMask:
    z: np.ndarray
    scale: np.ndarray


@dataclass
class MCBatch:
    """Softmax outputs of ``R`` stochastic passes (rows) for one input."""

    outputs: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)
    skipped: int = 0

    @property
    def R(self) -> int:
        return self.outputs.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y{k}" for k in range(self.outputs.shape[1])])
            for row in self.outputs:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "MCBatch":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls(np.array(rows[1:], dtype=float), seed=seed)


def pass_rng(seed: int, r: int, stream: Sequence[int] = ()) -> np.random.Generator:
    """Independent generator for MC pass ``r`` of the stream ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*stream, r)))


def _fixed_probabilities(method: str, x: np.ndarray, f: float) -> tuple[np.ndarray, float]:
    C = f * np.count_nonzero(x)
    inp = solvers.SolverInput.from_activation(x, C if C > 0 else 1.0)
    if method in ("vm-exact",):
        p, _ = solvers.solve_exact(inp)
    elif method in ("vm-lin", "dvm-lin"):
        p = solvers.solve_linear(inp)
    elif method in ("vm-log", "dvm-log"):
        p = solvers.solve_log(inp)
    else:
        raise ValueError(f"no solver for method {method!r}")
    return p, C


def build_plan(trace: ActivationTrace, cfg: SamplingConfig) -> SamplingPlan:
    """Sampling probabilities from a deterministic forward pass.

    For each block the squared activations feed the selected solver with
    ``C = f * nnz(x)``. Blocks whose activation is identically zero are
    skipped (left unsampled) and listed in ``plan.skipped``.
    """
    if cfg.dynamic:
        raise ValueError(f"{cfg.method} recomputes probabilities per pass; no fixed plan")
    if max(cfg.block) > len(trace) - 1:
        raise ShapeError(f"block {max(cfg.block)} exceeds the {len(trace) - 1} hidden layers")
    entries, skipped = [], []
    for b in cfg.block:
        x = trace.post[b - 1]
        if cfg.method == "uniform-dropout":
            entries.append(PlanEntry(b, np.full(x.shape, float(cfg.dropout_keep))))
            continue
        try:
            p, C = _fixed_probabilities(cfg.method, x, cfg.f)
        except DegenerateLayerError:
            log.info("block %d has an all-zero activation; unit skipped", b)
            skipped.append(b)
            continue
        entries.append(PlanEntry(b, solvers.bernoulli_params(p, C), p, C))
    return SamplingPlan(tuple(entries), tuple(skipped))


def mask_scale(z: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``1/pi`` on picked entries with ``pi > 0``, zero elsewhere."""
    picked = (z > 0) & (pi > 0)
    scale = np.zeros(picked.shape)
    np.divide(1.0, np.broadcast_to(pi, picked.shape), out=scale, where=picked)
    return scale


def draw_mask(entry: PlanEntry, rng: np.random.Generator, mode: str = "independent-bernoulli") -> SamplingMask:
    """Draw one mask for a plan entry.

    ``or-composition`` ORs ``round(C)`` categorical draws from ``p``;
    ``independent-bernoulli`` flips an independent coin with bias ``pi_i``
    per unit.
    """
    if mode == "or-composition" and entry.p is not None:
        n = int(round(entry.C))
        if n < 1:
            raise ValueError("or-composition needs at least one draw")
        z = (rng.multinomial(n, entry.p) > 0).astype(np.int8)
    elif mode in MASK_MODES:
        z = (rng.random(entry.pi.shape) < entry.pi).astype(np.int8)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return SamplingMask(z, mask_scale(z, entry.pi))


def apply_sampling(x, mask: SamplingMask) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mask.z.shape[-1]:
        raise ShapeError("mask and activation lengths differ")
    return mask.z * mask.scale * x


def _check_finite(h, layer):
    if not np.all(np.isfinite(h)):
        raise NumericError(f"non-finite activation after layer {layer}", layer=layer)


def mc_forward_fixed(
    net: Network,
    x,
    plan: SamplingPlan,
    R: int,
    seed: int = 0,
    *,
    mode: str = "independent-bernoulli",
    stream: Sequence[int] = (),
) -> MCBatch:
    """``R`` stochastic passes with probabilities fixed by ``plan``."""
    if R < 2:
        raise ValueError("R must be at least 2")
    rngs = [pass_rng(seed, r, stream) for r in range(R)]
    h = np.tile(np.asarray(x, dtype=float), (R, 1))
    for l, layer in enumerate(net.layers):
        h = layer(h)
        entry = plan.entry(l + 1)
        if entry is not None:
            for r in range(R):
                h[r] = apply_sampling(h[r], draw_mask(entry, rngs[r], mode))
        _check_finite(h, l)
    return MCBatch(h, seed=seed, config={"mode": mode})


def mc_forward_dynamic(
    net: Network,
    x,
    cfg: SamplingConfig,
    *,
    stream: Sequence[int] = (),
    record: list | None = None,
) -> MCBatch:
    """``R`` passes whose probabilities come from the observed activations.

    At every sampling block the pass's own (already randomized) activation
    determines ``p`` through the linear or logarithmic closed form with
    ``C = f * nnz``. If ``record`` is a list, one ``(r, block, x, p, pi)``
    tuple per sampled unit is appended to it.
    """
    if not cfg.dynamic:
        raise ValueError(f"{cfg.method} is not a dynamic method")
    cfg.check_network(net)
    R = cfg.R
    rngs = [pass_rng(cfg.seed, r, stream) for r in range(R)]
    h = np.tile(np.asarray(x, dtype=float), (R, 1))
    skipped = 0
    for l, layer in enumerate(net.layers):
        h = layer(h)
        b = l + 1
        if b in cfg.block:
            for r in range(R):
                try:
                    p, C = _fixed_probabilities(cfg.method, h[r], cfg.f)
                except DegenerateLayerError:
                    skipped += 1
                    continue
                entry = PlanEntry(b, solvers.bernoulli_params(p, C), p, C)
                if record is not None:
                    record.append((r, b, h[r].copy(), p, entry.pi))
                h[r] = apply_sampling(h[r], draw_mask(entry, rngs[r], cfg.mask_mode))
        _check_finite(h, l)
    return MCBatch(h, seed=cfg.seed, config=cfg.as_dict(), skipped=skipped)


def run_mc(net: Network, x, cfg: SamplingConfig, *, stream: Sequence[int] = ()) -> MCBatch:
    """Dispatch to the fixed or dynamic procedure for one input."""
    if cfg.dynamic:
        return mc_forward_dynamic(net, x, cfg, stream=stream)
    cfg.check_network(net)
    plan = build_plan(forward_full(net, x), cfg)
    batch = mc_forward_fixed(net, x, plan, cfg.R, cfg.seed, mode=cfg.mask_mode, stream=stream)
    batch.config = cfg.as_dict()
    batch.skipped = len(plan.skipped)
    return batch


def layer_variance(x, pi) -> float:
    """Closed-form ``sum x_i^2 (1/pi_i - 1)`` over entries with ``pi_i > 0``."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    on = pi > 0
    return float(np.sum(x[on] ** 2 * (1.0 / pi[on] - 1.0)))
