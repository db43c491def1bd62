"""TOML run configuration for the command-line harness.

Sections: ``[data]``, ``[network]``, ``[attack.<name>]`` (one per attack),
``[detect]``, ``[sweep]`` and ``[output]``. Every key is optional.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attacks import AttackConfig
from .errors import ConfigError
from .nn import TrainConfig
from .sampling import SamplingConfig

DEFAULT_F_GRID = (0.6, 0.7, 0.8, 0.9, 1.0, 1.5, 2.0, 3.0, 4.0)
DEFAULT_KEEP_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class DataSettings:
    source: str = "moons"  # moons | csv | idx
    path: str | None = None
    labels_path: str | None = None
    n_samples: int = 1000
    noise: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class SweepSettings:
    methods: tuple[str, ...] = ("vm-exact", "vm-lin", "vm-log", "dvm-lin", "dvm-log", "uniform-dropout")
    blocks: tuple[int, ...] = (1, 2)
    f: tuple[float, ...] = DEFAULT_F_GRID
    dropout_keep: tuple[float, ...] = DEFAULT_KEEP_GRID
    combination: bool = True
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    data: DataSettings = field(default_factory=DataSettings)
    sizes: tuple[int, ...] = (2, 32, 32, 2)
    hidden: str = "relu"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(0.1, 200, 32, 0))
    attacks: dict = field(default_factory=lambda: {"fgsm": AttackConfig("fgsm", 0.1)})
    detect: SamplingConfig = field(default_factory=SamplingConfig)
    statistic: str = "mi"
    sweep: SweepSettings = field(default_factory=SweepSettings)
    out_dir: Path = Path("runs/default")
    digest: str = ""


def _take(section: dict, name: str, allowed: set) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")
    return section


def parse_config(text: str, base_dir=".") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    unknown = set(doc) - {"data", "network", "attack", "detect", "sweep", "output"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    try:
        data = DataSettings(**_take(doc.get("data", {}), "data", set(DataSettings.__dataclass_fields__)))
        if data.source not in ("moons", "csv", "idx"):
            raise ConfigError(f"[data] source must be moons, csv or idx, not {data.source!r}")
        if data.source != "moons" and not data.path:
            raise ConfigError("[data] path is required for file sources")
        if data.path:
            data = DataSettings(**{**data.__dict__, "path": str(Path(base_dir) / data.path)})
        if data.labels_path:
            data = DataSettings(**{**data.__dict__, "labels_path": str(Path(base_dir) / data.labels_path)})

        net = dict(doc.get("network", {}))
        _take(net, "network", {"sizes", "hidden", "learning_rate", "epochs", "batch_size", "seed", "momentum"})
        sizes = tuple(int(s) for s in net.pop("sizes", (2, 32, 32, 2)))
        hidden = net.pop("hidden", "relu")
        if hidden not in ("relu", "tanh"):
            raise ConfigError("[network] hidden must be relu or tanh")
        train = TrainConfig(**{"learning_rate": 0.1, "epochs": 200, "batch_size": 32, **net})

        attacks = {}
        for name, table in doc.get("attack", {"fgsm": {"kind": "fgsm", "epsilon": 0.1}}).items():
            if not isinstance(table, dict):
                raise ConfigError(f"[attack.{name}] must be a table")
            table = dict(table)
            table.setdefault("kind", name)
            if "box" in table:
                table["box"] = tuple(table["box"])
            attacks[name] = AttackConfig(**_take(table, f"attack.{name}", set(AttackConfig.__dataclass_fields__)))

        det = dict(doc.get("detect", {}))
        statistic = det.pop("statistic", "mi")
        if statistic not in ("mi", "var-trace"):
            raise ConfigError("[detect] statistic must be mi or var-trace")
        detect = SamplingConfig(**_take(det, "detect", set(SamplingConfig.__dataclass_fields__)))

        sw = dict(doc.get("sweep", {}))
        _take(sw, "sweep", set(SweepSettings.__dataclass_fields__))
        for key in ("methods", "blocks", "f", "dropout_keep"):
            if key in sw:
                sw[key] = tuple(sw[key])
        sweep_settings = SweepSettings(**sw)
        for m in sweep_settings.methods:
            SamplingConfig(method=m)

        out_dir = Path(base_dir) / doc.get("output", {}).get("dir", "runs/default")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        data=data,
        sizes=sizes,
        hidden=hidden,
        train=train,
        attacks=attacks,
        detect=detect,
        statistic=statistic,
        sweep=sweep_settings,
        out_dir=out_dir,
        digest=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)
