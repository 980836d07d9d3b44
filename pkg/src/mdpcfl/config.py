"""Experiment configuration: a JSON tree of dataclasses with defaults."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from mdpcfl.errors import ConfigError
from mdpcfl.latency import DeviceProfile, LinkRates


@dataclass
class CodeConfig:
    n: int = 4000
    k: int = 2000
    check_degree: int = 90
    key_seed: int = 0
    key_path: str | None = None  # cached key file; built and saved if missing


@dataclass
class SupportConfig:
    t_tot: int = 256
    t: int = 64
    lambda_max: int = 1
    beta: int = 4
    max_supports: int | None = None
    max_redraws: int = 32


@dataclass
class DeviceClass:
    count: int
    tau: float


@dataclass
class DevicesConfig:
    classes: list = field(default_factory=lambda: [
        DeviceClass(10, 25e6), DeviceClass(5, 5e6), DeviceClass(5, 2.5e6), DeviceClass(5, 1.25e6),
    ])
    setup_mean: float = 0.0
    setup_ratio: float = 0.5
    p_fail: float = 0.1
    server_tau: float = 8.24e12

    @property
    def n_devices(self) -> int:
        return sum(c.count for c in self.classes)

    def profiles(self) -> list:
        out = []
        for c in self.classes:
            out += [DeviceProfile(c.tau, self.setup_mean, self.p_fail, self.setup_ratio)] * c.count
        return out


@dataclass
class LinksConfig:
    up: float = 5e6
    down: float = 10e6
    d2d: float = 5e6
    overhead_factor: float = 1.1
    p_d2d: float = 0.1

    def rates(self) -> LinkRates:
        return LinkRates(self.up, self.down, self.d2d, self.overhead_factor, self.p_d2d)


@dataclass
class LearningConfig:
    mu: float = 6.0
    lam: float = 9e-6
    schedule: list = field(default_factory=lambda: [[200, 0.8], [350, 0.8]])
    epochs: int = 500
    targets: list = field(default_factory=lambda: [0.95])
    batch_fraction: float = 0.2


@dataclass
class DataConfig:
    kind: str = "mnist"  # mnist | synthetic
    mnist_dir: str | None = "data/mnist"
    d_out: int = 2000
    gamma: float = 5.0
    normalize: str = "unit"
    m: int = 1000  # synthetic only
    d: int = 20
    c: int = 3
    noise_sigma: float = 0.0


@dataclass
class ForcedDelay:
    epoch: int
    device: int
    seconds: float


@dataclass
class ExperimentConfig:
    name: str = "default"
    seed: int = 0
    code: CodeConfig = field(default_factory=CodeConfig)
    support: SupportConfig = field(default_factory=SupportConfig)
    delta: float = 3.0
    devices: DevicesConfig = field(default_factory=DevicesConfig)
    links: LinksConfig = field(default_factory=LinksConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    data: DataConfig = field(default_factory=DataConfig)
    forced_delays: list = field(default_factory=list)
    record_aggregates: bool = False  # keep each epoch's decoded R (tests only)

    def validate(self) -> ExperimentConfig:
        c, s = self.code, self.support
        if not 0 < c.k < c.n:
            raise ConfigError("need 0 < k < n")
        if not 0 <= s.t <= s.t_tot <= c.n:
            raise ConfigError("need t <= t_tot <= n")
        if s.beta < 1 or s.beta > s.t:
            raise ConfigError("need 1 <= beta <= t")
        if not self.delta >= 0:
            raise ConfigError("delta must be >= 0")
        if self.devices.n_devices < 1:
            raise ConfigError("need at least one device")
        if self.learning.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.learning.batch_fraction <= 1:
            raise ConfigError("batch_fraction must be in (0, 1]")
        if self.data.kind not in ("mnist", "synthetic"):
            raise ConfigError(f"unknown data kind {self.data.kind!r}")
        for fd in self.forced_delays:
            if not 0 <= fd.device < self.devices.n_devices:
                raise ConfigError(f"forced delay for unknown device {fd.device}")
        # exercise the profile validators
        self.devices.profiles()
        self.links.rates()
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(self.delta):
            d["delta"] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_NESTED = {
    "code": CodeConfig,
    "support": SupportConfig,
    "devices": DevicesConfig,
    "links": LinksConfig,
    "learning": LearningConfig,
    "data": DataConfig,
}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    kw = {}
    for key, cls in _NESTED.items():
        if key in raw:
            sub = dict(raw.pop(key))
            if key == "devices" and "classes" in sub:
                sub["classes"] = [_build(DeviceClass, c, "devices.classes") for c in sub["classes"]]
            kw[key] = _build(cls, sub, key)
    if "forced_delays" in raw:
        kw["forced_delays"] = [_build(ForcedDelay, f, "forced_delays") for f in raw.pop("forced_delays")]
    if "delta" in raw:
        delta = raw.pop("delta")
        kw["delta"] = math.inf if delta in ("inf", "Infinity", None) else float(delta)
    cfg = _build(ExperimentConfig, {**raw, **kw}, "config")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "preset" in raw:
        base = preset(raw.pop("preset")).to_dict()
        raw = _merge(base, raw)
    return from_dict(raw)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def preset(name: str) -> ExperimentConfig:
    """Named configurations. ``toy`` is a seconds-scale synthetic run."""
    if name == "sl92":
        # lambda_max = 1 cannot pack 16 supports of weight 64 into 256
        # positions, so the packing runs with a larger intersection budget.
        return ExperimentConfig(
            name=name, delta=3.0, support=SupportConfig(t=64, lambda_max=16, max_supports=16),
        ).validate()
    if name == "sl128":
        return ExperimentConfig(
            name=name, delta=1.0, support=SupportConfig(t=128, lambda_max=56, max_supports=4),
        ).validate()
    if name == "toy":
        return ExperimentConfig(
            name=name,
            code=CodeConfig(n=100, k=50, check_degree=8),
            support=SupportConfig(t_tot=12, t=4, lambda_max=1, beta=4),
            delta=1.0,
            devices=DevicesConfig(classes=[DeviceClass(4, 1e6)], setup_ratio=0.0, p_fail=0.0, server_tau=1e9),
            links=LinksConfig(up=1e6, down=1e6, d2d=1e6, overhead_factor=1.0, p_d2d=0.0),
            learning=LearningConfig(mu=2.0, lam=1e-3, schedule=[[30, 0.8]], epochs=50, targets=[0.9], batch_fraction=0.2),
            data=DataConfig(kind="synthetic", mnist_dir=None, m=400, d=20, c=3, noise_sigma=0.1),
            forced_delays=[ForcedDelay(3, 2, 10.0), ForcedDelay(3, 3, 10.0), ForcedDelay(8, 0, 10.0)],
        ).validate()
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("toy", "sl92", "sl128")
