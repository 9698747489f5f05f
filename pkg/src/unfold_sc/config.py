"""Declarative experiment configuration (JSON) with dotted-key overrides."""

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .datagen import NoiseSpec, SparsityLaw
from .training import TrainConfig
from .unfolded import Kind, Variant


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    m: int = 50
    n: int = 100
    kappa: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class TheoryConfig:
    """Small noiseless instance for the no-false-positive / contraction suites."""

    m: int = 40
    n: int = 42
    s: int = 2
    bound: float = 1.0
    count: int = 200
    depth: int = 12
    ss_schedule: tuple = (4.0, 10.0)
    seed: int = 0


@dataclass(frozen=True)
class StereoConfig:
    q: int = 15
    resolution: int = 64
    p_train: float = 0.8
    p_test: tuple = (0.8, 0.9)
    depth: int = 12
    ss_schedule: tuple = (1.5, 16.25)
    seed: int = 0


def default_variants():
    ss = (0.6, 6.5)
    return [
        Variant(Kind.LISTA_CP),
        Variant(Kind.EBT_LISTA),
        Variant(Kind.LISTA_SS, ss_schedule=ss),
        Variant(Kind.EBT_LISTA_SS, ss_schedule=ss),
        Variant(Kind.EBT_LISTA_SS, norm_p=2, ss_schedule=ss),
    ]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = ProblemConfig()
    law: SparsityLaw = SparsityLaw.fixed(0.95)
    noise: NoiseSpec = NoiseSpec()
    variants: list = field(default_factory=default_variants)
    train: TrainConfig = TrainConfig()
    eval_laws: list = field(default_factory=lambda: [SparsityLaw.fixed(0.95)])
    depth: int = 8
    output_dir: str = "runs/default"
    seed: int = 0
    eval_size: int = 1000
    theory: TheoryConfig = TheoryConfig()
    stereo: StereoConfig = StereoConfig()

    def __post_init__(self):
        if not self.eval_laws:
            raise ConfigError("eval_laws must be nonempty")
        if not self.variants:
            raise ConfigError("variants must be nonempty")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError(f"variant names must be unique, got {names}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")

    def to_dict(self):
        return {
            "problem": asdict(self.problem),
            "law": self.law.to_dict(),
            "noise": self.noise.to_dict(),
            "variants": [v.to_dict() for v in self.variants],
            "train": {**asdict(self.train), "lr_stages": list(self.train.lr_stages)},
            "eval_laws": [law.to_dict() for law in self.eval_laws],
            "depth": self.depth,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "eval_size": self.eval_size,
            "theory": {**asdict(self.theory), "ss_schedule": list(self.theory.ss_schedule)},
            "stereo": {
                **asdict(self.stereo),
                "p_test": list(self.stereo.p_test),
                "ss_schedule": list(self.stereo.ss_schedule),
            },
        }

    @classmethod
    def from_dict(cls, d):
        base = cls().to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**base, **d}
        try:
            return cls(
                problem=_strict(ProblemConfig, merged["problem"], "problem"),
                law=_law(merged["law"], "law"),
                noise=NoiseSpec.from_value(_noise_value(merged["noise"])),
                variants=[Variant.from_dict(v) for v in merged["variants"]],
                train=_strict(TrainConfig, merged["train"], "train"),
                eval_laws=[_law(v, f"eval_laws.{i}") for i, v in enumerate(merged["eval_laws"])],
                depth=int(merged["depth"]),
                output_dir=str(merged["output_dir"]),
                seed=int(merged["seed"]),
                eval_size=int(merged["eval_size"]),
                theory=_strict(TheoryConfig, merged["theory"], "theory"),
                stereo=_strict(StereoConfig, merged["stereo"], "stereo"),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def hash_source(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _strict(cls, d, where):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys under {where!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kwargs)


def _law(d, where):
    names = {f.name for f in fields(SparsityLaw)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys under {where!r}: {sorted(unknown)}")
    return SparsityLaw(**d)


def _noise_value(d):
    if not isinstance(d, dict) or set(d) != {"snr_db"}:
        raise ConfigError("noise must be {'snr_db': number | 'inf'}")
    v = d["snr_db"]
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity")):
        return math.inf
    return float(v)


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``key.path=value`` strings; every path segment must already exist."""
    d = copy.deepcopy(cfg.to_dict())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = d
        parts = key.strip().split(".")
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ConfigError(f"unknown config key {key!r}")
                part = int(part)
            elif not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}")
            if last:
                node[part] = parse_value(raw)
            else:
                node = node[part]
    return ExperimentConfig.from_dict(d)
