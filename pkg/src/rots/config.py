"""Experiment configuration: one strict JSON document.

Unknown keys are rejected and every validation error names the offending
field path, e.g. ``rots.beta``.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from rots.errors import ConfigError

METHODS = ("rots", "adv_fgs", "adv_pgd", "stn", "clean")


@dataclass
class SynthConfig:
    n: int = 60
    T: int = 32
    noise_sigma: float = 0.05
    n_test: int = 60


@dataclass
class DatasetConfig:
    synth: SynthConfig = None
    train_path: str = None
    test_path: str = None
    format: str = "ucr"
    channels: int = 1
    normalize: bool = True


@dataclass
class TrainConfig:
    eta: float = 0.05
    batch_size: int = 16
    iterations: int = 500
    optimizer: str = "sgd"


@dataclass
class RotsConfig:
    lam: float = 1e-2
    nu: float = None
    beta: float = 0.1
    gamma: float = 0.05
    align_samples: int = 32
    align_mode: str = "sampled"
    align_percent: float = 0.15
    band_width: object = "auto"
    p: int = 2
    warm_start: bool = True


@dataclass
class AttackConfig:
    kind: str = "fgs"
    epsilon: float = 0.1
    sigma: float = 0.0
    steps: int = 20
    alpha: float = None


@dataclass
class StnConfig:
    sigma: float = 0.04
    weight: float = 0.01


@dataclass
class EvalAttack:
    kind: str = "gaussian"
    levels: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    steps: int = 20
    alpha: float = None


@dataclass
class EvalConfig:
    attacks: list = field(default_factory=lambda: [EvalAttack()])
    repeats: int = 10


@dataclass
class BenchConfig:
    d: int = 2
    n: int = 4
    m: int = 4
    A: list = None
    centers: list = None
    nu_syn: float = 1.0
    lambda_syn: float = 1.0
    mu_w: float = 1.0
    block_spread: float = 0.6
    center_spread: float = 0.25
    problem_seed: int = 0
    grid_resolution: int = 101
    diag_every: int = None


@dataclass
class ScagdaConfig:
    eta: float = 1e-3
    gamma: float = 5e-2
    beta: float = 0.02
    K: int = 100000
    first_touch: bool = True
    log_every: int = 1


@dataclass
class ExperimentConfig:
    method: str = "rots"
    arch: str = "C:8,K:5;P:2;R:16"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rots: RotsConfig = field(default_factory=RotsConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    stn: StnConfig = field(default_factory=StnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    scagda: ScagdaConfig = field(default_factory=ScagdaConfig)
    seeds: list = field(default_factory=lambda: [0])
    threads: int = 1
    output_dir: str = "runs/default"


# nested dataclass types, and element types of lists of dataclasses
_NESTED = {
    ("DatasetConfig", "synth"): SynthConfig,
    ("ExperimentConfig", "dataset"): DatasetConfig,
    ("ExperimentConfig", "train"): TrainConfig,
    ("ExperimentConfig", "rots"): RotsConfig,
    ("ExperimentConfig", "attack"): AttackConfig,
    ("ExperimentConfig", "stn"): StnConfig,
    ("ExperimentConfig", "eval"): EvalConfig,
    ("ExperimentConfig", "bench"): BenchConfig,
    ("ExperimentConfig", "scagda"): ScagdaConfig,
}
_LIST_OF = {("EvalConfig", "attacks"): EvalAttack}
_ANY_TYPE = {("RotsConfig", "band_width")}


def _type_ok(value, annot):
    if value is None:
        return True
    if annot is bool:
        return isinstance(value, bool)
    if annot is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if annot is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annot is str:
        return isinstance(value, str)
    if annot is list:
        return isinstance(value, list)
    return True


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError("unknown key", where)
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}" if path else name
        key = (cls.__name__, name)
        if key in _NESTED and value is not None:
            kwargs[name] = _build(_NESTED[key], value, where)
        elif key in _LIST_OF:
            if not isinstance(value, list):
                raise ConfigError("expected a list", where)
            kwargs[name] = [_build(_LIST_OF[key], v, f"{where}[{i}]") for i, v in enumerate(value)]
        else:
            if key not in _ANY_TYPE and not _type_ok(value, names[name].type):
                raise ConfigError(f"expected {names[name].type.__name__}, got {value!r}", where)
            kwargs[name] = value
    return cls(**kwargs)


def _require(cond, message, where):
    if not cond:
        raise ConfigError(message, where)


def _validate_dataset(ds, base_dir, need_files):
    _require((ds.synth is None) != (ds.train_path is None),
             "give exactly one of synth or train_path", "dataset")
    if ds.synth is not None:
        _require(ds.synth.n >= 2 and ds.synth.n % 2 == 0, "must be even and >= 2",
                 "dataset.synth.n")
        _require(ds.synth.n_test % 2 == 0 and ds.synth.n_test >= 2, "must be even and >= 2",
                 "dataset.synth.n_test")
        _require(ds.synth.T >= 8, "must be >= 8", "dataset.synth.T")
        _require(ds.synth.noise_sigma >= 0, "must be >= 0", "dataset.synth.noise_sigma")
        return
    _require(ds.format in ("ucr", "csv"), "must be 'ucr' or 'csv'", "dataset.format")
    _require(ds.channels >= 1, "must be >= 1", "dataset.channels")
    if need_files:
        for key in ("train_path", "test_path"):
            p = getattr(ds, key)
            if p is not None:
                full = Path(base_dir or ".") / p
                _require(full.exists(), f"file not found: {full}", f"dataset.{key}")


def validate(cfg, base_dir=None, need_files=True, need_dataset=True):
    """Check ranges and cross-field rules; ``need_dataset=False`` skips the dataset block."""
    _require(cfg.method in METHODS, f"must be one of {', '.join(METHODS)}", "method")
    _require(isinstance(cfg.seeds, list) and cfg.seeds, "must be a nonempty list", "seeds")
    for i, s in enumerate(cfg.seeds):
        _require(isinstance(s, int) and not isinstance(s, bool) and s >= 0,
                 "must be a non-negative integer", f"seeds[{i}]")
    _require(cfg.threads >= 1, "must be >= 1", "threads")
    if need_dataset:
        _validate_dataset(cfg.dataset, base_dir, need_files)
    tr = cfg.train
    _require(tr.eta > 0, "must be positive", "train.eta")
    _require(tr.batch_size >= 1, "must be >= 1", "train.batch_size")
    _require(tr.iterations >= 0, "must be >= 0", "train.iterations")
    _require(tr.optimizer in ("sgd", "adam"), "must be 'sgd' or 'adam'", "train.optimizer")
    r = cfg.rots
    _require(r.lam >= 0, "must be >= 0", "rots.lam")
    _require(r.nu is None or r.nu > 0, "must be positive", "rots.nu")
    _require(0 < r.beta <= 1, "must lie in (0, 1]", "rots.beta")
    _require(r.gamma >= 0, "must be >= 0", "rots.gamma")
    _require(r.align_samples >= 1, "must be >= 1", "rots.align_samples")
    _require(r.align_mode in ("sampled", "exhaustive", "percent"),
             "must be sampled, exhaustive or percent", "rots.align_mode")
    _require(r.band_width in ("auto", None) or (isinstance(r.band_width, (int, float))
                                                and r.band_width >= 1),
             "must be 'auto', null or a number >= 1", "rots.band_width")
    _require(r.p in (1, 2), "must be 1 or 2", "rots.p")
    a = cfg.attack
    _require(a.kind in ("fgs", "pgd"), "must be fgs or pgd", "attack.kind")
    _require(0 <= a.epsilon < 1, "must lie in [0, 1)", "attack.epsilon")
    _require(a.steps >= 1, "must be >= 1", "attack.steps")
    _require(cfg.stn.sigma >= 0, "must be >= 0", "stn.sigma")
    for i, ea in enumerate(cfg.eval.attacks):
        _require(ea.kind in ("fgs", "pgd", "gaussian"), "must be fgs, pgd or gaussian",
                 f"eval.attacks[{i}].kind")
        _require(isinstance(ea.levels, list) and ea.levels and
                 all(isinstance(v, (int, float)) and v >= 0 for v in ea.levels),
                 "must be a nonempty list of non-negative numbers", f"eval.attacks[{i}].levels")
    kinds = [ea.kind for ea in cfg.eval.attacks]
    _require(len(set(kinds)) == len(kinds), "each attack kind may appear once", "eval.attacks")
    _require(cfg.eval.repeats >= 1, "must be >= 1", "eval.repeats")
    b = cfg.bench
    _require(b.d in (1, 2), "must be 1 or 2", "bench.d")
    _require(b.n >= 1 and b.m >= 1, "must be >= 1", "bench.n")
    _require(b.nu_syn > 0, "must be positive", "bench.nu_syn")
    _require(b.lambda_syn > 0, "must be positive", "bench.lambda_syn")
    _require(b.mu_w > 0, "must be positive", "bench.mu_w")
    _require(b.grid_resolution >= 11, "must be >= 11", "bench.grid_resolution")
    s = cfg.scagda
    _require(s.eta > 0, "must be positive", "scagda.eta")
    _require(s.gamma > 0, "must be positive", "scagda.gamma")
    _require(0 < s.beta <= 1, "must lie in (0, 1]", "scagda.beta")
    _require(s.K >= 1, "must be >= 1", "scagda.K")
    return cfg


def from_dict(data, base_dir=None, need_files=True, need_dataset=True):
    return validate(_build(ExperimentConfig, data, ""), base_dir, need_files, need_dataset)


def load_config(path, need_files=True, need_dataset=True):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(data, path.parent, need_files, need_dataset)


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def config_hash(cfg):
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
