"""Experiment configuration: dataclasses and the flat key=value file format."""

import dataclasses
import logging
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from core.errors import InputError

logger = logging.getLogger(__name__)

WINDOWS = ("hann", "hamming", "rectangular")
POOLINGS = ("SP", "ASP")
LOSS_KINDS = ("S", "AAM", "AP", "AP_plus_S", "S_then_AAM")
OBJECTIVES = ("DCF", "EER")

# Standard ResNet-34 is [64, 128, 256, 512]; the trunk here uses half of each.
HALF_RESNET34_CHANNELS = (32, 64, 128, 256)
RESNET34_BLOCKS = (3, 4, 6, 3)

_SYSTEM_NAME = re.compile(r"^H([23]?)/(SP|ASP)-(\d+)$")


@dataclass(frozen=True)
class FeatureConfig:
    """Log mel-filterbank front-end settings."""

    n_mels: int = 40
    window: str = "hann"
    win_len_ms: float = 25.0
    hop_ms: float = 10.0
    nfft: int = 512
    preemphasis: Optional[float] = None
    fmin_hz: Optional[float] = 20.0
    fmax_hz: Optional[float] = 7600.0

    def __post_init__(self):
        if self.n_mels <= 0:
            raise InputError(f"feature.n_mels must be positive, got {self.n_mels}")
        if self.window not in WINDOWS:
            raise InputError(f"feature.window must be one of {WINDOWS}, got {self.window!r}")
        if self.win_len_ms <= 0 or self.hop_ms <= 0:
            raise InputError("feature.win_len_ms and feature.hop_ms must be positive")
        if self.preemphasis is not None and not 0.0 <= self.preemphasis < 1.0:
            raise InputError(f"feature.preemphasis must lie in [0, 1), got {self.preemphasis}")
        fmin = self.fmin_hz if self.fmin_hz is not None else 0.0
        if fmin < 0:
            raise InputError(f"feature.fmin_hz must be non-negative, got {fmin}")
        if self.fmax_hz is not None and not fmin < self.fmax_hz:
            raise InputError(f"feature.fmin_hz ({fmin}) must be below feature.fmax_hz ({self.fmax_hz})")

    @classmethod
    def fb40(cls) -> "FeatureConfig":
        """40-dim log mel-filterbanks: hann window, 20-7600 Hz, no pre-emphasis."""
        return cls(n_mels=40, window="hann", preemphasis=None, fmin_hz=20.0, fmax_hz=7600.0)

    @classmethod
    def fb64(cls) -> "FeatureConfig":
        """64-dim log mel-filterbanks: pre-emphasis 0.97, hamming window, full band."""
        return cls(n_mels=64, window="hamming", preemphasis=0.97, fmin_hz=None, fmax_hz=None)

    def win_samples(self, sample_rate: int) -> int:
        """Analysis window length in samples."""
        return int(round(sample_rate * self.win_len_ms / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        """Frame step in samples."""
        return int(round(sample_rate * self.hop_ms / 1000.0))

    def band(self, sample_rate: int) -> Tuple[float, float]:
        """(fmin, fmax) in Hz, with absent limits meaning the full band."""
        fmin = 0.0 if self.fmin_hz is None else float(self.fmin_hz)
        fmax = sample_rate / 2.0 if self.fmax_hz is None else float(self.fmax_hz)
        return fmin, fmax


@dataclass(frozen=True)
class NetworkConfig:
    """Half-channel ResNet-34 embedding network settings."""

    feat_dim: int = 40
    embed_dim: int = 256
    pooling: str = "SP"
    aggregate_stages: int = 1
    channels: Tuple[int, ...] = HALF_RESNET34_CHANNELS
    blocks_per_stage: Tuple[int, ...] = RESNET34_BLOCKS
    asp_hidden: int = 128

    def __post_init__(self):
        if self.feat_dim <= 0 or self.feat_dim % 8 != 0:
            raise InputError(f"network.feat_dim must be a positive multiple of 8, got {self.feat_dim}")
        if self.embed_dim <= 0:
            raise InputError(f"network.embed_dim must be positive, got {self.embed_dim}")
        if self.pooling not in POOLINGS:
            raise InputError(f"network.pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.aggregate_stages not in (1, 2, 3):
            raise InputError(f"network.aggregate_stages must be 1, 2 or 3, got {self.aggregate_stages}")
        if tuple(self.channels) != HALF_RESNET34_CHANNELS:
            raise InputError(f"network.channels must be {HALF_RESNET34_CHANNELS}, got {self.channels}")
        if tuple(self.blocks_per_stage) != RESNET34_BLOCKS:
            raise InputError(f"network.blocks_per_stage must be {RESNET34_BLOCKS}, got {self.blocks_per_stage}")
        if self.asp_hidden <= 0:
            raise InputError(f"network.asp_hidden must be positive, got {self.asp_hidden}")

    @classmethod
    def from_system_name(cls, name: str, feat_dim: int = 40) -> "NetworkConfig":
        """Parse names such as ``H/SP-160``, ``H/ASP-512`` or ``H3/SP-256``."""
        match = _SYSTEM_NAME.match(name.strip())
        if match is None:
            raise InputError(f"unrecognized system name {name!r} (expected e.g. H/SP-256 or H2/SP-256)")
        stages = int(match.group(1)) if match.group(1) else 1
        return cls(
            feat_dim=feat_dim,
            embed_dim=int(match.group(3)),
            pooling=match.group(2),
            aggregate_stages=stages,
        )

    @property
    def system_name(self) -> str:
        prefix = "H" if self.aggregate_stages == 1 else f"H{self.aggregate_stages}"
        return f"{prefix}/{self.pooling}-{self.embed_dim}"


@dataclass(frozen=True)
class LossConfig:
    """Training objective settings."""

    kind: str = "S_then_AAM"
    margin: float = 0.2
    scale: float = 30.0
    ap_group_size: int = 2
    ap_w: float = 10.0
    ap_b: float = -5.0
    switch_epoch: int = 3

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InputError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.margin < 0:
            raise InputError(f"loss.margin must be non-negative, got {self.margin}")
        if self.scale <= 0:
            raise InputError(f"loss.scale must be positive, got {self.scale}")
        if self.ap_group_size != 2:
            raise InputError(f"loss.ap_group_size must be 2, got {self.ap_group_size}")
        if self.ap_w <= 0:
            raise InputError(f"loss.ap_w must be positive, got {self.ap_w}")
        if self.switch_epoch < 0:
            raise InputError(f"loss.switch_epoch must be non-negative, got {self.switch_epoch}")


@dataclass(frozen=True)
class SegmentConfig:
    """Evaluation segment sampling (the 10 x 4 s protocol)."""

    n_segments: int = 10
    seg_len_s: float = 4.0

    def __post_init__(self):
        if self.n_segments <= 0:
            raise InputError(f"segment.n_segments must be positive, got {self.n_segments}")
        if self.seg_len_s <= 0:
            raise InputError(f"segment.seg_len_s must be positive, got {self.seg_len_s}")


@dataclass(frozen=True)
class CohortConfig:
    """One AS-norm cohort: N sampled utterances, top-X statistics."""

    N: int
    X: int
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.X <= self.N:
            raise InputError(f"cohort requires 1 <= X <= N, got N={self.N}, X={self.X}")
        if self.repeats <= 0:
            raise InputError(f"cohort repeats must be positive, got {self.repeats}")


@dataclass(frozen=True)
class NormConfig:
    """AS-norm grid search settings."""

    grid_ns: Tuple[int, ...] = (2000, 3000, 4000)
    grid_xs: Tuple[int, ...] = (200, 300, 400)
    repeats: int = 10

    def __post_init__(self):
        if not self.grid_ns or not self.grid_xs:
            raise InputError("norm.grid_ns and norm.grid_xs must be non-empty")
        if min(self.grid_ns) <= 0 or min(self.grid_xs) <= 0:
            raise InputError("norm grid values must be positive")
        if self.repeats <= 0:
            raise InputError(f"norm.repeats must be positive, got {self.repeats}")


@dataclass(frozen=True)
class DcfConfig:
    """Detection cost parameters."""

    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.05

    def __post_init__(self):
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise InputError("dcf.c_miss and dcf.c_fa must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise InputError(f"dcf.p_target must lie in (0, 1), got {self.p_target}")


@dataclass(frozen=True)
class FusionConfig:
    """Score fusion inputs and weight search settings."""

    systems: Tuple[str, ...] = ()
    weights: Tuple[float, ...] = ()
    granularity: float = 0.01
    coarse_step: float = 0.05
    objective: str = "DCF"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise InputError(f"fusion.objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.weights and self.systems and len(self.weights) != len(self.systems):
            raise InputError("fusion.weights must have one entry per fusion.systems path")
        if not 0.0 < self.granularity <= 1.0 or not 0.0 < self.coarse_step <= 1.0:
            raise InputError("fusion.granularity and fusion.coarse_step must lie in (0, 1]")


@dataclass(frozen=True)
class IOConfig:
    """Paths used by the commands; empty string means unset."""

    trials: str = ""
    store: str = ""
    pool: str = ""
    weights: str = ""
    corpus: str = ""
    rirs: str = ""
    out: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run depends on."""

    feature: FeatureConfig = field(default_factory=FeatureConfig.fb40)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    norm: NormConfig = field(default_factory=NormConfig)
    dcf: DcfConfig = field(default_factory=DcfConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    io: IOConfig = field(default_factory=IOConfig)
    master_seed: int = 0

    def __post_init__(self):
        if self.network.feat_dim != self.feature.n_mels:
            raise InputError(
                f"network.feat_dim ({self.network.feat_dim}) must equal feature.n_mels ({self.feature.n_mels})"
            )
        if self.master_seed < 0:
            raise InputError(f"master_seed must be non-negative, got {self.master_seed}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load a key=value configuration file."""
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        return parse_config_text(text)

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, master_seed=seed)

    def to_text(self) -> str:
        """Serialize back to the key=value format, one line per field."""
        lines = []
        for section in dataclasses.fields(self):
            value = getattr(self, section.name)
            if not dataclasses.is_dataclass(value):
                lines.append(f"{section.name}={_format_value(value)}")
                continue
            for item in dataclasses.fields(value):
                lines.append(f"{section.name}.{item.name}={_format_value(getattr(value, item.name))}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``section.key=value`` lines into an ExperimentConfig."""
    sections: Dict[str, Dict[str, str]] = {}
    top: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            sections.setdefault(section, {})[name] = value
        else:
            top[key] = value

    section_types = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kwargs: Dict[str, Any] = {}
    for section, values in sections.items():
        if section not in section_types or section == "master_seed":
            raise InputError(f"unknown config section {section!r}")
        section_cls = _section_class(section)
        defaults = _section_defaults(section)
        kwargs[section] = _build(section_cls, values, defaults, prefix=section)
    for key, value in top.items():
        if key != "master_seed":
            raise InputError(f"unknown config key {key!r}")
        kwargs["master_seed"] = _coerce(value, int, key)
    return ExperimentConfig(**kwargs)


def _section_class(section: str) -> type:
    hints = typing.get_type_hints(ExperimentConfig)
    return hints[section]


def _section_defaults(section: str) -> Any:
    for item in dataclasses.fields(ExperimentConfig):
        if item.name == section:
            return item.default_factory()
    raise InputError(f"unknown config section {section!r}")


def _build(cls: type, values: Dict[str, str], defaults: Any, prefix: str) -> Any:
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    parsed: Dict[str, Any] = {}
    for name, raw in values.items():
        if name not in known:
            raise InputError(f"unknown config key {prefix}.{name}")
        parsed[name] = _coerce(raw, hints[name], f"{prefix}.{name}")
    if defaults is None:
        return cls(**parsed)
    return dataclasses.replace(defaults, **parsed)


def _coerce(raw: str, hint: Any, key: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is Union:
            inner = [a for a in args if a is not type(None)][0]
            if raw.lower() in ("", "none"):
                return None
            return _coerce(raw, inner, key)
        if origin in (tuple, Tuple):
            item_type = args[0] if args else str
            if not raw:
                return ()
            return tuple(_coerce(part.strip(), item_type, key) for part in raw.split(","))
        if hint is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise InputError(f"config key {key}: cannot parse {raw!r}") from exc


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)
