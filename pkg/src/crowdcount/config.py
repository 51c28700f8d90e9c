"""Pipeline configuration: nested keys, validation, overrides, and hashing.

The resolved configuration is hashed (sha256 over canonical JSON) and the
hash is stored in trained model files; counting with a model whose hash does
not match the active analysis settings is refused rather than silently
producing numbers from a mismatched feature layout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class FourierConfig:
    cutoff: float = 0.25  # low-pass radius as a fraction of the spectrum extent
    peak_sigma: float = 0.5  # peak threshold = mean + peak_sigma * std


@dataclass(frozen=True)
class GlcmConfig:
    levels: int = 8


@dataclass(frozen=True)
class CodebookConfig:
    size: int = 300
    rate_floor: float = 0.01


@dataclass(frozen=True)
class SvrConfig:
    kernel: str = "rbf"
    c: float = 10.0
    epsilon: float = 0.5  # tube width in count units
    tol: float = 1e-3


@dataclass(frozen=True)
class HeadConfig:
    window: int = 16
    threshold: float = 0.0
    scales: tuple[float, ...] = (1.0, 1.5, 2.25)


@dataclass(frozen=True)
class Config:
    """Full analysis configuration.

    ``sampling_stride`` of 0 means "half the cell size", the default
    training density.
    """

    cell_size: int = 128
    sampling_stride: int = 0
    seed: int = 0
    fourier: FourierConfig = field(default_factory=FourierConfig)
    glcm: GlcmConfig = field(default_factory=GlcmConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    svr: SvrConfig = field(default_factory=SvrConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if self.cell_size < 32:
            raise ConfigError(f"cell_size must be >= 32, got {self.cell_size}")
        if self.sampling_stride < 0:
            raise ConfigError(f"sampling_stride must be >= 0, got {self.sampling_stride}")
        if not 0.0 < self.fourier.cutoff <= 1.0:
            raise ConfigError(f"fourier.cutoff must be in (0, 1], got {self.fourier.cutoff}")
        if self.fourier.peak_sigma < 0:
            raise ConfigError(f"fourier.peak_sigma must be >= 0, got {self.fourier.peak_sigma}")
        if self.glcm.levels < 2:
            raise ConfigError(f"glcm.levels must be >= 2, got {self.glcm.levels}")
        if self.codebook.size < 1:
            raise ConfigError(f"codebook.size must be >= 1, got {self.codebook.size}")
        if self.codebook.rate_floor <= 0:
            raise ConfigError(f"codebook.rate_floor must be > 0, got {self.codebook.rate_floor}")
        if self.svr.kernel not in ("linear", "rbf"):
            raise ConfigError(f"svr.kernel must be 'linear' or 'rbf', got {self.svr.kernel!r}")
        if self.svr.c <= 0 or self.svr.epsilon < 0 or self.svr.tol <= 0:
            raise ConfigError(
                f"svr hyperparameters out of range: c={self.svr.c}, "
                f"epsilon={self.svr.epsilon}, tol={self.svr.tol}"
            )
        if self.head.window < 8 or self.head.window > self.cell_size:
            raise ConfigError(
                f"head.window must be in [8, cell_size], got {self.head.window}"
            )
        if not self.head.scales or any(s <= 0 for s in self.head.scales):
            raise ConfigError(f"head.scales must be positive, got {self.head.scales}")

    @property
    def stride(self) -> int:
        """Effective training sampling stride."""
        return self.sampling_stride if self.sampling_stride > 0 else self.cell_size // 2

    def to_dict(self) -> dict:
        return {
            "cell_size": self.cell_size,
            "sampling_stride": self.sampling_stride,
            "seed": self.seed,
            "fourier": {"cutoff": self.fourier.cutoff, "peak_sigma": self.fourier.peak_sigma},
            "glcm": {"levels": self.glcm.levels},
            "codebook": {"size": self.codebook.size, "rate_floor": self.codebook.rate_floor},
            "svr": {
                "kernel": self.svr.kernel,
                "c": self.svr.c,
                "epsilon": self.svr.epsilon,
                "tol": self.svr.tol,
            },
            "head": {
                "window": self.head.window,
                "threshold": self.head.threshold,
                "scales": list(self.head.scales),
            },
        }

    def analysis_hash(self) -> str:
        """sha256 over every analysis-relevant key.

        The seed is excluded: two models trained with different seeds are
        different models, not incompatible ones, and inference takes no
        seed at all.
        """
        doc = self.to_dict()
        del doc["seed"]
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("ascii")).hexdigest()


_SECTION_TYPES = {
    "fourier": FourierConfig,
    "glcm": GlcmConfig,
    "codebook": CodebookConfig,
    "svr": SvrConfig,
    "head": HeadConfig,
}
_SCALAR_KEYS = {"cell_size", "sampling_stride", "seed"}


def _build_section(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {name!r}: {sorted(unknown)}")
    kwargs = dict(raw)
    if name == "head" and "scales" in kwargs:
        scales = kwargs["scales"]
        if not isinstance(scales, (list, tuple)):
            raise ConfigError("head.scales must be a list of numbers")
        kwargs["scales"] = tuple(float(s) for s in scales)
    return cls(**kwargs)


def config_from_dict(doc: dict) -> Config:
    """Build a validated Config from a nested mapping; unknown keys rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = set(doc) - _SCALAR_KEYS - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key in _SCALAR_KEYS & doc.keys():
        try:
            kwargs[key] = int(doc[key])
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} must be an integer") from None
    for name, cls in _SECTION_TYPES.items():
        if name in doc:
            kwargs[name] = _build_section(name, cls, doc[name])
    try:
        return Config(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value types: {exc}") from None


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg: Config, overrides: dict[str, object]) -> Config:
    """Apply flat dotted-key overrides (e.g. ``{"svr.c": 5}``) on top of cfg.

    Override values win over the file. Values may arrive as strings from
    the command line; they are coerced by the target field's type.
    """
    doc = cfg.to_dict()
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = doc
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[leaf] = _coerce_like(node[leaf], value, dotted)
    return config_from_dict(doc)


def _coerce_like(current, value, dotted: str):
    if isinstance(value, str):
        if isinstance(current, bool):
            raise ConfigError(f"config key {dotted!r} does not take a flag value")
        if isinstance(current, int):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"config key {dotted!r} expects an integer") from None
        if isinstance(current, float):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"config key {dotted!r} expects a number") from None
        if isinstance(current, list):
            try:
                return [float(tok) for tok in value.split(",") if tok.strip()]
            except ValueError:
                raise ConfigError(f"config key {dotted!r} expects comma-separated numbers") from None
        return value
    return value
