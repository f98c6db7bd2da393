"""Run configuration: flat key=value files, CLI overrides, and artifact fingerprints.

The fingerprint is a SHA-256 over the canonical rendering of every field that
changes what a trained model or built index contains, plus a digest of the
vocabulary file. Artifacts carry it so mismatched chains are refused instead
of silently evaluated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .errors import ParseError

DIM_CHOICES = (64, 128, 256, 512, 768)

GRANULARITIES = ("topic", "word", "global")
SCHEMES = ("f32", "f16", "u8")
OPTIMIZERS = ("adam", "sgd")

# Fields that do not change artifact content: excluded from the fingerprint
# (scheme and granularity are recorded in each index's own header; k and
# threads only shape one invocation).
_NON_FINGERPRINT = {"scheme", "granularity", "k", "threads"}


@dataclass
class RunConfig:
    seed: int = 0
    topics: int = 8
    alpha: float | None = None
    eta: float | None = None
    train_iters: int = 200
    infer_iters: int = 50
    theta_t: float = 0.15
    theta_wf: float = 0.005
    theta_wr: float = 0.2
    d_c: int = 64
    d_a: int = 64
    dim: int = 256
    max_query_len: int = 32
    max_doc_len: int = 180
    min_count: int = 1
    normalize: bool = True
    m: int = 2
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    granularity: str = "topic"
    scheme: str = "f32"
    k: int = 1000
    threads: int = 1

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 1.0 / self.topics
        if self.eta is None:
            self.eta = 1.0 / self.topics
        if self.topics < 2:
            raise ValueError("topics must be >= 2")
        if self.dim not in DIM_CHOICES:
            raise ValueError(f"dim must be one of {DIM_CHOICES}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_query_len < 3 or self.max_doc_len < 3:
            raise ValueError("max lengths must leave room past the two prefix tokens")
        if self.k < 1 or self.threads < 1:
            raise ValueError("k and threads must be >= 1")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, raw: str, target_type):
    if target_type is bool:
        if raw not in ("on", "off"):
            raise ValueError(f"{name} must be 'on' or 'off', got {raw!r}")
        return raw == "on"
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


_FIELD_TYPES = {
    "seed": int, "topics": int, "alpha": float, "eta": float,
    "train_iters": int, "infer_iters": int,
    "theta_t": float, "theta_wf": float, "theta_wr": float,
    "d_c": int, "d_a": int, "dim": int,
    "max_query_len": int, "max_doc_len": int, "min_count": int,
    "normalize": bool, "m": int, "batch_size": int, "epochs": int,
    "learning_rate": float, "optimizer": str,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "granularity": str, "scheme": str, "k": int, "threads": int,
}


def render_config(cfg: RunConfig) -> str:
    """Canonical key=value text in declaration order; parse() inverts it."""
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(source, line_no, "expected key=value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ParseError(source, line_no, f"unknown config key {key!r}")
        values[key] = raw.strip()
    return values


def config_from_sources(
    file_values: dict[str, str] | None = None, overrides: dict | None = None
) -> RunConfig:
    """Defaults, overlaid with file values, overlaid with explicit overrides."""
    kwargs = {}
    for key, raw in (file_values or {}).items():
        kwargs[key] = _parse_value(key, raw, _FIELD_TYPES[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    return RunConfig(**kwargs)


def parse_config(text: str) -> RunConfig:
    return config_from_sources(parse_config_text(text))


def fingerprint(cfg: RunConfig, vocab_digest: bytes) -> bytes:
    """32-byte chain identity for artifacts built under this config + vocabulary."""
    h = hashlib.sha256()
    for f in fields(cfg):
        if f.name in _NON_FINGERPRINT:
            continue
        h.update(f"{f.name}={_format_value(getattr(cfg, f.name))}\n".encode("utf-8"))
    h.update(b"vocab:")
    h.update(vocab_digest)
    return h.digest()


def digest_file(path) -> bytes:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.digest()
