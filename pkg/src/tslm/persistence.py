"""Checkpoint container, JSONL pair files and the pipeline configuration."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autoencoder import Autoencoder, AutoencoderConfig
from .datagen import CaptionedPair
from .decoder import SamplingConfig, TslmModel
from .denoiser import DenoiserModel
from .encoder import EncoderConfig
from .errors import DataError, FormatError, MigrationError, ParameterError
from .textrep import Vocabulary

MAGIC = b"TSLM"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
AE_PREFIX = "ae/"


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def model_arrays(model) -> dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    ae = getattr(model, "ae", None)
    if ae is not None:
        arrays.update({AE_PREFIX + name: p.data for name, p in ae.named_parameters().items()})
    return arrays


def model_header(model) -> dict:
    if isinstance(model, Autoencoder):
        return {"kind": "autoencoder", "autoencoder": model.config.to_dict()}
    if isinstance(model, (DenoiserModel, TslmModel)):
        header = {
            "kind": model.kind,
            "encoder": model.config.to_dict(),
            "autoencoder": model.ae.config.to_dict(),
            "vocab": list(model.vocab.tokens),
        }
        if isinstance(model, TslmModel):
            header["decoder"] = {"layers": model.dec_layers, "max_len": model.max_len}
        return header
    raise ParameterError(f"cannot checkpoint {type(model).__name__}")


def write_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    """Magic, u32 version, u64 header length, JSON header, float32 LE payload."""
    tensors, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        tensors.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"config": config, "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MigrationError(f"{path}: checkpoint format version {version} is not supported (expected {VERSION})")
    start = _PREFIX.size + hlen
    if start > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
        config, tensors = header["config"], header["tensors"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    payload = memoryview(raw)[start:]
    arrays, expected = {}, 0
    for t in sorted(tensors, key=lambda t: t["offset"]):
        n = math.prod(t["shape"])
        if t["offset"] != expected:
            raise FormatError(f"{path}: tensor {t['name']} overlaps or leaves a gap")
        if t["offset"] + 4 * n > len(payload):
            raise FormatError(f"{path}: truncated payload at tensor {t['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=t["offset"])
        arrays[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
        expected += 4 * n
    if expected != len(payload):
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, header describes {expected}")
    return config, arrays


def save_checkpoint(model, path) -> None:
    write_checkpoint(path, model_header(model), model_arrays(model))


def _load_into(module, arrays: dict, prefix: str = "") -> None:
    sub = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)} if prefix else {
        k: v for k, v in arrays.items() if not k.startswith(AE_PREFIX)
    }
    try:
        module.load_arrays(sub)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint tensors do not match the model: {exc}") from exc


def _build_ae(config: dict, arrays: dict, prefix: str) -> Autoencoder:
    ae = Autoencoder(AutoencoderConfig.from_dict(config))
    _load_into(ae, arrays, prefix)
    return ae


def load_checkpoint(path):
    """Rebuild the model stored at ``path`` (autoencoder, denoiser or tslm)."""
    config, arrays = read_checkpoint(path)
    kind = config.get("kind")
    try:
        if kind == "autoencoder":
            return _build_ae(config["autoencoder"], arrays, "")
        ae = _build_ae(config["autoencoder"], arrays, AE_PREFIX)
        vocab = Vocabulary(tuple(config["vocab"]))
        enc = EncoderConfig(**config["encoder"])
    except (KeyError, TypeError, ParameterError) as exc:
        raise FormatError(f"{path}: invalid model configuration ({exc})") from exc
    if kind == "denoiser":
        model = DenoiserModel(vocab, enc, ae)
    elif kind == "tslm":
        dec = config.get("decoder", {})
        model = TslmModel(vocab, enc, ae, int(dec.get("layers", 2)), int(dec.get("max_len", 16)))
    else:
        raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
    _load_into(model, arrays)
    return model


# ----------------------------------------------------------------------
# JSONL pair files
# ----------------------------------------------------------------------
def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def pair_from_obj(obj) -> CaptionedPair:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    series, caption = obj.get("series"), obj.get("caption")
    if not isinstance(series, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in series):
        raise ValueError("'series' must be a list of numbers")
    if not isinstance(caption, str):
        raise ValueError("'caption' must be a string")
    score = obj.get("score")
    if score is not None and (not isinstance(score, (int, float)) or not math.isfinite(score)):
        raise ValueError("'score' must be a finite number")
    return CaptionedPair(tuple(float(v) for v in series), caption, obj.get("source", "original"), score)


def read_pairs(path) -> list[CaptionedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pairs.append(pair_from_obj(json.loads(line, parse_constant=_reject_constant)))
            except (ValueError, ParameterError) as exc:
                raise DataError(f"{path}: {exc}", line=lineno) from exc
    return pairs


def read_many(paths: Iterable) -> list[CaptionedPair]:
    out = []
    for p in paths:
        out.extend(read_pairs(p))
    return out


def pair_to_obj(pair: CaptionedPair) -> dict:
    obj = {"series": list(pair.series), "caption": pair.caption, "source": pair.source}
    if pair.score is not None:
        obj["score"] = pair.score
    return obj


def write_pairs(path, pairs: Sequence[CaptionedPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(pair_to_obj(p)) + "\n")


# ----------------------------------------------------------------------
# pipeline configuration
# ----------------------------------------------------------------------
@dataclass
class PipelineConfig:
    d: int = 128
    heads: int = 4
    prototypes: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    l_max: int = 24
    ae_channels: tuple = (32, 16, 16, 32)
    vocab_path: str | None = None
    lr: float = 1e-4
    warmup_ratio: float = 0.33
    weight_decay: float = 0.01
    ae_lr: float | None = None
    denoiser_lr: float | None = None
    ae_epochs: int = 500
    ae_batch: int = 32
    denoiser_epochs: int = 10
    tslm_epochs: int = 10
    batch: int = 8
    max_len: int = 16
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    threshold: float | str = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sampling, dict):
            self.sampling = SamplingConfig(**self.sampling)
        self.ae_channels = tuple(self.ae_channels)
        if self.d % self.heads:
            raise ParameterError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.l_max % 4:
            raise ParameterError("l_max must be divisible by 4 (f = l_max / 4)")
        if isinstance(self.threshold, str) and self.threshold != "auto":
            raise ParameterError("threshold must be a number or 'auto'")

    @property
    def f(self) -> int:
        return self.l_max // 4

    def ae_config(self) -> AutoencoderConfig:
        return AutoencoderConfig(self.d, self.l_max, self.ae_channels, self.seed)

    def encoder_config(self, vocab_size: int, variant: str = "joint", seed: int | None = None) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            d=self.d,
            heads=self.heads,
            prototypes=self.prototypes,
            layers=self.enc_layers,
            f=self.f,
            variant=variant,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ae_channels"] = list(self.ae_channels)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        if "f" in obj:
            f = obj.pop("f")
            if f != obj.get("l_max", cls.l_max) // 4:
                raise ParameterError("f must equal l_max / 4")
        known = {fl.name for fl in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
