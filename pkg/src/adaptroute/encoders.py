"""Sentence encoders used to embed tasks and queries.

Two encoders ship with the package:

* ``HashingEncoder`` is a deterministic hashed unigram+bigram encoder.  It is
  cheap, needs no model weights and is stable across runs and machines.
* ``PrecomputedEncoder`` serves embeddings produced by an external process
  through a JSON-lines exchange: the caller writes request lines
  ``{"id", "instruction", "body"}`` and the external encoder answers with
  ``{"id", "embedding"}`` lines.  Request ids are content hashes, so one
  response file can be reused for any text it covers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, IoError, NotFoundError

INSTRUCTION = "Represent the sentence for similar task retrieval"

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    dimension: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ConfigError("encoder name must be non-empty")
        if int(self.dimension) != self.dimension or self.dimension <= 0:
            raise ConfigError(f"encoder dimension must be a positive integer, got {self.dimension}")

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(
            {"name": self.name, "dimension": int(self.dimension), "params": self.params},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"name": self.name, "dimension": int(self.dimension), "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        try:
            return cls(name=d["name"], dimension=d["dimension"], params=dict(d.get("params", {})))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed encoder spec: {exc}") from exc


class Encoder:
    spec: EncoderSpec

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint

    def encode(self, instruction: str, body: str) -> np.ndarray:
        raise NotImplementedError

    def encode_many(self, bodies: Iterable[str], instruction: str = INSTRUCTION) -> np.ndarray:
        rows = [self.encode(instruction, b) for b in bodies]
        if not rows:
            return np.zeros((0, self.dimension))
        return np.vstack(rows)


def encode(encoder: Encoder, instruction: str, body: str) -> np.ndarray:
    return encoder.encode(instruction, body)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _key64(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode(), digest_size=8).digest(), "little")


class HashingEncoder(Encoder):
    """Signed feature hashing of case-folded unigrams and bigrams, L2-normalised.

    Buckets come from a multiply-shift hash with odd multipliers derived from
    ``seed``; a second multiplier supplies the sign.
    """

    name = "hashing-ngram"

    def __init__(self, dimension: int = 256, seed: int = 0):
        self.spec = EncoderSpec(self.name, dimension, {"seed": int(seed)})
        self._mul_bucket = _splitmix64(2 * seed) | 1
        self._mul_sign = _splitmix64(2 * seed + 1) | 1
        self._cache: dict[str, tuple[int, float]] = {}

    def _slot(self, feature: str) -> tuple[int, float]:
        hit = self._cache.get(feature)
        if hit is None:
            h = _key64(feature)
            bucket = (((self._mul_bucket * h) & _MASK64) * self.spec.dimension) >> 64
            sign = -1.0 if ((self._mul_sign * h) & _MASK64) >> 63 else 1.0
            hit = self._cache[feature] = (bucket, sign)
        return hit

    def encode(self, instruction: str, body: str) -> np.ndarray:
        tokens = f"{instruction} {body}".casefold().split()
        vec = np.zeros(self.spec.dimension)
        feats = [f"1:{t}" for t in tokens] + [f"2:{a} {b}" for a, b in zip(tokens, tokens[1:])]
        for f in feats:
            bucket, sign = self._slot(f)
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        # all features can cancel through sign collisions; only an empty token list may give zero
        if norm > 0:
            vec /= norm
        return vec


def request_id(instruction: str, body: str) -> str:
    return hashlib.blake2b(f"{instruction}\n{body}".encode(), digest_size=12).hexdigest()


def write_requests(bodies: Iterable[str], path: str | Path, instruction: str = INSTRUCTION) -> int:
    seen = set()
    lines = []
    for body in bodies:
        rid = request_id(instruction, body)
        if rid in seen:
            continue
        seen.add(rid)
        lines.append(json.dumps({"id": rid, "instruction": instruction, "body": body}, sort_keys=True))
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(lines)


def read_responses(path: str | Path, dimension: int) -> dict[str, np.ndarray]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rid, emb = rec["id"], np.asarray(rec["embedding"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad response line ({exc})") from exc
        if emb.shape != (dimension,):
            raise DimensionError(f"{path}:{lineno}: embedding has shape {emb.shape}, expected ({dimension},)")
        if not np.all(np.isfinite(emb)):
            raise FormatError(f"{path}:{lineno}: non-finite embedding")
        table[rid] = emb
    return table


def write_responses(table: dict[str, np.ndarray], path: str | Path) -> None:
    lines = [json.dumps({"id": k, "embedding": table[k].tolist()}, sort_keys=True) for k in sorted(table)]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class PrecomputedEncoder(Encoder):
    """Looks embeddings up in a table keyed by ``request_id(instruction, body)``."""

    name = "precomputed"

    def __init__(self, table: dict[str, np.ndarray], dimension: int, source: str):
        self.spec = EncoderSpec(self.name, dimension, {"source": source})
        self._table = table

    @property
    def table(self) -> dict[str, np.ndarray]:
        return self._table

    @classmethod
    def from_file(cls, path: str | Path, dimension: int, source: str | None = None) -> "PrecomputedEncoder":
        return cls(read_responses(path, dimension), dimension, source or Path(path).name)

    def encode(self, instruction: str, body: str) -> np.ndarray:
        try:
            return self._table[request_id(instruction, body)].copy()
        except KeyError:
            raise NotFoundError(f"no precomputed embedding for {body!r}") from None


def make_encoder(spec: EncoderSpec | dict, base_dir: str | Path = ".") -> Encoder:
    """Rebuild an encoder from a stored spec.

    For precomputed encoders ``params["source"]`` names the response file,
    resolved relative to ``base_dir``.
    """
    if isinstance(spec, dict):
        spec = EncoderSpec.from_dict(spec)
    if spec.name == HashingEncoder.name:
        return HashingEncoder(spec.dimension, spec.params.get("seed", 0))
    if spec.name == PrecomputedEncoder.name:
        source = spec.params.get("source")
        if not source:
            raise ConfigError("precomputed encoder spec lacks a source file")
        return PrecomputedEncoder.from_file(Path(base_dir) / source, spec.dimension, source)
    raise ConfigError(f"unknown encoder {spec.name!r}")
