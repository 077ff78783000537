"""Per-prompt conditioning states: a projected long-context embedding (256 rows)
followed by a projected short-context embedding (77 rows), 333 rows total.

Real T5/CLIP encoders are not run here. Embeddings come from fixture files or
from :func:`synthesize`, which derives a deterministic pseudo-embedding from
the prompt text.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FixtureFormatError, PromptStateError, SourceError
from .tensor import DTYPE, derive_seed, gelu, linear, read_tensor, seeded_normal

LONG_LEN = 256
SHORT_LEN = 77
STATE_LEN = LONG_LEN + SHORT_LEN


class EmbeddingSource(str, enum.Enum):
    LONG = "long"
    SHORT = "short"

    @property
    def max_len(self) -> int:
        return LONG_LEN if self is EmbeddingSource.LONG else SHORT_LEN


@dataclass(frozen=True, eq=False)
class RawEmbedding:
    source: EmbeddingSource
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "source", EmbeddingSource(self.source))
        v = np.ascontiguousarray(self.values, dtype=DTYPE)
        if v.ndim != 2 or v.shape[0] < 1:
            raise DimensionError(f"embedding must be seq_len x dim with seq_len >= 1, got {v.shape}")
        if v.shape[0] > self.source.max_len:
            raise DimensionError(
                f"{self.source.value} embedding has {v.shape[0]} rows, limit is {self.source.max_len}"
            )
        object.__setattr__(self, "values", v)

    @property
    def seq_len(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class TextState:
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=DTYPE)
        if v.ndim != 2 or v.shape[0] != STATE_LEN:
            raise DimensionError(f"text state must have {STATE_LEN} rows, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def d_model(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PromptRecord:
    text: str
    long: RawEmbedding
    short: RawEmbedding


@dataclass(frozen=True)
class PromptSet:
    positives: list[PromptRecord]
    negative: PromptRecord

    def __post_init__(self):
        if len(self.positives) < 1:
            raise ValueError("a prompt set needs at least one positive prompt")

    @property
    def n(self) -> int:
        return len(self.positives)


@dataclass(frozen=True, eq=False)
class ProjectionMlp:
    w1: np.ndarray  # d_long x d_model
    b1: np.ndarray
    w2: np.ndarray  # d_short x d_model
    b2: np.ndarray

    def __post_init__(self):
        d_model = self.w1.shape[1]
        if self.w2.shape[1] != d_model or self.b1.shape != (d_model,) or self.b2.shape != (d_model,):
            raise DimensionError("projection output widths disagree")

    @property
    def d_model(self) -> int:
        return self.w1.shape[1]

    @property
    def d_long(self) -> int:
        return self.w1.shape[0]

    @property
    def d_short(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def seeded(cls, d_long: int, d_short: int, d_model: int, seed: int, scale: float = 0.02):
        return cls(
            w1=seeded_normal((d_long, d_model), derive_seed(seed, "mlp", "w1"), scale),
            b1=np.zeros(d_model, DTYPE),
            w2=seeded_normal((d_short, d_model), derive_seed(seed, "mlp", "w2"), scale),
            b2=np.zeros(d_model, DTYPE),
        )


def project_long(emb: RawEmbedding, mlp: ProjectionMlp) -> np.ndarray:
    """Affine + GELU on the long-context embedding, then zero-pad to 256 rows."""
    if emb.source is not EmbeddingSource.LONG:
        raise SourceError(f"project_long needs a long-context embedding, got {emb.source.value}")
    if emb.dim != mlp.d_long:
        raise DimensionError(f"long embedding dim {emb.dim} != projection input {mlp.d_long}")
    out = np.zeros((LONG_LEN, mlp.d_model), DTYPE)
    out[: emb.seq_len] = gelu(linear(emb.values, mlp.w1, mlp.b1))
    return out


def build_text_state(long_proj, short, mlp: ProjectionMlp) -> TextState:
    long_proj = np.asarray(long_proj, dtype=DTYPE)
    if long_proj.shape != (LONG_LEN, mlp.d_model):
        raise DimensionError(f"projected long part must be {LONG_LEN}x{mlp.d_model}, got {long_proj.shape}")
    if isinstance(short, RawEmbedding):
        if short.source is not EmbeddingSource.SHORT:
            raise SourceError(f"short path needs a short-context embedding, got {short.source.value}")
        short = short.values
    short = np.asarray(short, dtype=DTYPE)
    if short.ndim != 2 or short.shape[0] > SHORT_LEN or short.shape[1] != mlp.d_short:
        raise DimensionError(f"short embedding must be <= {SHORT_LEN} x {mlp.d_short}, got {short.shape}")
    state = np.zeros((STATE_LEN, mlp.d_model), DTYPE)
    state[:LONG_LEN] = long_proj
    if short.shape[0]:
        state[LONG_LEN:LONG_LEN + short.shape[0]] = linear(short, mlp.w2, mlp.b2)
    return TextState(state)


def prompt_state(record: PromptRecord, mlp: ProjectionMlp) -> TextState:
    return build_text_state(project_long(record.long, mlp), record.short, mlp)


def batch_prompt_states(prompts: PromptSet, mlp: ProjectionMlp) -> list[TextState]:
    """States for every positive (region order) followed by the negative: N+1 in all."""
    records = list(prompts.positives) + [prompts.negative]
    states = []
    for i, rec in enumerate(records):
        try:
            states.append(prompt_state(rec, mlp))
        except (DimensionError, SourceError) as exc:
            raise PromptStateError(i, exc) from exc
    return states


# --------------------------------------------------------------------------
# embedding sources
# --------------------------------------------------------------------------

def load_embedding_fixture(path) -> RawEmbedding:
    values, headers = read_tensor(path)
    if "source" not in headers:
        raise FixtureFormatError(f"{path}: missing 'source:' header")
    try:
        source = EmbeddingSource(headers["source"].lower())
    except ValueError as exc:
        raise FixtureFormatError(f"{path}: unknown source {headers['source']!r}") from exc
    if values.ndim != 2:
        raise FixtureFormatError(f"{path}: embedding must be 2-D, got shape {values.shape}")
    return RawEmbedding(source, values)


def synthesize(text: str, seed: int, source: EmbeddingSource | str, dim: int) -> RawEmbedding:
    """Deterministic stand-in embedding; one row per whitespace token, clipped to the source limit."""
    source = EmbeddingSource(source)
    n_tokens = max(1, len(text.split()))
    seq_len = min(n_tokens, source.max_len)
    values = seeded_normal((seq_len, dim), derive_seed(seed, "embed", source.value, text), scale=1.0)
    return RawEmbedding(source, values)


def encode_prompt(text: str, seed: int, d_long: int, d_short: int) -> PromptRecord:
    return PromptRecord(
        text=text,
        long=synthesize(text, seed, EmbeddingSource.LONG, d_long),
        short=synthesize(text, seed, EmbeddingSource.SHORT, d_short),
    )


def load_prompt_record(text: str, long_path, short_path) -> PromptRecord:
    long = load_embedding_fixture(Path(long_path))
    short = load_embedding_fixture(Path(short_path))
    if long.source is not EmbeddingSource.LONG or short.source is not EmbeddingSource.SHORT:
        raise SourceError(f"fixture sources for {text!r} are swapped or wrong")
    return PromptRecord(text, long, short)
