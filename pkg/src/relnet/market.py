"""Synthetic competitive streaming market with a planted competition effect.

Each series has categorical metadata (genre, director, lead actor) and three
numeric scores. Its intrinsic log-demand comes from sparse main effects,
interactions between latent embeddings of the categories, and a nonlinearity
over the numeric scores. Realized log view count subtracts a competition
term driven by the most attractive series released within
``competition_window_days``. The popularity index is a noisy copy of the
intrinsic demand (before competition).

All randomness is keyed by (seed, stream, series id), so removing or adding
one series never changes the random draws of any other.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import RelationalSample
from .nn.checkpoint import atomic_write_text

FORMAT_NAME = "relnet-market"
FORMAT_VERSION = 1
DEMAND_CENTER = 12.0

_LATENT_STREAM = 0
_ATTRIBUTE_STREAM = 1
_NOISE_STREAM = 2


class DatasetError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    num_series: int = 2500
    horizon_days: int = 1460
    genre_cardinality: int = 100
    director_cardinality: int = 60
    actor_cardinality: int = 50
    competition_strength: float = 0.1
    competition_window_days: int = 30
    competitor_count: int = 3
    noise_std: float = 0.35
    aux_noise_std: float = 0.1
    latent_dim: int = 4
    max_episodes: int = 80
    seed: int = 0

    def validate(self) -> "GeneratorConfig":
        if self.num_series <= 0:
            raise ValueError(f"num_series must be positive, got {self.num_series}")
        if self.horizon_days <= 0:
            raise ValueError(f"horizon_days must be positive, got {self.horizon_days}")
        for name in ("genre_cardinality", "director_cardinality", "actor_cardinality"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.competition_window_days <= 0 or self.competition_window_days > self.horizon_days:
            raise ValueError("competition_window_days must lie in [1, horizon_days]")
        if self.competition_strength < 0 or self.noise_std < 0 or self.aux_noise_std < 0:
            raise ValueError("competition_strength, noise_std and aux_noise_std must be non-negative")
        if self.competitor_count < 0:
            raise ValueError("competitor_count must be non-negative")
        if self.latent_dim <= 0 or self.max_episodes < 1:
            raise ValueError("latent_dim and max_episodes must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SeriesRecord:
    id: int
    release_day: int
    genre_id: int
    director_id: int
    lead_actor_id: int
    episode_count: int
    budget_score: float
    buzz_score: float
    view_count: float = 1.0
    popularity_index: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


RECORD_FIELDS = tuple(f.name for f in dataclasses.fields(SeriesRecord))
CATEGORICAL_FIELDS = ("genre_id", "director_id", "lead_actor_id")
NUMERIC_FIELDS = ("episode_count", "budget_score", "buzz_score")


@dataclass
class FeatureEncoder:
    """One-hot blocks for genre, director, lead actor, then the numeric fields.

    episode_count is divided by ``max_episodes``; the two scores pass through.
    """

    cardinalities: dict = field(default_factory=lambda: {"genre_id": 100, "director_id": 60, "lead_actor_id": 50})
    numeric: tuple = NUMERIC_FIELDS
    max_episodes: int = 80

    @property
    def input_dim(self) -> int:
        return sum(self.cardinalities.values()) + len(self.numeric)

    def block_slices(self) -> dict:
        slices, start = {}, 0
        for name, card in self.cardinalities.items():
            slices[name] = slice(start, start + card)
            start += card
        for name in self.numeric:
            slices[name] = slice(start, start + 1)
            start += 1
        return slices

    def encode(self, record: SeriesRecord, zero_buzz: bool = False) -> np.ndarray:
        x = np.zeros(self.input_dim)
        offset = 0
        for name, card in self.cardinalities.items():
            value = getattr(record, name)
            if not 0 <= value < card:
                raise DatasetError(f"series {record.id}: {name}={value} is outside the vocabulary [0, {card})")
            x[offset + value] = 1.0
            offset += card
        for name in self.numeric:
            value = float(getattr(record, name))
            if name == "episode_count":
                value /= self.max_episodes
            elif name == "buzz_score" and zero_buzz:
                value = 0.0
            x[offset] = value
            offset += 1
        return x

    def to_dict(self) -> dict:
        return {"cardinalities": dict(self.cardinalities), "numeric": list(self.numeric), "max_episodes": self.max_episodes}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureEncoder":
        return cls(dict(data["cardinalities"]), tuple(data["numeric"]), int(data["max_episodes"]))

    @classmethod
    def for_config(cls, config: GeneratorConfig) -> "FeatureEncoder":
        cards = {
            "genre_id": config.genre_cardinality,
            "director_id": config.director_cardinality,
            "lead_actor_id": config.actor_cardinality,
        }
        return cls(cards, NUMERIC_FIELDS, config.max_episodes)


def encode_features(encoder: FeatureEncoder, record: SeriesRecord, zero_buzz: bool = False) -> np.ndarray:
    return encoder.encode(record, zero_buzz)


@dataclass
class MarketDataset:
    records: list
    encoder: FeatureEncoder
    config: GeneratorConfig

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("series ids must be unique")
        self.records = sorted(self.records, key=lambda r: (r.release_day, r.id))
        self._days = [r.release_day for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def window(self, day: int, width: int) -> list:
        lo = bisect.bisect_left(self._days, day - width)
        hi = bisect.bisect_right(self._days, day + width)
        return self.records[lo:hi]

    def by_id(self, series_id: int) -> SeriesRecord:
        for r in self.records:
            if r.id == series_id:
                return r
        raise KeyError(series_id)


# -- generation ----------------------------------------------------------------


@dataclass
class LatentWorld:
    """Hidden parameters of the demand model, drawn once per seed."""

    genre_emb: np.ndarray
    director_emb: np.ndarray
    actor_emb: np.ndarray
    genre_effect: np.ndarray
    director_effect: np.ndarray
    actor_effect: np.ndarray

    @classmethod
    def draw(cls, config: GeneratorConfig) -> "LatentWorld":
        rng = np.random.default_rng([config.seed, _LATENT_STREAM])
        k = config.latent_dim

        def emb(card):
            return rng.normal(0.0, 1.0 / math.sqrt(k), size=(card, k))

        def sparse_effect(card, scale, density=0.6):
            return rng.normal(0.0, scale, size=card) * (rng.random(card) < density)

        return cls(
            emb(config.genre_cardinality),
            emb(config.director_cardinality),
            emb(config.actor_cardinality),
            sparse_effect(config.genre_cardinality, 0.7),
            sparse_effect(config.director_cardinality, 0.8),
            sparse_effect(config.actor_cardinality, 0.8),
        )


def _draw_attributes(config: GeneratorConfig, series_id: int) -> SeriesRecord:
    rng = np.random.default_rng([config.seed, _ATTRIBUTE_STREAM, series_id])
    return SeriesRecord(
        id=series_id,
        release_day=int(rng.integers(0, config.horizon_days)),
        genre_id=int(rng.integers(0, config.genre_cardinality)),
        director_id=int(rng.integers(0, config.director_cardinality)),
        lead_actor_id=int(rng.integers(0, config.actor_cardinality)),
        episode_count=int(rng.integers(10, config.max_episodes + 1)),
        budget_score=float(rng.random()),
        buzz_score=float(rng.beta(2.0, 2.0)),
    )


def intrinsic_demand(record: SeriesRecord, world: LatentWorld) -> float:
    """Pre-competition log-demand of one series."""
    g, d, a = record.genre_id, record.director_id, record.lead_actor_id
    budget, buzz = record.budget_score, record.buzz_score
    linear = world.genre_effect[g] + world.director_effect[d] + world.actor_effect[a]
    interaction = 0.6 * math.tanh(2.0 * float(world.director_emb[d] @ world.actor_emb[a]))
    interaction += 0.4 * float(world.genre_emb[g] @ world.director_emb[d])
    numeric = 0.8 * budget + 0.6 * buzz + 1.2 * budget * buzz
    numeric += 0.4 * math.log(record.episode_count / 20.0)
    numeric += 0.5 * math.tanh(4.0 * (budget - 0.5)) * (1.0 + world.genre_emb[g, 0])
    return DEMAND_CENTER + linear + interaction + numeric


def attractiveness(demand: float) -> float:
    """How strongly a series draws viewers away from its neighbours."""
    return math.exp(0.5 * (demand - DEMAND_CENTER))


def audience_overlap(a: SeriesRecord, b: SeriesRecord, world: LatentWorld) -> float:
    """Overlap in [0.5, 1] from the cosine similarity of the two genre embeddings."""
    u, v = world.genre_emb[a.genre_id], world.genre_emb[b.genre_id]
    cos = float(u @ v) / max(float(np.linalg.norm(u) * np.linalg.norm(v)), 1e-12)
    return 0.75 + 0.25 * cos


def realize_targets(records, config: GeneratorConfig, world: LatentWorld | None = None) -> list:
    """Fill view_count and popularity_index for a catalog of series.

    Competition for series i sums attractiveness * overlap over the
    ``competitor_count`` most attractive other series released within
    ``competition_window_days`` of it.
    """
    config.validate()
    world = world or LatentWorld.draw(config)
    records = sorted(records, key=lambda r: (r.release_day, r.id))
    demand = {r.id: intrinsic_demand(r, world) for r in records}
    days = [r.release_day for r in records]
    w = config.competition_window_days
    out = []
    for rec in records:
        competition = 0.0
        if config.competition_strength > 0 and config.competitor_count > 0:
            lo = bisect.bisect_left(days, rec.release_day - w)
            hi = bisect.bisect_right(days, rec.release_day + w)
            rivals = [r for r in records[lo:hi] if r.id != rec.id]
            rivals.sort(key=lambda r: (-demand[r.id], r.id))
            competition = config.competition_strength * sum(
                attractiveness(demand[r.id]) * audience_overlap(rec, r, world)
                for r in rivals[: config.competitor_count]
            )
        noise = np.random.default_rng([config.seed, _NOISE_STREAM, rec.id]).normal(size=2)
        log_views = demand[rec.id] - competition + config.noise_std * noise[0]
        popularity = (demand[rec.id] - DEMAND_CENTER) + config.aux_noise_std * noise[1]
        out.append(dataclasses.replace(rec, view_count=math.exp(log_views), popularity_index=float(popularity)))
    return out


def generate_market(config: GeneratorConfig | None = None) -> MarketDataset:
    config = (config or GeneratorConfig()).validate()
    world = LatentWorld.draw(config)
    records = [_draw_attributes(config, i) for i in range(config.num_series)]
    return MarketDataset(realize_targets(records, config, world), FeatureEncoder.for_config(config), config)


# -- relational samples ----------------------------------------------------------


def select_related(dataset: MarketDataset, target: SeriesRecord, n: int) -> list:
    """Pick the n most popular other series within the competition window.

    Ties on popularity go to the smaller release-day gap, then the smaller id.
    Missing slots are padded with ``None`` (encoded as an all-zero vector).
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0:
        return []
    candidates = [
        r for r in dataset.window(target.release_day, dataset.config.competition_window_days) if r.id != target.id
    ]
    candidates.sort(key=lambda r: (-r.popularity_index, abs(r.release_day - target.release_day), r.id))
    chosen = candidates[:n]
    return chosen + [None] * (n - len(chosen))


def zero_buzz_for_offset(offset_days: int) -> bool:
    """Buzz is treated as unknown more than 30 days before release."""
    return offset_days > 30


def build_relational_dataset(dataset: MarketDataset, n: int, offset_days: int = 7) -> list:
    """One RelationalSample per series, in dataset order; y is log(view_count)."""
    zero_buzz = zero_buzz_for_offset(offset_days)
    enc = dataset.encoder
    zero = np.zeros(enc.input_dim)
    cache = {}

    def encoded(rec):
        if rec is None:
            return zero
        if rec.id not in cache:
            cache[rec.id] = enc.encode(rec, zero_buzz)
        return cache[rec.id]

    samples = []
    for rec in dataset.records:
        related = select_related(dataset, rec, n)
        samples.append(
            RelationalSample(
                x=encoded(rec),
                related=[encoded(r) for r in related],
                y=math.log(rec.view_count),
                y_aux=rec.popularity_index,
                series_id=rec.id,
                release_day=rec.release_day,
                n_padded=sum(r is None for r in related),
            )
        )
    return samples


@dataclass
class TargetScaling:
    y_mean: float
    y_std: float
    aux_mean: float
    aux_std: float

    @classmethod
    def fit(cls, samples) -> "TargetScaling":
        y = np.array([s.y for s in samples])
        aux = np.array([s.y_aux for s in samples])
        if y.size == 0:
            raise ValueError("cannot fit target scaling on no samples")
        return cls(float(y.mean()), float(y.std()) or 1.0, float(aux.mean()), float(aux.std()) or 1.0)

    def model_overrides(self) -> dict:
        return {"y_shift": self.y_mean, "y_scale": self.y_std, "aux_shift": self.aux_mean, "aux_scale": self.aux_std}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def temporal_split(data, split_day: int):
    """Split records or samples into (release_day < split_day, release_day >= split_day)."""
    if isinstance(data, MarketDataset):
        if not 0 < split_day < data.config.horizon_days:
            raise ValueError(f"split_day must lie in (0, {data.config.horizon_days}), got {split_day}")
        items = data.records
    else:
        items = list(data)
    train = [it for it in items if it.release_day < split_day]
    test = [it for it in items if it.release_day >= split_day]
    if not train:
        raise ValueError(f"split_day {split_day} leaves the training side empty")
    if not test:
        raise ValueError(f"split_day {split_day} leaves the test side empty")
    return train, test


# -- persistence ----------------------------------------------------------------


def _header(dataset: MarketDataset) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dataset.config.to_dict(),
        "encoder": dataset.encoder.to_dict(),
    }


def dumps_dataset(dataset: MarketDataset) -> str:
    lines = [json.dumps(_header(dataset), sort_keys=True)]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in dataset.records]
    return "\n".join(lines) + "\n"


def save_dataset(dataset: MarketDataset, path) -> None:
    atomic_write_text(path, dumps_dataset(dataset))


def _record_from(obj, lineno: int) -> SeriesRecord:
    if not isinstance(obj, dict) or set(obj) != set(RECORD_FIELDS):
        raise DatasetError(f"line {lineno}: expected a record with fields {sorted(RECORD_FIELDS)}")
    rec = SeriesRecord(**obj)
    for name in ("id", "release_day", "genre_id", "director_id", "lead_actor_id", "episode_count"):
        if not isinstance(getattr(rec, name), int):
            raise DatasetError(f"line {lineno}: {name} must be an integer")
    if not (isinstance(rec.view_count, (int, float)) and rec.view_count > 0):
        raise DatasetError(f"line {lineno}: view_count must be positive")
    return rec


def load_dataset(path) -> MarketDataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError("line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line 1: malformed header: {exc.msg}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetError(f"line 1: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"line 1: unsupported format version {header.get('version')!r} (expected {FORMAT_VERSION})")
    try:
        config = GeneratorConfig.from_dict(header["config"])
        encoder = FeatureEncoder.from_dict(header["encoder"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"line 1: bad header: {exc}") from exc
    records, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: malformed record: {exc.msg}") from exc
        try:
            rec = _record_from(obj, lineno)
        except TypeError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
        if rec.id in seen:
            raise DatasetError(f"line {lineno}: duplicate series id {rec.id}")
        seen.add(rec.id)
        for name in CATEGORICAL_FIELDS:
            card = encoder.cardinalities[name]
            if not 0 <= getattr(rec, name) < card:
                raise DatasetError(f"line {lineno}: {name} outside the vocabulary [0, {card})")
        records.append(rec)
    return MarketDataset(records, encoder, config)
