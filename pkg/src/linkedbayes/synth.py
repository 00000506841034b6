"""Synthetic multimodal worlds with teaching utterances and full ground truth.

Each record is one object episode: an integrated category ``z`` picks an
object category and a motion category, the object category generates
visual/audio/haptic histograms, the motion category a motion histogram, and
the utterance starts with a noun from the object category's lexicon followed
by shared function words. The observed utterance is the clean phoneme string
passed through the noisy channel.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .channel import ChannelParams, PhonemeAlphabet, corrupt
from .metrics import cuts_from_words

OBJECT_MODALITIES = ("visual", "audio", "haptic")
MOTION_MODALITIES = ("motion",)
MODALITIES = OBJECT_MODALITIES + MOTION_MODALITIES
HEADER = "# linkedbayes dataset v1"
DEFAULT_PHONEMES = "aiueokstnm"


class InconsistentMotionMap(ValueError):
    pass


class SchemaError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def default_motion_map(K_obj: int, K_mot: int) -> dict[int, list[int]]:
    """Each object category allows two motions; categories k and k + K/2 share them."""
    return {k: sorted({k % K_mot, (k + K_mot // 2) % K_mot}) for k in range(K_obj)}


@dataclass
class WorldSpec:
    K_int: int = 10
    K_obj: int = 10
    K_mot: int = 10
    motion_map: dict | None = None
    dims: dict = field(default_factory=lambda: {"visual": 50, "audio": 50, "haptic": 15, "motion": 70})
    tokens: dict = field(default_factory=lambda: {"visual": 50, "audio": 50, "haptic": 50, "motion": 50})
    dirichlet_sharpness: float = 0.01
    # object categories 2i and 2i+1 share this fraction of their object-modality distributions
    object_confusion: float = 0.0
    # fraction of a uniform distribution mixed into every object-modality row (sensor noise)
    object_noise: float = 0.0
    # fraction of records with failed object sensing: each object modality keeps only
    # ``dropout_tokens`` tokens
    object_dropout: float = 0.0
    dropout_tokens: int = 0
    alphabet: str = DEFAULT_PHONEMES
    nouns_per_category: int = 1
    noun_length: tuple = (3, 5)
    function_words: int = 3
    function_length: tuple = (2, 3)
    words_per_utterance: tuple = (3, 6)
    channel: dict = field(default_factory=lambda: {"p_sub": 0.0, "p_del": 0.0, "p_ins": 0.0})

    def __post_init__(self):
        if self.motion_map is None:
            self.motion_map = default_motion_map(self.K_obj, self.K_mot)
        self.motion_map = {int(k): [int(v) for v in vs] for k, vs in self.motion_map.items()}
        self.noun_length = tuple(self.noun_length)
        self.function_length = tuple(self.function_length)
        self.words_per_utterance = tuple(self.words_per_utterance)
        for name in ("K_int", "K_obj", "K_mot"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        for m in MODALITIES:
            if self.dims.get(m, 0) < 1 or self.tokens.get(m, -1) < 0:
                raise ValueError(f"modality {m!r} needs a dimension >= 1 and a token count >= 0")
            K = self.K_mot if m in MOTION_MODALITIES else self.K_obj
            if self.dims[m] < K:
                raise ValueError(f"modality {m!r} has {self.dims[m]} dims, fewer than its {K} categories")
        if not 0.0 <= self.object_confusion <= 0.5:
            raise ValueError("object_confusion must lie in [0, 0.5]")
        if not 0.0 <= self.object_dropout <= 1.0:
            raise ValueError("object_dropout must lie in [0, 1]")
        if not 0.0 <= self.object_noise <= 1.0:
            raise ValueError("object_noise must lie in [0, 1]")
        if self.dirichlet_sharpness <= 0:
            raise ValueError("dirichlet_sharpness must be > 0")
        lo, hi = self.words_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError("words_per_utterance must be 1 <= min <= max")
        if hi > 1 and self.function_words < 1:
            raise ValueError("multi-word utterances need at least one function word")
        PhonemeAlphabet(tuple(self.alphabet))

    @property
    def channel_params(self) -> ChannelParams:
        return ChannelParams(**self.channel)

    @property
    def phonemes(self) -> PhonemeAlphabet:
        return PhonemeAlphabet(tuple(self.alphabet))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["motion_map"] = {str(k): v for k, v in self.motion_map.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WorldSpec:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown world spec keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class World:
    spec: WorldSpec
    phi: dict            # modality -> (K_obj or K_mot, V) emission table
    p_obj: np.ndarray    # (K_int, K_obj)
    p_mot: np.ndarray    # (K_int, K_mot)
    nouns: list          # per object category
    function_words: list


def _random_words(rng, alphabet: str, n: int, length: tuple, taken: set) -> list[str]:
    out = []
    for _ in range(n):
        for _ in range(10_000):
            k = int(rng.integers(length[0], length[1] + 1))
            w = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=k))
            if w not in taken:
                break
        else:
            raise ValueError("could not draw enough distinct words; enlarge the alphabet or word length")
        taken.add(w)
        out.append(w)
    return out


def generate_world(spec: WorldSpec, rng) -> World:
    rng = np.random.default_rng(rng)
    for k in range(spec.K_obj):
        allowed = spec.motion_map.get(k, [])
        if not allowed or any(not 0 <= m < spec.K_mot for m in allowed):
            raise InconsistentMotionMap(f"object category {k} has allowed motions {allowed}")
    phi = {}
    for m in MODALITIES:
        K = spec.K_mot if m in MOTION_MODALITIES else spec.K_obj
        tab = rng.dirichlet(np.full(spec.dims[m], spec.dirichlet_sharpness), size=K)
        if m in OBJECT_MODALITIES and spec.object_confusion > 0:
            partner = np.arange(K) ^ 1
            partner[partner >= K] = np.arange(K)[partner >= K]
            tab = (1 - spec.object_confusion) * tab + spec.object_confusion * tab[partner]
        if m in OBJECT_MODALITIES and spec.object_noise > 0:
            tab = (1 - spec.object_noise) * tab + spec.object_noise / tab.shape[1]
        phi[m] = tab / tab.sum(axis=1, keepdims=True)
    p_obj = np.zeros((spec.K_int, spec.K_obj))
    p_obj[np.arange(spec.K_int), np.arange(spec.K_int) % spec.K_obj] = 1.0
    p_mot = np.zeros((spec.K_int, spec.K_mot))
    for z in range(spec.K_int):
        allowed = spec.motion_map[z % spec.K_obj]
        p_mot[z, allowed] = 1.0 / len(allowed)
    taken: set = set()
    nouns = [_random_words(rng, spec.alphabet, spec.nouns_per_category, spec.noun_length, taken)
             for _ in range(spec.K_obj)]
    function_words = _random_words(rng, spec.alphabet, spec.function_words, spec.function_length, taken)
    return World(spec, phi, p_obj, p_mot, nouns, function_words)


@dataclass
class DatasetRecord:
    id: int
    z: int
    z_obj: int
    z_mot: int
    counts: dict
    clean: str
    observed: str
    cuts: list

    def words(self) -> list[str]:
        bounds = [0] + list(self.cuts) + [len(self.clean)]
        return [self.clean[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    def count_matrix(self, modality) -> np.ndarray:
        return np.asarray(self.counts[modality], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"id": self.id, "z": self.z, "z_obj": self.z_obj, "z_mot": self.z_mot,
                "counts": {m: [int(v) for v in c] for m, c in self.counts.items()},
                "clean": self.clean, "observed": self.observed, "cuts": [int(c) for c in self.cuts]}


def generate_dataset(world: World, J: int, rng) -> list[DatasetRecord]:
    """``J`` records per integrated category, category-major order.

    Record ``i`` draws from its own stream ``SeedSequence([seed, i])`` so any
    record can be regenerated alone.
    """
    spec = world.spec
    seed = int(np.random.default_rng(rng).integers(2**63))
    alphabet = spec.phonemes
    params = spec.channel_params
    records = []
    for i in range(spec.K_int * J):
        r = np.random.default_rng(np.random.SeedSequence([seed, i]))
        z = i // J
        z_obj = int(r.choice(spec.K_obj, p=world.p_obj[z]))
        z_mot = int(r.choice(spec.K_mot, p=world.p_mot[z]))
        dropped = r.random() < spec.object_dropout
        counts = {}
        for m in MODALITIES:
            if m in MOTION_MODALITIES:
                counts[m] = r.multinomial(spec.tokens[m], world.phi[m][z_mot]).tolist()
            else:
                n = min(spec.dropout_tokens, spec.tokens[m]) if dropped else spec.tokens[m]
                counts[m] = r.multinomial(n, world.phi[m][z_obj]).tolist()
        lo, hi = spec.words_per_utterance
        n = int(r.integers(lo, hi + 1))
        words = [world.nouns[z_obj][int(r.integers(len(world.nouns[z_obj])))]]
        words += [world.function_words[int(j)] for j in r.integers(0, max(len(world.function_words), 1), size=n - 1)]
        clean = "".join(words)
        observed = corrupt(clean, params, alphabet, r)
        records.append(DatasetRecord(i, z, z_obj, z_mot, counts, clean, observed, cuts_from_words(words)))
    return records


_FIELDS = {"id": int, "z": int, "z_obj": int, "z_mot": int, "counts": dict,
           "clean": str, "observed": str, "cuts": list}


def _parse(line: str, lineno: int) -> DatasetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object", lineno)
    for key, typ in _FIELDS.items():
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", lineno)
        if not isinstance(obj[key], typ) or (typ is int and isinstance(obj[key], bool)):
            raise SchemaError(f"field {key!r} should be {typ.__name__}", lineno)
    for m, c in obj["counts"].items():
        if not isinstance(c, list) or not all(isinstance(v, int) and v >= 0 for v in c):
            raise SchemaError(f"counts[{m!r}] must be a list of non-negative integers", lineno)
    if not all(isinstance(c, int) and 0 < c < len(obj["clean"]) for c in obj["cuts"]):
        raise SchemaError("cuts must be interior positions of the clean string", lineno)
    return DatasetRecord(**{k: obj[k] for k in _FIELDS})


def write_dataset(records: Iterable[DatasetRecord], path) -> None:
    with open(path, "w") as f:
        f.write(HEADER + "\n")
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip() or line.startswith("#"):
                continue
            records.append(_parse(line, lineno))
    return records


def count_matrix(records, modality) -> np.ndarray:
    return np.array([r.counts[modality] for r in records], dtype=np.int64)


def load_spec(path) -> WorldSpec:
    d = json.loads(Path(path).read_text())
    return WorldSpec.from_dict(d.get("world", d))
