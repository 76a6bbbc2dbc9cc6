"""MNIST Counting Dialog world: images of 16 digits, count questions, noisy answerer.

Each image holds 16 digits; each digit has a color, a background color, a
number and a stroke style. Questions ask how many of the 16 digits carry a
given property value, so answers are counts ``0..16``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .core import Question

N_DIGITS = 16
N_ANSWERS = N_DIGITS + 1


@dataclass(frozen=True)
class PropertySchema:
    properties: tuple  # ((name, (value, ...)), ...)

    def __post_init__(self):
        props = tuple((str(n), tuple(str(v) for v in vals)) for n, vals in self.properties)
        names = [n for n, _ in props]
        if len(set(names)) != len(names):
            raise ValueError("property names must be unique")
        for name, vals in props:
            if len(vals) < 1 or len(set(vals)) != len(vals):
                raise ValueError(f"values of property {name!r} must be unique and non-empty")
        object.__setattr__(self, "properties", props)

    @property
    def names(self):
        return tuple(n for n, _ in self.properties)

    @property
    def cardinalities(self):
        return tuple(len(v) for _, v in self.properties)

    def values(self, prop: str) -> tuple:
        return self.properties[self.property_index(prop)][1]

    def property_index(self, prop: str) -> int:
        try:
            return self.names.index(prop)
        except ValueError:
            raise KeyError(f"unknown property {prop!r}") from None

    def value_index(self, prop: str, value: str) -> int:
        try:
            return self.values(prop).index(str(value))
        except ValueError:
            raise KeyError(f"{value!r} is not a value of {prop!r}") from None

    @cached_property
    def questions(self) -> tuple:
        """All count questions, property-major in schema order."""
        return tuple(CountQuestion(n, v) for n, vals in self.properties for v in vals)

    @property
    def n_questions(self) -> int:
        return sum(self.cardinalities)

    def column(self, q: "CountQuestion") -> int:
        """Position of ``q`` in :attr:`questions`."""
        pi = self.property_index(q.property)
        return sum(self.cardinalities[:pi]) + self.value_index(q.property, q.value)

    def validate(self, q: "CountQuestion") -> None:
        self.value_index(q.property, q.value)


MNIST_SCHEMA = PropertySchema((
    ("color", ("red", "blue", "green", "purple", "brown")),
    ("bgcolor", ("cyan", "yellow", "white", "silver", "salmon")),
    ("number", tuple(str(d) for d in range(10))),
    ("style", ("flat", "stroke")),
))


@dataclass(frozen=True)
class CountQuestion:
    property: str
    value: str

    def __str__(self):
        return f"how many digits have {self.property} = {self.value}?"


def pool_questions(schema: PropertySchema = MNIST_SCHEMA) -> list:
    """The schema's count questions wrapped as core questions, id = column."""
    return [Question(i, q) for i, q in enumerate(schema.questions)]


@dataclass(frozen=True, eq=False)
class DigitImage:
    """One candidate: ``digits[d, p]`` is the value index of property ``p`` of digit ``d``."""

    digits: np.ndarray
    image_id: int = 0
    schema: PropertySchema = MNIST_SCHEMA

    def __post_init__(self):
        d = np.asarray(self.digits, dtype=np.int64)
        if d.shape != (N_DIGITS, len(self.schema.properties)):
            raise ValueError(f"an image needs {N_DIGITS} digits x {len(self.schema.properties)} properties")
        if (d < 0).any() or (d >= np.array(self.schema.cardinalities)).any():
            raise ValueError("digit property value outside the schema")
        object.__setattr__(self, "digits", d)

    @classmethod
    def from_names(cls, rows, image_id: int = 0, schema: PropertySchema = MNIST_SCHEMA):
        digits = [[schema.value_index(p, v) for p, v in zip(schema.names, row)] for row in rows]
        return cls(np.array(digits), image_id, schema)

    def names(self) -> list:
        return [[self.schema.properties[p][1][v] for p, v in enumerate(row)] for row in self.digits]


class World:
    """A set of images stored as one ``(n, 16, n_properties)`` array."""

    def __init__(self, digits, image_ids=None, schema: PropertySchema = MNIST_SCHEMA):
        self.digits = np.asarray(digits, dtype=np.int8)
        self.schema = schema
        if self.digits.ndim != 3 or self.digits.shape[1:] != (N_DIGITS, len(schema.properties)):
            raise ValueError("world array must be (n, 16, n_properties)")
        if (self.digits < 0).any() or (self.digits >= np.array(schema.cardinalities)).any():
            raise ValueError("digit property value outside the schema")
        n = self.digits.shape[0]
        self.image_ids = np.arange(n) if image_ids is None else np.asarray(image_ids, dtype=np.int64)
        if self.image_ids.shape != (n,) or len(np.unique(self.image_ids)) != n:
            raise ValueError("image ids must be unique, one per image")

    def __len__(self):
        return self.digits.shape[0]

    def __getitem__(self, i) -> DigitImage:
        return DigitImage(self.digits[i], int(self.image_ids[i]), self.schema)

    def subset(self, n: int) -> "World":
        return World(self.digits[:n], self.image_ids[:n], self.schema)

    @cached_property
    def true_counts(self) -> np.ndarray:
        """``(n_images, n_questions)`` matrix of true answers, columns in schema order."""
        out = np.empty((len(self), self.schema.n_questions), dtype=np.int64)
        col = 0
        for p, k in enumerate(self.schema.cardinalities):
            vals = self.digits[:, :, p]
            for v in range(k):
                out[:, col] = (vals == v).sum(axis=1)
                col += 1
        return out

    @cached_property
    def question_keys(self) -> np.ndarray:
        """Contiguous ``(n_questions, n_images)`` transpose of :attr:`true_counts`."""
        return np.ascontiguousarray(self.true_counts.T)


def generate_world(n_images: int, schema: PropertySchema = MNIST_SCHEMA, seed=0) -> World:
    """Draw every property of every digit independently and uniformly."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    rng = np.random.default_rng(seed)
    cols = [rng.integers(0, k, size=(n_images, N_DIGITS)) for k in schema.cardinalities]
    return World(np.stack(cols, axis=2), schema=schema)


def true_count(img: DigitImage, q: CountQuestion) -> int:
    p = img.schema.property_index(q.property)
    v = img.schema.value_index(q.property, q.value)
    return int((img.digits[:, p] == v).sum())


# ---------------------------------------------------------------------------
# noisy answerer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisyAnswerer:
    """Answers count questions after recognizing each digit's property noisily.

    A digit's property is read correctly with probability ``accuracy[prop]``
    and otherwise as one of the other values chosen uniformly. With
    ``fixed_recognition`` the misreadings of an image are a deterministic
    function of (seed, image id, property) instead of being redrawn per query.
    """

    lambda_nominal: float
    accuracy: dict
    seed: int = 0
    schema: PropertySchema = field(default=MNIST_SCHEMA, repr=False)
    fixed_recognition: bool = False

    def __post_init__(self):
        lam = self.lambda_nominal
        if not 0.5 < lam <= 1.0:
            raise ValueError(f"lambda must lie in (0.5, 1], got {lam}")
        lo = 2.0 * lam - 1.0
        for name in self.schema.names:
            acc = self.accuracy[name]
            if not lo - 1e-12 <= acc <= 1.0:
                raise ValueError(f"accuracy of {name} = {acc} outside [{lo}, 1]")

    def match_probability(self, prop: str, matches: bool) -> float:
        """Chance a digit is reported as the asked value, given whether it truly is."""
        acc = self.accuracy[prop]
        if matches:
            return acc
        k = len(self.schema.values(prop))
        return (1.0 - acc) / (k - 1) if k > 1 else 0.0

    def count_table(self, q: CountQuestion) -> np.ndarray:
        """``(17, 17)`` table: row = true count, column = reported count distribution."""
        hit = self.match_probability(q.property, True)
        miss = self.match_probability(q.property, False)
        table = np.empty((N_ANSWERS, N_ANSWERS))
        for k in range(N_ANSWERS):
            ps = np.array([hit] * k + [miss] * (N_DIGITS - k))
            table[k] = _kernels.poisson_binomial(ps)
        return table

    def recognize(self, digits: np.ndarray, prop_index: int, rng) -> np.ndarray:
        """Recognized value indices for property ``prop_index`` of ``digits[..., 16, P]``."""
        true = digits[..., prop_index].astype(np.int64)
        k = self.schema.cardinalities[prop_index]
        acc = self.accuracy[self.schema.names[prop_index]]
        if acc >= 1.0 or k == 1:
            return true
        correct = rng.random(true.shape) < acc
        shifted = (true + rng.integers(1, k, size=true.shape)) % k
        return np.where(correct, true, shifted)


def make_answerer(lam: float, seed=0, schema: PropertySchema = MNIST_SCHEMA,
                  fixed_recognition: bool = False) -> NoisyAnswerer:
    """Draw each property's accuracy uniformly from ``[2*lam - 1, 1]``."""
    if not 0.5 < lam <= 1.0:
        raise ValueError(f"lambda must lie in (0.5, 1], got {lam}")
    rng = np.random.default_rng(seed)
    lo = 2.0 * lam - 1.0
    acc = {name: float(rng.uniform(lo, 1.0)) if lo < 1.0 else 1.0 for name in schema.names}
    return NoisyAnswerer(float(lam), acc, seed if isinstance(seed, int) else 0, schema, fixed_recognition)


def _recognition_rng(ans: NoisyAnswerer, image_id: int, prop_index: int):
    return np.random.default_rng([ans.seed, int(image_id), prop_index])


def answer(ans: NoisyAnswerer, img: DigitImage, q: CountQuestion, rng) -> int:
    """Sample the answerer's reported count for one question about one image."""
    p = ans.schema.property_index(q.property)
    v = ans.schema.value_index(q.property, q.value)
    if ans.fixed_recognition:
        rng = _recognition_rng(ans, img.image_id, p)
    return int((ans.recognize(img.digits, p, rng) == v).sum())


def answer_world(ans: NoisyAnswerer, world: World, q: CountQuestion, rng) -> np.ndarray:
    """Reported counts for ``q`` on every image of ``world`` (one fresh recognition each)."""
    p = ans.schema.property_index(q.property)
    v = ans.schema.value_index(q.property, q.value)
    if ans.fixed_recognition:
        out = np.empty(len(world), dtype=np.int64)
        for i in range(len(world)):
            r = ans.recognize(world.digits[i], p, _recognition_rng(ans, world.image_ids[i], p))
            out[i] = (r == v).sum()
        return out
    return (ans.recognize(world.digits, p, rng) == v).sum(axis=-1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CountDistribution:
    probs: np.ndarray

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)


def match_probabilities(ans: NoisyAnswerer, img: DigitImage, q: CountQuestion) -> np.ndarray:
    p = ans.schema.property_index(q.property)
    v = ans.schema.value_index(q.property, q.value)
    matches = img.digits[:, p] == v
    return np.where(matches, ans.match_probability(q.property, True),
                    ans.match_probability(q.property, False))


def answer_distribution(ans: NoisyAnswerer, img: DigitImage, q: CountQuestion) -> CountDistribution:
    """Exact distribution of :func:`answer` by dynamic programming over the 16 digits."""
    return CountDistribution(_kernels.poisson_binomial(match_probabilities(ans, img, q)))


# ---------------------------------------------------------------------------
# world files: one image per line, "<id>\t<v1,v2,v3,v4>\t..." with 16 digit fields
# ---------------------------------------------------------------------------

def format_world(world: World) -> str:
    names = [vals for _, vals in world.schema.properties]
    lines = []
    for i in range(len(world)):
        fields = [str(int(world.image_ids[i]))]
        for row in world.digits[i]:
            fields.append(",".join(names[p][v] for p, v in enumerate(row)))
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def save_world(world: World, path, force: bool = False) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists (use force to overwrite)")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_world(world))


def load_world(path, schema: PropertySchema = MNIST_SCHEMA) -> World:
    lookup = [{v: i for i, v in enumerate(vals)} for _, vals in schema.properties]
    ids, digits = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != N_DIGITS + 1:
                raise ValueError(f"{path}:{lineno}: expected {N_DIGITS + 1} fields, got {len(fields)}")
            try:
                ids.append(int(fields[0]))
                img = []
                for f in fields[1:]:
                    vals = f.split(",")
                    if len(vals) != len(lookup):
                        raise KeyError(f)
                    img.append([lookup[p][v] for p, v in enumerate(vals)])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid record ({exc})") from None
            digits.append(img)
    if not digits:
        raise ValueError(f"{path}: no images")
    return World(np.array(digits), np.array(ids), schema)
