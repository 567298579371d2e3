"""Core vocabulary: demographic factors, instruments, records and severity bands."""

from __future__ import annotations

import dataclasses
import enum
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


def _norm_token(text: str) -> str:
    return re.sub(r"[\s_\-]+", "", str(text)).lower()


class _Labelled(enum.Enum):
    """Enum whose members carry a display label and accept loose spellings."""

    def __new__(cls, token: str, label: str, *aliases: str):
        obj = object.__new__(cls)
        obj._value_ = token
        obj.label = label
        obj.aliases = aliases
        obj.ordinal = len(cls._member_map_)
        return obj

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        lookup = cls.__dict__.get("_lookup")
        if lookup is None:
            lookup = {_norm_token(n): m for m in cls
                      for n in (m.value, m.label, m.name, *m.aliases)}
            setattr(cls, "_lookup", lookup)
        hit = lookup.get(text) if isinstance(text, str) else None
        if hit is None:
            hit = lookup.get(_norm_token(text))
        if hit is None:
            raise ValidationError(f"unknown {cls.__name__} token {text!r}")
        return hit

    def __lt__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.ordinal < other.ordinal

    def __str__(self) -> str:
        return self.label


class Race(_Labelled):
    WHITE = ("White", "White")
    BLACK = ("Black", "Black", "African American")
    HISPANIC = ("Hispanic", "Hispanic", "Latino", "Latinx")
    ASIAN = ("Asian", "Asian")
    MULTIRACIAL = ("Multiracial", "Multiracial")


class Gender(_Labelled):
    CIS_MAN = ("CisMan", "Cis Man", "Cisgender Man", "Cis M")
    CIS_WOMAN = ("CisWoman", "Cis Woman", "Cisgender Woman", "Cis W")
    TRANS_MAN = ("TransMan", "Trans Man", "Transgender Man", "Trans M")
    TRANS_WOMAN = ("TransWoman", "Trans Woman", "Transgender Woman", "Trans W")

    @property
    def is_woman(self) -> bool:
        return self in (Gender.CIS_WOMAN, Gender.TRANS_WOMAN)


class SES(_Labelled):
    HIGH = ("High", "High")
    MIDDLE = ("Middle", "Middle")
    LOW = ("Low", "Low")


class Relationship(_Labelled):
    PARTNERED = ("Partnered", "Partnered", "Married")
    SINGLE = ("Single", "Single")


class Condition(_Labelled):
    CLINICAL = ("clinical", "Clinical", "run1")
    PERSONAL = ("personal", "Personal", "run2", "narrative")


class Dimension(_Labelled):
    RACE = ("Race", "Race", "race")
    GENDER = ("Gender", "Gender", "gender")
    SES = ("SES", "SES", "ses")
    RELATIONSHIP = ("Relationship", "Relationship", "relationship")
    INTERSECTION = ("Intersection", "Intersection")

    @property
    def factor(self) -> type[_Labelled]:
        return _DIMENSION_FACTORS[self]

    @property
    def attr(self) -> str:
        return self.value.lower()


_DIMENSION_FACTORS = {
    Dimension.RACE: Race,
    Dimension.GENDER: Gender,
    Dimension.SES: SES,
    Dimension.RELATIONSHIP: Relationship,
}
MARGINAL_DIMENSIONS = (Dimension.RACE, Dimension.GENDER, Dimension.SES, Dimension.RELATIONSHIP)


class Severity(enum.IntEnum):
    """PHQ-8 severity bands, ordered from least to most severe."""

    NONE_ = 0
    MILD = 1
    MODERATE = 2
    MOD_SEVERE = 3
    SEVERE = 4


PHQ8_BANDS = ((0, 4), (5, 9), (10, 14), (15, 19), (20, 24))


@dataclass(frozen=True)
class InstrumentSpec:
    id: str
    item_count: int
    item_min: int
    item_max: int
    threshold: int | None
    threshold_women: int | None = None

    @property
    def total_max(self) -> int:
        return self.item_count * self.item_max

    def with_threshold(self, threshold: int) -> "InstrumentSpec":
        return dataclasses.replace(self, threshold=threshold, threshold_women=None)


PCL5_DEFAULT_CUT = 8

INSTRUMENTS: dict[str, InstrumentSpec] = {
    "PHQ8": InstrumentSpec("PHQ8", 8, 0, 3, 10),
    "GAD7": InstrumentSpec("GAD7", 7, 0, 3, 10),
    "AUDITC": InstrumentSpec("AUDITC", 3, 0, 4, 4, threshold_women=3),
    # No published screening cut for the 4-item PCL-5; midpoint of 0..16.
    "PCL5": InstrumentSpec("PCL5", 4, 0, 4, PCL5_DEFAULT_CUT),
}


def get_instrument(name: str | InstrumentSpec) -> InstrumentSpec:
    if isinstance(name, InstrumentSpec):
        return name
    if name in INSTRUMENTS:
        return INSTRUMENTS[name]
    key = _norm_token(name).upper()
    try:
        return INSTRUMENTS[key]
    except KeyError:
        raise ValidationError(f"unknown instrument {name!r}") from None


@dataclass(frozen=True, order=False)
class DemographicProfile:
    race: Race
    gender: Gender
    ses: SES
    relationship: Relationship

    def __post_init__(self):
        for f, kind in (("race", Race), ("gender", Gender), ("ses", SES), ("relationship", Relationship)):
            object.__setattr__(self, f, kind.parse(getattr(self, f)))

    @property
    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.race.ordinal, self.gender.ordinal, self.ses.ordinal, self.relationship.ordinal)

    def level(self, dimension: Dimension) -> _Labelled:
        return getattr(self, dimension.attr)

    def __lt__(self, other: "DemographicProfile") -> bool:
        return self.sort_key < other.sort_key


def all_profiles() -> list[DemographicProfile]:
    """The full 5 x 4 x 3 x 2 factorial, in canonical order."""
    return [DemographicProfile(*combo) for combo in itertools.product(Race, Gender, SES, Relationship)]


def score_instrument(items: Sequence[int], spec: InstrumentSpec | str) -> int:
    spec = get_instrument(spec)
    if len(items) != spec.item_count:
        raise ValidationError(f"item count {len(items)} ≠ {spec.item_count}")
    for i, v in enumerate(items):
        if isinstance(v, bool) or not isinstance(v, (int,)) and not float(v).is_integer():
            raise ValidationError(f"item {i} is not an integer: {v!r}")
        if not spec.item_min <= v <= spec.item_max:
            raise ValidationError(f"item {i} value {v} outside {spec.item_min}..{spec.item_max}")
    return int(sum(int(v) for v in items))


def classify_phq8(total: int) -> Severity:
    if not 0 <= total <= 24:
        raise ValidationError(f"PHQ-8 total {total} outside 0..24")
    for sev, (lo, hi) in zip(Severity, PHQ8_BANDS):
        if lo <= total <= hi:
            return sev
    raise AssertionError("unreachable")


def is_positive(total: int, spec: InstrumentSpec | str, gender: Gender | str | None = None) -> bool:
    """Screening decision for one total score.

    AUDIT-C uses the women's cut for cis and trans women and the men's cut
    otherwise; the gender argument is ignored for the other instruments.
    """
    spec = get_instrument(spec)
    if not 0 <= total <= spec.total_max:
        raise ValidationError(f"{spec.id} total {total} outside 0..{spec.total_max}")
    cut = spec.threshold
    if spec.threshold_women is not None:
        if gender is None:
            raise ValidationError(f"{spec.id} threshold depends on gender")
        if Gender.parse(gender).is_woman:
            cut = spec.threshold_women
    if cut is None:
        raise ValidationError(f"{spec.id} has no screening threshold")
    return total >= cut


@dataclass(frozen=True)
class PatientRecord:
    record_id: str
    model: str
    condition: Condition
    iteration: int
    profile: DemographicProfile
    instrument: str
    items: tuple[int, ...]
    total: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        spec = get_instrument(self.instrument)
        object.__setattr__(self, "instrument", spec.id)
        object.__setattr__(self, "items", tuple(int(v) for v in self.items))
        if not isinstance(self.iteration, int) or isinstance(self.iteration, bool) or self.iteration < 1:
            raise ValidationError(f"iteration must be a positive integer, got {self.iteration!r}")
        if not self.record_id:
            raise ValidationError("record_id must be non-empty")
        total = score_instrument(self.items, spec)
        if self.total != -1 and self.total != total:
            raise ValidationError(f"supplied total {self.total} ≠ item sum {total}")
        object.__setattr__(self, "total", total)

    @property
    def spec(self) -> InstrumentSpec:
        return INSTRUMENTS[self.instrument]


class CohortKey(NamedTuple):
    profile: DemographicProfile
    model: str
    condition: Condition

    @property
    def sort_key(self):
        return (*self.profile.sort_key, self.model, self.condition.ordinal)


def cohort_key(record: PatientRecord) -> CohortKey:
    return CohortKey(record.profile, record.model, record.condition)


@dataclass(frozen=True)
class GroupSelector:
    """Conjunction of allowed levels per field; an absent field matches anything.

    Text form: ``"race=Black;gender=Cis Man,Trans Man;model=m1;condition=clinical"``.
    """

    race: frozenset = frozenset()
    gender: frozenset = frozenset()
    ses: frozenset = frozenset()
    relationship: frozenset = frozenset()
    model: frozenset = frozenset()
    condition: frozenset = frozenset()

    _FACTORS = {"race": Race, "gender": Gender, "ses": SES, "relationship": Relationship, "condition": Condition}

    @classmethod
    def of(cls, **fields: Iterable | str) -> "GroupSelector":
        kwargs = {}
        for name, values in fields.items():
            if name not in cls.__dataclass_fields__:
                raise ValidationError(f"unknown selector field {name!r}")
            if isinstance(values, (str, enum.Enum)):
                values = [values]
            kind = cls._FACTORS.get(name)
            kwargs[name] = frozenset(kind.parse(v) if kind else str(v) for v in values)
        return cls(**kwargs)

    @classmethod
    def parse(cls, text: str) -> "GroupSelector":
        fields: dict[str, list[str]] = {}
        for part in filter(None, (p.strip() for p in text.split(";"))):
            if "=" not in part:
                raise ValidationError(f"selector clause {part!r} lacks '='")
            key, _, vals = part.partition("=")
            fields[key.strip().lower()] = [v.strip() for v in vals.split(",") if v.strip()]
        return cls.of(**fields)

    @classmethod
    def for_group(cls, dimension: Dimension | str, group: str) -> "GroupSelector":
        """Selector for a baseline-style (dimension, group) pair.

        Intersection groups join marginal levels with ``+``, e.g. ``"Trans Woman + Low"``.
        """
        dimension = Dimension.parse(dimension)
        if dimension is not Dimension.INTERSECTION:
            return cls.of(**{dimension.attr: [group]})
        fields: dict[str, list] = {}
        for part in (p.strip() for p in group.split("+")):
            for dim in MARGINAL_DIMENSIONS:
                try:
                    level = dim.factor.parse(part)
                except ValidationError:
                    continue
                if dim.attr in fields:
                    raise ValidationError(f"intersection {group!r} repeats dimension {dim.label}")
                fields[dim.attr] = [level]
                break
            else:
                raise ValidationError(f"unknown intersection component {part!r}")
        return cls.of(**fields)

    def matches(self, profile: DemographicProfile, model: str | None = None, condition=None) -> bool:
        for name in ("race", "gender", "ses", "relationship"):
            allowed = getattr(self, name)
            if allowed and getattr(profile, name) not in allowed:
                return False
        if self.model and model not in self.model:
            return False
        if self.condition and (condition is None or Condition.parse(condition) not in self.condition):
            return False
        return True

    def describe(self) -> str:
        parts = []
        for name in ("race", "gender", "ses", "relationship", "model", "condition"):
            vals = getattr(self, name)
            if vals:
                labels = sorted(v.label if isinstance(v, enum.Enum) else v for v in vals)
                parts.append(f"{name}={','.join(labels)}")
        return ";".join(parts) or "all"


def iter_levels(dimension: Dimension) -> Iterator[_Labelled]:
    return iter(dimension.factor)


def profile_from_mapping(obj: Mapping) -> DemographicProfile:
    return DemographicProfile(obj["race"], obj["gender"], obj["ses"], obj["relationship"])


def selector_for_label(text: str) -> GroupSelector:
    """Selector from a bare level (``"White"``), ``"Dimension: group"`` or selector syntax."""
    if "=" in text:
        return GroupSelector.parse(text)
    if ":" in text:
        dim, _, group = text.partition(":")
        return GroupSelector.for_group(dim.strip(), group.strip())
    if "+" in text:
        return GroupSelector.for_group(Dimension.INTERSECTION, text)
    for dim in MARGINAL_DIMENSIONS:
        try:
            return GroupSelector.for_group(dim, text)
        except ValidationError:
            continue
    raise ValidationError(f"unknown group {text!r}")
