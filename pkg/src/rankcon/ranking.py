"""User-defined class-similarity rankings and temperature schedules.

Ranking file grammar (UTF-8, one anchor class per line)::

    # comment lines and blank lines are ignored
    airplane: [bird, ship]
    cat: [dog, {deer, horse}]
    frog: []

The key is an anchor class name.  The value is an ordered list, most similar
first; each entry is a class name or a braced set of names sharing one rank
(this is how a clustering such as ``{airplane, ship, truck}`` is written).
Rank 1 is always the anchor's own class and is never written.  Classes that
are not listed, or have an empty list, only rank themselves.  Unknown keys and
unknown names are rejected.

Rankings are directional: ``airplane: [bird]`` says nothing about how ``bird``
ranks ``airplane``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ResolutionError, ValidationError

NEGATIVE = 0
"""Returned by :func:`rank_of` for classes outside the anchor's ranking."""

_NAME = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\- ]*$")


@dataclass(frozen=True)
class RankingTable:
    """Per-class ordered rank sets ``R_2 .. R_r`` (rank 1 is the class itself)."""

    class_names: tuple
    ranks: tuple
    _lookup: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        ranks = tuple(tuple(frozenset(int(c) for c in s) for s in per) for per in self.ranks)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "ranks", ranks)
        n = len(names)
        if n == 0:
            raise ValidationError("ranking needs at least one class")
        if len(set(names)) != n:
            raise ValidationError("duplicate class names in label map")
        if len(ranks) != n:
            raise ValidationError(f"ranking has {len(ranks)} entries for {n} classes")
        lookup = np.full((n, n), NEGATIVE, dtype=np.int64)
        for c, per in enumerate(ranks):
            lookup[c, c] = 1
            seen = {}
            for level, members in enumerate(per, start=2):
                if not members:
                    raise ValidationError(f"{names[c]}: empty rank set at rank {level}")
                for k in sorted(members):
                    if not 0 <= k < n:
                        raise ValidationError(f"{names[c]}: class id {k} out of range")
                    if k == c:
                        raise ValidationError(f"{names[c]}: a class cannot rank itself")
                    if k in seen:
                        raise ValidationError(
                            f"{names[c]}: class {names[k]!r} appears at ranks {seen[k]} and {level}"
                        )
                    seen[k] = level
                    lookup[c, k] = level
        lookup.setflags(write=False)
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def empty(cls, class_names) -> "RankingTable":
        """Table in which every class ranks only itself (r=1)."""
        names = tuple(class_names)
        return cls(names, tuple(() for _ in names))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def r(self) -> int:
        """Largest rank count over classes, including the implicit rank 1."""
        return 1 + max((len(p) for p in self.ranks), default=0)

    def rank_count(self, c: int) -> int:
        return 1 + len(self.ranks[c])

    def lookup(self) -> np.ndarray:
        """``C x C`` read-only matrix of ``rank_of`` values."""
        return self._lookup

    def rank_matrix(self, labels) -> np.ndarray:
        """Rank of sample ``j``'s class from the viewpoint of sample ``i``'s class."""
        labels = np.asarray(labels, dtype=np.intp)
        return self._lookup[labels[:, None], labels[None, :]]

    def negatives(self, c: int) -> frozenset:
        ranked = {c}.union(*self.ranks[c]) if self.ranks[c] else {c}
        return frozenset(range(self.num_classes)) - ranked

    def index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ResolutionError(f"unknown class name {name!r}") from None

    def truncate(self, r: int) -> "RankingTable":
        """Keep at most ``r`` ranks per class; dropped classes become negatives."""
        if r < 1:
            raise ValidationError("r must be >= 1")
        return RankingTable(self.class_names, tuple(per[: r - 1] for per in self.ranks))

    def without(self, removed) -> tuple["RankingTable", dict]:
        """Remove classes entirely and compact what remains.

        References to removed classes are deleted from every rank set, rank
        sets left empty disappear, and the surviving ranks keep their
        relative order.  Returns the new table and the ``old id -> new id``
        map for the surviving classes.
        """
        removed = {int(c) for c in removed}
        for c in removed:
            if not 0 <= c < self.num_classes:
                raise ContractError(f"class id {c} out of range")
        keep = [c for c in range(self.num_classes) if c not in removed]
        if not keep:
            raise ContractError("cannot remove every class")
        remap = {old: new for new, old in enumerate(keep)}
        ranks = []
        for old in keep:
            per = []
            for members in self.ranks[old]:
                survivors = frozenset(remap[k] for k in members if k in remap)
                if survivors:
                    per.append(survivors)
            ranks.append(tuple(per))
        return RankingTable(tuple(self.class_names[c] for c in keep), tuple(ranks)), remap

    def with_class(self, name: str) -> "RankingTable":
        """Append an extra class that ranks nothing and is ranked by nobody."""
        return RankingTable(self.class_names + (name,), self.ranks + ((),))

    def serialize(self) -> str:
        return serialize_ranking(self)


def rank_of(table: RankingTable, anchor_class: int, other_class: int) -> int:
    """1 for the same class, ``i`` if ``other_class`` is in ``R_i``, else :data:`NEGATIVE`."""
    n = table.num_classes
    for c in (anchor_class, other_class):
        if not isinstance(c, (int, np.integer)) or not 0 <= c < n:
            raise ContractError(f"invalid class id {c!r} for a table of {n} classes")
    return int(table.lookup()[anchor_class, other_class])


# -- file format ------------------------------------------------------------

def _split_entries(body: str, lineno: int) -> list:
    entries, depth, cur = [], 0, []
    for ch in body:
        if ch == "{":
            if depth:
                raise ValidationError(f"line {lineno}: nested braces")
            depth = 1
        elif ch == "}":
            if not depth:
                raise ValidationError(f"line {lineno}: unbalanced '}}'")
            depth = 0
        if ch == "," and not depth:
            entries.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ValidationError(f"line {lineno}: unbalanced '{{'")
    tail = "".join(cur).strip()
    if tail or entries:
        entries.append(tail)
    return entries


def parse_ranking(text: str, class_names) -> RankingTable:
    """Parse a ranking document against the dataset's ordered class names."""
    names = tuple(class_names)
    ids = {n: i for i, n in enumerate(names)}

    def resolve(name, lineno):
        if name not in ids:
            raise ResolutionError(f"line {lineno}: unknown class name {name!r}")
        return ids[name]

    ranks: list = [() for _ in names]
    seen_keys = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValidationError(f"line {lineno}: expected 'class: [ranks]'")
        anchor = resolve(key, lineno)
        if key in seen_keys:
            raise ValidationError(f"line {lineno}: class {key!r} listed twice")
        seen_keys.add(key)
        if not (value.startswith("[") and value.endswith("]")):
            raise ValidationError(f"line {lineno}: ranks must be a bracketed list")
        per = []
        for entry in _split_entries(value[1:-1], lineno):
            if entry.startswith("{"):
                if not entry.endswith("}"):
                    raise ValidationError(f"line {lineno}: malformed set {entry!r}")
                members = [m.strip() for m in entry[1:-1].split(",") if m.strip()]
                if not members:
                    raise ValidationError(f"line {lineno}: empty rank set for {key!r}")
            else:
                if not entry:
                    raise ValidationError(f"line {lineno}: empty rank entry for {key!r}")
                members = [entry]
            per.append(frozenset(resolve(m, lineno) for m in members))
        ranks[anchor] = tuple(per)
    return RankingTable(names, tuple(ranks))


def serialize_ranking(table: RankingTable) -> str:
    lines = []
    for c, per in enumerate(table.ranks):
        if not per:
            continue
        items = []
        for members in per:
            ordered = sorted(members)
            if len(ordered) == 1:
                items.append(table.class_names[ordered[0]])
            else:
                items.append("{" + ", ".join(table.class_names[k] for k in ordered) + "}")
        lines.append(f"{table.class_names[c]}: [{', '.join(items)}]")
    return "\n".join(lines) + ("\n" if lines else "")


def load_ranking(path, class_names) -> RankingTable:
    with open(path, encoding="utf-8") as fh:
        return parse_ranking(fh.read(), class_names)


def check_class_name(name: str) -> str:
    if not _NAME.match(name) or name != name.strip():
        raise ValidationError(f"class name {name!r} is not usable in ranking files")
    return name


# -- temperatures -----------------------------------------------------------

@dataclass(frozen=True)
class TemperatureSchedule:
    """Per-level temperatures; strictly increasing so deeper ranks are pulled more softly."""

    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ValidationError("temperature schedule is empty")
        if any(not np.isfinite(t) or t <= 0 for t in taus):
            raise ValidationError(f"temperatures must be positive, got {taus}")
        for i in range(len(taus) - 1):
            if not taus[i + 1] > taus[i]:
                raise ValidationError(
                    f"temperatures must strictly increase: tau_{i + 2}={taus[i + 1]} <= tau_{i + 1}={taus[i]}"
                )
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return len(self.taus)

    def __getitem__(self, level: int) -> float:
        """Temperature for 1-based ``level``."""
        return self.taus[level - 1]


def default_schedule(r: int, tau1: float = 0.1, growth: float = 1.5) -> TemperatureSchedule:
    """Geometric schedule ``tau_i = tau1 * growth**(i-1)``."""
    if r < 1:
        raise ValidationError("r must be >= 1")
    if not growth > 1:
        raise ValidationError(f"growth must exceed 1, got {growth}")
    if not tau1 > 0:
        raise ValidationError(f"tau1 must be positive, got {tau1}")
    return TemperatureSchedule(tuple(tau1 * growth ** i for i in range(r)))
