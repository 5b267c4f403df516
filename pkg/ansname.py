#!/usr/bin/env python3
"""
Filename: ansname.py
Description: ANSName parsing/formatting and semantic-version negotiation

An ANSName looks like::

    protocol://agentID.capability.provider.vMAJOR[.MINOR[.PATCH]][-pre][+build][.extension]

The version starts at the fourth label (``v`` + digits). Up to two purely
numeric labels after it fold into the version; a ``-prerelease`` or
``+build`` suffix on the last version label ends it. Every remaining label
belongs to the extension. Missing minor/patch normalize to 0.

Version ranges follow npm conventions: ``*``, exact versions, ``^`` caret,
``~`` tilde, x-ranges (``1.2``, ``1.x``), hyphen ranges (``1.0.0 - 2.0.0``),
comparator sets (``>=1.0.0 <2.0.0``) and ``||`` unions. A prerelease version
only satisfies a range when one comparator of the matching set names the
same MAJOR.MINOR.PATCH with a prerelease tag.
"""

import functools
import re
from dataclasses import dataclass
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, Union

import semver

from ans_errors import IncompatibleVersion, MalformedName, MalformedRange

KNOWN_PROTOCOLS = ("a2a", "mcp", "acp")
EXTENSIBLE = "extensible"

_LABEL_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_PROTOCOL_RE = re.compile(r"^[a-z][a-z0-9_-]*$")
_SUFFIX = r"((?:-[0-9A-Za-z-]+)?(?:\+[0-9A-Za-z-]+)?)"
_VERSION_HEAD_RE = re.compile(r"^v(\d+)" + _SUFFIX + r"$")
_VERSION_TAIL_RE = re.compile(r"^(\d+)" + _SUFFIX + r"$")

VersionLike = Union[semver.Version, str]


def parse_semver(text: str) -> semver.Version:
    """
    Parse a strict SemVer 2.0.0 string (a leading ``v`` is tolerated).

    Raises:
        MalformedRange: when the text is not a full MAJOR.MINOR.PATCH version
    """
    raw = str(text).strip()
    if raw[:1] in ("v", "V"):
        raw = raw[1:]
    try:
        return semver.Version.parse(raw)
    except (ValueError, TypeError):
        raise MalformedRange(f"not a semantic version: {text!r}")


def _as_version(v: VersionLike) -> semver.Version:
    return v if isinstance(v, semver.Version) else parse_semver(v)


def version_string(v: semver.Version) -> str:
    """Full MAJOR.MINOR.PATCH[-pre][+build] rendering."""
    return str(v)


# ================================ ANSName ================================== #
@dataclass(frozen=True)
class ANSName:
    """Parsed, validated agent name."""

    protocol: str
    agent_id: str
    capability: str
    provider: str
    version: semver.Version
    extension: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.protocol, str) or not _PROTOCOL_RE.match(self.protocol):
            raise MalformedName(f"invalid protocol {self.protocol!r}")
        for field_name in ("agent_id", "capability", "provider"):
            value = getattr(self, field_name)
            if not isinstance(value, str) or not _LABEL_RE.match(value):
                raise MalformedName(f"invalid {field_name} label {value!r}")
            # would be read back as the version label
            if _VERSION_HEAD_RE.match(value):
                raise MalformedName(f"{field_name} label {value!r} looks like a version")
        if not isinstance(self.version, semver.Version):
            object.__setattr__(self, "version", _name_version(self.version))
        for part in (self.version.prerelease, self.version.build):
            if part is not None and "." in part:
                raise MalformedName(
                    f"prerelease/build in a name cannot contain '.': {part!r}"
                )
        if self.extension is not None:
            if self.extension == "":
                object.__setattr__(self, "extension", None)
            elif not all(_LABEL_RE.match(lbl) for lbl in self.extension.split(".")):
                raise MalformedName(f"invalid extension {self.extension!r}")

    @property
    def is_extensible(self) -> bool:
        """True when the protocol is not one of the built-in schemes."""
        return self.protocol not in KNOWN_PROTOCOLS

    @property
    def protocol_kind(self) -> str:
        return EXTENSIBLE if self.is_extensible else self.protocol

    @property
    def lookup_key(self) -> Tuple[str, str, str, str]:
        """The (protocol, agentID, capability, provider) registry index."""
        return (self.protocol, self.agent_id, self.capability, self.provider)

    @property
    def version_text(self) -> str:
        return version_string(self.version)

    def with_version(self, version: VersionLike) -> "ANSName":
        return ANSName(self.protocol, self.agent_id, self.capability,
                       self.provider, _as_version(version), self.extension)

    def __str__(self) -> str:
        return format_ansname(self)


def _name_version(v: Any) -> semver.Version:
    try:
        return _as_version(v)
    except MalformedRange as e:
        raise MalformedName(e.message)


def parse_ansname(s: str) -> ANSName:
    """
    Parse an ANSName string.

    Args:
        s (str): the name, e.g. ``mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0``

    Returns:
        ANSName: fully populated name (unknown protocols flagged via ``is_extensible``)

    Raises:
        MalformedName: missing ``://``, fewer than 4 labels, no version label,
                       empty or invalid label
    """
    if not isinstance(s, str) or "://" not in s:
        raise MalformedName(f"missing '://' in {s!r}")
    protocol, rest = s.split("://", 1)
    if not protocol:
        raise MalformedName(f"empty protocol in {s!r}")
    labels = rest.split(".")
    if len(labels) < 4:
        raise MalformedName(f"expected at least 4 labels in {s!r}")
    if any(lbl == "" for lbl in labels):
        raise MalformedName(f"empty label in {s!r}")

    version_at = next(
        (i for i, lbl in enumerate(labels) if _VERSION_HEAD_RE.match(lbl)), None
    )
    if version_at is None:
        raise MalformedName(f"no version label in {s!r}")
    if version_at != 3:
        raise MalformedName(
            f"version must follow agentID.capability.provider in {s!r}"
        )

    head = _VERSION_HEAD_RE.match(labels[3])
    parts = [head.group(1)]
    suffix = head.group(2)
    i = 4
    while not suffix and len(parts) < 3 and i < len(labels):
        tail = _VERSION_TAIL_RE.match(labels[i])
        if not tail:
            break
        parts.append(tail.group(1))
        suffix = tail.group(2)
        i += 1
    parts += ["0"] * (3 - len(parts))

    try:
        version = semver.Version.parse(".".join(parts) + suffix)
    except ValueError as e:
        raise MalformedName(f"invalid version in {s!r}: {e}")

    extension = ".".join(labels[i:]) or None
    return ANSName(
        protocol=protocol.lower(),
        agent_id=labels[0],
        capability=labels[1],
        provider=labels[2],
        version=version,
        extension=extension,
    )


def format_ansname(n: ANSName) -> str:
    """Canonical ``protocol://agentID.capability.provider.vX.Y.Z[.extension]``."""
    text = f"{n.protocol}://{n.agent_id}.{n.capability}.{n.provider}.v{version_string(n.version)}"
    if n.extension:
        text += f".{n.extension}"
    return text


def is_ansname(text: Any) -> bool:
    """True when ``text`` parses as an ANSName."""
    if not isinstance(text, str) or "://" not in text:
        return False
    try:
        parse_ansname(text)
    except MalformedName:
        return False
    return True


# =========================== VERSION COMPARISON =========================== #
def compare_versions(a: VersionLike, b: VersionLike) -> int:
    """
    SemVer 2.0.0 precedence; build metadata ignored.

    Returns:
        int: -1, 0 or 1
    """
    return _as_version(a).compare(_as_version(b))


# ============================ VERSION RANGES ============================== #
Comparator = Tuple[str, semver.Version]

_OPS = {
    ">=": lambda c: c >= 0,
    "<=": lambda c: c <= 0,
    ">": lambda c: c > 0,
    "<": lambda c: c < 0,
    "=": lambda c: c == 0,
    "!=": lambda c: c != 0,
}
_OP_RE = re.compile(r"^(>=|<=|==|!=|>|<|=)?\s*(.+)$")
_PARTIAL_RE = re.compile(
    r"^v?(\d+|[xX*])(?:\.(\d+|[xX*]))?(?:\.(\d+|[xX*]))?"
    r"(?:-([0-9A-Za-z.-]+))?(?:\+([0-9A-Za-z.-]+))?$"
)
_HYPHEN_RE = re.compile(r"^(\S+)\s+-\s+(\S+)$")
_WILDCARDS = ("", "*", "x", "X")


@dataclass(frozen=True)
class _Partial:
    major: Optional[int]
    minor: Optional[int]
    patch: Optional[int]
    prerelease: Optional[str]

    @property
    def is_full(self) -> bool:
        return self.patch is not None

    def floor(self) -> semver.Version:
        return semver.Version(self.major or 0, self.minor or 0, self.patch or 0,
                              prerelease=self.prerelease)


def _parse_partial(text: str, raw: str) -> _Partial:
    m = _PARTIAL_RE.match(text)
    if not m:
        raise MalformedRange(f"invalid version {text!r} in range {raw!r}")
    nums: List[Optional[int]] = []
    for g in m.group(1, 2, 3):
        nums.append(None if g is None or g in ("x", "X", "*") else int(g))
    # Once a position is a wildcard, everything after it is too
    for idx in range(1, 3):
        if nums[idx - 1] is None:
            nums[idx] = None
    prerelease = m.group(4)
    if prerelease and nums[2] is None:
        raise MalformedRange(f"prerelease needs a full version in {raw!r}")
    if prerelease:
        try:
            semver.Version.parse(f"{nums[0]}.{nums[1]}.{nums[2]}-{prerelease}")
        except ValueError:
            raise MalformedRange(f"invalid prerelease in {raw!r}")
    return _Partial(nums[0], nums[1], nums[2], prerelease)


def _bump(p: _Partial) -> semver.Version:
    """Smallest version above every version the partial covers."""
    if p.minor is None:
        return semver.Version(p.major + 1, 0, 0)
    return semver.Version(p.major, p.minor + 1, 0)


def _xrange(p: _Partial) -> List[Comparator]:
    if p.major is None:
        return []
    if p.is_full:
        return [("=", p.floor())]
    return [(">=", p.floor()), ("<", _bump(p))]


def _caret(p: _Partial) -> List[Comparator]:
    if p.major is None:
        return []
    # Leftmost non-zero component is fixed
    if p.major > 0 or p.minor is None:
        upper = semver.Version(p.major + 1, 0, 0)
    elif p.minor > 0 or p.patch is None:
        upper = semver.Version(0, p.minor + 1, 0)
    else:
        upper = semver.Version(0, 0, p.patch + 1)
    return [(">=", p.floor()), ("<", upper)]


def _tilde(p: _Partial) -> List[Comparator]:
    if p.major is None:
        return []
    if p.minor is None:
        return [(">=", p.floor()), ("<", semver.Version(p.major + 1, 0, 0))]
    return [(">=", p.floor()), ("<", semver.Version(p.major, p.minor + 1, 0))]


def _operator(op: str, p: _Partial, raw: str) -> List[Comparator]:
    if op == "==":
        op = "="
    if p.major is None:
        if op in (">", "<", "!="):
            # Nothing is above/below/unequal to "any version"
            return [("<", semver.Version(0, 0, 0))]
        return []
    if p.is_full:
        return [(op, p.floor())]
    if op == "=":
        return _xrange(p)
    if op == ">":
        return [(">=", _bump(p))]
    if op == ">=":
        return [(">=", p.floor())]
    if op == "<":
        return [("<", p.floor())]
    if op == "<=":
        return [("<", _bump(p))]
    raise MalformedRange(f"'!=' needs a full version in {raw!r}")


def _compile_set(text: str, raw: str) -> Tuple[Comparator, ...]:
    hyphen = _HYPHEN_RE.match(text)
    if hyphen:
        low = _parse_partial(hyphen.group(1), raw)
        high = _parse_partial(hyphen.group(2), raw)
        comps: List[Comparator] = []
        if low.major is not None:
            comps.append((">=", low.floor()))
        if high.major is not None:
            comps.append(("<=", high.floor()) if high.is_full else ("<", _bump(high)))
        return tuple(comps)

    comps = []
    # "~> 1.2" and ">= 1.0.0" style spacing
    tokens = re.sub(r"(\^|~>?|>=|<=|==|!=|>|<|=)\s+", r"\1", text).split()
    for token in tokens:
        if token in _WILDCARDS:
            continue
        if token.startswith("^"):
            comps += _caret(_parse_partial(token[1:], raw))
        elif token.startswith("~"):
            comps += _tilde(_parse_partial(token[1:].lstrip(">"), raw))
        else:
            m = _OP_RE.match(token)
            op, version_text = m.group(1), m.group(2)
            partial = _parse_partial(version_text, raw)
            comps += _operator(op, partial, raw) if op else _xrange(partial)
    return tuple(comps)


@dataclass(frozen=True)
class VersionRange:
    """A compiled version range."""

    raw: str
    kind: str  # wildcard | exact | caret | tilde | comparator-set
    comparator_sets: Tuple[Tuple[Comparator, ...], ...]

    def satisfied_by(self, v: VersionLike) -> bool:
        version = _as_version(v)
        return any(_set_satisfied(version, cs) for cs in self.comparator_sets)

    def __str__(self) -> str:
        return self.raw


def _set_satisfied(v: semver.Version, comps: Sequence[Comparator]) -> bool:
    for op, bound in comps:
        if not _OPS[op](v.compare(bound)):
            return False
    if v.prerelease:
        # Prereleases only match when explicitly named on the same tuple
        tup = (v.major, v.minor, v.patch)
        return any(
            bound.prerelease and (bound.major, bound.minor, bound.patch) == tup
            for _, bound in comps
        )
    return True


def _classify(text: str) -> str:
    if text in _WILDCARDS:
        return "wildcard"
    if " " not in text and "||" not in text:
        if text.startswith("^"):
            return "caret"
        if text.startswith("~"):
            return "tilde"
        bare = text[1:] if text.startswith("=") else text
        m = _PARTIAL_RE.match(bare)
        if m and all(g is not None and g not in ("x", "X", "*") for g in m.group(1, 2, 3)):
            return "exact"
    return "comparator-set"


@functools.lru_cache(maxsize=1024)
def parse_range(raw: str) -> VersionRange:
    """
    Compile a range expression.

    Raises:
        MalformedRange: when ``raw`` is neither a range nor a version
    """
    if not isinstance(raw, str):
        raise MalformedRange(f"range must be a string, got {type(raw).__name__}")
    text = raw.strip()
    kind = _classify(text)
    if kind == "wildcard":
        return VersionRange(raw, kind, ((),))
    sets = []
    for part in text.split("||"):
        part = part.strip()
        if not part and "||" in text:
            raise MalformedRange(f"empty alternative in {raw!r}")
        sets.append(_compile_set(part, raw))
    return VersionRange(raw, kind, tuple(sets))


def exact_range(v: VersionLike) -> VersionRange:
    """Range matching exactly ``v`` (build metadata ignored)."""
    return parse_range(version_string(_as_version(v).replace(build=None)))


def is_version_compatible(v: VersionLike, r: Union[VersionRange, str]) -> bool:
    """
    True iff version ``v`` satisfies range ``r``.

    Raises:
        MalformedRange: when ``r`` is neither a range nor a version
    """
    rng = r if isinstance(r, VersionRange) else parse_range(r)
    return rng.satisfied_by(v)


def _default_version_of(record: Any) -> semver.Version:
    return record.name.version


def _tiebreak(record: Any, version: semver.Version) -> Tuple[str, str]:
    return (version.build or "", str(getattr(record, "agent_uuid", "")))


def version_negotiation(
    matches: Iterable[Any],
    r: Union[VersionRange, str],
    version_of: Optional[Callable[[Any], VersionLike]] = None,
) -> Any:
    """
    Pick the highest-version record satisfying ``r``.

    Args:
        matches: candidate records (any order)
        r: requested range
        version_of: maps a record to its version (default ``record.name.version``)

    Returns:
        the selected record; deterministic under permutation of ``matches``

    Raises:
        IncompatibleVersion: no candidate satisfies ``r``
        MalformedRange: ``r`` does not parse
    """
    rng = r if isinstance(r, VersionRange) else parse_range(r)
    version_of = version_of or _default_version_of
    best = None
    best_version: Optional[semver.Version] = None
    for record in matches:
        version = _as_version(version_of(record))
        if not rng.satisfied_by(version):
            continue
        if best is None:
            best, best_version = record, version
            continue
        order = version.compare(best_version)
        if order > 0 or (
            order == 0 and _tiebreak(record, version) > _tiebreak(best, best_version)
        ):
            best, best_version = record, version
    if best is None:
        raise IncompatibleVersion(f"no registered version satisfies {rng.raw!r}")
    return best
