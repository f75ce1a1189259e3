"""Text formats: distribution spec files and experiment config files.

Both formats share one line grammar::

    # comment (anywhere after '#')
    [section]
    key = value            (config sections, [support])
    label: v1, v2, ...     (labelled rows)
    v1, v2, ...            (bare rows)

Distribution spec files (``*.dist``) contain exactly these sections, in any
order::

    [support]
    x_values = 0.5, 1.5          # decimals
    y_count = 2
    m_values = a, b              # symbols
    d_values = d1, d2

    [p_d]
    0.5, 0.5                     # one row, one entry per d

    [p_m_given_d]
    d1: 1, 0                     # one row per d, in d_values order
    d2: 0, 1

    [p_xy_given_d]
    d1:                          # block header, in d_values order
    0.45, 0.05                   # |x| rows of K entries
    d2:
    0.05, 0.45

Numbers are written with ``repr(float)`` (at most 17 significant digits), so
``parse_spec(emit_spec(f))`` reproduces every factor bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distribution import STRUCTURAL_TOL, FactoredDistribution, Support
from .errors import SpecParseError, ValidationError

FORMAT_HEADER = "# dg-risklab distribution spec v1"
DIST_SECTIONS = ("support", "p_d", "p_m_given_d", "p_xy_given_d")


@dataclass
class Section:
    name: str
    line: int
    rows: list[tuple[int, str]] = field(default_factory=list)

    def key_values(self) -> dict[str, tuple[int, str]]:
        out: dict[str, tuple[int, str]] = {}
        for row, (lineno, text) in enumerate(self.rows, start=1):
            if "=" not in text:
                raise SpecParseError("expected 'key = value'", self.name, row, lineno)
            key, value = (t.strip() for t in text.split("=", 1))
            if not key:
                raise SpecParseError("empty key", self.name, row, lineno)
            if key in out:
                raise SpecParseError(f"duplicate key {key!r}", self.name, row, lineno)
            out[key] = (lineno, value)
        return out


def read_sections(text: str) -> dict[str, Section]:
    sections: dict[str, Section] = {}
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise SpecParseError(f"malformed section header {line!r}", line=lineno)
            name = line[1:-1].strip()
            if name in sections:
                raise SpecParseError("duplicate section", name, line=lineno)
            current = sections[name] = Section(name, lineno)
            continue
        if current is None:
            raise SpecParseError("content before the first section header", line=lineno)
        current.rows.append((lineno, line))
    return sections


def parse_decimal(token: str, section: str, row: int, lineno: int) -> float:
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        raise SpecParseError(f"not a decimal: {token!r}", section, row, lineno) from None
    if not np.isfinite(value):
        raise SpecParseError(f"non-finite value {token!r}", section, row, lineno)
    return value


def parse_list(text: str, section: str, row: int, lineno: int) -> list[str]:
    items = [t.strip() for t in text.split(",")]
    if any(not t for t in items):
        raise SpecParseError("empty list entry", section, row, lineno)
    return items


def _decimals(text, section, row, lineno, expected, what):
    values = [parse_decimal(t, section, row, lineno) for t in parse_list(text, section, row, lineno)]
    if len(values) != expected:
        raise SpecParseError(
            f"{what}: expected {expected} entries, got {len(values)}", section, row, lineno
        )
    if any(v < 0 for v in values):
        raise SpecParseError(f"{what}: negative probability", section, row, lineno)
    return values


def _check_sum(values, section, row, lineno, what):
    total = float(np.sum(values))
    if abs(total - 1.0) > STRUCTURAL_TOL:
        raise SpecParseError(f"{what} sums to {total!r}, not 1", section, row, lineno)


def _split_label(text, section, row, lineno):
    if ":" not in text:
        raise SpecParseError("expected 'label: values'", section, row, lineno)
    label, rest = text.split(":", 1)
    return label.strip(), rest.strip()


def _parse_support(sec: Section) -> Support:
    kv = sec.key_values()
    required = ("x_values", "y_count", "m_values", "d_values")
    for key in required:
        if key not in kv:
            raise SpecParseError(f"missing key {key!r}", sec.name, line=sec.line)
    extra = sorted(set(kv) - set(required))
    if extra:
        raise SpecParseError(f"unknown key {extra[0]!r}", sec.name, line=kv[extra[0]][0])
    rows = {key: i for i, key in enumerate(kv, start=1)}
    ln, txt = kv["x_values"]
    xs = [parse_decimal(t, sec.name, rows["x_values"], ln)
          for t in parse_list(txt, sec.name, rows["x_values"], ln)]
    ln, txt = kv["y_count"]
    try:
        k = int(txt)
    except ValueError:
        raise SpecParseError(f"y_count: not an integer: {txt!r}", sec.name, rows["y_count"], ln) from None
    ms = parse_list(kv["m_values"][1], sec.name, rows["m_values"], kv["m_values"][0])
    ds = parse_list(kv["d_values"][1], sec.name, rows["d_values"], kv["d_values"][0])
    try:
        return Support(tuple(xs), k, tuple(ms), tuple(ds))
    except ValidationError as exc:
        raise SpecParseError(str(exc), sec.name, line=sec.line) from None


def _header_name(text: str) -> str | None:
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("# name:"):
            return line[len("# name:"):].strip() or None
        if line and not line.startswith("#"):
            return None
    return None


def parse_spec(text: str, name: str | None = None) -> FactoredDistribution:
    """Parse a distribution spec. ``name`` defaults to the ``# name:`` header line."""
    name = name or _header_name(text) or "spec"
    sections = read_sections(text)
    for s in DIST_SECTIONS:
        if s not in sections:
            raise SpecParseError("missing section", s)
    unknown = sorted(set(sections) - set(DIST_SECTIONS))
    if unknown:
        raise SpecParseError("unknown section", unknown[0], line=sections[unknown[0]].line)
    support = _parse_support(sections["support"])
    nx, k, nm, nd = support.shape

    sec = sections["p_d"]
    if len(sec.rows) != 1:
        raise SpecParseError(f"expected exactly 1 row, got {len(sec.rows)}", sec.name, line=sec.line)
    ln, txt = sec.rows[0]
    p_d = _decimals(txt, sec.name, 1, ln, nd, "p_d")
    _check_sum(p_d, sec.name, 1, ln, "p_d")

    sec = sections["p_m_given_d"]
    if len(sec.rows) != nd:
        raise SpecParseError(f"expected {nd} rows (one per d), got {len(sec.rows)}",
                             sec.name, line=sec.line)
    p_md = []
    for row, (ln, txt) in enumerate(sec.rows, start=1):
        label, rest = _split_label(txt, sec.name, row, ln)
        if label != support.d_values[row - 1]:
            raise SpecParseError(
                f"expected label {support.d_values[row - 1]!r}, got {label!r}", sec.name, row, ln
            )
        values = _decimals(rest, sec.name, row, ln, nm, f"p_m_given_d[{label}]")
        _check_sum(values, sec.name, row, ln, f"p_m_given_d[{label}]")
        p_md.append(values)

    sec = sections["p_xy_given_d"]
    blocks: list[list[list[float]]] = []
    block_start: list[tuple[int, int]] = []
    for row, (ln, txt) in enumerate(sec.rows, start=1):
        if txt.endswith(":"):
            label = txt[:-1].strip()
            expect = support.d_values[len(blocks)] if len(blocks) < nd else None
            if label != expect:
                raise SpecParseError(f"expected block header {expect!r}:, got {label!r}",
                                     sec.name, row, ln)
            blocks.append([])
            block_start.append((row, ln))
            continue
        if not blocks:
            raise SpecParseError("data row before the first block header", sec.name, row, ln)
        if len(blocks[-1]) >= nx:
            raise SpecParseError(f"block {support.d_values[len(blocks) - 1]!r} has more than {nx} rows",
                                 sec.name, row, ln)
        blocks[-1].append(_decimals(txt, sec.name, row, ln, k, "p_xy_given_d row"))
    if len(blocks) != nd:
        raise SpecParseError(f"expected {nd} blocks (one per d), got {len(blocks)}",
                             sec.name, line=sec.line)
    for b, (rows, (row, ln)) in enumerate(zip(blocks, block_start)):
        label = support.d_values[b]
        if len(rows) != nx:
            raise SpecParseError(f"block {label!r}: expected {nx} rows, got {len(rows)}",
                                 sec.name, row, ln)
        _check_sum(np.asarray(rows), sec.name, row, ln, f"block {label!r}")

    return FactoredDistribution(support, np.asarray(p_d), np.asarray(p_md), np.asarray(blocks),
                                name=name)


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_spec(f: FactoredDistribution) -> str:
    s = f.support
    lines = [
        FORMAT_HEADER,
        f"# name: {f.name}",
        "",
        "[support]",
        "x_values = " + ", ".join(_fmt(x) for x in s.x_values),
        f"y_count = {s.y_count}",
        "m_values = " + ", ".join(s.m_values),
        "d_values = " + ", ".join(s.d_values),
        "",
        "[p_d]",
        ", ".join(_fmt(v) for v in f.p_d),
        "",
        "[p_m_given_d]",
    ]
    for d, row in zip(s.d_values, f.p_m_given_d):
        lines.append(f"{d}: " + ", ".join(_fmt(v) for v in row))
    lines += ["", "[p_xy_given_d]"]
    for d, block in zip(s.d_values, f.p_xy_given_d):
        lines.append(f"{d}:")
        lines.extend(", ".join(_fmt(v) for v in row) for row in block)
    return "\n".join(lines) + "\n"


def read_spec_file(path) -> FactoredDistribution:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_spec(text, name=_header_name(text) or str(path))


def write_spec_file(f: FactoredDistribution, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(emit_spec(f))
