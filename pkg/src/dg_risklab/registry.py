"""Generators addressable by name from config files."""

from __future__ import annotations

from . import generators as g
from .errors import ValidationError
from .specfile import read_spec_file


def _sizes(value):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",")]
    sizes = tuple(int(v) for v in value)
    if len(sizes) != 4:
        raise ValidationError(f"sizes must have four entries (|X|, K, |M|, |D|), got {value!r}")
    return sizes


def _bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).lower()
    if text in ("1", "true", "yes"):
        return True
    if text in ("0", "false", "no"):
        return False
    raise ValidationError(f"not a boolean: {value!r}")


_BUILDERS = {
    "pd1": lambda p: g.make_pd1(constant_m=_bool(p.pop("constant_m", False))),
    "example1": lambda p: g.make_example1(
        g.Example1Config(float(p.pop("p", 0.7)), int(p.pop("grid_n", 200))))[0],
    "figure1": lambda p: g.make_figure1(g.Figure1Config(str(p.pop("scenario", "disagree"))))[0],
    "pd_member": lambda p: g.make_pd_member(
        float(p.pop("gamma")), float(p.pop("epsilon")), _sizes(p.pop("sizes")), int(p.pop("seed", 0))),
    "covariate_shift": lambda p: g.make_covariate_shift(
        _sizes(p.pop("sizes")), int(p.pop("seed", 0)), disjoint=_bool(p.pop("disjoint", False))),
    "random": lambda p: g.make_random(_sizes(p.pop("sizes")), int(p.pop("seed", 0))),
    "spec": lambda p: read_spec_file(p.pop("path")),
}

GENERATOR_NAMES = tuple(_BUILDERS)


def build_generator(name: str, params: dict | None = None):
    if name not in _BUILDERS:
        raise ValidationError(f"unknown generator {name!r}; choose from {', '.join(GENERATOR_NAMES)}")
    params = dict(params or {})
    try:
        f = _BUILDERS[name](params)
    except KeyError as exc:
        raise ValidationError(f"generator {name!r}: missing parameter {exc.args[0]!r}") from None
    except ValidationError:
        raise
    except (TypeError, ValueError, OSError) as exc:
        raise ValidationError(f"generator {name!r}: {exc}") from None
    if params:
        raise ValidationError(f"generator {name!r}: unknown parameter {sorted(params)[0]!r}")
    return f
