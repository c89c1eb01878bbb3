"""Analysis configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .fxnum import OverflowMode, RangeConvention


@dataclass(frozen=True)
class AnalysisConfig:
    max_msb: int = 31
    #: MSB of the range assumed for loops whose interval iteration diverges;
    #: also the MSB given to feedback nodes
    feedback_msb: int = 31
    feedback_lsb: int = -24
    constant_width: int = 32
    audio_input_lsb: int = -24
    #: None derives the MSB of audio inputs from their [-1, 1] range
    audio_input_msb: int | None = None
    convention: RangeConvention = RangeConvention.GUARDED
    overflow: OverflowMode = OverflowMode.WRAP
    iteration_budget: int = 64
    interval_precision: int = 256
    #: grids with at most this many points use the exhaustive LSB search
    bruteforce_grid_cap: int = 4096
    reference_precision: int = 256
    samples: int = 200
    snr_window: int = 200

    def replace(self, **changes) -> "AnalysisConfig":
        return dataclasses.replace(self, **changes)


_ENUMS = {"convention": RangeConvention, "overflow": OverflowMode}


def coerce(key: str, raw):
    """Convert a textual value to the type of field `key`."""
    if key in _ENUMS:
        return raw if isinstance(raw, _ENUMS[key]) else _ENUMS[key](str(raw).strip().lower())
    if key == "audio_input_msb" and (raw is None or str(raw).strip().lower() in ("", "none")):
        return None
    return int(raw)


def load_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, dashes in keys are
    accepted as underscores."""
    known = {f.name for f in fields(AnalysisConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = coerce(key, value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out
