"""Flat key = value text parsing for run configs and model files.

Lines are `key = value`, `#` starts a comment, blank lines are ignored.
Matrix values use `;` between rows and whitespace or `,` between entries;
entries are anything Python's complex() accepts (e.g. 0.5, 1e-3, 2+0.5j).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def parse_flat(text: str) -> dict:
    """Parse flat key = value text into an ordered str -> str mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_matrix(value: str, shape=None) -> np.ndarray:
    """Parse a `;`-row, whitespace/comma-entry complex matrix literal."""
    rows = []
    for row in value.split(";"):
        toks = row.replace(",", " ").split()
        if not toks:
            raise ConfigError(f"empty matrix row in {value!r}")
        try:
            rows.append([complex(tok) for tok in toks])
        except ValueError as exc:
            raise ConfigError(f"bad matrix entry in {value!r}: {exc}") from None
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ConfigError(f"ragged matrix rows in {value!r}")
    mat = np.array(rows, dtype=complex)
    if shape is not None and mat.shape != shape:
        raise ConfigError(f"matrix has shape {mat.shape}, expected {shape}")
    return mat


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {value!r}")
