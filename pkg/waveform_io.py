#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Waveform files for recorded detector traces.

Layout (little-endian): a 32-byte header
    magic b'CVWF' | version u16 | kind u16 (0 real, 1 complex)
    | sample_rate f64 | length u64 | center_frequency f64
followed by `length` float64 samples, I/Q interleaved for complex traces.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from qkd_errors import ValidationError
from signal_core import Waveform

MAGIC = b'CVWF'
VERSION = 1
HEADER = struct.Struct('<4sHHdQd')
KIND_REAL = 0
KIND_COMPLEX = 1


def write_waveform(path: Union[str, Path], w: Waveform) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = KIND_COMPLEX if w.is_complex else KIND_REAL
    if kind == KIND_COMPLEX:
        body = np.column_stack([w.samples.real, w.samples.imag]).ravel()
    else:
        body = w.samples
    with open(path, 'wb') as f:
        f.write(HEADER.pack(MAGIC, VERSION, kind, float(w.sample_rate), len(w),
                            float(w.center_frequency_hint)))
        f.write(np.ascontiguousarray(body, dtype='<f8').tobytes())
    return path


def read_waveform(path: Union[str, Path]) -> Waveform:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ValidationError(f"Waveform file not found: {path}") from None
    if len(data) < HEADER.size:
        raise ValidationError(f"{path} is too short to hold a waveform header")

    magic, version, kind, sample_rate, length, center = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path} is not a waveform file (magic {magic!r})")
    if version != VERSION:
        raise ValidationError(f"{path} has unsupported waveform version {version}")
    if kind not in (KIND_REAL, KIND_COMPLEX):
        raise ValidationError(f"{path} has unknown sample kind {kind}")

    count = length * (2 if kind == KIND_COMPLEX else 1)
    body = data[HEADER.size:]
    if len(body) != 8 * count:
        raise ValidationError(f"{path} holds {len(body)} data bytes, header promises {8 * count}")
    values = np.frombuffer(body, dtype='<f8').astype(np.float64)
    samples = values[0::2] + 1j * values[1::2] if kind == KIND_COMPLEX else values
    return Waveform(samples, sample_rate, center_frequency_hint=center)
