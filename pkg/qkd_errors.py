#!/usr/bin/env python3
# cvqkd-twin
# Copyright (C) 2026 cvqkd-twin contributors
# Licensed under the GNU General Public License v3 or later.

"""
Exception hierarchy shared by every stage of the link model.

Conditions that are flags rather than failures (low pilot confidence,
regularized equalizer solve, key rate below threshold, channel abort) are
carried on result objects and never raised.
"""

from typing import Optional


class CvqkdError(Exception):
    """Base class for all errors raised by the link model"""


class ValidationError(CvqkdError, ValueError):
    """A parameter or input is outside its documented range"""


class ConfigError(ValidationError):
    """Configuration document failed to load or validate"""


class EstimationFailure(CvqkdError):
    """An estimator could not produce a usable value (no FOE peak, misaligned frames)"""


class SyncFailure(CvqkdError):
    """Training correlation peak did not clear the sync threshold"""


class CalibrationFailure(CvqkdError):
    """Shot-noise calibration found no clearance over electronic noise"""


class UnphysicalStateError(CvqkdError):
    """Covariance matrix produced a symplectic eigenvalue below 1"""


class StageFailure(CvqkdError):
    """A pipeline stage failed for one frame"""

    def __init__(self, stage: str, frame_id: Optional[int], message: str):
        self.stage = stage
        self.frame_id = frame_id
        self.message = message
        where = f"frame {frame_id}" if frame_id is not None else "run"
        super().__init__(f"[{stage}] {where}: {message}")

    def to_dict(self) -> dict:
        return {
            'stage': self.stage,
            'frame_id': self.frame_id,
            'message': self.message
        }
