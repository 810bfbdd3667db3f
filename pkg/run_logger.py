#!/usr/bin/env python3
"""
Run Logger - Tracks pipeline stage events for a simulation run
Logs stage completions, stage failures and run timing as JSON lines, so the
deterministic report never has to carry wall-clock data
"""

from datetime import datetime
from pathlib import Path
import json
import logging
from typing import List, Optional

logger = logging.getLogger(__name__)


class RunLogger:
    """
    Logs run events:
    - Run started / finished (with wall-clock timing)
    - Stage completed for a frame
    - Stage failed for a frame
    - Calibration recorded
    """

    def __init__(self, log_dir: Path = None):
        if log_dir is None:
            log_dir = Path.home() / '.cvqkd' / 'runs'

        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_file = self.log_dir / 'run_log.jsonl'

    def _log_event(self, event_type: str, frame_id: Optional[int], stage: Optional[str], details: dict = None):
        """Write a run event to the log"""
        event = {
            'timestamp': datetime.now().isoformat(),
            'event_type': event_type,
            'frame_id': frame_id,
            'stage': stage,
            'details': details or {}
        }

        try:
            with open(self.log_file, 'a') as f:
                f.write(json.dumps(event) + '\n')
        except OSError as e:
            logger.warning("Error logging run event: %s", e)

    def log_run_started(self, command: str, seed: int, frames: int):
        self._log_event(
            'RUN_STARTED',
            None,
            None,
            {
                'command': command,
                'seed': seed,
                'frames': frames,
                'message': f"{command} started: seed {seed}, {frames} frame(s)"
            }
        )

    def log_stage_completed(self, frame_id: int, stage: str, elapsed_s: float):
        self._log_event(
            'STAGE_COMPLETED',
            frame_id,
            stage,
            {'elapsed_s': round(elapsed_s, 6)}
        )

    def log_stage_failed(self, frame_id: Optional[int], stage: str, message: str):
        """Log a stage failure; the run continues with the next frame"""
        self._log_event(
            'STAGE_FAILED',
            frame_id,
            stage,
            {
                'error': message,
                'message': f"Stage {stage} failed on frame {frame_id}: {message}"
            }
        )

    def log_calibration(self, frame_id: int, snu_scale: float, electronic_share: float):
        self._log_event(
            'CALIBRATION',
            frame_id,
            'calibration',
            {
                'snu_scale': snu_scale,
                'electronic_share': electronic_share
            }
        )

    def log_run_finished(self, command: str, wall_clock_s: float, frames_ok: int, frames_failed: int):
        self._log_event(
            'RUN_FINISHED',
            None,
            None,
            {
                'command': command,
                'wall_clock_s': round(wall_clock_s, 3),
                'frames_ok': frames_ok,
                'frames_failed': frames_failed,
                'message': f"{command} finished in {wall_clock_s:.1f}s ({frames_ok} ok, {frames_failed} failed)"
            }
        )

    def read_events(self, event_type: Optional[str] = None) -> List[dict]:
        """Read back logged events, optionally filtered by type"""
        if not self.log_file.exists():
            return []
        events = []
        with open(self.log_file, 'r') as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if event_type is None or event.get('event_type') == event_type:
                    events.append(event)
        return events
