"""
Band-pass filtering, epoch extraction and the two step trial rejection.
"""

from ..core import run_segment_bounds
from ..stream.container import read_epochs, write_epochs
from .epochs import DEFAULT_DELAY_CORRECTION_MS, baseline_correct, corrected_onset_index, epochize
from .filtering import FilterSpec, bandpass
from .pipeline import PreprocessedSession, PreprocessOptions, fill_gaps, preprocess_recording, preprocess_run
from .rejection import RejectionReport, flag_trials, reject_trials, rejection_overview
