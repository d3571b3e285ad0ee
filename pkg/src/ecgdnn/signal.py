"""Resampling and zero-padding of raw recordings into the network window."""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import InvalidRecord
from .labels import LEADS, N_LEADS

TARGET_RATE = 400
WINDOW = 4096
KAISER_BETA = 8.6
TAPS_PER_PHASE = 32
MIN_DURATION, MAX_DURATION = 6.0, 11.0


@dataclass
class EcgRecord:
    exam_id: str
    patient_id: str
    sampling_rate: int
    leads: np.ndarray  # (12, n_samples), millivolts
    age: float = 0.0
    sex: str = "female"

    lead_order = LEADS

    @property
    def n_samples(self):
        return self.leads.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sampling_rate

    def validate(self):
        if self.leads.ndim != 2 or self.leads.shape[0] != N_LEADS:
            raise InvalidRecord(f"{self.exam_id}: expected {N_LEADS} leads, got array of shape {self.leads.shape}")
        if self.n_samples == 0:
            raise InvalidRecord(f"{self.exam_id}: empty leads")
        if self.sampling_rate <= 0:
            raise InvalidRecord(f"{self.exam_id}: sampling rate must be positive")
        if not MIN_DURATION <= self.duration <= MAX_DURATION:
            raise InvalidRecord(f"{self.exam_id}: duration {self.duration:.2f} s outside "
                                f"[{MIN_DURATION}, {MAX_DURATION}]")
        if self.sex not in ("male", "female"):
            raise InvalidRecord(f"{self.exam_id}: sex must be 'male' or 'female'")
        return self


@dataclass
class NetworkInput:
    data: np.ndarray  # (12, 4096) float32
    pad_left: int
    pad_right: int
    truncated: bool = False

    @property
    def signal_length(self):
        return self.data.shape[1] - self.pad_left - self.pad_right


def resample_filter(up, down):
    """Kaiser-windowed sinc low-pass used by :func:`resample`, unit DC gain."""
    numtaps = TAPS_PER_PHASE * up + 1  # odd length keeps the filter zero-phase
    return firwin(numtaps, 1.0 / max(up, down), window=("kaiser", KAISER_BETA))


def resample(record, target_rate=TARGET_RATE):
    """Polyphase resampling of every lead to ``target_rate``.

    Output length is ``round(n * target_rate / rate)``. Same-rate calls
    return the samples untouched.
    """
    if target_rate <= 0:
        raise InvalidRecord("target rate must be positive")
    if record.leads.size == 0 or record.leads.shape[-1] == 0:
        raise InvalidRecord(f"{record.exam_id}: empty lead")
    if record.sampling_rate == target_rate:
        return replace(record, leads=record.leads.copy())
    g = math.gcd(int(record.sampling_rate), int(target_rate))
    up, down = int(target_rate) // g, int(record.sampling_rate) // g
    n_out = int(round(record.n_samples * up / down))
    x = np.asarray(record.leads, dtype=np.float64)
    y = resample_poly(x, up, down, axis=1, window=resample_filter(up, down))
    if y.shape[1] < n_out:
        y = np.pad(y, ((0, 0), (0, n_out - y.shape[1])))
    return replace(record, leads=y[:, :n_out].astype(np.float32), sampling_rate=int(target_rate))


def pad_to_window(record, window=WINDOW):
    """Center the recording in a zero-filled ``(12, window)`` matrix.

    Longer recordings are cut symmetrically and flagged as truncated.
    """
    x = np.asarray(record.leads, dtype=np.float32)
    n = x.shape[1]
    out = np.zeros((x.shape[0], window), dtype=np.float32)
    if n > window:
        start = (n - window) // 2
        out[:] = x[:, start:start + window]
        return NetworkInput(out, 0, 0, truncated=True)
    left = (window - n) // 2
    out[:, left:left + n] = x
    return NetworkInput(out, left, window - n - left)


def preprocess(record):
    record.validate()
    return pad_to_window(resample(record, TARGET_RATE))


def preprocess_batch(records):
    """Stack preprocessed records into an ``(N, 12, 4096)`` float32 array."""
    out = np.zeros((len(records), N_LEADS, WINDOW), dtype=np.float32)
    for i, rec in enumerate(records):
        out[i] = preprocess(rec).data
    return out
