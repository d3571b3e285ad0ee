"""Parametric 12-lead ECG generator with labels known by construction.

Beats are sums of Gaussian bumps (P, Q, R, S, T) timed from the QRS onset,
projected onto the twelve leads through a fixed amplitude matrix. Bundle
branch blocks add a lead-specific terminal deflection whose size grows with
QRS widening; atrial fibrillation drops the P waves, draws RR intervals from
a wide distribution and adds low-amplitude fibrillatory waves.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks

from .consolidate import Measurements
from .labels import CLASSES, LEADS, N_CLASSES
from .signal import EcgRecord

WAVES = ("P", "Q", "R", "S", "T")

# mV per wave (P, Q, R, S, T) for leads I .. V6
LEAD_MIX = np.array([
    [0.10, -0.05, 0.80, -0.15, 0.20],
    [0.15, -0.08, 1.20, -0.20, 0.30],
    [0.05, -0.05, 0.50, -0.10, 0.10],
    [-0.12, 0.05, -0.90, 0.15, -0.25],
    [0.03, -0.03, 0.20, -0.05, 0.05],
    [0.10, -0.06, 0.80, -0.15, 0.20],
    [0.08, -0.02, 0.30, -0.90, 0.05],
    [0.08, -0.02, 0.50, -1.00, 0.25],
    [0.08, -0.04, 0.80, -0.70, 0.35],
    [0.08, -0.06, 1.20, -0.40, 0.35],
    [0.08, -0.08, 1.10, -0.20, 0.30],
    [0.08, -0.08, 0.90, -0.10, 0.25],
])

# terminal QRS deflection (mV at full widening) for right / left bundle branch block
BBB_TERMINAL = {
    "right": np.array([-0.4, -0.2, 0.0, 0.2, -0.3, 0.0, 0.8, 0.6, 0.2, 0.0, -0.3, -0.4]),
    "left": np.array([0.6, 0.3, 0.0, -0.4, 0.6, 0.0, -0.7, -0.7, -0.4, 0.2, 0.6, 0.7]),
}

SB_MAX_HR, ST_MIN_HR = 50.0, 100.0
AVB_MIN_PR, BBB_MIN_QRS = 200.0, 120.0
NORMAL_QRS = 100.0  # widening beyond this grows the terminal deflection
P_SIGMA_MS = 20.0
AF_WAVE_MV = 0.04


@dataclass
class SynthParams:
    heart_rate: float = 75.0
    pr_interval: float = 160.0
    qrs_duration: float = 90.0
    bbb_pattern: str = "right"
    rr_jitter: float = 0.0
    af_mode: bool = False
    noise_std: float = 0.0
    sampling_rate: int = 400
    duration: float = 10.0
    amplitude: float = 1.0
    rng_seed: int = 0

    def validate(self):
        if not 20 <= self.heart_rate <= 220:
            raise ValueError(f"heart_rate {self.heart_rate} outside [20, 220]")
        if self.pr_interval < 0 or self.qrs_duration <= 0:
            raise ValueError("pr_interval must be >= 0 and qrs_duration > 0")
        if not 7 <= self.duration <= 10:
            raise ValueError(f"duration {self.duration} outside [7, 10] s")
        if self.bbb_pattern not in BBB_TERMINAL:
            raise ValueError(f"bbb_pattern must be one of {sorted(BBB_TERMINAL)}")
        return self


@dataclass
class SynthRecord:
    record: EcgRecord
    labels: np.ndarray
    measurements: Measurements
    params: SynthParams
    r_peaks: np.ndarray = field(default_factory=lambda: np.empty(0))  # seconds


def true_labels(p):
    """Label vector implied by generator parameters."""
    lab = np.zeros(N_CLASSES, dtype=bool)
    sinus = not p.af_mode
    lab[CLASSES.index("SB")] = sinus and p.heart_rate < SB_MAX_HR
    lab[CLASSES.index("ST")] = sinus and p.heart_rate > ST_MIN_HR
    lab[CLASSES.index("1dAVb")] = sinus and p.pr_interval > AVB_MIN_PR
    wide = p.qrs_duration > BBB_MIN_QRS
    lab[CLASSES.index("RBBB")] = wide and p.bbb_pattern == "right"
    lab[CLASSES.index("LBBB")] = wide and p.bbb_pattern == "left"
    lab[CLASSES.index("AF")] = p.af_mode
    return lab


def _bump(t, center, sigma):
    return np.exp(-0.5 * ((t - center) / sigma) ** 2)


def beat_waves(t_ms, qrs_onset, p, rr_ms, with_p=True):
    """Per-wave time courses (5, len(t)) plus the terminal BBB course, unit amplitude."""
    w = p.qrs_duration
    waves = np.zeros((len(WAVES), len(t_ms)))
    if with_p:
        p_center = qrs_onset - p.pr_interval + 2.5 * P_SIGMA_MS
        waves[0] = _bump(t_ms, p_center, P_SIGMA_MS)
    waves[1] = _bump(t_ms, qrs_onset + 0.15 * w, 0.07 * w)
    waves[2] = _bump(t_ms, qrs_onset + 0.45 * w, 0.12 * w)
    waves[3] = _bump(t_ms, qrs_onset + 0.75 * w, 0.08 * w)
    t_offset = 250.0 * np.sqrt(rr_ms / 1000.0)
    waves[4] = _bump(t_ms, qrs_onset + w + t_offset, 45.0)
    terminal = _bump(t_ms, qrs_onset + 0.85 * w, 0.10 * w)
    return waves, terminal


def r_peak_offset(p):
    """Time from QRS onset to the R-wave centre, in ms."""
    return 0.45 * p.qrs_duration


def rr_intervals(p, rng, total_ms):
    rr = 60000.0 / p.heart_rate
    out, acc = [], 0.0
    while acc < total_ms + 2 * rr:
        if p.af_mode:
            x = rr * rng.uniform(0.6, 1.4)
        else:
            x = rr * max(0.5, 1.0 + p.rr_jitter * rng.standard_normal())
        out.append(x)
        acc += x
    return np.array(out)


def generate(params, exam_id="synth", patient_id="synth", age=50.0, sex="female"):
    """Render one record; labels and measurements come from ``params``."""
    p = params.validate()
    rng = np.random.default_rng(p.rng_seed)
    fs = p.sampling_rate
    n = int(round(p.duration * fs))
    t_ms = np.arange(n) * 1000.0 / fs
    total_ms = n * 1000.0 / fs
    rr = rr_intervals(p, rng, total_ms)
    # first QRS onset somewhere in the first cycle; earlier beats cover the left edge
    first = rng.uniform(0.0, rr[0]) - rr[0]
    onsets = first + np.concatenate([[0.0], np.cumsum(rr[:-1])])
    mix = LEAD_MIX * p.amplitude
    terminal_amp = BBB_TERMINAL[p.bbb_pattern] * p.amplitude * np.clip(
        (p.qrs_duration - NORMAL_QRS) / 40.0, 0.0, 1.0)
    leads = np.zeros((len(LEADS), n))
    for i, onset in enumerate(onsets):
        lo = np.searchsorted(t_ms, onset - p.pr_interval - 150.0)
        hi = np.searchsorted(t_ms, onset + p.qrs_duration + 700.0)
        if hi <= lo:
            continue
        rr_local = rr[i]
        waves, term = beat_waves(t_ms[lo:hi], onset, p, rr_local, with_p=not p.af_mode)
        leads[:, lo:hi] += mix @ waves + np.outer(terminal_amp, term)
    if p.af_mode:
        f_hz = rng.uniform(5.0, 7.0)
        phase = rng.uniform(0, 2 * np.pi, size=len(LEADS))
        leads += AF_WAVE_MV * p.amplitude * np.sin(2 * np.pi * f_hz * t_ms[None, :] / 1000.0 + phase[:, None])
    if p.noise_std > 0:
        leads += rng.normal(0.0, p.noise_std, size=leads.shape)
    r_times = (onsets + r_peak_offset(p)) / 1000.0
    r_times = r_times[(r_times >= 0) & (r_times < total_ms / 1000.0)]
    intervals = np.diff(r_times) * 1000.0
    meas = Measurements(
        heart_rate=float(p.heart_rate),
        pr_interval=float("nan") if p.af_mode else float(p.pr_interval),
        qrs_duration=float(p.qrs_duration),
        nn_sd=float(np.std(intervals, ddof=1)) if len(intervals) > 1 else 0.0,
    )
    rec = EcgRecord(exam_id, patient_id, fs, leads.astype(np.float32), age, sex)
    return SynthRecord(rec, true_labels(p), meas, p, r_times)


# -- measurement from the signal ------------------------------------------------

def _bandpass(x, fs, lo=5.0, hi=25.0):
    b, a = butter(2, [lo / (fs / 2), hi / (fs / 2)], btype="band")
    return filtfilt(b, a, x)


def detect_r_peaks(record, lead="II", refractory_ms=200.0):
    """Sample indices of R peaks from derivative energy on one lead."""
    fs = record.sampling_rate
    x = np.asarray(record.leads[LEADS.index(lead)], dtype=np.float64)
    if x.size < 16 or np.ptp(x) == 0:
        return np.empty(0, dtype=int)
    band = _bandpass(x, fs)
    energy = np.gradient(band) ** 2
    win = max(1, int(round(0.05 * fs)))
    energy = np.convolve(energy, np.ones(win) / win, mode="same")
    distance = max(1, int(round(refractory_ms * fs / 1000.0)))
    cand, props = find_peaks(energy, distance=distance, height=0)
    if len(cand) == 0:
        return np.empty(0, dtype=int)
    heights = np.sort(props["peak_heights"])
    ref = heights[-2] if len(heights) > 1 else heights[-1]
    if ref <= 0:
        return np.empty(0, dtype=int)
    peaks, _ = find_peaks(energy, distance=distance, height=0.3 * ref)
    # refine to the extremum of the raw lead near each energy peak
    half = int(round(0.06 * fs))
    polarity = np.sign(x[peaks].sum() - np.median(x) * len(peaks)) or 1.0
    refined = []
    for pk in peaks:
        lo, hi = max(0, pk - half), min(len(x), pk + half + 1)
        refined.append(lo + int(np.argmax(polarity * x[lo:hi])))
    refined = np.unique(refined)
    keep = [refined[0]] if len(refined) else []
    for idx in refined[1:]:
        if idx - keep[-1] >= distance:
            keep.append(idx)
    return np.asarray(keep, dtype=int)


def _template_fit(avg, t_ms, candidates, render):
    best, best_score = candidates[0], -np.inf
    for c in candidates:
        tpl = render(c)
        tpl = tpl - tpl.mean()
        norm = np.linalg.norm(tpl)
        if norm == 0:
            continue
        score = float(np.dot(avg, tpl) / norm)
        if score > best_score:
            best, best_score = c, score
    return best


def measure(record, peaks=None):
    """Heart rate and NN standard deviation from R peaks; PR and QRS by template fit.

    The PR/QRS fit correlates the lead II average beat against the
    generator's own beat model, so it is meaningful for synthetic data only.
    """
    fs = record.sampling_rate
    if peaks is None:
        peaks = detect_r_peaks(record)
    if len(peaks) < 2:
        nan = float("nan")
        return Measurements(nan, nan, nan, nan)
    rr_ms = np.diff(peaks) * 1000.0 / fs
    hr = 60000.0 / rr_ms.mean()
    nn_sd = float(np.std(rr_ms, ddof=1)) if len(rr_ms) > 1 else 0.0

    x = np.asarray(record.leads[LEADS.index("II")], dtype=np.float64)
    pre, post = int(0.45 * fs), int(0.15 * fs)
    segs = [x[p - pre:p + post] for p in peaks if p - pre >= 0 and p + post <= len(x)]
    if not segs:
        return Measurements(hr, float("nan"), float("nan"), nn_sd)
    avg = np.mean(segs, axis=0)
    t_ms = (np.arange(-pre, post) * 1000.0 / fs)
    mix = LEAD_MIX[LEADS.index("II")]
    rr_mean = rr_ms.mean()

    def render_qrs(w):
        p = SynthParams(qrs_duration=w)
        waves, _ = beat_waves(t_ms, -r_peak_offset(p), p, rr_mean, with_p=False)
        return mix[1:4] @ waves[1:4]

    qwin = np.abs(t_ms) <= 120.0
    qrs = _template_fit(avg[qwin] - avg[qwin].mean(), t_ms,
                        np.arange(50.0, 200.0, 1.0), lambda w: render_qrs(w)[qwin])

    def render_p(pr):
        p = SynthParams(qrs_duration=qrs, pr_interval=pr)
        onset = -r_peak_offset(p)
        return mix[0] * _bump(t_ms, onset - pr + 2.5 * P_SIGMA_MS, P_SIGMA_MS)

    pwin = t_ms <= -0.45 * qrs
    pr = _template_fit(avg[pwin] - avg[pwin].mean(), t_ms,
                       np.arange(60.0, 400.0, 1.0), lambda v: render_p(v)[pwin])
    return Measurements(hr, float(pr), float(qrs), nn_sd)


# -- corpora ---------------------------------------------------------------------

# parameter ranges for each single-abnormality profile; sinus rates run right up
# to the SB and ST lines so a classifier has to place its boundary there
PROFILES = {
    "normal": {},
    "1dAVb": {"pr_interval": (220.0, 320.0)},
    "RBBB": {"qrs_duration": (130.0, 170.0), "bbb_pattern": "right"},
    "LBBB": {"qrs_duration": (130.0, 170.0), "bbb_pattern": "left"},
    "SB": {"heart_rate": (35.0, SB_MAX_HR)},
    "AF": {"af_mode": True, "heart_rate": (60.0, 110.0)},
    "ST": {"heart_rate": (float(np.nextafter(ST_MIN_HR, np.inf)), 150.0)},
}
NORMAL_RANGES = {"heart_rate": (SB_MAX_HR, ST_MIN_HR), "pr_interval": (120.0, 180.0),
                 "qrs_duration": (70.0, 100.0)}


def sample_params(profile, rng, base=None):
    """Draw generator parameters for one profile name (a class or 'normal')."""
    base = base or SynthParams()
    values = {}
    for key, (lo, hi) in NORMAL_RANGES.items():
        values[key] = float(rng.uniform(lo, hi))
    values["bbb_pattern"] = "right" if rng.random() < 0.5 else "left"
    for key, spec in PROFILES[profile].items():
        values[key] = float(rng.uniform(*spec)) if isinstance(spec, tuple) else spec
    return replace(base, **values, rng_seed=int(rng.integers(2**31)))


def allocate(n, prevalence):
    """Profile name per record, ``p * n`` records per class by largest remainder.

    Quotas that are whole numbers are met exactly; the leftover records go
    to the largest fractional parts (class order breaks ties), then 'normal'.
    """
    quota = np.array([prevalence.get(c, 0.0) * n for c in CLASSES])
    if (quota < 0).any() or quota.sum() > n * (1 + 1e-9):
        raise ValueError(f"prevalences {prevalence} need {quota.sum():.2f} records, only {n} requested")
    rounded = np.round(quota)
    whole = np.abs(quota - rounded) < 1e-9
    counts = np.where(whole, rounded, np.floor(quota)).astype(int)
    spare = min(n, int(round(quota.sum()))) - counts.sum()
    frac = np.where(whole, -1.0, quota - counts)
    for k in sorted(range(len(CLASSES)), key=lambda k: -frac[k])[:max(spare, 0)]:
        counts[k] += 1
    counts = dict(zip(CLASSES, counts))
    names = [c for c in CLASSES for _ in range(counts[c])]
    return names + ["normal"] * (n - len(names))


def generate_corpus(n, prevalence=None, seed=0, noise_std=0.02, sampling_rates=(400,),
                    durations=(10.0, 10.0), exams_per_patient=1, rr_jitter=0.03,
                    heart_rate_range=None, id_prefix="S"):
    """``n`` single-abnormality records in shuffled order.

    With ``heart_rate_range`` every record is an otherwise normal sinus rhythm
    with heart rate drawn uniformly from that range, so SB and ST depend on the
    rate alone (borderline-rate slices); ``prevalence`` is ignored.
    """
    if prevalence is None:
        prevalence = {c: 1.0 / (N_CLASSES + 1) for c in CLASSES}
    rng = np.random.default_rng(seed)
    names = allocate(n, prevalence)
    order = rng.permutation(n)
    out = []
    for i in range(n):
        profile = names[order[i]] if heart_rate_range is None else "normal"
        base = SynthParams(noise_std=noise_std, rr_jitter=rr_jitter,
                           sampling_rate=int(rng.choice(sampling_rates)),
                           duration=float(rng.uniform(*durations)))
        p = sample_params(profile, rng, base)
        if heart_rate_range is not None:
            p = replace(p, heart_rate=float(rng.uniform(*heart_rate_range)))
        p = replace(p, duration=round(p.duration * p.sampling_rate) / p.sampling_rate)
        sex = "male" if rng.random() < 0.4 else "female"
        age = float(rng.integers(16, 90))
        out.append(generate(p, exam_id=f"{id_prefix}{i:06d}",
                            patient_id=f"{id_prefix}P{i // exams_per_patient:06d}",
                            age=age, sex=sex))
    return out


# -- free-text reports ------------------------------------------------------------

REPORT_PHRASES = {
    "1dAVb": ["bloqueio atrioventricular de primeiro grau", "bav de 1o grau"],
    "RBBB": ["bloqueio de ramo direito", "bloqueio completo do ramo direito"],
    "LBBB": ["bloqueio de ramo esquerdo", "bloqueio completo do ramo esquerdo"],
    "SB": ["bradicardia sinusal"],
    "AF": ["fibrilação atrial", "fibrilacao atrial de alta resposta"],
    "ST": ["taquicardia sinusal"],
}
NORMAL_PHRASES = ["ritmo sinusal", "eletrocardiograma dentro dos limites da normalidade",
                  "ecg normal"]


def synth_report(labels, rng):
    """Portuguese report text whose findings are exactly ``labels``."""
    parts = []
    if not labels[CLASSES.index("AF")]:
        parts.append(NORMAL_PHRASES[0])
    for c, on in zip(CLASSES, labels):
        if on:
            opts = REPORT_PHRASES[c]
            parts.append(opts[int(rng.integers(len(opts)))])
    if len(parts) <= 1:
        parts.append(NORMAL_PHRASES[1 + int(rng.integers(len(NORMAL_PHRASES) - 1))])
    text = ". ".join(parts) + "."
    return text[0].upper() + text[1:]
