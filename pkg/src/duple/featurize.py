"""Hand-crafted statistics and log-magnitude spectrograms.

The 26-value descriptor (13 time-domain, 13 spectral) feeds the guidance
network; the spectrogram feeds the frequency-domain encoder.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_LENGTH = 64
FRAME = 256
HIST_BINS = 16
LOG_FLOOR = 1e-6
STD_FLOOR = 1e-8
BAND_EDGES = (0.0, 0.05, 0.15, 0.35, 1.0)  # fractions of Nyquist

FEATURE_NAMES = (
    "mean", "std", "skewness", "kurtosis", "rms", "peak_abs", "peak_to_peak",
    "crest_factor", "zero_crossing_rate", "mean_abs_dev", "hist_entropy",
    "frame_energy_var", "autocorr_lag1",
    "spectral_centroid", "spectral_bandwidth", "rolloff_85", "spectral_flatness",
    "dominant_freq", "dominant_peak_ratio", "spectral_entropy",
    "band_ratio_0", "band_ratio_1", "band_ratio_2", "band_ratio_3",
    "spectral_skewness", "spectral_kurtosis",
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 26


@dataclass(frozen=True)
class StatVector:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"StatVector needs {N_FEATURES} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("StatVector values must be finite")

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # (frames, bins)
    window: int
    hop: int
    sample_rate: float

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def _safe_div(a, b):
    return a / b if b > 0 else 0.0


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _time_features(x: np.ndarray) -> list[float]:
    n = x.size
    mu = x.mean()
    d = x - mu
    var = float(np.mean(d * d))
    std = np.sqrt(var)
    skew = _safe_div(float(np.mean(d ** 3)), std ** 3)
    kurt = _safe_div(float(np.mean(d ** 4)), var * var) - 3.0 if var > 0 else 0.0
    rms = float(np.sqrt(np.mean(x * x)))
    peak = float(np.max(np.abs(x)))
    p2p = float(x.max() - x.min())
    crest = _safe_div(peak, rms)
    zcr = float(np.count_nonzero(x[:-1] * x[1:] < 0)) / (n - 1)
    mad = float(np.mean(np.abs(d)))
    if p2p > 0:
        counts, _ = np.histogram(x, bins=HIST_BINS, range=(x.min(), x.max()))
        hist_ent = _entropy(counts / n)
    else:
        hist_ent = 0.0
    frame = min(FRAME, n)
    nframes = n // frame
    energies = (x[: nframes * frame].reshape(nframes, frame) ** 2).mean(axis=1)
    frame_var = float(energies.var())
    ac1 = _safe_div(float(np.sum(d[:-1] * d[1:])), float(np.sum(d * d)))
    return [mu, std, skew, kurt, rms, peak, p2p, crest, zcr, mad, hist_ent, frame_var, ac1]


def _spectral_features(x: np.ndarray, sample_rate: float) -> list[float]:
    n = x.size
    mag = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    power = mag * mag
    msum = mag.sum()
    psum = power.sum()
    if msum <= 0:
        return [0.0] * 13
    w = mag / msum
    centroid = float((freqs * w).sum())
    dev = freqs - centroid
    bw2 = float((dev * dev * w).sum())
    bandwidth = np.sqrt(bw2)
    cum = np.cumsum(mag)
    rolloff = float(freqs[np.searchsorted(cum, 0.85 * cum[-1])])
    # floor relative to the peak keeps flatness scale-invariant
    pf = np.maximum(power, 1e-12 * power.max())
    flatness = float(np.exp(np.mean(np.log(pf))) / np.mean(pf))
    k = int(np.argmax(mag))
    dominant = float(freqs[k])
    peak_ratio = float(power[k] / psum)
    pn = power / psum
    spec_ent = _entropy(pn) / np.log(pn.size) if pn.size > 1 else 0.0
    # bin k sits at 2k/n of Nyquist; computed from k directly so the Nyquist bin is exactly 1.0
    frac = 2.0 * np.arange(mag.size) / n
    band = np.searchsorted(np.asarray(BAND_EDGES[1:-1]), frac, side="right")
    bands = [float(power[band == i].sum() / psum) for i in range(4)]
    sskew = _safe_div(float((dev ** 3 * w).sum()), bw2 ** 1.5)
    skurt = _safe_div(float((dev ** 4 * w).sum()), bw2 * bw2)
    return [centroid, bandwidth, rolloff, min(flatness, 1.0), dominant, peak_ratio,
            float(spec_ent), *bands, sskew, skurt]


def stat_features(samples, sample_rate: float) -> StatVector:
    """Compute the 26 statistics listed in ``FEATURE_NAMES``."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < MIN_LENGTH:
        raise ValueError(f"signal too short for statistics: {x.size} < {MIN_LENGTH}")
    vals = np.array(_time_features(x) + _spectral_features(x, sample_rate), dtype=np.float64)
    return StatVector(vals)


def stft_logmag(samples, window: int = 256, hop: int = 128, sample_rate: float = 1000.0) -> Spectrogram:
    """Hann-windowed STFT without padding; cells are ln(|X| + 1e-6)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if window < 1 or window & (window - 1):
        raise ValueError(f"window must be a power of two, got {window}")
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    if window > x.size:
        raise ValueError(f"window {window} longer than signal {x.size}")
    frames = (x.size - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(frames)[:, None]
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)
    mag = np.abs(np.fft.rfft(x[idx] * hann, axis=1))
    return Spectrogram(np.log(mag + LOG_FLOOR), window, hop, sample_rate)


@dataclass(frozen=True)
class StatNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, s) -> StatVector:
        v = s.values if isinstance(s, StatVector) else np.asarray(s, dtype=np.float64)
        return StatVector((v - self.mean) / self.std, normalized=True)

    def apply_matrix(self, m: np.ndarray) -> np.ndarray:
        return (np.asarray(m) - self.mean) / self.std


def fit_normalizer(stats) -> StatNormalizer:
    """Population mean/std per feature; std floored at 1e-8."""
    m = np.array([s.values if isinstance(s, StatVector) else s for s in stats], dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("fit_normalizer needs at least 2 vectors")
    return StatNormalizer(m.mean(axis=0), np.maximum(m.std(axis=0), STD_FLOOR))


def apply_normalizer(n: StatNormalizer, s) -> StatVector:
    return n.apply(s)
