"""Signal files, dataset manifests, length normalization and the synthetic
multi-deployment generator."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

MAGIC = b"DFOS"
DEFAULT_LENGTH = 4096
DEFAULT_SAMPLE_RATE = 1000.0
RECORD_FIELDS = ("path", "class", "domain", "sample_rate")
HEADER_FIELDS = ("target_length",)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SignalRecord:
    samples: np.ndarray
    sample_rate: float
    class_id: str
    domain_id: str
    source_path: str = ""

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValueError(f"{self.source_path or 'record'}: empty signal")
        if not self.sample_rate > 0:
            raise ValueError(f"{self.source_path or 'record'}: sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"{self.source_path or 'record'}: non-finite samples")


@dataclass(frozen=True)
class RecordRef:
    """A manifest entry: where a signal lives and how it is labelled."""

    path: Path
    class_id: str
    domain_id: str
    sample_rate: float


@dataclass
class DatasetManifest:
    records: list[RecordRef]
    classes: list[str]
    domains: list[str]
    target_length: int = DEFAULT_LENGTH

    def __post_init__(self):
        if self.target_length <= 0:
            raise ManifestError("target_length must be positive")
        cs, ds = set(self.classes), set(self.domains)
        for r in self.records:
            if r.class_id not in cs or r.domain_id not in ds:
                raise ManifestError(f"{r.path}: label outside the manifest's class/domain sets")

    def __len__(self):
        return len(self.records)

    def load(self, i: int) -> SignalRecord:
        r = self.records[i]
        return SignalRecord(read_signal(r.path), r.sample_rate, r.class_id, r.domain_id, str(r.path))

    def class_index(self) -> np.ndarray:
        lut = {c: i for i, c in enumerate(self.classes)}
        return np.array([lut[r.class_id] for r in self.records], dtype=np.int64)

    def domain_index(self) -> np.ndarray:
        lut = {d: i for i, d in enumerate(self.domains)}
        return np.array([lut[r.domain_id] for r in self.records], dtype=np.int64)


# signal files

def write_signal(path, samples, binary: bool = True):
    path = Path(path)
    x = np.asarray(samples, dtype=np.float64)
    if binary:
        path.write_bytes(MAGIC + struct.pack("<I", x.size) + x.astype("<f4").tobytes())
    else:
        path.write_text("".join(f"{v:.9g}\n" for v in x))


def read_signal(path) -> np.ndarray:
    """Load a signal file, detecting the binary format by its magic bytes."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        if len(raw) < 8:
            raise ValueError(f"{path}: truncated header")
        (n,) = struct.unpack("<I", raw[4:8])
        if len(raw) != 8 + 4 * n:
            raise ValueError(f"{path}: header says {n} samples, payload has {(len(raw) - 8) / 4:g}")
        return np.frombuffer(raw, dtype="<f4", offset=8).astype(np.float64)
    values = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return np.asarray(values, dtype=np.float64)


# manifests

def load_manifest(path) -> DatasetManifest:
    """Parse a JSON-lines manifest.

    An optional first line ``{"target_length": L}`` sets the resampling
    length; every other line is one record with exactly the fields
    path, class, domain, sample_rate. Relative paths resolve against the
    manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    base = path.parent
    records, target_length = [], DEFAULT_LENGTH
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{where}: malformed entry ({e.msg})") from None
        if not isinstance(entry, dict):
            raise ManifestError(f"{where}: malformed entry (expected an object)")
        if set(entry) <= set(HEADER_FIELDS) and entry:
            tl = entry["target_length"]
            if not isinstance(tl, int) or tl <= 0:
                raise ManifestError(f"{where}: target_length must be a positive integer")
            target_length = tl
            continue
        unknown = sorted(set(entry) - set(RECORD_FIELDS))
        if unknown:
            raise ManifestError(f"{where}: unknown field {unknown[0]!r}")
        missing = [f for f in RECORD_FIELDS if f not in entry]
        if missing:
            raise ManifestError(f"{where}: missing field {missing[0]!r}")
        try:
            sr = float(entry["sample_rate"])
        except (TypeError, ValueError):
            raise ManifestError(f"{where}: sample_rate is not a number") from None
        if not sr > 0:
            raise ManifestError(f"{where}: sample_rate must be positive")
        fpath = Path(entry["path"])
        if not fpath.is_absolute():
            fpath = base / fpath
        if not fpath.is_file():
            raise ManifestError(f"{where}: signal file not found: {fpath}")
        records.append(RecordRef(fpath, str(entry["class"]), str(entry["domain"]), sr))
    if not records:
        raise ManifestError(f"{path}: empty manifest")
    classes = sorted({r.class_id for r in records})
    domains = sorted({r.domain_id for r in records})
    return DatasetManifest(records, classes, domains, target_length)


def write_manifest(manifest: DatasetManifest, path):
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps({"target_length": manifest.target_length})]
    for r in manifest.records:
        p = Path(r.path).resolve()
        rel = p.relative_to(base) if p.is_relative_to(base) else p
        lines.append(json.dumps({"path": rel.as_posix(), "class": r.class_id,
                                 "domain": r.domain_id, "sample_rate": r.sample_rate}))
    path.write_text("\n".join(lines) + "\n")


def resample_to_length(samples, length: int) -> np.ndarray:
    """Linear interpolation onto ``length`` points spanning the same [0, 1] index range."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if length < 1:
        raise ValueError(f"target length must be >= 1, got {length}")
    if x.size == length:
        return x.copy()
    return np.interp(np.linspace(0.0, 1.0, length), np.linspace(0.0, 1.0, x.size), x)


# synthetic benchmark

ENVELOPES = ("decay", "gauss", "box")


@dataclass(frozen=True)
class EventParams:
    """Class-specific event template: enveloped tone bursts."""

    burst_rate: float  # bursts per second
    f_lo: float
    f_hi: float
    envelope: str = "gauss"
    burst_duration: float = 0.1  # seconds
    mode_shift: float = 1.0  # >1: half the signals use a band scaled by this and bursts shortened by it


@dataclass(frozen=True)
class DomainShift:
    """Deployment response: gain, band-pass coupling and sensor noise."""

    gain: float
    band_lo: float
    band_hi: float
    snr_db: float


_BASE_EVENTS = (
    EventParams(2.0, 30.0, 90.0, "decay", 0.1, 2.0),
    EventParams(3.0, 40.0, 120.0, "gauss", 0.1, 1.8),
    EventParams(4.0, 50.0, 150.0, "box", 0.06, 1.6),
)
_BASE_DOMAINS = (
    DomainShift(1.0, 20.0, 200.0, 3.0),
    DomainShift(4.0, 60.0, 400.0, 0.0),
    DomainShift(0.25, 10.0, 120.0, 6.0),
)


@dataclass
class SynthConfig:
    n_classes: int = 3
    n_domains: int = 3
    per_cell: int = 60
    length: int = DEFAULT_LENGTH
    sample_rate: float = DEFAULT_SAMPLE_RATE
    seed: int = 222
    events: list[EventParams] = field(default_factory=list)
    domains: list[DomainShift] = field(default_factory=list)

    def __post_init__(self):
        self.events = [e if isinstance(e, EventParams) else EventParams(**e) for e in self.events]
        self.domains = [d if isinstance(d, DomainShift) else DomainShift(**d) for d in self.domains]
        if not self.events:
            self.events = default_events(self.n_classes, self.sample_rate)
        if not self.domains:
            self.domains = default_domains(self.n_domains, self.sample_rate)
        self.validate()

    def validate(self):
        if min(self.n_classes, self.n_domains, self.per_cell, self.length) < 1:
            raise ValueError("class, domain, per-cell and length counts must all be >= 1")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if len(self.events) != self.n_classes:
            raise ValueError(f"{len(self.events)} event templates for {self.n_classes} classes")
        if len(self.domains) != self.n_domains:
            raise ValueError(f"{len(self.domains)} domain shifts for {self.n_domains} domains")
        nyq = self.sample_rate / 2
        for i, e in enumerate(self.events):
            if not 0 < e.f_lo < e.f_hi < nyq:
                raise ValueError(f"class {i}: band ({e.f_lo}, {e.f_hi}) not inside (0, {nyq})")
            if e.envelope not in ENVELOPES:
                raise ValueError(f"class {i}: unknown envelope {e.envelope!r}")
            if e.burst_rate < 0 or e.burst_duration <= 0 or e.mode_shift < 1:
                raise ValueError(f"class {i}: burst rate/duration out of range")
        for i, d in enumerate(self.domains):
            if not 0 < d.band_lo < d.band_hi < nyq:
                raise ValueError(f"domain {i}: band ({d.band_lo}, {d.band_hi}) not inside (0, {nyq})")
            if not math.isfinite(d.snr_db):
                raise ValueError(f"domain {i}: SNR must be finite")
            if d.gain < 0:
                raise ValueError(f"domain {i}: negative gain")

    def to_dict(self) -> dict:
        return asdict(self)


def default_events(n: int, sample_rate: float = DEFAULT_SAMPLE_RATE) -> list[EventParams]:
    scale = sample_rate / DEFAULT_SAMPLE_RATE
    out = []
    for i in range(n):
        b = _BASE_EVENTS[i % 3]
        k = i // 3
        out.append(EventParams(b.burst_rate * (1 + 0.5 * k), b.f_lo * scale * (1 + 0.2 * k),
                               b.f_hi * scale * (1 + 0.2 * k), b.envelope, b.burst_duration / (1 + 0.3 * k),
                               b.mode_shift))
    return out


def default_domains(n: int, sample_rate: float = DEFAULT_SAMPLE_RATE) -> list[DomainShift]:
    scale = sample_rate / DEFAULT_SAMPLE_RATE
    out = []
    for i in range(n):
        b = _BASE_DOMAINS[i % 3]
        k = i // 3
        out.append(DomainShift(b.gain * (1.5 ** k), b.band_lo * scale, b.band_hi * scale / (1 + 0.15 * k),
                               b.snr_db - 2.0 * k))
    return out


def class_name(i: int) -> str:
    return f"c{i:02d}"


def domain_name(i: int) -> str:
    return f"d{i:02d}"


def signal_rng(seed: int, domain: int, cls: int, instance: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, domain, cls, instance]))


def _envelope(kind: str, n: int) -> np.ndarray:
    t = np.arange(n) / max(n - 1, 1)
    if kind == "decay":
        return np.exp(-5.0 * t)
    if kind == "gauss":
        return np.exp(-0.5 * ((t - 0.5) / 0.18) ** 2)
    ramp = max(1, n // 8)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return env


def event_template(ev: EventParams, length: int, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    duration = length / sample_rate
    shift = ev.mode_shift if rng.random() < 0.5 else 1.0
    f_lo, f_hi = ev.f_lo * shift, min(ev.f_hi * shift, 0.45 * sample_rate)
    n_bursts = max(1, int(rng.poisson(ev.burst_rate * duration)))
    x = np.zeros(length)
    for _ in range(n_bursts):
        dur = ev.burst_duration / shift * rng.uniform(0.8, 1.2)
        n = max(2, int(round(dur * sample_rate)))
        onset = int(rng.integers(0, length))
        f = rng.uniform(f_lo, f_hi)
        amp = rng.uniform(0.6, 1.4)
        phase = rng.uniform(0.0, 2 * np.pi)
        t = np.arange(n) / sample_rate
        burst = amp * _envelope(ev.envelope, n) * np.sin(2 * np.pi * f * t + phase)
        end = min(length, onset + n)
        x[onset:end] += burst[: end - onset]
    return x


def apply_domain(x: np.ndarray, dom: DomainShift, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Gain, then a bilinear-transform 2nd-order band-pass, then white noise at the target SNR."""
    b, a = sps.butter(1, [dom.band_lo, dom.band_hi], btype="bandpass", fs=sample_rate)
    y = dom.gain * sps.lfilter(b, a, x)
    power = float(np.mean(y * y))
    noise_std = math.sqrt(power / 10 ** (dom.snr_db / 10)) if power > 0 else 0.0
    return y + noise_std * rng.standard_normal(x.size)


def synth_signal(cfg: SynthConfig, domain: int, cls: int, instance: int) -> np.ndarray:
    rng = signal_rng(cfg.seed, domain, cls, instance)
    x = event_template(cfg.events[cls], cfg.length, cfg.sample_rate, rng)
    return apply_domain(x, cfg.domains[domain], cfg.sample_rate, rng)


def synth_generate(cfg: SynthConfig, out_dir, binary: bool = True) -> DatasetManifest:
    """Materialize every (domain, class, instance) signal plus ``manifest.jsonl``."""
    cfg.validate()
    out_dir = Path(out_dir)
    records = []
    for d in range(cfg.n_domains):
        for c in range(cfg.n_classes):
            cell = out_dir / domain_name(d) / class_name(c)
            cell.mkdir(parents=True, exist_ok=True)
            for i in range(cfg.per_cell):
                p = cell / f"{i:04d}.{'dfos' if binary else 'txt'}"
                write_signal(p, synth_signal(cfg, d, c, i), binary=binary)
                records.append(RecordRef(p, class_name(c), domain_name(d), float(cfg.sample_rate)))
    manifest = DatasetManifest(records, [class_name(c) for c in range(cfg.n_classes)],
                               [domain_name(d) for d in range(cfg.n_domains)], cfg.length)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    (out_dir / "synth_config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1))
    return manifest
