"""MFCC feature images for the spectrogram model.

Pipeline per clip: Hann-windowed frames -> power spectrum -> triangular mel
filterbank (HTK mel scale) -> floored log -> orthonormal DCT-II. The three
image channels are the coefficients, their regression deltas, and the deltas
of the deltas.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.signal import decimate as _decimate
from scipy.signal import get_window

from .errors import GestaltFuseError


class ClipTooShort(GestaltFuseError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono samples in [-1, 1]. Multi-channel input (frames x channels) is downmixed by mean."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 2:
            x = x.mean(axis=1)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("samples must be a non-empty 1-D or (frames, channels) array")
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1.0:
            raise ValueError("samples must be finite and within [-1, 1]")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz < 8000:
            raise ValueError(f"sample_rate_hz must be an integer >= 8000, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def read_wav(path: Path | str) -> AudioClip:
    """Read 8/16/32-bit PCM or 32-bit float WAV."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    return AudioClip(x, rate)


def write_wav(path: Path | str, clip: AudioClip, subtype: str = "pcm16") -> None:
    if subtype == "pcm16":
        data = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    elif subtype == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(path, clip.sample_rate_hz, data)


def decimate(clip: AudioClip, factor: int) -> AudioClip:
    """Integer-factor downsampling with an anti-alias filter."""
    if factor == 1:
        return clip
    y = _decimate(clip.samples, factor, ftype="fir", zero_phase=True)
    return AudioClip(np.clip(y, -1.0, 1.0), clip.sample_rate_hz // factor)


@dataclass(frozen=True)
class DspConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    n_mfcc: int = 13
    fmin_hz: float = 20.0
    fmax_hz: float | None = None  # None -> min(8000, rate / 2)
    log_floor: float = 1e-10
    delta_window: int = 2

    def __post_init__(self):
        if not self.frame_ms > self.hop_ms > 0:
            raise ValueError("need frame_ms > hop_ms > 0")
        if not 1 <= self.n_mfcc <= self.n_mels:
            raise ValueError("need 1 <= n_mfcc <= n_mels")
        if self.delta_window < 1 or not self.log_floor > 0:
            raise ValueError("delta_window and log_floor must be positive")

    def frame_length(self, rate: int) -> int:
        return int(round(self.frame_ms * rate / 1000.0))

    def hop_length(self, rate: int) -> int:
        return int(round(self.hop_ms * rate / 1000.0))

    def dft_size(self, rate: int) -> int:
        return 1 << max(0, (self.frame_length(rate) - 1).bit_length())

    def band(self, rate: int) -> tuple[float, float]:
        fmax = min(8000.0, rate / 2.0) if self.fmax_hz is None else float(self.fmax_hz)
        if not self.fmin_hz < fmax <= rate / 2.0:
            raise ValueError(f"need fmin < fmax <= rate/2, got {self.fmin_hz}, {fmax}, rate {rate}")
        return float(self.fmin_hz), fmax


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_edges_hz(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """``n_mels + 2`` band edges equally spaced on the mel scale; centres are ``[1:-1]``."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels: int, dft_size: int, rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters with unit peak, shape ``(n_mels, dft_size // 2 + 1)``."""
    edges = mel_edges_hz(n_mels, fmin, fmax)
    freqs = np.arange(dft_size // 2 + 1) * rate / dft_size
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (centre - lo)
    falling = (hi - freqs[None, :]) / (hi - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def n_frames(n_samples: int, frame_length: int, hop_length: int) -> int:
    if n_samples < frame_length:
        return 0
    return 1 + (n_samples - frame_length) // hop_length


def power_spectrogram(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """``|DFT|^2`` of Hann-windowed frames, shape ``(dft_size // 2 + 1, n_frames)``."""
    rate = clip.sample_rate_hz
    flen, hop, nfft = cfg.frame_length(rate), cfg.hop_length(rate), cfg.dft_size(rate)
    if clip.samples.size < flen:
        raise ClipTooShort(f"clip has {clip.samples.size} samples, one frame needs {flen}")
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, flen)[::hop]
    spectrum = np.fft.rfft(frames * get_window("hann", flen), n=nfft, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def mel_energies(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Mel filterbank energies before the log, shape ``(n_mels, n_frames)``."""
    rate = clip.sample_rate_hz
    fmin, fmax = cfg.band(rate)
    fb = mel_filterbank(cfg.n_mels, cfg.dft_size(rate), rate, fmin, fmax)
    return fb @ power_spectrogram(clip, cfg)


def mfcc(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Cepstral coefficients, shape ``(n_mfcc, n_frames)``."""
    log_mel = np.log(np.maximum(mel_energies(clip, cfg), cfg.log_floor))
    return dct(log_mel, type=2, norm="ortho", axis=0)[: cfg.n_mfcc]


def delta(coeffs: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression delta along time (axis 1) with edge-replicated padding."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise ValueError("delta needs a non-empty 2-D matrix")
    if window < 1:
        raise ValueError("window must be >= 1")
    steps = c.shape[1]
    padded = np.pad(c, ((0, 0), (window, window)), mode="edge")
    out = np.zeros_like(c)
    for n in range(1, window + 1):
        out += n * (padded[:, window + n : window + n + steps] - padded[:, window - n : window - n + steps])
    return out / (2.0 * sum(n * n for n in range(1, window + 1)))


@dataclass(frozen=True, eq=False)
class FeatureImage:
    """Three normalised channels (MFCC, delta, delta-delta), each ``(n_mfcc, n_frames)``.

    Normalisation is min-max per channel and coefficient row over time:
    ``channels = (raw - offsets[..., None]) / ranges[..., None]``. Rows that do not
    vary over time have ``range == 0`` and are set to 0.5.
    """

    channels: np.ndarray
    offsets: np.ndarray
    ranges: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]


def raw_channels(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Un-normalised ``(3, n_mfcc, n_frames)`` stack of MFCC, delta and delta-delta."""
    c0 = mfcc(clip, cfg)
    c1 = delta(c0, cfg.delta_window)
    c2 = delta(c1, cfg.delta_window)
    return np.stack([c0, c1, c2])


def normalize_channels(raw: np.ndarray) -> FeatureImage:
    lo = raw.min(axis=2)
    span = raw.max(axis=2) - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = (raw - lo[..., None]) / safe[..., None]
    scaled = np.where(span[..., None] > 0, scaled, 0.5)
    return FeatureImage(np.clip(scaled, 0.0, 1.0), lo, span)


def feature_image(clip: AudioClip, cfg: DspConfig = DspConfig()) -> FeatureImage:
    return normalize_channels(raw_channels(clip, cfg))


def save_feature_image(img: FeatureImage, out_dir: Path | str, stem: str, cfg: DspConfig, meta: dict | None = None) -> list[Path]:
    """Write ``<stem>_c{0,1,2}.npy`` plus a ``<stem>.json`` sidecar; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(3):
        p = out_dir / f"{stem}_c{i}.npy"
        np.save(p, img.channels[i].astype(np.float64))
        paths.append(p)
    sidecar = {
        "dsp_config": asdict(cfg),
        "shape": list(img.shape),
        "normalization": {
            "method": "minmax_per_channel_row",
            "offsets": img.offsets.tolist(),
            "ranges": img.ranges.tolist(),
        },
    }
    if meta:
        sidecar.update(meta)
    p = out_dir / f"{stem}.json"
    p.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def rms(clip: AudioClip) -> float:
    x = clip.samples
    return math.sqrt(math.fsum(x * x) / x.size)
