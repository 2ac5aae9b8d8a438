"""Spectral frontend and inverse: STFT, 80-band log-mel analysis, and
Griffin-Lim phase reconstruction.

Analysis settings are fully pinned so outputs are bit-reproducible:
22050 Hz, n_fft 1024, hop 256, periodic Hann window, reflect center
padding, HTK mel scale, natural-log mel values floored at 1e-5.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, FormatError, InputError

LOG_FLOOR = 1e-5


@dataclass
class DspConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2
    griffin_lim_iterations: int = 60

    def resolved_fmax(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax


@dataclass
class AudioSignal:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("audio samples must be finite")
        self.samples = np.clip(self.samples, -1.0, 1.0)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """frames: (T, n_mels) natural-log mel energies, floored at log(1e-5)."""

    frames: np.ndarray
    hop: int
    sample_rate: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise InputError(f"mel frames must be 2-D, got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


@dataclass
class MelFilterbank:
    """Triangular mel filters; weights has shape (n_mels, n_fft // 2 + 1)."""

    weights: np.ndarray
    fmin: float
    fmax: float
    sample_rate: int
    n_fft: int
    _pinv: np.ndarray = field(default=None, repr=False, compare=False)

    def pseudo_inverse(self) -> np.ndarray:
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.weights)
        return self._pinv


def _require_pow2(n_fft: int):
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ConfigurationError(f"n_fft must be a power of two, got {n_fft}")


def fft(x, inverse=False):
    """Radix-2 DFT along the last axis (power-of-two length)."""
    x = np.asarray(x)
    _require_pow2(x.shape[-1])
    return kernels.fft_radix2(np.ascontiguousarray(x, dtype=np.complex128), inverse)


def hann_window(n: int) -> np.ndarray:
    # periodic form, so squared windows overlap-add to a constant at hop n/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def stft(signal: AudioSignal, n_fft: int, hop: int) -> np.ndarray:
    """Complex spectrogram, shape (floor(len/hop) + 1, n_fft//2 + 1).

    Frames are taken from a reflect-padded copy of the signal (pad n_fft/2
    on each side) and windowed with a periodic Hann window.
    """
    _require_pow2(n_fft)
    if not 0 < hop <= n_fft:
        raise ConfigurationError(f"hop must satisfy 0 < hop <= n_fft, got {hop}")
    x = signal.samples
    pad = n_fft // 2
    if len(x) <= pad:
        raise InputError(f"signal too short for n_fft={n_fft}: {len(x)} samples")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = len(x) // hop + 1
    frames = np.empty((n_frames, n_fft), dtype=np.float64)
    for t in range(n_frames):
        frames[t] = xp[t * hop : t * hop + n_fft]
    frames *= hann_window(n_fft)
    spec = kernels.fft_radix2(frames.astype(np.complex128))
    return spec[:, : n_fft // 2 + 1]


def istft(spec: np.ndarray, n_fft: int, hop: int, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of stft(); returns raw (unclipped) samples."""
    _require_pow2(n_fft)
    n_frames, bins = spec.shape
    if bins != n_fft // 2 + 1:
        raise ConfigurationError(f"expected {n_fft // 2 + 1} bins, got {bins}")
    full = np.empty((n_frames, n_fft), dtype=np.complex128)
    full[:, :bins] = spec
    full[:, bins:] = np.conj(spec[:, -2:0:-1])
    frames = kernels.fft_radix2(full, inverse=True).real
    win = hann_window(n_fft)
    frames *= win

    pad = n_fft // 2
    total = (n_frames - 1) * hop + n_fft
    acc = np.zeros(total)
    wsum = np.zeros(total)
    wsq = win * win
    for t in range(n_frames):
        acc[t * hop : t * hop + n_fft] += frames[t]
        wsum[t * hop : t * hop + n_fft] += wsq
    good = wsum > 1e-11
    acc[good] /= wsum[good]
    out = acc[pad : total - pad]
    if length is not None:
        if len(out) < length:
            out = np.pad(out, (0, length - len(out)))
        else:
            out = out[:length]
    return out


def mel_filterbank(
    n_fft: int,
    n_mels: int,
    sample_rate: int,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> MelFilterbank:
    """Triangular filters on n_mels + 2 equally mel-spaced points, HTK scale,
    no area normalization."""
    if fmax is None:
        fmax = sample_rate / 2.0
    if n_mels < 2:
        raise ConfigurationError(f"n_mels must be >= 2, got {n_mels}")
    if fmax <= fmin:
        raise ConfigurationError(f"fmax ({fmax}) must exceed fmin ({fmin})")
    _require_pow2(n_fft)

    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights, fmin, fmax, sample_rate, n_fft)


_FB_CACHE: dict[tuple, MelFilterbank] = {}


def _filterbank_for(cfg: DspConfig) -> MelFilterbank:
    key = (cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.resolved_fmax())
    fb = _FB_CACHE.get(key)
    if fb is None:
        fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)
        _FB_CACHE[key] = fb
    return fb


def mel_spectrogram(signal: AudioSignal, cfg: DspConfig | None = None) -> MelSpectrogram:
    """log(max(filterbank X |stft|, 1e-5)), deterministic for a given input."""
    cfg = cfg or DspConfig()
    spec = stft(signal, cfg.n_fft, cfg.hop)
    mag = np.abs(spec)
    fb = _filterbank_for(cfg)
    energy = mag @ fb.weights.T
    return MelSpectrogram(np.log(np.maximum(energy, LOG_FLOOR)), cfg.hop, cfg.sample_rate)


def spectral_convergence(target_mag: np.ndarray, mag: np.ndarray) -> float:
    denom = np.linalg.norm(target_mag)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(target_mag - mag) / denom)


def griffin_lim(
    mel: MelSpectrogram,
    iterations: int = 60,
    cfg: DspConfig | None = None,
    convergence_every: int = 0,
):
    """Reconstruct a waveform from a log-mel spectrogram.

    Linear magnitudes come from the filterbank pseudo-inverse (clamped at 0);
    phase starts at zero and is refined by ISTFT/STFT magnitude substitution.
    The result is peak-normalized to 0.95 unless it is essentially silence.
    When convergence_every > 0, also returns the spectral-convergence error
    sampled every that-many iterations.
    """
    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}")
    cfg = cfg or DspConfig()
    cfg = DspConfig(
        sample_rate=mel.sample_rate,
        n_fft=cfg.n_fft,
        hop=mel.hop,
        n_mels=mel.n_mels,
        fmin=cfg.fmin,
        fmax=cfg.fmax,
    )
    fb = _filterbank_for(cfg)
    linear = np.exp(mel.frames)
    mag = np.maximum(linear @ fb.pseudo_inverse().T, 0.0)  # (T, bins)

    # pad very short spectrograms so the ISTFT output survives re-analysis
    out_frames = mag.shape[0]
    min_frames = cfg.n_fft // (2 * cfg.hop) + 2
    if mag.shape[0] < min_frames:
        mag = np.vstack([mag, np.zeros((min_frames - mag.shape[0], mag.shape[1]))])

    spec = mag.astype(np.complex128)
    history = []
    for it in range(iterations):
        x = istft(spec, cfg.n_fft, cfg.hop)
        rebuilt = stft(_raw_signal(x, cfg.sample_rate), cfg.n_fft, cfg.hop)
        rebuilt = rebuilt[: mag.shape[0]]
        if convergence_every and it % convergence_every == 0:
            history.append(spectral_convergence(mag, np.abs(rebuilt)))
        phase = rebuilt / np.maximum(np.abs(rebuilt), 1e-16)
        spec = mag[: rebuilt.shape[0]] * phase
    x = istft(spec, cfg.n_fft, cfg.hop, length=out_frames * cfg.hop)

    peak = float(np.abs(x).max()) if len(x) else 0.0
    if peak >= 1e-3:
        x = x * (0.95 / peak)
    out = AudioSignal(np.clip(x, -1.0, 1.0), cfg.sample_rate)
    if convergence_every:
        return out, history
    return out


def _raw_signal(samples: np.ndarray, sample_rate: int) -> AudioSignal:
    # bypass the [-1, 1] clipping: intermediate Griffin-Lim iterates may
    # legitimately exceed the final output range
    sig = object.__new__(AudioSignal)
    sig.samples = np.asarray(samples, dtype=np.float64)
    sig.sample_rate = sample_rate
    return sig


# ---------------------------------------------------------------------------
# file formats

MEL_MAGIC = b"MEL1"


def save_mel(mel: MelSpectrogram, path):
    """MEL1: magic, u32 T, u32 n_mels, u32 sample_rate, u32 hop, f32 rows."""
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<IIII", mel.n_frames, mel.n_mels, mel.sample_rate, mel.hop))
        f.write(np.ascontiguousarray(mel.frames, dtype="<f4").tobytes())


def load_mel(path) -> MelSpectrogram:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MEL_MAGIC:
        raise FormatError(f"bad mel magic {blob[:4]!r}", offset=0)
    if len(blob) < 20:
        raise FormatError("truncated mel header", offset=len(blob))
    t, n_mels, sample_rate, hop = struct.unpack_from("<IIII", blob, 4)
    need = 20 + 4 * t * n_mels
    if len(blob) < need:
        raise FormatError(f"truncated mel payload, need {need} bytes", offset=len(blob))
    frames = np.frombuffer(blob, dtype="<f4", count=t * n_mels, offset=20)
    return MelSpectrogram(frames.reshape(t, n_mels).astype(np.float64), hop, sample_rate)


def save_wav(signal: AudioSignal, path):
    """16-bit PCM mono RIFF."""
    pcm = np.clip(np.round(signal.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


def load_wav(path) -> AudioSignal:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise FormatError("expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioSignal(samples, rate)
