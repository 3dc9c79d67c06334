"""WAV ingestion and magnitude spectrograms."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_FFT_SIZE = 256
DEFAULT_HOP = 128
DEFAULT_FLOOR = 1e-8


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("audio must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


def load_wav(path, expected_rate=None) -> AudioBuffer:
    """Read a 16-bit PCM mono WAV file with samples scaled to [-1, 1).

    ``expected_rate`` enables strict mode: a file at any other rate is an
    error. No resampling is ever done.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comp = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"{path}: unreadable WAV file ({exc})") from exc
    if n_channels != 1:
        raise ValueError(f"{path}: unsupported channel count {n_channels}")
    if width != 2 or comp != "NONE":
        raise ValueError(f"{path}: unsupported encoding, need 16-bit PCM")
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expected_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())


def hann_window(n):
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def compute_spectrogram(audio, fft_size=DEFAULT_FFT_SIZE, hop=DEFAULT_HOP,
                        floor=DEFAULT_FLOOR):
    """Floored STFT magnitude, shape ``(fft_size // 2 + 1, n_frames)``.

    ``audio`` is an :class:`AudioBuffer` or a 1-D sample array.
    """
    samples = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, float)
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if not floor > 0:
        raise ValueError("floor must be positive")
    if samples.size < fft_size:
        raise ValueError(
            f"audio has {samples.size} samples, shorter than one frame ({fft_size})"
        )
    n_frames = 1 + (samples.size - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * hann_window(fft_size)
    mag = np.abs(np.fft.rfft(frames, axis=1)).T
    return np.maximum(mag, floor)
