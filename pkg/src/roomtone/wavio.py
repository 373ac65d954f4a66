"""WAV file I/O: 16-bit PCM or 32-bit float, mono or stereo, no resampling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile


class WavError(ValueError):
    pass


@dataclass(frozen=True)
class WavSpec:
    sample_rate: int
    channels: int = 2
    encoding: str = "float32"     # or "pcm16"

    def __post_init__(self):
        if self.channels not in (1, 2):
            raise WavError("only mono and stereo WAV files are supported")
        if self.encoding not in ("float32", "pcm16"):
            raise WavError(f"unsupported encoding {self.encoding!r}")


def read_wav(path, expected_rate=None):
    """Read ``path``; returns (frames x channels float64 samples, WavSpec).

    16-bit data is scaled by 1/32768. With ``expected_rate`` set, a file at
    any other rate is an error.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.io.wavfile.WavFileWarning)
            rate, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise WavError(f"{path}: malformed WAV file ({exc})") from None
    if data.dtype == np.int16:
        samples, enc = data.astype(np.float64) / 32768.0, "pcm16"
    elif data.dtype == np.float32:
        samples, enc = data.astype(np.float64), "float32"
    else:
        raise WavError(f"{path}: unsupported encoding {data.dtype} "
                       "(need 16-bit PCM or 32-bit float)")
    if samples.ndim == 1:
        samples = samples[:, None]
    spec = WavSpec(int(rate), samples.shape[1], enc)
    if expected_rate is not None and int(rate) != int(expected_rate):
        raise WavError(f"{path}: sample rate {rate} Hz does not match session rate "
                       f"{int(expected_rate)} Hz")
    return samples, spec


def write_wav(path, samples, spec):
    """Write frames x channels (or 1-D mono) ``samples``."""
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != spec.channels:
        raise WavError(f"samples have {x.shape[1]} channels, spec says {spec.channels}")
    if not np.all(np.isfinite(x)):
        raise WavError("refusing to write non-finite samples")
    if spec.encoding == "float32":
        data = x.astype(np.float32)
    else:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    if spec.channels == 1:
        data = data[:, 0]
    scipy.io.wavfile.write(path, int(spec.sample_rate), data)
