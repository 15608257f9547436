"""Signal primitives: resampling, SNR mixing, FIR band-limiting, energy-VAD
trimming, shoebox image-source room impulse responses and convolution.

All operations are pure functions over :class:`~convkit.core.AudioClip` and
guard the output peak at 1.0 where summation can clip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sig
from scipy.io import wavfile

from .core import AudioClip

SPEED_OF_SOUND = 343.0

# Telephone-channel band-limit defaults used by the assembler.
TELEPHONE_CUTOFF_HZ = 3400.0
TELEPHONE_TRANSITION_HZ = 300.0
TELEPHONE_STOP_DB = 60.0


def _peak_guard(samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale down to unit peak if needed; returns (samples, applied gain)."""
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak > 1.0:
        return samples / peak, 1.0 / peak
    return samples, 1.0


@dataclass(frozen=True)
class FilterDesign:
    cutoff_hz: float
    transition_hz: float
    attenuation_db: float
    sample_rate: int


@dataclass(frozen=True)
class FirFilter:
    """Linear-phase FIR filter; odd tap count gives an integer group delay."""

    taps: np.ndarray
    design: FilterDesign

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if len(taps) % 2 != 1:
            raise ValueError("tap count must be odd")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        taps = taps.copy()
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room geometry for image-source simulation.

    ``max_order`` of None lets the generator pick the reflection order from
    the expected decay depth.
    """

    dimensions: tuple[float, float, float]
    absorption: float
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    max_order: int | None = None
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if any(d <= 0 for d in self.dimensions):
            raise ValueError("room dimensions must be positive")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError("absorption must be in (0, 1]")
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            for coord, dim in zip(pos, self.dimensions):
                if not 0.0 < coord < dim:
                    raise ValueError(f"{name} position must be strictly inside the room")
        if self.max_order is not None and self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface_area(self) -> float:
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def sabine_rt60(self) -> float:
        return 0.161 * self.volume / (self.surface_area * self.absorption)


@dataclass(frozen=True)
class VadParams:
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    energy_floor_db: float = -35.0  # relative to the loudest frame
    hangover_frames: int = 3

    def __post_init__(self):
        if not self.frame_ms >= self.hop_ms > 0:
            raise ValueError("require frame_ms >= hop_ms > 0")
        if self.hangover_frames < 0:
            raise ValueError("hangover_frames must be >= 0")


@dataclass(frozen=True)
class MixResult:
    clip: AudioClip
    noise_gain: float
    peak_gain: float


@dataclass(frozen=True)
class TrimResult:
    clip: AudioClip
    trimmed_lead: float
    trimmed_tail: float


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    Output length is round(n * target / source); content below 0.45x the
    lower of the two rates is preserved within 0.5 dB.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    if len(clip) == 0:
        return AudioClip(np.zeros(0), target_rate)
    source_rate = clip.sample_rate
    g = math.gcd(source_rate, target_rate)
    up, down = target_rate // g, source_rate // g
    # Kaiser prototype: passband to 0.45*fs_min, stopband from 0.55*fs_min.
    fs_min = min(source_rate, target_rate)
    nyq_up = source_rate * up / 2.0
    numtaps, beta = sig.kaiserord(60.0, 0.10 * fs_min / nyq_up)
    taps = sig.firwin(numtaps | 1, 0.5 * fs_min / nyq_up, window=("kaiser", beta))
    out = sig.resample_poly(clip.samples, up, down, window=taps)
    n_out = round(len(clip) * target_rate / source_rate)
    if len(out) > n_out:
        out = out[:n_out]
    elif len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    out, _ = _peak_guard(out)
    return AudioClip(out, target_rate)


def mix_at_snr(
    signal: AudioClip, noise: AudioClip, snr_db: float, loop_noise: bool = False
) -> MixResult:
    """Add noise scaled so the signal-to-noise power ratio equals ``snr_db``.

    The sum is peak-normalized only when it exceeds 1; both applied gains are
    reported in the result.
    """
    if signal.sample_rate != noise.sample_rate:
        raise ValueError("signal and noise sample rates differ")
    n = len(signal)
    noise_samples = noise.samples
    if len(noise_samples) < n:
        if not loop_noise:
            raise ValueError("noise shorter than signal (set loop_noise to tile)")
        reps = -(-n // len(noise_samples))
        noise_samples = np.tile(noise_samples, reps)
    noise_samples = noise_samples[:n]
    p_signal = float(np.mean(signal.samples**2))
    p_noise = float(np.mean(noise_samples**2))
    if p_signal <= 0.0 or p_noise <= 0.0:
        raise ValueError("zero power input")
    noise_gain = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = signal.samples + noise_gain * noise_samples
    mixed, peak_gain = _peak_guard(mixed)
    return MixResult(AudioClip(mixed, signal.sample_rate), noise_gain, peak_gain)


def design_lowpass(
    cutoff: float, transition: float, attenuation_db: float, sample_rate: int
) -> FirFilter:
    """Kaiser-windowed sinc low-pass: passband to ``cutoff``, stopband from
    ``cutoff + transition`` at ``attenuation_db`` down."""
    if cutoff <= 0 or transition <= 0:
        raise ValueError("cutoff and transition must be positive")
    if cutoff + transition >= sample_rate / 2.0:
        raise ValueError(
            f"infeasible design: cutoff+transition {cutoff + transition} Hz "
            f"reaches Nyquist ({sample_rate / 2} Hz)"
        )
    numtaps, beta = sig.kaiserord(attenuation_db, transition / (0.5 * sample_rate))
    taps = sig.firwin(
        numtaps | 1, cutoff + transition / 2.0, window=("kaiser", beta), fs=sample_rate
    )
    return FirFilter(taps, FilterDesign(cutoff, transition, attenuation_db, sample_rate))


def design_highpass(
    cutoff: float, transition: float, attenuation_db: float, sample_rate: int
) -> FirFilter:
    """High-pass counterpart of :func:`design_lowpass` (passband from ``cutoff``,
    stopband below ``cutoff - transition``)."""
    if cutoff - transition <= 0:
        raise ValueError("infeasible design: stopband edge below 0 Hz")
    numtaps, beta = sig.kaiserord(attenuation_db, transition / (0.5 * sample_rate))
    taps = sig.firwin(
        numtaps | 1,
        cutoff - transition / 2.0,
        window=("kaiser", beta),
        pass_zero=False,
        fs=sample_rate,
    )
    return FirFilter(taps, FilterDesign(cutoff, transition, attenuation_db, sample_rate))


def apply_fir(clip: AudioClip, fir: FirFilter) -> AudioClip:
    """Filter with group-delay compensation; output aligned, same length."""
    if len(clip) == 0:
        return clip
    full = sig.fftconvolve(clip.samples, fir.taps, mode="full")
    d = fir.group_delay
    out = full[d : d + len(clip)]
    out, _ = _peak_guard(out)
    return AudioClip(out, clip.sample_rate)


def _frame_rms(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(samples) - frame_len) // hop
    csum = np.concatenate(([0.0], np.cumsum(samples**2)))
    starts = np.arange(n_frames) * hop
    energy = csum[starts + frame_len] - csum[starts]
    return np.sqrt(np.maximum(energy, 0.0) / frame_len)


def trim_silence(clip: AudioClip, params: VadParams = VadParams()) -> TrimResult:
    """Remove leading/trailing low-energy frames; interior silence is untouched.

    The threshold is relative to the loudest frame, so any clip with actual
    speech keeps it; an all-quiet clip raises.
    """
    fs = clip.sample_rate
    frame_len = int(round(params.frame_ms / 1000.0 * fs))
    hop = int(round(params.hop_ms / 1000.0 * fs))
    if len(clip) < frame_len:
        raise ValueError("clip shorter than one analysis frame")
    rms = _frame_rms(clip.samples, frame_len, hop)
    peak_rms = float(np.max(rms))
    if peak_rms < 1e-8:
        raise ValueError("no speech detected (all-silent clip)")
    threshold = peak_rms * 10.0 ** (params.energy_floor_db / 20.0)
    speech = rms >= threshold
    first = int(np.argmax(speech))
    last = len(speech) - 1 - int(np.argmax(speech[::-1]))
    start = max(0, first - params.hangover_frames) * hop
    end = min(len(clip), (last + params.hangover_frames) * hop + frame_len)
    trimmed = clip.samples[start:end]
    return TrimResult(
        AudioClip(trimmed, fs),
        trimmed_lead=start / fs,
        trimmed_tail=(len(clip) - end) / fs,
    )


def _image_source(
    dims: np.ndarray,
    src: np.ndarray,
    mic: np.ndarray,
    reflect_rate: float,
    max_order: int,
    fs: int,
    c: float,
) -> np.ndarray:
    """Allen-Berkley image sum for uniform walls; ``reflect_rate`` is
    -ln(energy reflection coefficient), i.e. amplitude beta = exp(-rate/2)."""
    beta = math.exp(-reflect_rate / 2.0)
    n_half = (max_order + 1) // 2
    n = np.arange(-n_half, n_half + 1)
    deltas = []
    hits = []
    for i in range(3):
        coords = np.concatenate([src[i] + 2 * n * dims[i], -src[i] + 2 * n * dims[i]])
        h = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
        deltas.append(coords - mic[i])
        hits.append(h.astype(np.int64))
    order = (
        hits[0][:, None, None] + hits[1][None, :, None] + hits[2][None, None, :]
    )
    mask = order <= max_order
    d2 = (
        deltas[0][:, None, None] ** 2
        + deltas[1][None, :, None] ** 2
        + deltas[2][None, None, :] ** 2
    )
    dist = np.sqrt(d2[mask])
    amp = beta ** order[mask] / (4.0 * np.pi * np.maximum(dist, 1e-9))
    idx = np.round(dist / c * fs).astype(np.int64)
    h = np.zeros(int(idx.max()) + 1)
    np.add.at(h, idx, amp)
    return h


def estimate_rt60(
    rir: AudioClip | np.ndarray,
    sample_rate: int | None = None,
    fit_range_db: tuple[float, float] = (-5.0, -25.0),
    skip_direct: bool = True,
) -> float:
    """RT60 from backward-integrated (Schroeder) energy decay, fitted over
    ``fit_range_db`` and extrapolated to -60 dB.

    By default the direct-path impulse is excluded so the estimate reflects
    the reverberant tail even when source and mic sit close together.
    """
    if isinstance(rir, AudioClip):
        samples, fs = rir.samples, rir.sample_rate
    else:
        if sample_rate is None:
            raise ValueError("sample_rate required for raw arrays")
        samples, fs = np.asarray(rir, dtype=np.float64), sample_rate
    if skip_direct and len(samples) > 1:
        samples = samples[int(np.argmax(np.abs(samples))) + 1 :]
    energy = samples**2
    if not np.any(energy > 0):
        raise ValueError("impulse response has no energy")
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-30))
    lo, hi = fit_range_db
    i_lo = int(np.argmax(edc_db <= lo))
    i_hi = int(np.argmax(edc_db <= hi))
    if i_hi <= i_lo + 2:
        raise ValueError("decay range too short for the requested fit window")
    t = np.arange(len(samples)) / fs
    coeffs = np.polyfit(t[i_lo:i_hi], edc_db[i_lo:i_hi], 1)
    slope = coeffs[0]
    if slope >= 0:
        raise ValueError("energy decay is not decreasing")
    return -60.0 / slope


def generate_rir(
    room: RoomSpec, sample_rate: int, calibrate: bool = True
) -> AudioClip:
    """Shoebox image-source impulse response.

    The direct-path impulse lands at round(distance/c * fs). With
    ``calibrate`` (default) the wall reflectivity is iteratively adjusted so
    the broadband Schroeder decay matches the room's Sabine RT60; specular
    image structure, delays and 1/(4*pi*d) spreading are untouched. With
    ``calibrate=False`` the raw physical mapping beta = sqrt(1 - absorption)
    is used.
    """
    dims = np.asarray(room.dimensions, dtype=np.float64)
    src = np.asarray(room.source_pos, dtype=np.float64)
    mic = np.asarray(room.mic_pos, dtype=np.float64)
    c = room.speed_of_sound
    direct = float(np.linalg.norm(src - mic))
    if direct < 1e-6:
        raise ValueError("degenerate geometry: source and mic coincide")

    if room.absorption >= 1.0 or room.max_order == 0:
        h = np.zeros(int(round(direct / c * sample_rate)) + 1)
        h[-1] = 1.0 / (4.0 * np.pi * direct)
        h, _ = _peak_guard(h)
        return AudioClip(h, sample_rate)

    rate = -math.log(1.0 - room.absorption)
    t_target = room.sabine_rt60()

    def order_for(g: float) -> int:
        if room.max_order is not None:
            return room.max_order
        # L1 order cap truncates every direction at the same attenuation depth
        depth_db = 50.0
        return min(int(math.ceil(depth_db * math.log(10.0) / (10.0 * g))) + 1, 90)

    h = _image_source(dims, src, mic, rate, order_for(rate), sample_rate, c)
    if calibrate:
        for _ in range(5):
            try:
                measured = estimate_rt60(h, sample_rate)
            except ValueError:
                break
            ratio = measured / t_target
            if abs(ratio - 1.0) < 0.03:
                break
            rate *= ratio
            h = _image_source(dims, src, mic, rate, order_for(rate), sample_rate, c)
    h, _ = _peak_guard(h)
    return AudioClip(h, sample_rate)


def random_room(rng: np.random.Generator) -> RoomSpec:
    """Draw a small-room far-field RoomSpec: dims in [3,8]x[3,8]x[2.5,4] m,
    absorption in [0.2,0.6], source/mic at least 0.5 m from every wall and
    at least 1 m apart (far-field capture)."""
    dims = (rng.uniform(3.0, 8.0), rng.uniform(3.0, 8.0), rng.uniform(2.5, 4.0))
    absorption = float(rng.uniform(0.2, 0.6))
    src = tuple(rng.uniform(0.5, d - 0.5) for d in dims)
    while True:
        mic = tuple(rng.uniform(0.5, d - 0.5) for d in dims)
        if float(np.linalg.norm(np.subtract(src, mic))) >= 1.0:
            break
    return RoomSpec(dims, absorption, src, mic)


def convolve(clip: AudioClip, rir: AudioClip, method: str = "auto") -> AudioClip:
    """Full linear convolution (length n+m-1), peak-guarded.

    ``method`` picks the path: "direct", "fft", or "auto" (fft for long
    inputs). Both paths agree within 1e-6.
    """
    if clip.sample_rate != rir.sample_rate:
        raise ValueError("sample rates differ")
    if method == "auto":
        method = "fft" if len(clip) + len(rir) > 4096 else "direct"
    if method == "direct":
        out = np.convolve(clip.samples, rir.samples, mode="full")
    elif method == "fft":
        out = sig.fftconvolve(clip.samples, rir.samples, mode="full")
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    out, _ = _peak_guard(out)
    return AudioClip(out, clip.sample_rate)


def read_wav(path) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV files are supported")
    if data.dtype == np.int16:
        samples = np.clip(data.astype(np.float64) / 32767.0, -1.0, 1.0)
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a mono WAV file as float32 or 16-bit PCM."""
    if encoding == "float32":
        wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))
    elif encoding == "pcm16":
        scaled = np.clip(np.round(clip.samples * 32767.0), -32767, 32767)
        wavfile.write(path, clip.sample_rate, scaled.astype(np.int16))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
