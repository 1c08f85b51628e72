"""Synthetic I/Q frame generation for the ten modulation classes.

The received baseband waveform follows the usual impaired single-carrier
model: unit-energy symbols with per-symbol phase jitter are pulse shaped with
a root-raised-cosine filter, passed through a short multipath channel,
delayed by a fraction of a symbol, rotated by a carrier offset and phase,
scaled, and finally buried in circular white Gaussian noise.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import LabeledDataset, ModType

DIGITAL_BITS = {
    ModType.BPSK: 1,
    ModType.QPSK: 2,
    ModType.PSK8: 3,
    ModType.QAM16: 4,
    ModType.QAM64: 6,
    ModType.BFSK: 1,
    ModType.CPFSK: 1,
    ModType.PAM4: 2,
}

RRC_ROLLOFF = 0.35
RRC_SPAN = 8


def _gray_inverse(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.int64).copy()
    out = g.copy()
    shift = g >> 1
    while np.any(shift):
        out ^= shift
        shift >>= 1
    return out


def _gray_pam_levels(bits_per_axis: int) -> np.ndarray:
    """Amplitude level for each Gray-coded index on one axis, e.g. -3,-1,1,3."""
    m = 1 << bits_per_axis
    pos = _gray_inverse(np.arange(m))
    return (2 * pos - (m - 1)).astype(float)


def _build_constellations() -> dict[ModType, np.ndarray]:
    tables = {}
    tables[ModType.BPSK] = np.array([1.0 + 0j, -1.0 + 0j])
    lv = _gray_pam_levels(1)
    idx = np.arange(4)
    tables[ModType.QPSK] = (-lv[idx >> 1] - 1j * lv[idx & 1]) / math.sqrt(2)
    tables[ModType.PSK8] = np.exp(2j * np.pi * _gray_inverse(np.arange(8)) / 8)
    for mod, b in ((ModType.QAM16, 2), (ModType.QAM64, 3)):
        lv = _gray_pam_levels(b)
        idx = np.arange(1 << (2 * b))
        pts = lv[idx >> b] + 1j * lv[idx & ((1 << b) - 1)]
        tables[mod] = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pam = _gray_pam_levels(2)
    tables[ModType.PAM4] = (pam / np.sqrt(np.mean(pam**2))).astype(complex)
    # frequency tokens: -1 selects the lower tone, +1 the upper one
    tables[ModType.BFSK] = np.array([-1.0 + 0j, 1.0 + 0j])
    tables[ModType.CPFSK] = np.array([-1.0 + 0j, 1.0 + 0j])
    return tables


CONSTELLATIONS = _build_constellations()


@dataclass(frozen=True)
class ChannelParams:
    amplitude: float = 1.0
    cfo: float = 0.0
    phase: float = 0.0
    jitter_sigma: float = 0.0
    timing_offset: float = 0.0
    taps: tuple[complex, ...] = (1.0 + 0j,)
    rolloff: float = RRC_ROLLOFF

    def __post_init__(self) -> None:
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        if not 0.0 <= self.timing_offset < 1.0:
            raise ValueError("timing_offset must lie in [0, 1)")
        if len(self.taps) < 1:
            raise ValueError("taps must contain at least one coefficient")
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in (0, 1]")
        h = np.asarray(self.taps, dtype=complex)
        energy = float(np.sum(np.abs(h) ** 2))
        if energy == 0:
            raise ValueError("taps must have nonzero energy")
        object.__setattr__(self, "taps", tuple(complex(t) for t in h / math.sqrt(energy)))


@dataclass(frozen=True)
class ChannelRanges:
    """Per-waveform randomization ranges for :class:`ChannelParams`."""

    amplitude: tuple[float, float] = (0.5, 1.5)
    cfo_max: float = 5e-4
    phase: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    jitter_sigma: float = 0.02
    timing_offset: tuple[float, float] = (0.0, 1.0)
    max_taps: int = 3
    echo_scale: float = 0.3
    rolloff: float = RRC_ROLLOFF

    def draw(self, rng: np.random.Generator) -> ChannelParams:
        n_taps = int(rng.integers(1, self.max_taps + 1))
        echoes = self.echo_scale * (rng.standard_normal(n_taps - 1) + 1j * rng.standard_normal(n_taps - 1)) / math.sqrt(2)
        taps = (1.0 + 0j,) + tuple(complex(e) for e in echoes)
        lo, hi = self.timing_offset
        eps = float(rng.uniform(lo, hi))
        eps = min(eps, math.nextafter(1.0, 0.0))
        return ChannelParams(
            amplitude=float(rng.uniform(*self.amplitude)),
            cfo=float(rng.uniform(-self.cfo_max, self.cfo_max)),
            phase=float(rng.uniform(*self.phase)),
            jitter_sigma=self.jitter_sigma,
            timing_offset=eps,
            taps=taps,
            rolloff=self.rolloff,
        )


@dataclass(frozen=True)
class GenConfig:
    d: int = 128
    shift: int = 64
    sps: int = 8
    snr_grid: tuple[int, ...] = tuple(range(-20, 20, 2))
    frames_per_class_per_snr: int = 100
    frames_per_waveform: int = 4
    seed: int = 0
    channel: ChannelRanges = field(default_factory=ChannelRanges)
    classes: tuple[ModType, ...] = tuple(ModType)

    def validate(self) -> None:
        if self.d < 1 or self.sps < 2:
            raise ValueError("d must be >= 1 and sps >= 2")
        if not 1 <= self.shift <= self.d:
            raise ValueError("shift must lie in [1, d]")
        if not self.snr_grid:
            raise ValueError("snr_grid must be non-empty")
        if any(b <= a for a, b in zip(self.snr_grid, self.snr_grid[1:])):
            raise ValueError("snr_grid must be strictly increasing")
        if self.frames_per_class_per_snr < 0 or self.frames_per_waveform < 1:
            raise ValueError("frame counts must be positive")
        if not self.classes:
            raise ValueError("at least one class is required")

    @property
    def waveform_len(self) -> int:
        return self.d + (self.frames_per_waveform - 1) * self.shift


def map_symbols(levels, mod: ModType) -> np.ndarray:
    """Map symbol indices (``0 .. 2**bits - 1``) to unit-energy symbols."""
    mod = ModType(mod)
    if mod.is_analog:
        raise ValueError(f"{mod.name} is analog and has no symbol alphabet")
    idx = np.asarray(levels)
    if idx.size and (not np.issubdtype(idx.dtype, np.integer)):
        raise ValueError("symbol indices must be integers")
    table = CONSTELLATIONS[mod]
    if idx.size and (idx.min() < 0 or idx.max() >= len(table)):
        raise ValueError(f"symbol index outside the {len(table)}-point alphabet of {mod.name}")
    return table[idx.astype(np.int64)]


def rrc_taps(sps: int, rolloff: float = RRC_ROLLOFF, span: int = RRC_SPAN) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response, ``span*sps + 1`` taps."""
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1.0 - b + 4 * b / np.pi
        elif abs(abs(ti) - 1 / (4 * b)) < 1e-12:
            h[i] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            h[i] = num / (np.pi * ti * (1 - (4 * b * ti) ** 2))
    return h / np.sqrt(np.sum(h**2))


def _fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    if delay == 0:
        return x
    n = len(x)
    nfft = 1 << int(math.ceil(math.log2(n + 2 * int(math.ceil(delay)) + 16)))
    spec = np.fft.fft(x, nfft)
    f = np.fft.fftfreq(nfft)
    return np.fft.ifft(spec * np.exp(-2j * np.pi * f * delay))[:n]


def _jitter(n_blocks: int, sigma: float, rng: np.random.Generator | None) -> np.ndarray:
    if sigma == 0:
        return np.ones(n_blocks, dtype=complex)
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.exp(1j * rng.normal(0.0, sigma, n_blocks))


def _channel(wave: np.ndarray, params: ChannelParams, sps: int) -> np.ndarray:
    """Multipath, fractional timing offset, carrier offset/phase and gain."""
    out = np.convolve(wave, np.asarray(params.taps, dtype=complex))
    out = _fractional_delay(out, params.timing_offset * sps)
    n = np.arange(len(out))
    return params.amplitude * np.exp(1j * (2 * np.pi * params.cfo * n + params.phase)) * out


def shape_and_impair(symbols, params: ChannelParams, sps: int, rng: np.random.Generator | None = None) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size == 0:
        raise ValueError("symbols must be non-empty")
    if sps < 2:
        raise ValueError("sps must be at least 2")
    jittered = symbols * _jitter(len(symbols), params.jitter_sigma, rng)
    up = np.zeros(len(symbols) * sps, dtype=complex)
    up[::sps] = jittered
    shaped = np.convolve(up, rrc_taps(sps, params.rolloff))
    return _channel(shaped, params, sps)


def fsk_waveform(tokens, sps: int, continuous: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Binary FSK with tones at +-1/(2 sps): CPFSK keeps phase, BFSK switches oscillators."""
    tokens = np.real(np.asarray(tokens)).astype(float)
    freqs = np.repeat(tokens, sps) / (2 * sps)
    if continuous:
        phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(freqs[:-1])])
        return np.exp(1j * phase)
    rng = rng if rng is not None else np.random.default_rng(0)
    offsets = rng.uniform(0, 2 * np.pi, 2)
    n = np.arange(len(freqs))
    which = (tokens > 0).astype(int).repeat(sps)
    return np.exp(1j * (2 * np.pi * freqs * n + offsets[which]))


def analog_source(n: int, sps: int, rng: np.random.Generator, n_tones: int = 8) -> np.ndarray:
    """Band-limited surrogate voice: random tones below 1/(2 sps) with silent interludes."""
    t = np.arange(n)
    freqs = rng.uniform(0.05, 1.0, n_tones) / (2 * sps)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    amps = rng.uniform(0.3, 1.0, n_tones)
    src = (amps[:, None] * np.cos(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    src /= np.max(np.abs(src))
    for _ in range(int(rng.integers(0, 3))):
        length = int(rng.uniform(0.1, 0.4) * n)
        start = int(rng.integers(0, max(1, n - length)))
        src[start:start + length] = 0.0
    if not np.any(src):
        src[0] = 1.0
    return src


FM_DEVIATION = 0.5  # peak deviation as a fraction of 1/(2 sps)


def synth_analog(mod: ModType, duration_samples: int, params: ChannelParams, seed=0, sps: int = 8,
                 source: np.ndarray | None = None) -> np.ndarray:
    mod = ModType(mod)
    if not mod.is_analog:
        raise ValueError(f"{mod.name} is not an analog modulation")
    rng = np.random.default_rng(seed)
    if source is None:
        source = analog_source(duration_samples, sps, rng)
    source = np.asarray(source, dtype=float)
    if mod is ModType.WBFM:
        dev = FM_DEVIATION / (2 * sps)
        base = np.exp(1j * 2 * np.pi * dev * np.concatenate([[0.0], np.cumsum(source[:-1])]))
    else:
        base = source.astype(complex)
    blocks = int(math.ceil(len(base) / sps))
    base = base * np.repeat(_jitter(blocks, params.jitter_sigma, rng), sps)[: len(base)]
    return _channel(base, params, sps)


def add_noise(waveform, snr_db: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Circular white Gaussian noise at ``snr_db`` relative to this waveform's power."""
    x = np.asarray(waveform, dtype=complex)
    power = float(np.mean(np.abs(x) ** 2)) if x.size else 0.0
    if power == 0:
        raise ValueError("cannot reference noise to a zero-energy waveform")
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    rng = rng if rng is not None else np.random.default_rng()
    var = power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + noise * math.sqrt(var / 2)


def frame_windows(waveform, d: int, shift: int) -> np.ndarray:
    """Slide a length-``d`` window with step ``shift``; returns ``(n, 2, d)`` float frames."""
    x = np.asarray(waveform)
    if not 1 <= shift <= d:
        raise ValueError("shift must lie in [1, d]")
    if len(x) < d:
        raise ValueError(f"waveform of length {len(x)} is shorter than the frame width {d}")
    count = (len(x) - d) // shift + 1
    starts = np.arange(count) * shift
    win = x[starts[:, None] + np.arange(d)]
    return np.stack([win.real, win.imag], axis=1)


def synth_waveform(mod: ModType, length: int, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """One clean (pre-noise) impaired waveform of exactly ``length`` samples."""
    params = cfg.channel.draw(rng)
    sps = cfg.sps
    if mod.is_analog:
        wave = synth_analog(mod, length + 2 * sps, params, seed=rng, sps=sps)
        return wave[sps: sps + length]
    nsym = int(math.ceil(length / sps)) + RRC_SPAN + 2
    alphabet = len(CONSTELLATIONS[mod])
    symbols = map_symbols(rng.integers(0, alphabet, nsym), mod)
    if mod in (ModType.BFSK, ModType.CPFSK):
        base = fsk_waveform(symbols, sps, continuous=mod is ModType.CPFSK, rng=rng)
        base = base * np.repeat(_jitter(nsym, params.jitter_sigma, rng), sps)
        wave = _channel(base, params, sps)
        return wave[sps: sps + length]
    wave = shape_and_impair(symbols, params, sps, rng)
    start = RRC_SPAN * sps
    return wave[start: start + length]


def _generate_cell(args) -> tuple[np.ndarray, np.ndarray]:
    cfg, mod, snr = args
    n_frames = cfg.frames_per_class_per_snr
    length = cfg.waveform_len
    noisy_frames, clean_frames = [], []
    produced, w = 0, 0
    while produced < n_frames:
        # counter-based seed: independent of worker layout
        rng = np.random.default_rng([cfg.seed, int(mod), snr + 1000, w])
        clean = synth_waveform(mod, length, cfg, rng)
        noisy = add_noise(clean, snr, rng)
        take = min(cfg.frames_per_waveform, n_frames - produced)
        noisy_frames.append(frame_windows(noisy, cfg.d, cfg.shift)[:take])
        clean_frames.append(frame_windows(clean, cfg.d, cfg.shift)[:take])
        produced += take
        w += 1
    if not noisy_frames:
        empty = np.zeros((0, 2, cfg.d))
        return empty, empty
    return np.concatenate(noisy_frames), np.concatenate(clean_frames)


def generate_dataset(cfg: GenConfig, workers: int = 1, keep_clean: bool = False) -> LabeledDataset:
    cfg.validate()
    cells = [(cfg, ModType(m), int(s)) for m in cfg.classes for s in cfg.snr_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_cell, cells))
    else:
        results = [_generate_cell(c) for c in cells]
    n = cfg.frames_per_class_per_snr
    x = np.concatenate([r[0] for r in results]).astype(np.float32) if results else np.zeros((0, 2, cfg.d), np.float32)
    labels = np.repeat([int(c[1]) for c in cells], n)
    snr = np.repeat([c[2] for c in cells], n)
    bandwidth = (1 + cfg.channel.rolloff) / (2 * cfg.sps)
    meta = {
        "gen_config": {k: v for k, v in asdict(cfg).items() if k not in ("channel", "classes")},
        "channel_ranges": asdict(cfg.channel),
        "occupied_bandwidth_ratio": bandwidth,
        "sampling_over_nyquist": 1.0 / (2 * bandwidth),
    }
    clean = np.concatenate([r[1] for r in results]).astype(np.float32) if keep_clean and results else None
    return LabeledDataset(x, labels, snr, meta, clean)
