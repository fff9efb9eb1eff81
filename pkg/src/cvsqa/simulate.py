"""Synthetic CVS + ECG corpus generator with exact motion labels.

The generated signal follows the additive decomposition
``x = x_normal + x_motion`` at lumped (non-PDE) scale: the clean component
repeats a per-beat template time-warped to each RR interval, and the motion
component is a chest-velocity proxy shaped by drift and morphology gains.
Every sample inside a motion episode is labeled 0, everything else 1, so
corpora come with exact ground truth for free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .traces import DataError, SignalTrace

VELOCITY_PROFILES = ("step", "ramp", "burst")

#: Width of the moving-average kernel applied to the velocity proxy, seconds.
SMOOTHING_S = 0.1


@dataclass(frozen=True)
class MotionEpisode:
    """One contiguous interval of simulated subject motion."""

    start: float
    end: float
    profile: str = "step"
    amplitude: float = 1.0
    drift_gain: float = 1.0
    morph_gain: float = 1.0

    def __post_init__(self):
        if not (self.start < self.end):
            raise DataError("episode start must precede end")
        if self.amplitude < 0:
            raise DataError("episode amplitude must be >= 0")
        if self.profile not in VELOCITY_PROFILES:
            raise DataError(f"profile must be one of {VELOCITY_PROFILES}")


@dataclass(frozen=True)
class SimConfig:
    """Full description of one synthetic trace."""

    fs: float = 100.0
    duration: float = 60.0
    hr_mean: float = 70.0
    hr_std: float = 0.0
    template: np.ndarray | None = None  # None selects the default biphasic pulse
    template_jitter: float = 0.0
    sensor_noise_std: float = 0.0
    motion_episodes: tuple[MotionEpisode, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not (30.0 <= self.hr_mean <= 200.0):
            raise DataError("hr_mean must be within [30, 200] bpm")
        if self.hr_std < 0 or self.template_jitter < 0 or self.sensor_noise_std < 0:
            raise DataError("noise parameters must be >= 0")
        if self.duration < 2 * 60.0 / self.hr_mean:
            raise DataError("duration must cover at least 2 cardiac cycles")
        for ep in self.motion_episodes:
            if ep.start < 0 or ep.end > self.duration:
                raise DataError("motion episodes must lie within the trace")
        if self.template is not None:
            t = np.asarray(self.template, dtype=np.float64)
            if t.ndim != 1 or len(t) < 2:
                raise DataError("template must be a 1-d sequence of length >= 2")
            object.__setattr__(self, "template", t)


@dataclass(frozen=True)
class LumpedChannelConfig:
    """Optional multi-channel mode: per-channel gains plus a weighting vector.

    Channels share the cardiac component with channel-specific gains g; the
    scalar signal is recovered as w . (g * s + noise). 208 channels mirror a
    16-injection x 13-measurement electrode layout.
    """

    n_channels: int = 208
    gains: np.ndarray | None = None
    weights: np.ndarray | None = None
    channel_noise_std: float = 0.0
    seed: int = 0

    def resolve(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (gains, weights), generating defaults where unset."""
        rng = np.random.default_rng([self.seed, 208])
        g = self.gains
        if g is None:
            g = rng.uniform(0.2, 1.0, size=self.n_channels)
        g = np.asarray(g, dtype=np.float64)
        w = self.weights
        if w is None:
            w = g / float(g @ g)  # makes w . g == 1, recovering the shared component
        w = np.asarray(w, dtype=np.float64)
        if len(g) != self.n_channels or len(w) != self.n_channels:
            raise DataError("gains/weights must have n_channels entries")
        if not np.linalg.norm(w) > 0:
            raise DataError("weighting vector must be nonzero")
        return g, w


def default_cycle_template(n: int = 150) -> np.ndarray:
    """Biphasic per-beat pulse: sharp systolic upstroke, slower decay.

    Peak amplitude is 1; the waveform starts and ends near 0 so that cycle
    concatenation is continuous.
    """
    phase = np.linspace(0.0, 1.0, n)
    rise = np.exp(-0.5 * ((phase - 0.18) / 0.06) ** 2)
    decay = -0.35 * np.exp(-0.5 * ((phase - 0.52) / 0.16) ** 2)
    pulse = rise + decay
    # pin the ends so consecutive cycles join without a jump
    pulse[0] = 0.0
    pulse[-1] = 0.0
    return pulse / np.max(np.abs(pulse))


# --------------------------------------------------------------------------
# ECG
# --------------------------------------------------------------------------

#: Truncation bounds for beat intervals, seconds.
RR_BOUNDS = (0.3, 2.0)


def gen_ecg(config: SimConfig, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Generate a synthetic ECG with one dominant R spike per beat.

    Beat intervals are drawn from Normal(60/hr_mean, interval std implied by
    hr_std) and truncated to [0.3 s, 2 s]. Returns (ecg samples, exact R-peak
    times in seconds). The first peak sits at t = 0.
    """
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng([seed, 1])
    mean_rr = 60.0 / config.hr_mean
    std_rr = 60.0 * config.hr_std / config.hr_mean**2

    peaks = [0.0]
    while True:
        rr = mean_rr if std_rr == 0 else float(np.clip(rng.normal(mean_rr, std_rr), *RR_BOUNDS))
        nxt = peaks[-1] + rr
        if nxt >= config.duration:
            break
        peaks.append(nxt)
    peak_times = np.asarray(peaks, dtype=np.float64)

    n = int(round(config.duration * config.fs))
    t = np.arange(n, dtype=np.float64) / config.fs
    ecg = np.zeros(n)
    for pk in peak_times:
        lo = max(0, int((pk - 0.35) * config.fs))
        hi = min(n, int((pk + 0.45) * config.fs) + 1)
        w = t[lo:hi] - pk
        ecg[lo:hi] += np.exp(-0.5 * (w / 0.012) ** 2)  # R spike
        ecg[lo:hi] += 0.12 * np.exp(-0.5 * ((w - 0.25) / 0.05) ** 2)  # T wave
        ecg[lo:hi] += 0.08 * np.exp(-0.5 * ((w + 0.18) / 0.035) ** 2)  # P wave
    ecg += rng.normal(0.0, 0.01, size=n)
    return ecg, peak_times


# --------------------------------------------------------------------------
# Clean CVS
# --------------------------------------------------------------------------


def _cycle_phase_spans(peak_times: np.ndarray, n_samples: int, fs: float):
    """Yield (start_index, count, fractional_offset, rr) per cycle.

    Leading and trailing partial segments are covered by virtual cycles that
    reuse the adjacent RR interval, so every sample belongs to some cycle.
    """
    if len(peak_times) < 2:
        raise DataError("need at least 2 R peaks to build cycles")
    rr_first = peak_times[1] - peak_times[0]
    rr_last = peak_times[-1] - peak_times[-2]
    bounds = [peak_times[0] - rr_first, *peak_times.tolist()]
    while bounds[-1] < n_samples / fs:
        bounds.append(bounds[-1] + rr_last)
    for j in range(len(bounds) - 1):
        t_start, t_end = bounds[j], bounds[j + 1]
        s0 = max(0, int(np.ceil(t_start * fs - 1e-12)))
        s1 = min(n_samples, int(np.ceil(t_end * fs - 1e-12)))
        if s1 <= s0:
            continue
        yield s0, s1 - s0, s0 - t_start * fs, (t_end - t_start) * fs


def gen_cvs_normal(
    peak_times: np.ndarray, config: SimConfig, seed: int | None = None
) -> np.ndarray:
    """Clean CVS: the beat template time-warped to each RR interval.

    Per cycle the template is scaled by 1 + Uniform(-jitter, +jitter); white
    sensor noise is added on top. With zero jitter, zero noise, and constant
    RR the output is exactly periodic.
    """
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng([seed, 2])
    template = config.template if config.template is not None else default_cycle_template()
    tpl_x = np.linspace(0.0, 1.0, len(template))
    n = int(round(config.duration * config.fs))
    out = np.zeros(n)
    for s0, count, frac, rr_samples in _cycle_phase_spans(np.asarray(peak_times), n, config.fs):
        phase = (np.arange(count) + frac) / rr_samples
        amp = 1.0 + (rng.uniform(-config.template_jitter, config.template_jitter)
                     if config.template_jitter > 0 else 0.0)
        out[s0 : s0 + count] = amp * np.interp(phase, tpl_x, template)
    if config.sensor_noise_std > 0:
        out += rng.normal(0.0, config.sensor_noise_std, size=n)
    return out


def gen_cvs_normal_lumped(
    peak_times: np.ndarray,
    config: SimConfig,
    channels: LumpedChannelConfig,
    seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-channel variant: build per-channel conductance deltas and reduce.

    Each channel carries the shared cardiac component scaled by its gain plus
    independent channel noise; the scalar CVS is the weighted sum over
    channels. Returns (cvs, channel matrix of shape (n_samples, n_channels)).
    """
    shared = gen_cvs_normal(peak_times, config, seed)
    g, w = channels.resolve()
    rng = np.random.default_rng([channels.seed, 3])
    mat = shared[:, None] * g[None, :]
    if channels.channel_noise_std > 0:
        mat = mat + rng.normal(0.0, channels.channel_noise_std, size=mat.shape)
    return mat @ w, mat


# --------------------------------------------------------------------------
# Motion artifact
# --------------------------------------------------------------------------


def _velocity_proxy(episode: MotionEpisode, t: np.ndarray) -> np.ndarray:
    """Scalar chest-velocity proxy on the episode support, zero elsewhere."""
    inside = (t >= episode.start) & (t < episode.end)
    v = np.zeros_like(t)
    if episode.profile == "step":
        v[inside] = episode.amplitude
    elif episode.profile == "ramp":
        span = episode.end - episode.start
        v[inside] = episode.amplitude * (t[inside] - episode.start) / span
    else:  # burst: half-sine envelope, so motion waxes and wanes
        span = episode.end - episode.start
        v[inside] = episode.amplitude * np.sin(np.pi * (t[inside] - episode.start) / span)
    return v


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x.copy()
    kernel = np.full(width, 1.0 / width)
    return np.convolve(x, kernel, mode="same")


def gen_motion(
    n_samples: int,
    episodes: tuple[MotionEpisode, ...],
    config: SimConfig,
    seed: int | None = None,
) -> np.ndarray:
    """Motion artifact: drift plus morphology corruption per episode.

    artifact = drift_gain * smoothed(v) + morph_gain * v * band-limited noise,
    masked to the episode support so the artifact is exactly zero outside
    episodes (motion absent means no artifact). Overlapping episodes sum.
    """
    if seed is None:
        seed = config.seed
    t = np.arange(n_samples, dtype=np.float64) / config.fs
    width = max(1, int(round(SMOOTHING_S * config.fs)))
    out = np.zeros(n_samples)
    for k, ep in enumerate(episodes):
        if ep.end > n_samples / config.fs + 1e-9:
            raise DataError("episode extends past the trace")
        rng = np.random.default_rng([seed, 4, k])
        v = _velocity_proxy(ep, t)
        inside = (t >= ep.start) & (t < ep.end)
        drift = _moving_average(v, width)
        noise = _moving_average(rng.normal(0.0, 1.0, size=n_samples), width)
        scale = float(np.std(noise))
        if scale > 0:
            noise /= scale
        out += inside * (ep.drift_gain * drift + ep.morph_gain * v * noise)
    return out


# --------------------------------------------------------------------------
# Corpus assembly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceParts:
    """Component breakdown of one synthetic trace."""

    normal: np.ndarray
    motion: np.ndarray
    peak_times: np.ndarray


def synthesize_trace(config: SimConfig, trace_id: str) -> tuple[SignalTrace, TraceParts]:
    """Build one labeled trace: cvs = normal + motion, label 0 inside episodes."""
    ecg, peak_times = gen_ecg(config)
    normal = gen_cvs_normal(peak_times, config)
    motion = gen_motion(len(normal), config.motion_episodes, config)
    t = np.arange(len(normal), dtype=np.float64) / config.fs
    labels = np.ones(len(normal), dtype=np.int8)
    for ep in config.motion_episodes:
        labels[(t >= ep.start) & (t < ep.end)] = 0
    trace = SignalTrace(
        trace_id=trace_id, fs=config.fs, t0=0.0,
        cvs=normal + motion, ecg=ecg, labels=labels,
    )
    return trace, TraceParts(normal=normal, motion=motion, peak_times=peak_times)


def synthesize_corpus(configs: list[SimConfig], prefix: str = "trace") -> list[SignalTrace]:
    """Generate one labeled trace per config, ids ``{prefix}{index:03d}``.

    Per-trace RNG streams derive from (config seed, trace index), so the
    result does not depend on generation order or parallelism.
    """
    traces = []
    for i, cfg in enumerate(configs):
        cfg_i = replace(cfg, seed=int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0]))
        trace, _ = synthesize_trace(cfg_i, f"{prefix}{i:03d}")
        traces.append(trace)
    return traces


def benchmark_configs(
    seed: int = 0,
    n_traces: int = 20,
    duration: float = 300.0,
    motion_time_frac: float = 0.165,
) -> list[SimConfig]:
    """Deterministic benchmark corpus: HRV on, ~20% of cycles motion-labeled.

    The time budget per trace is split into 2-8 s episodes with randomized
    profile and gains; edge cycles around each episode push the cycle-level
    motion fraction above the raw time fraction, landing near 0.20.
    """
    configs = []
    for i in range(n_traces):
        rng = np.random.default_rng([seed, 7, i])
        hr = float(rng.uniform(55.0, 90.0))
        budget = motion_time_frac * duration
        episodes = []
        guard = 2.0
        attempts = 0
        while budget > 1.0 and attempts < 200:
            attempts += 1
            length = float(rng.uniform(2.0, min(8.0, max(2.1, budget))))
            start = float(rng.uniform(5.0, duration - length - 5.0))
            if any(start < ep.end + guard and ep.start - guard < start + length for ep in episodes):
                continue
            episodes.append(MotionEpisode(
                start=start,
                end=start + length,
                profile=VELOCITY_PROFILES[int(rng.integers(len(VELOCITY_PROFILES)))],
                amplitude=float(rng.uniform(0.8, 2.5)),
                drift_gain=float(rng.uniform(0.5, 1.5)),
                morph_gain=float(rng.uniform(0.5, 1.5)),
            ))
            budget -= length
        configs.append(SimConfig(
            fs=100.0,
            duration=duration,
            hr_mean=hr,
            hr_std=2.5,
            template_jitter=0.05,
            sensor_noise_std=0.02,
            motion_episodes=tuple(sorted(episodes, key=lambda e: e.start)),
            seed=int(np.random.SeedSequence([seed, 8, i]).generate_state(1)[0]),
        ))
    return configs


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------

DEFAULT_CONFIG_TEXT = """\
# Synthetic corpus configuration.
# Top level: n_traces plus a `base` mapping applied to every trace.
n_traces: 4
base:
  fs: 100.0               # sampling rate, Hz
  duration: 60.0          # trace length, seconds
  hr_mean: 70.0           # mean heart rate, bpm (30..200)
  hr_std: 2.0             # heart-rate variability, bpm (0 disables)
  template_jitter: 0.05   # relative per-cycle amplitude noise (uniform +-)
  sensor_noise_std: 0.02  # additive white noise std
  seed: 0                 # master seed; per-trace streams derive from it
  # Each motion episode corrupts [start, end) seconds of the trace.
  # profile: step | ramp | burst, amplitude >= 0 scales the velocity proxy,
  # drift_gain shapes the baseline wander, morph_gain the waveform breakup.
  motion_episodes:
    - {start: 20.0, end: 26.0, profile: step, amplitude: 1.5, drift_gain: 1.0, morph_gain: 1.0}
    - {start: 40.0, end: 44.0, profile: burst, amplitude: 2.0, drift_gain: 0.8, morph_gain: 1.2}
"""


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(DEFAULT_CONFIG_TEXT)


def load_sim_configs(path: str | Path) -> list[SimConfig]:
    """Parse a YAML corpus config into per-trace SimConfigs."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "base" not in raw:
        raise DataError("config must be a mapping with a 'base' section")
    n = int(raw.get("n_traces", 1))
    base = dict(raw["base"])
    episodes = tuple(
        MotionEpisode(**ep) for ep in base.pop("motion_episodes", []) or []
    )
    cfg = SimConfig(motion_episodes=episodes, **base)
    return [cfg] * n
