"""Temporal mode matching of the two readout channels.

Frequency-domain convention: ``x[w] = sum_t x(t) exp(-i w t) dt`` (numpy's FFT
sign), for which the cavity and amplifier responses below are causal.  Rates
are angular (rad/s), times in seconds.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2 * np.pi
DEFAULT_DT = 2e-9  # 500 MS/s AWG
DEFAULT_N = 2**14
REGULARIZATION = 1e-6
SUPPORT_FRACTION = 1e-9


class IllConditionedError(ValueError):
    """Spectral division hit the regularization floor inside the target support."""


@dataclass(frozen=True)
class CavityParams:
    kappa: float
    chi: float
    eta: float = 1.0

    def violations(self, prefix: str) -> list[tuple[str, str]]:
        out = []
        if not self.kappa > 0:
            out.append((f"{prefix}.kappa_hz", "must be > 0"))
        if self.chi == 0:
            out.append((f"{prefix}.chi_hz", "must be non-zero"))
        if not 0 < self.eta <= 1:
            out.append((f"{prefix}.eta", "must lie in (0, 1]"))
        return out


@dataclass(frozen=True)
class JpcChannel:
    gain: float = 1.0
    kappa_jpc: float = TWO_PI * 10e6
    delta: float = 0.0

    def violations(self, prefix: str) -> list[tuple[str, str]]:
        out = []
        if not self.kappa_jpc > 0:
            out.append((f"{prefix}.kappa_hz", "must be > 0"))
        if not self.gain > 0:
            out.append((f"{prefix}.gain", "must be > 0"))
        return out


@dataclass(frozen=True)
class EnvelopeSpec:
    amplitude: float = 1.0
    t_slew: float = 80e-9
    t_duration: float = 800e-9

    def violations(self, prefix: str) -> list[tuple[str, str]]:
        out = []
        if not self.t_slew > 0:
            out.append((f"{prefix}.t_slew_ns", "must be > 0"))
        if not self.t_duration > 0:
            out.append((f"{prefix}.t_duration_ns", "must be > 0"))
        return out


DEVICE_ALICE = CavityParams(kappa=TWO_PI * 5.1e6, chi=TWO_PI * 3.8e6, eta=0.53)
DEVICE_BOB = CavityParams(kappa=TWO_PI * 3.8e6, chi=TWO_PI * 1.8e6, eta=0.42)
DEVICE_ENVELOPE = EnvelopeSpec()


@dataclass(frozen=True)
class ComplexWaveform:
    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.samples) < 2:
            raise ValueError("waveform needs at least two samples")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    @property
    def omega(self) -> np.ndarray:
        return frequency_grid(len(self.samples), self.dt)

    def spectrum(self) -> np.ndarray:
        return np.fft.fft(self.samples) * self.dt

    def with_samples(self, samples: np.ndarray) -> "ComplexWaveform":
        return ComplexWaveform(np.asarray(samples, dtype=complex), self.dt, self.t0)

    def scaled(self, factor: complex) -> "ComplexWaveform":
        return self.with_samples(self.samples * factor)


def time_grid(n: int = DEFAULT_N, dt: float = DEFAULT_DT) -> np.ndarray:
    """Symmetric time axis with t = 0 at index n // 2."""
    return (np.arange(n) - n // 2) * dt


def frequency_grid(n: int, dt: float) -> np.ndarray:
    return TWO_PI * np.fft.fftfreq(n, dt)


def from_spectrum(spec: np.ndarray, like: ComplexWaveform) -> ComplexWaveform:
    return like.with_samples(np.fft.ifft(spec) / like.dt)


def cavity_alpha(omega: np.ndarray, cavity: CavityParams, drive_spectrum: np.ndarray, qubit_state: str) -> np.ndarray:
    """Cavity field spectrum for the qubit in ``"g"`` or ``"e"``, driven mid-way between the peaks."""
    if qubit_state == "g":
        detune = -cavity.chi / 2
    elif qubit_state == "e":
        detune = cavity.chi / 2
    else:
        raise ValueError("qubit_state must be 'g' or 'e'")
    return (cavity.kappa * drive_spectrum / 2) / (-cavity.kappa / 2 + 1j * (detune - omega))


def jpc_transfer(omega: np.ndarray, ch: JpcChannel) -> np.ndarray:
    """One-pole amplifier response, equal to the gain at zero offset."""
    num = ch.kappa_jpc / 2 + 1j * ch.delta
    return ch.gain * num / (ch.kappa_jpc / 2 + 1j * (ch.delta + omega))


def jpc_l2_norm(ch: JpcChannel) -> float:
    """sqrt(int |H(t)|^2 dt) of the one-pole impulse response."""
    return ch.gain * abs(ch.kappa_jpc / 2 + 1j * ch.delta) / np.sqrt(ch.kappa_jpc)


def channel_transfer(omega: np.ndarray, cavity: CavityParams, ch: JpcChannel) -> np.ndarray:
    """Drive -> filtered which-state difference: sqrt(kappa eta) H (alpha_g - alpha_e) / eps."""
    one = np.ones_like(omega, dtype=complex)
    diff = cavity_alpha(omega, cavity, one, "g") - cavity_alpha(omega, cavity, one, "e")
    return np.sqrt(cavity.kappa * cavity.eta) * jpc_transfer(omega, ch) * diff


def target_envelope(spec: EnvelopeSpec, times: np.ndarray) -> ComplexWaveform:
    """Flat-top tanh envelope of width t_duration with slew t_slew, centred on t = 0."""
    t = np.asarray(times, dtype=float)
    f = (spec.amplitude / 2) * (
        np.tanh((t + spec.t_duration / 2) / spec.t_slew) - np.tanh((t - spec.t_duration / 2) / spec.t_slew)
    )
    return ComplexWaveform(f.astype(complex), dt=float(t[1] - t[0]), t0=float(t[0]))


def forward_envelope(drive: ComplexWaveform, cavity: CavityParams, ch: JpcChannel) -> ComplexWaveform:
    """Filtered difference envelope f(t) produced by a cavity drive."""
    spec = drive.spectrum() * channel_transfer(drive.omega, cavity, ch)
    return from_spectrum(spec, drive)


def synthesize_drive(
    target: ComplexWaveform,
    cavity: CavityParams,
    ch: JpcChannel,
    conjugate: bool = False,
    regularization: float = REGULARIZATION,
) -> ComplexWaveform:
    """Invert the cavity + amplifier response so that the drive regenerates ``target``.

    With ``conjugate`` the channel is made to produce ``conj(target)``, the
    requirement for the port whose field is conjugated in conversion.
    """
    want = target.with_samples(np.conj(target.samples)) if conjugate else target
    omega = want.omega
    transfer = channel_transfer(omega, cavity, ch)
    spec = want.spectrum()
    mag = np.abs(transfer)
    floor = regularization * mag.max()
    support = np.abs(spec) > SUPPORT_FRACTION * np.abs(spec).max()
    if np.any(mag[support] < floor):
        raise IllConditionedError(
            "channel response falls below the regularization floor inside the target band"
        )
    drive_spec = spec * np.conj(transfer) / (mag**2 + floor**2)
    return from_spectrum(drive_spec, want)


def signal_difference(cavity: CavityParams, ch: JpcChannel, drive: ComplexWaveform) -> ComplexWaveform:
    """S(t) = sqrt(eta kappa) (alpha'_g - alpha'_e) with the amplifier response L2-normalised."""
    spec = drive.spectrum() * channel_transfer(drive.omega, cavity, ch) / jpc_l2_norm(ch)
    return from_spectrum(spec, drive)


def mismatch(s_a: ComplexWaveform, s_b: ComplexWaveform) -> float:
    """sqrt(int |S_A - S_B|^2 / int |S_A + S_B|^2) on a shared time grid."""
    if len(s_a.samples) != len(s_b.samples) or not np.isclose(s_a.dt, s_b.dt):
        raise ValueError("waveforms must share a time grid")
    den = np.trapezoid(np.abs(s_a.samples + s_b.samples) ** 2, dx=s_a.dt)
    if den <= 0:
        raise ValueError("S_A + S_B vanishes identically; mismatch undefined")
    num = np.trapezoid(np.abs(s_a.samples - s_b.samples) ** 2, dx=s_a.dt)
    return float(np.sqrt(num / den))


def strength_integral(s: ComplexWaveform) -> float:
    """Lambda = int |S(t)|^2 dt (trapezoidal)."""
    return float(np.trapezoid(np.abs(s.samples) ** 2, dx=s.dt))


def spectral_strength(s: ComplexWaveform) -> float:
    """Same integral evaluated in the frequency domain (Parseval)."""
    spec = s.spectrum()
    return float(np.sum(np.abs(spec) ** 2) / (len(spec) * s.dt))


def amplitude_for_strength(s_unit: ComplexWaveform, lam: float) -> float:
    """Drive scale factor that brings a unit-amplitude pulse to strength ``lam``."""
    base = strength_integral(s_unit)
    if base <= 0:
        raise ValueError("reference pulse carries no signal")
    return float(np.sqrt(lam / base))


def spectral_fwhm(w: ComplexWaveform) -> float:
    """Full width at half maximum of the power spectrum |w[f]|^2, in Hz."""
    power = np.fft.fftshift(np.abs(w.spectrum()) ** 2)
    f = np.fft.fftshift(np.fft.fftfreq(len(w.samples), w.dt))
    above = np.nonzero(power >= power.max() / 2)[0]
    return float(f[above[-1]] - f[above[0]])


def footprint(w: ComplexWaveform, fraction: float = 1e-2) -> float:
    """Duration over which |w(t)| exceeds ``fraction`` of its peak, in seconds."""
    mag = np.abs(w.samples)
    above = np.nonzero(mag >= fraction * mag.max())[0]
    return float((above[-1] - above[0]) * w.dt)


@dataclass
class MatchedPulses:
    target: ComplexWaveform
    drive_a: ComplexWaveform
    drive_b: ComplexWaveform
    signal_a: ComplexWaveform
    signal_b: ComplexWaveform  # already conjugated onto Alice's frame

    @property
    def mismatch(self) -> float:
        return mismatch(self.signal_a, self.signal_b)

    @property
    def strength(self) -> float:
        return strength_integral(self.signal_a)

    def scaled_to(self, lam: float) -> "MatchedPulses":
        k = amplitude_for_strength(self.signal_a, lam)
        return MatchedPulses(
            self.target.scaled(k),
            self.drive_a.scaled(k),
            self.drive_b.scaled(k),
            self.signal_a.scaled(k),
            self.signal_b.scaled(k),
        )


def matched_pulses(
    envelope: EnvelopeSpec = DEVICE_ENVELOPE,
    alice: CavityParams = DEVICE_ALICE,
    bob: CavityParams = DEVICE_BOB,
    jpc_a: JpcChannel = JpcChannel(),
    jpc_b: JpcChannel = JpcChannel(),
    n: int = DEFAULT_N,
    dt: float = DEFAULT_DT,
    compensate_bob: bool = True,
) -> MatchedPulses:
    """Synthesize both drives for a common target envelope.

    Without ``compensate_bob`` Bob is driven with Alice's pulse shape, scaled by
    the complex factor that best overlaps his signal with hers.
    """
    target = target_envelope(envelope, time_grid(n, dt))
    drive_a = synthesize_drive(target, alice, jpc_a)
    s_a = signal_difference(alice, jpc_a, drive_a)
    if compensate_bob:
        drive_b = synthesize_drive(target, bob, jpc_b, conjugate=True)
        s_b = signal_difference(bob, jpc_b, drive_b)
        s_b = s_b.with_samples(np.conj(s_b.samples))
    else:
        raw = signal_difference(bob, jpc_b, drive_a)
        # Conjugation is antilinear: scaling the drive by k scales conj(S_B) by conj(k).
        cb = np.conj(raw.samples)
        k = np.vdot(cb, s_a.samples) / np.vdot(cb, cb)
        drive_b = drive_a.scaled(np.conj(k))
        s_b = raw.with_samples(cb * k)
    return MatchedPulses(target, drive_a, drive_b, s_a, s_b)


def pointer_statistics(
    s: ComplexWaveform,
    n: int,
    sigma_q: float = 0.5,
    seed: int = 0,
    chunk: int = 500,
    phase_preserving: bool = True,
):
    """Empirical pointer separation and spread from simulated output records.

    Each shot is a record ``S(t) + noise`` (|gg> pointer) or ``noise`` (odd
    manifold), with white noise of density ``sigma_q`` per quadrature,
    integrated against the unit-norm weight ``S / ||S||``.  Returns
    ``(I_bar, sigma)`` estimated from ``n`` shots of each pointer.
    """
    rng = np.random.default_rng(seed)
    mag = np.abs(s.samples)
    keep = mag > 1e-9 * mag.max()
    sig = s.samples[keep]
    weight = sig / np.sqrt(strength_integral(s))
    noise_std = sigma_q * (np.sqrt(2.0) if phase_preserving else 1.0) / np.sqrt(s.dt)

    def integrate(mean: np.ndarray, count: int) -> np.ndarray:
        out = []
        for start in range(0, count, chunk):
            m = min(chunk, count - start)
            noise = noise_std * (rng.standard_normal((m, sig.size)) + 1j * rng.standard_normal((m, sig.size)))
            rec = mean[None, :] + noise
            out.append(np.real(rec @ np.conj(weight)) * s.dt)
        return np.concatenate(out)

    i_gg = integrate(sig, n)
    i_odd = integrate(np.zeros_like(sig), n)
    i_bar = float(i_gg.mean() - i_odd.mean())
    sigma = float(np.sqrt((i_gg.var(ddof=1) + i_odd.var(ddof=1)) / 2))
    return i_bar, sigma


def pointer_moments(s: ComplexWaveform, sigma_q: float = 0.5, phase_preserving: bool = True) -> tuple[float, float]:
    """Exact ``(I_bar, sigma)`` of the discretised matched-filter output used by ``pointer_statistics``."""
    mag = np.abs(s.samples)
    sig = s.samples[mag > 1e-9 * mag.max()]
    weight = sig / np.sqrt(strength_integral(s))
    noise_std = sigma_q * (np.sqrt(2.0) if phase_preserving else 1.0) / np.sqrt(s.dt)
    i_bar = float(np.real(np.vdot(weight, sig)) * s.dt)
    sigma = float(noise_std * s.dt * np.linalg.norm(weight))
    return i_bar, sigma


def write_waveform_csv(path: str | Path, w: ComplexWaveform) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t_seconds", "re", "im"])
        for t, v in zip(w.times, w.samples):
            out.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])


def read_waveform_csv(path: str | Path) -> ComplexWaveform:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"t_seconds", "re", "im"}:
        raise ValueError(f"{path}: expected columns t_seconds, re, im")
    t = np.array([float(r["t_seconds"]) for r in rows])
    v = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    dt = np.diff(t)
    if len(t) < 2 or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError(f"{path}: samples must be uniformly spaced")
    return ComplexWaveform(v, dt=float(dt[0]), t0=float(t[0]))
