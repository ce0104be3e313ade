"""Parameter records and the elementary complex response functions.

All frequencies and rates are angular (rad/s) everywhere inside the
package; conversion from/to ordinary frequency in Hz happens only at
external boundaries (CLI, file formats).  The cavity decay rate kappa is
a half width: the intensity decay rate is 2*kappa.

Spectral convention: <O(w) O'(w')> = delta(w+w') S_OO'(w), so shot noise
is S = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Union

import numpy as np
from scipy import integrate, special
from scipy.constants import hbar, k as k_B

from .errors import CurveDomainError, ValidationError

TWO_PI = 2.0 * math.pi


def _finite(name, value):
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


class Port(Enum):
    """Which cavity output feeds the loop detector."""

    REFLECTION = "reflection"
    TRANSMISSION = "transmission"


@dataclass(frozen=True)
class CavityParams:
    """Driven two-mirror cavity with internal loss.

    kappa0 is the input/feedback mirror decay rate, kappa1 the second
    mirror, kappa_prime internal losses; all rad/s half-widths.  The
    drive enters through mirror 0 detuned by `detuning` (cavity resonance
    minus laser frequency).
    """

    kappa0: float
    kappa1: float
    kappa_prime: float
    detuning: float
    drive_power: float | None = None
    laser_wavelength: float = 1064e-9

    def __post_init__(self):
        for name in ("kappa0", "kappa1", "kappa_prime"):
            v = _finite(name, getattr(self, name))
            if v < 0:
                raise ValidationError(f"{name} must be >= 0, got {v}")
        if self.kappa <= 0:
            raise ValidationError("total decay rate kappa must be > 0")
        _finite("detuning", self.detuning)
        if self.drive_power is not None and self.drive_power < 0:
            raise ValidationError("drive_power must be >= 0")
        if self.laser_wavelength <= 0:
            raise ValidationError("laser_wavelength must be > 0")

    @property
    def kappa(self) -> float:
        return self.kappa0 + self.kappa1 + self.kappa_prime


@dataclass(frozen=True)
class MechanicsParams:
    """Single mechanical mode coupled to the cavity field."""

    omega_m: float
    gamma_m: float
    n_th: float
    g0: float | None = None
    G: float = 0.0

    def __post_init__(self):
        if not self.omega_m > 0:
            raise ValidationError("omega_m must be > 0")
        if not self.gamma_m > 0:
            raise ValidationError("gamma_m must be > 0")
        if self.n_th < 0:
            raise ValidationError("n_th must be >= 0")
        if self.G < 0:
            raise ValidationError("G must be >= 0")


@dataclass(frozen=True)
class FlatDelay:
    """Electronic gain that is flat in magnitude with a linear phase.

    g(w) = amplitude * exp(i*(delay*w + phase_offset)).  A real impulse
    response requires g(w)* = g(-w), which restricts phase_offset to 0 or
    pi; amplitude may be negative (equivalent to shifting the offset by
    pi).
    """

    amplitude: float
    delay: float = 0.0
    phase_offset: float = 0.0

    def __post_init__(self):
        _finite("amplitude", self.amplitude)
        if self.delay < 0:
            raise ValidationError("delay must be >= 0")
        rem = math.remainder(self.phase_offset, math.pi)
        if abs(rem) > 1e-12:
            raise ValidationError(
                "phase_offset must be a multiple of pi so that g(w)* = g(-w)"
            )

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.asarray(
            self.amplitude * np.exp(1j * (self.delay * omega + self.phase_offset))
        )
        return out if out.ndim else complex(out)

    def scaled(self, factor: float) -> "FlatDelay":
        return replace(self, amplitude=self.amplitude * factor)


@dataclass(frozen=True)
class TransferCurve:
    """Sampled complex response over a one-sided (positive) frequency band.

    Interpolation is linear in (log magnitude, unwrapped phase).
    Negative frequencies evaluate through the reflection rule
    value(-w) = value(w)*; evaluation outside [omega[0], omega[-1]] is an
    error, never extrapolation.
    """

    omega: np.ndarray
    values: np.ndarray
    _log_mag: np.ndarray = field(init=False, repr=False, compare=False)
    _phase: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if omega.ndim != 1 or omega.size < 2:
            raise ValidationError("TransferCurve needs at least two samples")
        if values.shape != omega.shape:
            raise ValidationError("omega and values must have matching shapes")
        if omega[0] <= 0:
            raise ValidationError("TransferCurve frequencies must be positive")
        if not np.all(np.diff(omega) > 0):
            raise ValidationError("TransferCurve frequencies must strictly increase")
        mags = np.abs(values)
        if np.any(mags == 0):
            raise ValidationError("TransferCurve samples must have nonzero magnitude")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_log_mag", np.log(mags))
        object.__setattr__(self, "_phase", np.unwrap(np.angle(values)))

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.omega[0]), float(self.omega[-1])

    @property
    def unwrapped_phase(self) -> np.ndarray:
        return self._phase

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        scalar = w.ndim == 0
        w = np.atleast_1d(w)
        mag_w = np.abs(w)
        lo, hi = self.domain
        if np.any(mag_w < lo) or np.any(mag_w > hi):
            raise CurveDomainError(
                f"evaluation outside tabulated band [{lo:g}, {hi:g}] rad/s"
            )
        logm = np.interp(mag_w, self.omega, self._log_mag)
        ph = np.interp(mag_w, self.omega, self._phase)
        out = np.exp(logm + 1j * ph)
        np.conjugate(out, where=w < 0, out=out)
        return complex(out[0]) if scalar else out

    def scaled(self, factor: float) -> "TransferCurve":
        return TransferCurve(self.omega, self.values * factor)


@dataclass(frozen=True)
class Tabulated:
    """Gain model backed by a measured/tabulated curve."""

    curve: TransferCurve

    def __call__(self, omega):
        return self.curve(omega)

    def scaled(self, factor: float) -> "Tabulated":
        return Tabulated(self.curve.scaled(factor))


GainModel = Union[FlatDelay, Tabulated]


@dataclass(frozen=True)
class FeedbackConfig:
    """Homodyne-detected output port feeding an amplitude modulator.

    phi is the detected quadrature angle, eta the detection efficiency
    (any in-loop excess noise can be folded into an effective eta), and
    gain the electronic transfer function g_fb(w).
    """

    port: Port = Port.TRANSMISSION
    phi: float = 0.0
    eta: float = 1.0
    gain: GainModel = FlatDelay(0.0)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [0, 1]")
        _finite("phi", self.phi)

    def with_gain_scale(self, factor: float) -> "FeedbackConfig":
        return replace(self, gain=self.gain.scaled(factor))


def cavity_susceptibility(p: CavityParams, omega):
    """chi_c(w) = 2*kappa / [kappa + i*(Delta - w)]."""
    omega = np.asarray(omega, dtype=float)
    out = np.asarray(2.0 * p.kappa / (p.kappa + 1j * (p.detuning - omega)))
    return out if out.ndim else complex(out)


def input_phase_shifts(p: CavityParams) -> tuple[float, float]:
    """Static phase shifts of the intracavity and reflected mean fields.

    theta = arctan(-Delta/kappa) rotates the drive so the mean cavity
    field is real; theta_bar = arctan{2*Delta*kappa0 / [Delta^2 +
    kappa*(kappa1 - kappa0)]} does the same for the output of mirror 0.
    """
    theta = math.atan2(-p.detuning, p.kappa)
    theta_bar = math.atan2(
        2.0 * p.detuning * p.kappa0,
        p.detuning**2 + p.kappa * (p.kappa1 - p.kappa0),
    )
    return theta, theta_bar


def port_constants(p: CavityParams, fb: FeedbackConfig) -> tuple[float, float, int]:
    """(kappa_fb, theta_fb, z) for the detected port.

    Reflection: (kappa0, theta_bar, 0); transmission: (kappa1, theta, 1).
    """
    theta, theta_bar = input_phase_shifts(p)
    if fb.port is Port.REFLECTION:
        return p.kappa0, theta_bar, 0
    return p.kappa1, theta, 1


def detected_phase(p: CavityParams, fb: FeedbackConfig) -> float:
    """Quadrature rotation between the in-loop modulation and the cavity
    amplitude quadrature: phi + theta - theta_bar for reflection, phi for
    transmission."""
    theta, theta_bar = input_phase_shifts(p)
    if fb.port is Port.REFLECTION:
        return fb.phi + theta - theta_bar
    return fb.phi


def zeta_out(p: CavityParams, fb: FeedbackConfig, omega):
    """Response of the detected output quadrature to input amplitude
    fluctuations:

    zeta(w) = sqrt(kappa0*kappa_fb)/(2*kappa) *
              [chi(w) e^{i(phi-theta_fb)} + chi(-w)* e^{-i(phi-theta_fb)}]
              - (1-z) cos(phi - theta_fb)
    """
    kappa_fb, theta_fb, z = port_constants(p, fb)
    psi = fb.phi - theta_fb
    chi_p = cavity_susceptibility(p, omega)
    chi_m = np.conjugate(cavity_susceptibility(p, -np.asarray(omega, dtype=float)))
    pref = math.sqrt(p.kappa0 * kappa_fb) / (2.0 * p.kappa)
    out = pref * (chi_p * np.exp(1j * psi) + chi_m * np.exp(-1j * psi))
    if z == 0:
        out = out - math.cos(psi)
    out = np.asarray(out)
    return out if out.ndim else complex(out)


def zeta_cavity(p: CavityParams, varphi: float, omega):
    """Response of the intracavity quadrature at angle varphi to input
    amplitude fluctuations:

    zeta_c(w) = kappa0/(2*kappa) *
                [chi(w) e^{i(varphi-theta)} + chi(-w)* e^{-i(varphi-theta)}]
    """
    theta, _ = input_phase_shifts(p)
    psi = varphi - theta
    chi_p = cavity_susceptibility(p, omega)
    chi_m = np.conjugate(cavity_susceptibility(p, -np.asarray(omega, dtype=float)))
    out = (p.kappa0 / (2.0 * p.kappa)) * (
        chi_p * np.exp(1j * psi) + chi_m * np.exp(-1j * psi)
    )
    out = np.asarray(out)
    return out if out.ndim else complex(out)


def photon_number_and_coupling(
    p: CavityParams, m: MechanicsParams
) -> tuple[float, float]:
    """Mean intracavity photon number and linearized coupling.

    n_c = 2*kappa0*P / [hbar*omega_L*(kappa^2 + Delta^2)], G = g0*sqrt(2*n_c).
    """
    if p.drive_power is None or m.g0 is None:
        raise ValidationError(
            "insufficient parameters: drive_power and g0 are both required"
        )
    omega_l = TWO_PI * 299792458.0 / p.laser_wavelength
    n_c = 2.0 * p.kappa0 * p.drive_power / (
        hbar * omega_l * (p.kappa**2 + p.detuning**2)
    )
    return n_c, m.g0 * math.sqrt(2.0 * n_c)


@dataclass(frozen=True)
class MembraneGeometry:
    """Circular taut membrane.  Sound speed may be given directly or
    derived from tensile stress (Pa) and density as c_s = sqrt(stress/rho)."""

    radius: float
    thickness: float
    density: float
    sound_speed: float | None = None
    stress: float | None = None

    def __post_init__(self):
        for name in ("radius", "thickness", "density"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.sound_speed is None and self.stress is None:
            raise ValidationError("provide sound_speed or stress")
        if self.sound_speed is not None and not self.sound_speed > 0:
            raise ValidationError("sound_speed must be > 0")
        if self.stress is not None and not self.stress > 0:
            raise ValidationError("stress must be > 0")

    @property
    def c_s(self) -> float:
        if self.sound_speed is not None:
            return self.sound_speed
        return math.sqrt(self.stress / self.density)

    @property
    def physical_mass(self) -> float:
        return self.density * math.pi * self.radius**2 * self.thickness


@dataclass(frozen=True)
class MembraneMode:
    """One (n, j) drum mode.

    m_eff_ratio is the defining integral int_0^1 x J_n(a_nj x)^2 dx, i.e.
    m_eff = m * m_eff_ratio.  (At a zero a of J_n this integral equals
    J_{n+1}(a)^2 / 2; quoted effective masses sometimes omit the 1/2.)
    """

    n: int
    j: int
    omega: float
    m_eff_ratio: float


def membrane_modes(
    geom: MembraneGeometry, n_max: int, j_max: int
) -> list[MembraneMode]:
    """Eigenfrequencies w_nj = (c_s/R) * a_nj and effective-mass ratios for
    azimuthal orders n = 0..n_max-1 and radial orders j = 1..j_max."""
    if n_max < 1 or j_max < 1:
        raise ValidationError("n_max and j_max must be >= 1")
    modes = []
    for n in range(n_max):
        zeros = special.jn_zeros(n, j_max)
        for j, alpha in enumerate(zeros, start=1):
            ratio, _ = integrate.quad(
                lambda x, n=n, a=alpha: x * special.jv(n, a * x) ** 2,
                0.0,
                1.0,
                epsabs=1e-10,
                epsrel=1e-10,
            )
            modes.append(
                MembraneMode(
                    n=n,
                    j=j,
                    omega=geom.c_s / geom.radius * alpha,
                    m_eff_ratio=ratio,
                )
            )
    modes.sort(key=lambda mode: mode.omega)
    return modes


def occupancy_to_temperature(n: float, omega_m: float) -> float:
    """Equivalent temperature T = hbar*omega_m*n / k_B."""
    return hbar * omega_m * n / k_B


def temperature_to_occupancy(temperature: float, omega_m: float) -> float:
    """Inverse of occupancy_to_temperature (same linear convention)."""
    return k_B * temperature / (hbar * omega_m)
