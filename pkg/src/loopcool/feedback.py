"""Closed-loop properties of the in-loop light with the membrane decoupled:
open-loop transfer, squashing spectra, effective cavity parameters, Nyquist
stability, and the gain that cancels Stokes scattering.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .errors import (
    BandError,
    ConvergenceError,
    InstabilityBoundaryError,
    LoopcoolError,
    ValidationError,
)
from .model import CavityParams, FeedbackConfig, FlatDelay, Port, Tabulated

#: single-pole approximation is flagged valid only for detuning/kappa >= this
SINGLE_POLE_DETUNING_RATIO = 5.0
#: ... and kappa * tau_fb <= this
SINGLE_POLE_DELAY_PRODUCT = 0.2

_BOUNDARY_EPS = 1e-12
_EDGE_LOOP_GUARD = 1e-3


@dataclass(frozen=True)
class EffectiveCavity:
    """Single-pole closed-loop cavity: kappa_eff = kappa*(1 - gain_norm),
    delta_eff = Delta - kappa*Im[T(Delta) e^{i phi}].  `valid` flags whether
    the single-pole regime conditions hold; values are returned either way.
    """

    kappa_eff: float
    delta_eff: float
    gain_norm: float
    valid: bool


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    winding_number: int
    margin: float


def loop_factor(p: CavityParams, fb: FeedbackConfig, omega):
    """Open-loop factor 2*sqrt(eta)*zeta_out(w)*g_fb(w); valid for either
    detected port (this, not T(w), is the general object)."""
    return 2.0 * math.sqrt(fb.eta) * model.zeta_out(p, fb, omega) * fb.gain(omega)


def loop_denominator(p: CavityParams, fb: FeedbackConfig, omega):
    """D(w) = 1 - 2*sqrt(eta)*zeta_out(w)*g_fb(w)."""
    return 1.0 - loop_factor(p, fb, omega)


def open_loop_transfer(p: CavityParams, fb: FeedbackConfig, omega):
    """Complete open-loop transfer function of the transmission loop,

    T(w) = sqrt(eta*kappa0*kappa1)/kappa * g_fb(w) * chi_c(w) * e^{-i theta}.

    Only defined for the transmission port; for reflection use
    loop_factor, which carries the direct-reflection term that a plain
    cavity-times-filter factorization cannot represent.
    """
    if fb.port is not Port.TRANSMISSION:
        raise ValidationError(
            "open_loop_transfer is the transmission-loop normalization; "
            "use loop_factor for the reflection port"
        )
    theta, _ = model.input_phase_shifts(p)
    pref = math.sqrt(fb.eta * p.kappa0 * p.kappa1) / p.kappa
    return (
        pref
        * fb.gain(omega)
        * model.cavity_susceptibility(p, omega)
        * cmath.exp(-1j * theta)
    )


def squash_spectrum(p: CavityParams, fb: FeedbackConfig, omega):
    """In-loop photocurrent spectrum S_i(w) = |D(w)|^-2, shot noise = 1.

    Values below 1 are squashing, above 1 anti-squashing.
    """
    d = np.asarray(loop_denominator(p, fb, omega))
    mag2 = np.abs(d) ** 2
    if np.any(np.abs(d) < _BOUNDARY_EPS):
        raise InstabilityBoundaryError(
            "loop denominator vanished: configuration on instability boundary"
        )
    out = 1.0 / mag2
    return out if out.ndim else float(out)


def effective_susceptibility(p: CavityParams, fb: FeedbackConfig, omega):
    """Exact closed-loop susceptibility chi_eff(w) = chi_c(w)/D(w)."""
    d = np.asarray(loop_denominator(p, fb, omega))
    if np.any(np.abs(d) < _BOUNDARY_EPS):
        raise InstabilityBoundaryError(
            "loop denominator vanished: configuration on instability boundary"
        )
    out = np.asarray(model.cavity_susceptibility(p, omega)) / d
    return out if out.ndim else complex(out)


def _gain_delay_estimate(fb: FeedbackConfig, omega: float) -> float:
    if isinstance(fb.gain, FlatDelay):
        return fb.gain.delay
    # local phase slope of a tabulated filter
    step = max(abs(omega) * 1e-4, 1.0)
    g_hi = fb.gain(omega + step)
    g_lo = fb.gain(omega - step)
    return float(np.angle(g_hi / g_lo)) / (2.0 * step)


def effective_cavity(p: CavityParams, fb: FeedbackConfig) -> EffectiveCavity:
    """Single-pole effective cavity seen by a probe near resonance.

    gain_norm = Re[T(Delta) e^{i phi}] equals 1 at the stability threshold
    (kappa_eff = 0).
    """
    t_at_delta = open_loop_transfer(p, fb, p.detuning) * cmath.exp(1j * fb.phi)
    gain_norm = float(t_at_delta.real)
    kappa_eff = p.kappa * (1.0 - gain_norm)
    delta_eff = p.detuning - p.kappa * float(t_at_delta.imag)
    tau = abs(_gain_delay_estimate(fb, p.detuning))
    valid = (
        abs(p.detuning) / p.kappa >= SINGLE_POLE_DETUNING_RATIO
        and p.kappa * tau <= SINGLE_POLE_DELAY_PRODUCT
    )
    return EffectiveCavity(
        kappa_eff=kappa_eff, delta_eff=delta_eff, gain_norm=gain_norm, valid=valid
    )


def _cavity_mediated_loop(p, fb, omega):
    """Loop factor without the direct (instantaneous) reflection path; used
    for band-edge guards, where a flat gain model is read as band-limited."""
    kappa_fb, theta_fb, _z = model.port_constants(p, fb)
    psi = fb.phi - theta_fb
    chi_p = model.cavity_susceptibility(p, omega)
    chi_m = np.conjugate(model.cavity_susceptibility(p, -np.asarray(omega, float)))
    pref = math.sqrt(p.kappa0 * kappa_fb) / (2.0 * p.kappa)
    zeta_cav = pref * (chi_p * np.exp(1j * psi) + chi_m * np.exp(-1j * psi))
    return 2.0 * math.sqrt(fb.eta) * zeta_cav * fb.gain(omega)


def nyquist_stability(
    p: CavityParams,
    fb: FeedbackConfig,
    band: tuple[float, float] | None = None,
    samples: int = 4096,
    max_points: int = 2_000_000,
) -> StabilityVerdict:
    """Winding number of D(w) = 1 - 2*sqrt(eta)*zeta_out*g_fb around 0 as w
    runs from -w_hi to +w_hi; stable iff the winding number is zero.

    The band must cover every frequency where the cavity-mediated loop is
    non-negligible (|loop| < 1e-3 at the edges, else BandError).  The grid
    is refined until adjacent phase steps stay below pi/2; if refinement
    hits `max_points` the sampling is reported as too coarse.  For a flat
    gain on the reflection port the direct (cavity-bypassing) term does not
    decay with frequency; it is treated as band-limited, matching a filter
    that is flat over the band and rolls off beyond it.
    """
    if band is None:
        band = _default_band(p, fb)
    lo, hi = band
    if not 0.0 <= lo < hi:
        raise BandError("band must satisfy 0 <= lo < hi")
    if isinstance(fb.gain, Tabulated):
        # keep the contour inside the measured band; the gap around zero
        # carries no winding provided the loop is negligible at its edges
        lo = max(lo, fb.gain.curve.domain[0])
        hi = min(hi, fb.gain.curve.domain[1])

    edges = np.array([-hi, hi] if lo == 0.0 else [-hi, -lo, lo, hi])
    if fb.port is Port.TRANSMISSION or isinstance(fb.gain, Tabulated):
        edge_loop = np.abs(loop_factor(p, fb, edges))
    else:
        edge_loop = np.abs(_cavity_mediated_loop(p, fb, edges))
    if np.any(edge_loop > _EDGE_LOOP_GUARD):
        raise BandError(
            f"band too narrow: loop factor {edge_loop.max():.2e} at the edges "
            f"exceeds {_EDGE_LOOP_GUARD:g}"
        )

    # dense windows around the resonant features, coarse contour elsewhere
    grid = [np.linspace(-hi, hi, samples)]
    for center in (-abs(p.detuning), abs(p.detuning)):
        grid.append(np.linspace(center - 8 * p.kappa, center + 8 * p.kappa, samples))
    omega = np.unique(np.concatenate(grid))
    omega = omega[(omega >= -hi) & (omega <= hi)]
    if lo > 0.0:
        omega = omega[np.abs(omega) >= lo]

    while True:
        d = np.asarray(loop_denominator(p, fb, omega))
        steps = np.angle(d[1:] / d[:-1])
        bad = np.abs(steps) > (math.pi / 2)
        if not bad.any():
            break
        if omega.size > max_points:
            raise BandError(
                "sampling too coarse: adjacent phase jumps above pi/2 persist "
                f"after refining to {omega.size} points"
            )
        mids = 0.5 * (omega[:-1][bad] + omega[1:][bad])
        omega = np.unique(np.concatenate([omega, mids]))

    winding = int(round(float(steps.sum()) / (2.0 * math.pi)))
    margin = float(np.min(np.abs(d)))
    return StabilityVerdict(stable=(winding == 0), winding_number=winding, margin=margin)


def _default_band(p: CavityParams, fb: FeedbackConfig) -> tuple[float, float]:
    """Smallest power-of-two multiple of kappa beyond |Delta| with the
    cavity-mediated loop under the edge guard."""
    if isinstance(fb.gain, Tabulated):
        return 0.0, fb.gain.curve.domain[1]
    hi = abs(p.detuning) + 64.0 * p.kappa
    for _ in range(24):
        probe = np.array([-hi, hi])
        if fb.port is Port.TRANSMISSION:
            lf = np.abs(loop_factor(p, fb, probe))
        else:
            lf = np.abs(_cavity_mediated_loop(p, fb, probe))
        if np.all(lf < _EDGE_LOOP_GUARD):
            return 0.0, hi
        hi *= 2.0
    raise BandError("could not find a band edge with negligible loop factor")


def stokes_suppression_gain(
    p: CavityParams, fb: FeedbackConfig, omega_m: float
) -> complex:
    """Gain value g_fb(-omega_m) that makes the Stokes rate vanish at unit
    detection efficiency on a single detected port.

    Cancellation of the coherent term of the rate spectrum at -omega_m
    requires

        2 g = chi(-wm)* / [chi(-wm)* zeta_out(-wm)
                           - sqrt(kappa_fb/kappa0) zeta_c(-wm) e^{i phi_q}]

    with phi_q the detected-quadrature rotation for the configured port.
    At eta < 1 (or with undetected ports) the same gain leaves a strictly
    positive Stokes rate.
    """
    kappa_fb, _theta_fb, _z = model.port_constants(p, fb)
    phi_q = model.detected_phase(p, fb)
    chi_conj = np.conjugate(model.cavity_susceptibility(p, -omega_m))
    zeta = model.zeta_out(p, fb, -omega_m)
    zeta_c = model.zeta_cavity(p, 0.0, -omega_m)
    denom = chi_conj * zeta - math.sqrt(kappa_fb / p.kappa0) * zeta_c * cmath.exp(
        1j * phi_q
    )
    if abs(denom) < _BOUNDARY_EPS:
        raise LoopcoolError(
            "no suppressing gain at this phase: output and cavity responses coincide"
        )
    return complex(chi_conj / (2.0 * denom))


def gain_model_at(omega_m: float, value: complex) -> FlatDelay:
    """Flat-magnitude delay line whose value at -omega_m equals `value`
    (and hence value* at +omega_m).  Convenience for feeding a computed
    suppression gain into the rate formulas, which sample the gain only at
    -/+ omega_m."""
    amp = abs(value)
    if amp == 0.0:
        return FlatDelay(0.0)
    target = cmath.phase(value)
    # phase at -omega_m is -delay*omega_m + offset; pick the smallest
    # non-negative delay realizing it
    for offset in (0.0, math.pi):
        delay = (offset - target) % (2.0 * math.pi) / omega_m
        candidate = FlatDelay(amplitude=amp, delay=delay, phase_offset=offset)
        if abs(candidate(-omega_m) - value) <= 1e-9 * amp:
            return candidate
    raise LoopcoolError("could not realize the requested gain value")  # pragma: no cover


def optimal_bare_detuning(
    p: CavityParams,
    fb: FeedbackConfig,
    omega_m: float,
    tol: float = 2.0 * math.pi * 1.0,
    max_iter: int = 200,
) -> float:
    """Bare detuning solving Delta_eff(Delta) = omega_m at the stability
    threshold (gain_norm = 1):

        Delta = omega_m + kappa * tan[phi_T(Delta) + phi]

    found by damped fixed-point iteration (damping 0.5), converged to 1 Hz.
    """
    delta = p.detuning if p.detuning != 0 else omega_m
    for _ in range(max_iter):
        phase = _transfer_phase(p, fb, delta)
        update = omega_m + p.kappa * math.tan(phase + fb.phi)
        new = 0.5 * delta + 0.5 * update
        if not math.isfinite(new):
            break
        if abs(new - delta) < tol:
            return new
        delta = new
    raise ConvergenceError("no fixed point in band for the optimal bare detuning")


def _transfer_phase(p: CavityParams, fb: FeedbackConfig, delta: float) -> float:
    """Phase of T at its own resonance for a trial bare detuning."""
    p_trial = replace(p, detuning=delta)
    return cmath.phase(open_loop_transfer(p_trial, fb, delta))
