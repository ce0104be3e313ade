"""Exact frequency-domain solution of the closed-loop linearized dynamics.

Per frequency the five unknowns (a, a_conj, b, b_conj, i_fb) are solved
against the nine noise inputs; spectra follow by contracting transfer rows
with the frequency-independent correlator matrix under the
<O(w)O'(w')> = delta(w+w') S(w) convention.  Valid at any coupling where
the linearized model applies (the photocurrent is carried as an explicit
unknown so both ports and finite detection efficiency stay uniform).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from . import cooling, feedback, model
from .errors import (
    ConvergenceError,
    FitError,
    LoopcoolError,
    OptomechanicalInstabilityError,
    ValidationError,
)
from .model import CavityParams, FeedbackConfig, MechanicsParams, Port
from .spectra import Spectrum

NOISE_LABELS = (
    "a_in0",
    "a_in0_conj",
    "a_in1",
    "a_in1_conj",
    "a_prime",
    "a_prime_conj",
    "b_in",
    "b_in_conj",
    "x_vac",
)

#: conjugate partners of the solved/derived observables
CONJUGATE_PARTNER = {
    "a": "a_conj",
    "a_conj": "a",
    "b": "b_conj",
    "b_conj": "b",
    "i_fb": "i_fb",
    "a_out0": "a_out0_conj",
    "a_out0_conj": "a_out0",
    "a_out1": "a_out1_conj",
    "a_out1_conj": "a_out1",
    "x_cavity": "x_cavity",
    "q_mech": "q_mech",
}

#: noise-channel index swap under conjugation (pairs swap, x_vac fixed)
_CONJ_CHANNEL = np.array([1, 0, 3, 2, 5, 4, 7, 6, 8])


def correlator_matrix(n_th: float) -> np.ndarray:
    """<n_j(w) n_k(w')> = C_jk delta(w+w'): vacuum optical ports, thermal
    mechanical bath, unit detection vacuum."""
    c = np.zeros((9, 9))
    c[0, 1] = c[2, 3] = c[4, 5] = 1.0
    c[6, 7] = n_th + 1.0
    c[7, 6] = n_th
    c[8, 8] = 1.0
    return c


def solve_rows(
    p: CavityParams, m: MechanicsParams, fb: FeedbackConfig, omega
) -> dict[str, np.ndarray]:
    """Transfer rows K_O(w) mapping the nine noises to each observable.

    Returns (N, 9) complex arrays keyed by observable name for the solved
    unknowns, the two output fields, and the derived quadratures
    x_cavity = a + a_conj and q_mech = b + b_conj.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = omega.size
    theta, theta_bar = model.input_phase_shifts(p)
    s0 = math.sqrt(2.0 * p.kappa0)
    s1 = math.sqrt(2.0 * p.kappa1)
    sp = math.sqrt(2.0 * p.kappa_prime)
    sg = math.sqrt(m.gamma_m)
    e_th = cmath.exp(-1j * theta)
    g = np.asarray(fb.gain(omega), dtype=complex)
    if g.ndim == 0:
        g = np.full(n, complex(g))

    d_a = p.kappa + 1j * (p.detuning - omega)
    d_ac = p.kappa - 1j * (p.detuning + omega)
    d_b = m.gamma_m / 2.0 + 1j * (m.omega_m - omega)
    d_bc = m.gamma_m / 2.0 - 1j * (m.omega_m + omega)

    mat = np.zeros((n, 5, 5), dtype=complex)
    rhs = np.zeros((n, 5, 9), dtype=complex)

    # cavity field and its conjugate partner
    mat[:, 0, 0] = d_a
    mat[:, 0, 2] = -1j * m.G
    mat[:, 0, 3] = -1j * m.G
    mat[:, 0, 4] = -s0 * e_th * g
    rhs[:, 0, 0] = s0 * e_th
    rhs[:, 0, 2] = s1
    rhs[:, 0, 4] = sp

    mat[:, 1, 1] = d_ac
    mat[:, 1, 2] = 1j * m.G
    mat[:, 1, 3] = 1j * m.G
    mat[:, 1, 4] = -s0 * np.conjugate(e_th) * g
    rhs[:, 1, 1] = s0 * np.conjugate(e_th)
    rhs[:, 1, 3] = s1
    rhs[:, 1, 5] = sp

    # mechanical mode
    mat[:, 2, 2] = d_b
    mat[:, 2, 0] = -1j * m.G
    mat[:, 2, 1] = -1j * m.G
    rhs[:, 2, 6] = sg

    mat[:, 3, 3] = d_bc
    mat[:, 3, 0] = 1j * m.G
    mat[:, 3, 1] = 1j * m.G
    rhs[:, 3, 7] = sg

    # photocurrent, with the detected-port input-output relation inlined
    sqrt_eta = math.sqrt(fb.eta)
    mat[:, 4, 4] = 1.0
    rhs[:, 4, 8] = math.sqrt(1.0 - fb.eta)
    if fb.port is Port.TRANSMISSION:
        mat[:, 4, 0] = -sqrt_eta * s1 * cmath.exp(1j * fb.phi)
        mat[:, 4, 1] = -sqrt_eta * s1 * cmath.exp(-1j * fb.phi)
        rhs[:, 4, 2] = -sqrt_eta * cmath.exp(1j * fb.phi)
        rhs[:, 4, 3] = -sqrt_eta * cmath.exp(-1j * fb.phi)
    else:
        e_out = cmath.exp(1j * (fb.phi + theta - theta_bar))
        e_dir = cmath.exp(1j * (fb.phi - theta_bar))
        mat[:, 4, 0] = -sqrt_eta * s0 * e_out
        mat[:, 4, 1] = -sqrt_eta * s0 * np.conjugate(e_out)
        mat[:, 4, 4] += sqrt_eta * g * (e_dir + np.conjugate(e_dir))
        rhs[:, 4, 0] = -sqrt_eta * e_dir
        rhs[:, 4, 1] = -sqrt_eta * np.conjugate(e_dir)

    try:
        k = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise OptomechanicalInstabilityError(
            "singular closed-loop system: frequency sits on an instability pole"
        ) from exc

    rows = {
        "a": k[:, 0, :],
        "a_conj": k[:, 1, :],
        "b": k[:, 2, :],
        "b_conj": k[:, 3, :],
        "i_fb": k[:, 4, :],
    }

    # input-output rows
    delta0 = np.zeros(9)
    delta0[0] = 1.0
    delta0c = np.zeros(9)
    delta0c[1] = 1.0
    delta1 = np.zeros(9)
    delta1[2] = 1.0
    delta1c = np.zeros(9)
    delta1c[3] = 1.0
    e_ref = cmath.exp(1j * (theta - theta_bar))
    rows["a_out0"] = (
        s0 * e_ref * rows["a"]
        - cmath.exp(-1j * theta_bar) * (delta0[None, :] + g[:, None] * rows["i_fb"])
    )
    rows["a_out0_conj"] = s0 * np.conjugate(e_ref) * rows["a_conj"] - cmath.exp(
        1j * theta_bar
    ) * (delta0c[None, :] + g[:, None] * rows["i_fb"])
    rows["a_out1"] = s1 * rows["a"] - delta1[None, :]
    rows["a_out1_conj"] = s1 * rows["a_conj"] - delta1c[None, :]
    rows["x_cavity"] = rows["a"] + rows["a_conj"]
    rows["q_mech"] = rows["b"] + rows["b_conj"]
    return rows


def conjugate_reflected(row: np.ndarray) -> np.ndarray:
    """conj of a row with its noise channels swapped to their partners;
    equals the partner observable's row at -w (reality structure)."""
    return np.conjugate(row)[..., _CONJ_CHANNEL]


_PAIRS = {
    "i_fb": ("i_fb", "i_fb"),
    "x_cavity": ("x_cavity", "x_cavity"),
    "q_mech": ("q_mech", "q_mech"),
    "n_mech": ("b_conj", "b"),
}


def observable_spectrum(
    p: CavityParams,
    m: MechanicsParams,
    fb: FeedbackConfig,
    omega,
    observable: str = "i_fb",
) -> np.ndarray:
    """Spectral density S(w) of a solved observable.

    `observable` is one of i_fb, x_cavity, q_mech (all hermitian
    quadratures) or n_mech for the phonon-number density <b^dag(w) b(w')>.
    The result is checked real to 1e-12 of its scale.
    """
    if observable not in _PAIRS:
        raise ValidationError(f"unknown observable {observable!r}")
    left_key, right_key = _PAIRS[observable]
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    rows_pos = solve_rows(p, m, fb, omega)
    rows_neg = solve_rows(p, m, fb, -omega)
    c = correlator_matrix(m.n_th)
    s = np.einsum("nj,jk,nk->n", rows_pos[left_key], c, rows_neg[right_key])
    scale = np.max(np.abs(s)) if s.size else 0.0
    if scale and np.max(np.abs(s.imag)) > 1e-12 * scale:
        raise LoopcoolError("spectrum acquired an imaginary part; solver inconsistency")
    return s.real


# ---------------------------------------------------------------------------
# adaptive quadrature

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


def _gl_batch(fvec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    y = fvec(x.ravel()).reshape(x.shape)
    return (y @ _GL_WEIGHTS) * half


def adaptive_integral(
    fvec, edges: np.ndarray, rtol: float = 2e-4, max_rounds: int = 48
) -> float:
    """Globally adaptive panel integration with vectorized evaluation.

    Each round every unconverged panel is bisected; a panel is retired when
    its refinement error is below its share of the global budget.  The final
    sum is accumulated position-sorted with compensated summation so the
    result is independent of evaluation order.
    """
    a = np.asarray(edges[:-1], dtype=float)
    b = np.asarray(edges[1:], dtype=float)
    coarse = _gl_batch(fvec, a, b)
    done: list[tuple[float, float]] = []

    for _ in range(max_rounds):
        mid = 0.5 * (a + b)
        left = _gl_batch(fvec, a, mid)
        right = _gl_batch(fvec, mid, b)
        refined = left + right
        err = np.abs(coarse - refined)
        total = math.fsum(v for _, v in done) + math.fsum(refined.tolist())
        budget = rtol * abs(total)
        if math.fsum(err.tolist()) <= budget:
            for lo, val in zip(a, refined):
                done.append((lo, val))
            done.sort(key=lambda item: item[0])
            return math.fsum(v for _, v in done)
        keep = err <= budget / (4.0 * max(err.size, 1))
        for lo, val in zip(a[keep], refined[keep]):
            done.append((lo, val))
        a = np.concatenate([a[~keep], mid[~keep]])
        b = np.concatenate([mid[~keep], b[~keep]])
        coarse = np.concatenate([left[~keep], right[~keep]])
        order = np.argsort(a)
        a, b, coarse = a[order], b[order], coarse[order]
    raise ConvergenceError("quadrature did not converge within the refinement cap")


def _mechanical_linewidth_guess(
    p: CavityParams, m: MechanicsParams, fb: FeedbackConfig
) -> float:
    try:
        rates = cooling.scattering_rates(p, m, fb)
        gamma = m.gamma_m + abs(rates.gamma_opt)
    except LoopcoolError:
        gamma = m.gamma_m
    return max(gamma, m.gamma_m)


def _occupancy_edges(
    p: CavityParams, m: MechanicsParams, fb: FeedbackConfig
) -> np.ndarray:
    gamma_eff = _mechanical_linewidth_guess(p, m, fb)
    delta = abs(p.detuning)
    cutoff = 10.0 * (delta + m.omega_m)
    points = {-cutoff, cutoff, 0.0}
    for center in (-m.omega_m, m.omega_m):
        for w in (10.0 * gamma_eff, 300.0 * gamma_eff, 0.02 * m.omega_m):
            points.add(center - w)
            points.add(center + w)
    for center in (-delta, delta):
        points.add(center - 3.0 * p.kappa)
        points.add(center + 3.0 * p.kappa)
    edges = np.array(sorted(pt for pt in points if -cutoff <= pt <= cutoff))
    return edges


def phonon_occupancy(
    p: CavityParams,
    m: MechanicsParams,
    fb: FeedbackConfig,
    rtol: float = 2e-4,
    check_stability: bool = True,
) -> float:
    """Stationary phonon number n = (1/2 pi) * integral of S_{b^dag b}(w) dw.

    The quadrature grid seeds dense panels around the mechanical and cavity
    resonances (both signs) and refines adaptively to `rtol`.
    """
    if check_stability and not closed_loop_stability(p, m, fb):
        raise OptomechanicalInstabilityError(
            "closed loop unstable; no stationary occupancy"
        )
    c = correlator_matrix(m.n_th)

    def integrand(omega: np.ndarray) -> np.ndarray:
        rows_pos = solve_rows(p, m, fb, omega)
        rows_neg = solve_rows(p, m, fb, -omega)
        s = np.einsum("nj,jk,nk->n", rows_pos["b_conj"], c, rows_neg["b"])
        return s.real

    edges = _occupancy_edges(p, m, fb)
    return adaptive_integral(integrand, edges, rtol=rtol) / (2.0 * math.pi)


def closed_loop_stability(
    p: CavityParams, m: MechanicsParams, fb: FeedbackConfig
) -> bool:
    """Loop stability plus positive effective mechanical damping.

    The empty-cavity Nyquist verdict must pass, and a trial spectrum around
    the mechanical resonance must fit to a Lorentzian with gamma_eff > 0;
    if the trial fit is inconclusive the weak-coupling damping sign is used.
    """
    verdict = feedback.nyquist_stability(p, fb)
    if not verdict.stable:
        return False
    if m.G == 0.0:
        return True
    try:
        rates = cooling.scattering_rates(p, m, fb)
    except LoopcoolError:
        return False
    if rates.gamma_opt <= -m.gamma_m:
        return False
    try:
        spec = displacement_spectrum(p, m, fb, points=801, check_stability=False)
        fit = lorentzian_extract(spec)
        return fit.gamma_eff > 0.0
    except (FitError, LoopcoolError):
        return rates.gamma_opt > -m.gamma_m


def displacement_spectrum(
    p: CavityParams,
    m: MechanicsParams,
    fb: FeedbackConfig,
    band: tuple[float, float] | None = None,
    points: int = 2001,
    m_eff: float | None = None,
    check_stability: bool = True,
) -> Spectrum:
    """Spectrum of the mechanical quadrature q = b + b^dag on a band around
    the resonance.

    Natural (phonon) units by default; passing the effective mass converts
    to displacement units through x_zpf^2 = hbar / (2 m_eff omega_m).
    """
    if check_stability and not closed_loop_stability(p, m, fb):
        raise OptomechanicalInstabilityError("closed loop unstable")
    if band is None:
        gamma_eff = _mechanical_linewidth_guess(p, m, fb)
        half = max(30.0 * gamma_eff, 1e-4 * m.omega_m)
        band = (m.omega_m - half, m.omega_m + half)
    omega = np.linspace(band[0], band[1], points)
    values = observable_spectrum(p, m, fb, omega, "q_mech")
    if m_eff is not None:
        from scipy.constants import hbar

        values = values * hbar / (2.0 * m_eff * m.omega_m)
    return Spectrum(omega=omega, values=values)


@dataclass(frozen=True)
class LorentzFit:
    omega_eff: float
    gamma_eff: float
    area: float
    baseline: float
    residual: float


def lorentzian_extract(spectrum: Spectrum) -> LorentzFit:
    """Least-squares Lorentzian fit of a single dominant peak.

    Guards: the band must contain one interior peak, and any secondary
    local maximum must have prominence below 10% of the main one.
    """
    w = spectrum.omega
    s = spectrum.values
    baseline0 = float(np.median(np.sort(s)[: max(s.size // 4, 2)]))
    idx = int(np.argmax(s))
    if idx in (0, s.size - 1):
        raise FitError("no interior peak in band")
    prominence_main = s[idx] - baseline0
    if prominence_main <= 0:
        raise FitError("no peak above baseline")

    interior = s[1:-1]
    local_max = (interior > s[:-2]) & (interior >= s[2:])
    peak_idx = np.flatnonzero(local_max) + 1
    others = peak_idx[np.abs(peak_idx - idx) > 2]
    if others.size:
        second = float(np.max(s[others]) - baseline0)
        if second > 0.1 * prominence_main:
            raise FitError("secondary peak prominence above 10% of the main peak")

    half = baseline0 + prominence_main / 2.0
    above = np.flatnonzero(s >= half)
    width0 = max(float(w[above[-1]] - w[above[0]]), 4.0 * float(w[1] - w[0]))

    def residuals(x):
        h, w0, gamma, c = x
        lor = h * (gamma / 2.0) ** 2 / ((w - w0) ** 2 + (gamma / 2.0) ** 2)
        return lor + c - s

    x0 = np.array([prominence_main, float(w[idx]), width0, baseline0])
    scale = np.array([abs(prominence_main), abs(w[idx]) or 1.0, width0, abs(prominence_main)])
    result = least_squares(residuals, x0, x_scale=scale, max_nfev=2000)
    if not result.success or result.x[2] <= 0:
        raise FitError("ill-conditioned Lorentzian fit")
    h, w0, gamma, c = result.x
    return LorentzFit(
        omega_eff=float(w0),
        gamma_eff=float(gamma),
        area=float(h * math.pi * gamma / 2.0),
        baseline=float(c),
        residual=float(np.linalg.norm(result.fun)),
    )


def equipartition_temperature(
    spectrum: Spectrum,
    reference: Spectrum,
    t0: float,
    noise_floor: float = 0.0,
    reference_floor: float | None = None,
) -> float:
    """Effective temperature from integrated variances after floor
    subtraction: T = t0 * var(spectrum) / var(reference), both restricted
    to the overlapping band."""
    if reference_floor is None:
        reference_floor = noise_floor
    lo = max(spectrum.band[0], reference.band[0])
    hi = min(spectrum.band[1], reference.band[1])
    if hi <= lo:
        raise ValidationError("spectra share no frequency band")

    def _restricted_variance(spec: Spectrum, floor: float) -> float:
        sel = (spec.omega >= lo) & (spec.omega <= hi)
        if sel.sum() < 2:
            raise ValidationError("too few samples in the shared band")
        return float(np.trapezoid(spec.values[sel] - floor, spec.omega[sel]))

    var = _restricted_variance(spectrum, noise_floor)
    var_ref = _restricted_variance(reference, reference_floor)
    if var <= 0 or var_ref <= 0:
        raise ValidationError("negative variance after noise-floor subtraction")
    return t0 * var / var_ref
