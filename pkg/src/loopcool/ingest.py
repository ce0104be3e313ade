"""Loading measured data: open-loop Bode traces and displacement spectra,
plus the cavity/electronics decomposition of a measured loop response.

File conventions: CSV, `#` starts a comment line, frequencies in Hz,
magnitudes in dB (20*log10), phases in rad.  Traces are one-sided
(positive frequencies); negative-frequency values always come from the
conjugate-reflection rule and are never stored.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import BandError, ParseError, ValidationError
from .model import CavityParams, Port, Tabulated, TransferCurve
from .spectra import TWO_PI, Spectrum


@dataclass(frozen=True)
class BodeTrace:
    """Measured open-loop response: (frequency Hz, magnitude dB, phase rad).

    Phase is stored unwrapped; magnitude_db = 20*log10|T|.
    """

    frequency_hz: np.ndarray
    magnitude_db: np.ndarray
    phase_rad: np.ndarray
    source: str = "<memory>"

    def __post_init__(self):
        f = np.asarray(self.frequency_hz, dtype=float)
        if f.size and not np.all(np.diff(f) > 0):
            raise ValidationError("trace frequencies must strictly increase")
        object.__setattr__(self, "frequency_hz", f)
        object.__setattr__(self, "magnitude_db", np.asarray(self.magnitude_db, float))
        object.__setattr__(
            self, "phase_rad", np.unwrap(np.asarray(self.phase_rad, float))
        )

    def values(self) -> np.ndarray:
        return 10.0 ** (self.magnitude_db / 20.0) * np.exp(1j * self.phase_rad)

    def __len__(self) -> int:
        return int(self.frequency_hz.size)


def _read_rows(path_or_stream, expected_header: tuple[str, ...], source: str):
    if hasattr(path_or_stream, "read"):
        fh = path_or_stream
        close = False
    else:
        fh = open(path_or_stream, "r")
        close = True
        source = str(path_or_stream)
    try:
        rows = []
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                cols = tuple(c.strip() for c in line.split(","))
                if cols != expected_header:
                    raise ParseError(
                        f"{source}:{lineno}: expected header "
                        f"{','.join(expected_header)!r}, got {line!r}"
                    )
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != len(expected_header) or any(
                not part.strip() for part in parts
            ):
                raise ParseError(f"{source}:{lineno}: malformed row {line!r}")
            try:
                rows.append(([float(part) for part in parts], lineno))
            except ValueError:
                raise ParseError(f"{source}:{lineno}: malformed row {line!r}") from None
        if not header_seen:
            raise ParseError(f"{source}: empty file")
        if not rows:
            raise ParseError(f"{source}: no data rows")
        return rows, source
    finally:
        if close:
            fh.close()


def _check_monotone(values, rows, source, column):
    for k in range(1, len(values)):
        if values[k] <= values[k - 1]:
            lineno = rows[k][1]
            raise ParseError(
                f"{source}:{lineno}: non-monotone {column} "
                f"({values[k]:g} after {values[k - 1]:g})"
            )


def parse_bode(path_or_stream) -> BodeTrace:
    """Read a network-analyzer trace: header frequency_hz,magnitude_db,phase_rad."""
    rows, source = _read_rows(
        path_or_stream, ("frequency_hz", "magnitude_db", "phase_rad"), "<stream>"
    )
    f = [r[0][0] for r in rows]
    _check_monotone(f, rows, source, "frequency")
    return BodeTrace(
        frequency_hz=np.array(f),
        magnitude_db=np.array([r[0][1] for r in rows]),
        phase_rad=np.array([r[0][2] for r in rows]),
        source=source,
    )


def parse_spectrum(path_or_stream) -> Spectrum:
    """Read a sampled PSD: header frequency_hz,psd; values must be >= 0."""
    rows, source = _read_rows(path_or_stream, ("frequency_hz", "psd"), "<stream>")
    f = [r[0][0] for r in rows]
    _check_monotone(f, rows, source, "frequency")
    for (values, lineno) in rows:
        if values[1] < 0:
            raise ParseError(f"{source}:{lineno}: negative PSD value {values[1]:g}")
    return Spectrum(
        omega=TWO_PI * np.array(f), values=np.array([r[0][1] for r in rows])
    )


def cavity_response(
    p: CavityParams, port: Port, omega, eta: float = 1.0
) -> np.ndarray:
    """Optical part of the open-loop response for the given detected port.

    Transmission: sqrt(eta*kappa0*kappa1)/kappa * chi(w) * e^{-i theta}
    (the resonant cavity-times-filter factorization).  Reflection has an
    instantaneous path from the modulator straight to the detector, so the
    full quadrature response 2*sqrt(eta)*zeta_out at phi = 0 is used.
    """
    omega = np.asarray(omega, dtype=float)
    if port is Port.TRANSMISSION:
        theta, _ = model.input_phase_shifts(p)
        pref = math.sqrt(eta * p.kappa0 * p.kappa1) / p.kappa
        return pref * model.cavity_susceptibility(p, omega) * cmath.exp(-1j * theta)
    fb = model.FeedbackConfig(port=Port.REFLECTION, phi=0.0, eta=eta)
    return 2.0 * math.sqrt(eta) * np.asarray(model.zeta_out(p, fb, omega))


def compose_open_loop(
    gain, p: CavityParams, port: Port, frequency_hz, eta: float = 1.0
) -> BodeTrace:
    """Synthesize the trace a network analyzer would record for a known
    electronic filter behind the given cavity/port."""
    f = np.asarray(frequency_hz, dtype=float)
    omega = TWO_PI * f
    t = cavity_response(p, port, omega, eta) * np.asarray(gain(omega))
    return BodeTrace(
        frequency_hz=f,
        magnitude_db=20.0 * np.log10(np.abs(t)),
        phase_rad=np.unwrap(np.angle(t)),
        source="<synthetic>",
    )


def decompose_electronic_filter(
    trace: BodeTrace,
    p: CavityParams,
    fb_port: Port = Port.TRANSMISSION,
    eta: float = 1.0,
    min_response: float = 1e-6,
) -> Tabulated:
    """Divide the measured open-loop response by the cavity part, leaving
    the electronic filter g_fb as a tabulated curve.

    The detection efficiency cannot be separated from electronic gain by
    this division; with the default eta = 1 the returned filter absorbs
    sqrt(eta).  Samples where the cavity response magnitude falls below
    `min_response` are dropped with a warning; losing more than 10% of the
    trace is an error.
    """
    omega = TWO_PI * trace.frequency_hz
    response = cavity_response(p, fb_port, omega, eta)
    keep = np.abs(response) >= min_response
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        warnings.warn(
            f"dropped {dropped} samples with cavity response below {min_response:g}",
            stacklevel=2,
        )
    if dropped > 0.1 * len(trace):
        raise ValidationError(
            f"cavity response too small on {dropped}/{len(trace)} samples"
        )
    g = trace.values()[keep] / response[keep]
    return Tabulated(TransferCurve(omega[keep], g))


def delay_from_phase(
    filt: Tabulated, band: tuple[float, float], min_samples: int = 10
) -> float:
    """Loop delay from the slope of the filter's unwrapped phase over the
    band (rad/s): a pure delay line e^{i w tau} fits slope +tau, constant
    offsets land in the intercept."""
    curve = filt.curve
    sel = (curve.omega >= band[0]) & (curve.omega <= band[1])
    if int(sel.sum()) < min_samples:
        raise BandError(
            f"band too sparse: {int(sel.sum())} samples, need {min_samples}"
        )
    slope, _ = np.polyfit(curve.omega[sel], curve.unwrapped_phase[sel], 1)
    return float(slope)


def phase_flatness(filt: Tabulated, band: tuple[float, float]) -> float:
    """RMS of the unwrapped phase residual about its best line over the
    band; a diagnostic for using the wrong port's cavity form (a correct
    decomposition of a delay-line filter is flat to rounding)."""
    curve = filt.curve
    sel = (curve.omega >= band[0]) & (curve.omega <= band[1])
    if int(sel.sum()) < 3:
        raise BandError("band too sparse for a flatness estimate")
    w = curve.omega[sel]
    ph = curve.unwrapped_phase[sel]
    coeffs = np.polyfit(w, ph, 1)
    return float(np.sqrt(np.mean((ph - np.polyval(coeffs, w)) ** 2)))
