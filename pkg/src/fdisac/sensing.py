"""Radar parameter estimation from the combined RF-chain receive grid.

Covariance-based MUSIC provides the DoAs; per-DoA quotient signals feed a
2-D likelihood search over the delay/Doppler bin grid, optionally refined
below bin resolution by a local zoomed evaluation of the same likelihood.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .arrays import ArrayConfig, steering_matrix, steering_vector
from .ofdm import OfdmGrid, OfdmParams
from .units import SPEED_OF_LIGHT


class SubspaceExhaustedError(ValueError):
    """Requested more sources than the combined signal dimension allows."""


class DegenerateReferenceError(ValueError):
    """Reference signal is zero everywhere; quotient undefined."""


@dataclass
class MusicSpectrum:
    """Pseudo-spectrum samples plus the extracted peaks.

    ``peaks`` holds up to the requested number of (angle, value) pairs sorted
    by value descending; fewer are returned when the spectrum has fewer local
    maxima.
    """

    angles: np.ndarray
    values: np.ndarray
    peaks: list


@dataclass
class SensingEstimate:
    """Estimated parameters of one target.

    ``peak_power`` is the squared likelihood at the claimed delay/Doppler
    bin; candidate DoAs that turn out to be spectral ghosts of a stronger
    target end up with noise-level values here.
    """

    doa: float
    delay: float
    doppler: float
    peak_power: float = float("nan")

    @property
    def range_m(self) -> float:
        return SPEED_OF_LIGHT * self.delay / 2.0

    def velocity_mps(self, wavelength: float) -> float:
        return self.doppler * wavelength / 2.0


@dataclass
class MatchedPair:
    """One estimate/truth association with its per-parameter errors."""

    target_index: int
    estimate_index: int
    doa_error: float
    range_error: float
    velocity_error: float
    rel_velocity_error: float


@dataclass
class Association:
    matches: list
    unmatched_targets: list
    unmatched_estimates: list


def sample_covariance(y_grid: OfdmGrid) -> np.ndarray:
    """Sample covariance (1/PQ) sum_pq y y^H over all grid cells."""
    m = y_grid.space_dim
    n_samples = y_grid.subcarriers * y_grid.symbols
    if n_samples == 0:
        raise ValueError("empty grid")
    if n_samples < m:
        raise ValueError("need at least as many grid cells as chains")
    flat = y_grid.data.reshape(-1, m)
    cov = flat.T @ flat.conj() / n_samples
    return (cov + cov.conj().T) / 2.0


def music_spectrum(cov: np.ndarray, w_rf: np.ndarray, k_targets: int,
                   array: ArrayConfig,
                   grid_step: float = np.deg2rad(0.1),
                   angle_limits=(-np.pi / 2, np.pi / 2),
                   refine: bool = True,
                   n_peaks: int | None = None) -> MusicSpectrum:
    """MUSIC pseudo-spectrum under hybrid analog combining.

    Eigendecomposes the chain-level covariance, takes the ``m_rf - k``
    weakest eigenvectors as the noise subspace ``U_n``, and evaluates
    ``S(theta) = ||W_rf^H a(theta)||^2 / ||U_n^H W_rf^H a(theta)||^2`` on the
    angle grid.  The numerator normalizes the combined steering manifold:
    without it, angles where the analog beam patterns have a common null
    produce spurious peaks regardless of the data (for a full-digital
    combiner the normalization is a constant and drops out).  Peaks are the
    ``k_targets`` largest local maxima, each refined by three-point
    parabolic interpolation on the log-spectrum when ``refine`` is set.
    """
    m_rf = cov.shape[0]
    if cov.shape != (m_rf, m_rf):
        raise ValueError("covariance must be square")
    if np.linalg.norm(cov - cov.conj().T) > 1e-8 * max(1.0, np.linalg.norm(cov)):
        raise ValueError("covariance must be Hermitian")
    if k_targets >= m_rf:
        raise SubspaceExhaustedError(
            f"k_targets={k_targets} leaves no noise subspace in {m_rf} chains")
    if w_rf.shape != (array.m_rx, m_rf):
        raise ValueError("analog combiner shape does not match covariance")

    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    u_noise = eigvecs[:, order[k_targets:]]

    angles = np.arange(angle_limits[0], angle_limits[1] + grid_step / 2,
                       grid_step)
    a_grid = steering_matrix(angles, array.m_rx, array.element_spacing,
                             array.wavelength)
    combined = a_grid.conj() @ w_rf
    proj = combined @ u_noise
    denom = np.maximum(np.sum(np.abs(proj) ** 2, axis=1), 1e-300)
    manifold = np.sum(np.abs(combined) ** 2, axis=1)
    values = manifold / denom

    wanted = k_targets if n_peaks is None else int(n_peaks)
    idx, _ = find_peaks(values)
    if idx.size:
        top = idx[np.argsort(values[idx])[::-1][:wanted]]
    else:
        top = np.array([], dtype=int)
    peaks = []
    logv = np.log10(values)
    for i in sorted(top, key=lambda j: -values[j]):
        angle = angles[i]
        value = values[i]
        if refine and 0 < i < len(angles) - 1:
            denom_p = logv[i - 1] - 2.0 * logv[i] + logv[i + 1]
            if denom_p < 0:
                delta = 0.5 * (logv[i - 1] - logv[i + 1]) / denom_p
                delta = float(np.clip(delta, -0.5, 0.5))
                angle = angles[i] + delta * grid_step
        peaks.append((float(angle), float(value)))
    return MusicSpectrum(angles=angles, values=values, peaks=peaks)


def quotient_signal(x_grid: OfdmGrid, y_grid: OfdmGrid, w_rf: np.ndarray,
                    doa: float, array: ArrayConfig,
                    guard_rel: float = 1e-9) -> np.ndarray:
    """Per-cell quotient of the combined receive grid and the DoA reference.

    The reference is ``g = a_rx(doa) a_tx^H(doa) x``; the quotient is the
    per-antenna ratio ``[W_rf y]_i / [g]_i`` averaged over antennas.  Because
    every entry of ``a_rx`` has the same modulus, that average reduces
    exactly to ``(a_rx^H W_rf y) / (a_tx^H x)``, which is how it is computed.
    Cells whose reference magnitude falls below ``guard_rel`` times the grid
    maximum are zeroed to keep steering nulls from blowing up the division.
    """
    a_rx = steering_vector(doa, array.m_rx, array.element_spacing,
                           array.wavelength)
    a_tx = steering_vector(doa, array.n_tx, array.element_spacing,
                           array.wavelength)
    ref = x_grid.data @ a_tx.conj()                # (P, Q)
    combined = y_grid.data @ (w_rf.conj().T @ a_rx).conj()
    mags = np.abs(ref)
    peak = mags.max()
    if peak == 0.0:
        raise DegenerateReferenceError("reference signal is identically zero")
    mask = mags >= guard_rel * peak
    z = np.zeros_like(ref)
    np.divide(combined, ref, out=z, where=mask)
    return z


def delay_doppler_map(z: np.ndarray) -> np.ndarray:
    """2-D likelihood A(n, m) of the quotient signal on the full bin grid.

    ``A(n, m) = sum_p (sum_q z e^{-j2pi qm/Q}) e^{+j2pi pn/P}``; columns are
    Doppler indices in FFT order (wrap negative ``m`` with ``m + Q``).
    """
    p = z.shape[0]
    return np.fft.ifft(np.fft.fft(z, axis=1), axis=0) * p


def _zoom_peak(z: np.ndarray, n0: int, m0: int, levels: int = 4) -> tuple:
    """Refine the likelihood peak to fractional bins by local re-evaluation."""
    n_p, n_q = z.shape
    p = np.arange(n_p)
    q = np.arange(n_q)
    nu, mu = float(n0), float(m0)
    span = 0.5
    for _ in range(levels):
        nus = nu + np.linspace(-span, span, 9)
        mus = mu + np.linspace(-span, span, 9)
        e_p = np.exp(2j * np.pi * np.outer(p, nus) / n_p)
        e_q = np.exp(-2j * np.pi * np.outer(q, mus) / n_q)
        local = np.abs(e_p.T @ (z @ e_q)) ** 2
        i, j = np.unravel_index(np.argmax(local), local.shape)
        nu, mu = float(nus[i]), float(mus[j])
        span /= 4.0
    return nu, mu


def estimate_delay_doppler(x_grid: OfdmGrid, y_grid: OfdmGrid,
                           w_rf: np.ndarray, doas, ofdm: OfdmParams,
                           array: ArrayConfig, refine: bool = True,
                           guard_rel: float = 1e-9,
                           claim_radius: int = 2) -> list:
    """Estimate (delay, Doppler) for each DoA from the combined receive grid.

    For every DoA the quotient signal is transformed onto the delay/Doppler
    bin grid (``n`` in [0, P), ``m`` in [-Q/2, Q/2)) and the squared
    likelihood maximized.  With ``refine`` the argmax is polished to
    fractional bins; otherwise the estimates are exactly the bin centers
    ``n*/(P*df)`` and ``m*/(Q*Ts)``.

    DoAs closer than an analog beamwidth leak into each other's quotients,
    so two searches can lock onto one physical peak.  A tone is always
    strongest in the map of the DoA it belongs to (the matched reference
    has the largest coherent gain), so bins are assigned to DoAs greedily
    by descending likelihood across all maps.  Each claimed tone is
    subtracted from the remaining quotients (least-squares on-bin cisoid)
    and its ``claim_radius``-bin neighborhood masked, so later, weaker
    claims cannot land on a stronger tone's mainlobe or sidelobes.  With
    ``claim_radius=0`` the de-duplication is disabled and every DoA takes
    the global argmax of its own map.
    """
    if not len(doas):
        raise ValueError("need at least one DoA")
    n_p, n_q = x_grid.subcarriers, x_grid.symbols
    quotients = [quotient_signal(x_grid, y_grid, w_rf, doa, array, guard_rel)
                 for doa in doas]
    n_maps = len(doas)

    results: list = [None] * n_maps
    if claim_radius <= 0:
        for k, z in enumerate(quotients):
            amap = np.abs(delay_doppler_map(z)) ** 2
            bin_ = np.unravel_index(int(np.argmax(amap)), amap.shape)
            results[k] = (bin_, float(amap.max()), z)
    else:
        maps = [delay_doppler_map(z) for z in quotients]
        masked = [np.abs(a) ** 2 for a in maps]
        claimed = np.zeros((n_p, n_q), dtype=bool)
        p_idx = np.arange(n_p)
        q_idx = np.arange(n_q)
        pending = set(range(n_maps))
        while pending:
            best_k, best_val, best_bin = -1, -1.0, (0, 0)
            for k in sorted(pending):
                flat = int(np.argmax(masked[k]))
                val = float(masked[k].flat[flat])
                if val > best_val:
                    best_k, best_val = k, val
                    best_bin = np.unravel_index(flat, masked[k].shape)
            if best_val <= 0.0:
                # grid exhausted; leftovers take their own raw argmax
                for k in sorted(pending):
                    amap = np.abs(delay_doppler_map(quotients[k])) ** 2
                    bin_ = np.unravel_index(int(np.argmax(amap)), amap.shape)
                    results[k] = (bin_, float(amap.max()), quotients[k])
                break
            n0, m0 = best_bin
            results[best_k] = (best_bin, best_val, quotients[best_k])
            pending.discard(best_k)
            rows = np.arange(n0 - claim_radius, n0 + claim_radius + 1) % n_p
            cols = np.arange(m0 - claim_radius, m0 + claim_radius + 1) % n_q
            claimed[np.ix_(rows, cols)] = True
            tone = np.outer(np.exp(-2j * np.pi * p_idx * n0 / n_p),
                            np.exp(2j * np.pi * q_idx * m0 / n_q))
            for k in pending:
                quotients[k] = quotients[k] - (maps[k][n0, m0] / (n_p * n_q)) * tone
                maps[k] = delay_doppler_map(quotients[k])
                masked[k] = np.where(claimed, 0.0, np.abs(maps[k]) ** 2)

    estimates = []
    for k, doa in enumerate(doas):
        (n0, m_idx), val, z = results[k]
        m0 = m_idx if m_idx < (n_q + 1) // 2 else m_idx - n_q
        if refine:
            nu, mu = _zoom_peak(z, int(n0), int(m0))
            nu %= n_p
            mu = (mu + n_q / 2) % n_q - n_q / 2
        else:
            nu, mu = float(n0), float(m0)
        estimates.append(SensingEstimate(
            doa=float(doa),
            delay=nu / (n_p * ofdm.subcarrier_spacing),
            doppler=mu / (n_q * ofdm.symbol_duration),
            peak_power=val))
    return estimates


def refine_doa_matched_field(x_grid: OfdmGrid, y_grid: OfdmGrid,
                             w_rf: np.ndarray, estimate: SensingEstimate,
                             ofdm: OfdmParams, array: ArrayConfig,
                             iterations: int = 2,
                             grid_step: float = np.deg2rad(0.1),
                             angle_limits=(-np.pi / 2, np.pi / 2)) -> float:
    """Polish a DoA by matched-field search at the estimated delay/Doppler.

    Correlating the chain-level grid against the tone's phase history and
    transmit reference isolates that one target's spatial signature with the
    full time-frequency integration gain; its direction is then the peak of
    ``|b(theta)^H g|^2 / ||b(theta)||^2`` over the combined manifold
    ``b = W_rf^H a``.  The transmit reference enters only as a scalar
    weight, so an initial DoA off by a beamwidth still converges.
    """
    n_p, n_q = x_grid.subcarriers, x_grid.symbols
    p = np.arange(n_p)
    q = np.arange(n_q)
    tone = np.outer(
        np.exp(-2j * np.pi * p * estimate.delay * ofdm.subcarrier_spacing),
        np.exp(2j * np.pi * q * ofdm.symbol_duration * estimate.doppler))
    angles = np.arange(angle_limits[0], angle_limits[1] + grid_step / 2,
                       grid_step)
    manifold = (steering_matrix(angles, array.m_rx, array.element_spacing,
                                array.wavelength).conj() @ w_rf)
    norms = np.maximum(np.sum(np.abs(manifold) ** 2, axis=1), 1e-300)

    doa = estimate.doa
    for _ in range(iterations):
        a_tx = steering_vector(doa, array.n_tx, array.element_spacing,
                               array.wavelength)
        ref = x_grid.data @ a_tx.conj()
        g = np.tensordot(y_grid.data, (tone * ref).conj(), axes=([0, 1], [0, 1]))
        values = np.abs(manifold @ g) ** 2 / norms
        i = int(np.argmax(values))
        doa = float(angles[i])
        if 0 < i < len(angles) - 1:
            logv = np.log10(np.maximum(values[i - 1:i + 2], 1e-300))
            denom = logv[0] - 2.0 * logv[1] + logv[2]
            if denom < 0:
                delta = float(np.clip(0.5 * (logv[0] - logv[2]) / denom,
                                      -0.5, 0.5))
                doa += delta * grid_step
    return doa


def associate_estimates(estimates, targets, wavelength: float,
                        max_doa_error: float | None = None) -> Association:
    """Greedy nearest-DoA matching of estimates to ground-truth targets.

    Pairs are taken in order of increasing absolute DoA error, each estimate
    and target used at most once; pairs beyond ``max_doa_error`` (radians)
    stay unmatched.  The matching depends only on the estimate values, not
    their order.
    """
    pairs = []
    for ti, t in enumerate(targets):
        for ei, e in enumerate(estimates):
            err = abs(e.doa - t.doa)
            pairs.append((err, ti, e.doa, ei))
    pairs.sort()
    used_t, used_e = set(), set()
    matches = []
    for err, ti, _, ei in pairs:
        if ti in used_t or ei in used_e:
            continue
        if max_doa_error is not None and err > max_doa_error:
            break
        t, e = targets[ti], estimates[ei]
        v_true = t.velocity_mps
        v_est = e.velocity_mps(wavelength)
        v_err = abs(v_est - v_true)
        rel = v_err / abs(v_true) if v_true != 0.0 else float("inf")
        matches.append(MatchedPair(
            target_index=ti, estimate_index=ei, doa_error=err,
            range_error=abs(e.range_m - t.range_m),
            velocity_error=v_err, rel_velocity_error=rel))
        used_t.add(ti)
        used_e.add(ei)
    return Association(
        matches=matches,
        unmatched_targets=[i for i in range(len(targets)) if i not in used_t],
        unmatched_estimates=[i for i in range(len(estimates)) if i not in used_e],
    )


def spectrum_to_csv(spectrum: MusicSpectrum, path) -> None:
    """Dump (angle_deg, value) rows of a pseudo-spectrum for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_deg", "value"])
        for angle, value in zip(spectrum.angles, spectrum.values):
            writer.writerow([repr(float(np.rad2deg(angle))), repr(float(value))])
