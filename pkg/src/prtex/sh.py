"""Real spherical-harmonics numerics.

Basis evaluation, projection, reconstruction, the sparse tripling tensor,
the fixed-light product matrix, and zonal-harmonic lobe machinery (clamped
cosine, Phong). Everything here is pure: objects are immutable after
construction and safe to share across workers.

Conventions: real SH in the all-positive graphics convention (no
Condon-Shortley sign), flat index i = l*(l+1) + m, so the first four basis
functions are 1/(2*sqrt(pi)) and sqrt(3/(4*pi)) * (y, z, x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_BAND = 10

_norm_cache: dict[int, np.ndarray] = {}
_phong_cache: dict[tuple[float, int], np.ndarray] = {}


def band_coeff_count(band: int) -> int:
    """Number of coefficients k = band**2 for bands 0..band-1."""
    return band * band


def _check_band(band: int, limit: int = MAX_BAND) -> None:
    if not (1 <= band <= limit):
        raise ValueError(f"band must be in [1, {limit}], got {band}")


def _check_unit(dir, tol: float = 1e-6):
    d = np.asarray(dir, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError("direction must have 3 components")
    n2 = float(d @ d)
    if abs(n2 - 1.0) > 2.0 * tol:
        raise ValueError(f"direction not unit length (|d|^2 = {n2})")
    return d


def _normalizations(band: int) -> np.ndarray:
    """K_lm = sqrt((2l+1)/(4pi) * (l-|m|)!/(l+|m|)!) for flat indices 0..k-1."""
    cached = _norm_cache.get(band)
    if cached is not None:
        return cached
    k = band * band
    out = np.empty(k)
    for l in range(band):
        for m in range(-l, l + 1):
            am = abs(m)
            out[l * (l + 1) + m] = math.sqrt(
                (2 * l + 1) / (4.0 * math.pi)
                * math.factorial(l - am) / math.factorial(l + am)
            )
    out.flags.writeable = False
    _norm_cache[band] = out
    return out


@dataclass(frozen=True)
class SHVector:
    """A band-limited spherical function: k = band**2 real coefficients."""

    band: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_band(self.band)
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (self.band * self.band,):
            raise ValueError(
                f"expected {self.band * self.band} coefficients, got {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("SH coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __mul__(self, s: float) -> "SHVector":
        return SHVector(self.band, self.coeffs * float(s))

    __rmul__ = __mul__

    def __add__(self, other: "SHVector") -> "SHVector":
        if other.band != self.band:
            raise ValueError("band mismatch")
        return SHVector(self.band, self.coeffs + other.coeffs)


@dataclass(frozen=True)
class TriplingTensor:
    """Sparse tau_ijk = integral of y_i*y_j*y_k over the sphere.

    Stored symmetric-complete: every nonzero permutation of (i, j, k) is
    present, so contractions can run over the raw entry arrays directly.
    """

    band: int
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.values)

    def entries(self):
        """Iterate (i, j, k, value) tuples."""
        return zip(self.i.tolist(), self.j.tolist(), self.k.tolist(),
                   self.values.tolist())

    def dense(self) -> np.ndarray:
        n = self.band * self.band
        out = np.zeros((n, n, n))
        out[self.i, self.j, self.k] = self.values
        return out


@dataclass(frozen=True)
class ProductMatrix:
    """Fixed-light matrix M with M[i, k] = sum_j tau_ijk * L_j."""

    band: int
    data: np.ndarray

    def __post_init__(self):
        n = self.band * self.band
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (n, n):
            raise ValueError(f"expected {n}x{n} matrix, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("product matrix entries must be finite")
        object.__setattr__(self, "data", d)


class SphereQuadrature:
    """Deterministic product rule on the sphere.

    Gauss-Legendre nodes in cos(theta) crossed with a uniform midpoint rule
    in phi. Exact for spherical polynomials up to ``degree``; weights sum
    to 4*pi.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        n_theta = max(1, (degree + 2) // 2)
        n_phi = max(3, degree + 1)
        z, wz = np.polynomial.legendre.leggauss(n_theta)
        phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
        zz = np.repeat(z, n_phi)
        pp = np.tile(phi, n_theta)
        r = np.sqrt(np.maximum(0.0, 1.0 - zz * zz))
        self.degree = degree
        self.dirs = np.column_stack([r * np.cos(pp), r * np.sin(pp), zz])
        self.weights = np.repeat(wz, n_phi) * (2.0 * math.pi / n_phi)

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


def default_rule(band: int, factors: int = 2) -> SphereQuadrature:
    """Rule exact for products of ``factors`` band-limited functions."""
    return SphereQuadrature(factors * (band - 1))


def eval_basis_batch(dirs: np.ndarray, band: int) -> np.ndarray:
    """Evaluate all k basis functions at each row of ``dirs``.

    dirs: (n, 3) array of unit vectors. Returns (n, k). Uses the standard
    stable recurrences: P^m_m ascent, then l-ascent at fixed m, with
    sin^m(theta)*cos/sin(m*phi) built from (x + i*y)^m so the poles need no
    special casing.
    """
    _check_band(band)
    d = np.asarray(dirs, dtype=np.float64)
    squeeze = d.ndim == 1
    if squeeze:
        d = d[None, :]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    n = len(d)
    k = band * band
    out = np.empty((n, k))
    norm = _normalizations(band)
    sqrt2 = math.sqrt(2.0)

    # cos_m = sin^m(theta) cos(m phi), sin_m likewise; updated in the m loop
    cos_m = np.ones(n)
    sin_m = np.zeros(n)
    for m in range(band):
        if m > 0:
            cos_m, sin_m = x * cos_m - y * sin_m, x * sin_m + y * cos_m
        # p = P_l^m(z) / sin^m(theta), polynomial in z
        p_prev = np.zeros(n)
        p = np.full(n, float(_double_factorial(2 * m - 1)))
        for l in range(m, band):
            i0 = l * (l + 1)
            if m == 0:
                out[:, i0] = norm[i0] * p
            else:
                out[:, i0 + m] = sqrt2 * norm[i0 + m] * p * cos_m
                out[:, i0 - m] = sqrt2 * norm[i0 - m] * p * sin_m
            if l + 1 < band:
                if l == m:
                    p_prev, p = p, z * (2 * m + 1) * p
                else:
                    p_prev, p = p, ((2 * l + 1) * z * p - (l + m) * p_prev) / (l + 1 - m)
    return out[0] if squeeze else out


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def eval_basis(dir, band: int) -> SHVector:
    """Basis values y_0..y_{k-1} at a unit direction."""
    d = _check_unit(dir)
    _check_band(band)
    return SHVector(band, eval_basis_batch(d, band))


def project(f, band: int, rule: SphereQuadrature | None = None) -> SHVector:
    """Project a spherical scalar function onto the band-limited basis.

    ``f`` is called with an (n, 3) array of unit directions and must return
    n finite values. The default rule is dense enough for smooth functions;
    pass a higher-degree rule for integrands with kinks.
    """
    _check_band(band)
    if rule is None:
        rule = SphereQuadrature(max(2 * (band - 1), 16))
    vals = np.asarray(f(rule.dirs), dtype=np.float64)
    if vals.shape != (len(rule),):
        raise ValueError("function handle must return one value per direction")
    bad = ~np.isfinite(vals)
    if bad.any():
        where = rule.dirs[int(np.argmax(bad))]
        raise ValueError(f"function returned non-finite value at direction {where}")
    basis = eval_basis_batch(rule.dirs, band)
    return SHVector(band, basis.T @ (rule.weights * vals))


def reconstruct(sh: SHVector, dir) -> float:
    """Band-limited reconstruction: dot(coeffs, basis(dir))."""
    d = _check_unit(dir)
    return float(sh.coeffs @ eval_basis_batch(d, sh.band))


def reconstruct_batch(sh: SHVector, dirs: np.ndarray) -> np.ndarray:
    return eval_basis_batch(dirs, sh.band) @ sh.coeffs


PRUNE_THRESHOLD = 1e-8

_tensor_cache: dict[int, TriplingTensor] = {}


def compute_tripling_tensor(band: int, rule: SphereQuadrature | None = None) -> TriplingTensor:
    """Tabulate tau_ijk by spherical quadrature exact for the integrand.

    The integrand y_i*y_j*y_k has polynomial degree 3*(band-1); the default
    rule is built to that exactness. Entries below ``PRUNE_THRESHOLD`` in
    magnitude are dropped.
    """
    _check_band(band)
    needed = 3 * (band - 1)
    if rule is None:
        if band <= 6:
            cached = _tensor_cache.get(band)
            if cached is not None:
                return cached
        rule = SphereQuadrature(needed)
    elif rule.degree < needed:
        raise ValueError(
            f"quadrature exact to degree {rule.degree} is insufficient for "
            f"band {band} (needs {needed})"
        )
    basis = eval_basis_batch(rule.dirs, band)
    dense = np.einsum("n,ni,nj,nk->ijk", rule.weights, basis, basis, basis,
                      optimize=True)
    i, j, k = np.nonzero(np.abs(dense) >= PRUNE_THRESHOLD)
    tensor = TriplingTensor(band, i.astype(np.int32), j.astype(np.int32),
                            k.astype(np.int32), dense[i, j, k])
    for arr in (tensor.i, tensor.j, tensor.k, tensor.values):
        arr.flags.writeable = False
    if band <= 6:
        _tensor_cache[band] = tensor
    return tensor


def triple_product(t: SHVector, light: SHVector, tau: TriplingTensor) -> SHVector:
    """Project the pointwise product of two band-limited functions.

    result_k = sum over stored entries of tau_ijk * t_i * light_j.
    """
    if t.band != light.band or t.band != tau.band:
        raise ValueError("band mismatch")
    prod = tau.values * t.coeffs[tau.i] * light.coeffs[tau.j]
    out = np.bincount(tau.k, weights=prod, minlength=t.band * t.band)
    return SHVector(t.band, out)


def product_matrix(light: SHVector, tau: TriplingTensor) -> ProductMatrix:
    """Fold a fixed light into the tensor: M[i, k] = sum_j tau_ijk * L_j."""
    if light.band != tau.band:
        raise ValueError("band mismatch")
    n = tau.band * tau.band
    flat = np.bincount(tau.i.astype(np.int64) * n + tau.k,
                       weights=tau.values * light.coeffs[tau.j],
                       minlength=n * n)
    return ProductMatrix(tau.band, flat.reshape(n, n))


def apply_product_matrix(m: ProductMatrix, t: SHVector) -> SHVector:
    """result_k = sum_i M[i, k] * t_i; exactly k*k multiply-adds."""
    if m.band != t.band:
        raise ValueError("band mismatch")
    return SHVector(t.band, t.coeffs @ m.data)


def zh_expand(zonal, axis, band: int) -> SHVector:
    """Rotate a zonal (m = 0) profile so its symmetry axis is ``axis``.

    coeffs_{l,m} = sqrt(4pi/(2l+1)) * zonal_l * y_{l,m}(axis).
    """
    _check_band(band)
    z = np.asarray(zonal, dtype=np.float64)
    if z.shape != (band,):
        raise ValueError(f"expected {band} zonal values, got {z.shape}")
    a = _check_unit(axis)
    basis = eval_basis_batch(a, band)
    ls = np.repeat(np.arange(band), 2 * np.arange(band) + 1)
    scale = np.sqrt(4.0 * math.pi / (2 * ls + 1))
    return SHVector(band, scale * z[ls] * basis)


def clamped_cosine_zonal(band: int) -> np.ndarray:
    """Zonal projection of max(cos(theta), 0), by 1-D Gauss-Legendre."""
    u, w = np.polynomial.legendre.leggauss(4 * band + 8)
    u = 0.5 * (u + 1.0)  # map to [0, 1]
    w = 0.5 * w
    basis = eval_basis_batch(np.column_stack(
        [np.sqrt(1 - u * u), np.zeros_like(u), u]), band)
    zonal_idx = np.arange(band) * (np.arange(band) + 1)
    return 2.0 * math.pi * (basis[:, zonal_idx].T @ (w * u))


def _legendre_power_moments(s: float, band: int) -> np.ndarray:
    """integral_0^1 u^s P_l(u) du for l = 0..band-1, in closed form.

    Combining the Legendre three-term recurrence with integration by parts
    gives the two-step recurrence I_{l+1} = (s + 1 - l) / (s + l + 2) * I_{l-1}
    with seeds I_0 = 1/(s+1), I_1 = 1/(s+2); it is exact for any real s > 0
    and involves no large intermediates.
    """
    out = np.empty(band)
    out[0] = 1.0 / (s + 1.0)
    if band > 1:
        out[1] = 1.0 / (s + 2.0)
    for l in range(1, band - 1):
        out[l + 1] = (s + 1.0 - l) / (s + l + 2.0) * out[l - 1]
    return out


def phong_zonal(exponent: float, band: int) -> np.ndarray:
    """Zonal projection of the normalized Phong lobe ((s+1)/(2pi))*cos^s.

    rho_l = (s+1) * K_l0 * integral_0^1 u^s P_l(u) du, with the moment in
    closed form so any exponent >= 1 is exact to machine precision. Cached
    per (exponent, band). The DC response is exactly 1/(2*sqrt(pi)), i.e.
    convolution with this lobe preserves the spherical mean.
    """
    if exponent < 1.0:
        raise ValueError(f"Phong exponent must be >= 1, got {exponent}")
    key = (float(exponent), band)
    cached = _phong_cache.get(key)
    if cached is not None:
        return cached
    ls = np.arange(band)
    k_l0 = np.sqrt((2 * ls + 1) / (4.0 * math.pi))
    rho = (exponent + 1.0) * k_l0 * _legendre_power_moments(float(exponent), band)
    rho.flags.writeable = False
    _phong_cache[key] = rho
    return rho


def convolution_scale(exponent: float, band: int) -> np.ndarray:
    """Per-coefficient scale for convolution with the Phong lobe."""
    rho = phong_zonal(exponent, band)
    ls = np.repeat(np.arange(band), 2 * np.arange(band) + 1)
    return np.sqrt(4.0 * math.pi / (2 * ls + 1)) * rho[ls]


def convolve_phong(env: SHVector, exponent: float) -> SHVector:
    """Convolve a spherical function with the normalized Phong lobe.

    Per-degree scaling by sqrt(4pi/(2l+1)) * rho_l(exponent); evaluating the
    result at the reflection direction gives the glossy response.
    """
    return SHVector(env.band, env.coeffs * convolution_scale(exponent, env.band))
