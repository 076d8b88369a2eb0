"""Cubic real and Fourier volumes, the 3D transform pair and discrete gradients.

Conventions
-----------
* Real-space origin is the voxel ``(n/2, n/2, n/2)``; rotations act about it.
* Fourier arrays are stored *centered*: array index ``i`` holds signed
  frequency ``i - n/2``, so frequencies run over ``[-n/2, n/2)``.
* ``fft3`` is unnormalized, ``ifft3`` carries the ``1/L`` factor
  (``L = n**3``).  Plancherel then reads ``sum|x|^2 = sum|X|^2 / L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NonHermitianInput, ValidationError

HERMITIAN_RTOL = 1e-9


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_side(n: int) -> None:
    if n < 4 or n % 2:
        raise ValidationError(f"side_n must be even and >= 4, got {n}")


@dataclass(frozen=True)
class Volume3D:
    """Real density on a cubic grid, indexed ``[i, j, k]``."""

    data: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or len(set(a.shape)) != 1:
            raise ValidationError(f"volume must be cubic, got shape {a.shape}")
        _check_side(a.shape[0])
        if np.iscomplexobj(a):
            raise ValidationError("Volume3D holds real values")
        if not np.all(np.isfinite(a)):
            raise ValidationError("volume contains non-finite values")
        if not self.voxel_size > 0:
            raise ValidationError("voxel_size must be positive")
        object.__setattr__(self, "data", _frozen(a, np.float64))

    @property
    def side_n(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, side_n: int, voxel_size: float = 1.0) -> "Volume3D":
        return cls(np.zeros((side_n,) * 3), voxel_size)


@dataclass(frozen=True)
class FourierVolume:
    """Complex 3D spectrum in centered storage (see module docstring)."""

    data: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or len(set(a.shape)) != 1:
            raise ValidationError(f"Fourier volume must be cubic, got shape {a.shape}")
        _check_side(a.shape[0])
        if not np.all(np.isfinite(a)):
            raise ValidationError("Fourier volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(a, np.complex128))

    @property
    def side_n(self) -> int:
        return self.data.shape[0]

    def hermitian_residual(self) -> float:
        """Relative deviation from ``F(-k) = conj F(k)``."""
        return hermitian_residual(self.data)


@dataclass(frozen=True)
class GradientField:
    """Backward differences along the three axes, stacked as ``(3, n, n, n)``."""

    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.components, dtype=np.float64)
        if a.ndim != 4 or a.shape[0] != 3:
            raise ValidationError("gradient field must have shape (3, n, n, n)")
        if not np.all(np.isfinite(a)):
            raise ValidationError("gradient field contains non-finite values")
        object.__setattr__(self, "components", _frozen(a, np.float64))

    @property
    def d1(self) -> np.ndarray:
        return self.components[0]

    @property
    def d2(self) -> np.ndarray:
        return self.components[1]

    @property
    def d3(self) -> np.ndarray:
        return self.components[2]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))


# ---------------------------------------------------------------------------
# frequency bookkeeping


def freq_axis(n: int) -> np.ndarray:
    """Signed frequencies of the centered storage layout."""
    return np.arange(n) - n // 2


def storage_index(freq, n: int):
    """Map signed frequency (scalar or array) to centered storage index."""
    return np.asarray(freq) + n // 2


def frequency_of_index(index, n: int):
    return np.asarray(index) - n // 2


def radius_grid(n: int, ndim: int = 3) -> np.ndarray:
    """Euclidean frequency radius on the centered ``n**ndim`` grid."""
    f = freq_axis(n).astype(np.float64)
    mesh = np.meshgrid(*([f] * ndim), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


def shell_index(n: int, ndim: int = 3) -> np.ndarray:
    """Shell number ``round(|k|)`` for every centered grid point."""
    return np.rint(radius_grid(n, ndim)).astype(np.int64)


def friedel_mate(a: np.ndarray) -> np.ndarray:
    """Return ``b`` with ``b[k] = a[-k]`` in centered storage (all axes).

    Index ``i`` (frequency ``i - n/2``) pairs with index ``(n - i) mod n``;
    the most negative frequency ``-n/2`` is its own mate.
    """
    axes = tuple(range(a.ndim))
    return np.roll(np.flip(a, axis=axes), 1, axis=axes)


def hermitian_residual(a: np.ndarray) -> float:
    scale = np.max(np.abs(a))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - np.conj(friedel_mate(a)))) / scale)


def hermitian_symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(friedel_mate(a)))


@lru_cache(maxsize=16)
def _mate_tables(shape: tuple[int, ...]):
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    mate = friedel_mate(idx).ravel()
    own = idx.ravel()
    return np.flatnonzero(own < mate), mate[own < mate], np.flatnonzero(own == mate)


def hermitian_fill(a: np.ndarray, ndim: int | None = None) -> np.ndarray:
    """Copy with the lower half replaced by conjugates of the upper half.

    The kept half (higher storage index than the mate) contains the
    positive-``k`` half-plane used for likelihoods.  Works over the last
    ``ndim`` axes (default: all).  Self-conjugate entries
    keep their real part only, so the result is exactly Hermitian and values
    that already were Hermitian change by at most round-off.
    """
    ndim = a.ndim if ndim is None else ndim
    shape = a.shape[a.ndim - ndim:]
    lower, src, selfm = _mate_tables(shape)
    flat = np.array(a, dtype=np.complex128).reshape(-1, int(np.prod(shape)))
    flat[:, lower] = np.conj(flat[:, src])
    flat[:, selfm] = flat[:, selfm].real
    return flat.reshape(a.shape)


# ---------------------------------------------------------------------------
# transforms


def fft3_array(x: np.ndarray) -> np.ndarray:
    """Centered unnormalized transform; exactly Hermitian for real ``x``."""
    F = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(x)))
    return F if np.iscomplexobj(x) else hermitian_fill(F)


def ifft3_array(f: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(f)))


def fft2_array(x: np.ndarray) -> np.ndarray:
    """Centered 2D transform over the last two axes (stacks allowed)."""
    ax = (-2, -1)
    F = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=ax), axes=ax), axes=ax)
    return F if np.iscomplexobj(x) else hermitian_fill(F, 2)


def ifft2_array(f: np.ndarray) -> np.ndarray:
    ax = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(f, axes=ax), axes=ax), axes=ax)


def fft3(v: Volume3D) -> FourierVolume:
    return FourierVolume(fft3_array(v.data), v.voxel_size)


def ifft3(F: FourierVolume, voxel_size: float | None = None, require_real: bool = True):
    """Inverse transform.

    With ``require_real`` the imaginary residue must stay below
    ``1e-9`` relative to the real part; it is then dropped and a
    :class:`Volume3D` is returned.  Otherwise the complex array is returned.
    """
    out = ifft3_array(F.data)
    if not require_real:
        return out
    return Volume3D(real_part_checked(out), F.voxel_size if voxel_size is None else voxel_size)


def real_part_checked(c: np.ndarray, exc=NonHermitianInput, scale: float = 0.0) -> np.ndarray:
    """Drop the imaginary part after checking it is round-off.

    The tolerance is relative to the larger of the real part and ``scale``
    (for outputs that may legitimately cancel to ~0).
    """
    scale = max(float(np.max(np.abs(c.real))), scale)
    resid = np.max(np.abs(c.imag))
    if resid > HERMITIAN_RTOL * scale and resid > 1e-300:
        raise exc(f"imaginary residue {resid:.3e} exceeds tolerance (real scale {scale:.3e})")
    return c.real.copy()


# ---------------------------------------------------------------------------
# discrete gradient


def gradient_array(x: np.ndarray, boundary: str = "replicate") -> np.ndarray:
    """Backward differences ``x[i] - x[i-1]`` along each axis, shape ``(3, ...)``."""
    g = np.empty((3,) + x.shape, dtype=np.float64)
    for a in range(3):
        if boundary == "periodic":
            g[a] = x - np.roll(x, 1, axis=a)
        elif boundary == "replicate":
            d = np.zeros_like(x, dtype=np.float64)
            hi = [slice(None)] * 3
            lo = [slice(None)] * 3
            hi[a] = slice(1, None)
            lo[a] = slice(None, -1)
            d[tuple(hi)] = x[tuple(hi)] - x[tuple(lo)]
            g[a] = d
        else:
            raise ValidationError(f"unknown boundary rule {boundary!r}")
    return g


def gradient_adjoint_array(g: np.ndarray, boundary: str = "replicate") -> np.ndarray:
    """Adjoint of :func:`gradient_array`.

    For replicate boundaries ``(D_a^T y)[m] = y[m]*[m >= 1] - y[m+1]*[m <= n-2]``;
    a unit entry at ``m`` therefore lands as ``+1`` at ``m`` and ``-1`` at ``m-1``.
    """
    out = np.zeros(g.shape[1:], dtype=np.float64)
    for a in range(3):
        y = g[a]
        if boundary == "periodic":
            out += y - np.roll(y, -1, axis=a)
        elif boundary == "replicate":
            hi = [slice(None)] * 3
            lo = [slice(None)] * 3
            hi[a] = slice(1, None)
            lo[a] = slice(None, -1)
            out[tuple(hi)] += y[tuple(hi)]
            out[tuple(lo)] -= y[tuple(hi)]
        else:
            raise ValidationError(f"unknown boundary rule {boundary!r}")
    return out


def discrete_gradient(v: Volume3D, boundary: str = "replicate") -> GradientField:
    return GradientField(gradient_array(v.data, boundary))


def gradient_adjoint(g: GradientField, voxel_size: float = 1.0,
                     boundary: str = "replicate") -> Volume3D:
    return Volume3D(gradient_adjoint_array(g.components, boundary), voxel_size)


def difference_multiplier(n: int) -> np.ndarray:
    """Fourier symbol ``sum_a 4 sin^2(pi k_a / n)`` of the periodic gradient.

    ``||D x||^2 = sum m(k) |X(k)|^2 / L`` holds exactly in periodic mode.
    """
    s = 4.0 * np.sin(np.pi * freq_axis(n) / n) ** 2
    return s[:, None, None] + s[None, :, None] + s[None, None, :]
