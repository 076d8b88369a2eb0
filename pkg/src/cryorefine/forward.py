"""Image formation: poses, CTF, central-slice extraction and particle simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BlobOutOfGrid, ValidationError
from .grid import (
    FourierVolume,
    Volume3D,
    fft2_array,
    fft3_array,
    freq_axis,
    friedel_mate,
    hermitian_fill,
    ifft3_array,
    radius_grid,
)
from .kernels import KernelSpec, interpolate


@dataclass(frozen=True)
class Pose:
    """ZYZ Euler angles in degrees plus an in-plane shift in pixels.

    ``rot`` and ``psi`` are wrapped into ``[0, 360)``.
    """

    rot: float = 0.0
    tilt: float = 0.0
    psi: float = 0.0
    shift_x: float = 0.0
    shift_y: float = 0.0

    def __post_init__(self):
        vals = (self.rot, self.tilt, self.psi, self.shift_x, self.shift_y)
        if not all(np.isfinite(vals)):
            raise ValidationError("pose values must be finite")
        if not 0.0 <= self.tilt <= 180.0:
            raise ValidationError(f"tilt must lie in [0, 180], got {self.tilt}")
        object.__setattr__(self, "rot", float(self.rot) % 360.0)
        object.__setattr__(self, "psi", float(self.psi) % 360.0)

    @property
    def angles(self) -> tuple[float, float, float]:
        return (self.rot, self.tilt, self.psi)

    @property
    def shift(self) -> tuple[float, float]:
        return (self.shift_x, self.shift_y)

    def check_shift(self, side_n: int) -> None:
        if np.hypot(self.shift_x, self.shift_y) > side_n / 4:
            raise ValidationError(f"shift {self.shift} exceeds side_n/4 = {side_n / 4}")


def _rz(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_matrix(p: Pose) -> np.ndarray:
    """``Rz(rot) @ Ry(tilt) @ Rz(psi)``; maps image frequency ``(k, l, 0)`` into the volume."""
    return _rz(p.rot) @ _ry(p.tilt) @ _rz(p.psi)


def rotation_matrices(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rotation_matrix` for an ``(M, 3)`` array of degrees."""
    a = np.deg2rad(np.asarray(angles, dtype=np.float64).reshape(-1, 3))
    c1, s1 = np.cos(a[:, 0]), np.sin(a[:, 0])
    c2, s2 = np.cos(a[:, 1]), np.sin(a[:, 1])
    c3, s3 = np.cos(a[:, 2]), np.sin(a[:, 2])
    R = np.empty((len(a), 3, 3))
    R[:, 0, 0] = c1 * c2 * c3 - s1 * s3
    R[:, 0, 1] = -c1 * c2 * s3 - s1 * c3
    R[:, 0, 2] = c1 * s2
    R[:, 1, 0] = s1 * c2 * c3 + c1 * s3
    R[:, 1, 1] = -s1 * c2 * s3 + c1 * c3
    R[:, 1, 2] = s1 * s2
    R[:, 2, 0] = -s2 * c3
    R[:, 2, 1] = s2 * s3
    R[:, 2, 2] = c2
    return R


# ---------------------------------------------------------------------------
# CTF


@dataclass(frozen=True)
class CTFParams:
    voltage_kv: float = 300.0
    defocus_A: float = 20000.0
    cs_mm: float = 2.0
    amplitude_contrast: float = 0.1
    identity_flag: bool = False

    def __post_init__(self):
        if not self.voltage_kv > 0:
            raise ValidationError("voltage_kv must be positive")
        if not 0.0 <= self.amplitude_contrast <= 1.0:
            raise ValidationError("amplitude_contrast must lie in [0, 1]")

    @classmethod
    def identity(cls) -> "CTFParams":
        return cls(identity_flag=True)


def electron_wavelength(voltage_kv: float) -> float:
    """Relativistic electron wavelength in Angstrom."""
    v = voltage_kv * 1e3
    return 12.2639 / np.sqrt(v + 0.97845e-6 * v * v)


def ctf_value(c: CTFParams, s):
    """CTF at spatial frequency ``s`` (1/Angstrom); scalar or array."""
    s = np.asarray(s, dtype=np.float64)
    if c.identity_flag:
        return np.ones_like(s) if s.ndim else 1.0
    lam = electron_wavelength(c.voltage_kv)
    cs = c.cs_mm * 1e7
    chi = np.pi * lam * c.defocus_A * s**2 - 0.5 * np.pi * cs * lam**3 * s**4
    a = c.amplitude_contrast
    out = -(np.sqrt(1.0 - a * a) * np.sin(chi) + a * np.cos(chi))
    return out if out.ndim else float(out)


def ctf_grid(c: CTFParams, side_n: int, voxel_size: float) -> np.ndarray:
    """CTF on the centered 2D frequency grid."""
    if c.identity_flag:
        return np.ones((side_n, side_n))
    s = radius_grid(side_n, 2) / (side_n * voxel_size)
    return ctf_value(c, s)


# ---------------------------------------------------------------------------
# slices


def plane_frequencies(side_n: int) -> np.ndarray:
    """``(n, n, 3)`` array of ``(k, l, 0)`` on the centered image grid."""
    f = freq_axis(side_n).astype(np.float64)
    k, l = np.meshgrid(f, f, indexing="ij")
    return np.stack([k, l, np.zeros_like(k)], axis=-1)


def shift_phase(shift_x: float, shift_y: float, k: np.ndarray, l: np.ndarray,
                side_n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * (shift_x * k + shift_y * l) / side_n)


def extract_slice(V: FourierVolume, p: Pose, kernel: KernelSpec | None = None,
                  oversample: int = 1) -> np.ndarray:
    """Central slice of ``V`` at pose ``p`` with the translation phase applied.

    ``oversample > 1`` means ``V`` is the transform of a zero-padded volume,
    ``oversample`` times the image size; samples are taken on the finer grid.
    """
    kernel = kernel or KernelSpec.trilinear()
    n = V.side_n // oversample
    plane = plane_frequencies(n)
    pts = plane @ rotation_matrix(p).T
    out = interpolate(V.data, pts * oversample, kernel)
    out = out * shift_phase(p.shift_x, p.shift_y, plane[..., 0], plane[..., 1], n)
    # the -n/2 row and column have no in-grid mirror sample; fill them (and
    # the rest of the upper half) by conjugation so the image stays real
    return hermitian_fill(out)


def pad_volume(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    n = x.shape[0]
    m = n * factor
    lo = (m - n) // 2
    out = np.zeros((m, m, m), dtype=x.dtype)
    out[lo:lo + n, lo:lo + n, lo:lo + n] = x
    return out


def lowpass(v: Volume3D, resolution_A: float, edge_shells: float = 2.0) -> Volume3D:
    """Raised-cosine low-pass with the cosine edge starting at ``resolution_A``."""
    n = v.side_n
    r0 = n * v.voxel_size / resolution_A
    r = radius_grid(n)
    f = np.where(r <= r0, 1.0,
                 np.where(r >= r0 + edge_shells, 0.0,
                          0.5 * (1 + np.cos(np.pi * (r - r0) / max(edge_shells, 1e-12)))))
    return Volume3D(ifft3_array(fft3_array(v.data) * f).real, v.voxel_size)


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]
    amplitude: float
    sigma: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValidationError("blob amplitude must be positive")
        if not self.sigma > 0:
            raise ValidationError("blob sigma must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    blobs: tuple[Blob, ...] = ()
    seed: int = 0

    @classmethod
    def random(cls, n_blobs: int, side_n: int, seed: int = 0, radius_frac: float = 0.22,
               sigma_range=(1.5, 2.5), amplitude_range=(0.5, 1.0)) -> "PhantomSpec":
        """Blobs scattered in a ball of radius ``radius_frac * side_n`` about the centre."""
        rng = np.random.default_rng(seed)
        c0 = side_n / 2
        blobs = []
        for _ in range(n_blobs):
            while True:
                d = rng.uniform(-1, 1, 3)
                if d @ d <= 1:
                    break
            blobs.append(Blob(tuple(c0 + radius_frac * side_n * d),
                              float(rng.uniform(*amplitude_range)),
                              float(rng.uniform(*sigma_range))))
        return cls(tuple(blobs), seed)


def generate_phantom(spec: PhantomSpec, side_n: int, voxel_size: float = 1.0) -> Volume3D:
    """Sum of isotropic Gaussian blobs (voxel units)."""
    ax = np.arange(side_n, dtype=np.float64)
    out = np.zeros((side_n,) * 3)
    for b in spec.blobs:
        c = np.asarray(b.center, dtype=np.float64)
        if c.shape != (3,) or np.any(c < 0) or np.any(c > side_n - 1):
            raise BlobOutOfGrid(f"blob centre {b.center} outside a {side_n}^3 grid")
        g = [np.exp(-((ax - c[a]) ** 2) / (2 * b.sigma**2)) for a in range(3)]
        out += b.amplitude * g[0][:, None, None] * g[1][None, :, None] * g[2][None, None, :]
    return Volume3D(out, voxel_size)


def sparsity_fraction(v: Volume3D, level: float = 0.01) -> float:
    """Fraction of voxels below ``level`` times the maximum absolute value."""
    m = np.max(np.abs(v.data))
    if m == 0:
        return 1.0
    return float(np.mean(np.abs(v.data) < level * m))


# ---------------------------------------------------------------------------
# particles


@dataclass(frozen=True)
class ParticleImage:
    fourier_data: np.ndarray = field(repr=False)
    ctf: CTFParams = CTFParams.identity()
    true_pose: Pose | None = None
    id: int = 0

    def __post_init__(self):
        a = np.array(self.fourier_data, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("particle data must be a square 2D array")
        if not np.all(np.isfinite(a)):
            raise ValidationError("particle data contains non-finite values")
        a.flags.writeable = False
        object.__setattr__(self, "fourier_data", a)

    @property
    def side_n(self) -> int:
        return self.fourier_data.shape[0]


@dataclass(frozen=True)
class ParticleSet:
    particles: tuple[ParticleImage, ...]
    voxel_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))
        sizes = {p.side_n for p in self.particles}
        if len(sizes) > 1:
            raise ValidationError("particles differ in size")

    def __len__(self) -> int:
        return len(self.particles)

    def __iter__(self):
        return iter(self.particles)

    def __getitem__(self, i):
        return self.particles[i]

    @property
    def side_n(self) -> int:
        return self.particles[0].side_n

    def stack(self) -> np.ndarray:
        return np.stack([p.fourier_data for p in self.particles])

    def subset(self, indices: Sequence[int]) -> "ParticleSet":
        return ParticleSet(tuple(self.particles[i] for i in indices), self.voxel_size)


PoseSampler = Callable[[np.random.Generator], Pose]


def _disk_shift(rng: np.random.Generator, radius: int) -> tuple[int, int]:
    cand = [(a, b) for a in range(-radius, radius + 1) for b in range(-radius, radius + 1)
            if a * a + b * b <= radius * radius]
    return cand[rng.integers(len(cand))]


class UniformPoseSampler:
    """Uniform on SO(3) (sin-weighted tilt) with integer shifts in a disk."""

    def __init__(self, max_shift: int = 0):
        self.max_shift = int(max_shift)

    def __call__(self, rng: np.random.Generator) -> Pose:
        rot, psi = rng.uniform(0.0, 360.0, 2)
        tilt = np.rad2deg(np.arccos(1.0 - 2.0 * rng.uniform()))
        sx, sy = _disk_shift(rng, self.max_shift)
        return Pose(rot, min(tilt, 180.0), psi, sx, sy)


class GridPoseSampler:
    """Draws poses uniformly from a discrete candidate set (e.g. an orientation grid)."""

    def __init__(self, candidates):
        self.candidates = candidates

    def __call__(self, rng: np.random.Generator) -> Pose:
        return self.candidates.pose(int(rng.integers(len(self.candidates))))


def particle_rng(seed: int, particle_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(particle_id)]))


def hermitian_noise(rng: np.random.Generator, side_n: int, sigma: float) -> np.ndarray:
    """Hermitian complex noise; real and imaginary parts each have std ``sigma``.

    Self-conjugate frequencies are real with variance ``2 sigma^2`` so the
    per-component power is ``2 sigma^2`` everywhere.
    """
    g = sigma * (rng.standard_normal((side_n, side_n))
                 + 1j * rng.standard_normal((side_n, side_n)))
    return (g + np.conj(friedel_mate(g))) / np.sqrt(2.0)


def simulate_particles(truth: Volume3D, n_particles: int, pose_sampler: PoseSampler,
                       ctf: CTFParams, noise_sigma: float, seed: int = 0,
                       kernel: KernelSpec | None = None, oversample: int = 1,
                       first_id: int = 0) -> ParticleSet:
    """Noisy CTF-modulated central slices of ``truth``.

    Particle ``i`` draws its pose and noise from an RNG seeded by
    ``(seed, first_id + i)``, so results do not depend on batching.
    """
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be non-negative")
    kernel = kernel or KernelSpec.trilinear()
    n = truth.side_n
    V = FourierVolume(fft3_array(pad_volume(truth.data, oversample)), truth.voxel_size)
    c = ctf_grid(ctf, n, truth.voxel_size)
    out = []
    for i in range(n_particles):
        pid = first_id + i
        rng = particle_rng(seed, pid)
        pose = pose_sampler(rng)
        pose.check_shift(n)
        clean = extract_slice(V, pose, kernel, oversample)
        data = c * clean
        if noise_sigma > 0:
            data = data + hermitian_noise(rng, n, noise_sigma)
        out.append(ParticleImage(data, ctf, pose, pid))
    return ParticleSet(tuple(out), truth.voxel_size)


def clean_projection(truth: Volume3D) -> np.ndarray:
    """Centered 2D transform of the sum along the third axis (identity pose)."""
    return fft2_array(truth.data.sum(axis=2))


def shell_signal_power(truth: Volume3D, shell: int, ctf: CTFParams | None = None,
                       n_probe: int = 64, seed: int = 0, oversample: int = 1) -> float:
    """Mean ``|CTF * slice|^2`` over shell ``shell`` for random poses."""
    ctf = ctf or CTFParams.identity()
    sims = simulate_particles(truth, n_probe, UniformPoseSampler(0), ctf, 0.0, seed,
                              oversample=oversample)
    ring = np.rint(radius_grid(truth.side_n, 2)).astype(int) == shell
    return float(np.mean(np.abs(sims.stack()[:, ring]) ** 2))


def noise_sigma_for_snr(truth: Volume3D, snr: float, shell: int | None = None,
                        ctf: CTFParams | None = None, n_probe: int = 64, seed: int = 0,
                        oversample: int = 1) -> float:
    """Per-part noise std giving ``mean|signal|^2 / (2 sigma^2) = snr`` at ``shell``
    (default: half of Nyquist)."""
    shell = truth.side_n // 4 if shell is None else shell
    power = shell_signal_power(truth, shell, ctf, n_probe, seed, oversample)
    return float(np.sqrt(power / (2.0 * snr)))
