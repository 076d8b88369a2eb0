"""MRC volumes and stacks, particle metadata CSV, FSC curve tables and plots."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import BadMagic, IoError, ParseError, TruncatedFile, UnsupportedMode, ValidationError
from .forward import CTFParams, ParticleImage, ParticleSet, Pose
from .grid import Volume3D, fft2_array, ifft2_array
from .validation import FSC_THRESHOLD, FSCCurve

HEADER_BYTES = 1024
MAP_ID = b"MAP "
MACHINE_STAMP = bytes([0x44, 0x44, 0x00, 0x00])


@dataclass(frozen=True)
class MrcHeader:
    nx: int
    ny: int
    nz: int
    mode: int
    cell: tuple[float, float, float]
    ispg: int
    nsymbt: int = 0
    map_id: bytes = MAP_ID
    machine_stamp: bytes = MACHINE_STAMP

    @property
    def voxel_size(self) -> float:
        return self.cell[0] / self.nx if self.nx else 1.0


@dataclass(frozen=True)
class ImageStack:
    """Real-space images ``(nz, ny, nx)`` read from an MRC stack."""

    data: np.ndarray
    voxel_size: float = 1.0


def _header_bytes(data: np.ndarray, voxel_size: float, is_volume: bool) -> bytes:
    nz, ny, nx = data.shape
    h = bytearray(HEADER_BYTES)
    mz = nz if is_volume else 1
    struct.pack_into("<3i", h, 0, nx, ny, nz)
    struct.pack_into("<i", h, 12, 2)
    struct.pack_into("<3i", h, 28, nx, ny, mz)
    struct.pack_into("<3f", h, 40, nx * voxel_size, ny * voxel_size, mz * voxel_size)
    struct.pack_into("<3f", h, 52, 90.0, 90.0, 90.0)
    struct.pack_into("<3i", h, 64, 1, 2, 3)
    if data.size:
        stats = (float(data.min()), float(data.max()), float(data.mean(dtype=np.float64)))
        rms = float(data.std(dtype=np.float64))
    else:
        stats, rms = (0.0, 0.0, 0.0), 0.0
    struct.pack_into("<3f", h, 76, *stats)
    struct.pack_into("<i", h, 88, 1 if is_volume else 0)
    struct.pack_into("<i", h, 92, 0)
    struct.pack_into("<i", h, 152, 20140)
    h[208:212] = MAP_ID
    h[212:216] = MACHINE_STAMP
    struct.pack_into("<f", h, 216, rms)
    return bytes(h)


def write_mrc(path, v, voxel_size: float | None = None) -> None:
    """Write a Volume3D (or a ``(nz, ny, nx)`` image stack) as mode-2 MRC.

    The last array axis is the fastest-varying (x) axis in the file.
    """
    if isinstance(v, Volume3D):
        arr, vs, is_volume = v.data, v.voxel_size, True
    elif isinstance(v, ImageStack):
        arr, vs, is_volume = v.data, v.voxel_size, False
    else:
        arr = np.asarray(v)
        vs, is_volume = 1.0, False
    if voxel_size is not None:
        vs = voxel_size
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 3:
        raise ValidationError("MRC payload must be 3D")
    try:
        with open(path, "wb") as fh:
            fh.write(_header_bytes(arr, vs, is_volume))
            fh.write(arr.tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_mrc_header(raw: bytes) -> MrcHeader:
    if len(raw) < HEADER_BYTES:
        raise TruncatedFile(f"file has {len(raw)} bytes, shorter than the MRC header")
    if raw[208:212] != MAP_ID:
        raise BadMagic(f"map id {raw[208:212]!r} is not {MAP_ID!r}")
    nx, ny, nz, mode = struct.unpack_from("<4i", raw, 0)
    if mode != 2:
        raise UnsupportedMode(f"MRC mode {mode} is not supported (only mode 2)")
    cell = struct.unpack_from("<3f", raw, 40)
    ispg, nsymbt = struct.unpack_from("<2i", raw, 88)
    if min(nx, ny, nz) < 1 or nsymbt < 0:
        raise ValidationError("MRC header has non-positive dimensions")
    return MrcHeader(nx, ny, nz, mode, tuple(float(c) for c in cell), ispg, nsymbt,
                     bytes(raw[208:212]), bytes(raw[212:216]))


def read_mrc(path):
    """Volume3D for a volume-flagged file with ``nz > 1``; ImageStack otherwise."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    hdr = read_mrc_header(raw)
    start = HEADER_BYTES + hdr.nsymbt
    count = hdr.nx * hdr.ny * hdr.nz
    if len(raw) < start + 4 * count:
        raise TruncatedFile(f"payload needs {start + 4 * count} bytes, file has {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=start)
    data = data.reshape(hdr.nz, hdr.ny, hdr.nx).astype(np.float64)
    if hdr.ispg >= 1 and hdr.nz > 1:
        return Volume3D(data, hdr.voxel_size)
    return ImageStack(data, hdr.voxel_size)


# ---------------------------------------------------------------------------
# particle stacks and metadata


@dataclass(frozen=True)
class ParticleMetaRow:
    id: int
    rot: float
    tilt: float
    psi: float
    shift_x: float
    shift_y: float
    defocus_A: float
    voltage_kv: float
    cs_mm: float
    amplitude_contrast: float
    ctf_identity: bool = False

    @property
    def pose(self) -> Pose:
        return Pose(self.rot, self.tilt, self.psi, self.shift_x, self.shift_y)

    @property
    def ctf(self) -> CTFParams:
        return CTFParams(self.voltage_kv, self.defocus_A, self.cs_mm, self.amplitude_contrast,
                         self.ctf_identity)


META_COLUMNS = [f.name for f in fields(ParticleMetaRow)]
_REQUIRED = META_COLUMNS[:-1]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def write_particle_meta(path, rows: Iterable[ParticleMetaRow]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(META_COLUMNS)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in META_COLUMNS])
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def parse_particle_meta(text: str) -> list[ParticleMetaRow]:
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing header row", 1)
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in _REQUIRED if c not in header]
    if missing:
        raise ParseError(f"header lacks columns {missing}", 1)
    col = {h: i for i, h in enumerate(header)}
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(cells)}", lineno)
        vals = {}
        for name in META_COLUMNS:
            if name not in col:
                continue
            cell = cells[col[name]].strip()
            try:
                if name == "id":
                    vals[name] = int(cell)
                elif name == "ctf_identity":
                    if cell not in ("0", "1"):
                        raise ValueError(cell)
                    vals[name] = cell == "1"
                else:
                    vals[name] = float(cell)
                    if not np.isfinite(vals[name]):
                        raise ValueError(cell)
            except ValueError:
                raise ParseError(f"bad {name} value {cell!r}", lineno) from None
        row = ParticleMetaRow(**vals)
        try:
            row.pose
            row.ctf
        except ValidationError as e:
            raise ParseError(str(e), lineno) from None
        rows.append(row)
    return rows


def read_particle_meta(path) -> list[ParticleMetaRow]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    return parse_particle_meta(text)


def meta_rows(particles: ParticleSet) -> list[ParticleMetaRow]:
    out = []
    for p in particles:
        pose = p.true_pose or Pose()
        c = p.ctf
        out.append(ParticleMetaRow(p.id, pose.rot, pose.tilt, pose.psi, pose.shift_x, pose.shift_y,
                                   c.defocus_A, c.voltage_kv, c.cs_mm, c.amplitude_contrast,
                                   c.identity_flag))
    return out


def particles_to_stack(particles: ParticleSet) -> ImageStack:
    """Real-space images of the particles (imaginary residue dropped)."""
    return ImageStack(ifft2_array(particles.stack()).real, particles.voxel_size)


def particles_from_files(stack: ImageStack, rows: Sequence[ParticleMetaRow]) -> ParticleSet:
    if len(rows) != stack.data.shape[0]:
        raise ValidationError(f"stack has {stack.data.shape[0]} images, metadata {len(rows)} rows")
    if stack.data.shape[1] != stack.data.shape[2]:
        raise ValidationError("particle images must be square")
    F = fft2_array(stack.data)
    ps = tuple(ParticleImage(F[i], r.ctf, r.pose, r.id) for i, r in enumerate(rows))
    return ParticleSet(ps, stack.voxel_size)


# ---------------------------------------------------------------------------
# curves


def _check_axis(curves: Mapping[str, FSCCurve]) -> FSCCurve:
    if not curves:
        raise ValidationError("no curves to emit")
    first = next(iter(curves.values()))
    for c in curves.values():
        if len(c.radius) != len(first.radius) or not np.allclose(c.radius, first.radius):
            raise ValidationError("curves do not share a shell axis")
    return first


def curves_csv(curves: Mapping[str, FSCCurve]) -> str:
    first = _check_axis(curves)
    names = list(curves)
    lines = [",".join(["shell_radius", "freq_inv_A"] + names)]
    for i, (r, f) in enumerate(zip(first.radius, first.frequency)):
        vals = [_fmt(curves[k].values[i]) for k in names]
        lines.append(",".join([_fmt(r), _fmt(f)] + vals))
    return "\n".join(lines) + "\n"


_COLORS = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#555555")


def curves_svg(curves: Mapping[str, FSCCurve], title: str = "Fourier shell correlation") -> str:
    first = _check_axis(curves)
    W, H, L, R, T, B = 640, 420, 60, 150, 40, 50
    pw, ph = W - L - R, H - T - B
    fmax = float(first.frequency[-1]) or 1.0
    lo, hi = -0.2, 1.05

    def px(f):
        return L + pw * f / fmax

    def py(v):
        return T + ph * (hi - v) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
           f'<text x="{W / 2:.1f}" y="20" text-anchor="middle">{escape(title)}</text>',
           f'<text x="{L + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">'
           f'spatial frequency (1/A)</text>',
           f'<text x="16" y="{T + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 16 {T + ph / 2:.1f})">FSC</text>']
    for v in (0.0, 0.5, 1.0):
        out.append(f'<text x="{L - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    for f in np.linspace(0, fmax, 5):
        out.append(f'<text x="{px(f):.1f}" y="{T + ph + 16}" text-anchor="middle">{f:.3f}</text>')
    out.append(f'<line class="threshold" x1="{L}" y1="{py(FSC_THRESHOLD):.2f}" x2="{L + pw}" '
               f'y2="{py(FSC_THRESHOLD):.2f}" stroke="#7fb3e6" stroke-dasharray="4 3"/>')
    for i, (name, c) in enumerate(curves.items()):
        col = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(f):.2f},{py(np.clip(v, lo, hi)):.2f}"
                       for f, v in zip(c.frequency, c.values))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        ly = T + 16 + 18 * i
        out.append(f'<rect x="{L + pw + 12}" y="{ly - 8}" width="14" height="3" fill="{col}"/>')
        out.append(f'<text x="{L + pw + 32}" y="{ly - 3}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_curve(path, curves, format: str = "csv") -> None:
    """Write named curves as a CSV table or a self-contained SVG plot."""
    if not isinstance(curves, Mapping):
        curves = dict(curves)
    if format == "csv":
        text = curves_csv(curves)
    elif format == "svg":
        text = curves_svg(curves)
    else:
        raise ValidationError(f"unknown curve format {format!r}")
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
