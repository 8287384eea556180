"""Binary dump of monitor-face DFT fields, plus 1-D CSV extracts.

Layout (all little-endian)::

    magic     4s   b"CBGF"
    version   u32
    normal    u32  axis index of the face normal (0, 1, 2)
    sign      i32  +1 / -1 outward orientation
    nfreq     u32
    ncomp     u32
    cell      3 x f64 (nm)
    index     f64  host refractive index, NaN if unknown
    wavelengths nfreq x f64 (nm)
    per component:
        name  2s   e.g. b"Ex"
        n1,n2 2 x u32
        c1    n1 x f64 (nm)   c2  n2 x f64 (nm)   cnormal f64 (nm)
        data  nfreq*n1*n2 x (f64 re, f64 im), C order (freq, axis1, axis2)
"""

import csv
import struct

import numpy as np

from .engine import FaceData

MAGIC = b"CBGF"
VERSION = 1
_HEAD = struct.Struct("<4sIIiII3dd")


def write_face_dump(path, face):
    comps = sorted(face.fields)
    wl = np.asarray(face.wavelengths_nm, dtype="<f8")
    index = float("nan") if face.index is None else float(face.index)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, face.normal, face.sign, wl.size, len(comps),
                            *map(float, face.cell), index))
        fh.write(wl.tobytes())
        for c in comps:
            data = np.asarray(face.fields[c], dtype="<c16")
            c1, c2, cn = face.coords[c]
            fh.write(struct.pack("<2sII", c.encode("ascii"), data.shape[1], data.shape[2]))
            fh.write(np.asarray(c1, dtype="<f8").tobytes())
            fh.write(np.asarray(c2, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", float(cn)))
            fh.write(np.ascontiguousarray(data).tobytes())


def read_face_dump(path, name="dump"):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, version, normal, sign, nf, nc, cx, cy, cz, index = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field dump")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    off = _HEAD.size
    wl = np.frombuffer(buf, "<f8", nf, off).copy()
    off += 8 * nf
    fields, coords = {}, {}
    for _ in range(nc):
        raw, n1, n2 = struct.unpack_from("<2sII", buf, off)
        off += struct.calcsize("<2sII")
        c = raw.decode("ascii")
        c1 = np.frombuffer(buf, "<f8", n1, off).copy()
        off += 8 * n1
        c2 = np.frombuffer(buf, "<f8", n2, off).copy()
        off += 8 * n2
        (cn,) = struct.unpack_from("<d", buf, off)
        off += 8
        count = nf * n1 * n2
        fields[c] = np.frombuffer(buf, "<c16", count, off).reshape(nf, n1, n2).astype(complex)
        off += 16 * count
        coords[c] = (c1, c2, cn)
    return FaceData(name, normal, sign, fields, coords, (cx, cy, cz), wl,
                    None if np.isnan(index) else index)


def write_line_csv(path, face, component, freq_index=0, along=0, at=None):
    """Write the field along one in-plane axis of a face.

    ``along`` selects the in-plane axis (0 or 1) to keep; the other is fixed at
    the sample closest to ``at`` nm (default: the middle sample).
    """
    data = face.fields[component][freq_index]
    c1, c2, _ = face.coords[component]
    pos, other = (c1, c2) if along == 0 else (c2, c1)
    j = len(other) // 2 if at is None else int(np.argmin(np.abs(other - at)))
    line = data[:, j] if along == 0 else data[j, :]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position_nm", "re", "im", "abs"])
        for p, v in zip(pos, line):
            w.writerow([f"{p:.6g}", f"{v.real:.9e}", f"{v.imag:.9e}", f"{abs(v):.9e}"])
