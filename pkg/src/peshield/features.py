"""Static 2381-dimensional feature vectors for PE images.

Nine groups laid out contiguously:

    byte_histogram          256   normalized byte counts over the whole file
    byte_entropy_histogram  256   16 entropy rows x 16 coarse byte-value bins,
                                  sliding 2048-byte windows at stride 1024
    strings                 104   printable-run statistics and marker counts
    general                  10   size/vsize and presence/count indicators
    header                   62   COFF and optional-header fields, categorical
                                  values hashed into 10 bins each
    sections                255   shape counters plus name-keyed pair hashes
    imports                1280   256 library bins + 1024 library:function bins
    exports                 128   hashed exported names
    data_directories         30   (rva, size) of the first 15 directories

Extraction is total: malformed or unparsable inputs zero-fill the groups that
need header structure; byte-level groups are always computed. All hashing is
FNV-1a 64-bit reduced modulo the bin count, so vectors are stable across
platforms and interoperable with the published 2381-feature scheme.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import pe
from .errors import EmptyMatrix

SCHEMA_VERSION = 1
TOTAL_DIM = 2381

ENTROPY_WINDOW = 2048
ENTROPY_STRIDE = 1024

_GROUP_DIMS: tuple[tuple[str, int], ...] = (
    ("byte_histogram", 256),
    ("byte_entropy_histogram", 256),
    ("strings", 104),
    ("general", 10),
    ("header", 62),
    ("sections", 255),
    ("imports", 1280),
    ("exports", 128),
    ("data_directories", 30),
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit; the documented hash behind every hashed feature bin."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_bin(data: bytes, bins: int) -> int:
    return fnv1a64(data) % bins


class FeatureSchema:
    """Named group layout of the 2381-dimensional vector."""

    def __init__(self) -> None:
        self.groups: list[tuple[str, int, int]] = []
        offset = 0
        for name, dim in _GROUP_DIMS:
            self.groups.append((name, offset, dim))
            offset += dim
        assert offset == TOTAL_DIM
        self.total_dim = TOTAL_DIM
        self._by_name = {name: (off, dim) for name, off, dim in self.groups}

    def slice_of(self, group: str) -> slice:
        off, dim = self._by_name[group]
        return slice(off, off + dim)

    def group_of(self, index: int) -> tuple[str, int]:
        """(group name, index within group) for an absolute feature index."""
        for name, off, dim in self.groups:
            if off <= index < off + dim:
                return name, index - off
        raise IndexError(index)

    def name_of(self, index: int) -> str:
        group, local = self.group_of(index)
        return f"{group}[{local}]"


SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # float32, TOTAL_DIM entries, finite
    schema_version: int = SCHEMA_VERSION

    def group(self, name: str) -> np.ndarray:
        return self.values[SCHEMA.slice_of(name)]


# -- byte-level groups ------------------------------------------------------


def byte_histogram(data: bytes) -> np.ndarray:
    out = np.zeros(256, dtype=np.float64)
    if data:
        counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
        out = counts / counts.sum()
    return out


def window_entropy_bits(window: np.ndarray) -> tuple[float, np.ndarray]:
    """Entropy (bits) of the 16-bin coarse value distribution of a window,
    doubled to compensate for the 4-bit quantization, plus the bin counts.
    A constant window scores 0.0; a uniform byte cycle scores 8.0."""
    counts = np.bincount(window >> 4, minlength=16)
    p = counts[counts > 0] / len(window)
    entropy = float(-(p * np.log2(p)).sum() * 2.0)
    return entropy, counts


def byte_entropy_histogram(data: bytes) -> np.ndarray:
    grid = np.zeros((16, 16), dtype=np.float64)
    if not data:
        return grid.reshape(-1)
    a = np.frombuffer(data, dtype=np.uint8)
    if len(a) < ENTROPY_WINDOW:
        windows = [a]
    else:
        starts = range(0, len(a) - ENTROPY_WINDOW + 1, ENTROPY_STRIDE)
        windows = [a[s : s + ENTROPY_WINDOW] for s in starts]
    for window in windows:
        entropy, counts = window_entropy_bits(window)
        row = min(int(entropy * 2), 15)
        grid[row] += counts
    total = grid.sum()
    if total:
        grid /= total
    return grid.reshape(-1)


_PRINTABLE_RUN = re.compile(rb"[\x20-\x7f]{5,}")
_PATH_RE = re.compile(rb"c:\\", re.IGNORECASE)
_URL_RE = re.compile(rb"https?://", re.IGNORECASE)
_REGISTRY_RE = re.compile(rb"HKEY_")
_MZ_RE = re.compile(rb"MZ")


def string_features(data: bytes) -> np.ndarray:
    """104 values: run count, average run length, 96-bin printable-character
    distribution, total printable characters, character entropy, and counts
    of C:\\ paths, http(s):// URLs, HKEY_ registry keys, and MZ markers."""
    out = np.zeros(104, dtype=np.float64)
    runs = _PRINTABLE_RUN.findall(data)
    if runs:
        chars = np.frombuffer(b"".join(runs), dtype=np.uint8)
        hist = np.bincount(chars - 0x20, minlength=96).astype(np.float64)
        printables = float(hist.sum())
        p = hist[hist > 0] / printables
        out[0] = len(runs)
        out[1] = sum(len(r) for r in runs) / len(runs)
        out[2:98] = hist / printables
        out[98] = printables
        out[99] = float(-(p * np.log2(p)).sum())
    out[100] = len(_PATH_RE.findall(data))
    out[101] = len(_URL_RE.findall(data))
    out[102] = len(_REGISTRY_RE.findall(data))
    out[103] = len(_MZ_RE.findall(data))
    return out


# -- layout-dependent groups ---------------------------------------------------


def _parse_imports(data: bytes, layout: pe.PeLayout) -> dict[bytes, list[bytes]]:
    rva, size = layout.optional.directory(pe.DIR_IMPORT)
    if not rva or not size:
        return {}
    wide = layout.optional.is_pe32_plus
    thunk_size = 8 if wide else 4
    ordinal_flag = 1 << (thunk_size * 8 - 1)
    imports: dict[bytes, list[bytes]] = {}
    base = pe.rva_to_offset(layout, rva)
    if base is None:
        return {}
    for d in range(256):
        off = base + d * 20
        if off + 20 > len(data):
            break
        desc = data[off : off + 20]
        oft, _, _, name_rva, ft = np.frombuffer(desc, dtype="<u4")
        if not (oft or name_rva or ft):
            break
        name_off = pe.rva_to_offset(layout, int(name_rva))
        if name_off is None:
            continue
        end = data.find(b"\x00", name_off, name_off + 256)
        if end <= name_off:
            continue
        lib = data[name_off:end]
        funcs = imports.setdefault(lib, [])
        thunk_off = pe.rva_to_offset(layout, int(oft or ft))
        if thunk_off is None:
            continue
        for t in range(2048):
            o = thunk_off + t * thunk_size
            if o + thunk_size > len(data):
                break
            val = int.from_bytes(data[o : o + thunk_size], "little")
            if val == 0:
                break
            if val & ordinal_flag:
                funcs.append(b"ordinal%d" % (val & 0xFFFF))
                continue
            hint_off = pe.rva_to_offset(layout, val)
            if hint_off is None:
                continue
            fend = data.find(b"\x00", hint_off + 2, hint_off + 2 + 512)
            if fend > hint_off + 2:
                funcs.append(data[hint_off + 2 : fend])
    return imports


def _parse_exports(data: bytes, layout: pe.PeLayout) -> list[bytes]:
    rva, size = layout.optional.directory(pe.DIR_EXPORT)
    if not rva or not size:
        return []
    base = pe.rva_to_offset(layout, rva)
    if base is None or base + 40 > len(data):
        return []
    dir_bytes = np.frombuffer(data[base : base + 40], dtype="<u4")
    num_names = int(dir_bytes[6])
    names_rva = int(dir_bytes[8])
    names_off = pe.rva_to_offset(layout, names_rva)
    if names_off is None:
        return []
    names = []
    for i in range(min(num_names, 4096)):
        o = names_off + i * 4
        if o + 4 > len(data):
            break
        ptr = pe.rva_to_offset(layout, int.from_bytes(data[o : o + 4], "little"))
        if ptr is None:
            continue
        end = data.find(b"\x00", ptr, ptr + 512)
        if end > ptr:
            names.append(data[ptr:end])
    return names


def _hash_into(out: np.ndarray, start: int, bins: int, token: bytes, weight: float = 1.0) -> None:
    out[start + hash_bin(token, bins)] += weight


def _general_group(data: bytes, layout: pe.PeLayout | None,
                   imports: dict[bytes, list[bytes]], exports: list[bytes]) -> np.ndarray:
    out = np.zeros(10, dtype=np.float64)
    out[0] = len(data)
    if layout is None:
        return out
    opt = layout.optional
    out[1] = opt.size_of_image
    out[2] = 1.0 if opt.directory(pe.DIR_DEBUG) != (0, 0) else 0.0
    out[3] = len(exports)
    out[4] = sum(len(v) for v in imports.values())
    out[5] = 1.0 if opt.directory(pe.DIR_BASERELOC) != (0, 0) else 0.0
    out[6] = 1.0 if opt.directory(pe.DIR_RESOURCE) != (0, 0) else 0.0
    out[7] = 1.0 if opt.directory(pe.DIR_SECURITY) != (0, 0) else 0.0
    out[8] = 1.0 if opt.directory(pe.DIR_TLS) != (0, 0) else 0.0
    out[9] = layout.coff.number_of_symbols
    return out


def _header_group(layout: pe.PeLayout | None) -> np.ndarray:
    out = np.zeros(62, dtype=np.float64)
    if layout is None:
        return out
    coff, opt = layout.coff, layout.optional
    out[0] = coff.time_date_stamp
    _hash_into(out, 1, 10, b"machine:%d" % coff.machine)
    for bit in range(16):
        if coff.characteristics & (1 << bit):
            _hash_into(out, 11, 10, b"coff_characteristic:%d" % bit)
    _hash_into(out, 21, 10, b"subsystem:%d" % opt.subsystem)
    for bit in range(16):
        if opt.dll_characteristics & (1 << bit):
            _hash_into(out, 31, 10, b"dll_characteristic:%d" % bit)
    _hash_into(out, 41, 10, b"magic:%d" % opt.magic)
    out[51] = opt.major_image_version
    out[52] = opt.minor_image_version
    out[53] = opt.major_linker_version
    out[54] = opt.minor_linker_version
    out[55] = opt.major_operating_system_version
    out[56] = opt.minor_operating_system_version
    out[57] = opt.major_subsystem_version
    out[58] = opt.minor_subsystem_version
    out[59] = opt.size_of_code
    out[60] = opt.size_of_headers
    out[61] = opt.size_of_heap_commit
    return out


def _section_entropy(layout: pe.PeLayout, index: int) -> float:
    blob = pe.read_region(layout, index)
    if not blob:
        return 0.0
    counts = np.bincount(np.frombuffer(blob, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(blob)
    return float(-(p * np.log2(p)).sum())


def _sections_group(layout: pe.PeLayout | None) -> np.ndarray:
    out = np.zeros(255, dtype=np.float64)
    if layout is None:
        return out
    entries = layout.section_table
    out[0] = len(entries)
    out[1] = sum(1 for e in entries if e.size_of_raw_data == 0)
    out[2] = sum(1 for e in entries if e.name.rstrip(b"\x00") == b"")
    rx = pe.SCN_MEM_READ | pe.SCN_MEM_EXECUTE
    out[3] = sum(1 for e in entries if e.characteristics & rx == rx)
    out[4] = sum(1 for e in entries if e.characteristics & pe.SCN_MEM_WRITE)
    for i, e in enumerate(entries):
        name = e.name.rstrip(b"\x00")
        _hash_into(out, 5, 50, name, float(e.size_of_raw_data))
        _hash_into(out, 55, 50, name, _section_entropy(layout, i))
        _hash_into(out, 105, 50, name, float(e.virtual_size))
    entry_rva = layout.optional.address_of_entry_point
    for i, e in enumerate(entries):
        span = max(e.virtual_size, layout.stored_raw_size(i))
        if span and e.virtual_address <= entry_rva < e.virtual_address + span:
            _hash_into(out, 155, 50, e.name.rstrip(b"\x00"))
            for bit in range(32):
                if e.characteristics & (1 << bit):
                    _hash_into(out, 205, 50, b"section_characteristic:%d" % bit)
            break
    return out


def _imports_group(imports: dict[bytes, list[bytes]]) -> np.ndarray:
    out = np.zeros(1280, dtype=np.float64)
    libraries = {lib.lower() for lib in imports}
    for lib in libraries:
        _hash_into(out, 0, 256, lib)
    qualified = {lib.lower() + b":" + fn for lib, funcs in imports.items() for fn in funcs}
    for name in qualified:
        _hash_into(out, 256, 1024, name)
    return out


def _exports_group(exports: list[bytes]) -> np.ndarray:
    out = np.zeros(128, dtype=np.float64)
    for name in set(exports):
        _hash_into(out, 0, 128, name)
    return out


def _directories_group(layout: pe.PeLayout | None) -> np.ndarray:
    out = np.zeros(30, dtype=np.float64)
    if layout is None:
        return out
    dirs = layout.optional.data_directories
    for i in range(min(len(dirs), 15)):
        out[i * 2] = dirs[i][0]
        out[i * 2 + 1] = dirs[i][1]
    return out


def extract(data: bytes, layout: pe.PeLayout | None = None) -> FeatureVector:
    """Extract the full vector. Never raises: when the image cannot be parsed
    the header-derived groups are zero-filled and the byte-level groups are
    still computed."""
    if layout is None:
        try:
            layout = pe.parse_bytes(data, tolerant=True)
        except Exception:
            layout = None
    imports: dict[bytes, list[bytes]] = {}
    exports: list[bytes] = []
    if layout is not None:
        try:
            imports = _parse_imports(data, layout)
        except Exception:
            imports = {}
        try:
            exports = _parse_exports(data, layout)
        except Exception:
            exports = []

    parts = [
        byte_histogram(data),
        byte_entropy_histogram(data),
        string_features(data),
        _general_group(data, layout, imports, exports),
        _header_group(layout),
        _sections_group(layout) if layout is not None else np.zeros(255),
        _imports_group(imports),
        _exports_group(exports),
        _directories_group(layout),
    ]
    values = np.concatenate(parts).astype(np.float32)
    values[~np.isfinite(values)] = 0.0
    return FeatureVector(values=values)


def extract_matrix(blobs: list[bytes]) -> np.ndarray:
    """Row-per-input feature matrix, rows in input order."""
    out = np.zeros((len(blobs), TOTAL_DIM), dtype=np.float32)
    for i, blob in enumerate(blobs):
        out[i] = extract(blob).values
    return out


# -- standardization --------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-feature (x - mean) / std; constant features keep std 1 and map to 0."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def fit_standardizer(matrix: np.ndarray) -> Standardizer:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise EmptyMatrix("standardizer needs a matrix with at least two rows")
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std[std == 0.0] = 1.0
    return Standardizer(mean=mean, std=std)
