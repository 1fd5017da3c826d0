"""Build well-formed synthetic PE images and desk-scale corpora.

The two corpus classes are proxies, not programs: the "malware" class plants
learnable static signatures (byte-distribution skew, marker strings, a
suspicious import pool, odd section shapes) and never contains executable
payloads. The builder produces images that parse and re-serialize byte-exact,
with controllable alignments, section counts, slack, imports, exports, and
overlay.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import pe
from .corpus import (
    CLASS_GOODWARE,
    CLASS_UNMODIFIED,
    LABEL_GOODWARE,
    LABEL_MALWARE,
    ManifestEntry,
    write_manifest,
)

# 14-byte real-mode stub that prints the classic message, padded to 0x40.
_DOS_STUB_CODE = (
    b"\x0e\x1f\xba\x0e\x00\xb4\x09\xcd\x21\xb8\x01\x4c\xcd\x21"
    b"This program cannot be run in DOS mode.\r\r\n$"
)
DEFAULT_DOS_STUB = _DOS_STUB_CODE.ljust(0x40, b"\x00")

# Classic MS-DOS header field values for bytes [2, 0x3C).
_DOS_BODY = struct.pack(
    "<13H8s2H20s",
    0x0090, 0x0003, 0x0000, 0x0004, 0x0000, 0xFFFF, 0x0000,
    0x00B8, 0x0000, 0x0000, 0x0000, 0x0040, 0x0000,
    b"\x00" * 8, 0, 0, b"\x00" * 20,
)
assert len(_DOS_BODY) == 0x3A

_TEXT_CHARACTERISTICS = pe.SCN_CNT_CODE | pe.SCN_MEM_EXECUTE | pe.SCN_MEM_READ
_DATA_CHARACTERISTICS = pe.SCN_CNT_INITIALIZED_DATA | pe.SCN_MEM_READ | pe.SCN_MEM_WRITE
_RDATA_CHARACTERISTICS = pe.SCN_CNT_INITIALIZED_DATA | pe.SCN_MEM_READ


@dataclass
class SectionSpec:
    name: bytes
    data: bytes
    characteristics: int = _RDATA_CHARACTERISTICS
    virtual_size: int | None = None  # defaults to len(data)
    raw_size: int | None = None  # defaults to len(data) rounded to file_alignment


@dataclass
class PeSpec:
    sections: list[SectionSpec] = field(default_factory=list)
    pe32_plus: bool = True
    file_alignment: int = 512
    section_alignment: int = 4096
    machine: int = 0x8664
    timestamp: int = 0
    coff_characteristics: int = 0x0022
    subsystem: int = 3
    dll_characteristics: int = 0x8160
    overlay: bytes = b""
    imports: dict[bytes, list[bytes]] | None = None
    exports: tuple[bytes, list[bytes]] | None = None
    entry_section: int = 0
    stub: bytes = DEFAULT_DOS_STUB


def _build_import_blob(va: int, imports: dict[bytes, list[bytes]], wide: bool) -> bytes:
    """Import directory, thunk arrays, and hint/name table at base RVA ``va``."""
    thunk_fmt, thunk_size = ("<Q", 8) if wide else ("<I", 4)
    dlls = list(imports.items())
    desc_len = (len(dlls) + 1) * 20

    cursor = desc_len
    oft_offsets, ft_offsets, name_offsets, hint_offsets = [], [], {}, {}
    for lib, funcs in dlls:
        oft_offsets.append(cursor)
        cursor += (len(funcs) + 1) * thunk_size
    for lib, funcs in dlls:
        ft_offsets.append(cursor)
        cursor += (len(funcs) + 1) * thunk_size
    for lib, funcs in dlls:
        for fn in funcs:
            hint_offsets[(lib, fn)] = cursor
            entry = 2 + len(fn) + 1
            cursor += entry + (entry & 1)
    for lib, _ in dlls:
        name_offsets[lib] = cursor
        cursor += len(lib) + 1

    blob = bytearray(cursor)
    for i, (lib, funcs) in enumerate(dlls):
        struct.pack_into(
            "<IIIII", blob, i * 20,
            va + oft_offsets[i], 0, 0, va + name_offsets[lib], va + ft_offsets[i],
        )
        for arr_off in (oft_offsets[i], ft_offsets[i]):
            for j, fn in enumerate(funcs):
                struct.pack_into(
                    thunk_fmt, blob, arr_off + j * thunk_size, va + hint_offsets[(lib, fn)]
                )
    for (lib, fn), off in hint_offsets.items():
        struct.pack_into("<H", blob, off, 0)
        blob[off + 2 : off + 2 + len(fn)] = fn
    for lib, off in name_offsets.items():
        blob[off : off + len(lib)] = lib
    return bytes(blob)


def _build_export_blob(va: int, dll_name: bytes, names: list[bytes]) -> bytes:
    """Export directory with one fake function address per exported name."""
    n = len(names)
    func_table = 40
    name_table = func_table + n * 4
    ord_table = name_table + n * 4
    cursor = ord_table + n * 2
    name_offsets = []
    for name in names:
        name_offsets.append(cursor)
        cursor += len(name) + 1
    dll_off = cursor
    cursor += len(dll_name) + 1

    blob = bytearray(cursor)
    struct.pack_into(
        "<IIHHIIIIIII", blob, 0,
        0, 0, 0, 0, va + dll_off, 1, n, n,
        va + func_table, va + name_table, va + ord_table,
    )
    for i, name in enumerate(names):
        struct.pack_into("<I", blob, func_table + i * 4, va + 4)
        struct.pack_into("<I", blob, name_table + i * 4, va + name_offsets[i])
        struct.pack_into("<H", blob, ord_table + i * 2, i)
        blob[name_offsets[i] : name_offsets[i] + len(name)] = name
    for j, ch in enumerate(dll_name):
        blob[dll_off + j] = ch
    return bytes(blob)


def _optional_header(spec: PeSpec, entry_rva: int, image_size: int, headers_size: int,
                     directories: dict[int, tuple[int, int]]) -> bytes:
    wide = spec.pe32_plus
    buf = bytearray(0xF0 if wide else 0xE0)
    struct.pack_into("<H", buf, 0x00, pe.PE32PLUS_MAGIC if wide else pe.PE32_MAGIC)
    buf[0x02] = 14  # linker major
    buf[0x03] = 0
    struct.pack_into("<I", buf, 0x04, sum(
        s.raw_size if s.raw_size is not None else pe.align_up(len(s.data), spec.file_alignment)
        for s in spec.sections if s.characteristics & pe.SCN_CNT_CODE
    ))
    struct.pack_into("<I", buf, 0x10, entry_rva)
    struct.pack_into("<I", buf, 0x14, 0x1000)  # base of code
    if wide:
        struct.pack_into("<Q", buf, 0x18, 0x140000000)
    else:
        struct.pack_into("<I", buf, 0x18, 0x2000)  # base of data
        struct.pack_into("<I", buf, 0x1C, 0x400000)
    struct.pack_into("<I", buf, 0x20, spec.section_alignment)
    struct.pack_into("<I", buf, 0x24, spec.file_alignment)
    struct.pack_into("<HH", buf, 0x28, 6, 0)  # OS version
    struct.pack_into("<HH", buf, 0x30, 6, 0)  # subsystem version
    struct.pack_into("<I", buf, 0x38, image_size)
    struct.pack_into("<I", buf, 0x3C, headers_size)
    struct.pack_into("<H", buf, 0x44, spec.subsystem)
    struct.pack_into("<H", buf, 0x46, spec.dll_characteristics)
    if wide:
        struct.pack_into("<QQQQ", buf, 0x48, 0x100000, 0x1000, 0x100000, 0x1000)
        struct.pack_into("<I", buf, 0x6C, 16)
        dir_base = 0x70
    else:
        struct.pack_into("<IIII", buf, 0x48, 0x100000, 0x1000, 0x100000, 0x1000)
        struct.pack_into("<I", buf, 0x5C, 16)
        dir_base = 0x60
    for index, (rva, size) in directories.items():
        struct.pack_into("<II", buf, dir_base + index * 8, rva, size)
    return bytes(buf)


def build_pe(spec: PeSpec) -> bytes:
    """Assemble a PE image from the spec; result parses in strict mode."""
    sections = list(spec.sections)
    directories: dict[int, tuple[int, int]] = {}

    # Reserve slots for generated import/export sections so geometry is final.
    import_slot = export_slot = None
    if spec.imports:
        import_slot = len(sections)
        blob_len = len(_build_import_blob(0, spec.imports, spec.pe32_plus))
        sections.append(SectionSpec(b".idata", b"\x00" * blob_len, _RDATA_CHARACTERISTICS))
    if spec.exports:
        export_slot = len(sections)
        blob_len = len(_build_export_blob(0, *spec.exports))
        sections.append(SectionSpec(b".edata", b"\x00" * blob_len, _RDATA_CHARACTERISTICS))

    e_lfanew = pe.DOS_HEADER_LEN + len(spec.stub)
    opt_len = 0xF0 if spec.pe32_plus else 0xE0
    table_end = e_lfanew + 4 + pe.COFF_LEN + opt_len + len(sections) * pe.SECTION_ENTRY_LEN
    headers_size = pe.align_up(table_end, spec.file_alignment)

    vas, raw_sizes, raw_ptrs = [], [], []
    va = pe.align_up(max(headers_size, spec.section_alignment), spec.section_alignment)
    ptr = headers_size
    for s in sections:
        vsize = s.virtual_size if s.virtual_size is not None else len(s.data)
        raw = s.raw_size if s.raw_size is not None else pe.align_up(len(s.data), spec.file_alignment)
        vas.append(va)
        raw_sizes.append(raw)
        raw_ptrs.append(ptr if raw else 0)
        va = pe.align_up(va + max(vsize, 1), spec.section_alignment)
        ptr += raw
    image_size = va

    if import_slot is not None:
        blob = _build_import_blob(vas[import_slot], spec.imports, spec.pe32_plus)
        sections[import_slot] = SectionSpec(b".idata", blob, _RDATA_CHARACTERISTICS)
        directories[pe.DIR_IMPORT] = (vas[import_slot], len(blob))
    if export_slot is not None:
        blob = _build_export_blob(vas[export_slot], *spec.exports)
        sections[export_slot] = SectionSpec(b".edata", blob, _RDATA_CHARACTERISTICS)
        directories[pe.DIR_EXPORT] = (vas[export_slot], len(blob))

    entry_rva = 0
    if sections:
        idx = min(spec.entry_section, len(sections) - 1)
        entry_rva = vas[idx]

    out = bytearray()
    out += pe.DOS_MAGIC
    out += _DOS_BODY
    out += struct.pack("<I", e_lfanew)
    out += spec.stub
    out += pe.PE_SIGNATURE
    out += struct.pack(
        "<HHIIIHH",
        spec.machine, len(sections), spec.timestamp, 0, 0, opt_len,
        spec.coff_characteristics,
    )
    out += _optional_header(spec, entry_rva, image_size, headers_size, directories)
    for i, s in enumerate(sections):
        vsize = s.virtual_size if s.virtual_size is not None else len(s.data)
        out += struct.pack(
            "<8sIIIIIIHHI",
            s.name.ljust(8, b"\x00")[:8], vsize, vas[i], raw_sizes[i], raw_ptrs[i],
            0, 0, 0, 0, s.characteristics,
        )
    out += b"\x00" * (headers_size - len(out))
    for i, s in enumerate(sections):
        if raw_sizes[i]:
            out += s.data[: raw_sizes[i]].ljust(raw_sizes[i], b"\x00")
    out += spec.overlay
    return bytes(out)


# -- content generators ---------------------------------------------------------

_LEXICON = (
    "the quick configuration service windows update manager resource string "
    "value data protocol client server network interface system module "
    "version library default settings profile application session handler"
).split()

_COMMON_OPCODES = bytes(
    [0x48, 0x8B, 0x89, 0xC3, 0xE8, 0x55, 0x5D, 0x90, 0x00, 0x0F, 0x83, 0xEC,
     0xC7, 0x45, 0x8D, 0x4C, 0x24, 0x85, 0xC0, 0x74, 0x75, 0xEB, 0x33, 0xFF]
)

GOODWARE_STRINGS = [
    b"C:\\Program Files\\Common Files\\shared.dll",
    b"https://download.example.com/updates/stable",
    b"Software licensed under standard terms",
    b"SELECT name FROM settings WHERE active = 1",
]

MALWARE_STRINGS = [
    b"HKEY_LOCAL_MACHINE\\Software\\Microsoft\\Windows\\CurrentVersion\\Run",
    b"http://cdn-relay.example.net/gate.php",
    b"C:\\Users\\Public\\svchost32.tmp",
]

GOODWARE_IMPORTS: dict[bytes, list[bytes]] = {
    b"KERNEL32.dll": [b"ExitProcess", b"CreateFileW", b"ReadFile", b"WriteFile", b"CloseHandle"],
    b"USER32.dll": [b"MessageBoxW", b"LoadStringW"],
}

MALWARE_IMPORTS: dict[bytes, list[bytes]] = {
    b"KERNEL32.dll": [b"VirtualAlloc", b"WriteProcessMemory", b"CreateRemoteThread",
                      b"GetProcAddress", b"LoadLibraryA"],
    b"ADVAPI32.dll": [b"RegOpenKeyExA", b"RegSetValueExA"],
}


def text_bytes(rng: random.Random, n: int) -> bytes:
    parts = []
    size = 0
    while size < n:
        word = rng.choice(_LEXICON).encode()
        parts.append(word)
        size += len(word) + 1
    return b" ".join(parts)[:n]


def code_bytes(rng: random.Random, n: int) -> bytes:
    return bytes(rng.choice(_COMMON_OPCODES) for _ in range(n))


def packed_bytes(rng: random.Random, n: int) -> bytes:
    return rng.randbytes(n)


def skewed_bytes(rng: random.Random, n: int) -> bytes:
    return bytes(rng.randrange(0xA0, 0x100) if rng.random() < 0.7 else rng.randrange(0x100)
                 for _ in range(n))


def _embed_strings(rng: random.Random, blob: bytes, strings: list[bytes]) -> bytes:
    buf = bytearray(blob)
    for s in strings:
        if len(buf) <= len(s) + 2:
            continue
        off = rng.randrange(0, len(buf) - len(s) - 2)
        buf[off : off + len(s) + 2] = b"\x00" + s + b"\x00"
    return bytes(buf)


def goodware_spec(rng: random.Random) -> PeSpec:
    n_extra = rng.randint(1, 3)
    sections = [
        SectionSpec(b".text", code_bytes(rng, rng.randrange(2048, 8192)),
                    _TEXT_CHARACTERISTICS),
        SectionSpec(b".rdata",
                    _embed_strings(rng, text_bytes(rng, rng.randrange(1024, 4096)),
                                   rng.sample(GOODWARE_STRINGS, k=2)),
                    _RDATA_CHARACTERISTICS),
    ]
    for i in range(n_extra):
        data = text_bytes(rng, rng.randrange(512, 2048))
        sections.append(SectionSpec(f".data{i}".encode(), data, _DATA_CHARACTERISTICS))
    imports = {lib: rng.sample(funcs, k=min(len(funcs), rng.randint(2, len(funcs))))
               for lib, funcs in GOODWARE_IMPORTS.items()}
    exports = (b"helper.dll", [b"InitHelper", b"RunHelper"]) if rng.random() < 0.3 else None
    return PeSpec(
        sections=sections,
        pe32_plus=rng.random() < 0.7,
        file_alignment=rng.choice([512, 512, 1024]),
        section_alignment=4096,
        timestamp=rng.randrange(1_300_000_000, 1_700_000_000),
        overlay=text_bytes(rng, rng.randrange(0, 512)) if rng.random() < 0.4 else b"",
        imports=imports,
        exports=exports,
    )


def malware_spec(rng: random.Random) -> PeSpec:
    n_sections = rng.randint(1, 6)
    sections = []
    for i in range(n_sections):
        name = rng.choice([b".text", b".xpk0", b".enc", b"", b".fog", b".data"])
        maker = rng.choice([packed_bytes, skewed_bytes, packed_bytes])
        data = maker(rng, rng.randrange(2048, 12288))
        if i == 0:
            data = _embed_strings(rng, data, rng.sample(MALWARE_STRINGS, k=2))
        # packed-looking payloads declare more virtual space than file bytes
        vsize = len(data) + rng.randrange(0, 4096) if rng.random() < 0.5 else None
        sections.append(SectionSpec(name, data, _TEXT_CHARACTERISTICS, virtual_size=vsize))
    imports = {lib: rng.sample(funcs, k=min(len(funcs), rng.randint(2, len(funcs))))
               for lib, funcs in MALWARE_IMPORTS.items()}
    return PeSpec(
        sections=sections,
        pe32_plus=rng.random() < 0.5,
        file_alignment=rng.choice([512, 1024]),
        section_alignment=4096,
        timestamp=rng.randrange(1_300_000_000, 1_700_000_000),
        overlay=packed_bytes(rng, rng.randrange(0, 2048)) if rng.random() < 0.5 else b"",
        imports=imports,
    )


def varied_spec(rng: random.Random) -> PeSpec:
    """Structurally varied image for round-trip stress: 1-12 sections, mixed
    alignments, optional slack and overlay."""
    n_sections = rng.randint(1, 12)
    falign = rng.choice([512, 1024, 2048, 4096])
    sections = []
    for i in range(n_sections):
        data = rng.randbytes(rng.randrange(64, 3000))
        # virtual_size below raw size creates slack; above it creates bss-style tails
        roll = rng.random()
        vsize = None
        if roll < 0.4:
            vsize = max(1, len(data) - rng.randrange(0, len(data)))
        elif roll < 0.6:
            vsize = len(data) + rng.randrange(0, 2048)
        sections.append(
            SectionSpec(
                name=f".s{i}".encode(),
                data=data,
                characteristics=rng.choice(
                    [_TEXT_CHARACTERISTICS, _DATA_CHARACTERISTICS, _RDATA_CHARACTERISTICS]
                ),
                virtual_size=vsize,
            )
        )
    return PeSpec(
        sections=sections,
        pe32_plus=rng.random() < 0.5,
        file_alignment=falign,
        section_alignment=max(4096, falign),
        timestamp=rng.randrange(0, 2**31),
        overlay=rng.randbytes(rng.randrange(0, 1024)) if rng.random() < 0.5 else b"",
    )


def make_corpus(
    out_dir: str | Path,
    count_goodware: int,
    count_malware: int,
    seed: int = 0,
    year_range: tuple[int, int] = (2018, 2024),
    boundary_year: int = 2022,
    train_fraction: float = 0.7,
) -> list[ManifestEntry]:
    """Generate a labeled corpus on disk and return its manifest entries.

    Samples dated at or after ``boundary_year`` land in test2; older ones are
    split train/test1 by ``train_fraction``. Deterministic under ``seed``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    entries: list[ManifestEntry] = []
    recipes = [(LABEL_GOODWARE, goodware_spec, count_goodware, "good"),
               (LABEL_MALWARE, malware_spec, count_malware, "mal")]
    for label, recipe, count, prefix in recipes:
        for i in range(count):
            data = build_pe(recipe(rng))
            year = rng.randint(*year_range)
            if year >= boundary_year:
                split = "test2"
            else:
                split = "train" if rng.random() < train_fraction else "test1"
            sample_id = f"{prefix}-{i:05d}"
            path = out_dir / f"{sample_id}.bin"
            path.write_bytes(data)
            entries.append(
                ManifestEntry(
                    sample_id=sample_id,
                    path=str(path),
                    label=label,
                    class_tag=CLASS_GOODWARE if label == LABEL_GOODWARE else CLASS_UNMODIFIED,
                    generator_id=0,
                    first_seen_year=year,
                    split=split,
                )
            )
    write_manifest(out_dir / "manifest.jsonl", entries)
    return entries
