"""Parse Windows PE images into a region-complete layout and write them back.

The layout assigns every input byte to exactly one region: DOS header/stub,
NT headers, section table, header slack, section payloads, per-section slack,
inter-extent gaps, and overlay. Serialization of an unmutated layout
reproduces the originating bytes exactly; mutations (see ``peshield.perturb``)
work on cloned layouts and keep the same guarantee for the regions they do
not touch.

Only the fields the rest of the toolkit reads or mutates are exposed as named
attributes. Everything else in the optional header is preserved verbatim in
its raw byte backing so round-trips stay byte-exact.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .errors import InconsistentLayout, MalformedDos, MalformedPe, OverlappingSections

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"

DOS_HEADER_LEN = 0x40
E_LFANEW_OFFSET = 0x3C
COFF_LEN = 20
SECTION_ENTRY_LEN = 40

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

# Section characteristics bits consumed by the feature extractor.
SCN_MEM_EXECUTE = 0x20000000
SCN_MEM_READ = 0x40000000
SCN_MEM_WRITE = 0x80000000
SCN_CNT_CODE = 0x00000020
SCN_CNT_INITIALIZED_DATA = 0x00000040

# Data directory indices referenced elsewhere.
DIR_EXPORT = 0
DIR_IMPORT = 1
DIR_RESOURCE = 2
DIR_SECURITY = 4
DIR_BASERELOC = 5
DIR_DEBUG = 6
DIR_TLS = 9

_SECTION_STRUCT = struct.Struct("<8sIIIIIIHHI")
_COFF_STRUCT = struct.Struct("<HHIIIHH")


def align_up(value: int, alignment: int) -> int:
    if alignment <= 0:
        return value
    return (value + alignment - 1) // alignment * alignment


@dataclass(frozen=True)
class RawImage:
    """An input file: raw bytes plus provenance for manifests and run logs."""

    data: bytes
    source_id: str = ""
    digest: bytes = b""

    @classmethod
    def from_bytes(cls, data: bytes, source_id: str = "") -> "RawImage":
        return cls(data=data, source_id=source_id, digest=hashlib.sha256(data).digest())


@dataclass
class DosRegion:
    """DOS header and stub. ``magic`` and ``e_lfanew`` are never mutable."""

    body: bytes  # file bytes [2, 0x3C)
    e_lfanew: int
    stub: bytes  # file bytes [0x40, e_lfanew)


@dataclass
class CoffHeader:
    machine: int
    number_of_sections: int
    time_date_stamp: int
    pointer_to_symbol_table: int
    number_of_symbols: int
    size_of_optional_header: int
    characteristics: int

    def pack(self) -> bytes:
        return _COFF_STRUCT.pack(
            self.machine,
            self.number_of_sections,
            self.time_date_stamp,
            self.pointer_to_symbol_table,
            self.number_of_symbols,
            self.size_of_optional_header,
            self.characteristics,
        )


class OptionalHeader:
    """Optional header backed by its raw bytes.

    Named accessors read and write in place; unnamed fields ride along
    untouched, which is what makes serialization byte-exact.
    """

    _MIN_LEN_PE32 = 0x60
    _MIN_LEN_PE32PLUS = 0x70

    def __init__(self, raw: bytes | bytearray):
        self.raw = bytearray(raw)
        if len(self.raw) < 2:
            raise MalformedPe("optional header shorter than its magic field")

    def _u16(self, off: int) -> int:
        return struct.unpack_from("<H", self.raw, off)[0]

    def _u32(self, off: int) -> int:
        return struct.unpack_from("<I", self.raw, off)[0]

    def _put_u32(self, off: int, value: int) -> None:
        struct.pack_into("<I", self.raw, off, value & 0xFFFFFFFF)

    @property
    def magic(self) -> int:
        return self._u16(0x00)

    @property
    def is_pe32_plus(self) -> bool:
        return self.magic == PE32PLUS_MAGIC

    @property
    def major_linker_version(self) -> int:
        return self.raw[0x02]

    @property
    def minor_linker_version(self) -> int:
        return self.raw[0x03]

    @property
    def size_of_code(self) -> int:
        return self._u32(0x04)

    @property
    def address_of_entry_point(self) -> int:
        return self._u32(0x10)

    @property
    def section_alignment(self) -> int:
        return self._u32(0x20)

    @property
    def file_alignment(self) -> int:
        return self._u32(0x24)

    @property
    def major_operating_system_version(self) -> int:
        return self._u16(0x28)

    @property
    def minor_operating_system_version(self) -> int:
        return self._u16(0x2A)

    @property
    def major_image_version(self) -> int:
        return self._u16(0x2C)

    @property
    def minor_image_version(self) -> int:
        return self._u16(0x2E)

    @property
    def major_subsystem_version(self) -> int:
        return self._u16(0x30)

    @property
    def minor_subsystem_version(self) -> int:
        return self._u16(0x32)

    @property
    def size_of_image(self) -> int:
        return self._u32(0x38)

    @size_of_image.setter
    def size_of_image(self, value: int) -> None:
        self._put_u32(0x38, value)

    @property
    def size_of_headers(self) -> int:
        return self._u32(0x3C)

    @size_of_headers.setter
    def size_of_headers(self, value: int) -> None:
        self._put_u32(0x3C, value)

    @property
    def checksum(self) -> int:
        return self._u32(0x40)

    @checksum.setter
    def checksum(self, value: int) -> None:
        self._put_u32(0x40, value)

    @property
    def subsystem(self) -> int:
        return self._u16(0x44)

    @property
    def dll_characteristics(self) -> int:
        return self._u16(0x46)

    @property
    def size_of_heap_commit(self) -> int:
        if self.is_pe32_plus:
            return struct.unpack_from("<Q", self.raw, 0x60)[0]
        return self._u32(0x54)

    @property
    def _num_rva_offset(self) -> int:
        return 0x6C if self.is_pe32_plus else 0x5C

    @property
    def _directories_offset(self) -> int:
        return 0x70 if self.is_pe32_plus else 0x60

    @property
    def number_of_rva_and_sizes(self) -> int:
        return self._u32(self._num_rva_offset)

    @property
    def data_directories(self) -> list[tuple[int, int]]:
        """(rva, size) pairs, as many as are declared and physically present."""
        base = self._directories_offset
        count = min(self.number_of_rva_and_sizes, (len(self.raw) - base) // 8)
        out = []
        for i in range(max(count, 0)):
            rva = self._u32(base + i * 8)
            size = self._u32(base + i * 8 + 4)
            out.append((rva, size))
        return out

    def directory(self, index: int) -> tuple[int, int]:
        dirs = self.data_directories
        if 0 <= index < len(dirs):
            return dirs[index]
        return (0, 0)

    def set_directory(self, index: int, rva: int, size: int) -> None:
        base = self._directories_offset + index * 8
        if index >= self.number_of_rva_and_sizes or base + 8 > len(self.raw):
            raise InconsistentLayout(f"data directory {index} not present in header")
        self._put_u32(base, rva)
        self._put_u32(base + 4, size)

    def min_length(self) -> int:
        return self._MIN_LEN_PE32PLUS if self.is_pe32_plus else self._MIN_LEN_PE32

    def clone(self) -> "OptionalHeader":
        return OptionalHeader(bytes(self.raw))


@dataclass
class SectionEntry:
    name: bytes  # raw 8 bytes, may be non-UTF8
    virtual_size: int
    virtual_address: int
    size_of_raw_data: int
    pointer_to_raw_data: int
    pointer_to_relocations: int = 0
    pointer_to_line_numbers: int = 0
    number_of_relocations: int = 0
    number_of_line_numbers: int = 0
    characteristics: int = 0

    def pack(self) -> bytes:
        return _SECTION_STRUCT.pack(
            self.name.ljust(8, b"\x00")[:8],
            self.virtual_size,
            self.virtual_address,
            self.size_of_raw_data,
            self.pointer_to_raw_data,
            self.pointer_to_relocations,
            self.pointer_to_line_numbers,
            self.number_of_relocations,
            self.number_of_line_numbers,
            self.characteristics,
        )

    @classmethod
    def unpack(cls, data: bytes, offset: int) -> "SectionEntry":
        fields = _SECTION_STRUCT.unpack_from(data, offset)
        return cls(*fields)


@dataclass
class PeLayout:
    """Every byte of the file, assigned to exactly one region.

    ``section_payloads[i]`` holds the first min(virtual_size, stored raw size)
    bytes of section i's raw extent, ``inter_section_slack[i]`` the remainder.
    ``gaps`` maps a file offset to bytes claimed by no header, extent, or
    overlay (sloppy real-world layouts). ``header_slack`` sits between the end
    of the section table and size_of_headers.
    """

    dos: DosRegion
    coff: CoffHeader
    optional: OptionalHeader
    section_table: list[SectionEntry]
    section_payloads: list[bytes]
    inter_section_slack: dict[int, bytes]
    header_slack: bytes
    overlay: bytes
    gaps: dict[int, bytes] = field(default_factory=dict)

    # -- derived geometry -------------------------------------------------

    def section_table_offset(self) -> int:
        return self.dos.e_lfanew + 4 + COFF_LEN + self.coff.size_of_optional_header

    def section_table_end(self) -> int:
        return self.section_table_offset() + len(self.section_table) * SECTION_ENTRY_LEN

    def stored_raw_size(self, index: int) -> int:
        return len(self.section_payloads[index]) + len(self.inter_section_slack.get(index, b""))

    def extents(self) -> list[tuple[int, int, int]]:
        """(offset, length, section index) of nonempty raw extents, sorted."""
        out = []
        for i, entry in enumerate(self.section_table):
            stored = self.stored_raw_size(i)
            if entry.pointer_to_raw_data > 0 and stored > 0:
                out.append((entry.pointer_to_raw_data, stored, i))
        out.sort()
        return out

    def file_length(self) -> int:
        end = self.optional.size_of_headers
        for off, length, _ in self.extents():
            end = max(end, off + length)
        for off, blob in self.gaps.items():
            end = max(end, off + len(blob))
        return end + len(self.overlay)

    def clone(self) -> "PeLayout":
        return PeLayout(
            dos=DosRegion(self.dos.body, self.dos.e_lfanew, self.dos.stub),
            coff=CoffHeader(**vars(self.coff)),
            optional=self.optional.clone(),
            section_table=[SectionEntry(**vars(e)) for e in self.section_table],
            section_payloads=list(self.section_payloads),
            inter_section_slack=dict(self.inter_section_slack),
            header_slack=self.header_slack,
            overlay=self.overlay,
            gaps=dict(self.gaps),
        )


def parse_bytes(data: bytes, source_id: str = "", tolerant: bool = False) -> PeLayout:
    return parse_pe(RawImage.from_bytes(data, source_id), tolerant=tolerant)


def parse_pe(image: RawImage, tolerant: bool = False) -> PeLayout:
    """Parse an image into a PeLayout, assigning every byte to one region.

    Strict mode (default) rejects any violated structural invariant. Tolerant
    mode clamps raw extents and size_of_headers at EOF and skips alignment
    checks, which is enough for most sloppy real-world binaries; overlapping
    extents are rejected in both modes because bytes could not be assigned
    uniquely.
    """
    data = image.data
    if len(data) < DOS_HEADER_LEN:
        raise MalformedDos(f"image is {len(data)} bytes, below the 64-byte DOS header")
    if data[:2] != DOS_MAGIC:
        raise MalformedDos("missing MZ magic")
    e_lfanew = struct.unpack_from("<I", data, E_LFANEW_OFFSET)[0]
    if e_lfanew < DOS_HEADER_LEN:
        raise MalformedDos(f"e_lfanew 0x{e_lfanew:x} points inside the DOS header")
    if e_lfanew >= len(data) - 4:
        raise MalformedDos(f"e_lfanew 0x{e_lfanew:x} points past the file")
    if data[e_lfanew : e_lfanew + 4] != PE_SIGNATURE:
        raise MalformedPe("missing PE\\0\\0 signature at e_lfanew")

    dos = DosRegion(
        body=data[2:E_LFANEW_OFFSET],
        e_lfanew=e_lfanew,
        stub=data[DOS_HEADER_LEN:e_lfanew],
    )

    coff_off = e_lfanew + 4
    if coff_off + COFF_LEN > len(data):
        raise MalformedPe("truncated COFF header")
    coff = CoffHeader(*_COFF_STRUCT.unpack_from(data, coff_off))

    opt_off = coff_off + COFF_LEN
    opt_end = opt_off + coff.size_of_optional_header
    if opt_end > len(data):
        raise MalformedPe("optional header extends past the file")
    optional = OptionalHeader(data[opt_off:opt_end])
    if optional.magic not in (PE32_MAGIC, PE32PLUS_MAGIC):
        raise MalformedPe(f"optional header magic 0x{optional.magic:x} is not PE32/PE32+")
    if coff.size_of_optional_header < optional.min_length():
        raise MalformedPe("optional header too short for its declared format")

    falign = optional.file_alignment
    if not tolerant:
        if falign < 512 or falign > 65536 or falign & (falign - 1):
            raise MalformedPe(f"file_alignment 0x{falign:x} is not a power of two in [512, 65536]")

    table_off = opt_end
    table_end = table_off + coff.number_of_sections * SECTION_ENTRY_LEN
    if table_end > len(data):
        raise MalformedPe("section table extends past the file")

    headers_end = optional.size_of_headers
    if not tolerant:
        if falign and headers_end % falign:
            raise MalformedPe("size_of_headers is not a multiple of file_alignment")
        if headers_end < table_end:
            raise MalformedPe("size_of_headers ends before the section table does")
        if headers_end > len(data):
            raise MalformedPe("size_of_headers extends past the file")
    else:
        headers_end = max(min(headers_end, len(data)), table_end)

    sections = [
        SectionEntry.unpack(data, table_off + i * SECTION_ENTRY_LEN)
        for i in range(coff.number_of_sections)
    ]

    payloads: list[bytes] = []
    slack: dict[int, bytes] = {}
    extents: list[tuple[int, int, int]] = []
    for i, entry in enumerate(sections):
        ptr, raw_size = entry.pointer_to_raw_data, entry.size_of_raw_data
        if ptr == 0 or raw_size == 0:
            payloads.append(b"")
            continue
        if not tolerant and falign and ptr % falign:
            raise MalformedPe(f"section {i} raw pointer 0x{ptr:x} not aligned to file_alignment")
        end = ptr + raw_size
        if end > len(data):
            if not tolerant:
                raise MalformedPe(f"section {i} raw extent extends past the file")
            end = len(data)
        stored = max(end - ptr, 0) if ptr < len(data) else 0
        payload_len = min(entry.virtual_size, stored)
        payloads.append(data[ptr : ptr + payload_len])
        if stored > payload_len:
            slack[i] = data[ptr + payload_len : ptr + stored]
        if stored:
            extents.append((ptr, stored, i))

    extents.sort()
    gaps: dict[int, bytes] = {}
    cursor = headers_end
    for off, length, i in extents:
        if off < cursor:
            raise OverlappingSections(
                f"section {i} raw extent at 0x{off:x} overlaps bytes already claimed"
            )
        if off > cursor:
            gaps[cursor] = data[cursor:off]
        cursor = off + length
    overlay = data[cursor:]

    layout = PeLayout(
        dos=dos,
        coff=coff,
        optional=optional,
        section_table=sections,
        section_payloads=payloads,
        inter_section_slack=slack,
        header_slack=data[table_end:headers_end],
        overlay=overlay,
        gaps=gaps,
    )
    return layout


def serialize_pe(layout: PeLayout) -> bytes:
    """Write a layout back to bytes; exact inverse of parse_pe for unmutated
    layouts. Raises InconsistentLayout when the structural bookkeeping no
    longer adds up (wrong section count, non-contiguous regions, ...)."""
    coff = layout.coff
    if coff.number_of_sections != len(layout.section_table):
        raise InconsistentLayout(
            f"number_of_sections={coff.number_of_sections} but table holds "
            f"{len(layout.section_table)} entries"
        )
    if len(layout.section_payloads) != len(layout.section_table):
        raise InconsistentLayout("section payload list out of step with the table")
    if coff.size_of_optional_header != len(layout.optional.raw):
        raise InconsistentLayout("size_of_optional_header differs from stored header bytes")
    if layout.dos.e_lfanew != DOS_HEADER_LEN + len(layout.dos.stub):
        raise InconsistentLayout("e_lfanew does not match the stored DOS stub length")
    if len(layout.dos.body) != E_LFANEW_OFFSET - 2:
        raise InconsistentLayout("DOS body must span file bytes [2, 0x3C)")

    head = bytearray()
    head += DOS_MAGIC
    head += layout.dos.body
    head += struct.pack("<I", layout.dos.e_lfanew)
    head += layout.dos.stub
    head += PE_SIGNATURE
    head += coff.pack()
    head += layout.optional.raw
    for entry in layout.section_table:
        head += entry.pack()
    head += layout.header_slack
    if len(head) != layout.optional.size_of_headers:
        raise InconsistentLayout(
            f"headers serialize to {len(head)} bytes but size_of_headers is "
            f"{layout.optional.size_of_headers}"
        )

    regions: list[tuple[int, bytes]] = [(0, bytes(head))]
    for off, length, i in layout.extents():
        blob = layout.section_payloads[i] + layout.inter_section_slack.get(i, b"")
        regions.append((off, blob))
    for off, blob in layout.gaps.items():
        if blob:
            regions.append((off, blob))
    regions.sort(key=lambda r: r[0])

    out = bytearray()
    for off, blob in regions:
        if off != len(out):
            raise InconsistentLayout(
                f"region at 0x{off:x} is not contiguous with previous end 0x{len(out):x}"
            )
        out += blob
    out += layout.overlay
    return bytes(out)


def slack_regions(layout: PeLayout) -> list[tuple[int, int]]:
    """Maximal, disjoint, offset-sorted (offset, length) regions of writable
    unused space: per-section slack plus inter-extent gaps. Header bytes,
    payloads, and the overlay are never included."""
    atoms: list[tuple[int, int]] = []
    for i, entry in enumerate(layout.section_table):
        s = layout.inter_section_slack.get(i, b"")
        if s:
            atoms.append((entry.pointer_to_raw_data + len(layout.section_payloads[i]), len(s)))
    for off, blob in layout.gaps.items():
        if blob:
            atoms.append((off, len(blob)))
    atoms.sort()
    merged: list[tuple[int, int]] = []
    for off, length in atoms:
        if merged and merged[-1][0] + merged[-1][1] == off:
            merged[-1] = (merged[-1][0], merged[-1][1] + length)
        else:
            merged.append((off, length))
    return [(off, length) for off, length in merged]


def rva_to_offset(layout: PeLayout, rva: int) -> int | None:
    """Map an RVA to a file offset via the section table; None if unmapped."""
    if 0 <= rva < layout.optional.size_of_headers:
        return rva
    for i, entry in enumerate(layout.section_table):
        span = max(entry.virtual_size, layout.stored_raw_size(i))
        if span and entry.virtual_address <= rva < entry.virtual_address + span:
            delta = rva - entry.virtual_address
            if delta < layout.stored_raw_size(i):
                return entry.pointer_to_raw_data + delta
            return None
    return None


def read_region(layout: PeLayout, index: int) -> bytes:
    """Raw extent bytes of section ``index`` (payload plus slack)."""
    return layout.section_payloads[index] + layout.inter_section_slack.get(index, b"")
