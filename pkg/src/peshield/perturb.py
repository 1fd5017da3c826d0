"""Functionality-preserving PE manipulations.

Each perturbation is a frozen value object carrying concrete payload bytes,
so applying the same step sequence to the same layout always produces the
same bytes. ``apply`` returns a new layout; entry-point RVA and every
pre-existing section payload byte are left untouched, and the checksum is
zeroed (the loader ignores it for non-driver images).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Union

from . import pe
from .errors import (
    NoSlackAvailable,
    PayloadTooLarge,
    SectionTableFull,
)

PARTIAL_DOS_LIMIT = 58  # editable bytes after the MZ magic


@dataclass(frozen=True)
class PartialDos:
    """Overwrite up to 58 bytes after the MZ magic (file bytes [2, 0x3C))."""

    payload: bytes


@dataclass(frozen=True)
class FullDos:
    """Rewrite the DOS header body and stub; magic and e_lfanew are untouchable."""

    header_payload: bytes
    stub_payload: bytes


@dataclass(frozen=True)
class ExtendDos:
    """Grow the DOS stub by ``amount`` bytes (rounded up to file_alignment),
    shifting e_lfanew, size_of_headers, and every raw pointer by the same
    aligned amount. ``payload`` fills the inserted bytes (zero-padded)."""

    amount: int
    payload: bytes = b""


@dataclass(frozen=True)
class PadOverlay:
    """Append bytes after the last section raw extent."""

    payload: bytes


@dataclass(frozen=True)
class FillSlack:
    """Overwrite slack regions. Keys are region start offsets as reported by
    ``pe.slack_regions``; each payload must fit within its region."""

    assignments: tuple[tuple[int, bytes], ...]


@dataclass(frozen=True)
class InjectSection:
    """Append a new section (table entry plus aligned raw extent). The table
    entry consumes header slack; if there is none, the headers grow by one
    file_alignment unit and all raw pointers shift."""

    name: bytes
    content: bytes
    characteristics: int = pe.SCN_CNT_INITIALIZED_DATA | pe.SCN_MEM_READ


Perturbation = Union[PartialDos, FullDos, ExtendDos, PadOverlay, FillSlack, InjectSection]

_KIND_NAMES = {
    PartialDos: "partial_dos",
    FullDos: "full_dos",
    ExtendDos: "extend_dos",
    PadOverlay: "pad_overlay",
    FillSlack: "fill_slack",
    InjectSection: "inject_section",
}

ALL_KINDS = tuple(_KIND_NAMES.values())


def kind_name(step: Perturbation) -> str:
    return _KIND_NAMES[type(step)]


def _shift_pointers(layout: pe.PeLayout, delta: int) -> None:
    for entry in layout.section_table:
        if entry.pointer_to_raw_data:
            entry.pointer_to_raw_data += delta
    layout.gaps = {off + delta: blob for off, blob in layout.gaps.items()}


def _apply_partial_dos(layout: pe.PeLayout, step: PartialDos) -> None:
    if len(step.payload) > PARTIAL_DOS_LIMIT:
        raise PayloadTooLarge(
            f"partial DOS payload is {len(step.payload)} bytes, limit {PARTIAL_DOS_LIMIT}"
        )
    body = bytearray(layout.dos.body)
    body[: len(step.payload)] = step.payload
    layout.dos.body = bytes(body)


def _apply_full_dos(layout: pe.PeLayout, step: FullDos) -> None:
    if len(step.header_payload) > PARTIAL_DOS_LIMIT:
        raise PayloadTooLarge("full DOS header payload exceeds the 58 editable bytes")
    if len(step.stub_payload) > len(layout.dos.stub):
        raise PayloadTooLarge(
            f"stub payload is {len(step.stub_payload)} bytes, stub holds {len(layout.dos.stub)}"
        )
    body = bytearray(layout.dos.body)
    body[: len(step.header_payload)] = step.header_payload
    layout.dos.body = bytes(body)
    stub = bytearray(layout.dos.stub)
    stub[: len(step.stub_payload)] = step.stub_payload
    layout.dos.stub = bytes(stub)


def _apply_extend_dos(layout: pe.PeLayout, step: ExtendDos) -> None:
    falign = layout.optional.file_alignment or 512
    aligned = pe.align_up(max(step.amount, 1), falign)
    inserted = step.payload[:aligned].ljust(aligned, b"\x00")
    layout.dos.stub = layout.dos.stub + inserted
    layout.dos.e_lfanew += aligned
    layout.optional.size_of_headers += aligned
    _shift_pointers(layout, aligned)


def _apply_pad_overlay(layout: pe.PeLayout, step: PadOverlay) -> None:
    layout.overlay = layout.overlay + step.payload


def _apply_fill_slack(layout: pe.PeLayout, step: FillSlack) -> None:
    regions = pe.slack_regions(layout)
    if not regions:
        raise NoSlackAvailable("layout has no slack region to fill")
    starts = {off: length for off, length in regions}
    # Writable atoms addressed by file offset, in order.
    atoms: list[tuple[int, str, int]] = []  # (offset, kind, key)
    for i, entry in enumerate(layout.section_table):
        s = layout.inter_section_slack.get(i, b"")
        if s:
            atoms.append((entry.pointer_to_raw_data + len(layout.section_payloads[i]), "slack", i))
    for off, blob in layout.gaps.items():
        if blob:
            atoms.append((off, "gap", off))
    atoms.sort()

    for region_off, payload in step.assignments:
        if region_off not in starts:
            raise NoSlackAvailable(f"no slack region starts at offset 0x{region_off:x}")
        if len(payload) > starts[region_off]:
            raise PayloadTooLarge(
                f"payload of {len(payload)} bytes exceeds slack region of {starts[region_off]}"
            )
        remaining = payload
        cursor = region_off
        for off, kind, key in atoms:
            blob = (layout.inter_section_slack[key] if kind == "slack" else layout.gaps[key])
            if off + len(blob) <= cursor or not remaining:
                continue
            if off > cursor:
                break
            local = cursor - off
            chunk = remaining[: len(blob) - local]
            patched = blob[:local] + chunk + blob[local + len(chunk):]
            if kind == "slack":
                layout.inter_section_slack[key] = patched
            else:
                layout.gaps[key] = patched
            remaining = remaining[len(chunk):]
            cursor += len(chunk)


def _apply_inject_section(
    layout: pe.PeLayout, step: InjectSection, allow_header_extension: bool = True
) -> None:
    falign = layout.optional.file_alignment or 512
    salign = layout.optional.section_alignment or 4096
    raw_size = pe.align_up(len(step.content), falign)

    if len(layout.header_slack) < pe.SECTION_ENTRY_LEN:
        if not allow_header_extension:
            raise SectionTableFull("no header slack for a new section entry")
        layout.header_slack = layout.header_slack + b"\x00" * falign
        layout.optional.size_of_headers += falign
        _shift_pointers(layout, falign)
    layout.header_slack = layout.header_slack[pe.SECTION_ENTRY_LEN:]

    # Raw extent lands after every existing extent; the overlay stays behind it.
    end = layout.optional.size_of_headers
    for off, length, _ in layout.extents():
        end = max(end, off + length)
    for off, blob in layout.gaps.items():
        end = max(end, off + len(blob))
    ptr = pe.align_up(end, falign)
    if ptr > end:
        layout.gaps[end] = b"\x00" * (ptr - end)

    va = pe.align_up(max(layout.optional.size_of_image, salign), salign)
    entry = pe.SectionEntry(
        name=step.name.ljust(8, b"\x00")[:8],
        virtual_size=len(step.content),
        virtual_address=va,
        size_of_raw_data=raw_size,
        pointer_to_raw_data=ptr if raw_size else 0,
        characteristics=step.characteristics,
    )
    index = len(layout.section_table)
    layout.section_table.append(entry)
    layout.section_payloads.append(step.content)
    padding = raw_size - len(step.content)
    if padding:
        layout.inter_section_slack[index] = b"\x00" * padding
    layout.coff.number_of_sections += 1
    layout.optional.size_of_image = pe.align_up(va + max(len(step.content), 1), salign)


def apply(layout: pe.PeLayout, step: Perturbation) -> pe.PeLayout:
    """Apply one perturbation, returning a new layout. The input is not
    modified. Raises NoSlackAvailable, SectionTableFull, or PayloadTooLarge
    when the step cannot be applied to this layout."""
    out = layout.clone()
    if isinstance(step, PartialDos):
        _apply_partial_dos(out, step)
    elif isinstance(step, FullDos):
        _apply_full_dos(out, step)
    elif isinstance(step, ExtendDos):
        _apply_extend_dos(out, step)
    elif isinstance(step, PadOverlay):
        _apply_pad_overlay(out, step)
    elif isinstance(step, FillSlack):
        _apply_fill_slack(out, step)
    elif isinstance(step, InjectSection):
        _apply_inject_section(out, step)
    else:
        raise TypeError(f"not a perturbation: {step!r}")
    out.optional.checksum = 0
    return out


def edited_bytes(step: Perturbation) -> int:
    """Bytes the step overwrites in place (as opposed to inserting)."""
    if isinstance(step, PartialDos):
        return len(step.payload)
    if isinstance(step, FullDos):
        return len(step.header_payload) + len(step.stub_payload)
    if isinstance(step, FillSlack):
        return sum(len(p) for _, p in step.assignments)
    if isinstance(step, InjectSection):
        return pe.SECTION_ENTRY_LEN  # the table entry lands in header slack
    return 0


@dataclass(frozen=True)
class PerturbationTrace:
    """An ordered, replayable record of applied perturbations."""

    steps: tuple[Perturbation, ...]
    total_injected_bytes: int
    total_edited_bytes: int
    queries_used: int

    def __len__(self) -> int:
        return len(self.steps)


def make_trace(
    layout: pe.PeLayout, steps: tuple[Perturbation, ...], queries_used: int
) -> PerturbationTrace:
    """Build a trace for ``steps`` applied to ``layout``, computing the byte
    budget from the actual file-length delta plus in-place edits."""
    injected = 0
    edited = 0
    current = layout
    for step in steps:
        before = current.file_length()
        current = apply(current, step)
        injected += current.file_length() - before
        edited += edited_bytes(step)
    return PerturbationTrace(
        steps=steps,
        total_injected_bytes=injected,
        total_edited_bytes=edited,
        queries_used=queries_used,
    )


def replay(layout: pe.PeLayout, steps: tuple[Perturbation, ...]) -> pe.PeLayout:
    """Apply steps in order, skipping any that no longer fit the layout
    (mirrors the attack drivers, which log and skip failing steps)."""
    current = layout
    for step in steps:
        try:
            current = apply(current, step)
        except (NoSlackAvailable, SectionTableFull, PayloadTooLarge):
            continue
    return current


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def step_record(step: Perturbation) -> str:
    """One-line audit record: tag, parameters, payload digest."""
    if isinstance(step, PartialDos):
        return f"partial_dos len={len(step.payload)} sha={_digest(step.payload)}"
    if isinstance(step, FullDos):
        return (
            f"full_dos header_len={len(step.header_payload)} stub_len={len(step.stub_payload)} "
            f"sha={_digest(step.header_payload + step.stub_payload)}"
        )
    if isinstance(step, ExtendDos):
        return f"extend_dos amount={step.amount} sha={_digest(step.payload)}"
    if isinstance(step, PadOverlay):
        return f"pad_overlay len={len(step.payload)} sha={_digest(step.payload)}"
    if isinstance(step, FillSlack):
        body = b"".join(struct.pack("<Q", off) + p for off, p in step.assignments)
        offsets = ",".join(f"0x{off:x}" for off, _ in step.assignments)
        return f"fill_slack regions={offsets} sha={_digest(body)}"
    if isinstance(step, InjectSection):
        name_hex = step.name.rstrip(b"\x00").hex()
        return (
            f"inject_section name={name_hex} "
            f"len={len(step.content)} characteristics=0x{step.characteristics:08x} "
            f"sha={_digest(step.content)}"
        )
    raise TypeError(f"not a perturbation: {step!r}")


def trace_records(trace: PerturbationTrace) -> list[str]:
    """Line-oriented serialization of a trace for reproducibility audits."""
    lines = [
        f"# steps={len(trace.steps)} injected={trace.total_injected_bytes} "
        f"edited={trace.total_edited_bytes} queries={trace.queries_used}"
    ]
    lines.extend(step_record(s) for s in trace.steps)
    return lines
