import json
import logging
import zlib
from pathlib import Path

import numpy as np
from common.models import (
    ControlDocument,
    LibraryDocument,
    MonomialCoefficient,
    RecordDocument,
    SampleDocument,
    SurfaceDocument,
)
from pydantic import ValidationError

from .boundary import CutoffSample, RadialSurface, monomial_exponents, monomial_from_exponents
from .errors import CorruptFile, FormatVersionMismatch
from .library import FORMAT_VERSION, ControlRegion, SolutionLibrary, SolutionRecord
from .spaces import NormalizedFrame

logger = logging.getLogger(__name__)


def canonical_json(value) -> str:
    # Sorted keys and shortest round-trip floats: the form determinism tests compare.
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def records_checksum(records: list) -> int:
    return zlib.crc32(canonical_json(records).encode("utf-8"))


def surface_document(surface: RadialSurface) -> SurfaceDocument:
    n = surface.dim
    return SurfaceDocument(
        origin=surface.frame.origin.tolist(),
        scales=surface.frame.unit_scales.tolist(),
        degree=surface.degree,
        coefficients=[
            MonomialCoefficient(monomial=monomial_exponents(m, n), value=float(v))
            for m, v in zip(surface.monomials, surface.coefficients, strict=True)
        ],
        rms_residual=surface.rms_residual,
        margin=surface.margin,
        floor=surface.min_radius_floor,
        sample_count=surface.sample_count,
        hole_count=surface.hole_count,
        samples=[
            SampleDocument(direction=s.direction.tolist(), radius=s.radius, clipped=s.clipped, hole_detected=s.hole_detected)
            for s in surface.samples
        ],
    )


def surface_from_document(doc: SurfaceDocument) -> RadialSurface:
    return RadialSurface(
        frame=NormalizedFrame(np.asarray(doc.origin), np.asarray(doc.scales)),
        degree=doc.degree,
        monomials=tuple(monomial_from_exponents(c.monomial) for c in doc.coefficients),
        coefficients=np.asarray([c.value for c in doc.coefficients], dtype=float),
        rms_residual=doc.rms_residual,
        margin=doc.margin,
        min_radius_floor=doc.floor,
        sample_count=doc.sample_count,
        samples=tuple(
            CutoffSample(np.asarray(s.direction), s.radius, s.clipped, s.hole_detected) for s in doc.samples
        ),
        hole_count=doc.hole_count,
    )


def record_document(record: SolutionRecord) -> RecordDocument:
    return RecordDocument(
        id=record.id,
        box=record.box,
        surfaces=[surface_document(s) for s in record.surfaces],
        control=ControlDocument(
            vertices=[v.tolist() for v in record.control_region.vertices],
            centroid=record.control_region.centroid.tolist(),
        ),
        provenance=record.provenance,
    )


def record_from_document(doc: RecordDocument) -> SolutionRecord:
    return SolutionRecord(
        id=doc.id,
        surfaces=tuple(surface_from_document(s) for s in doc.surfaces),
        control_region=ControlRegion(tuple(np.asarray(v) for v in doc.control.vertices)),
        box=doc.box,
        provenance=doc.provenance,
    )


def library_document(lib: SolutionLibrary) -> LibraryDocument:
    records = [record_document(r) for r in lib.records]
    dumped = [r.model_dump(mode="json") for r in records]
    return LibraryDocument(
        format_version=lib.format_version,
        plant_id=lib.plant_id,
        records=records,
        checksum=records_checksum(dumped),
    )


def dumps_library(lib: SolutionLibrary) -> str:
    return canonical_json(library_document(lib).model_dump(mode="json")) + "\n"


def save_library(lib: SolutionLibrary, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_library(lib), encoding="utf-8")
    logger.info(f"Saved library with {len(lib)} records to {path}")


def load_library(path: Path) -> SolutionLibrary:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"{path}: {e}") from e
    if not isinstance(raw, dict) or "records" not in raw or "checksum" not in raw:
        raise CorruptFile(f"{path}: not a library document")
    if raw.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format_version {raw.get('format_version')!r}, expected {FORMAT_VERSION}")
    if records_checksum(raw["records"]) != raw["checksum"]:
        raise CorruptFile(f"{path}: checksum mismatch")
    try:
        doc = LibraryDocument.model_validate(raw)
    except ValidationError as e:
        raise CorruptFile(f"{path}: {e.error_count()} schema errors") from e
    lib = SolutionLibrary(
        plant_id=doc.plant_id,
        records=tuple(record_from_document(r) for r in doc.records),
        format_version=doc.format_version,
    )
    logger.info(f"Loaded library with {len(lib)} records from {path}")
    return lib
