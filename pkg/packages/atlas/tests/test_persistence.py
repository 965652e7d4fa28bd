import json

import pytest

from atlas.errors import CorruptFile, FormatVersionMismatch
from atlas.library import FORMAT_VERSION, SolutionLibrary, decompose, expand_control_region
from atlas.persistence import dumps_library, load_library, records_checksum, save_library


@pytest.fixture
def two_records(integrator, unit_box, interval_cfg):
    lib = decompose(integrator, [[2.0], [6.0]], [unit_box], interval_cfg)
    grown = expand_control_region(integrator, lib.get("r000"), interval_cfg, interior_origins=[[2.5]])
    return lib.with_record(grown)


def test_empty_library_round_trip(tmp_path):
    lib = SolutionLibrary(plant_id="affine")
    save_library(lib, tmp_path / "lib.json")
    loaded = load_library(tmp_path / "lib.json")
    assert loaded.plant_id == "affine"
    assert loaded.records == ()
    assert loaded.format_version == FORMAT_VERSION


def test_round_trip_is_byte_identical(tmp_path, two_records):
    path = tmp_path / "nested" / "lib.json"
    save_library(two_records, path)
    loaded = load_library(path)
    assert dumps_library(loaded) == path.read_text(encoding="utf-8")


def test_round_trip_preserves_fields(tmp_path, two_records):
    save_library(two_records, tmp_path / "lib.json")
    loaded = load_library(tmp_path / "lib.json")
    assert [r.id for r in loaded.records] == ["r000", "r001"]
    for original, restored in zip(two_records.records, loaded.records, strict=True):
        assert restored.box == original.box
        assert restored.provenance == original.provenance
        assert len(restored.surfaces) == len(original.surfaces)
        for a, b in zip(original.surfaces, restored.surfaces, strict=True):
            assert a.monomials == b.monomials
            assert a.coefficients.tolist() == b.coefficients.tolist()
            assert a.frame.origin.tolist() == b.frame.origin.tolist()
            assert a.frame.unit_scales.tolist() == b.frame.unit_scales.tolist()
            assert (a.margin, a.min_radius_floor, a.rms_residual) == (b.margin, b.min_radius_floor, b.rms_residual)
            assert len(a.samples) == len(b.samples) == a.sample_count
        assert [v.tolist() for v in restored.control_region.vertices] == [v.tolist() for v in original.control_region.vertices]
    # Membership survives the round trip.
    assert loaded.get("r000").depth([2.5]) == two_records.get("r000").depth([2.5])


def test_document_layout(two_records):
    doc = json.loads(dumps_library(two_records))
    assert doc["format_version"] == FORMAT_VERSION
    assert doc["plant_id"] == "affine"
    assert doc["checksum"] == records_checksum(doc["records"])
    surface = doc["records"][0]["surfaces"][0]
    assert {"origin", "scales", "degree", "coefficients", "rms_residual", "margin", "floor", "samples"} <= surface.keys()
    assert surface["coefficients"][0] == {"monomial": [0], "value": surface["coefficients"][0]["value"]}
    assert len(doc["records"][0]["control"]["vertices"]) == 2


def test_checksum_mismatch_rejected(tmp_path, two_records):
    path = tmp_path / "lib.json"
    save_library(two_records, path)
    doc = json.loads(path.read_text())
    doc["checksum"] = (doc["checksum"] + 1) % 2**32
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptFile):
        load_library(path)


def test_tampered_record_rejected(tmp_path, two_records):
    path = tmp_path / "lib.json"
    save_library(two_records, path)
    doc = json.loads(path.read_text())
    doc["records"][0]["box"]["hi"] = [5.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptFile):
        load_library(path)


def test_format_version_mismatch(tmp_path):
    path = tmp_path / "lib.json"
    save_library(SolutionLibrary(plant_id="affine"), path)
    doc = json.loads(path.read_text())
    doc["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatVersionMismatch):
        load_library(path)


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "lib.json"
    path.write_text("{not json")
    with pytest.raises(CorruptFile):
        load_library(path)


def test_identical_runs_serialize_identically(integrator, unit_box, interval_cfg):
    a = decompose(integrator, [[2.0], [-4.0]], [unit_box], interval_cfg, workers=1)
    b = decompose(integrator, [[2.0], [-4.0]], [unit_box], interval_cfg, workers=2)
    assert dumps_library(a) == dumps_library(b)
