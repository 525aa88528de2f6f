import json
import math

import pytest

from geoctx.geoentities import (
    Dataset,
    Geoentity,
    Geometry,
    ParseError,
    ValidationError,
    load_dataset,
    parse_geoentity_record,
    project_lonlat,
    save_dataset,
    serialize_geoentity,
    tokenize,
)


def record(**kw):
    base = {"id": 1, "parent_id": None, "kind": "point",
            "coords": [[10.0, 20.0]], "tags": ["Cafe", "amenity=cafe"]}
    base.update(kw)
    return json.dumps(base)


class TestParsing:
    def test_tokenization_keeps_duplicates(self):
        e = parse_geoentity_record(record())
        assert sorted(e.tokens) == ["amenity", "cafe", "cafe"]

    def test_unclosed_polygon_rejected(self):
        line = record(kind="polygon", coords=[[0, 0], [1, 0], [1, 1]])
        with pytest.raises(ValidationError, match="not closed|>=4"):
            parse_geoentity_record(line)

    def test_polyline_length(self):
        e = parse_geoentity_record(record(kind="polyline", coords=[[0, 0], [100, 0]]))
        length = math.dist(*e.geometry.coords)
        assert length == 100.0

    def test_malformed_json(self):
        with pytest.raises(ParseError):
            parse_geoentity_record("{not json")

    def test_missing_field(self):
        with pytest.raises(ParseError, match="kind"):
            parse_geoentity_record('{"id": 1, "coords": [[0,0]], "tags": []}')

    def test_bad_id_type(self):
        with pytest.raises(ParseError, match="id"):
            parse_geoentity_record(record(id="x"))

    def test_self_intersecting_polygon_rejected(self):
        crossing = [[0, 0], [4, 0], [4, 2], [2, -1], [0, 2], [0, 0]]
        with pytest.raises(ValidationError, match="self-intersecting"):
            parse_geoentity_record(record(kind="polygon", coords=crossing))

    def test_bowtie_polygon_rejected(self):
        bowtie = [[0, 0], [2, 2], [2, 0], [0, 2], [0, 0]]
        with pytest.raises(ValidationError):
            parse_geoentity_record(record(kind="polygon", coords=bowtie))

    def test_zero_area_polygon_rejected(self):
        flat = [[0, 0], [1, 0], [2, 0], [0, 0]]
        with pytest.raises(ValidationError):
            parse_geoentity_record(record(kind="polygon", coords=flat))

    def test_point_needs_single_vertex(self):
        with pytest.raises(ValidationError):
            parse_geoentity_record(record(coords=[[0, 0], [1, 1]]))

    def test_roundtrip_is_idempotent(self):
        lines = [
            record(),
            record(id=2, kind="polyline", coords=[[0, 0], [50, 10], [100, 0]], parent_id=7),
            record(id=3, kind="polygon", coords=[[0, 0], [4, 0], [4, 3], [0, 3], [0, 0]],
                   tags=["Name=Mall of Test", "building"]),
        ]
        for line in lines:
            once = parse_geoentity_record(line)
            twice = parse_geoentity_record(serialize_geoentity(once))
            assert once == twice
            assert serialize_geoentity(once) == serialize_geoentity(twice)

    def test_token_multiset_equality(self):
        a = parse_geoentity_record(record(tags=["a b"]))
        b = parse_geoentity_record(record(tags=["b", "a"]))
        c = parse_geoentity_record(record(tags=["a", "a", "b"]))
        assert a.token_key() == b.token_key()
        assert a.token_key() != c.token_key()

    def test_tokenize_splits_on_non_alphanumerics(self):
        assert tokenize(["High-Street/42"]) == ("high", "street", "42")


class TestProjection:
    def test_origin_maps_to_origin(self):
        out = project_lonlat([{"coords": [[0.0, 0.0]]}], origin=(0.0, 0.0))
        assert out[0]["coords"] == [[0.0, 0.0]]

    def test_latitude_delta(self):
        lat_deg = math.degrees(1e-5)
        out = project_lonlat([{"coords": [[0.0, lat_deg]]}], origin=(0.0, 0.0))
        assert out[0]["coords"][0][1] == pytest.approx(63.71, abs=1e-6)

    def test_longitude_shrinks_with_latitude(self):
        lon_deg = math.degrees(1e-5)
        out = project_lonlat([{"coords": [[lon_deg, 60.0]]}], origin=(0.0, 60.0))
        assert out[0]["coords"][0][0] == pytest.approx(6371000 * 1e-5 * math.cos(math.radians(60.0)), rel=1e-12)
        assert out[0]["coords"][0][0] == pytest.approx(31.855, abs=1e-3)

    def test_out_of_range_latitude(self):
        with pytest.raises(ValidationError):
            project_lonlat([{"coords": [[0.0, 86.0]]}], origin=(0.0, 0.0))


class TestDataset:
    def test_duplicate_ids_rejected(self):
        g = Geometry("point", ((1.0, 1.0),))
        with pytest.raises(ValidationError, match="duplicate"):
            Dataset(entities=[Geoentity(1, None, (), g), Geoentity(1, None, (), g)],
                    extent=(0, 0, 10, 10))

    def test_entity_outside_extent_rejected(self):
        g = Geometry("point", ((100.0, 1.0),))
        with pytest.raises(ValidationError, match="extent"):
            Dataset(entities=[Geoentity(1, None, (), g)], extent=(0, 0, 10, 10))

    def test_degenerate_extent_rejected(self):
        g = Geometry("point", ((0.0, 0.0),))
        with pytest.raises(ValidationError):
            Dataset(entities=[Geoentity(1, None, (), g)], extent=(0, 0, 0, 10))

    def test_save_load_roundtrip(self, tmp_path, city):
        dataset, _ = city
        path = tmp_path / "city.jsonl"
        save_dataset(path, dataset)
        loaded = load_dataset(path, extent=dataset.extent)
        assert loaded.entities == dataset.entities

    def test_load_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id":1,"kind":"point","coords":[[0,0]],"tags":[]}\nnot json\n')
        with pytest.raises(ParseError, match="bad.jsonl:2"):
            load_dataset(path)
