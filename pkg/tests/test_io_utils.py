import hashlib
import io
import math

import numpy as np
import pytest
from conftest import FIXTURES
from hypothesis import given, settings
from hypothesis import strategies as st

from arbitext_utils.anchor_utils import GridSpec
from arbitext_utils.config_utils import get_rng
from arbitext_utils.errors import CorruptFile, MalformedLine, VersionMismatch
from arbitext_utils.geometry_utils import Quad, RotatedBox, quad_from_rbox
from arbitext_utils.io_utils import (
    TARGET_MAGIC,
    Annotation,
    dump_targets,
    image_id_from_path,
    load_detection_dir,
    load_gt_dir,
    load_predictions,
    load_targets,
    parse_detection_line,
    parse_icdar13_line,
    parse_icdar_line,
    parse_targets,
    parse_td500_line,
    read_detections,
    read_icdar_gt,
    read_td500_gt,
    save_predictions,
    save_targets,
    write_annotations,
    write_detections,
)
from arbitext_utils.loss_utils import PredictionGrid
from arbitext_utils.nms_utils import Detection
from arbitext_utils.synthetic_utils import synthetic_scene
from arbitext_utils.target_utils import PyramidSpec, build_targets


def unit_square() -> Quad:
    return Quad([0, 0, 1, 0, 1, 1, 0, 1])


def scene_targets(seed: int = 0):
    pyramid = PyramidSpec()
    boxes, flags = synthetic_scene(get_rng(seed), pyramid, 384.0)
    return build_targets(boxes, pyramid, 384.0, flags)


# ==================================================================== #
# parsers
# ==================================================================== #

class TestParseIcdarLine:
    def test_standard_line(self):
        a = parse_icdar_line("377,117,463,117,465,130,378,130,Genaxis Theatre")
        assert a.quad.flat() == [377, 117, 463, 117, 465, 130, 378, 130]
        assert (a.text, a.ignore) == ("Genaxis Theatre", False)

    def test_ignore_marker(self):
        assert parse_icdar_line("0,0,10,0,10,10,0,10,###").ignore

    def test_text_keeps_commas(self):
        assert parse_icdar_line("0,0,1,0,1,1,0,1,a,b,,c").text == "a,b,,c"

    def test_missing_text(self):
        assert parse_icdar_line("0,0,1,0,1,1,0,1").text == ""

    def test_too_few_fields(self):
        with pytest.raises(MalformedLine):
            parse_icdar_line("1,2,3")

    @settings(max_examples=300)
    @given(st.text())
    def test_total_over_text(self, line):
        try:
            parse_icdar_line(line)
        except MalformedLine:
            pass


class TestParseIcdar13Line:
    def test_space_separated(self):
        a = parse_icdar13_line('158 128 411 181 "Footpath"')
        assert a.quad.flat() == [158, 128, 411, 128, 411, 181, 158, 181]
        assert (a.text, a.ignore) == ("Footpath", False)

    def test_comma_separated_keeps_inner_commas(self):
        a = parse_icdar13_line('128, 705, 483, 839, "Dunne, Jr."')
        assert a.quad.flat()[:2] == [128, 705]
        assert a.text == "Dunne, Jr."

    def test_text_is_optional(self):
        assert parse_icdar13_line("1 2 3 4").text == ""

    def test_ignore_marker(self):
        assert parse_icdar13_line('0 0 10 10 "###"').ignore

    @settings(max_examples=300)
    @given(st.text())
    def test_total_over_text(self, line):
        try:
            parse_icdar13_line(line)
        except MalformedLine:
            pass


class TestParseTd500Line:
    def test_axis_aligned(self):
        a = parse_td500_line("0 0 10 20 40 20 0.0")
        np.testing.assert_allclose(a.quad.points, [[10, 20], [50, 20], [50, 40], [10, 40]])
        assert not a.ignore

    def test_rotated_difficult(self):
        a = parse_td500_line("3 1 0 0 10 10 0.5")
        assert a.ignore
        c, s = math.cos(0.5), math.sin(0.5)
        corners = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], dtype=float) - 5
        expected = corners @ np.array([[c, -s], [s, c]]).T + 5
        np.testing.assert_allclose(a.quad.points, expected, atol=1e-9)

    def test_too_few_fields(self):
        with pytest.raises(MalformedLine):
            parse_td500_line("x y")

    @settings(max_examples=300)
    @given(st.text())
    def test_total_over_text(self, line):
        try:
            parse_td500_line(line)
        except MalformedLine:
            pass


class TestParseDetectionLine:
    def test_with_score(self):
        d = parse_detection_line("0,0,1,0,1,1,0,1,0.9000")
        assert d.score == 0.9
        assert d.quad == unit_square()

    def test_score_defaults_to_one(self):
        assert parse_detection_line("0,0,1,0,1,1,0,1").score == 1.0

    @pytest.mark.parametrize("line", ["0,0,1,0,1,1,0,1,0", "0,0,1,0,1,1,0,1,-0.5", "0,0,1,0,1,1,0,1,0.5,1"])
    def test_rejects(self, line):
        with pytest.raises(MalformedLine):
            parse_detection_line(line)


class TestFixtureCorpus:
    """隨附的標註語料必須全部讀得進來。"""

    def test_icdar_corpus(self):
        parsed = [read_icdar_gt(p) for p in sorted((FIXTURES / "icdar").glob("gt_*.txt"))]
        assert sum(len(a) for a in parsed) == 200
        assert parsed[0][0].quad.flat()[:2] == [535, 564]
        assert any(a.ignore for file in parsed for a in file)
        assert any("," in a.text for file in parsed for a in file)

    def test_td500_corpus(self):
        parsed = [read_td500_gt(p) for p in sorted((FIXTURES / "td500").glob("*.gt"))]
        assert sum(len(a) for a in parsed) == 100

    def test_load_dirs(self):
        assert sorted(load_gt_dir(FIXTURES / "icdar")) == ["1", "2", "3", "4"]
        assert sorted(load_gt_dir(FIXTURES / "td500", "td500")) == ["IMG_0001", "IMG_0002"]
        assert sorted(load_detection_dir(FIXTURES / "eval" / "det")) == ["1", "2", "3"]

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_gt_dir(tmp_path / "nope")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            load_gt_dir(FIXTURES / "icdar", "coco")

    def test_malformed_icdar_lines(self):
        lines = (FIXTURES / "malformed" / "icdar_bad_lines.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6
        for no, line in enumerate(lines, start=1):
            with pytest.raises(MalformedLine) as info:
                parse_icdar_line(line, no)
            assert info.value.line_no == no

    def test_malformed_td500_lines(self):
        lines = (FIXTURES / "malformed" / "td500_bad_lines.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6
        for no, line in enumerate(lines, start=1):
            with pytest.raises(MalformedLine) as info:
                parse_td500_line(line, no)
            assert info.value.line_no == no

    def test_icdar13_corpus(self):
        gts = load_gt_dir(FIXTURES / "icdar13", "icdar13")
        assert sorted(gts) == ["1", "100"]
        assert [len(gts["100"]), len(gts["1"])] == [5, 4]
        assert gts["100"][-1].ignore
        assert gts["1"][0].text == "Tiredness"

    def test_malformed_icdar13_lines(self):
        lines = (FIXTURES / "malformed" / "icdar13_bad_lines.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6
        for no, line in enumerate(lines, start=1):
            with pytest.raises(MalformedLine) as info:
                parse_icdar13_line(line, no)
            assert info.value.line_no == no

    def test_line_number_counts_blank_lines(self):
        with pytest.raises(MalformedLine, match="^line 4: ") as info:
            read_icdar_gt(FIXTURES / "malformed" / "gt_img_bad.txt")
        assert info.value.line_no == 4


class TestImageId:
    @pytest.mark.parametrize(
        "name,expected",
        [("gt_img_12.txt", "12"), ("res_img_12.txt", "12"), ("gt_7.txt", "7"), ("IMG_0001.gt", "IMG_0001")],
    )
    def test_ids(self, name, expected):
        assert image_id_from_path(name) == expected


# ==================================================================== #
# writers
# ==================================================================== #

class TestWriters:
    def test_unit_square(self):
        sink = io.StringIO()
        write_detections([Detection(unit_square(), 0.9)], sink)
        assert sink.getvalue() == "0,0,1,0,1,1,0,1,0.9000\n"

    def test_empty(self, tmp_path):
        path = tmp_path / "out" / "res_img_1.txt"
        write_detections([], path)
        assert path.read_bytes() == b""

    def test_sorted_by_score(self):
        sink = io.StringIO()
        write_detections([Detection(unit_square(), 0.2), Detection(unit_square().translate(5, 5), 0.8)], sink)
        assert sink.getvalue().splitlines()[0].endswith(",0.8000")

    def test_detection_roundtrip_within_half_pixel(self, tmp_path, rng):
        dets = [
            Detection(quad_from_rbox(RotatedBox(*rng.uniform(50, 500, size=2), *rng.uniform(10, 80, size=2), 0.3)), 0.5)
            for _ in range(50)
        ]
        path = tmp_path / "res_img_1.txt"
        write_detections(dets, path)
        back = read_detections(path)
        assert len(back) == len(dets)
        for d, b in zip(dets, back):
            assert np.abs(d.quad.points - b.quad.points).max() <= 0.5

    def test_annotation_roundtrip(self, tmp_path):
        original = read_icdar_gt(FIXTURES / "icdar" / "gt_img_1.txt")
        path = tmp_path / "gt_img_1.txt"
        write_annotations(original, path)
        back = read_icdar_gt(path)
        assert [(a.text, a.ignore) for a in back] == [(a.text, a.ignore) for a in original]
        assert all(a.quad == b.quad for a, b in zip(original, back))

    def test_ignore_written_as_marker(self):
        sink = io.StringIO()
        write_annotations([Annotation(unit_square(), "hard", ignore=True)], sink)
        assert sink.getvalue() == "0,0,1,0,1,1,0,1,###\n"


# ==================================================================== #
# target container / predictions
# ==================================================================== #

class TestTargetFile:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        grids = scene_targets(3)
        path = tmp_path / "scene.atgt"
        save_targets(grids, path, image_id="scene", image_size_px=384.0, alpha=0.7)
        loaded = load_targets(path)
        assert loaded.manifest.image_id == "scene"
        assert loaded.manifest.image_size_px == 384.0
        assert len(loaded.grids) == len(grids)
        assert all(a.equals(b) for a, b in zip(loaded.grids, grids))

    def test_empty_grid_list(self):
        loaded = parse_targets(dump_targets([]))
        assert loaded.grids == []

    def test_truncated(self):
        data = dump_targets(scene_targets())
        with pytest.raises(CorruptFile):
            parse_targets(data[: len(data) // 2])
        with pytest.raises(CorruptFile):
            parse_targets(data[:10])

    def test_flipped_byte(self):
        data = bytearray(dump_targets(scene_targets()))
        data[100] ^= 0xFF
        with pytest.raises(CorruptFile):
            parse_targets(bytes(data))

    def test_version_mismatch(self):
        body = dump_targets([])[:-32]
        body = TARGET_MAGIC + (2).to_bytes(2, "little") + body[6:]
        with pytest.raises(VersionMismatch):
            parse_targets(body + hashlib.sha256(body).digest())

    def test_bad_magic(self):
        body = b"XXXX" + dump_targets([])[4:-32]
        with pytest.raises(CorruptFile):
            parse_targets(body + hashlib.sha256(body).digest())


class TestPredictionFile:
    def test_roundtrip(self, tmp_path, rng):
        grids = [
            PredictionGrid(GridSpec(size=s), rng.normal(size=(s, s, 3)), rng.normal(size=(s, s, 5)), rng.normal(size=(s, s, 2)))
            for s in (4, 2)
        ]
        path = tmp_path / "pred.npz"
        save_predictions(grids, path)
        loaded = load_predictions(path)
        assert [g.size for g in loaded] == [4, 2]
        for a, b in zip(grids, loaded):
            np.testing.assert_array_equal(a.logits, b.logits)
            np.testing.assert_array_equal(a.regression, b.regression)
            np.testing.assert_array_equal(a.vertical_logits, b.vertical_logits)

    def test_missing_key(self, tmp_path):
        path = tmp_path / "broken.npz"
        np.savez(path, sizes=np.array([2]), r_a=np.array([1.5]))
        with pytest.raises(CorruptFile):
            load_predictions(path)
