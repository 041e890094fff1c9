import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import car, det
from valid_fusion.geometry import Box2D, ImageDims
from valid_fusion.kitti_io import (
    Detection,
    Difficulty,
    GroundTruthObject,
    Modality,
    ParseError,
    assign_difficulty,
    in_band,
    is_class,
    list_frames,
    load_detection_dir,
    load_frame_meta,
    load_label_dir,
    parse_detection_file,
    parse_label_file,
    rescale_scores,
    write_detection_file,
    write_frame_meta,
    write_label_file,
)

LABEL_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"
DET_LINE = "Car -1 -1 -10 587.0100 173.3300 614.1200 200.1200 -1 -1 -1 -1000 -1000 -1000 -10 0.912345"


def _write(path, text):
    path.write_text(text)
    return str(path)


class TestParsing:
    def test_label_fields(self, tmp_path):
        objs = parse_label_file(_write(tmp_path / "000001.txt", LABEL_LINE + "\n"))
        (g,) = objs
        assert g.class_name == "Car"
        assert g.box.as_tuple() == (587.01, 173.33, 614.12, 200.12)
        assert (g.truncation, g.occlusion) == (0.0, 0)
        assert len(g.extra3d) == 7

    def test_dontcare_placeholders(self, tmp_path):
        line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10"
        (g,) = parse_label_file(_write(tmp_path / "a.txt", line + "\n"))
        assert g.class_name == "DontCare"
        assert (g.truncation, g.occlusion) == (0.0, 0)

    def test_detection_fields(self, tmp_path):
        (d,) = parse_detection_file(_write(tmp_path / "000007.txt", DET_LINE + "\n"), Modality.CAMERA)
        assert d.frame == "000007"
        assert d.modality is Modality.CAMERA
        assert d.score == pytest.approx(0.912345)
        assert d.source_line == DET_LINE

    def test_missing_score_is_reported_with_line(self, tmp_path):
        path = _write(tmp_path / "000001.txt", DET_LINE + "\n" + LABEL_LINE + "\n")
        with pytest.raises(ParseError) as err:
            parse_detection_file(path, Modality.LIDAR)
        assert err.value.lineno == 2
        assert "000001.txt" in str(err.value)

    def test_bad_number_is_reported(self, tmp_path):
        path = _write(tmp_path / "x.txt", LABEL_LINE.replace("587.01", "five") + "\n")
        with pytest.raises(ParseError, match=r"x\.txt:1:"):
            parse_label_file(path)

    def test_inverted_box_is_reported(self, tmp_path):
        path = _write(tmp_path / "x.txt", LABEL_LINE.replace("614.12", "500.00") + "\n")
        with pytest.raises(ParseError):
            parse_label_file(path)

    def test_no_line_is_dropped(self, tmp_path):
        rng = np.random.default_rng(3)
        lines = [DET_LINE.replace("0.912345", f"{s:.6f}") for s in rng.uniform(size=17)]
        path = _write(tmp_path / "000002.txt", "\n".join(lines) + "\n")
        assert len(parse_detection_file(path, Modality.LIDAR)) == len(lines)

    def test_empty_file(self, tmp_path):
        assert parse_detection_file(_write(tmp_path / "000003.txt", ""), Modality.LIDAR) == []


class TestWriting:
    def test_empty_list_gives_empty_file(self, tmp_path):
        p = tmp_path / "000000.txt"
        write_detection_file([], p)
        assert p.read_text() == ""

    def test_placeholder_3d_fields(self, tmp_path):
        p = tmp_path / "000000.txt"
        write_detection_file([det(1, 2, 30, 40, 0.5)], p)
        toks = p.read_text().split()
        assert len(toks) == 16
        assert toks[1:4] == ["-1", "-1", "-10"]
        assert toks[8:15] == ["-1", "-1", "-1", "-1000", "-1000", "-1000", "-10"]

    def test_verbatim_reuses_source_line(self, tmp_path):
        src = _write(tmp_path / "000004.txt", DET_LINE.replace(" ", "  ") + "\n")
        dets = parse_detection_file(src, Modality.LIDAR)
        out = tmp_path / "out.txt"
        write_detection_file(dets, out, verbatim=True)
        assert out.read_bytes() == (tmp_path / "000004.txt").read_bytes()

    def test_mixed_frames_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_detection_file([det(0, 0, 1, 1, 0.5, frame="000001"), det(0, 0, 1, 1, 0.5, frame="000002")],
                                 tmp_path / "x.txt")

    def test_io_error_names_path(self, tmp_path):
        target = tmp_path / "missing_dir" / "000000.txt"
        with pytest.raises(OSError, match="missing_dir"):
            write_detection_file([], target)

    def test_label_round_trip(self, tmp_path):
        objs = [car(10, 20, 110, 80, occlusion=1, truncation=0.25), car(0, 0, 5, 5, cls="Van")]
        p = tmp_path / "l.txt"
        write_label_file(objs, p)
        back = parse_label_file(p)
        assert [(g.class_name, g.occlusion) for g in back] == [("Car", 1), ("Van", 0)]
        assert back[0].box.as_tuple() == (10, 20, 110, 80)
        assert back[0].truncation == pytest.approx(0.25)


detection_strategy = st.builds(
    lambda cls, x0, y0, w, h, s: Detection(cls, Box2D(x0, y0, x0 + w, y0 + h), s, Modality.LIDAR, "000000"),
    st.sampled_from(["Car", "Van", "Pedestrian", "Cyclist"]),
    st.floats(0, 1240, allow_nan=False),
    st.floats(0, 370, allow_nan=False),
    st.floats(0, 400, allow_nan=False),
    st.floats(0, 300, allow_nan=False),
    st.floats(0, 1, allow_nan=False),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(detection_strategy, max_size=12))
def test_detection_round_trip_property(tmp_path_factory, dets):
    p = tmp_path_factory.mktemp("rt") / "000000.txt"
    write_detection_file(dets, p)
    back = parse_detection_file(p, Modality.LIDAR)
    assert len(back) == len(dets)
    for a, b in zip(dets, back):
        assert a.class_name == b.class_name
        assert np.allclose(a.box.as_tuple(), b.box.as_tuple(), atol=1e-4, rtol=0)
        assert abs(a.score - b.score) <= 1e-4


class TestRescale:
    def test_in_range_untouched(self):
        dets = [det(0, 0, 1, 1, 0.2), det(0, 0, 1, 1, 0.9)]
        assert rescale_scores(dets) is dets

    def test_min_max(self):
        out = rescale_scores([det(0, 0, 1, 1, -2.0), det(0, 0, 1, 1, 3.0), det(0, 0, 1, 1, 0.5)])
        assert [d.score for d in out] == [0.0, 1.0, 0.5]

    def test_constant_out_of_range_clipped(self):
        out = rescale_scores([det(0, 0, 1, 1, 4.0), det(0, 0, 1, 1, 4.0)])
        assert [d.score for d in out] == [1.0, 1.0]


class TestDifficulty:
    def test_examples(self):
        assert assign_difficulty(car(0, 0, 50, 45)) is Difficulty.EASY
        assert assign_difficulty(car(0, 0, 50, 30, occlusion=1, truncation=0.2)) is Difficulty.MODERATE
        for occ in range(4):
            assert assign_difficulty(car(0, 0, 50, 20, occlusion=occ)) is Difficulty.IGNORED

    def test_boundaries_inclusive(self):
        assert assign_difficulty(car(0, 0, 10, 40, truncation=0.15)) is Difficulty.EASY
        assert assign_difficulty(car(0, 0, 10, 25, occlusion=2, truncation=0.5)) is Difficulty.HARD
        assert assign_difficulty(car(0, 0, 10, 25, truncation=0.51)) is Difficulty.IGNORED
        assert assign_difficulty(car(0, 0, 10, 100, occlusion=3)) is Difficulty.IGNORED

    @given(st.floats(0, 300, allow_nan=False), st.integers(0, 3), st.floats(0, 1, allow_nan=False))
    def test_bands_are_cumulative(self, height, occ, trunc):
        g = GroundTruthObject("Car", trunc, occ, 0.0, Box2D(0, 0, 10, height))
        d = assign_difficulty(g)
        if d is Difficulty.EASY:
            assert in_band(g, Difficulty.MODERATE)
        if d <= Difficulty.MODERATE:
            assert in_band(g, Difficulty.HARD)
        assert in_band(g, Difficulty.HARD) == (d is not Difficulty.IGNORED)


class TestFrameMeta:
    def test_three_columns(self, tmp_path):
        meta = load_frame_meta(_write(tmp_path / "m.txt", "000001 1242 375\n000002 1224 370\n"))
        assert meta["000001"] == ImageDims(1242, 375)
        assert meta["000002"] == ImageDims(1224, 370)
        assert meta["000099"] == ImageDims(1242, 375)

    def test_two_column_form(self, tmp_path):
        meta = load_frame_meta(_write(tmp_path / "m.txt", "000001 1238x374\n"))
        assert meta["000001"] == ImageDims(1238, 374)

    def test_absent_file_falls_back(self, tmp_path):
        meta = load_frame_meta(str(tmp_path / "nope.txt"))
        assert meta["000123"] == ImageDims(1242, 375)

    def test_no_default(self, tmp_path):
        meta = load_frame_meta(_write(tmp_path / "m.txt", "000001 10 10\n"), default=None)
        with pytest.raises(KeyError):
            meta["000002"]

    def test_zero_dim_rejected(self, tmp_path):
        with pytest.raises(ParseError):
            load_frame_meta(_write(tmp_path / "m.txt", "000001 0 375\n"))

    def test_duplicate_rejected(self, tmp_path):
        with pytest.raises(ParseError, match="000001"):
            load_frame_meta(_write(tmp_path / "m.txt", "000001 1242 375\n000001 1242 375\n"))

    def test_round_trip(self, tmp_path):
        meta = {"000003": ImageDims(1242, 375), "000001": ImageDims(1000, 300)}
        p = tmp_path / "m.txt"
        write_frame_meta(meta, p)
        back = load_frame_meta(p, default=None)
        assert dict(back.items()) == meta


class TestDirectories:
    def test_list_and_load(self, tmp_path):
        for name in ("000002.txt", "000010.txt", "000001.txt", "notes.txt"):
            (tmp_path / name).write_text(DET_LINE + "\n")
        frames = list_frames(tmp_path)
        assert frames == ["000001", "000002", "000010"]
        dets = load_detection_dir(tmp_path, Modality.LIDAR, frames + ["000011"])
        assert dets["000011"] == []
        assert len(dets["000002"]) == 1

    def test_missing_labels_listed(self, tmp_path):
        (tmp_path / "000001.txt").write_text(LABEL_LINE + "\n")
        with pytest.raises(FileNotFoundError, match="000002"):
            load_label_dir(tmp_path, ["000001", "000002"])

    def test_class_match_case_insensitive(self):
        assert is_class("car", "Car")
        assert not is_class("Van", "Car")
