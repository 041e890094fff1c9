import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import car, det
from valid_fusion import kitti_io
from valid_fusion.geometry import ImageDims
from valid_fusion.kitti_io import Modality
from valid_fusion.matching import (
    DUAL_COLUMNS,
    SINGLE_COLUMNS,
    FeatureCsvError,
    FeatureLayout,
    MatchConfig,
    TrainingSample,
    build_dataset,
    build_feature_vector,
    featurize_frame,
    label_sample,
    match_camera,
    read_features_csv,
    split_frames,
    write_features_csv,
)

DIMS = ImageDims(1242, 375)


def cam(x0, y0, x1, y1, score, modality=Modality.CAMERA):
    return det(x0, y0, x1, y1, score, modality=modality)


class TestMatchCamera:
    def test_picks_highest_iou(self):
        lidar = det(100, 100, 200, 200, 0.9)
        cams = [cam(150, 100, 250, 200, 0.99), cam(105, 100, 205, 200, 0.5)]
        c, ov = match_camera(lidar, cams, 0.3)
        assert c is cams[1]
        assert ov == pytest.approx(95 / 105)

    def test_tie_prefers_higher_score_then_lower_index(self):
        lidar = det(100, 100, 200, 200, 0.9)
        same = (110, 100, 210, 200)
        cams = [cam(*same, 0.4), cam(*same, 0.8), cam(*same, 0.8)]
        c, _ = match_camera(lidar, cams, 0.5)
        assert c is cams[1]

    def test_threshold_inclusive_and_zero_overlap_excluded(self):
        lidar = det(0, 0, 10, 10, 0.9)
        c = cam(5, 0, 15, 10, 0.9)  # IoU exactly 1/3
        assert match_camera(lidar, [c], 1 / 3) is not None
        assert match_camera(lidar, [c], 0.34) is None
        assert match_camera(lidar, [cam(20, 20, 30, 30, 0.9)], 0.0) is None

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(range(5)))
    def test_permutation_stability(self, perm):
        lidar = det(100, 100, 200, 200, 0.9)
        cams = [cam(100 + 7 * i, 100, 200 + 7 * i, 200, 0.1 * (i + 1)) for i in range(5)]
        base, _ = match_camera(lidar, cams, 0.3)
        got, _ = match_camera(lidar, [cams[i] for i in perm], 0.3)
        assert got is base


class TestFeatureVector:
    def test_layout_and_values(self):
        lidar = det(100, 50, 300, 150, 0.8)
        c = cam(110, 50, 310, 150, 0.6)
        ov = 190 / 210
        v = build_feature_vector(lidar, (c, ov), None, DIMS)
        assert v.shape == (11,)
        assert list(v) == pytest.approx([
            200 / 1242, 100 / 375, 200 / 1242, 100 / 375,
            210 / 1242, 100 / 375, 200 / 1242, 100 / 375,
            0.8, 0.6, ov,
        ])
        assert len(SINGLE_COLUMNS) == 11 and len(DUAL_COLUMNS) == 17

    def test_zero_fill_is_exact(self):
        lidar = det(100, 50, 300, 150, 0.8)
        v = build_feature_vector(lidar, None, None, DIMS, FeatureLayout.DUAL_17)
        assert v.shape == (17,)
        assert np.all(v[4:8] == 0.0) and v[9] == 0.0 and v[10] == 0.0
        assert np.all(v[11:] == 0.0)
        assert not np.signbit(v[4:8]).any()

    def test_second_camera_rejected_for_single_layout(self):
        lidar = det(0, 0, 10, 10, 0.5)
        with pytest.raises(ValueError):
            build_feature_vector(lidar, None, (cam(0, 0, 10, 10, 0.5), 1.0), DIMS)

    def test_openvocab_threshold_applies_to_second_camera(self):
        lidar = det(0, 0, 100, 100, 0.9)
        weak = cam(40, 0, 140, 100, 0.7, modality=Modality.CAMERA2)  # IoU 60/140 ~ 0.43
        feats = featurize_frame([lidar], [[weak], [weak]], DIMS, MatchConfig())
        v = feats[0]
        assert v[10] == 0.0  # standard camera needs 0.5
        assert v[16] == pytest.approx(60 / 140)

    def test_other_class_cameras_ignored(self):
        lidar = det(0, 0, 100, 100, 0.9)
        ped = det(0, 0, 100, 100, 0.9, cls="Pedestrian", modality=Modality.CAMERA)
        (v,) = featurize_frame([lidar], [[ped]], DIMS, MatchConfig())
        assert v[10] == 0.0

    @given(st.integers(0, 8), st.integers(0, 5))
    def test_one_vector_per_lidar_box(self, n_lidar, n_cam):
        rng = np.random.default_rng(n_lidar * 10 + n_cam)
        lid = [det(x, 10, x + 50, 60, 0.5) for x in rng.uniform(0, 1000, n_lidar)]
        cams = [cam(x, 10, x + 50, 60, 0.5) for x in rng.uniform(0, 1000, n_cam)]
        assert len(featurize_frame(lid, [cams], DIMS, MatchConfig())) == n_lidar


class TestLabel:
    def test_inclusive_threshold(self):
        gts = [car(0, 0, 10, 10)]
        lidar = det(0, 0, 10, 7, 0.5)  # IoU exactly 0.7
        assert label_sample(lidar, gts, 0.7) == 1
        assert label_sample(lidar, gts, 0.71) == 0

    def test_no_ground_truth_is_negative(self):
        assert label_sample(det(0, 0, 10, 10, 0.5), [], 0.7) == 0

    @given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(1, 40))
    def test_monotone_in_threshold(self, t1, t2, shift):
        lo, hi = sorted((t1, t2))
        gts = [car(0, 0, 50, 50)]
        lidar = det(shift, 0, 50 + shift, 50, 0.5)
        assert label_sample(lidar, gts, hi) <= label_sample(lidar, gts, lo)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MatchConfig(tau_match=0.3, tau_match_openvocab=0.5)
        with pytest.raises(ValueError):
            MatchConfig(tau_gt=0.0)


class TestDataset:
    def test_counts_and_order(self, small_dataset):
        p = small_dataset
        samples = build_dataset(p["lidar"], [p["camera"]], p["label"], kitti_io.load_frame_meta(p["meta"]))
        frames = kitti_io.list_frames(p["lidar"])
        lidar = kitti_io.load_detection_dir(p["lidar"], Modality.LIDAR, frames)
        n_cars = sum(1 for f in frames for d in lidar[f] if d.class_name == "Car")
        assert len(samples) == n_cars
        keys = [(int(s.frame), s.lidar_index) for s in samples]
        assert keys == sorted(keys)
        assert {s.label for s in samples} == {0, 1}

    def test_threads_do_not_change_output(self, small_dataset):
        p = small_dataset
        meta = kitti_io.load_frame_meta(p["meta"])
        a = build_dataset(p["lidar"], [p["camera"]], p["label"], meta)
        b = build_dataset(p["lidar"], [p["camera"]], p["label"], meta, threads=4)
        assert [(s.frame, s.lidar_index, s.label) for s in a] == [(s.frame, s.lidar_index, s.label) for s in b]
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_missing_labels(self, small_dataset, tmp_path):
        p = small_dataset
        with pytest.raises(FileNotFoundError):
            build_dataset(p["lidar"], [p["camera"]], str(tmp_path), {})


class TestSplit:
    def test_partition(self):
        frames = [f"{i:06d}" for i in range(20)]
        train, test = split_frames(frames, 0.5, 7)
        assert len(train) == 10 and len(test) == 10
        assert sorted(train + test) == frames
        assert split_frames(frames, 0.5, 7) == (train, test)
        assert split_frames(frames, 0.5, 8) != (train, test)

    def test_both_sides_non_empty(self):
        train, test = split_frames(["000001", "000002"], 0.99, 0)
        assert len(train) == 1 and len(test) == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            split_frames(["000001"], 0.5, 0)
        with pytest.raises(ValueError):
            split_frames(["000001", "000002"], 1.0, 0)


class TestCsv:
    def _samples(self, n, n_feat=11):
        rng = np.random.default_rng(n)
        return [TrainingSample(rng.uniform(size=n_feat).round(6), int(i % 2), f"{i // 3:06d}", i % 3)
                for i in range(n)]

    @pytest.mark.parametrize("n_feat", [11, 17])
    def test_round_trip(self, tmp_path, n_feat):
        samples = self._samples(9, n_feat)
        p = tmp_path / "f.csv"
        write_features_csv(samples, p)
        back, layout = read_features_csv(p)
        assert layout.n_features == n_feat
        assert [(s.frame, s.lidar_index, s.label) for s in back] == [(s.frame, s.lidar_index, s.label) for s in samples]
        assert all(np.allclose(a.features, b.features, atol=1e-6) for a, b in zip(samples, back))

    def test_header(self, tmp_path):
        p = tmp_path / "f.csv"
        write_features_csv([], p)
        assert p.read_text().strip() == ",".join(["frame", "lidar_index", *SINGLE_COLUMNS, "label"])

    def test_malformed_row_reported(self, tmp_path):
        p = tmp_path / "f.csv"
        write_features_csv(self._samples(4), p)
        lines = p.read_text().splitlines()
        lines[3] = lines[3].replace(",", ",x", 1)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FeatureCsvError) as err:
            read_features_csv(p)
        assert err.value.row == 4

    def test_bad_label(self, tmp_path):
        p = tmp_path / "f.csv"
        write_features_csv(self._samples(2), p)
        text = p.read_text().splitlines()
        text[1] = text[1][:-1] + "2"
        p.write_text("\n".join(text) + "\n")
        with pytest.raises(FeatureCsvError, match="row 2"):
            read_features_csv(p)
