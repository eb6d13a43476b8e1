"""Matching protocol, evaluation, benchmark and overlays."""

import json

import numpy as np
import pytest
from PIL import Image

from hrcenternet.core.codec import (
    CodecConfig,
    Detection,
    decode_detections,
    encode_targets,
    maps_from_targets,
)
from hrcenternet.core.data import PageAnnotation
from hrcenternet.core.errors import OutputFileError
from hrcenternet.core.evaluation import (
    EvalReport,
    benchmark_inference,
    detect,
    evaluate,
    match_and_score,
    render_overlay,
    write_jsonl,
)
from hrcenternet.core.geometry import BBox
from hrcenternet.core.grid import TensorGrid

from tests.helpers import FixedMaps, oracle_model, random_boxes, stacked_targets

GT = BBox.from_corners(0, 0, 10, 10)


def _det(x0, y0, x1, y1, score=0.9):
    return Detection(BBox.from_corners(x0, y0, x1, y1), score)


class TestMatchAndScore:
    def test_perfect(self):
        s = match_and_score([_det(0, 0, 10, 10)], [GT])
        assert (s.mean_iou, s.precision, s.recall) == (1.0, 1.0, 1.0)

    def test_prediction_without_ground_truth(self):
        s = match_and_score([_det(0, 0, 10, 10)], [])
        assert (s.mean_iou, s.precision, s.recall) == (0.0, 0.0, 0.0)

    def test_missed_ground_truth_counts_zero(self):
        s = match_and_score([_det(0, 0, 8, 10)], [GT, BBox.from_corners(50, 50, 60, 60)])
        assert s.mean_iou == pytest.approx(0.4)
        assert s.precision == 1.0
        assert s.recall == 0.5

    def test_below_threshold_is_unmatched(self):
        s = match_and_score([_det(0, 0, 4, 10)], [GT])
        assert s.matched == 0 and s.mean_iou == 0.0

    def test_one_to_one(self):
        s = match_and_score([_det(0, 0, 10, 10, 0.9), _det(0, 0, 10, 9, 0.8)], [GT])
        assert s.matched == 1
        assert s.precision == 0.5
        assert s.mean_iou == 1.0

    def test_higher_score_claims_first(self):
        gts = [GT, BBox.from_corners(0, 0, 10, 7)]
        s = match_and_score([_det(0, 0, 10, 8, 0.4), _det(0, 0, 10, 10, 0.9)], gts)
        assert s.matched == 2
        assert s.iou_sum == pytest.approx(1.0 + 7 / 8)

    def test_empty(self):
        s = match_and_score([], [])
        assert (s.n_gt, s.n_pred, s.matched) == (0, 0, 0)

    def test_no_predictions_against_five_ground_truths(self):
        s = match_and_score([], [GT] * 5)
        assert (s.mean_iou, s.precision, s.recall) == (0.0, 0.0, 0.0)
        assert (s.n_gt, s.n_pred) == (5, 0)


def test_report_weights_pages_by_ground_truth():
    pages = [
        match_and_score([_det(0, 0, 10, 10)], [GT]),
        match_and_score([], [GT, GT, GT]),
    ]
    report = EvalReport.from_pages(pages)
    assert report.mean_iou == pytest.approx(0.25)
    assert report.recall_at_50 == pytest.approx(0.25)
    assert report.precision_at_50 == 1.0
    data = report.to_dict()
    assert len(data["per_page"]) == 2 and data["n_gt"] == 4


class TestEvaluate:
    def test_oracle_maps_score_near_perfect(self, rng):
        for _ in range(5):
            boxes = random_boxes(rng, count=int(rng.integers(2, 7)), nms_iou=0.45)
            page = (TensorGrid.zeros(1, 128, 128), PageAnnotation("p.png", 128, 128, tuple(boxes)))
            report = evaluate(oracle_model(boxes), [page], CodecConfig(nms_iou=0.5))
            assert report.mean_iou >= 0.99
            assert report.recall_at_50 == 1.0
            assert report.precision_at_50 == 1.0

    def test_empty_pages_with_silent_model(self):
        pages = [(TensorGrid.zeros(1, 128, 128), PageAnnotation(f"p{i}.png", 128, 128)) for i in range(3)]
        report = evaluate(FixedMaps(np.zeros((5, 32, 32))), pages)
        assert (report.mean_iou, report.precision_at_50, report.recall_at_50) == (0.0, 0.0, 0.0)
        assert report.n_gt == 0 and report.n_pred == 0
        assert [p.image for p in report.per_page] == ["p0.png", "p1.png", "p2.png"]

    def test_raising_conf_never_adds_detections(self, rng):
        boxes = random_boxes(rng, count=6, nms_iou=0.45)
        maps = stacked_targets(encode_targets(boxes, 128, 128))
        maps[0] = np.maximum(maps[0] * rng.uniform(0.3, 1.0, size=maps[0].shape), rng.uniform(0.0, 0.45, size=maps[0].shape))
        model = FixedMaps(maps)
        page = (TensorGrid.zeros(1, 128, 128), PageAnnotation("p.png", 128, 128, tuple(boxes)))
        reports = [evaluate(model, [page], CodecConfig(conf_thresh=c)) for c in (0.1, 0.3, 0.5, 0.7)]
        preds = [r.n_pred for r in reports]
        recalls = [r.recall_at_50 for r in reports]
        assert preds == sorted(preds, reverse=True)
        assert recalls == sorted(recalls, reverse=True)

    def test_real_network(self, toy_model, toy_page):
        report = evaluate(toy_model, [toy_page])
        assert 0.0 <= report.mean_iou <= 1.0
        assert report.n_gt == len(toy_page[1].boxes)


class TestDetect:
    def test_page_off_the_input_grid(self, toy_model):
        dets = detect(toy_model, TensorGrid(np.ones((1, 100, 150))), CodecConfig(conf_thresh=0.01))
        for d in dets:
            x0, y0, x1, y1 = d.bbox.to_corners()
            assert 0 <= x0 < x1 <= 150 and 0 <= y0 < y1 <= 100

    def test_boxes_clamped_back_to_the_page(self):
        inside = BBox.from_corners(10, 10, 40, 40)
        straddling = BBox.from_corners(100, 80, 126, 110)
        in_padding = BBox.from_corners(121, 20, 127, 44)
        model = oracle_model([inside, straddling, in_padding])
        dets = sorted(detect(model, TensorGrid.zeros(1, 100, 120)), key=lambda d: d.bbox.cx)
        assert len(dets) == 2
        for det, expected in zip(dets, [(10, 10, 40, 40), (100, 80, 120, 100)]):
            assert det.bbox.to_corners() == pytest.approx(expected, abs=1e-3)

    def test_grid_aligned_page_matches_plain_decoding(self, rng):
        boxes = random_boxes(rng, count=4, nms_iou=0.45)
        page = TensorGrid.zeros(1, 128, 128)
        model = oracle_model(boxes)
        expected = decode_detections(maps_from_targets(encode_targets(boxes, 128, 128)), 128, 128)
        actual = detect(model, page)
        assert len(actual) == len(expected) == 4
        np.testing.assert_allclose(
            [d.to_list() for d in actual], [d.to_list() for d in expected], atol=1e-6
        )


class TestBenchmark:
    def test_report_structure(self, toy_model):
        report = benchmark_inference(toy_model, (128, 128), warmup=1, iters=10)
        assert len(report.samples_ms) == 10
        assert report.mean_ms > 0
        assert report.p50_ms <= report.p95_ms
        assert report.images_per_s == pytest.approx(1000.0 / report.mean_ms)
        assert report.parameters > 0
        assert report.to_dict()["input_size"] == [128, 128]
        assert "python_version" in json.dumps(report.to_dict())

    def test_larger_input_is_slower(self, toy_model):
        small = benchmark_inference(toy_model, (128, 128), warmup=2, iters=10)
        large = benchmark_inference(toy_model, (256, 256), warmup=2, iters=10)
        assert large.p50_ms > small.p50_ms

    def test_repeat_runs_agree(self, toy_model):
        a = benchmark_inference(toy_model, (128, 128), warmup=2, iters=10)
        b = benchmark_inference(toy_model, (128, 128), warmup=2, iters=10)
        assert a.p50_ms / 3 <= b.p50_ms <= a.p50_ms * 3

    def test_too_few_iterations(self, toy_model):
        with pytest.raises(ValueError):
            benchmark_inference(toy_model, (128, 128), iters=5)


class TestOverlay:
    def test_no_detections_reproduces_page(self, tmp_path, toy_page):
        image, _ = toy_page
        path = render_overlay(image, [], tmp_path / "o.png")
        pixels = np.asarray(Image.open(path).convert("RGB"))
        assert pixels.shape == (128, 128, 3)
        np.testing.assert_array_equal(pixels[..., 0], pixels[..., 1])
        np.testing.assert_array_equal(pixels[..., 0], pixels[..., 2])
        np.testing.assert_allclose(pixels[..., 0] / 255.0, image.data[0], atol=1e-6)

    def test_one_rectangle(self, tmp_path):
        path = render_overlay(
            TensorGrid(np.ones((1, 64, 64))), [_det(10, 20, 40, 50)], tmp_path / "o.png", show_scores=False
        )
        pixels = np.asarray(Image.open(path).convert("RGB"))
        red = np.array([220, 30, 30])
        for x, y in [(10, 20), (40, 20), (10, 50), (40, 50), (25, 20)]:
            np.testing.assert_array_equal(pixels[y, x], red)
        np.testing.assert_array_equal(pixels[35, 25], [255, 255, 255])
        assert (pixels != 255).any(axis=2).sum() == 2 * 31 + 2 * 29

    def test_unwritable_path(self, tmp_path):
        (tmp_path / "taken").write_text("x")
        with pytest.raises(OutputFileError):
            render_overlay(TensorGrid.zeros(1, 8, 8), [], tmp_path / "taken" / "o.png")


def test_write_jsonl(tmp_path):
    path = write_jsonl([{"a": 1}, {"b": [1.5, 2]}], tmp_path / "out" / "r.jsonl")
    assert [json.loads(line) for line in path.read_text().splitlines()] == [{"a": 1}, {"b": [1.5, 2]}]
    with pytest.raises(OutputFileError):
        write_jsonl([], tmp_path)
