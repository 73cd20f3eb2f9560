import csv
import json

import numpy as np
import pytest

from gat_transfer.errors import ShapeError
from gat_transfer.evaluation import (
    ABLATION_LABELS,
    PUBLISHED_TABLES,
    AblationSet,
    EvaluationReport,
    MetricRecord,
    MetricTable,
    VariantMetrics,
    balance_error,
    compare_with_published,
    evaluate_testset,
    metric_record,
    psnr,
    reproduce_published_tables,
    ssim,
    tables_from_variants,
    weighted_mean,
    write_report,
)
from gat_transfer.training import Trainer, TrainConfig


def random_image(seed: int, size: int = 48) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(size, size, 3), dtype=np.uint8)


# ---- metrics ----

def test_psnr_examples():
    image = random_image(0)
    assert psnr(image, image.copy()) == 100.0
    a = np.zeros((16, 16, 3), dtype=np.uint8)
    b = np.full((16, 16, 3), 16, dtype=np.uint8)
    assert psnr(a, b) == pytest.approx(10 * np.log10(65025 / 256), abs=1e-9)
    assert psnr(a, b) == pytest.approx(24.05, abs=0.01)


def test_psnr_is_symmetric_and_falls_with_noise():
    a, b = random_image(1), random_image(2)
    assert psnr(a, b) == psnr(b, a)
    rng = np.random.default_rng(3)
    scores = []
    for sigma in (2, 4, 8, 16, 32):
        noisy = np.clip(a.astype(float) + rng.normal(0, sigma, a.shape), 0, 255).astype(np.uint8)
        scores.append(psnr(a, noisy))
    assert all(hi > lo for hi, lo in zip(scores, scores[1:]))


def test_metrics_reject_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(random_image(0, 32), random_image(0, 48))
    with pytest.raises(ShapeError):
        ssim(random_image(0, 32), random_image(0, 48))


def test_ssim_examples():
    image = random_image(4)
    assert ssim(image, image.copy()) == pytest.approx(1.0, abs=1e-6)
    black = np.zeros((32, 32, 3), dtype=np.uint8)
    white = np.full((32, 32, 3), 255, dtype=np.uint8)
    assert 0 <= ssim(black, white) < 0.02
    a, b = random_image(5), random_image(6)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_metric_record_fields():
    x, y = random_image(7), random_image(8)
    record = metric_record("p", x.copy(), x, y)
    assert record.p_content == 100.0 and record.s_content == pytest.approx(1.0, abs=1e-6)
    assert record.p_style < 100.0 and record.s_style < 1.0


# ---- weighted mean and balance error ----

def test_weighted_mean_examples():
    assert weighted_mean([1, 2, 3, 4, 5]) == ([1.0, 2.0, 3.0, 4.0, 5.0], 3.0)
    assert weighted_mean([7.5] * 5)[1] == pytest.approx(7.5)
    _, w_avg = weighted_mean([8.690, 9.833, 9.242, 17.350, 9.280])
    assert w_avg == pytest.approx(10.011, abs=1e-3)


def test_weighted_mean_ignores_input_order():
    values = [0.394, 0.599, 0.517, 0.772, 0.504]
    assert weighted_mean(values)[1] == pytest.approx(weighted_mean(values[::-1])[1])


def test_weighted_mean_needs_five_values():
    with pytest.raises(ValueError):
        weighted_mean([1, 2, 3])


def test_balance_error_examples():
    _, w_avg = weighted_mean([8.690, 9.833, 9.242, 17.350, 9.280])
    assert balance_error(w_avg, 9.280) == pytest.approx(0.534, abs=0.01)
    assert balance_error(w_avg, 8.690) == pytest.approx(1.745, abs=0.01)
    assert balance_error(w_avg, w_avg) == 0.0


def test_ssim_content_error_for_full_model():
    content = AblationSet(dict(zip(ABLATION_LABELS, [0.394, 0.599, 0.517, 0.772, 0.504])))
    assert content.errors()["L_Total"] == pytest.approx(0.001, abs=0.001)


def test_variant_at_weighted_mean_has_zero_error():
    content = AblationSet(dict(zip(ABLATION_LABELS, [1.0, 2.0, 3.0, 4.0, 5.0])))
    style = AblationSet(dict(zip(ABLATION_LABELS, [5.0, 4.0, 3.0, 2.0, 1.0])))
    table = MetricTable("psnr", content, style)
    assert table.e_total["wo_Ll"] == 0.0
    assert table.best_variant == "wo_Ll"


def test_published_tables_reproduce():
    comparisons = compare_with_published()
    assert len(comparisons) == 2 * 3 * 5
    for c in comparisons:
        if c.known_misprint:
            continue
        tolerance = 0.01 if c.metric == "psnr" else 0.001 + 1e-9
        assert c.difference <= tolerance, (c.metric, c.row, c.variant, c.published, c.computed)


def test_published_misprint_is_the_only_outlier():
    misprints = [c for c in compare_with_published() if c.known_misprint]
    assert len(misprints) == 1
    assert misprints[0].computed == pytest.approx(49.194, abs=0.01)
    tables = reproduce_published_tables()
    assert tables["psnr"].e_total["wo_Lh"] == pytest.approx(PUBLISHED_TABLES["psnr"]["E_total"]["wo_Lh"], abs=0.01)
    assert tables["psnr"].best_variant == "L_Total"
    # Unrounded SSIM rows put wo_Ll slightly ahead of L_Total
    assert tables["ssim"].e_total["wo_Ll"] < tables["ssim"].e_total["L_Total"] < 0.003


# ---- reports ----

def _variants(count: int) -> dict[str, VariantMetrics]:
    rng = np.random.default_rng(0)
    variants = {}
    for label in ABLATION_LABELS[:count]:
        records = [MetricRecord(f"x{i}__y0", *rng.uniform(5, 30, 2), *rng.uniform(0, 1, 2)) for i in range(3)]
        variants[label] = VariantMetrics(label, records)
    return variants


def test_tables_need_all_five_variants(caplog):
    assert tables_from_variants(_variants(2)) == {}
    assert "skipping" in caplog.text
    tables = tables_from_variants(_variants(5))
    assert set(tables) == {"psnr", "ssim"}
    assert set(tables["psnr"].e_total) == set(ABLATION_LABELS)


def test_write_report_files(tmp_path):
    variants = _variants(5)
    report = EvaluationReport(pairs=3, variants=variants, tables=tables_from_variants(variants))
    written = write_report(report, tmp_path)
    assert {p.name for p in written} == {
        *(f"metrics_{label}.csv" for label in ABLATION_LABELS),
        "scatter_psnr.csv",
        "scatter_ssim.csv",
        "summary.json",
    }
    with open(tmp_path / "metrics_L_Total.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["pair_id", "P_content", "P_style", "S_content", "S_style"]
    assert len(rows) == 4
    with open(tmp_path / "scatter_ssim.csv", newline="") as f:
        assert len(list(csv.reader(f))) == 1 + 5 * 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert "E_PSNR" in summary["tables"]["psnr"]
    assert "E_SSIM" in summary["tables"]["ssim"]


def test_evaluate_testset_scores_every_pair_and_skips_missing(prepared, tiny_network, toy_extractor, tmp_path):
    _, manifest, _ = prepared
    Trainer(TrainConfig(device="cpu"), tiny_network, extractor=toy_extractor).save(tmp_path / "a" / "checkpoints" / "final.pt")

    report = evaluate_testset({"a": tmp_path / "a", "missing": tmp_path / "nope"}, manifest, tmp_path / "report")
    assert report.skipped == ["missing"]
    assert report.pairs == len(manifest.test_pairs) == 4
    assert len(report.variants["a"].records) == 4
    assert report.tables == {}
    assert (tmp_path / "report" / "metrics_a.csv").exists()
