import numpy as np
import pytest

from instfuse.metrics import (
    InstanceSet,
    MetricsError,
    avg_pr_re,
    coverage,
    coverage_fixture,
    evaluate_dataset,
    fp_fn_counts,
    instance_prf,
    iou,
    match_count,
    prf_fixture,
)


def inst(a):
    return InstanceSet.from_labels(np.asarray(a))


def blocks():
    a = np.zeros((10, 20), int)
    a[1:5, 1:5] = 1
    a[2:8, 10:18] = 2
    return a


def test_iou_cases():
    m = np.zeros((10, 20), bool)
    m[0:5, 0:10] = True
    assert iou(m, m) == 1.0
    assert iou(m, ~m) == 0.0
    a = np.zeros(200, bool)
    b = np.zeros(200, bool)
    a[:100] = True
    b[50:150] = True
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(MetricsError):
        iou(np.zeros(3, bool), np.zeros(3, bool))


def test_coverage_identity_and_fixture():
    g = inst(blocks())
    assert coverage(g, g) == (1.0, 1.0)
    gt, pred = coverage_fixture()
    mw, mu = coverage(inst(gt), inst(pred))
    assert mu == pytest.approx(0.65, abs=1e-12)
    assert mw == pytest.approx(0.725, abs=1e-12)


def test_coverage_without_predictions():
    assert coverage(inst(blocks()), inst(np.zeros((10, 20), int))) == (0.0, 0.0)


def test_avg_pr_re():
    g = inst(blocks())
    assert avg_pr_re(g.foreground(), g, g) == (1.0, 1.0, False)
    gt = np.zeros((4, 4), int)
    gt[:, :2] = 1
    pred = np.zeros((4, 4), int)
    pred[:2, :] = 1
    pr, re, _ = avg_pr_re(gt > 0, inst(pred), inst(gt))
    assert pr == 0.5 and re == 0.5
    pr, re, flagged = avg_pr_re(gt > 0, inst(np.zeros((4, 4), int)), inst(gt))
    assert pr == 0.0 and flagged


def test_fp_fn():
    g = blocks()
    assert fp_fn_counts(inst(g), inst(g)) == (0, 0)
    stray = g.copy()
    stray[9, 0:3] = 3
    assert fp_fn_counts(inst(g), inst(stray)) == (1, 0)
    missed = g.copy()
    missed[missed == 2] = 0
    assert fp_fn_counts(inst(g), inst(missed)) == (0, 1)


def test_instance_prf():
    g = inst(blocks())
    assert instance_prf(g, g) == (1.0, 1.0, 1.0)
    gt, pred = prf_fixture()
    pr, re, f1 = instance_prf(inst(gt), inst(pred))
    assert pr == pytest.approx(1 / 3, abs=1e-12)
    assert re == pytest.approx(0.5, abs=1e-12)
    assert f1 == pytest.approx(0.4, abs=1e-12)
    assert instance_prf(g, inst(np.zeros((10, 20), int))) == (0.0, 0.0, 0.0)


def test_match_is_one_to_one():
    gt = np.zeros((4, 8), int)
    gt[:, :4] = 1
    pred = gt.copy()
    assert match_count(inst(gt), inst(pred)) == 1


def test_dataset_identity():
    g = blocks()
    r = evaluate_dataset([(g, g)])
    assert r.as_dict() == dict(
        fiou=1.0, mwcov=1.0, mucov=1.0, avg_pr=1.0, avg_re=1.0, avg_fp=0.0, avg_fn=0.0, ins_pr=1.0, ins_re=1.0, ins_f1=1.0
    )


def test_dataset_averages_per_image_coverage():
    gt1 = np.zeros((10, 10), int)
    gt1[0:10, 0:5] = 1
    pred1 = np.zeros_like(gt1)
    pred1[0:6, 0:5] = 1  # IoU 0.6
    gt2 = np.zeros((10, 10), int)
    gt2[0:10, 0:5] = 1
    pred2 = np.zeros_like(gt2)
    pred2[0:8, 0:5] = 1  # IoU 0.8
    r = evaluate_dataset([(gt1, pred1), (gt2, pred2)])
    assert r.mwcov == pytest.approx(0.7, abs=1e-12)


def test_dataset_all_below_match_bar():
    gt = np.zeros((10, 10), int)
    gt[:, :6] = 1
    pred = np.zeros_like(gt)
    pred[:, :3] = 1
    assert evaluate_dataset([(gt, pred)]).ins_f1 == 0.0


def test_swapping_exchanges_precision_and_recall():
    gt, pred = prf_fixture()
    a = evaluate_dataset([(gt, pred)])
    b = evaluate_dataset([(pred, gt)])
    assert a.ins_pr == b.ins_re and a.ins_re == b.ins_pr


def test_dataset_errors():
    with pytest.raises(MetricsError):
        evaluate_dataset([])
    with pytest.raises(MetricsError):
        evaluate_dataset([(np.zeros((2, 2), int), np.zeros((3, 2), int))])


def test_empty_foreground_is_flagged():
    z = np.zeros((3, 3), int)
    r = evaluate_dataset([(z, z)])
    assert r.fiou == 1.0 and r.flags
