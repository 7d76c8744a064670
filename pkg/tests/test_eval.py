import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from gzsl.eval import (SynthesisQuery, assemble, eval_suite, find_providers, make_queries, mse,
                       probe_disentanglement, probe_model, psnr, synthesize)
from gzsl.gsl import InfeasibleError, Multigraph
from gzsl.train import LatentPartition, Trainer, TrainConfig

FAST = dict(batch=4, base=4, hidden=32, res_blocks=1, partition=(4, 4, 4, 4, 4))


@pytest.fixture(scope="module")
def model(small_fonts):
    ds, train_ids, _, _ = small_fonts
    return Trainer(TrainConfig(**FAST), ds, Multigraph(ds, train_ids)).model


# ------------------------------------------------------------------ synthesis

def test_same_provider_everywhere_is_plain_reconstruction(small_fonts, model):
    ds = small_fonts[0]
    X = ds.images()
    q = SynthesisQuery(ds.tuple(7), (7,) * ds.m)
    out = synthesize(model, X, q, ds)
    assert out.tobytes() == model.decode(model.encode(X[7:8]))[0].tobytes()


def test_synthesis_ignores_provider_batch_order(small_fonts, model):
    ds, train_ids, _, _ = small_fonts
    X = ds.images()
    g = Multigraph(ds, train_ids)
    target = ds.tuple(int(small_fonts[2][0]))
    q = SynthesisQuery(target, find_providers(g, target, np.random.default_rng(0)))
    a = synthesize(model, X, q, ds)
    # decoding must not depend on which other samples share the encode batch
    z = model.encode(X[list(reversed(q.providers))])[::-1]
    b = model.decode(assemble(z, model.partition))[0]
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_provider_must_hold_target_value(small_fonts, model):
    ds = small_fonts[0]
    other = next(i for i in range(len(ds)) if ds.attrs[i, 2] != ds.attrs[0, 2])
    q = SynthesisQuery(ds.tuple(0), (0, 0, other, 0, 0))
    with pytest.raises(ValueError, match="font_color"):
        synthesize(model, ds.images(), q, ds)


def test_assemble_takes_block_j_from_row_j():
    p = LatentPartition((1, 2, 1))
    codes = np.arange(12, dtype=np.float32).reshape(3, 4)
    np.testing.assert_array_equal(assemble(codes, p), [[0, 5, 6, 11]])
    with pytest.raises(ValueError):
        assemble(codes[:2], p)


def test_find_providers_on_holdout(small_fonts):
    ds, train_ids, test_ids, _ = small_fonts
    g = Multigraph(ds, train_ids)
    members = set(train_ids.tolist())
    for i in test_ids[:20]:
        target = ds.tuple(int(i))
        provs = find_providers(g, target, np.random.default_rng(1))
        assert all(p in members and ds.attrs[p, j] == target[j] for j, p in enumerate(provs))
        assert provs == find_providers(g, target, np.random.default_rng(1))


def test_find_providers_missing_value(small_fonts):
    ds = small_fonts[0]
    members = np.flatnonzero(ds.attrs[:, 3] != 1)
    target = next(ds.tuple(i) for i in range(len(ds)) if ds.attrs[i, 3] == 1)
    with pytest.raises(InfeasibleError, match="background_color") as err:
        find_providers(Multigraph(ds, members), target, np.random.default_rng(0))
    assert err.value.attribute == "background_color"


# -------------------------------------------------------------------- metrics

def test_identical_images_have_infinite_psnr(rng):
    x = rng.uniform(size=(3, 8, 8))
    assert mse(x, x) == 0 and psnr(x, x) == math.inf


def test_uniform_error_of_a_tenth_is_20_db():
    a = np.zeros((3, 4, 4))
    assert mse(a, a + 0.1) == pytest.approx(0.01)
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


@settings(max_examples=100)
@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_psnr_decreases_with_error(e1, e2):
    a = np.zeros((2, 2))
    p1, p2 = psnr(a, a + e1), psnr(a, a + e2)
    if e1 < e2:
        assert p1 > p2 or math.isclose(p1, p2)


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((3, 4, 4)), np.zeros((4, 4, 3)))


# --------------------------------------------------------------------- probes

def test_single_value_class_marked_absent():
    rng = np.random.default_rng(0)
    attrs = np.stack([rng.integers(0, 3, 100), np.zeros(100, dtype=int)], axis=1)
    p = LatentPartition((2, 2))
    rep = probe_disentanglement(rng.normal(size=(100, 4)), attrs, p, (3, 2), ("a", "b"), epochs=2)
    assert np.isnan(rep.accuracy[:, 1]).all() and not np.isnan(rep.accuracy[:, 0]).any()


def test_probe_row_depends_only_on_its_block():
    rng = np.random.default_rng(0)
    attrs = rng.integers(0, 3, (120, 2))
    p = LatentPartition((2, 3))
    codes = rng.normal(size=(120, 5))
    codes2 = codes.copy()
    codes2[:, 2:] = rng.normal(size=(120, 3))
    a = probe_disentanglement(codes, attrs, p, (3, 3), ("a", "b"), epochs=3)
    b = probe_disentanglement(codes2, attrs, p, (3, 3), ("a", "b"), epochs=3)
    np.testing.assert_array_equal(a.accuracy[0], b.accuracy[0])


def test_probe_recovers_planted_attribute():
    rng = np.random.default_rng(0)
    attrs = rng.integers(0, 4, (300, 2))
    codes = np.concatenate([np.eye(4)[attrs[:, 0]] + 0.05 * rng.normal(size=(300, 4)),
                            rng.normal(size=(300, 4))], axis=1)
    rep = probe_disentanglement(codes, attrs, LatentPartition((4, 4)), (4, 4), ("a", "b"), epochs=40)
    assert rep.accuracy[0, 0] >= 0.95
    assert abs(rep.accuracy[1, 0] - 0.25) <= 0.15


@pytest.mark.xfail(strict=True, reason="random conv features keep color almost linearly decodable: "
                   "background color probes at ~1.0 and font color at ~0.8 from every block")
def test_random_encoder_probe_near_chance(mini_fonts):
    """An untrained encoder probed on mini-Fonts should sit near chance in every cell."""
    ds, train_ids, _, _ = mini_fonts
    model = Trainer(TrainConfig(batch=4), ds, Multigraph(ds, train_ids)).model
    rep = probe_model(model, ds, train_ids, seed=0, epochs=30)
    gap = np.abs(rep.accuracy - rep.chance[None, :])
    assert np.nanmax(gap) <= 0.15, np.round(rep.accuracy, 3)


# ----------------------------------------------------------------- eval suite

def test_eval_suite_outputs(small_fonts, model, tmp_path):
    ds, train_ids, test_ids, _ = small_fonts
    summary = eval_suite(model, ds, train_ids, test_ids, tmp_path / "a", seed=0, probe_epochs=2)
    eval_suite(model, ds, train_ids, test_ids, tmp_path / "b", seed=0, probe_epochs=2)
    distinct = {ds.tuple(int(i)) for i in test_ids}
    rows = list(csv.DictReader(open(tmp_path / "a" / "metrics.csv")))
    assert len(rows) == len(distinct) == summary["queries"]
    assert all(r["zero_shot"] == "1" for r in rows) and summary["zero_shot_queries"] == len(rows)
    assert set(rows[0]) >= {"query", "letter", "provider_letter", "mse", "psnr"}
    # grid: one row per query, m providers + synthesis + ground truth per row
    w, h = Image.open(tmp_path / "a" / "grid.png").size
    cell = 32 + 2
    assert (h // cell, w // cell) == (len(rows), ds.m + 2)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["queries"] == len(rows)
    assert (tmp_path / "a" / "probe.csv").read_text().splitlines()[-1].startswith("chance")


def test_queries_flag_seen_tuples(small_fonts):
    ds, train_ids, test_ids, _ = small_fonts
    qs = make_queries(ds, train_ids, np.concatenate([test_ids[:3], train_ids[:2]]), seed=0)
    flags = {q.target: q.zero_shot for q in qs}
    assert all(flags[ds.tuple(int(i))] for i in test_ids[:3])
    assert not any(flags[ds.tuple(int(i))] for i in train_ids[:2])
