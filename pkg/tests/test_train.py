import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gzsl import autodiff as ad
from gzsl.autodiff import Tensor
from gzsl.checkpoint import load_checkpoint
from gzsl.config import ConfigError
from gzsl.gsl import InfeasibleError, Multigraph
from gzsl.selftest import check_cycle_gradient, gradcheck
from gzsl.train import (ClassifierHeads, ContractError, LatentCode, LatentPartition, Trainer, TrainConfig,
                        TrainingDiverged, aeds_heads_loss, cycle_swap_loss, latest_checkpoint, load_model,
                        read_history, reconstruction_loss, swap, swap_latents, swap_reconstruction_loss, train)

FAST = dict(batch=4, base=4, hidden=32, res_blocks=1, partition=(4, 4, 4, 4, 4))


def identity(t):
    return t


@st.composite
def code_pairs(draw):
    sizes = draw(st.lists(st.integers(1, 5), min_size=1, max_size=6))
    part = LatentPartition(tuple(sizes))
    vec = st.lists(st.floats(-1e3, 1e3), min_size=part.d, max_size=part.d).map(np.array)
    return LatentCode(draw(vec), part), LatentCode(draw(vec), part), draw(st.integers(0, len(sizes) - 1))


# ------------------------------------------------------------------------ swap

def test_swap_example():
    p = LatentPartition((2, 2))
    a, b = swap(LatentCode(np.array([1., 2, 3, 4]), p), LatentCode(np.array([5., 6, 7, 8]), p), 1)
    np.testing.assert_array_equal(a.vector, [1, 2, 7, 8])
    np.testing.assert_array_equal(b.vector, [5, 6, 3, 4])


def test_swap_symbolic_blocks():
    p = LatentPartition((1, 1, 1, 1))
    g = LatentCode(np.array([10., 20, 30, 40]), p)
    h = LatentCode(np.array([-10., -20, -30, -40]), p)
    a, b = swap(g, h, 1)
    np.testing.assert_array_equal(a.vector, [10, -20, 30, 40])
    np.testing.assert_array_equal(b.vector, [-10, 20, -30, -40])
    np.testing.assert_array_equal(g.vector, [10, 20, 30, 40])


@settings(max_examples=200)
@given(code_pairs())
def test_swap_involution_and_disjointness(pair):
    z1, z2, j = pair
    before1, before2 = z1.vector.copy(), z2.vector.copy()
    a, b = swap(z1, z2, j)
    aa, bb = swap(a, b, j)
    assert aa.vector.tobytes() == before1.tobytes() and bb.vector.tobytes() == before2.tobytes()
    assert z1.vector.tobytes() == before1.tobytes()
    for k in range(z1.partition.m):
        if k != j:
            assert a.block(k).tobytes() == z1.block(k).tobytes()
            assert b.block(k).tobytes() == z2.block(k).tobytes()
    assert a.block(j).tobytes() == z2.block(j).tobytes()


def test_swap_errors():
    p, q = LatentPartition((2, 2)), LatentPartition((1, 3))
    with pytest.raises(ValueError):
        swap(LatentCode(np.zeros(4), p), LatentCode(np.zeros(4), q), 0)
    with pytest.raises(IndexError):
        swap(LatentCode(np.zeros(4), p), LatentCode(np.zeros(4), p), 2)
    with pytest.raises(ValueError):
        LatentPartition((2, 0))


def test_batched_swap_matches_code_swap(rng):
    p = LatentPartition((3, 1, 2))
    z1, z2 = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    classes = np.array([0, 2, 1, 1, 0])
    a, b = swap_latents(Tensor(z1), Tensor(z2), classes, p)
    for n, j in enumerate(classes):
        ea, eb = swap(LatentCode(z1[n], p), LatentCode(z2[n], p), int(j))
        np.testing.assert_array_equal(a.data[n], ea.vector.astype(np.float32))
        np.testing.assert_array_equal(b.data[n], eb.vector.astype(np.float32))


# ------------------------------------------------------------------ loss terms

def test_identity_stub_losses(rng):
    p = LatentPartition((2, 3))
    x, xbar = rng.uniform(size=(4, 5)), rng.uniform(size=(4, 5))
    classes = np.array([0, 1, 1, 0])
    assert reconstruction_loss(identity, identity, x).item() == 0.0
    assert cycle_swap_loss(identity, identity, x, xbar, classes, p).item() == 0.0
    shifted = reconstruction_loss(identity, lambda z: ad.add(z, Tensor(np.full(z.shape, 0.5))), x)
    assert shifted.item() == pytest.approx(0.5, abs=1e-6)


def test_swap_with_identical_partner_is_double_reconstruction(rng):
    p = LatentPartition((2, 3))
    x = rng.uniform(size=(3, 5))
    dec = lambda z: ad.sigmoid(z)  # noqa: E731
    sr = swap_reconstruction_loss(identity, dec, x, x.copy(), np.array([0, 1, 1]), p)
    both = reconstruction_loss(identity, dec, np.concatenate([x, x]))
    assert sr.item() == both.item()


def test_losses_on_untrained_net_are_finite_positive(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(**FAST), ds, Multigraph(ds, train_ids))
    X = ds.images()
    enc, dec, p = t.model.encoder, t.model.decoder, t.partition
    vals = [reconstruction_loss(enc, dec, X[:4]),
            swap_reconstruction_loss(enc, dec, X[:4], X[4:8], np.array([0, 1, 2, 3]), p),
            cycle_swap_loss(enc, dec, X[:4], X[8:12], np.array([4, 0, 1, 2]), p)]
    assert all(np.isfinite(v.item()) and v.item() > 0 for v in vals)


def test_cycle_loss_gradient_on_tiny_net():
    res = check_cycle_gradient(seed=5)
    assert res.ok, res.detail


# ------------------------------------------------------------------ AE+DS heads

def test_heads_loss_at_init_is_log_cardinality(rng):
    p = LatentPartition((2, 3, 1))
    heads = ClassifierHeads(p, (4, 2, 7), ("a", "b", "c"))
    z = Tensor(rng.normal(size=(5, 6)))
    labels = np.stack([rng.integers(0, k, 5) for k in (4, 2, 7)], axis=1)
    for j, k in enumerate((4, 2, 7)):
        assert ad.cross_entropy(heads.logits(z, j), labels[:, j]).item() == pytest.approx(np.log(k), rel=1e-6)
    assert aeds_heads_loss(heads, z, labels).item() == pytest.approx(np.log(4 * 2 * 7), rel=1e-6)


def test_heads_label_out_of_range(rng):
    heads = ClassifierHeads(LatentPartition((2,)), (3,), ("a",))
    with pytest.raises(ValueError):
        aeds_heads_loss(heads, Tensor(rng.normal(size=(2, 2))), [[0], [3]])


def test_two_class_head_gradcheck(rng):
    with ad.precision(np.float64):
        heads = ClassifierHeads(LatentPartition((3,)), (2,), ("a",))
        for t in heads.parameters():
            t.data = rng.normal(size=t.shape)
        z = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        labels = rng.integers(0, 2, (6, 1))
        err, checked, _ = gradcheck(lambda: aeds_heads_loss(heads, z, labels), [z, *heads.parameters()])
    assert checked > 0 and err <= 1e-3


# ------------------------------------------------------------------- config

def test_config_lambda_defaults_and_rules():
    assert TrainConfig().lambda_sr == TrainConfig().lambda_csr == 1.0
    assert TrainConfig(mode="ae").lambda_sr == 0.0
    with pytest.raises(ConfigError):
        TrainConfig(mode="ae", lambda_sr=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_csr=-1)
    with pytest.raises(ConfigError):
        TrainConfig(mode="vae")
    with pytest.raises(ConfigError):
        TrainConfig(partner="closest")


def test_partition_must_match_classes(small_fonts):
    ds, train_ids, _, _ = small_fonts
    with pytest.raises(ConfigError):
        Trainer(TrainConfig(partition=(10, 10)), ds, Multigraph(ds, train_ids))


# ------------------------------------------------------------------ train step

def standalone_terms(t, centers, groups):
    X = t.images
    enc, dec, p = t.model.encoder, t.model.decoder, t.partition
    m = p.m
    others = np.array([g.overlap for g in groups]).reshape(-1)
    lr = reconstruction_loss(enc, dec, X[centers]).item()
    lsr = swap_reconstruction_loss(enc, dec, X[np.repeat(centers, m)], X[others],
                                   np.tile(np.arange(m), len(centers)), p).item()
    lcsr = cycle_swap_loss(enc, dec, X[centers], X[[g.partner for g in groups]],
                           np.array([g.cycle_class for g in groups]), p).item()
    return lr, lsr, lcsr


def test_fused_step_matches_standalone_terms(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(**FAST), ds, Multigraph(ds, train_ids))
    centers = next(t.batches())
    groups = t.make_groups(centers)
    want = standalone_terms(t, centers, groups)
    rep = t.train_step(centers, groups)
    np.testing.assert_allclose((rep.l_r, rep.l_sr, rep.l_csr), want, rtol=1e-5)
    assert rep.total == pytest.approx(rep.l_r + rep.l_sr + rep.l_csr, abs=1e-6)


def test_loss_additivity_with_weights(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(lambda_sr=0.3, lambda_csr=2.5, **FAST), ds, Multigraph(ds, train_ids))
    for rep in t.run(progress_every=0) if t.config.steps else []:
        pass
    b = t.batches()
    for _ in range(3):
        c = next(b)
        rep = t.train_step(c, t.make_groups(c))
        assert min(rep.l_r, rep.l_sr, rep.l_csr) >= 0
        assert abs(rep.total - (rep.l_r + 0.3 * rep.l_sr + 2.5 * rep.l_csr)) <= 1e-6


def test_zero_lambda_gzs_equals_ae(small_fonts):
    ds, train_ids, _, _ = small_fonts
    g = Multigraph(ds, train_ids)
    a = train(TrainConfig(mode="gzs", lambda_sr=0, lambda_csr=0, steps=6, **FAST), ds, g)
    b = train(TrainConfig(mode="ae", steps=6, **FAST), ds, g)
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert sa.keys() == sb.keys()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert [r.total for r in a.history] == [r.total for r in b.history]


def test_wrong_overlap_is_a_contract_error(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(**FAST), ds, Multigraph(ds, train_ids))
    centers = next(t.batches())
    groups = t.make_groups(centers)
    bad = groups[0].__class__(groups[0].center, (groups[0].center,) * ds.m, groups[0].partner, 0)
    with pytest.raises(ContractError):
        t.train_step(centers, [bad, *groups[1:]])


def test_swap_terms_need_groups(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(**FAST), ds, Multigraph(ds, train_ids))
    with pytest.raises(ValueError):
        t.train_step(next(t.batches()))


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_reports_step_and_term(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(mode="ae", **FAST), ds, Multigraph(ds, train_ids))
    t.model.encoder.params["encoder.fc2.weight"].data[:] = 3e38
    with pytest.raises(TrainingDiverged, match="step 1") as err:
        t.train_step(next(t.batches()))
    assert isinstance(err.value.__cause__, ad.NonFiniteError)


def test_infeasible_sampler_names_class(small_fonts):
    ds, _, _, _ = small_fonts
    # members that all share one letter leave no one-overlap provider for letter-only agreement
    members = np.flatnonzero(ds.attrs[:, 0] == 0)[:3]
    t = Trainer(TrainConfig(**FAST), ds, Multigraph(ds, members))
    with pytest.raises(InfeasibleError, match="training sampler"):
        t.make_groups(members[:1])


def test_ae_ds_step_trains_heads(small_fonts):
    ds, train_ids, _, _ = small_fonts
    t = Trainer(TrainConfig(mode="ae-ds", **FAST), ds, Multigraph(ds, train_ids))
    before = {k: v.data.copy() for k, v in t.model.heads.params.items()}
    c = next(t.batches())
    rep = t.train_step(c)
    assert rep.l_sr == rep.l_csr == 0
    assert any(not np.array_equal(before[k], v.data) for k, v in t.model.heads.params.items())
    assert any(k.startswith("heads.") for k in t.model.state_dict())


def test_run_layout_history_and_determinism(small_fonts, tmp_path):
    ds, train_ids, _, _ = small_fonts
    g = Multigraph(ds, train_ids)
    cfg = TrainConfig(steps=5, checkpoint_every=2, **FAST)
    train(cfg, ds, g, tmp_path / "a")
    train(cfg, ds, Multigraph(ds, train_ids), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("ckpt-*.gzsn"))
    assert names == ["ckpt-000002.gzsn", "ckpt-000004.gzsn", "ckpt-000005.gzsn"]
    hist = read_history(tmp_path / "a" / "history.csv")
    assert [r.step for r in hist] == [1, 2, 3, 4, 5]
    assert (tmp_path / "a" / "history.csv").read_text().splitlines()[0] == "step,L_r,L_sr,L_csr,total"
    assert latest_checkpoint(tmp_path / "a").read_bytes() == latest_checkpoint(tmp_path / "b").read_bytes()


def test_load_model_reproduces_outputs(small_fonts, tmp_path):
    ds, train_ids, _, _ = small_fonts
    t = train(TrainConfig(mode="ae-ds", steps=2, **FAST), ds, Multigraph(ds, train_ids), tmp_path)
    m = load_model(latest_checkpoint(tmp_path))
    X = ds.images()[:5]
    assert m.partition == t.partition
    np.testing.assert_array_equal(m.decode(m.encode(X)), t.model.decode(t.model.encode(X)))
    assert m.heads is not None and m.heads.cardinalities == ds.schema.cardinalities
    state = load_checkpoint(latest_checkpoint(tmp_path))
    assert state["meta.partition"].tolist() == [4, 4, 4, 4, 4]
