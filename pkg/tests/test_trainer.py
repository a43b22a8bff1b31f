import numpy as np
import pytest

from ids4nr.backbones import BackboneConfig
from ids4nr.checkpoint import load_checkpoint, read_header, save_checkpoint
from ids4nr.dataset import make_batches
from ids4nr.errors import CorruptCheckpoint, DivergenceError
from ids4nr.trainer import (ABLATIONS, TrainConfig, check_gradients, count_parameters,
                            gradient_check, init_model, loss_and_grad, make_selfsup_batch,
                            train)

from .toy import toy_problem


def _cfg(kind="cml", **kw):
    kw.setdefault("dim", 4)
    return TrainConfig(backbone=BackboneConfig(kind), **kw)


def _batch(model, split, seed=0, size=8):
    rng = np.random.default_rng(seed)
    batch = next(make_batches(split, model.config.backbone.objective, size, rng))
    aux = make_selfsup_batch(model, batch, rng) if model.selfsup_active else None
    return batch, aux


@pytest.mark.parametrize("kind", ["lfm", "ncf", "cml"])
@pytest.mark.parametrize("ablation", ABLATIONS)
def test_gradients_match_finite_differences(synthetic_dataset, synthetic_split, kind, ablation):
    cfg = _cfg(kind, ablation=ablation, gamma=0.3, lam=0.01)
    model = init_model(synthetic_dataset, cfg, synthetic_split.cold_items, dtype=np.float64)
    batch, aux = _batch(model, synthetic_split)
    worst, errors, grads = gradient_check(model, batch, aux, eps=1e-6, report=True)
    assert worst < 1e-6, errors
    # frozen cold rows
    assert not grads["embedding/item"][synthetic_split.cold_items].any()


def test_ablation_switches(synthetic_dataset, synthetic_split):
    losses = {}
    for ablation in ABLATIONS:
        model = init_model(synthetic_dataset, _cfg(ablation=ablation, gamma=0.5),
                           synthetic_split.cold_items)
        batch, aux = _batch(model, synthetic_split)
        out = loss_and_grad(model, batch, aux)
        losses[ablation] = out
        if ablation != "full":
            assert out.ss == 0.0
            assert not model.grads["selfsup/enc_w"].any()
        if ablation == "no_ss_id":
            assert not model.grads["disentangle/user/c_pop"].any()
    assert losses["full"].ss > 0
    assert losses["full"].total == pytest.approx(losses["full"].rec + 0.5 * losses["full"].ss)
    # same parameters, same batch: only the self-supervision term differs
    assert losses["full"].rec == pytest.approx(losses["no_ss"].rec)


def test_gamma_zero_equals_no_ss(synthetic_dataset, synthetic_split):
    a = init_model(synthetic_dataset, _cfg(gamma=0.0), synthetic_split.cold_items)
    b = init_model(synthetic_dataset, _cfg(ablation="no_ss"), synthetic_split.cold_items)
    np.testing.assert_array_equal(a.theta, b.theta)
    batch, aux = _batch(a, synthetic_split)
    loss_and_grad(a, batch, aux)
    loss_and_grad(b, batch, None)
    np.testing.assert_array_equal(a.grad, b.grad)


def test_generic_gradient_helper():
    w = np.array([1.0, -2.0, 0.5])
    errs = check_gradients(lambda: float(np.sum(w**3)), lambda: {"w": 3 * w**2}, {"w": w})
    assert errs["w"] < 1e-8


def test_init_is_seeded(synthetic_dataset):
    a = init_model(synthetic_dataset, _cfg(seed=3))
    b = init_model(synthetic_dataset, _cfg(seed=3))
    c = init_model(synthetic_dataset, _cfg(seed=4))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    assert not np.allclose(a.params["disentangle/user/c_pop"], a.params["disentangle/user/c_pref"])
    # CML starts inside the unit ball
    assert (np.linalg.norm(a.user_emb, axis=1) <= 1 + 1e-6).all()


def test_training_is_deterministic_and_shapes_history(synthetic_dataset, synthetic_split):
    runs = []
    for _ in range(2):
        cfg = _cfg("lfm", epochs=2, seed=5)
        model, hist = train(init_model(synthetic_dataset, cfg, synthetic_split.cold_items),
                            synthetic_split)
        runs.append((model.theta.copy(), hist))
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    assert len(runs[0][1]) == 2
    assert runs[0][1].column("loss") == runs[1][1].column("loss")


def test_no_ss_history_has_zero_ss(synthetic_dataset, synthetic_split):
    cfg = _cfg(ablation="no_ss", epochs=2)
    _, hist = train(init_model(synthetic_dataset, cfg, synthetic_split.cold_items), synthetic_split)
    assert hist.column("ss") == [0.0, 0.0]


def test_cold_rows_frozen_through_training(synthetic_dataset, synthetic_split):
    cfg = _cfg("ncf", epochs=2, gamma=0.1)
    model = init_model(synthetic_dataset, cfg, synthetic_split.cold_items)
    before = model.item_emb[synthetic_split.cold_items].copy()
    train(model, synthetic_split)
    np.testing.assert_array_equal(model.item_emb[synthetic_split.cold_items], before)


def test_cml_embeddings_stay_in_ball(synthetic_dataset, synthetic_split):
    cfg = _cfg("cml", epochs=2, lr=0.05)
    model, _ = train(init_model(synthetic_dataset, cfg, synthetic_split.cold_items),
                     synthetic_split)
    warm = ~model.features.cold_mask
    assert (np.linalg.norm(model.item_emb[warm], axis=1) <= 1 + 1e-5).all()
    assert (np.linalg.norm(model.user_emb, axis=1) <= 1 + 1e-5).all()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(synthetic_dataset, synthetic_split):
    cfg = _cfg("lfm", epochs=1)
    model = init_model(synthetic_dataset, cfg, synthetic_split.cold_items)
    model.user_emb[:] = np.nan
    with pytest.raises(DivergenceError) as exc:
        train(model, synthetic_split)
    assert exc.value.epoch == 1 and exc.value.step == 1


def test_overfits_toy():
    ds, split = toy_problem()
    cfg = TrainConfig(backbone=BackboneConfig("lfm"), epochs=150)
    _, hist = train(init_model(ds, cfg), split)
    assert hist.records[-1].loss < 0.2 * hist.records[0].loss


def test_parameter_counts():
    ds, _ = toy_problem()
    D = 4
    m = init_model(ds, _cfg("lfm", ablation="no_ss_id"))
    # users + items + attribute values (2 ages, 3 genres + 2 years)
    assert count_parameters(m) == (4 + 12 + 2 + 5) * D
    full = count_parameters(init_model(ds, _cfg("lfm")), by_section=True)
    assert full["disentangle"] == 2 * (2 * D + 2 * D * D + 2 * D)
    k = 2 * D
    assert full["selfsup"] == (D * k + D) + 3 * (D * D + D) + (k * D + k)


def test_checkpoint_round_trip(tmp_path, synthetic_dataset, synthetic_split):
    cfg = _cfg("ncf", epochs=1, fusion="pref")
    model, _ = train(init_model(synthetic_dataset, cfg, synthetic_split.cold_items),
                     synthetic_split)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == model.config
    assert back.step == model.step
    np.testing.assert_array_equal(back.theta, model.theta)
    np.testing.assert_array_equal(back.m, model.m)
    np.testing.assert_array_equal(back.features.cold_mask, model.features.cold_mask)
    header, _ = read_header(path)
    assert header["config"]["backbone"] == "ncf"
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corruption(tmp_path, synthetic_dataset):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(synthetic_dataset, _cfg()), path)
    data = bytearray(path.read_bytes())
    data[-3] ^= 0xFF
    (tmp_path / "flip.ckpt").write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "flip.ckpt")
    (tmp_path / "short.ckpt").write_bytes(path.read_bytes()[:100])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(ablation="nope")
    with pytest.raises(ValueError):
        _cfg(fusion="max")
    with pytest.raises(ValueError):
        _cfg(gamma=-1.0)
    assert _cfg("cml").num_epochs == 30 and _cfg("lfm").num_epochs == 40
    assert _cfg("cml").effective_lam == 0.0
    assert TrainConfig.from_dict(_cfg("ncf").to_dict()) == _cfg("ncf")


def _movielens_config(**kw):
    from pathlib import Path
    from ids4nr.config import ExperimentConfig
    d = Path(__file__).resolve().parents[1] / "data" / "ml-100k"
    if not (d / "interactions.tsv").is_file():
        pytest.skip("MovieLens-100K not fetched")
    return ExperimentConfig(data_dir=str(d), k_core=1, dim=50, **kw)


def test_parameter_count_plain_lfm_movielens():
    from ids4nr import cli
    cfg = _movielens_config(backbone="lfm", ablation="no_ss_id", user_attrs=None,
                            item_attrs=None)
    model = init_model(cli.load_dataset(cfg), cfg.train_config())
    assert count_parameters(model) == (943 + 1682) * 50 == 131_250


@pytest.mark.xfail(strict=True, reason="interiors follow the documented per-side affine "
                   "design, which totals about 0.16M; see the decisions ledger")
def test_parameter_count_ids4nr_cml_within_factor_two():
    from ids4nr import cli
    cfg = _movielens_config(backbone="cml", ablation="full")
    model = init_model(cli.load_dataset(cfg), cfg.train_config())
    assert 0.26e6 <= count_parameters(model) <= 1.04e6
