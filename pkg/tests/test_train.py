import pickle

import numpy as np
import pytest


from molgnn.molgraph import ConformerSet, SplitSpec
from molgnn.tensor import Parameter, Tensor
from molgnn.train import (Adam, TrainConfig, derive_seed, ensemble_predict,
                          evaluate, fit, load_checkpoint, lr_at_epoch,
                          mae_loss, save_checkpoint, train_epoch)
from molgnn.verify import random_conformers, random_molecule, small_model_2d, \
    small_model_3d


def tiny_model():
    return small_model_2d(seed=0)


def make_dataset(rng, n_mols=8):
    graphs = []
    for i in range(n_mols):
        g = random_molecule(rng, n=4)
        g.id = f"mol-{i}"
        g.target = float(rng.normal())
        graphs.append(g)
    return graphs


# -- loss ----------------------------------------------------------------------


def test_mae_loss_examples():
    assert float(mae_loss(Tensor([1.0, 3.0]), np.array([2.0, 1.0])).data) \
        == pytest.approx(1.5)
    assert float(mae_loss(Tensor([5.0]), np.array([5.0])).data) == 0.0


def test_mae_loss_gradient_is_sign_over_n():
    pred = Tensor([1.0, -2.0, 0.0], requires_grad=True)
    loss = mae_loss(pred, np.array([0.0, 0.0, 0.0]))
    loss.backward()
    assert np.allclose(pred.grad, [1 / 3, -1 / 3, 0.0])


def test_mae_loss_shape_mismatch():
    with pytest.raises(ValueError):
        mae_loss(Tensor([1.0, 2.0]), np.array([1.0]))


# -- optimizer -----------------------------------------------------------------


def test_adam_first_step_moves_by_lr_times_sign():
    p = Parameter(np.array([1.0, -1.0, 2.0]), name="w")
    p.grad[...] = [0.3, -0.7, 0.0]
    opt = Adam([p])
    opt.step(lr=0.1)
    # first Adam step ~ -lr * sign(g) up to eps; zero grad stays put
    assert np.allclose(p.data, [0.9, -0.9, 2.0], atol=1e-6)


def test_adam_zero_grad_and_moment_decay():
    p = Parameter(np.array([0.0]), name="w")
    opt = Adam([p])
    p.grad[...] = 1.0
    opt.step(lr=0.0)        # lr 0: moments advance, data unchanged
    assert p.data[0] == 0.0
    assert opt.m[0][0] == pytest.approx(0.1)
    assert opt.v[0][0] == pytest.approx(0.001)
    opt.zero_grad()
    assert np.all(p.grad == 0.0)


def test_adam_nonfinite_gradient_names_parameter():
    p = Parameter(np.array([0.0]), name="bad_weight")
    p.grad[...] = np.nan
    with pytest.raises(FloatingPointError, match="bad_weight"):
        Adam([p]).step(lr=0.1)


def test_adam_skips_frozen_parameters():
    frozen = Parameter(np.array([1.0]), name="f", trainable=False)
    live = Parameter(np.array([1.0]), name="l")
    opt = Adam([frozen, live])
    assert opt.params == [live]


def test_adam_grad_clip_rescales_global_norm():
    p = Parameter(np.array([0.0, 0.0]), name="w")
    p.grad[...] = [3.0, 4.0]        # norm 5
    Adam([p]).step(lr=0.0, grad_clip=1.0)
    assert np.allclose(p.grad, [0.6, 0.8])


def test_adam_state_roundtrip():
    p = Parameter(np.array([1.0]), name="w")
    opt = Adam([p])
    p.grad[...] = 0.5
    opt.step(lr=0.01)
    state = pickle.loads(pickle.dumps(opt.state_dict()))
    opt2 = Adam([Parameter(np.array([1.0]), name="w")])
    opt2.load_state_dict(state)
    assert opt2.step_count == 1
    assert np.array_equal(opt2.m[0], opt.m[0])
    assert np.array_equal(opt2.v[0], opt.v[0])


# -- schedule ------------------------------------------------------------------


def test_lr_schedule_2d_steps():
    cfg = TrainConfig.paper_defaults("2d")
    assert lr_at_epoch(cfg, 0) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 29) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 30) == pytest.approx(2.5e-4)
    assert lr_at_epoch(cfg, 60) == pytest.approx(6.25e-5)
    assert lr_at_epoch(cfg, 99) == pytest.approx(1e-3 * 0.25 ** 3)


def test_lr_schedule_3d_steps():
    cfg = TrainConfig.paper_defaults("3d")
    assert cfg.epochs == 60
    assert lr_at_epoch(cfg, 39) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 40) == pytest.approx(1e-4)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(7, "epoch-0") == derive_seed(7, "epoch-0")
    assert derive_seed(7, "epoch-0") != derive_seed(7, "epoch-1")
    assert derive_seed(7, "epoch-0") != derive_seed(8, "epoch-0")


# -- training loop -------------------------------------------------------------


def test_train_epoch_decreases_loss_on_tiny_set():
    rng = np.random.default_rng(0)
    graphs = make_dataset(rng, 6)
    model = tiny_model()
    by_id = {g.id: g for g in graphs}
    ids = list(by_id)
    cfg = TrainConfig(model_kind="2d", epochs=1, batch_size=4, lr0=1e-2,
                      decay_every=1000)
    opt = Adam(model.parameters())
    first = train_epoch(model, by_id, ids, cfg, opt, 0)
    for epoch in range(1, 30):
        last = train_epoch(model, by_id, ids, cfg, opt, epoch)
    assert last < first


class _ConstantModel:
    """Always predicts zero; exposes just enough surface for train_epoch."""

    kind = "2d"

    def forward(self, batch, training=False, rng=None):
        return Tensor(np.zeros(batch.num_graphs), requires_grad=True)


def test_train_epoch_partial_final_batch_weighting():
    # 5 graphs with batch size 4: the epoch MAE must weight batches by size,
    # i.e. equal the plain per-example mean
    rng = np.random.default_rng(1)
    graphs = make_dataset(rng, 5)
    by_id = {g.id: g for g in graphs}
    cfg = TrainConfig(model_kind="2d", epochs=1, batch_size=4, lr0=0.0)
    mae = train_epoch(_ConstantModel(), by_id, list(by_id), cfg, Adam([]), 0)
    expected = np.mean([abs(g.target) for g in graphs])
    assert mae == pytest.approx(expected, rel=1e-12)


def test_evaluate_reports_skipped_ids_for_3d():
    rng = np.random.default_rng(2)
    graphs = make_dataset(rng, 3)
    by_id = {g.id: g for g in graphs}
    model = small_model_3d(seed=0)
    conformers = {"mol-0": ConformerSet("mol-0", random_conformers(rng, 4, 2)),
                  "mol-2": ConformerSet("mol-2", random_conformers(rng, 4, 1))}
    mae, preds, skipped = evaluate(model, by_id, list(by_id), conformers)
    assert set(preds) == {"mol-0", "mol-2"}
    assert skipped == ["mol-1"]
    assert np.isfinite(mae)


# -- ensembling ----------------------------------------------------------------


def test_ensemble_mean_and_skip_rules():
    members = [{"a": 1.0, "b": 2.0},
               {"a": 3.0, "b": None},
               {"a": 5.0}]
    out = ensemble_predict(members, ["a", "b"])
    assert out["a"] == pytest.approx(3.0)
    assert out["b"] == pytest.approx(2.0)   # only member 0 serves b


def test_ensemble_errors_when_nobody_predicts():
    with pytest.raises(ValueError, match="c"):
        ensemble_predict([{"a": 1.0}], ["c"])


def test_ensemble_of_means_bounds_member_mae():
    # |mean(p_i) - t| <= mean|p_i - t| for each id, hence also for the MAE
    rng = np.random.default_rng(3)
    ids = [f"m{i}" for i in range(20)]
    targets = {i: float(rng.normal()) for i in ids}
    members = [{i: float(rng.normal()) for i in ids} for _ in range(5)]
    ens = ensemble_predict(members, ids)
    ens_mae = np.mean([abs(ens[i] - targets[i]) for i in ids])
    mean_member_mae = np.mean([
        np.mean([abs(m[i] - targets[i]) for i in ids]) for m in members])
    assert ens_mae <= mean_member_mae + 1e-12


# -- checkpointing -------------------------------------------------------------


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    model = tiny_model()
    opt = Adam(model.parameters())
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, opt, p1, epoch=3, seed=11)
    model2, opt_state, epoch, seed = load_checkpoint(p1)
    assert (epoch, seed) == (3, 11)
    opt2 = Adam(model2.parameters())
    opt2.load_state_dict(opt_state)
    save_checkpoint(model2, opt2, p2, epoch=3, seed=11)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_wrong_version_rejected(tmp_path):
    model = tiny_model()
    path = tmp_path / "v.ckpt"
    save_checkpoint(model, None, path)
    payload = pickle.loads(path.read_bytes())
    payload["version"] = 99
    path.write_bytes(pickle.dumps(payload, protocol=4))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_checkpoint_corrupt_file_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a pickle")
    with pytest.raises(ValueError, match="corrupt"):
        load_checkpoint(path)


def test_resume_matches_uninterrupted_run(tmp_path):
    rng = np.random.default_rng(4)
    graphs = make_dataset(rng, 8)
    split = SplitSpec(name="s", train_ids=[g.id for g in graphs[:6]],
                      valid_ids=[g.id for g in graphs[6:]], test_ids=[])
    cfg = TrainConfig(model_kind="2d", epochs=6, batch_size=4, lr0=1e-3,
                      seed=5, decay_every=1000)

    straight = tiny_model()
    fit(straight, graphs, split, cfg)

    interrupted = tiny_model()
    half = TrainConfig(**{**cfg.__dict__, "epochs": 3})
    ckpt = tmp_path / "mid.ckpt"
    hist = fit(interrupted, graphs, split, half, final_path=ckpt)
    assert len(hist) == 3
    resumed, opt_state, epoch, _ = load_checkpoint(ckpt)
    fit(resumed, graphs, split, cfg, resume_optimizer_state=opt_state,
        start_epoch=epoch + 1)

    for a, b in zip(straight.parameters(), resumed.parameters()):
        assert np.array_equal(a.data, b.data), a.name


def test_fit_writes_metrics_jsonl(tmp_path):
    import json
    rng = np.random.default_rng(6)
    graphs = make_dataset(rng, 6)
    split = SplitSpec(name="s", train_ids=[g.id for g in graphs[:4]],
                      valid_ids=[g.id for g in graphs[4:]], test_ids=[])
    cfg = TrainConfig(model_kind="2d", epochs=2, batch_size=4, lr0=1e-3)
    mpath = tmp_path / "metrics.jsonl"
    fit(tiny_model(), graphs, split, cfg, metrics_path=mpath)
    lines = mpath.read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "lr", "train_mae", "valid_mae"}
    assert rec["epoch"] == 0 and rec["lr"] == pytest.approx(1e-3)
