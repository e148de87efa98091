import numpy as np
import pytest

from concnn.concurrent import ConcurrentModel, DirectModel
from concnn.data import PanelView, market_shares
from concnn.errors import (
    ArchitectureMismatch,
    ConfigError,
    InsufficientHistory,
)
from concnn.nnet import Architecture, forward, init_params
from concnn.simulator import (
    GenerativeSpec,
    IidUniformCovariates,
    simulate,
    softplus_weight,
)
from concnn.trainer import (
    Adam,
    SGD,
    TrainConfig,
    TrainReport,
    make_optimizer,
    pretrain_transfer,
    select_model,
    train,
)


@pytest.fixture(scope="module")
def sim_setup():
    from concnn.data import Scaler, ScalerMethod
    scaler = Scaler(values=np.full(80, 200.0), method=ScalerMethod.ORACLE)
    spec = GenerativeSpec(
        phi=softplus_weight(1.5, [1.0], -0.5),
        scaler=scaler,
        covariates=IidUniformCovariates(0.0, 1.0, 1),
        d=6, n=80, seed=17,
    )
    sim = simulate(spec)
    shares = market_shares(sim.panel, spec.scaler)
    train_view = PanelView(panel=sim.panel, start=0, stop=60)
    valid_view = PanelView(panel=sim.panel, start=60, stop=80)
    return sim.panel, shares, train_view, valid_view


def fresh_model(seed=0, hidden=(8,)):
    net = init_params(Architecture(2, hidden), seed=seed)
    return ConcurrentModel(phi=net, alpha=1.0, horizon=1)


class TestTrainConfig:
    def test_rejects_negative_lr(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=-0.1)

    def test_rejects_unknown_loss(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss="mse")

    def test_rejects_unknown_variant(self):
        with pytest.raises(ConfigError):
            TrainConfig(variant="other")


class TestOptimizers:
    def test_sgd_step(self):
        params = np.array([1.0, 2.0])
        SGD(lr=0.5).step(params, np.array([2.0, -2.0]))
        assert params == pytest.approx([0.0, 3.0])

    def test_adam_first_step_is_lr_sized(self):
        # bias correction makes the first update approach lr * sign(grad)
        params = np.zeros(3)
        Adam(lr=0.1).step(params, np.array([4.0, -4.0, 0.5]))
        assert params == pytest.approx([-0.1, 0.1, -0.1], rel=1e-6)

    def test_make_optimizer_unknown(self):
        with pytest.raises(ConfigError):
            make_optimizer(TrainConfig(optimizer="lbfgs"))


class TestTrain:
    def test_zero_lr_leaves_params_fixed(self, sim_setup):
        panel, shares, tr, va = sim_setup
        model = fresh_model()
        before = model.phi.parameters.copy()
        cfg = TrainConfig(lr=0.0, epochs=3, seed=0)
        model, report = train(model, panel, shares, tr, va, cfg)
        assert np.array_equal(model.phi.parameters, before)
        # identical parameters every epoch: identical losses and MAPEs
        # (losses only match to rounding since batch summation order varies)
        assert report.train_losses == pytest.approx(
            [report.train_losses[0]] * len(report.train_losses), rel=1e-12)
        assert len(set(report.valid_mapes)) == 1

    def test_deterministic_given_seed(self, sim_setup):
        panel, shares, tr, va = sim_setup
        cfg = TrainConfig(epochs=5, seed=3, lr=1e-2)
        m1, r1 = train(fresh_model(1), panel, shares, tr, va, cfg)
        m2, r2 = train(fresh_model(1), panel, shares, tr, va, cfg)
        assert np.array_equal(m1.phi.parameters, m2.phi.parameters)
        assert r1.train_losses == r2.train_losses
        assert r1.valid_mapes == r2.valid_mapes
        assert r1.selected_epoch == r2.selected_epoch

    def test_loss_decreases_from_start(self, sim_setup):
        panel, shares, tr, va = sim_setup
        cfg = TrainConfig(epochs=15, seed=0, lr=1e-2)
        _, report = train(fresh_model(2), panel, shares, tr, va, cfg)
        assert report.train_losses[-1] < report.train_losses[0]

    def test_best_epoch_selected(self, sim_setup):
        panel, shares, tr, va = sim_setup
        cfg = TrainConfig(epochs=10, seed=0, lr=1e-2)
        _, report = train(fresh_model(4), panel, shares, tr, va, cfg)
        k = report.selected_epoch
        assert report.valid_mapes[k - 1] == min(report.valid_mapes)

    def test_early_stopping_caps_epochs(self, sim_setup):
        panel, shares, tr, va = sim_setup
        cfg = TrainConfig(epochs=200, seed=0, lr=0.0, patience=3)
        _, report = train(fresh_model(), panel, shares, tr, va, cfg)
        # flat validation: first epoch wins, then patience runs out
        assert len(report.valid_mapes) == 4

    def test_insufficient_history(self, sim_setup):
        panel, shares, _, va = sim_setup
        model = fresh_model()
        model.horizon = 5
        tiny = PanelView(panel=panel, start=0, stop=4)
        with pytest.raises(InsufficientHistory):
            train(model, panel, shares, tiny, va, TrainConfig(epochs=1))

    def test_ffnn_variant_trains(self, sim_setup):
        panel, shares, tr, va = sim_setup
        net = init_params(Architecture(2, (8,)), seed=0)
        model = DirectModel(phi=net, horizon=1)
        cfg = TrainConfig(epochs=5, seed=0, lr=1e-2, variant="ffnn")
        model, report = train(model, panel, shares, tr, va, cfg)
        assert report.train_losses[-1] < report.train_losses[0]

    def test_report_csv(self, tmp_path):
        report = TrainReport(train_losses=[2.0, 1.0], valid_mapes=[30.0, 20.0],
                             selected_epoch=2)
        path = str(tmp_path / "report.csv")
        report.write_csv(path)
        text = open(path).read()
        assert "epoch,train_loss,valid_mape,selected" in text
        assert "2,1.0,20.0,1" in text


class TestSelectModel:
    def test_prefers_lowest_validation_mape(self, sim_setup, monkeypatch):
        panel, shares, tr, va = sim_setup
        scripted = {(): 30.0, (8,): 10.0, (16,): 20.0}

        def fake_train(model, panel, shares, tr, va, config, fit_norm=True):
            report = TrainReport(
                train_losses=[1.0],
                valid_mapes=[scripted[model.phi.architecture.hidden]],
                selected_epoch=1,
            )
            return model, report

        monkeypatch.setattr("concnn.trainer.train", fake_train)
        _, report, arch = select_model(
            [(), (8,), (16,)], panel, shares, tr, va,
            TrainConfig(epochs=1), horizon=1)
        assert arch.hidden == (8,)

    def test_zero_prediction_candidates_ranked_last(self, sim_setup, monkeypatch):
        panel, shares, tr, va = sim_setup

        def fake_train(model, panel, shares, tr, va, config, fit_norm=True):
            hidden = model.phi.architecture.hidden
            report = TrainReport(train_losses=[1.0], selected_epoch=1)
            if hidden == (8,):
                report.valid_mapes = [5.0]
                report.zero_prediction = True
            else:
                report.valid_mapes = [50.0]
            return model, report

        monkeypatch.setattr("concnn.trainer.train", fake_train)
        _, _, arch = select_model([(8,), (16,)], panel, shares, tr, va,
                                  TrainConfig(epochs=1), horizon=1)
        assert arch.hidden == (16,)

    def test_parameter_count_breaks_ties(self, sim_setup, monkeypatch):
        panel, shares, tr, va = sim_setup

        def fake_train(model, panel, shares, tr, va, config, fit_norm=True):
            return model, TrainReport(train_losses=[1.0], valid_mapes=[10.0],
                                      selected_epoch=1)

        monkeypatch.setattr("concnn.trainer.train", fake_train)
        _, _, arch = select_model([(16,), ()], panel, shares, tr, va,
                                  TrainConfig(epochs=1), horizon=1)
        assert arch.hidden == ()

    def test_empty_grid(self, sim_setup):
        panel, shares, tr, va = sim_setup
        with pytest.raises(ConfigError):
            select_model([], panel, shares, tr, va, TrainConfig(), horizon=1)

    def test_end_to_end_small_grid(self, sim_setup):
        panel, shares, tr, va = sim_setup
        cfg = TrainConfig(epochs=3, seed=0, lr=1e-2)
        model, report, arch = select_model([(), (8,)], panel, shares, tr, va,
                                           cfg, horizon=1)
        assert arch.hidden in ((), (8,))
        assert isinstance(model, ConcurrentModel)


class TestPretrainTransfer:
    def test_copies_parameters(self):
        src = DirectModel(phi=init_params(Architecture(2, (4,)), seed=1),
                          horizon=1)
        dst = ConcurrentModel(phi=init_params(Architecture(2, (4,)), seed=2),
                              alpha=1.0, horizon=1)
        dst, low = pretrain_transfer(src, dst)
        assert np.array_equal(dst.phi.parameters, src.phi.parameters)
        assert not low

    def test_copy_is_independent(self):
        src = DirectModel(phi=init_params(Architecture(2, (4,)), seed=1),
                          horizon=1)
        dst = ConcurrentModel(phi=init_params(Architecture(2, (4,)), seed=2),
                              alpha=1.0, horizon=1)
        dst, _ = pretrain_transfer(src, dst)
        dst.phi.parameters[0] += 1.0
        assert dst.phi.parameters[0] != src.phi.parameters[0]

    def test_architecture_mismatch(self):
        src = DirectModel(phi=init_params(Architecture(2, (4,)), seed=1),
                          horizon=1)
        dst = ConcurrentModel(phi=init_params(Architecture(2, (8,)), seed=2),
                              alpha=1.0, horizon=1)
        with pytest.raises(ArchitectureMismatch):
            pretrain_transfer(src, dst)

    def test_low_weight_flag(self):
        arch = Architecture(1, ())
        net = init_params(arch, seed=0)
        net.parameters[:] = [0.0, -20.0]  # softplus(-20) is about 2e-9
        src = DirectModel(phi=net, horizon=1)
        dst = ConcurrentModel(phi=init_params(arch, seed=1), alpha=1.0,
                              horizon=1)
        probe = np.zeros((5, 1))
        dst, low = pretrain_transfer(src, dst, probe_features=probe)
        assert low
        assert forward(dst.phi, np.zeros(1)) < 1e-6
