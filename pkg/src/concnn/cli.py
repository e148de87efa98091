"""Command-line entry point.

Subcommands: simulate, train, predict, evaluate, pdp, check-theory.  Runs
are driven by an INI configuration file; a few flags override config keys.
Every run echoes its fully resolved configuration into a manifest file so
it can be reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import data as data_mod
from . import simulator as sim_mod
from . import theory as theory_mod
from .baselines import BaselineModel, select_ma_window
from .concurrent import ConcurrentModel, DirectModel, default_alpha
from .data import ColumnSchema, ScalerMethod, SplitSpec
from .errors import ConfigError, DataError, NumericalError
from .evaluation import (
    partial_dependence,
    rolling_evaluate,
    write_mape_summary,
)
from .nnet import load_net, save_net
from .trainer import DEFAULT_GRID, TrainConfig, pretrain_transfer, select_model, train

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class CliParser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise ConfigError(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="concnn", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    for name in ("simulate", "train", "predict", "evaluate", "pdp", "check-theory"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--horizon", type=int, help="override horizon")
        p.add_argument("--variant", choices=["ffnn", "concurrent", "pretrained"])
        p.add_argument("--loss", choices=["l1", "poisson"])
        p.add_argument("--plot", action="store_true",
                       help="also render PNG figures next to the CSV outputs")
        if name in ("predict", "evaluate", "pdp"):
            p.add_argument("--model", help="trained model file (overrides config)")
        if name == "pdp":
            p.add_argument("--feature", help="feature to sweep (overrides config)")
    return parser


def load_config(path: str) -> configparser.ConfigParser:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = configparser.ConfigParser()
    cfg.read(path)
    return cfg


def apply_overrides(cfg: configparser.ConfigParser, args) -> None:
    def setv(section, key, value):
        if value is None:
            return
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key, str(value))

    setv("run", "out", args.out)
    setv("run", "seed", args.seed)
    setv("model", "horizon", args.horizon)
    setv("model", "variant", args.variant)
    setv("model", "loss", args.loss)
    if getattr(args, "model", None):
        setv("model", "file", args.model)
    if getattr(args, "feature", None):
        setv("pdp", "feature", args.feature)


def write_manifest(cfg: configparser.ConfigParser, out_dir: str, command: str) -> None:
    if not cfg.has_section("run"):
        cfg.add_section("run")
    cfg.set("run", "command", command)
    with open(os.path.join(out_dir, "manifest.ini"), "w", encoding="utf-8") as fh:
        cfg.write(fh)


def out_dir_of(cfg) -> str:
    out = cfg.get("run", "out", fallback="out")
    os.makedirs(out, exist_ok=True)
    return out


def seed_of(cfg) -> int:
    raw = cfg.get("run", "seed", fallback="0")
    if raw == "random":
        seed = int(np.random.SeedSequence().entropy % (2**31))
        cfg.set("run", "seed", str(seed))  # logged in the manifest
        return seed
    return int(raw)


# -- data loading helpers ----------------------------------------------------

def load_panel_from_cfg(cfg):
    csv_path = cfg.get("data", "csv", fallback=None)
    if csv_path is None:
        raise ConfigError("config needs [data] csv = <path>")
    covs = tuple(c.strip() for c in cfg.get("data", "covariates", fallback="").split(",")
                 if c.strip())
    oracle_col = cfg.get("data", "oracle_column", fallback=None)
    schema = ColumnSchema(covariates=covs, s_oracle=oracle_col)
    return data_mod.load_panel(csv_path, schema)


def scaler_from_cfg(cfg, panel):
    method = cfg.get("data", "scaler", fallback="trailing_moving_average")
    window = cfg.getint("data", "window", fallback=8)
    try:
        method = ScalerMethod(method)
    except ValueError:
        raise ConfigError(f"unknown scaler method {method!r}") from None
    return data_mod.compute_scaler(panel, method, window=window)


def split_from_cfg(cfg, panel):
    if not cfg.has_section("split"):
        # default: last 26 weeks test, the 26 before that validation
        test_end = panel.n
        valid_end = max(2, test_end - 26)
        train_end = max(1, valid_end - 26)
    else:
        train_end = cfg.getint("split", "train_end")
        valid_end = cfg.getint("split", "valid_end")
        test_end = cfg.getint("split", "test_end")
    spec = SplitSpec(train_end, valid_end, test_end)
    return data_mod.split(panel, spec)


def model_params_from_cfg(cfg, seed):
    horizon = cfg.getint("model", "horizon", fallback=4)
    lag = cfg.getint("model", "lag", fallback=1)
    alpha_raw = cfg.get("model", "alpha", fallback="auto")
    alpha = default_alpha(horizon) if alpha_raw == "auto" else float(alpha_raw)
    variant = cfg.get("model", "variant", fallback="concurrent")
    loss = cfg.get("model", "loss", fallback="poisson")
    grid_raw = cfg.get("model", "grid", fallback=None)
    if grid_raw is None:
        grid = DEFAULT_GRID
    else:
        grid = tuple(
            tuple(int(w) for w in part.split(",") if w.strip())
            for part in grid_raw.split(";")
        )
    config = TrainConfig(
        loss=loss,
        variant=variant,
        optimizer=cfg.get("train", "optimizer", fallback="adam"),
        lr=cfg.getfloat("train", "lr", fallback=1e-3),
        epochs=cfg.getint("train", "epochs", fallback=50),
        seed=seed,
        patience=cfg.getint("train", "patience", fallback=10),
    )
    return horizon, lag, alpha, grid, config


# -- simulate ----------------------------------------------------------------

def parse_phi_spec(raw: str):
    kind, _, rest = raw.partition(":")
    if kind == "constant":
        return sim_mod.constant_weight(float(rest))
    if kind == "linear":
        slope, intercept = (rest.split(";") + ["1.0"])[:2]
        return sim_mod.linear_weight(float(slope), float(intercept))
    if kind == "softplus":
        parts = rest.split(";")
        if len(parts) != 3:
            raise ConfigError("softplus phi spec is x_coef;c1,c2,...;bias")
        x_coef = float(parts[0])
        coefs = [float(c) for c in parts[1].split(",") if c.strip()]
        return sim_mod.softplus_weight(x_coef, coefs, float(parts[2]))
    raise ConfigError(f"unknown phi spec {raw!r}")


def parse_covariate_spec(raw: str):
    kind, _, rest = raw.partition(":")
    if kind == "constant":
        return sim_mod.ConstantCovariates(tuple(float(v) for v in rest.split(",")))
    if kind == "iid_uniform":
        lo, hi, p = rest.split(";")
        return sim_mod.IidUniformCovariates(float(lo), float(hi), int(p))
    if kind == "random_walk":
        step, p = rest.split(";")
        return sim_mod.RandomWalkCovariates(float(step), int(p))
    raise ConfigError(f"unknown covariate spec {raw!r}")


def cmd_simulate(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    d = cfg.getint("simulate", "d")
    n = cfg.getint("simulate", "n")
    phi = parse_phi_spec(cfg.get("simulate", "phi"))
    cov = parse_covariate_spec(cfg.get("simulate", "covariates",
                                       fallback="constant:0.0"))
    s_value = cfg.getfloat("simulate", "scaler_value")
    scaler = data_mod.Scaler(values=np.full(n, s_value),
                             method=ScalerMethod.ORACLE)
    init_raw = cfg.get("simulate", "init", fallback="zeros")
    if init_raw == "zeros":
        init = sim_mod.Zeros()
    elif init_raw.startswith("poisson:"):
        init = sim_mod.PoissonAt(float(init_raw.split(":", 1)[1]))
    else:
        raise ConfigError(f"unknown init spec {init_raw!r}")

    spec = sim_mod.GenerativeSpec(phi=phi, scaler=scaler, covariates=cov,
                                  d=d, n=n, init=init, seed=seed)
    sim = sim_mod.simulate(spec)
    data_mod.write_panel_csv(sim.panel, os.path.join(out, "panel.csv"))

    import csv
    with open(os.path.join(out, "truth.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product_id", "week", "lambda", "weight"])
        for i, pid in enumerate(sim.panel.product_ids):
            for t in range(n):
                writer.writerow([pid, t, repr(float(sim.lambdas[i, t])),
                                 repr(float(sim.weights[i, t]))])
    write_manifest(cfg, out, "simulate")
    print(f"wrote panel.csv and truth.csv to {out}")
    return 0


# -- train -------------------------------------------------------------------

def cmd_train(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    panel = load_panel_from_cfg(cfg)
    scaler = scaler_from_cfg(cfg, panel)
    shares = data_mod.market_shares(panel, scaler)
    train_view, valid_view, _ = split_from_cfg(cfg, panel)
    horizon, lag, alpha, grid, config = model_params_from_cfg(cfg, seed)

    if config.variant == "pretrained":
        ff_config = TrainConfig(loss="l1", variant="ffnn", optimizer=config.optimizer,
                                lr=config.lr, epochs=config.epochs, seed=seed,
                                patience=config.patience)
        ff_model, _, arch = select_model(grid, panel, shares, train_view, valid_view,
                                         ff_config, horizon, alpha, lag)
        from .nnet import init_params
        target = ConcurrentModel(phi=init_params(arch, seed), alpha=alpha,
                                 horizon=horizon, lag_count=lag)
        target, low_flag = pretrain_transfer(ff_model, target)
        if low_flag:
            print("warning: pretrained weights near zero", file=sys.stderr)
        model, report = train(target, panel, shares, train_view, valid_view,
                              config, fit_norm=False)
    else:
        model, report, _ = select_model(grid, panel, shares, train_view, valid_view,
                                        config, horizon, alpha, lag)

    save_net(model.phi, os.path.join(out, "model.json"))
    report.write_csv(os.path.join(out, "train_report.csv"))
    if args.plot:
        from .report import plot_train_report
        plot_train_report(report, os.path.join(out, "train_report.png"))
    write_manifest(cfg, out, "train")
    print(f"trained {config.variant} model; best validation MAPE "
          f"{min(report.valid_mapes):.2f} at epoch {report.selected_epoch}")
    return 0


def _load_model(cfg, horizon, lag, alpha):
    model_path = cfg.get("model", "file", fallback=None)
    if model_path is None:
        raise ConfigError("need a trained model: [model] file = <path> or --model")
    net = load_net(model_path)
    variant = cfg.get("model", "variant", fallback="concurrent")
    if variant == "ffnn":
        return DirectModel(phi=net, horizon=horizon, lag_count=lag)
    return ConcurrentModel(phi=net, alpha=alpha, horizon=horizon, lag_count=lag)


def cmd_predict(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    panel = load_panel_from_cfg(cfg)
    scaler = scaler_from_cfg(cfg, panel)
    shares = data_mod.market_shares(panel, scaler)
    _, _, test_view = split_from_cfg(cfg, panel)
    horizon, lag, alpha, _, _ = model_params_from_cfg(cfg, seed)
    model = _load_model(cfg, horizon, lag, alpha)
    report = rolling_evaluate(model, panel, shares, test_view, horizon, lag,
                              model_name=cfg.get("model", "variant",
                                                 fallback="concurrent"))
    report.write_predictions_csv(os.path.join(out, "predictions.csv"))
    write_manifest(cfg, out, "predict")
    print(f"test MAPE {report.mape:.2f}")
    return 0


def cmd_evaluate(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    panel = load_panel_from_cfg(cfg)
    scaler = scaler_from_cfg(cfg, panel)
    shares = data_mod.market_shares(panel, scaler)
    train_view, valid_view, test_view = split_from_cfg(cfg, panel)
    horizon, lag, alpha, _, _ = model_params_from_cfg(cfg, seed)

    models = []
    lv = BaselineModel("last_value", horizon).fit(shares, panel.available)
    models.append(("LV", lv))
    window = select_ma_window(shares, panel.available, horizon,
                              valid_view.week_indices)
    ma = BaselineModel("moving_average", horizon, window).fit(shares, panel.available)
    models.append((f"MA{window}", ma))
    if cfg.get("model", "file", fallback=None):
        models.append((cfg.get("model", "variant", fallback="concurrent"),
                       _load_model(cfg, horizon, lag, alpha)))

    summary = []
    for name, model in models:
        report = rolling_evaluate(model, panel, shares, test_view, horizon, lag,
                                  model_name=name)
        report.write_predictions_csv(os.path.join(out, f"predictions_{name}.csv"))
        summary.append((name, horizon, report.mape, report.zero_prediction))
        if args.plot:
            from .report import plot_predictions
            plot_predictions(report, os.path.join(out, f"predictions_{name}.png"))
        print(f"{name}: MAPE {report.mape:.2f}")
    write_mape_summary(os.path.join(out, "mape_summary.csv"), summary)
    write_manifest(cfg, out, "evaluate")
    return 0


def cmd_pdp(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    panel = load_panel_from_cfg(cfg)
    scaler = scaler_from_cfg(cfg, panel)
    shares = data_mod.market_shares(panel, scaler)
    train_view, _, test_view = split_from_cfg(cfg, panel)
    horizon, lag, alpha, _, _ = model_params_from_cfg(cfg, seed)
    model = _load_model(cfg, horizon, lag, alpha)
    feature = cfg.get("pdp", "feature", fallback=None)
    if feature is None:
        raise ConfigError("need [pdp] feature = <name> or --feature")
    bins = cfg.getint("pdp", "bins", fallback=100)
    curve = partial_dependence(model, panel, shares, train_view, test_view,
                               feature, bins=bins)
    curve.write_csv(os.path.join(out, f"pdp_{feature}.csv"))
    if args.plot:
        from .report import plot_pdp
        plot_pdp(curve, os.path.join(out, f"pdp_{feature}.png"))
    write_manifest(cfg, out, "pdp")
    if curve.degenerate:
        print(f"warning: fewer distinct values than bins for {feature}",
              file=sys.stderr)
    print(f"wrote pdp_{feature}.csv ({len(curve.bin_values)} bins)")
    return 0


def cmd_check_theory(cfg, args) -> int:
    out = out_dir_of(cfg)
    seed = seed_of(cfg)
    n = cfg.getint("theory", "n", fallback=100)
    delta = cfg.getfloat("theory", "delta", fallback=0.05)
    d = cfg.getint("theory", "d", fallback=10)
    s_value = cfg.getfloat("theory", "scaler_value", fallback=100.0)
    phi = parse_phi_spec(cfg.get("theory", "phi", fallback="linear:0.2;1.0"))
    scaler = data_mod.Scaler(values=np.full(max(n, 2), s_value),
                             method=ScalerMethod.ORACLE)

    contraction = theory_mod.contraction_check(phi, scaler)
    m, v = theory_mod.bernstein_constants(d, scaler)
    rho = min(contraction.rho, 0.999999)
    bound = theory_mod.theorem_bound(n, delta, contraction.tau, rho, m, v, v)
    moment_rows = []
    for lam in (0.5, 1.0, 5.0):
        moment_rows.extend(theory_mod.poisson_moment_check(lam, k_max=6, seed=seed))

    replicas = cfg.getint("theory", "replicas", fallback=2000)
    cov = sim_mod.ConstantCovariates((0.0,))
    spec = sim_mod.GenerativeSpec(phi=phi, scaler=scaler, covariates=cov,
                                  d=d, n=max(n, 2), seed=seed)
    rng = np.random.default_rng(seed)
    pairs = [(rng.integers(0, 20, d).astype(float),
              rng.integers(0, 20, d).astype(float)) for _ in range(3)]
    pairs = [(a, b) for a, b in pairs if np.abs(a - b).sum() > 0]
    emp = theory_mod.empirical_contraction(spec, pairs, replicas=max(replicas, 100))

    report = theory_mod.TheoryReport(
        tau=contraction.tau, tau_s=contraction.tau_s, rho=contraction.rho,
        contraction_pass=contraction.passed, m=m, v=v,
        k_geom=theory_mod.geometric_sum(n - 1, rho),
        bound_value=bound, n=n, delta=delta, moment_rows=moment_rows,
        empirical_ratio=emp.max_ratio, mc_sigma=emp.mc_sigma,
    )
    with open(os.path.join(out, "theory_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    report.write_moments_csv(os.path.join(out, "moment_margins.csv"))
    write_manifest(cfg, out, "check-theory")
    print(report.to_text())
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "pdp": cmd_pdp,
    "check-theory": cmd_check_theory,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: missing subcommand", file=sys.stderr)
            return EXIT_CONFIG
        cfg = load_config(args.config)
        apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
