"""
Command-line front end.

Usage::

    geofield SUBCOMMAND [--config PATH] [--set KEY=VALUE ...] [--seed N]
                        [--out DIR] [--force-dense]

Each subcommand reads a ``key=value`` configuration (unknown keys are
rejected), writes its artifacts into ``--out`` and prints a summary of
``key=value`` lines on stdout. Errors go to stderr as one line
``error[<subcommand>.<kind>]: <message>`` with a nonzero exit status.

Keys named ``time_*_s`` report wall-clock timings; every other summary
line and every output file depends only on the inputs, the configuration
and the seed.
"""

import argparse
import os
import sys
import time
import warnings
import zlib

import numpy as np

from . import compositional, estimate, field, gmrf, io, lowrank, sptemporal
from .covmodel import CovarianceModel, TaperSpec
from .errors import DomainError, EstimationError, GeofieldError, NumericalError, ParseError

N_DENSE_MAX = 3000

EXIT_CODES = {
    "config": 2,
    "parse": 3,
    "domain": 4,
    "numerical": 5,
    "estimation": 6,
    "guard": 7,
    "io": 8,
}

REQUIRED = object()


class ConfigError(GeofieldError):
    pass


class GuardError(GeofieldError):
    pass


# ---------------------------------------------------------------------------
# configuration schema


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _optional_int(text):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


MODEL = {
    "family": (str, "exponential"),
    "sigma2": (float, 1.0),
    "rho": (float, 1.0),
    "nu": (float, 0.5),
    "nugget": (float, 0.0),
}
GRID = {
    "n_rows": (int, REQUIRED),
    "n_cols": (int, REQUIRED),
    "cellsize": (float, 1.0),
    "xllcorner": (float, 0.0),
    "yllcorner": (float, 0.0),
}
POINTS = {
    "input": (str, REQUIRED),
    "value_column": (str, "value"),
}
SEED = {"seed": (int, 0)}
GUARD = {"n_dense_max": (int, N_DENSE_MAX)}
TREND = {"trend": (str, "constant")}

SCHEMAS = {
    "simulate": {
        **MODEL, **GRID, **SEED, **GUARD,
        "method": (str, "dense"),
        "alpha": (int, 2),
        "kappa": (_optional_float, None),
        "mean": (float, 0.0),
        "n_obs": (int, 0),
        "sigma_eps2": (float, 0.0),
    },
    "variogram": {
        **POINTS, **SEED,
        "family": (str, "exponential"),
        "nu": (float, 0.5),
        "n_bins": (int, 15),
        "max_lag": (_optional_float, None),
        "fit_nugget": (_bool, False),
        "weighted": (_bool, False),
    },
    "fit": {
        **POINTS, **SEED, **GUARD, **TREND,
        "family": (str, "exponential"),
        "nu": (float, 0.5),
        "criterion": (str, "reml"),
        "covariates": (_names, ()),
        "fit_nugget": (_bool, False),
    },
    "krige": {**POINTS, **MODEL, **GRID, **SEED, **GUARD, **TREND, "sigma_eps2": (float, 0.0)},
    "lowrank-krige": {
        **POINTS, **MODEL, **GRID, **SEED, **TREND,
        "sigma_eps2": (float, 0.0),
        "knots_per_side": (int, 10),
    },
    "taper-krige": {
        **POINTS, **MODEL, **GRID, **SEED, **TREND,
        "sigma_eps2": (float, 0.0),
        "taper": (str, "wendland1"),
        "theta": (float, REQUIRED),
    },
    "spde-krige": {
        **POINTS, **GRID, **SEED, **TREND,
        "alpha": (int, 2),
        "kappa": (float, REQUIRED),
        "sigma2": (float, 1.0),
        "tau": (_optional_float, None),
        "pad": (_optional_int, None),
        "sigma_eps2": (float, 0.0),
    },
    "clr": {
        "input": (str, REQUIRED), **SEED,
        "components": (_names, ()),
        "zero_eps": (float, compositional.ZERO_REPLACEMENT),
    },
    "comp-fit": {
        "input": (str, REQUIRED), **SEED,
        "covariates": (_names, ()),
        "components": (_names, ()),
        "zero_eps": (float, compositional.ZERO_REPLACEMENT),
    },
    "st-filter": {
        **SEED,
        "input": (str, ""),
        "n_state": (int, 1),
        "d": (float, 0.8),
        "sigma_nu2": (float, 1.0),
        "sigma_eps2": (float, 1.0),
        "T": (int, 50),
    },
    "bench": {
        **SEED, **GUARD,
        "n_rows": (int, 100),
        "n_cols": (int, 100),
        "cellsize": (float, 1.0),
        "alpha": (int, 2),
        "kappa": (float, 0.2),
        "sigma2": (float, 1.0),
        "n_obs": (int, 500),
        "sigma_eps2": (float, 0.1),
    },
}

SUBCOMMANDS = tuple(SCHEMAS)

HELP = {
    "simulate": "simulate a Gaussian field on a grid (dense or SPDE) and sample points",
    "variogram": "empirical semi-variogram and least-squares model fit",
    "fit": "ML or REML covariance fit with GLS trend",
    "krige": "dense universal kriging onto a grid",
    "lowrank-krige": "predictive-process low-rank kriging onto a grid",
    "taper-krige": "kriging with a tapered sparse covariance",
    "spde-krige": "SPDE/GMRF conditional mean and variance on a grid",
    "clr": "centred log-ratio transform of a composition table",
    "comp-fit": "per-component regression of clr-transformed compositions",
    "st-filter": "Kalman filter for the autoregressive state-space model",
    "bench": "sparse versus dense timing on a GMRF grid",
}


def resolve_config(sub, raw):
    """Typed configuration for ``sub`` from a dict of strings."""
    schema = SCHEMAS[sub]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {sub}: {', '.join(unknown)}")
    cfg = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r} for {sub}")
        else:
            cfg[key] = default
    return cfg


def rng_stream(seed, name):
    """Independent counter-based generator for a named stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# helpers


class Summary:
    def __init__(self):
        self.items = []

    def __setitem__(self, key, value):
        self.items.append((key, value))

    def lines(self):
        out = []
        for k, v in self.items:
            if isinstance(v, (bool, np.bool_)):
                s = "true" if v else "false"
            elif isinstance(v, (int, np.integer)):
                s = str(int(v))
            elif isinstance(v, (float, np.floating)):
                s = io.fmt(v)
            else:
                s = str(v)
            out.append(f"{k}={s}")
        return out


def _grid(cfg, pad=0):
    return gmrf.GridSpec(cfg["n_rows"], cfg["n_cols"], cfg["cellsize"], pad, cfg["xllcorner"], cfg["yllcorner"])


def _model(cfg):
    return CovarianceModel(cfg["family"], cfg["sigma2"], cfg["rho"], cfg["nu"], cfg["nugget"])


def _trend(kind, locs, extra=None):
    kind = kind.lower()
    n = locs.shape[0]
    if kind == "none":
        cols, names = [], []
    elif kind == "constant":
        cols, names = [np.ones(n)], ["intercept"]
    elif kind == "linear":
        cols, names = [np.ones(n), locs[:, 0], locs[:, 1]], ["intercept", "x", "y"]
    else:
        raise ConfigError(f"trend must be none, constant or linear, got {kind!r}")
    if extra is not None:
        for name, col in extra:
            cols.append(col)
            names.append(name)
    B = np.column_stack(cols) if cols else np.zeros((n, 0))
    return B, names


def _points(cfg):
    table = io.load_points(cfg["input"], value_columns=(cfg["value_column"],))
    return table, table.values[:, 0]


def _guard(n, cfg, force, what):
    if n > cfg["n_dense_max"] and not force:
        raise GuardError(
            f"{what} needs a dense {n}x{n} factorization above n_dense_max={cfg['n_dense_max']}; "
            "pass --force-dense to override"
        )


def _write_grids(out, grid, **fields):
    for name, values in fields.items():
        io.write_ascii_grid(values, grid, os.path.join(out, f"{name}.asc"))


def _report_beta(summary, names, beta):
    for name, b in zip(names, beta):
        summary[f"beta_{name}"] = float(b)


def _report_field(summary, prefix, v):
    summary[f"{prefix}_min"] = float(np.min(v))
    summary[f"{prefix}_max"] = float(np.max(v))
    summary[f"{prefix}_mean"] = float(np.mean(v))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args, summary):
    grid = _grid(cfg)
    coords = grid.coordinates()
    rng = rng_stream(cfg["seed"], "simulate.field")
    method = cfg["method"].lower()
    t0 = time.perf_counter()
    if method == "dense":
        _guard(grid.size, cfg, args.force_dense, "dense simulation")
        fm = field.GaussianFieldModel(coords, _model(cfg))
        values = field.simulate(fm, seed=rng)
    elif method == "spde":
        kappa = cfg["kappa"] if cfg["kappa"] is not None else 1.0 / cfg["rho"]
        g = gmrf.GridSpec(grid.n_rows, grid.n_cols, grid.h, None)
        tau = gmrf.calibrate_tau(cfg["sigma2"], cfg["alpha"], kappa, g)
        prec = gmrf.precision(gmrf.SpdeParams(cfg["alpha"], kappa, tau), g)
        values = gmrf.sample(prec, seed=rng)
        summary["tau"] = tau
    else:
        raise ConfigError(f"method must be dense or spde, got {cfg['method']!r}")
    values = values + cfg["mean"]
    summary["time_simulate_s"] = time.perf_counter() - t0
    _write_grids(args.out, grid, field=values)
    summary["method"] = method
    summary["n_nodes"] = grid.size
    _report_field(summary, "field", values)
    n_obs = cfg["n_obs"]
    if n_obs:
        if not 0 < n_obs <= grid.size:
            raise DomainError(f"n_obs must be in [1, {grid.size}]")
        orng = rng_stream(cfg["seed"], "simulate.obs")
        idx = np.sort(orng.choice(grid.size, size=n_obs, replace=False))
        y = values[idx] + np.sqrt(cfg["sigma_eps2"]) * orng.standard_normal(n_obs)
        ids = [f"p{i}" for i in range(n_obs)]
        io.write_table(
            os.path.join(args.out, "points.csv"),
            ("id", "x", "y", "value"),
            (coords[idx, 0], coords[idx, 1], y),
            ids=ids,
        )
        summary["n_obs"] = n_obs


def cmd_variogram(cfg, args, summary):
    table, y = _points(cfg)
    obs = field.ObservationSet(table.locs, y)
    ev = estimate.empirical_variogram(obs, n_bins=cfg["n_bins"], max_lag=cfg["max_lag"])
    io.write_table(
        os.path.join(args.out, "variogram.csv"),
        ("bin_lower", "bin_upper", "bin_center", "gamma", "pair_count"),
        (ev.bin_edges[:-1], ev.bin_edges[1:], ev.bin_centers, ev.gamma_hat, ev.pair_count),
    )
    model = estimate.fit_variogram_ls(
        ev,
        cfg["family"],
        nu=cfg["nu"],
        fit_nugget=cfg["fit_nugget"],
        weighted=cfg["weighted"],
        seed=rng_stream(cfg["seed"], "variogram.starts"),
    )
    summary["n_obs"] = obs.n
    summary["n_pairs"] = int(ev.pair_count.sum())
    summary["family"] = model.family
    summary["sigma2"] = model.sigma2
    summary["rho"] = model.rho
    summary["nu"] = model.nu
    summary["nugget"] = model.nugget


def cmd_fit(cfg, args, summary):
    covs = cfg["covariates"]
    table = io.load_points(cfg["input"], value_columns=(cfg["value_column"],), covariate_columns=covs)
    y = table.values[:, 0]
    _guard(table.n, cfg, args.force_dense, "likelihood fitting")
    B, names = _trend(cfg["trend"], table.locs, [(c, table.column(c)) for c in covs])
    obs = field.ObservationSet(table.locs, y, B)
    ev = estimate.empirical_variogram(obs.with_values(estimate.ols_residuals(y, B)) if B.shape[1] else obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", estimate.DegenerateFitWarning)
        init = estimate.fit_variogram_ls(ev, cfg["family"], nu=cfg["nu"], fit_nugget=cfg["fit_nugget"])
    if cfg["fit_nugget"] and init.nugget <= 0:
        init = init.replace(nugget=0.05 * init.sigma2)
    free = ["sigma2", "rho"] + (["nugget"] if cfg["fit_nugget"] else [])
    t0 = time.perf_counter()
    res = estimate.fit(
        obs,
        criterion=cfg["criterion"],
        init=init,
        free=free,
        seed=rng_stream(cfg["seed"], "fit.starts"),
    )
    summary["time_fit_s"] = time.perf_counter() - t0
    aic, bic = estimate.aic_bic(res.value, res.n_params, obs.n)
    summary["n_obs"] = obs.n
    summary["family"] = res.model.family
    summary["criterion"] = res.criterion
    summary["sigma2"] = res.model.sigma2
    summary["rho"] = res.model.rho
    summary["nu"] = res.model.nu
    summary["nugget"] = res.model.nugget
    _report_beta(summary, names, res.beta_hat)
    summary["loglik"] = res.value
    summary["aic"] = aic
    summary["bic"] = bic
    summary["converged"] = res.converged


def _kriging_inputs(cfg):
    table, y = _points(cfg)
    grid = _grid(cfg)
    coords = grid.coordinates()
    By, names = _trend(cfg["trend"], table.locs)
    Bx, _ = _trend(cfg["trend"], coords)
    return table, y, grid, coords, Bx, By, names


def cmd_krige(cfg, args, summary):
    table, y, grid, coords, Bx, By, names = _kriging_inputs(cfg)
    _guard(table.n, cfg, args.force_dense, "dense kriging")
    fm = field.GaussianFieldModel(coords, _model(cfg), Bx)
    obs = field.ObservationSet(table.locs, y, By, cfg["sigma_eps2"])
    t0 = time.perf_counter()
    res = field.krige(fm, obs)
    summary["time_krige_s"] = time.perf_counter() - t0
    _write_grids(args.out, grid, mean=res.mean, variance=res.variance)
    summary["n_obs"] = obs.n
    summary["n_pred"] = fm.n
    _report_beta(summary, names, res.beta_hat)
    _report_field(summary, "mean", res.mean)
    _report_field(summary, "variance", res.variance)


def cmd_lowrank_krige(cfg, args, summary):
    table, y, grid, coords, Bx, By, names = _kriging_inputs(cfg)
    model = _model(cfg)
    knots = lowrank.regular_centers(np.vstack([table.locs, coords]), cfg["knots_per_side"])
    s2 = cfg["sigma_eps2"] + model.nugget
    t0 = time.perf_counter()
    lr = lowrank.predictive_process(model, knots, coords, table.locs, sigma_eps2=s2)
    if By.shape[1]:
        beta, *_ = np.linalg.lstsq(By, y, rcond=None)
    else:
        beta = np.zeros(0)
    mean, var = lowrank.lowrank_krige(lr, y - By @ beta, return_variance=True)
    mean = mean + Bx @ beta
    summary["time_lowrank_s"] = time.perf_counter() - t0
    _write_grids(args.out, grid, mean=mean, variance=var)
    summary["n_obs"] = table.n
    summary["n_pred"] = coords.shape[0]
    summary["rank"] = lr.rank
    _report_beta(summary, names, beta)
    _report_field(summary, "mean", mean)
    _report_field(summary, "variance", var)


def cmd_taper_krige(cfg, args, summary):
    table, y, grid, coords, Bx, By, names = _kriging_inputs(cfg)
    spec = TaperSpec(cfg["taper"], cfg["theta"])
    fm = field.GaussianFieldModel(coords, _model(cfg), Bx)
    obs = field.ObservationSet(table.locs, y, By, cfg["sigma_eps2"])
    t0 = time.perf_counter()
    res = field.taper_krige(fm, obs, spec)
    summary["time_krige_s"] = time.perf_counter() - t0
    _write_grids(args.out, grid, mean=res.mean, variance=res.variance)
    summary["n_obs"] = obs.n
    summary["n_pred"] = fm.n
    summary["taper"] = spec.kind
    summary["theta"] = spec.theta
    _report_beta(summary, names, res.beta_hat)
    _report_field(summary, "mean", res.mean)
    _report_field(summary, "variance", res.variance)


def cmd_spde_krige(cfg, args, summary):
    table, y = _points(cfg)
    base = _grid(cfg)
    grid = base.with_pad(cfg["pad"])
    coords = base.coordinates()
    Bx, names = _trend(cfg["trend"], coords)
    nodes = base.nearest_node(table.locs)
    t0 = time.perf_counter()
    tau = cfg["tau"]
    if tau is None:
        tau = gmrf.calibrate_tau(cfg["sigma2"], cfg["alpha"], cfg["kappa"], grid)
    prec = gmrf.precision(gmrf.SpdeParams(cfg["alpha"], cfg["kappa"], tau), grid)
    res = gmrf.gmrf_conditional(prec, nodes, y, cfg["sigma_eps2"], B=Bx if Bx.shape[1] else None)
    summary["time_spde_s"] = time.perf_counter() - t0
    _write_grids(args.out, base, mean=res.mean, variance=res.variance)
    summary["n_obs"] = table.n
    summary["n_nodes"] = base.size
    summary["pad"] = prec.grid.pad
    summary["tau"] = tau
    summary["nnz_Q"] = int(prec.Q.nnz)
    _report_beta(summary, names, res.beta_hat)
    _report_field(summary, "mean", res.mean)
    _report_field(summary, "variance", res.variance)


def cmd_clr(cfg, args, summary):
    table = io.load_points(cfg["input"], value_columns=cfg["components"] or None, composition=True)
    y = compositional.replace_zeros(table.values, eps=cfg["zero_eps"])
    n_zero = int(np.sum(table.values <= 0))
    u = compositional.clr(y)
    io.write_table(
        os.path.join(args.out, "clr.csv"),
        ("id", "x", "y") + tuple(f"clr_{c}" for c in table.value_names),
        [table.locs[:, 0], table.locs[:, 1]] + [u[:, j] for j in range(u.shape[1])],
        ids=table.ids,
    )
    summary["n_sites"] = table.n
    summary["k"] = u.shape[1]
    summary["n_zero_replaced"] = n_zero
    summary["max_abs_clr_rowsum"] = float(np.abs(u.sum(axis=1)).max())


def cmd_comp_fit(cfg, args, summary):
    covs = cfg["covariates"]
    comps = cfg["components"]
    if not comps:
        raw = io.load_points(cfg["input"], covariate_columns=covs)
        comps = raw.value_names
    table = io.load_points(cfg["input"], value_columns=comps, covariate_columns=covs, composition=True)
    y = compositional.replace_zeros(table.values, eps=cfg["zero_eps"])
    B = np.column_stack([np.ones(table.n)] + [table.column(c) for c in covs])
    fit = compositional.fit_composition_regression(compositional.clr(y), B)
    io.write_table(
        os.path.join(args.out, "fitted.csv"),
        ("id", "x", "y") + tuple(comps),
        [table.locs[:, 0], table.locs[:, 1]] + [fit.proportions[:, j] for j in range(len(comps))],
        ids=table.ids,
    )
    summary["n_sites"] = table.n
    summary["k"] = len(comps)
    for i, cov in enumerate(("intercept",) + tuple(covs)):
        for j, comp in enumerate(comps):
            summary[f"coef_{cov}_{comp}"] = float(fit.coef[i, j])
    for j, comp in enumerate(comps):
        summary[f"resid_var_{comp}"] = float(fit.residual_variance[j])
    summary["max_abs_prop_rowsum_err"] = float(np.abs(fit.proportions.sum(axis=1) - 1.0).max())


def cmd_st_filter(cfg, args, summary):
    n = cfg["n_state"]
    model = sptemporal.DynamicsModel.scalar(cfg["d"], cfg["sigma_nu2"], cfg["sigma_eps2"], n=n)
    if cfg["input"]:
        t, Y, names = io.load_series(cfg["input"])
        if Y.shape[1] != n:
            raise DomainError(f"input has {Y.shape[1]} series but n_state={n}")
    else:
        _, Y = sptemporal.simulate_dynamics(model, cfg["T"], seed=rng_stream(cfg["seed"], "st.simulate"))
        t = np.arange(Y.shape[0], dtype=float)
        io.write_table(
            os.path.join(args.out, "observations.csv"),
            ("t",) + tuple(f"y{i}" for i in range(n)),
            [t] + [Y[:, i] for i in range(n)],
        )
    res = sptemporal.kalman_filter(model, Y)
    var = np.diagonal(res.cov, axis1=1, axis2=2)
    io.write_table(
        os.path.join(args.out, "filtered.csv"),
        ("t",) + tuple(f"mean{i}" for i in range(n)) + tuple(f"var{i}" for i in range(n)),
        [t] + [res.mean[:, i] for i in range(n)] + [var[:, i] for i in range(n)],
    )
    summary["T"] = Y.shape[0]
    summary["n_state"] = n
    summary["spectral_radius"] = model.spectral_radius
    summary["stable"] = model.stable
    summary["loglik"] = res.loglik
    summary["final_var_mean"] = float(var[-1].mean())


def cmd_bench(cfg, args, summary):
    grid = gmrf.GridSpec(cfg["n_rows"], cfg["n_cols"], cfg["cellsize"], None)
    N = grid.size
    rng = rng_stream(cfg["seed"], "bench.data")
    t0 = time.perf_counter()
    tau = gmrf.calibrate_tau(cfg["sigma2"], cfg["alpha"], cfg["kappa"], grid)
    prec = gmrf.precision(gmrf.SpdeParams(cfg["alpha"], cfg["kappa"], tau), grid)
    t_build = time.perf_counter() - t0
    x = gmrf.sample(prec, seed=rng)
    n_obs = min(cfg["n_obs"], N)
    nodes = np.sort(rng.choice(N, size=n_obs, replace=False))
    y = x[nodes] + np.sqrt(cfg["sigma_eps2"]) * rng.standard_normal(n_obs)
    t0 = time.perf_counter()
    res = gmrf.gmrf_conditional(prec, nodes, y, cfg["sigma_eps2"])
    t_sparse = time.perf_counter() - t0
    summary["n_nodes"] = N
    summary["n_nodes_padded"] = prec.n
    summary["nnz_Q"] = int(prec.Q.nnz)
    summary["sparse_Q_bytes"] = int(prec.Q.data.nbytes + prec.Q.indices.nbytes + prec.Q.indptr.nbytes)
    summary["dense_Q_bytes"] = int(prec.n) ** 2 * 8
    summary["n_dense_max"] = cfg["n_dense_max"]
    summary["time_build_s"] = t_build
    summary["time_sparse_s"] = t_sparse
    summary["sparse_rmse"] = float(np.sqrt(np.mean((res.mean - x) ** 2)))
    if prec.n > cfg["n_dense_max"] and not args.force_dense:
        summary["dense_path"] = "refused"
        return
    t0 = time.perf_counter()
    Sigma = np.linalg.inv(prec.toarray())
    S = Sigma[np.ix_(prec.interior, prec.interior)]
    kr = field.krige_matrices(
        np.diag(S), S[:, nodes], S[np.ix_(nodes, nodes)] + cfg["sigma_eps2"] * np.eye(n_obs), y
    )
    summary["time_dense_s"] = time.perf_counter() - t0
    summary["dense_path"] = "ran"
    summary["max_abs_mean_diff"] = float(np.abs(kr.mean - res.mean).max())


COMMANDS = {
    "simulate": cmd_simulate,
    "variogram": cmd_variogram,
    "fit": cmd_fit,
    "krige": cmd_krige,
    "lowrank-krige": cmd_lowrank_krige,
    "taper-krige": cmd_taper_krige,
    "spde-krige": cmd_spde_krige,
    "clr": cmd_clr,
    "comp-fit": cmd_comp_fit,
    "st-filter": cmd_st_filter,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------------------
# entry point


def _keys_epilog(name):
    rows = [
        f"  {key:<16} {'(required)' if default is REQUIRED else default}"
        for key, (_, default) in SCHEMAS[name].items()
    ]
    return "configuration keys (default):\n" + "\n".join(rows)


def build_parser():
    parser = argparse.ArgumentParser(prog="geofield", description="Spatial Gaussian-field toolkit.")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(
            name, help=HELP[name], description=HELP[name], epilog=_keys_epilog(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", metavar="PATH", help="key=value configuration file")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
        p.add_argument("--force-dense", action="store_true",
                       help="allow dense factorizations above n_dense_max")
    return parser


def _kind(exc):
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, GuardError):
        return "guard"
    if isinstance(exc, ParseError):
        return "parse"
    if isinstance(exc, EstimationError):
        return "estimation"
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError)):
        return "numerical"
    if isinstance(exc, DomainError):
        return "domain"
    if isinstance(exc, OSError):
        return "io"
    return "domain"


def run(subcommand, raw_config, seed=None, out=".", force_dense=False):
    """Run one subcommand; returns the summary lines.

    Raises the package errors, :class:`ConfigError` or :class:`GuardError`.
    """
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    raw = dict(raw_config)
    if seed is not None:
        raw["seed"] = str(seed)
    cfg = resolve_config(subcommand, raw)
    os.makedirs(out, exist_ok=True)
    args = argparse.Namespace(out=out, force_dense=force_dense)
    summary = Summary()
    summary["subcommand"] = subcommand
    summary["seed"] = cfg["seed"]
    COMMANDS[subcommand](cfg, args, summary)
    return summary.lines()


def main(argv=None):
    args = build_parser().parse_args(argv)
    sub = args.subcommand
    try:
        raw = io.read_config(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            raw[k] = v
        lines = run(sub, raw, seed=args.seed, out=args.out, force_dense=args.force_dense)
    except (GeofieldError, OSError, ValueError) as exc:
        kind = _kind(exc)
        msg = " ".join(str(exc).split())
        print(f"error[{sub}.{kind}]: {msg}", file=sys.stderr)
        return EXIT_CODES[kind]
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
