"""Batch experiment runner.

Subcommands bind the library modules to INI-style config files:

    retrodiff <subcommand> --config exp.ini [--output DIR] [--force]
              [--threads K]

with subcommands ``forward``, ``reverse``, ``ou-verify``, ``invert``,
``moment-check`` and ``injectivity``.  Reports are JSON with deterministic
bytes (reruns of the same config are byte-identical); timestamps live in a
separate metadata file; bulk particle data goes to CSV.  The exit code is
0 iff every configured threshold passes, 1 on a threshold failure and 2 on
usage or configuration errors.  All randomness derives from the mandatory
``seed`` key.
"""

import argparse
import configparser
import json
import os
import sys

SPEC_VERSION = "0.1.0"

_COMMON_RUN_KEYS = {"seed", "particles"}
_ALLOWED_KEYS = {
    "model": {"family", "dim", "scale", "c", "sigma", "b0", "b1",
              "sigma_kind", "sigma_value", "sigma_clip", "amplitude",
              "breakpoints", "rates", "sigmas"},
    "grid": {"t_end", "n_steps"},
    "run": _COMMON_RUN_KEYS | {
        "init", "nu", "mu", "mode", "epsilon_stop", "drift_clip",
        "bandwidth", "route", "terminal_mean", "x0", "candidates",
        "candidate_box", "x", "y", "metric", "store_full",
    },
    "output": {"directory"},
    "thresholds": {"ks_max", "triangle_max_error", "mc_sigmas",
                   "search_tolerance", "fourier_tolerance",
                   "expected_verdict", "recovery_tolerance"},
}


class ConfigError(ValueError):
    pass


def _parse_vector(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _parse_matrix(text):
    rows = [_parse_vector(r) for r in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix literal {text!r}")
    return rows


def _parse_distribution(text):
    """dirac:<coords> or gaussian:<mean coords>,<variance> or empirical:<csv>."""
    import numpy as np

    from .distributions import DiracMixture, gaussian

    kind, _, rest = text.partition(":")
    if kind == "dirac":
        return DiracMixture([_parse_vector(rest)])
    if kind == "gaussian":
        mean_s, _, var_s = rest.rpartition(",")
        if not mean_s:
            raise ConfigError(f"gaussian spec {text!r} needs mean,variance")
        mean = _parse_vector(mean_s)
        var = float(var_s)
        if var <= 0 or not np.isfinite(var):
            raise ConfigError(f"gaussian variance must be finite positive, got {var}")
        return gaussian(mean, var)
    raise ConfigError(f"unknown distribution spec {text!r}")


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = {}
    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        cfg[section] = {}
        for key, value in parser.items(section):
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = value
    if "run" not in cfg or "seed" not in cfg["run"]:
        raise ConfigError("run.seed is mandatory (runs must be reproducible)")
    return cfg


def _positive(cfg, section, key, default=None, integer=False, optional=False):
    import math

    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if default is None and not optional:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    try:
        v = int(raw) if integer else float(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key} is not a number: {raw!r}") from exc
    if v <= 0 or not math.isfinite(v):
        raise ConfigError(f"{section}.{key} must be positive finite, got {raw}")
    return v


def _seed(cfg):
    raw = cfg["run"]["seed"]
    try:
        v = int(raw)
    except ValueError as exc:
        raise ConfigError(f"run.seed is not an integer: {raw!r}") from exc
    if v < 0:
        raise ConfigError(f"run.seed must be non-negative, got {v}")
    return v


def build_model(cfg, horizon):
    from .models import make_model

    m = cfg.get("model", {})
    family = m.get("family")
    if family is None:
        raise ConfigError("model.family is required")
    if family == "heat":
        return make_model("heat", dim=int(m.get("dim", 1)),
                          scale=float(m.get("scale", 1.0)), horizon=horizon)
    if family == "ou":
        if "c" not in m or "sigma" not in m:
            raise ConfigError("ou family needs model.c and model.sigma")
        return make_model("ou", C=_parse_matrix(m["c"]),
                          sigma=_parse_matrix(m["sigma"]), horizon=horizon)
    if family in ("affine", "sin-drift"):
        kind = m.get("sigma_kind", "const")
        if kind == "const":
            spec = float(m.get("sigma_value", 1.0))
        elif kind == "sqrt1px2":
            spec = ("sqrt1px2", float(m.get("sigma_clip", 10.0)))
        else:
            raise ConfigError(f"unknown model.sigma_kind {kind!r}")
        if family == "affine":
            if "b0" not in m or "b1" not in m:
                raise ConfigError("affine family needs model.b0 and model.b1")
            return make_model("affine", b0=_parse_vector(m["b0"]),
                              b1=_parse_matrix(m["b1"]), sigma_spec=spec,
                              horizon=horizon)
        return make_model("sin-drift", amplitude=float(m.get("amplitude", 1.0)),
                          sigma_spec=spec, horizon=horizon)
    if family == "piecewise":
        for key in ("breakpoints", "rates", "sigmas"):
            if key not in m:
                raise ConfigError(f"piecewise family needs model.{key}")
        return make_model("piecewise",
                          breakpoints=_parse_vector(m["breakpoints"]),
                          rates=_parse_vector(m["rates"]),
                          sigmas=_parse_vector(m["sigmas"]))
    raise ConfigError(f"unknown model.family {family!r}")


class _Emitter:
    """Writes every artifact under the output directory, refusing clobbers."""

    def __init__(self, directory, force):
        self.dir = directory
        self.force = force
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.dir, name)
        if os.path.exists(p) and not self.force:
            raise ConfigError(
                f"refusing to overwrite {p} (pass --force to allow)"
            )
        return p

    def json(self, name, payload):
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def metadata(self, command, config_path):
        import time

        from . import __version__

        with open(os.path.join(self.dir, "metadata.json"), "w") as fh:
            json.dump(
                {
                    "command": command,
                    "config": os.path.abspath(config_path),
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                    "version": __version__,
                },
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")


def _grid(cfg):
    from .grids import TimeGrid

    t_end = _positive(cfg, "grid", "t_end", default=1.0)
    n_steps = int(_positive(cfg, "grid", "n_steps", default=1000, integer=True))
    return TimeGrid(0.0, t_end, n_steps)


def _threshold(cfg, key, default):
    return _positive(cfg, "thresholds", key, default=default)


def _report(passed, failures, payload):
    payload["spec_version"] = SPEC_VERSION
    payload["passed"] = bool(passed)
    payload["failed_criteria"] = sorted(failures)
    return payload


def cmd_forward(cfg, emitter):
    from .forward import empirical_moments, euler_maruyama_path, export_snapshots_csv, sample_initial
    from .models import OUModel, PiecewiseHomogeneousModel

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    if isinstance(model, (OUModel, PiecewiseHomogeneousModel)):
        model = model.as_diffusion_model()
    seed = _seed(cfg)
    n = int(_positive(cfg, "run", "particles", default=10000, integer=True))
    if "init" not in cfg["run"]:
        raise ConfigError("forward needs run.init")
    init = sample_initial(_parse_distribution(cfg["run"]["init"]), n, seed)
    full = cfg["run"].get("store_full", "false").lower() in ("1", "true", "yes")
    path = euler_maruyama_path(model, init, grid, seed, full_store=full)
    with open(emitter.path("snapshots.csv"), "w") as fh:
        export_snapshots_csv(path, fh)
    mean, cov = empirical_moments(path.terminal)
    return _report(True, [], {
        "terminal_mean": mean.tolist(),
        "terminal_cov": cov.tolist(),
        "n_snapshots": len(path),
        "particles": n,
    })


def cmd_reverse(cfg, emitter):
    import numpy as np

    from .forward import export_snapshots_csv
    from .models import OUModel
    from .ou_analytic import ou_marginal
    from .reversal import (
        check_integrability_proxy,
        export_diagnostics_csv,
        simulate_reversal_analytic,
        simulate_reversal_selfconsistent,
        verify_representation,
    )

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    run_cfg = cfg["run"]
    seed = _seed(cfg)
    n = int(_positive(cfg, "run", "particles", default=20000, integer=True))
    eps = _positive(cfg, "run", "epsilon_stop", default=0.01 * grid.t_end)
    clip_raw = run_cfg.get("drift_clip", "none")
    clip = None if clip_raw == "none" else float(clip_raw)
    mode = run_cfg.get("mode", "analytic")
    if "mu" not in run_cfg:
        raise ConfigError("reverse needs run.mu (terminal sampler)")
    mu = _parse_distribution(run_cfg["mu"])
    nu = _parse_distribution(run_cfg["nu"]) if "nu" in run_cfg else None
    is_ou = isinstance(model, OUModel)

    terminal_warning = False
    if mode == "analytic":
        if not is_ou or nu is None:
            raise ConfigError("analytic mode needs an ou/heat model and run.nu")
        import warnings

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            run = simulate_reversal_analytic(
                model, nu, mu, grid, n, epsilon_stop=eps, seed=seed,
                drift_clip=clip,
            )
        terminal_warning = any("no consistent solution" in str(w.message)
                               for w in caught)
    elif mode == "self-consistent":
        bw = run_cfg.get("bandwidth", "none")
        bw = None if bw == "none" else float(bw)
        run = simulate_reversal_selfconsistent(
            model, mu, grid, n, epsilon_stop=eps,
            drift_clip=1e3 if clip is None else clip, seed=seed, bandwidth=bw,
        )
    else:
        raise ConfigError(f"unknown run.mode {mode!r}")

    with open(emitter.path("snapshots.csv"), "w") as fh:
        export_snapshots_csv(run.path, fh)
    with open(emitter.path("diagnostics.csv"), "w") as fh:
        export_diagnostics_csv(run, fh)

    X = run.terminal.positions
    proxy = check_integrability_proxy(run)
    payload = {
        "mode": run.mode,
        "terminal_mean": X.mean(axis=0).tolist(),
        "terminal_std": X.std(axis=0, ddof=1).tolist(),
        "epsilon_stop": run.epsilon_stop,
        "drift_integral": proxy.drift_integral,
        "drift_growth_exponent": proxy.growth_exponent,
        "clip_events": proxy.clip_events,
        "vacuum_events": proxy.vacuum_events,
        "terminal_consistency_warning": terminal_warning,
    }
    failures = []
    if is_ou and nu is not None:
        ks_max = _threshold(cfg, "ks_max", 0.02)
        ref = lambda t: ou_marginal(model, nu, grid.t_end - t)  # noqa: E731
        rep = verify_representation(run, ref, threshold=ks_max)
        payload["representation_max_stat"] = rep.max_stat
        payload["representation_threshold"] = ks_max
        if not rep.passed:
            failures.append("representation_max_stat")
    return _report(not failures, failures, payload)


def cmd_ou_verify(cfg, emitter):
    import numpy as np

    from .models import OUModel
    from .ou_analytic import consistency_triangle

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    if not isinstance(model, OUModel):
        raise ConfigError("ou-verify needs the heat or ou family")
    seed = _seed(cfg)
    nu = _parse_distribution(cfg["run"].get("nu", "dirac:0"))
    d = model.dim_d
    axis = np.linspace(-5.0, 5.0, 9)
    if d == 1:
        xi = axis[:, None]
    elif d == 2:
        xi = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
    else:
        raise ConfigError("ou-verify supports d <= 2")
    ts = np.linspace(0.1 * grid.t_end, grid.t_end, 10)
    rep = consistency_triangle(model, nu, xi, ts, n_steps=grid.n_steps)
    tol = _threshold(cfg, "triangle_max_error", 1e-6)
    failures = [] if rep["max_error"] < tol else ["triangle_max_error"]
    payload = {k: v for k, v in rep.items()}
    payload["threshold"] = tol
    payload["seed"] = seed
    return _report(not failures, failures, payload)


def cmd_invert(cfg, emitter):
    import numpy as np

    from .distributions import DiracMixture, gaussian
    from .forward import euler_maruyama_path, sample_initial
    from .grids import TimeGrid
    from .inverse import (
        AffineDrift,
        extract_source_location,
        heat_initial_transform,
        reconstruct_dirac_affine,
        reconstruct_dirac_affine_mc,
        reconstruct_dirac_search,
    )
    from .models import OUModel

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    run_cfg = cfg["run"]
    seed = _seed(cfg)
    route = run_cfg.get("route", "mean-ode")
    failures = []

    def affine_of(model):
        if isinstance(model, OUModel):
            return AffineDrift(b0=lambda t: np.zeros(model.dim_d),
                               b1=model.C, dim=model.dim_d)
        if getattr(model, "name", "") == "affine":
            return AffineDrift(b0=lambda t: model.drift(t, np.zeros(model.dim_d)),
                               b1=lambda t: model.jac_drift_at(t, np.zeros(model.dim_d)),
                               dim=model.dim_d)
        raise ConfigError("mean-ode routes need an affine-drift model")

    if route == "mean-ode":
        if "terminal_mean" not in run_cfg:
            raise ConfigError("mean-ode route needs run.terminal_mean")
        m = np.array(_parse_vector(run_cfg["terminal_mean"]))
        x_hat = reconstruct_dirac_affine(affine_of(model), m, grid)
        payload = {"route": route, "x_hat": x_hat.tolist()}
    elif route == "mean-ode-mc":
        if "x0" not in run_cfg:
            raise ConfigError("mean-ode-mc route needs run.x0 (data generator)")
        x0 = np.array(_parse_vector(run_cfg["x0"]))
        n = int(_positive(cfg, "run", "particles", default=100000, integer=True))
        diff = model.as_diffusion_model() if isinstance(model, OUModel) else model
        init = sample_initial(DiracMixture([x0]), n, seed)
        term = euler_maruyama_path(diff, init, grid, seed).terminal
        x_hat, se = reconstruct_dirac_affine_mc(affine_of(model), None, term, grid)
        k_sig = _threshold(cfg, "mc_sigmas", 3.0)
        err = float(np.linalg.norm(x_hat - x0))
        if err > k_sig * se + 1e-12:
            failures.append("mc_recovery")
        payload = {"route": route, "x_hat": x_hat.tolist(), "stderr": se,
                   "true_x0": x0.tolist(), "error": err}
    elif route == "search":
        if "x0" not in run_cfg or "candidates" not in run_cfg:
            raise ConfigError("search route needs run.x0 and run.candidates")
        x0 = np.array(_parse_vector(run_cfg["x0"]))
        cands = [[v] for v in _parse_vector(run_cfg["candidates"])]
        n = int(_positive(cfg, "run", "particles", default=20000, integer=True))
        diff = model.as_diffusion_model() if isinstance(model, OUModel) else model
        init = sample_initial(DiracMixture([x0]), n, seed)
        target = euler_maruyama_path(diff, init, grid, seed,
                                     store_every=grid.n_steps).terminal
        res = reconstruct_dirac_search(diff, target, cands, grid.t_end, n,
                                       seed + 1, n_steps=grid.n_steps)
        spacings = np.diff(sorted(c[0] for c in cands))
        spacing = float(spacings[spacings > 0].min()) if (spacings > 0).any() else 1.0
        tol = _threshold(cfg, "search_tolerance", default=spacing)
        err = float(np.linalg.norm(res.x_hat - x0))
        if err > tol:
            failures.append("search_recovery")
        emitter.json("scores.json", res.to_json_dict())
        payload = {"route": route, "x_hat": res.x_hat.tolist(),
                   "true_x0": x0.tolist(), "error": err, "tolerance": tol}
    elif route == "fourier":
        if getattr(model, "dim_m", None) is None or "x0" not in run_cfg:
            raise ConfigError("fourier route needs the heat family and run.x0")
        x0 = np.array(_parse_vector(run_cfg["x0"]))
        T = grid.t_end
        mu_hat = gaussian(x0, 2.0 * T * np.eye(len(x0))).char_transform

        def recovered(xi):
            return heat_initial_transform(mu_hat, T, xi)

        est = extract_source_location(recovered, dim=len(x0))
        tol = _threshold(cfg, "fourier_tolerance", 1e-4)
        err = float(np.abs(est - x0).max())
        if err > tol:
            failures.append("fourier_recovery")
        payload = {"route": route, "x_hat": est.tolist(),
                   "true_x0": x0.tolist(), "error": err, "tolerance": tol}
    else:
        raise ConfigError(f"unknown run.route {route!r}")
    return _report(not failures, failures, payload)


def cmd_moment_check(cfg, emitter):
    import numpy as np

    from .forward import check_moment_bound
    from .models import OUModel

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    if isinstance(model, OUModel):
        model = model.as_diffusion_model()
    run_cfg = cfg["run"]
    seed = _seed(cfg)
    n = int(_positive(cfg, "run", "particles", default=10000, integer=True))
    if "x" not in run_cfg or "y" not in run_cfg:
        raise ConfigError("moment-check needs run.x and run.y")
    rep = check_moment_bound(model, _parse_vector(run_cfg["x"]),
                             _parse_vector(run_cfg["y"]), grid, n, seed)
    failures = [] if rep.passed else ["moment_bound"]
    return _report(not failures, failures, {
        "sup_empirical": rep.sup_empirical,
        "sup_time": rep.sup_time,
        "bound": rep.bound,
        "margin": rep.margin,
        "K": rep.K,
        "small_horizon_margin": rep.small_horizon_margin,
    })


def cmd_injectivity(cfg, emitter):
    import numpy as np

    from .distributions import DiracMixture
    from .inverse import injectivity_probe
    from .models import OUModel

    grid = _grid(cfg)
    model = build_model(cfg, grid.t_end)
    if isinstance(model, OUModel):
        model = model.as_diffusion_model()
    run_cfg = cfg["run"]
    seed = _seed(cfg)
    n = int(_positive(cfg, "run", "particles", default=4000, integer=True))
    if "candidates" in run_cfg:
        pts = [[v] for v in _parse_vector(run_cfg["candidates"])]
    elif "candidate_box" in run_cfg:
        lo, hi, count = _parse_vector(run_cfg["candidate_box"])
        axis = np.linspace(lo, hi, int(count))
        if model.dim_d == 2:
            pts = [[a, b] for a in axis for b in axis]
        else:
            pts = [[a] for a in axis]
    else:
        raise ConfigError("injectivity needs run.candidates or run.candidate_box")
    cands = [DiracMixture([p]) for p in pts]
    rep = injectivity_probe(model, cands, grid.t_end, n, seed,
                            metric=run_cfg.get("metric", "wasserstein1"),
                            n_steps=grid.n_steps)
    expected = cfg.get("thresholds", {}).get("expected_verdict", "injective")
    if expected not in ("injective", "ambiguous"):
        raise ConfigError("thresholds.expected_verdict must be "
                          "'injective' or 'ambiguous'")
    failures = [] if rep.verdict == expected else ["verdict"]
    payload = rep.to_json_dict()
    payload["expected_verdict"] = expected
    return _report(not failures, failures, payload)


_COMMANDS = {
    "forward": cmd_forward,
    "reverse": cmd_reverse,
    "ou-verify": cmd_ou_verify,
    "invert": cmd_invert,
    "moment-check": cmd_moment_check,
    "injectivity": cmd_injectivity,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="retrodiff",
        description="Time-reversed diffusion experiments from config files.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--output", default=None,
                        help="output directory (overrides config)")
    parser.add_argument("--force", action="store_true",
                        help="allow overwriting existing outputs")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; 0 means auto "
                             "(env RETRO_THREADS is the fallback)")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        env = os.environ.get("RETRO_THREADS")
        threads = int(env) if env else 0
    if threads < 0:
        parser.error("--threads must be >= 0")
    if threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    try:
        cfg = load_config(args.config)
        out_dir = args.output or cfg.get("output", {}).get("directory", "out")
        emitter = _Emitter(out_dir, args.force)
        payload = _COMMANDS[args.command](cfg, emitter)
        emitter.json("report.json", payload)
        emitter.metadata(args.command, args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ok = payload["passed"]
    print(json.dumps({"passed": ok, "failed_criteria": payload["failed_criteria"],
                      "report": os.path.join(out_dir, "report.json")}))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
