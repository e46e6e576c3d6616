"""Command-line front end: ``mnx {validate,coeffs,density,study,residual}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from . import harness as H
from .density import build_density_model, general_pn_density, joint_pn_density, studentized_qn, qn_cdf
from .model import PRESETS, ModelError, preset, validate_model
from .paths import SCHEMES
from .report import config_hash, write_csv, write_json, write_svg
from .symbols import full_symbol

CONFIG_VERSION = 1
COMMANDS = ("validate", "coeffs", "density", "study", "residual")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "density"
    version: int = CONFIG_VERSION
    model: str = "wiener-const"
    params: dict = field(default_factory=dict)
    hormander_asserted: bool = False
    n: int = 64
    n_list: list = field(default_factory=lambda: [16, 64, 256])
    R: int = 32
    R_list: list = field(default_factory=lambda: [32, 64])
    fine_nodes: Optional[int] = None
    N: int = 1000
    seed: int = 1
    family: list = field(default_factory=lambda: sorted(H.F_FAMILY))
    scheme: str = "milstein"
    out: str = "."
    emit_svg: bool = True
    threads: Optional[int] = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def identity(self):
        """Fields that determine results (output dir and thread count excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d


_FILE_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def _check(cond, field_name, msg):
    if not cond:
        raise ConfigError("%s: %s" % (field_name, msg))


def validate_config(cfg):
    _check(cfg.version == CONFIG_VERSION, "version", "unsupported config version %r" % cfg.version)
    _check(cfg.model in PRESETS, "model", "unknown preset %r" % cfg.model)
    _check(isinstance(cfg.params, dict), "params", "must be an object")
    _check(isinstance(cfg.n, int) and cfg.n >= 2, "n", "must be an integer >= 2")
    _check(len(cfg.n_list) >= 1 and all(isinstance(v, int) and v >= 2 for v in cfg.n_list), "n_list",
           "integers >= 2")
    _check(list(cfg.n_list) == sorted(set(cfg.n_list)), "n_list", "must be strictly increasing")
    _check(isinstance(cfg.R, int) and cfg.R >= 1, "R", "must be an integer >= 1")
    _check(all(isinstance(v, int) and v >= 1 for v in cfg.R_list), "R_list", "integers >= 1")
    _check(cfg.fine_nodes is None or (isinstance(cfg.fine_nodes, int) and cfg.fine_nodes >= 2), "fine_nodes",
           "integer >= 2")
    minimum = 2 if cfg.command in ("coeffs", "validate") else 100
    _check(isinstance(cfg.N, int) and cfg.N >= minimum, "N", "must be an integer >= %d" % minimum)
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _check(all(f in H.F_FAMILY for f in cfg.family), "family", "choose from %s" % ", ".join(sorted(H.F_FAMILY)))
    _check(cfg.scheme in SCHEMES, "scheme", "choose from %s" % ", ".join(SCHEMES))
    _check(cfg.threads is None or (isinstance(cfg.threads, int) and cfg.threads >= 1), "threads", "integer >= 1")
    try:
        preset(cfg.model, **cfg.params)
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError("params: %s" % exc)
    return cfg


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % text)


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected key=value, got %r" % text)
    key, value = text.split("=", 1)
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key, value


def build_parser():
    parser = argparse.ArgumentParser(prog="mnx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version="mnx " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--model", choices=sorted(PRESETS))
        p.add_argument("--param", action="append", type=_param, metavar="KEY=VALUE",
                       help="preset parameter override (repeatable)")
        p.add_argument("--hormander", dest="hormander_asserted", action="store_const", const=True,
                       help="record that the bracket nondegeneracy condition holds")
        p.add_argument("--n", type=int)
        p.add_argument("--n-list", dest="n_list", type=_int_list)
        p.add_argument("--R", type=int)
        p.add_argument("--R-list", dest="R_list", type=_int_list)
        p.add_argument("--fine-nodes", dest="fine_nodes", type=int)
        p.add_argument("--N", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--family", type=lambda s: [v for v in s.split(",") if v])
        p.add_argument("--scheme", choices=sorted(SCHEMES))
        p.add_argument("--out")
        p.add_argument("--svg", dest="emit_svg", action="store_const", const=True)
        p.add_argument("--no-svg", dest="emit_svg", action="store_const", const=False)
        p.add_argument("--threads", type=int)
    return parser


def parse_config(argv=None):
    """Parse flags and an optional config file into a validated RunConfig."""
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config: cannot read %s (%s)" % (args.config, exc))
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be an object")
        unknown = set(doc) - _FILE_KEYS
        if unknown:
            raise ConfigError("config: unknown key(s) %s" % ", ".join(sorted(unknown)))
        if "version" not in doc:
            raise ConfigError("version: missing (mandatory)")
        values.update(doc)
    for key in _FILE_KEYS:
        v = getattr(args, key, None)
        if v is not None and key != "params":
            values[key] = v
    if args.param:
        params = dict(values.get("params", {}))
        params.update(dict(args.param))
        values["params"] = params
    values["command"] = args.command
    if values.get("threads") is None:
        env = os.environ.get("MNX_THREADS")
        if env:
            try:
                values["threads"] = int(env)
            except ValueError:
                raise ConfigError("threads: MNX_THREADS must be an integer")
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return validate_config(cfg)


def _threads(cfg):
    return cfg.threads or os.cpu_count() or 1


def _experiment(cfg, **overrides):
    base = dict(model=cfg.model, params=dict(cfg.params), n=cfg.n, R=cfg.R, N=cfg.N, seed=cfg.seed,
                scheme=cfg.scheme, threads=_threads(cfg))
    base.update(overrides)
    return H.ExperimentConfig(**base)


def _meta(cfg):
    return {"config_hash": config_hash(cfg.identity()), "seed": cfg.seed, "model": cfg.model,
            "command": cfg.command}


def _save_fig(cfg, fig, name):
    from . import plots

    try:
        if cfg.emit_svg:
            write_svg(os.path.join(cfg.out, name), fig)
    finally:
        plots.close(fig)


# subcommands

def cmd_validate(cfg):
    spec = preset(cfg.model, **cfg.params)
    if cfg.hormander_asserted:
        import dataclasses

        spec = dataclasses.replace(spec, hormander_asserted=True)
    report = validate_model(spec)
    write_json(os.path.join(cfg.out, "validation.json"), report.as_dict(), _meta(cfg))
    print("model %s: %s (min |a| = %.6g, worst derivative %s: %.3g)" % (
        cfg.model, "pass" if report.passed else "FAIL", report.min_abs_a,
        report.worst_derivative, report.worst_derivative_error))
    for msg in report.messages:
        print("  note: " + msg)
    return 0 if report.passed else 1


def cmd_coeffs(cfg):
    res = H.run_replications(_experiment(cfg))
    co = res.coeffs
    symbol = full_symbol(co)
    records, rows = [], []
    for i, idx in enumerate(res.indices):
        sym = symbol.select(i)
        records.append({"replication": int(idx), "c_inf": float(co.c_inf[i]), "f_inf": float(co.f_inf[i]),
                        "symbol": sym.to_json()})
        row = {"replication": int(idx), "c_inf": co.c_inf[i], "f_inf": co.f_inf[i],
               "m1n": res.stats["m1n"][i], "f_n": res.stats["f_n"][i], "z_n": res.stats["z_n"][i]}
        rows.append(row)
    meta = _meta(cfg)
    write_json(os.path.join(cfg.out, "coeffs.json"),
               {"n": cfg.n, "R": cfg.R, "N": res.N, "case": co.case, "paths": records}, meta)
    write_csv(os.path.join(cfg.out, "coeffs.csv"), rows,
              ["replication", "c_inf", "f_inf", "m1n", "f_n", "z_n"], meta)
    return 0


def cmd_density(cfg):
    from . import plots

    spec = preset(cfg.model, **cfg.params)
    res = H.run_replications(_experiment(cfg))
    meta = _meta(cfg)
    common = {"n": cfg.n, "N": res.N, "seed": cfg.seed}
    z = np.linspace(-4, 4, 161)
    if spec.case == "wiener":
        dm = build_density_model(res.coeffs, cfg.n)
        write_json(os.path.join(cfg.out, "moments.json"), dm.as_json(), meta)
        first = studentized_qn(z, cfg.n, [0, 0, 0])
        second = dm.qn(z)
        write_csv(os.path.join(cfg.out, "qn_curve.csv"),
                  [dict(common, z=zi, first_order=a, second_order=b) for zi, a, b in zip(z, first, second)],
                  ["z", "first_order", "second_order", "n", "N", "seed"], meta)
        t = H.T_GRID
        oracle = H.chisq_oracle_cdf(t, cfg.n) if cfg.model == "wiener-const" else None
        rows = []
        for i, ti in enumerate(t):
            row = dict(common, t=ti, first_order=qn_cdf(ti, cfg.n, [0, 0, 0]), second_order=dm.cdf(ti))
            row["oracle"] = "" if oracle is None else oracle[i]
            rows.append(row)
        write_csv(os.path.join(cfg.out, "cdf_table.csv"), rows,
                  ["t", "first_order", "second_order", "oracle", "n", "N", "seed"], meta)
        _save_fig(cfg, plots.qn_figure(z, first, second, title="studentized density, n = %d" % cfg.n),
                  "qn_curve.svg")
        if not dm.degenerate:
            _density_surface(cfg, res, meta, common, wiener=True)
    else:
        means = full_symbol(res.coeffs).mean()
        write_json(os.path.join(cfg.out, "symbol_means.json"), {"terms": means.to_json(), "N": res.N}, meta)
        _density_surface(cfg, res, meta, common, wiener=False)
    return 0


def _density_surface(cfg, res, meta, common, wiener):
    from . import plots

    co = res.coeffs
    lo, hi = np.quantile(co.f_inf, [0.02, 0.98])
    xs = np.linspace(lo, hi, 41)
    zs = np.linspace(-3 * np.sqrt(np.median(co.c_inf)), 3 * np.sqrt(np.median(co.c_inf)), 61)
    rows = []
    surf = np.zeros((xs.size, zs.size))
    for j, zj in enumerate(zs):
        if wiener:
            second, reliable = joint_pn_density(zj, xs, cfg.n, co)
            first, _ = joint_pn_density(zj, xs, np.inf, co)
        else:
            second = general_pn_density(zj, xs, cfg.n, co)
            first = general_pn_density(zj, xs, np.inf, co)
            reliable = np.ones_like(xs, dtype=bool)
        surf[:, j] = second
        for i, xi in enumerate(xs):
            rows.append(dict(common, z=zj, x=xi, first_order=first[i], second_order=second[i],
                             reliable=bool(reliable[i])))
    write_csv(os.path.join(cfg.out, "pn_surface.csv"), rows,
              ["z", "x", "first_order", "second_order", "reliable", "n", "N", "seed"], meta)
    _save_fig(cfg, plots.surface_figure(zs, xs, surf, title="joint density, n = %d" % cfg.n), "pn_surface.svg")


def cmd_study(cfg):
    from . import plots

    meta = _meta(cfg)
    rows = []
    if cfg.model == "wiener-const" and not cfg.params:
        for r in H.analytic_cdf_study(cfg.n_list):
            rows.append(dict(r, R=0, N=0, mc="", prediction="", scaled_error=r["error"] * np.sqrt(r["n"])))
    if cfg.family:
        spec = preset(cfg.model, **cfg.params)
        if spec.case != "wiener":
            raise H.RunFailure("the studentized study applies to Wiener-case models")
        fam = {k: H.F_FAMILY[k] for k in cfg.family}
        for r in H.convergence_study(_experiment(cfg), cfg.n_list, family=fam, fine_nodes=cfg.fine_nodes):
            rows.append(r)
    cols = ["n", "f", "order", "error", "se", "scaled_error", "mc", "prediction", "R", "N"]
    out_rows = [dict(r, seed=cfg.seed, model=cfg.model) for r in rows]
    write_csv(os.path.join(cfg.out, "errors.csv"), out_rows, cols + ["seed", "model"], meta)
    slopes = {}
    for f in sorted({r["f"] for r in rows}):
        for order in (1, 2):
            sel = [r for r in rows if r["f"] == f and r["order"] == order]
            if len(sel) >= 2 and all(r["error"] > 0 for r in sel):
                slopes["%s/order%d" % (f, order)] = H.loglog_slope([r["n"] for r in sel], [r["error"] for r in sel])
    write_json(os.path.join(cfg.out, "slopes.json"), slopes, meta)
    _save_fig(cfg, plots.error_figure(rows, title="expansion errors, %s" % cfg.model), "errors.svg")
    return 0


def cmd_residual(cfg):
    from . import plots

    spec = preset(cfg.model, **cfg.params)
    meta = _meta(cfg)
    rows = H.expansion_residual(_experiment(cfg), cfg.n_list, R_list=cfg.R_list)
    out_rows = [dict(r, seed=cfg.seed, model=cfg.model) for r in rows]
    write_csv(os.path.join(cfg.out, "residual.csv"), out_rows, ["n", "R", "N", "rms", "se", "mean", "seed", "model"],
              meta)
    _save_fig(cfg, plots.residual_figure(rows, title="remainder check, %s" % spec.name), "residual.svg")
    return 0


HANDLERS = {"validate": cmd_validate, "coeffs": cmd_coeffs, "density": cmd_density,
            "study": cmd_study, "residual": cmd_residual}


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print("mnx: configuration error: %s" % exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if exc.code is not None else 0
    try:
        os.makedirs(cfg.out, exist_ok=True)
        return HANDLERS[cfg.command](cfg)
    except (OSError, H.RunFailure, ModelError, FloatingPointError, ValueError) as exc:
        print("mnx: %s failed: %s" % (cfg.command, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
