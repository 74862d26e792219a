"""Command-line entry point: ``dmpot <subcommand> [options]``.

Runs are configured by one JSON document, validated against :data:`CONFIG_SCHEMA`.
Every run writes ``manifest.json`` (config, its hash, seeds, version and output
hashes); passing that manifest back as ``--config`` reproduces the outputs.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .angular import ConstraintError, DMParams
from .data_model import PanelError, SeriesPanel, ThresholdConfig, read_csv, write_csv
from .decluster import DeclusterError, decluster, mean_cluster_size
from .diagnostics import DiagnosticError, lrt_regional_shape
from .likelihood import LikelihoodData, observed_log_likelihood
from .margins import ExceedanceRates, MarginalParams, MarginError, estimate_zeta
from .mcmc import ChainConfig, ChainError, PosteriorSample, PriorSpec, diagnose, pool, run_chains, select_chains
from .products import (
    DEFAULT_RETURN_PERIODS,
    PosteriorProducts,
    posterior_products,
    return_level_draws,
    summarize_draws,
)
from .simulate import LOOKALIKE_RECENT, lookalike_config, simulate_panel

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {"type": "string"},
        "thresholds": {"type": "array", "items": _pos, "minItems": 1},
        "run_length": _posint,
        "tau": {"type": "number", "minimum": 1},
        "recent_start": {"type": "string", "format": "date"},
        "recent_only": {"type": "boolean"},
        "regional": {"type": "boolean"},
        "zeta": {
            "oneOf": [
                {"enum": ["recent", "full"]},
                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
            ]
        },
        "priors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "shape_mean": _num,
                "shape_sd": _pos,
                "log_scale_mean": {"type": "array", "items": _num},
                "log_scale_sd": _pos,
                "nu_shape": _pos,
                "nu_rate": _pos,
                "k_rate": _pos,
                "k_max": _posint,
                "weight_alpha": _pos,
            },
        },
        "mcmc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chains": _posint,
                "iterations": _posint,
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": _posint,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "workers": _posint,
                "selection": {"enum": ["pooled", "best"]},
                "feasibility_draws": _posint,
            },
        },
        "products": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "return_periods": {"type": "array", "items": _pos},
                "grid_points": _posint,
                "tail_points": {"type": "integer", "minimum": 2},
                "tail_period": _pos,
                "max_draws": _posint,
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}},
        },
    },
}

DEFAULT_CONFIG = {
    "run_length": 3,
    "recent_start": LOOKALIKE_RECENT.isoformat(),
    "recent_only": False,
    "regional": False,
    "zeta": "recent",
    "priors": {},
    "mcmc": {"chains": 2, "iterations": 10000, "thin": 10, "seed": 0, "workers": 1, "selection": "pooled"},
    "products": {},
    "simulate": {"seed": 20101231},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None, base_dir: Path | None = None) -> dict:
    """Read, validate and complete a run configuration; a manifest is accepted too."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if isinstance(raw, dict) and "manifest_version" in raw:
            raw = raw["config"]
        base_dir = base_dir or p.parent
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA, format_checker=jsonschema.FormatChecker())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULT_CONFIG, raw)
    if "data" in cfg and base_dir is not None and not Path(cfg["data"]).is_absolute():
        cfg["data"] = str((base_dir / cfg["data"]).resolve())
    if "data" in cfg and not Path(cfg["data"]).is_file():
        raise ConfigError(f"data file not found: {cfg['data']}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["mcmc"]["seed"] = args.seed
        cfg["simulate"]["seed"] = args.seed
    if getattr(args, "recent_only", False):
        cfg["recent_only"] = True
    if getattr(args, "regional", False):
        cfg["regional"] = True
    return cfg


def _recent_start(cfg: dict) -> dt.date:
    return dt.date.fromisoformat(cfg["recent_start"])


def load_panel(cfg: dict) -> SeriesPanel:
    """The configured data file, or the seeded synthetic lookalike panel."""
    if "data" in cfg:
        return read_csv(cfg["data"])
    return simulate_panel(lookalike_config(cfg["simulate"]["seed"]))[0]


def _thresholds(cfg: dict, panel: SeriesPanel) -> ThresholdConfig:
    if "thresholds" in cfg:
        v = cfg["thresholds"]
    elif "data" not in cfg:
        v = list(lookalike_config(cfg["simulate"]["seed"]).thresholds)
    else:
        raise ConfigError("thresholds are required with a data file")
    if len(v) != panel.n_sites:
        raise ConfigError(f"{len(v)} thresholds for {panel.n_sites} sites")
    return ThresholdConfig(tuple(float(x) for x in v), cfg["run_length"])


def _rates_and_tau(cfg: dict, panel: SeriesPanel, tc: ThresholdConfig) -> tuple[ExceedanceRates, float]:
    """Exceedance rates and mean cluster size, from the systematic era by default."""
    source = cfg["zeta"]
    ref = panel.since(_recent_start(cfg)) if source == "recent" else panel
    if isinstance(source, list):
        if len(source) != panel.n_sites:
            raise ConfigError("one exceedance rate per site is required")
        rates = ExceedanceRates(np.asarray(source, dtype=float))
    else:
        rates = estimate_zeta(ref, tc)
    tau = float(cfg["tau"]) if "tau" in cfg else mean_cluster_size(ref, tc)
    return rates, tau


# ---------------------------------------------------------------- output helpers


def _fmt(x) -> str:
    if isinstance(x, (str, int, np.integer, bool)):
        return str(x)
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, seeds: dict) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    _write_json(
        out / "manifest.json",
        {
            "manifest_version": 1,
            "software": {"name": "dmpot", "version": __version__},
            "command": command,
            "config": cfg,
            "config_sha256": config_hash(cfg),
            "seeds": seeds,
            "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
        },
    )


def _site_label(names, i, j) -> str:
    return f"{names[i]}-{names[j]}"


def write_posterior_csv(path: Path, samples: list[PosteriorSample]) -> None:
    names = list(samples[0].scalars())
    header = ["iteration", "chain", *names]

    def rows():
        for s in samples:
            sc = s.scalars()
            for r in range(s.n_draws):
                yield [int(s.iterations[r]), s.chain, *(sc[n][r] for n in names)]

    _write_csv(path, header, rows())


def draws_to_json(samples: list[PosteriorSample]) -> dict:
    return {
        "site_names": list(samples[0].site_names),
        "regional": samples[0].regional,
        "chains": [
            {
                "chain": s.chain,
                "seed": list(s.seed),
                "acceptance": {k: list(v) for k, v in s.acceptance.items()},
                "max_recheck_error": s.max_recheck_error,
                "draws": [
                    {
                        "iteration": int(s.iterations[r]),
                        "log_scales": s.log_scales[r].tolist(),
                        "shapes": s.shapes[r].tolist(),
                        "weights": s.mixtures[r].weights.tolist(),
                        "centers": s.mixtures[r].centers.tolist(),
                        "nu": s.mixtures[r].shapes.tolist(),
                        "log_lik": float(s.log_lik[r]),
                        "log_post": float(s.log_post[r]),
                    }
                    for r in range(s.n_draws)
                ],
            }
            for s in samples
        ],
    }


def draws_from_json(obj: dict) -> list[PosteriorSample]:
    out = []
    for ch in obj["chains"]:
        dr = ch["draws"]
        d = len(obj["site_names"])
        out.append(
            PosteriorSample(
                ch["chain"],
                tuple(ch["seed"]),
                tuple(obj["site_names"]),
                np.array([x["iteration"] for x in dr], dtype=int),
                np.array([x["log_scales"] for x in dr], dtype=float).reshape(-1, d),
                np.array([x["shapes"] for x in dr], dtype=float).reshape(-1, d),
                [DMParams(x["weights"], x["centers"], x["nu"]) for x in dr],
                np.array([x["log_lik"] for x in dr], dtype=float),
                np.array([x["log_post"] for x in dr], dtype=float),
                {k: tuple(v) for k, v in ch["acceptance"].items()},
                bool(obj["regional"]),
                float(ch["max_recheck_error"]),
            )
        )
    return out


def write_products(out: Path, pp: PosteriorProducts) -> None:
    """Return levels, chi, one angular grid per pair and one tail curve per ordered pair."""
    names = pp.site_names
    _write_csv(out / "return_levels.csv", ["site", "T_years", "posterior_mean", "q05", "q95"], pp.return_level_rows())
    _write_csv(out / "chi.csv", ["pair", "posterior_mean", "q05", "q95"], pp.chi_rows())
    for (i, j), band in pp.angular.items():
        _write_csv(
            out / f"angular_{names[i]}_{names[j]}.csv",
            ["w", "density", "q05", "q95"],
            zip(pp.angular_w, band.mean, band.q05, band.q95),
        )
    for (i, j), band in pp.tails.items():
        _write_csv(
            out / f"tail_{names[i]}_given_{names[j]}.csv",
            ["y", "probability", "q05", "q95"],
            zip(pp.tail_levels[i], band.mean, band.q05, band.q95),
        )


# ---------------------------------------------------------------- fitting


@dataclass
class FitResult:
    samples: list[PosteriorSample]
    selected: PosteriorSample
    report: object
    data: LikelihoodData
    products: PosteriorProducts
    selected_chains: list[int]
    _best: dict | None = None

    def max_posterior(self, candidates: int = 20) -> dict:
        """Observed-data log-likelihood maximized over the highest-posterior draws.

        The sampler's log-likelihood includes the imputed coordinates, so the
        ``candidates`` draws with the largest log posterior are re-scored with
        the censored coordinates integrated out.
        """
        if self._best is None:
            s = self.selected
            order = np.argsort(-s.log_post, kind="stable")[:candidates]
            best = None
            for r in order:
                m = MarginalParams(s.log_scales[r], s.shapes[r], s.regional)
                ll = observed_log_likelihood(self.data, m, s.mixtures[r]).total
                if best is None or ll > best[0]:
                    best = (ll, int(r))
            ll, r = best
            self._best = {
                "log_lik": ll,
                "log_post_augmented": float(s.log_post[r]),
                "iteration": int(s.iterations[r]),
                "plug_in": "maximum-posterior",
            }
        return self._best


def prepare_data(cfg: dict, panel: SeriesPanel | None = None) -> LikelihoodData:
    panel = load_panel(cfg) if panel is None else panel
    tc = _thresholds(cfg, panel)
    rates, tau = _rates_and_tau(cfg, panel, tc)
    fit_panel = panel.since(_recent_start(cfg)) if cfg["recent_only"] else panel
    summary = decluster(fit_panel, tc)
    if summary.n_clusters == 0:
        raise DeclusterError("no cluster above the thresholds")
    return LikelihoodData.from_summary(summary, rates, tau=tau)


def _chain_config(cfg: dict) -> ChainConfig:
    m = cfg["mcmc"]
    kw = {
        "n_chains": m["chains"],
        "iterations": m["iterations"],
        "burn_in": m.get("burn_in"),
        "thin": m["thin"],
        "seed": m["seed"],
        "regional": cfg["regional"],
        "workers": m["workers"],
    }
    if "feasibility_draws" in m:
        kw["feasibility_draws"] = m["feasibility_draws"]
    return ChainConfig(**kw)


def _prior_spec(cfg: dict) -> PriorSpec:
    p = dict(cfg["priors"])
    if "log_scale_mean" in p:
        p["log_scale_mean"] = tuple(p["log_scale_mean"])
    return PriorSpec(**p)


def fit(cfg: dict, panel: SeriesPanel | None = None) -> FitResult:
    data = prepare_data(cfg, panel)
    samples = run_chains(data, _prior_spec(cfg), _chain_config(cfg))
    if sum(s.n_draws for s in samples) == 0:
        raise ValueError("no retained draws")
    report = diagnose(samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        keep = select_chains(samples, report, cfg["mcmc"]["selection"])
    selected = pool(keep)
    pr = cfg["products"]
    products = posterior_products(
        selected,
        data.rates,
        data.thresholds,
        periods=pr.get("return_periods", DEFAULT_RETURN_PERIODS),
        grid_points=pr.get("grid_points", 512),
        tail_points=pr.get("tail_points", 50),
        tail_period=pr.get("tail_period", 1000.0),
        max_draws=pr.get("max_draws", 2000),
    )
    return FitResult(samples, selected, report, data, products, [s.chain for s in keep])


def write_fit(out: Path, res: FitResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_posterior_csv(out / "posterior.csv", res.samples)
    diag = res.report.as_dict()
    diag["selected_chains"] = res.selected_chains
    diag["max_recheck_error"] = max(s.max_recheck_error for s in res.samples)
    _write_json(out / "diagnostics.json", diag)
    _write_json(out / "draws.json", draws_to_json(res.samples))
    _write_json(out / "fit.json", _fit_info(res))
    write_products(out, res.products)


def _fit_info(res: FitResult) -> dict:
    d = res.data
    return {
        "site_names": list(d.site_names),
        "thresholds": d.thresholds.tolist(),
        "zetas": d.rates.zetas.tolist(),
        "tau": d.tau,
        "n_clusters": d.n_clusters,
        "below_days": int(d.below_days),
        "n_blocks": int(d.block_lengths.size),
        "max_posterior": res.max_posterior(),
    }


# ---------------------------------------------------------------- subcommands

GRID = (("regional", True, False), ("local", False, False), ("regional", True, True), ("local", False, True))


def _variant_name(regional: bool, recent: bool) -> str:
    return f"{'regional' if regional else 'local'}-{'recent' if recent else 'full'}"


def run_experiment_grid(cfg: dict, out: Path, panel: SeriesPanel | None = None) -> dict:
    """Fit {regional, local} x {full period, recent only}; failures are reported, others proceed."""
    panel = load_panel(cfg) if panel is None else panel
    results: dict[str, FitResult] = {}
    errors: dict[str, str] = {}
    for _, regional, recent in GRID:
        name = _variant_name(regional, recent)
        vcfg = _merge(cfg, {"regional": regional, "recent_only": recent})
        try:
            res = fit(vcfg, panel)
        except (ChainError, ConstraintError, DiagnosticError, ValueError, FloatingPointError) as exc:
            errors[name] = f"{type(exc).__name__}: {exc}"
            continue
        write_fit(out / name, res)
        results[name] = res
    rows = []
    first = next(iter(results.values()), None)
    if first is not None:
        names = first.products.site_names
        for j, site in enumerate(names):
            for t_idx, T in enumerate(first.products.periods):
                for name in (_variant_name(r, rc) for _, r, rc in GRID):
                    if name not in results:
                        continue
                    band = results[name].products.return_levels[j]
                    if t_idx < band.mean.size:
                        rows.append([site, T, name, band.mean[t_idx], band.q05[t_idx], band.q95[t_idx]])
    _write_csv(out / "comparison.csv", ["site", "T_years", "variant", "posterior_mean", "q05", "q95"], rows)
    par_rows = []
    for name, res in results.items():
        for key, draws in res.selected.marginal_scalars().items():
            q05, q95 = np.quantile(draws, [0.05, 0.95])
            par_rows.append([name, key, draws.mean(), draws.std(ddof=1) if draws.size > 1 else 0.0, q05, q95])
    _write_csv(out / "parameters.csv", ["variant", "parameter", "posterior_mean", "posterior_sd", "q05", "q95"], par_rows)
    lrt = {}
    for era in ("full", "recent"):
        a, b = results.get(f"regional-{era}"), results.get(f"local-{era}")
        if a is None or b is None:
            continue
        la, lb = a.max_posterior()["log_lik"], b.max_posterior()["log_lik"]
        entry = {"loglik_regional": la, "loglik_local": lb, "plug_in": "maximum-posterior"}
        try:
            entry["p_value"] = lrt_regional_shape(la, lb, a.data.n_sites)
        except DiagnosticError as exc:
            entry["error"] = str(exc)
        lrt[era] = entry
    _write_json(out / "grid.json", {"errors": errors, "lrt": lrt, "variants": sorted(results)})
    return {"results": results, "errors": errors, "lrt": lrt}


def cmd_simulate(cfg: dict, out: Path) -> int:
    sim = lookalike_config(cfg["simulate"]["seed"])
    panel, truth = simulate_panel(sim)
    with open(out / "panel.csv", "w", newline="", encoding="utf-8") as fh:
        write_csv(panel, fh)
    (out / "truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    write_manifest(out, "simulate", cfg, {"simulate": cfg["simulate"]["seed"]})
    print(f"wrote {panel.n_days} days x {panel.n_sites} sites to {out / 'panel.csv'}")
    return EXIT_OK


def cmd_decluster(cfg: dict, out: Path) -> int:
    panel = load_panel(cfg)
    if cfg["recent_only"]:
        panel = panel.since(_recent_start(cfg))
    tc = _thresholds(cfg, panel)
    s = decluster(panel, tc)
    names = panel.site_names
    def when(t: int) -> str:
        return panel.date_of(t).isoformat() if panel.start is not None else str(t)

    rows = []
    for cm in s.clusters:
        for j, name in enumerate(names):
            o = cm.observation(j)
            value = "" if o.value is None else o.value
            upper = "+inf" if np.isinf(o.upper) else o.upper
            rows.append([when(cm.start), name, int(o.kind), value, o.lower, upper])
    _write_csv(out / "clusters.csv", ["start_date", "site", "kind", "value", "lower", "upper"], rows)
    _write_csv(
        out / "blocks.csv",
        ["start_date", "length", *[f"bound_{n}" for n in names]],
        ([when(blk.start), blk.length, *("+inf" if np.isinf(b) else b for b in blk.upper_bounds)] for blk in s.blocks),
    )
    info = {
        "n_days": s.n_days,
        "n_clusters": s.n_clusters,
        "cluster_days": s.cluster_days,
        "below_days": s.below_days,
        "missing_days": s.missing_days,
        "undetermined_days": s.undetermined_days,
        "n_blocks": len(s.blocks),
        "mean_cluster_size": s.mean_cluster_size,
        "thresholds": list(s.thresholds),
        "run_length": s.run_length,
    }
    _write_json(out / "summary.json", info)
    write_manifest(out, "decluster", cfg, {"simulate": cfg["simulate"]["seed"]})
    print(json.dumps(info, indent=2))
    return EXIT_OK


def cmd_fit(cfg: dict, out: Path, grid: bool) -> int:
    seeds = {"mcmc": cfg["mcmc"]["seed"], "simulate": cfg["simulate"]["seed"]}
    if grid:
        res = run_experiment_grid(cfg, out)
        write_manifest(out, "fit --grid", cfg, seeds)
        for name, err in res["errors"].items():
            print(f"variant {name} failed: {err}", file=sys.stderr)
        print(json.dumps(res["lrt"], indent=2))
        return EXIT_NUMERIC if res["errors"] else EXIT_OK
    res = fit(cfg)
    write_fit(out, res)
    write_manifest(out, "fit", cfg, seeds)
    _print_summary(res.selected)
    return EXIT_OK


def _load_fit(path: Path) -> tuple[list[PosteriorSample], dict]:
    try:
        draws = json.loads((path / "draws.json").read_text(encoding="utf-8"))
        info = json.loads((path / "fit.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path} is not a fit output directory: {exc.filename} missing") from exc
    samples = draws_from_json(draws)
    if sum(s.n_draws for s in samples) == 0:
        raise ValueError("no retained draws")
    return samples, info


def _summary_rows(sample: PosteriorSample):
    for name, v in sample.scalars().items():
        q05, q95 = np.quantile(v, [0.05, 0.95])
        yield [name, v.mean(), v.std(ddof=1) if v.size > 1 else 0.0, q05, q95]


def _print_summary(sample: PosteriorSample) -> None:
    print(f"{'parameter':<24}{'mean':>12}{'sd':>12}{'q05':>12}{'q95':>12}")
    for name, m, sd, lo, hi in _summary_rows(sample):
        print(f"{name:<24}{m:>12.4g}{sd:>12.4g}{lo:>12.4g}{hi:>12.4g}")


def cmd_summarize(cfg: dict, out: Path, fit_dir: Path) -> int:
    samples, _ = _load_fit(fit_dir)
    sample = pool(samples)
    _write_csv(out / "summary.csv", ["parameter", "posterior_mean", "posterior_sd", "q05", "q95"], _summary_rows(sample))
    write_manifest(out, "summarize", cfg, {})
    _print_summary(sample)
    return EXIT_OK


def cmd_return_levels(cfg: dict, out: Path, fit_dir: Path) -> int:
    samples, info = _load_fit(fit_dir)
    sample = pool(samples)
    periods = cfg["products"].get("return_periods", DEFAULT_RETURN_PERIODS)
    rates = ExceedanceRates(np.asarray(info["zetas"]))
    v = np.asarray(info["thresholds"])
    shortest = 1.0 / (rates.zetas.min() * 365.25)
    periods = [t for t in periods if t >= shortest * (1 + 1e-12)]
    rows = []
    for j, site in enumerate(sample.site_names):
        band = summarize_draws(return_level_draws(sample, j, periods, rates, v))
        rows += [[site, t, m, lo, hi] for t, m, lo, hi in zip(periods, band.mean, band.q05, band.q95)]
    _write_csv(out / "return_levels.csv", ["site", "T_years", "posterior_mean", "q05", "q95"], rows)
    write_manifest(out, "return-levels", cfg, {})
    for row in rows:
        print(",".join(_fmt(x) for x in row))
    return EXIT_OK


def cmd_chi(cfg: dict, out: Path, fit_dir: Path) -> int:
    samples, _ = _load_fit(fit_dir)
    sample = pool(samples)
    rows = []
    for (i, j), draws in sample.chi().items():
        q05, q95 = np.quantile(draws, [0.05, 0.95])
        rows.append([_site_label(sample.site_names, i, j), draws.mean(), q05, q95])
    _write_csv(out / "chi.csv", ["pair", "posterior_mean", "q05", "q95"], rows)
    write_manifest(out, "chi", cfg, {})
    for row in rows:
        print(",".join(_fmt(x) for x in row))
    return EXIT_OK


def cmd_loglik(cfg: dict, out: Path, fit_dir: Path | None, regional_fit: Path | None, local_fit: Path | None) -> int:
    """Observed-data log-likelihood at a fit's maximum-posterior draw, or the regional-shape test of two fits."""
    if regional_fit is not None or local_fit is not None:
        if regional_fit is None or local_fit is None:
            raise ConfigError("the shape test needs both --regional-fit and --local-fit")
        (_, a), (_, b) = _load_fit(regional_fit), _load_fit(local_fit)
        la, lb = a["max_posterior"]["log_lik"], b["max_posterior"]["log_lik"]
        p = lrt_regional_shape(la, lb, len(a["site_names"]))
        result = {"loglik_regional": la, "loglik_local": lb, "p_value": p, "plug_in": "maximum-posterior"}
    else:
        if fit_dir is None:
            raise ConfigError("loglik needs --fit, or --regional-fit with --local-fit")
        _, info = _load_fit(fit_dir)
        result = dict(info["max_posterior"])
    _write_json(out / "loglik.json", result)
    write_manifest(out, "loglik", cfg, {})
    print(json.dumps(result, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (or a manifest.json to rerun)")
    common.add_argument("--seed", type=int, help="override the MCMC and simulation seeds")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--recent-only", action="store_true", help="fit only the systematic era")
    common.add_argument("--regional", action="store_true", help="one shape parameter shared by all sites")

    parser = argparse.ArgumentParser(prog="dmpot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dmpot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write the seeded synthetic lookalike panel")
    sub.add_parser("decluster", parents=[common], help="cluster maxima, blocks and counts")
    p = sub.add_parser("fit", parents=[common], help="run the sampler and write posterior products")
    p.add_argument("--grid", action="store_true", help="fit the regional/local x full/recent grid")
    for name, text in (
        ("summarize", "posterior summary table"),
        ("return-levels", "return-level table"),
        ("chi", "tail-dependence coefficients"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--fit", required=True, type=Path, help="directory written by 'fit'")
    p = sub.add_parser("loglik", parents=[common], help="log-likelihood or regional-shape test")
    p.add_argument("--fit", type=Path)
    p.add_argument("--regional-fit", type=Path)
    p.add_argument("--local-fit", type=Path)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = _apply_flags(load_config(args.config), args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "decluster":
            return cmd_decluster(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, out, args.grid)
        if args.command == "summarize":
            return cmd_summarize(cfg, out, args.fit)
        if args.command == "return-levels":
            return cmd_return_levels(cfg, out, args.fit)
        if args.command == "chi":
            return cmd_chi(cfg, out, args.fit)
        return cmd_loglik(cfg, out, args.fit, args.regional_fit, args.local_fit)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PanelError, DeclusterError, MarginError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, ConstraintError, DiagnosticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining value errors come from inconsistent settings or empty posteriors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if "no retained draws" in str(exc) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
