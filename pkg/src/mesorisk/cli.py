"""Command-line pipeline: spectrum, detect, stability, calibrate, simulate.

Each subcommand resolves its settings from built-in defaults, an optional
flat ``key = value`` config file, and command-line flags, with the command
line winning. All referenced paths are checked up front, every output file
is written deterministically (no timestamps, shortest-repr floats), and a
manifest with content hashes of inputs and outputs makes replays
verifiable byte for byte.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from importlib.metadata import PackageNotFoundError, version as _dist_version

import click
import numpy as np

from .community import community_name, detect_strength_null, hierarchy
from .errors import ConfigError, DataError, NumericalError
from .factors import (
    VARIANTS,
    CalibratedModel,
    build_factors,
    calibrate,
    correlation_error_report,
    orthogonalize,
    variant_name,
)
from .matrixio import save_matrix_csv
from .panels import (
    Resolution,
    SpreadPanel,
    load_panel,
    log_returns,
    read_meta,
    standardize,
)
from .partitions import stability_study
from .reports import (
    calibration_document,
    composition_rows,
    detection_document,
    hierarchy_from_document,
    load_returns_csv,
    save_returns_csv,
    sha256_file,
    write_csv,
    write_json,
)
from .risk import load_portfolio_csv, quantile_report, schematic_portfolio, bind_portfolio
from .rmt import correlation, decompose, shuffle_test

try:
    VERSION = _dist_version("mesorisk")
except PackageNotFoundError:  # running from a source tree without install
    VERSION = "0.0.0"

SCHEMATIC_NAMES = ("A", "B", "C", "D")


def _as_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    """Fully resolved settings for one command invocation."""

    input: str | None = None
    meta: str | None = None
    detection: str | None = None
    portfolio: str = "A,B,C,D"
    out_dir: str = "mesorisk_out"
    resolution: str = "1m"
    resolutions: str = "1d,2d,1w,2w,1m"
    mode: str = "multiresolution"
    window_days: int = 126
    seed: int = 0
    restarts: int = 10
    variant: str = "M1,M2,M3,M4,M5,M6"
    paths: int = 1_000_000
    alphas: str = "0.99,0.995,0.999"
    workers: int = 1
    include_below_bulk: bool = True
    biased_baseline: bool = False
    market_sign_threshold: float = 0.95
    max_depth: int = 2
    min_size: int = 4
    max_missing_frac: float = 0.10
    max_fill_days: int = 5

    def manifest_config(self) -> dict:
        """Every setting that shapes the outputs.

        out_dir only places files and workers only schedules blocks, so
        neither belongs in the recorded configuration: replays with
        different values must stay byte-identical.
        """
        config = {f.name: getattr(self, f.name) for f in fields(self)}
        del config["out_dir"]
        del config["workers"]
        return config


_FIELD_PARSERS = {
    "str": str,
    "int": int,
    "float": float,
    "bool": _as_bool,
}


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and # comments ignored."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, str] = {}
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}"
                )
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def _split(text: str) -> list[str]:
    return [token.strip() for token in text.split(",") if token.strip()]


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    """Merge defaults, config file, and CLI overrides (CLI wins)."""
    file_values = read_config_file(config_path) if config_path else {}
    values: dict[str, object] = {}
    for spec in fields(RunConfig):
        base = str(spec.type).replace(" | None", "")
        parse = _FIELD_PARSERS[base]
        if overrides.get(spec.name) is not None:
            values[spec.name] = overrides[spec.name]
        elif spec.name in file_values:
            try:
                values[spec.name] = parse(file_values[spec.name])
            except ValueError as exc:
                raise ConfigError(f"config key {spec.name!r}: {exc}") from exc
    cfg = RunConfig(**values)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    for name, value, minimum in (
        ("restarts", cfg.restarts, 1),
        ("paths", cfg.paths, 1),
        ("workers", cfg.workers, 1),
        ("window_days", cfg.window_days, 2),
        ("max_depth", cfg.max_depth, 1),
        ("min_size", cfg.min_size, 2),
        ("max_fill_days", cfg.max_fill_days, 0),
    ):
        if value < minimum:
            raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    if not 0.0 <= cfg.max_missing_frac < 1.0:
        raise ConfigError(
            f"max_missing_frac must be in [0, 1), got {cfg.max_missing_frac}"
        )
    if not 0.5 < cfg.market_sign_threshold <= 1.0:
        raise ConfigError(
            "market_sign_threshold must be in (0.5, 1], got "
            f"{cfg.market_sign_threshold}"
        )
    if cfg.mode not in ("multiresolution", "sliding_window"):
        raise ConfigError(
            f"mode must be 'multiresolution' or 'sliding_window', got {cfg.mode!r}"
        )
    try:
        Resolution.parse(cfg.resolution)
        for token in _split(cfg.resolutions):
            Resolution.parse(token)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for token in _split(cfg.alphas):
        try:
            alpha = float(token)
        except ValueError as exc:
            raise ConfigError(f"invalid alpha {token!r}") from exc
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {token}")
    if not _split(cfg.alphas):
        raise ConfigError("alphas is empty")
    for token in _split(cfg.variant):
        try:
            variant_name(token)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if not _split(cfg.variant):
        raise ConfigError("variant list is empty")
    if not _split(cfg.portfolio):
        raise ConfigError("portfolio list is empty")


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise ConfigError(f"missing required {what} file (flag --{what} or config key '{what}')")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _variant_list(cfg: RunConfig) -> list[str]:
    names: list[str] = []
    for token in _split(cfg.variant):
        name = variant_name(token)
        if name not in names:
            names.append(name)
    return names


def _alpha_list(cfg: RunConfig) -> tuple[float, ...]:
    return tuple(float(token) for token in _split(cfg.alphas))


def _out_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _write_manifest(cfg: RunConfig, command: str, inputs, outputs, extra=None) -> str:
    manifest = {
        "schema": "mesorisk/manifest/1",
        "artifact_version": 1,
        "tool": {"name": "mesorisk", "version": VERSION},
        "command": command,
        "seed": cfg.seed,
        "config": cfg.manifest_config(),
        "inputs": {path: sha256_file(path) for path in inputs if path},
        "outputs": {
            name: sha256_file(_out_path(cfg, name)) for name in sorted(outputs)
        },
    }
    if extra:
        manifest.update(extra)
    name = f"manifest_{command}.json"
    write_json(_out_path(cfg, name), manifest)
    return name


def _load_spread_panel(cfg: RunConfig) -> SpreadPanel:
    _require_file(cfg.input, "input")
    if cfg.meta is not None:
        _require_file(cfg.meta, "meta")
    panel = load_panel(
        cfg.input,
        cfg.meta,
        max_missing_frac=cfg.max_missing_frac,
        max_fill_days=cfg.max_fill_days,
    )
    report = panel.load_report
    if report is not None and report.dropped:
        click.echo(f"ingestion dropped {len(report.dropped)} issuer(s)")
    return panel


def _artifact_matches(manifest: dict, cfg: RunConfig, artifact_path: str) -> bool:
    config = manifest.get("config", {})
    for key in ("resolution", "max_missing_frac", "max_fill_days"):
        if config.get(key) != getattr(cfg, key):
            return False
    current = {cfg.input: sha256_file(cfg.input)}
    if cfg.meta is not None:
        current[cfg.meta] = sha256_file(cfg.meta)
    if manifest.get("inputs", {}) != current:
        return False
    recorded = manifest.get("outputs", {}).get("returns_panel.csv")
    return recorded is not None and recorded == sha256_file(artifact_path)


def _returns_panel(cfg: RunConfig):
    """Return panel at cfg.resolution, reusing a spectrum artifact when valid."""
    _require_file(cfg.input, "input")
    if cfg.meta is not None:
        _require_file(cfg.meta, "meta")
    manifest_path = _out_path(cfg, "manifest_spectrum.json")
    artifact_path = _out_path(cfg, "returns_panel.csv")
    if os.path.isfile(manifest_path) and os.path.isfile(artifact_path):
        try:
            with open(manifest_path) as handle:
                manifest = json.load(handle)
        except (json.JSONDecodeError, OSError):
            manifest = None
        if manifest is not None and _artifact_matches(manifest, cfg, artifact_path):
            click.echo("reusing returns panel artifact returns_panel.csv")
            meta = read_meta(cfg.meta) if cfg.meta is not None else {}
            return load_returns_csv(artifact_path, cfg.resolution, meta=meta)
    panel = _load_spread_panel(cfg)
    return log_returns(panel, cfg.resolution)


# ---------------------------------------------------------------------------
# stages


def _stage_spectrum(cfg: RunConfig) -> None:
    panel = _load_spread_panel(cfg)
    returns = log_returns(panel, cfg.resolution)
    std = standardize(returns)
    corr = correlation(std)
    dec = decompose(corr, market_sign_threshold=cfg.market_sign_threshold)
    shuffled = shuffle_test(std, seed=cfg.seed)

    eigenvalues = dec.eigenvalues
    bulk_fraction = float(dec.bounds.contains(eigenvalues).mean())
    class_counts = {
        tag: int(len(dec.indices(tag)))
        for tag in ("market", "group", "random", "below_bulk")
    }

    outputs: list[str] = []
    save_returns_csv(_out_path(cfg, "returns_panel.csv"), returns)
    outputs.append("returns_panel.csv")

    write_csv(
        _out_path(cfg, "eigenvalues.csv"),
        ["index", "eigenvalue", "classification"],
        [
            [i, eigenvalues[i], dec.classification[i]]
            for i in range(len(eigenvalues))
        ],
    )
    outputs.append("eigenvalues.csv")

    hi = float(max(eigenvalues.max(), dec.bounds.lambda_plus)) * 1.05
    counts, edges = np.histogram(eigenvalues, bins=60, range=(0.0, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    q = std.n_obs / std.n_series
    lo_b, hi_b = dec.bounds.lambda_minus, dec.bounds.lambda_plus
    with np.errstate(invalid="ignore"):
        density = np.where(
            (centers > lo_b) & (centers < hi_b),
            q * np.sqrt(np.maximum((hi_b - centers) * (centers - lo_b), 0.0))
            / (2.0 * np.pi * np.maximum(centers, 1e-300)),
            0.0,
        )
    write_csv(
        _out_path(cfg, "density.csv"),
        ["bin_left", "bin_right", "count", "noise_density"],
        [
            [edges[i], edges[i + 1], int(counts[i]), density[i]]
            for i in range(len(counts))
        ],
    )
    outputs.append("density.csv")

    write_csv(
        _out_path(cfg, "shuffle_eigenvalues.csv"),
        ["index", "eigenvalue"],
        [[i, v] for i, v in enumerate(shuffled.eigenvalues)],
    )
    outputs.append("shuffle_eigenvalues.csv")

    report = panel.load_report
    summary = {
        "schema": "mesorisk/spectrum/1",
        "resolution": cfg.resolution,
        "n_series": std.n_series,
        "n_obs": std.n_obs,
        "lambda_minus": float(dec.bounds.lambda_minus),
        "lambda_plus": float(dec.bounds.lambda_plus),
        "bulk_fraction": bulk_fraction,
        "shuffle_bulk_fraction": float(shuffled.fraction_in_bulk),
        "eigenvalue_classes": class_counts,
        "market_index": dec.market_index,
        "market_sign_fraction": dec.market_sign_fraction,
        "noise_fraction": float(dec.noise_fraction()),
        "total_weight": float(corr.total_weight()),
        "ingestion": {
            "dropped": report.dropped if report else [],
            "filled_gaps": report.filled_gaps if report else 0,
        },
    }
    write_json(_out_path(cfg, "spectrum_summary.json"), summary)
    outputs.append("spectrum_summary.json")

    click.echo(
        f"panel: {std.n_series} series, {std.n_obs} observations at {cfg.resolution}"
    )
    click.echo(
        f"noise band [{dec.bounds.lambda_minus:.6f}, {dec.bounds.lambda_plus:.6f}]"
    )
    click.echo(
        f"bulk fraction {bulk_fraction:.6f} (shuffle {shuffled.fraction_in_bulk:.6f})"
    )
    market = (
        f"market mode at index {dec.market_index}"
        if dec.market_index is not None
        else "no market mode"
    )
    click.echo(f"group eigenvalues {class_counts['group']}; {market}")

    _write_manifest(
        cfg,
        "spectrum",
        [cfg.input, cfg.meta],
        outputs,
        extra={
            "panel_artifact": {
                "file": "returns_panel.csv",
                "resolution": cfg.resolution,
            }
        },
    )


def _stage_detect(cfg: RunConfig) -> dict:
    returns = _returns_panel(cfg)
    std = standardize(returns)
    corr = correlation(std)
    dec = decompose(corr, market_sign_threshold=cfg.market_sign_threshold)
    tree = hierarchy(
        std,
        max_depth=cfg.max_depth,
        seed=cfg.seed,
        restarts=cfg.restarts,
        min_size=cfg.min_size,
        include_below_bulk=cfg.include_below_bulk,
        market_sign_threshold=cfg.market_sign_threshold,
    )
    params = {
        "seed": cfg.seed,
        "restarts": cfg.restarts,
        "include_below_bulk": cfg.include_below_bulk,
        "market_sign_threshold": cfg.market_sign_threshold,
        "max_depth": cfg.max_depth,
        "min_size": cfg.min_size,
        "resolution": cfg.resolution,
    }
    document = detection_document(tree, dec, corr.total_weight(), params)

    outputs: list[str] = []
    write_json(_out_path(cfg, "detection.json"), document)
    outputs.append("detection.json")

    if std.meta:
        for field_name in ("sector", "region"):
            name = f"composition_{field_name}.csv"
            write_csv(
                _out_path(cfg, name),
                ["community", field_name, "count"],
                composition_rows(tree, std.meta, field_name),
            )
            outputs.append(name)
    else:
        click.echo("note: metadata absent; composition breakdowns omitted")

    if cfg.biased_baseline:
        baseline = detect_strength_null(std, seed=cfg.seed, restarts=cfg.restarts)
        write_json(
            _out_path(cfg, "biased_baseline.json"),
            {
                "schema": "mesorisk/partition/1",
                "method": "strength_product_null",
                "note": (
                    "strength-product null is biased for correlation "
                    "matrices; comparison only"
                ),
                "quality": float(baseline.quality),
                "labels": {
                    issuer: community_name(int(label))
                    for issuer, label in zip(std.issuers, baseline.labels)
                },
            },
        )
        outputs.append("biased_baseline.json")

    partition = tree.partition
    click.echo(f"status: {document['status']}")
    click.echo(
        f"communities {partition.n_communities}, quality {partition.quality:.6f}"
    )
    leaves = sum(1 for node in tree.walk() if not node.children)
    click.echo(f"subcommunities {leaves}")

    _write_manifest(cfg, "detect", [cfg.input, cfg.meta], outputs)
    return document


def _stage_stability(cfg: RunConfig) -> None:
    panel = _load_spread_panel(cfg)
    steps = [Resolution.parse(token).step for token in _split(cfg.resolutions)]
    report = stability_study(
        panel,
        cfg.mode,
        seed=cfg.seed,
        restarts=cfg.restarts,
        resolutions=steps,
        window_days=cfg.window_days,
        include_below_bulk=cfg.include_below_bulk,
        market_sign_threshold=cfg.market_sign_threshold,
    )

    outputs: list[str] = []
    save_matrix_csv(_out_path(cfg, "vi_matrix.csv"), report.vi_matrix, report.labels)
    outputs.append("vi_matrix.csv")
    write_csv(
        _out_path(cfg, "vi_vs_first.csv"),
        ["label", "vi"],
        [[label, v] for label, v in zip(report.labels, report.vi_vs_first)],
    )
    outputs.append("vi_vs_first.csv")

    issuers = panel.issuers
    save_matrix_csv(
        _out_path(cfg, "cooccurrence.csv"), report.cooccurrence.entries, issuers
    )
    outputs.append("cooccurrence.csv")
    write_csv(
        _out_path(cfg, "cooccurrence_order.csv"),
        ["position", "issuer_id"],
        [
            [pos, issuers[int(idx)]]
            for pos, idx in enumerate(report.cooccurrence.order)
        ],
    )
    outputs.append("cooccurrence_order.csv")

    write_csv(
        _out_path(cfg, "partitions.csv"),
        ["issuer_id", *report.labels],
        [
            [
                issuer,
                *[
                    community_name(int(part.labels[j]))
                    for part in report.partitions
                ],
            ]
            for j, issuer in enumerate(issuers)
        ],
    )
    outputs.append("partitions.csv")

    k = len(report.labels)
    if k > 1:
        iu = np.triu_indices(k, 1)
        max_vi = float(report.vi_matrix[iu].max())
        mean_vi = float(report.vi_matrix[iu].mean())
    else:
        max_vi = 0.0
        mean_vi = 0.0
    summary = {
        "schema": "mesorisk/stability/1",
        "mode": cfg.mode,
        "labels": report.labels,
        "window_days": cfg.window_days,
        "resolutions": _split(cfg.resolutions),
        "n_partitions": k,
        "n_communities": [int(p.n_communities) for p in report.partitions],
        "max_pairwise_vi": max_vi,
        "mean_pairwise_vi": mean_vi,
        "vi_vs_first": [float(v) for v in report.vi_vs_first],
    }
    write_json(_out_path(cfg, "stability_summary.json"), summary)
    outputs.append("stability_summary.json")

    click.echo(f"{cfg.mode}: {k} partitions compared")
    click.echo(f"max pairwise VI {max_vi:.6f}, mean {mean_vi:.6f}")

    _write_manifest(cfg, "stability", [cfg.input, cfg.meta], outputs)


def _calibrated_models(
    cfg: RunConfig, detection_doc: dict | None
) -> tuple[dict[str, CalibratedModel], object, object, list[str]]:
    """Calibrate every requested variant; returns models, factors, panel, inputs."""
    variants = _variant_list(cfg)
    needed = {t for name in variants for t in VARIANTS[name]}
    inputs = [cfg.input, cfg.meta]

    panel = _load_spread_panel(cfg)
    returns = standardize(log_returns(panel, cfg.resolution))

    groups = None
    if needed & {"community", "subcommunity"}:
        offender = next(
            name
            for name in variants
            if set(VARIANTS[name]) & {"community", "subcommunity"}
        )
        if detection_doc is None:
            if cfg.detection is None:
                raise ConfigError(
                    f"variant {offender} needs community labels; pass "
                    "--detection pointing at a detection.json written by "
                    "`mesorisk detect`"
                )
            _require_file(cfg.detection, "detection")
            with open(cfg.detection) as handle:
                detection_doc = json.load(handle)
            inputs.append(cfg.detection)
        try:
            _, community, subcommunity = hierarchy_from_document(detection_doc)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        missing = [i for i in returns.issuers if i not in community]
        if missing:
            raise DataError(
                f"detection document lacks {len(missing)} issuer(s) present "
                f"in the panel, e.g. {missing[:3]}"
            )
        groups = {"community": community, "subcommunity": subcommunity}
    if needed & {"industry", "region"} and not panel.meta:
        offender = next(
            name for name in variants if set(VARIANTS[name]) & {"industry", "region"}
        )
        raise ConfigError(
            f"variant {offender} needs sector/region metadata; pass --meta"
        )

    factors = orthogonalize(build_factors(returns, groups=groups))
    models = {name: calibrate(returns, factors, name) for name in variants}
    return models, factors, returns, inputs


def _stage_calibrate(cfg: RunConfig, detection_doc: dict | None = None):
    models, factors, returns, inputs = _calibrated_models(cfg, detection_doc)
    empirical = correlation(returns)

    outputs: list[str] = []
    r2_rows = []
    error_rows = []
    for name, model in models.items():
        error = correlation_error_report(model, empirical)
        document = calibration_document(model, factors)
        document["correlation_errors"] = {
            "mean": error.mean,
            "sd": error.sd,
            "mean_abs": error.mean_abs,
            "max_abs": error.max_abs,
            "tail_mass": error.tail_mass,
            "tail_threshold": error.tail_threshold,
        }
        file_name = f"calibration_{name}.json"
        write_json(_out_path(cfg, file_name), document)
        outputs.append(file_name)

        r2 = model.r_squared
        r2_rows.append(
            [
                name,
                len(r2),
                float(r2.mean()),
                float(r2.std()),
                float(r2.min()),
                float(r2.max()),
            ]
        )
        error_rows.append(
            [name, error.mean, error.sd, error.mean_abs, error.max_abs, error.tail_mass]
        )
        click.echo(
            f"{name}: {model.n_factors} factor column(s), "
            f"mean R^2 {float(r2.mean()):.4f}"
        )

    write_csv(
        _out_path(cfg, "r2_summary.csv"),
        ["variant", "n_issuers", "mean_r2", "sd_r2", "min_r2", "max_r2"],
        r2_rows,
    )
    outputs.append("r2_summary.csv")
    write_csv(
        _out_path(cfg, "correlation_error_summary.csv"),
        ["variant", "mean", "sd", "mean_abs", "max_abs", "tail_mass"],
        error_rows,
    )
    outputs.append("correlation_error_summary.csv")

    type_of = dict(zip(factors.names, factors.types))
    write_csv(
        _out_path(cfg, "factor_diagnostics.csv"),
        ["factor", "type", "gamma", "r_squared", "t_stat", "p_value", "residual_sd"],
        [
            [
                name,
                type_of.get(name, ""),
                diag.gamma,
                diag.r_squared,
                diag.t_stat,
                diag.p_value,
                diag.residual_sd,
            ]
            for name, diag in factors.diagnostics.items()
        ],
    )
    outputs.append("factor_diagnostics.csv")

    _write_manifest(cfg, "calibrate", inputs, outputs)
    return models


def _independence_model(issuers: list[str]) -> CalibratedModel:
    """Degenerate one-factor model with zero systematic share per issuer."""
    m = len(issuers)
    return CalibratedModel(
        variant="independent",
        issuers=list(issuers),
        factor_names=["global"],
        alpha=np.ones((m, 1)),
        alpha_hat=np.zeros((m, 1)),
        beta=np.zeros(m),
        psi=np.zeros(m),
        omega=np.array([[1.0]]),
        r_squared=np.zeros(m),
        group_assignment=[["global"] for _ in range(m)],
        n_obs=0,
    )


def _portfolio_file_name(token: str, seen: set[str]) -> str:
    if token in SCHEMATIC_NAMES:
        base = token
    else:
        stem = os.path.splitext(os.path.basename(token))[0]
        base = "".join(c if c.isalnum() or c in "-_" else "_" for c in stem) or "portfolio"
    name = base
    counter = 2
    while name in seen:
        name = f"{base}_{counter}"
        counter += 1
    seen.add(name)
    return name


def _stage_simulate(
    cfg: RunConfig,
    models: dict[str, CalibratedModel] | None = None,
    detection_doc: dict | None = None,
) -> None:
    alphas = _alpha_list(cfg)
    inputs: list[str] = []
    if models is None and cfg.input is not None:
        models, _, _, inputs = _calibrated_models(cfg, detection_doc)
    if models is None:
        models = {}
        click.echo(
            "note: no panel given; simulating with independent defaults only"
        )

    outputs: list[str] = []
    portfolio_summaries: dict[str, dict] = {}
    manifest_portfolios: dict[str, dict] = {}
    seen_names: set[str] = set()
    normal_reference = None

    for token in _split(cfg.portfolio):
        if token in SCHEMATIC_NAMES:
            base = schematic_portfolio(token)
            source = "schematic"
        else:
            _require_file(token, "portfolio")
            base = load_portfolio_csv(token)
            source = token
            inputs.append(token)
        if models:
            first = next(iter(models.values()))
            portfolio = bind_portfolio(base, first, seed=cfg.seed)
            model_list = list(models.values())
        else:
            portfolio = base
            model_list = [_independence_model([p.issuer_id for p in base.positions])]

        report = quantile_report(
            portfolio,
            model_list,
            alphas=alphas,
            n_paths=cfg.paths,
            seed=cfg.seed,
            workers=cfg.workers,
        )
        normal_reference = report.normal_reference

        label = _portfolio_file_name(token, seen_names)
        file_name = f"var_report_{label}.csv"
        write_csv(
            _out_path(cfg, file_name),
            ["variant", *[f"var_{a:g}" for a in alphas], "tail_ratio_999_99"],
            [
                [variant, *report.var_table[k], report.tail_ratios[k]]
                for k, variant in enumerate(report.variants)
            ],
        )
        outputs.append(file_name)

        exposure_sum = float(sum(p.exposure for p in portfolio.positions))
        detail = {
            "kind": portfolio.kind,
            "source": source,
            "n_positions": portfolio.size,
            "exposure_sum": exposure_sum,
            "normal_reference": float(report.normal_reference),
            "variants": {
                variant: {
                    "var": {f"{a:g}": float(v) for a, v in zip(alphas, report.var_table[k])},
                    "tail_ratio": report.tail_ratios[k],
                }
                for k, variant in enumerate(report.variants)
            },
        }
        portfolio_summaries[token] = detail
        manifest_portfolios[token] = {
            "kind": portfolio.kind,
            "n_positions": portfolio.size,
            "exposure_sum": exposure_sum,
        }

        for k, variant in enumerate(report.variants):
            cells = " ".join(
                f"VaR[{a:g}]={float(report.var_table[k][j])!r}"
                for j, a in enumerate(alphas)
            )
            click.echo(f"{token} {variant}: {cells}")

    summary = {
        "schema": "mesorisk/simulate/1",
        "alphas": list(alphas),
        "n_paths": cfg.paths,
        "seed": cfg.seed,
        "normal_reference": float(normal_reference) if normal_reference else None,
        "portfolios": portfolio_summaries,
    }
    write_json(_out_path(cfg, "simulate_summary.json"), summary)
    outputs.append("simulate_summary.json")

    _write_manifest(
        cfg,
        "simulate",
        inputs,
        outputs,
        extra={"portfolios": manifest_portfolios},
    )


def _stage_pipeline(cfg: RunConfig) -> None:
    _stage_spectrum(cfg)
    detection_doc = _stage_detect(cfg)
    _stage_stability(cfg)

    variants = _variant_list(cfg)
    if not cfg.meta:
        feasible = [
            name
            for name in variants
            if not set(VARIANTS[name]) & {"industry", "region"}
        ]
        skipped = [name for name in variants if name not in feasible]
        if skipped:
            click.echo(
                "note: no metadata; skipping variant(s) " + ", ".join(skipped)
            )
        variants = feasible
    if not variants:
        raise ConfigError("no calibratable variant remains; pass --meta")
    stage_cfg = replace(cfg, variant=",".join(variants))

    models = _stage_calibrate(stage_cfg, detection_doc=detection_doc)
    _stage_simulate(stage_cfg, models=models, detection_doc=detection_doc)

    stage_manifests = [
        f"manifest_{name}.json"
        for name in ("spectrum", "detect", "stability", "calibrate", "simulate")
    ]
    _write_manifest(
        cfg, "pipeline", [cfg.input, cfg.meta], stage_manifests,
        extra={"stages": ["spectrum", "detect", "stability", "calibrate", "simulate"]},
    )


# ---------------------------------------------------------------------------
# click wiring


def _dispatch(stage, kwargs) -> None:
    config_path = kwargs.pop("config", None)
    try:
        cfg = resolve_config(config_path, kwargs)
        os.makedirs(cfg.out_dir, exist_ok=True)
        stage(cfg)
    except ConfigError as exc:
        _die(2, exc)
    except DataError as exc:
        _die(3, exc)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _die(4, exc)
    except FileNotFoundError as exc:
        _die(2, f"file not found: {exc.filename or exc}")
    except ValueError as exc:
        _die(3, exc)


def _die(code: int, message) -> None:
    click.echo(f"error: {message}", err=True)
    raise SystemExit(code)


def _common_options(fn):
    options = [
        click.option("--config", type=str, default=None, help="Flat key = value config file."),
        click.option("--out-dir", "out_dir", type=str, default=None, help="Output directory."),
        click.option("--seed", type=int, default=None, help="Top-level seed."),
        click.option("--restarts", type=int, default=None, help="Optimizer restarts."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _panel_options(fn):
    options = [
        click.option("--input", "input", type=str, default=None, help="Spread panel CSV (date,issuer_id,spread_bps)."),
        click.option("--meta", type=str, default=None, help="Issuer metadata CSV."),
        click.option("--resolution", type=str, default=None, help="Return resolution (1d, 2d, 1w, 2w, 1m)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _variant_option(fn):
    return click.option(
        "--variant",
        "variant_tokens",
        multiple=True,
        help="Model variant(s); repeat or comma-separate (default all six).",
    )(fn)


def _merge_variants(kwargs) -> None:
    tokens = kwargs.pop("variant_tokens", ())
    kwargs["variant"] = ",".join(tokens) if tokens else None


@click.group()
@click.version_option(VERSION, prog_name="mesorisk")
def main():
    """Spread-panel spectra, community structure, factor models, and VaR."""


@main.command()
@_common_options
@_panel_options
def spectrum(**kwargs):
    """Eigenvalue spectrum of the return correlation matrix."""
    _dispatch(_stage_spectrum, kwargs)


@main.command()
@_common_options
@_panel_options
@click.option("--max-depth", "max_depth", type=int, default=None, help="Hierarchy depth (1 = flat).")
@click.option("--min-size", "min_size", type=int, default=None, help="Smallest community to subdivide.")
@click.option("--include-below-bulk/--no-include-below-bulk", "include_below_bulk", default=None)
@click.option("--biased-baseline/--no-biased-baseline", "biased_baseline", default=None, help="Also emit the strength-null baseline partition.")
def detect(**kwargs):
    """Noise-filtered community detection with a two-level hierarchy."""
    _dispatch(_stage_detect, kwargs)


@main.command()
@_common_options
@_panel_options
@click.option("--mode", type=str, default=None, help="multiresolution or sliding_window.")
@click.option("--window-days", "window_days", type=int, default=None, help="Sliding window length in trading days.")
@click.option("--resolutions", type=str, default=None, help="Comma list of resolutions for multiresolution mode.")
def stability(**kwargs):
    """Partition stability across resolutions or time windows."""
    _dispatch(_stage_stability, kwargs)


@main.command("calibrate")
@_common_options
@_panel_options
@_variant_option
@click.option("--detection", type=str, default=None, help="detection.json from `mesorisk detect` (needed for M5/M6).")
def calibrate_cmd(**kwargs):
    """Calibrate factor-model variants and report fit quality."""
    _merge_variants(kwargs)
    _dispatch(_stage_calibrate, kwargs)


@main.command("simulate")
@_common_options
@_panel_options
@_variant_option
@click.option("--detection", type=str, default=None, help="detection.json from `mesorisk detect` (needed for M5/M6).")
@click.option("--portfolio", type=str, default=None, help="Comma list of schematic names (A,B,C,D) and/or portfolio CSV paths.")
@click.option("--paths", type=int, default=None, help="Monte Carlo paths per model.")
@click.option("--alphas", type=str, default=None, help="Comma list of VaR confidence levels.")
@click.option("--workers", type=int, default=None, help="Worker threads for simulation blocks.")
def simulate_cmd(**kwargs):
    """Monte Carlo default losses and VaR for benchmark or user portfolios."""
    _merge_variants(kwargs)
    _dispatch(_stage_simulate, kwargs)


@main.command()
@_common_options
@_panel_options
@_variant_option
@click.option("--mode", type=str, default=None, help="Stability mode.")
@click.option("--window-days", "window_days", type=int, default=None)
@click.option("--max-depth", "max_depth", type=int, default=None)
@click.option("--min-size", "min_size", type=int, default=None)
@click.option("--portfolio", type=str, default=None)
@click.option("--paths", type=int, default=None)
@click.option("--alphas", type=str, default=None)
@click.option("--workers", type=int, default=None)
def pipeline(**kwargs):
    """All stages in order: spectrum, detect, stability, calibrate, simulate."""
    _merge_variants(kwargs)
    _dispatch(_stage_pipeline, kwargs)


if __name__ == "__main__":
    main()
