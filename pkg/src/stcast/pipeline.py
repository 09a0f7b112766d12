"""End-to-end run orchestration.

``run_pipeline`` executes the full sequence on one panel: ingest and
transform targets, build the spatial weight matrix, fit the two-stage
regression, adjust the targets, train the forecaster, sample forecasts,
and score them against a held-out tail of the panel (the last ``horizon``
steps are reserved for evaluation and never seen by estimation, the
scaler, or training).  Sampled trajectories are predictions of the
adjusted series, so the estimated treatment effect is added back to
treated post-period cells before the inverse target transform.

Every run writes a manifest recording the configuration, seed, and
SHA-256 content hashes of all artifacts; a failed run records the failing
stage and flags already-written artifacts as stale.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import dataio
from .causal import Panel, adjust_panel, fit_did, report_parameters
from .config import RunConfig
from .errors import AlignmentError, InsufficientDataError, StcastError
from .forecaster import ForecastModel
from .metrics import score_report
from .spatial import build_spatial_matrix, spatial_matrix_to_csv
from .transforms import fit_target_transform

ARTIFACTS = (
    "spatial_matrix.csv",
    "did_estimate.csv",
    "parameter_report.txt",
    "adjusted_panel.csv",
    "model.npz",
    "forecast_samples.csv",
    "scores.csv",
    "scores_long.csv",
)

# Forecast sampling uses its own stream so that training consumes an
# identical sequence regardless of num_samples.
_FORECAST_SEED_OFFSET = 1


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, config: RunConfig, status: str,
                   failed_stage: str | None = None) -> Path:
    path = out_dir / "manifest.txt"
    lines = [f"status={status}"]
    if failed_stage:
        lines.append(f"failed_stage={failed_stage}")
    for key, value in config.items():
        lines.append(f"config.{key}={value}")
    for name in ARTIFACTS:
        artifact = out_dir / name
        if artifact.exists():
            key = "stale_artifact" if status != "ok" else "artifact_sha256"
            lines.append(f"{key}.{name}={_sha256(artifact)}")
    path.write_text("\n".join(lines) + "\n")
    return path


@contextmanager
def _stage(name: str):
    try:
        yield
    except StcastError as err:
        err.stage = name
        err.args = (f"stage '{name}': {err.args[0]}",) + err.args[1:]
        raise


def model_label(config: RunConfig) -> str:
    suffix = "full"
    if config.no_spatial:
        suffix = "nospatial"
    elif config.no_factors:
        suffix = "nofactors"
    return f"{config.distribution}-{suffix}"


def run_pipeline(config: RunConfig, regions=None, panel=None) -> dict[str, Path]:
    """Execute all stages; returns a name -> path map of artifacts.

    ``regions``/``panel`` may be passed in-memory (e.g. straight from the
    generator); otherwise they are ingested from the configured paths.
    """
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / name for name in ARTIFACTS}
    try:
        artifacts = _run_stages(config, out_dir, paths, regions, panel)
    except StcastError as err:
        write_manifest(out_dir, config, "failed",
                       failed_stage=getattr(err, "stage", "unknown"))
        raise
    write_manifest(out_dir, config, "ok")
    artifacts["manifest.txt"] = out_dir / "manifest.txt"
    return artifacts


def _run_stages(config, out_dir, paths, regions, panel):
    with _stage("ingest"):
        if panel is None or regions is None:
            regions, panel = dataio.ingest(
                config.regions, config.panel, config.onset_date()
            )
        horizon = config.horizon
        if panel.t <= horizon:
            raise InsufficientDataError(
                f"panel has {panel.t} steps, cannot hold out horizon={horizon}"
            )
        cond_panel = panel.window(panel.t - horizon)

    with _stage("transform"):
        transform = fit_target_transform(cond_panel.y, config.target_transform)
        cond_t = Panel(
            region_ids=cond_panel.region_ids,
            times=cond_panel.times,
            y=transform.apply(cond_panel.y),
            c=cond_panel.c,
            treated=cond_panel.treated,
            post=cond_panel.post,
        )

    with _stage("spatial"):
        S = build_spatial_matrix(regions, config.alpha)
        spatial_matrix_to_csv(S, paths["spatial_matrix.csv"])

    with _stage("estimate"):
        estimate = fit_did(cond_t, S, no_spatial=config.no_spatial,
                           no_factors=config.no_factors)
        dataio.write_did_estimate_csv(estimate, paths["did_estimate.csv"])
        dataio.write_parameter_report(report_parameters(estimate),
                                      paths["parameter_report.txt"])

    with _stage("adjust"):
        adjusted = adjust_panel(cond_t, estimate, S, no_spatial=config.no_spatial)
        dataio.write_adjusted_csv(cond_t, adjusted, paths["adjusted_panel.csv"])

    with _stage("train"):
        model = ForecastModel(config.model_config())
        model.fit(adjusted, cond_t)
        model.save(paths["model.npz"])

    with _stage("forecast"):
        dist = model.forecast(
            adjusted.z, cond_t.y,
            horizon=horizon,
            num_samples=config.num_samples,
            seed=config.seed + _FORECAST_SEED_OFFSET,
        )
        # Samples predict the adjusted series; restore the estimated
        # treatment effect on treated post-period cells, then undo the
        # target transform.
        t_start = panel.t - horizon
        effect = estimate.delta * np.outer(
            panel.treated, panel.post[t_start:]
        )
        samples_t = dist.samples + effect[:, :, None]
        samples = transform.invert(samples_t)
        forecast_dates = panel.times[t_start:]
        dataio.write_forecast_samples_csv(
            samples, panel.region_ids, forecast_dates,
            paths["forecast_samples.csv"],
        )

    with _stage("evaluate"):
        truth = panel.y[:, t_start:]
        report = score_report(samples, truth, region_ids=panel.region_ids)
        dataio.write_scores_csv(report, paths["scores.csv"])
        dataio.write_scores_long_csv(report, model_label(config), horizon,
                                     paths["scores_long.csv"])

    return dict(paths)


def evaluate_files(forecast_path, truth_panel_path, out_dir,
                   model: str = "external"):
    """Score a forecast_samples.csv against a truth panel.csv.

    Cells are aligned on (region_id, date); any forecast cell missing
    from the truth file is an alignment error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    region_ids, dates, samples = dataio.read_forecast_samples(forecast_path)
    truth_map = dataio.read_truth_values(truth_panel_path)
    observed = np.empty((len(region_ids), len(dates)))
    for i, rid in enumerate(region_ids):
        for j, date in enumerate(dates):
            key = (rid, date)
            if key not in truth_map:
                raise AlignmentError(
                    f"truth panel has no value for ({rid}, {date.isoformat()})"
                )
            observed[i, j] = truth_map[key]
    report = score_report(samples, observed, region_ids=region_ids)
    scores_path = out_dir / "scores.csv"
    long_path = out_dir / "scores_long.csv"
    dataio.write_scores_csv(report, scores_path)
    dataio.write_scores_long_csv(report, model, len(dates), long_path)
    return report, {"scores.csv": scores_path, "scores_long.csv": long_path}
