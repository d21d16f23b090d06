"""Operator command line: generate, train, evaluate, report, verify.

Every command resolves its configuration from (in increasing precedence)
built-in defaults, an optional JSON config file (``--config``), and
explicit flags, then serializes the result as ``run_config.json`` in its
output directory so any run can be reproduced from its artifacts alone.

Exit codes: 0 success, 1 validation or I/O error, 2 verification failure
(``gradcheck`` only).
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import session_io
from .datagen import (
    GeneratorConfig,
    class_frequency_report,
    foreground_fraction,
    generate_dataset,
)
from .errors import DriveDetectError
from .metrics import EvaluationReport, evaluate, render_table, reports_to_csv
from .model import (
    DEFAULT_REDUCE_CHANNELS,
    ArchitectureVariant,
    ModelConfig,
    build_model,
)
from .taxonomy import class_id, class_name
from .train import TrainConfig, load_checkpoint, make_batch_plan, save_checkpoint, train
from .verify import run_all_checks

_VARIANT_CHOICES = [v.value for v in ArchitectureVariant]


def _fail(message) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read config file {path}: {exc}")


def _write_run_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@click.group()
def main() -> None:
    """Multimodal per-frame driver behavior detection toolkit."""


# ---------------------------------------------------------------------------


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Generator seed.")
@click.option("--sessions", "n_sessions", type=int, default=None, help="Number of sessions.")
@click.option("--frames", type=int, default=None, help="Frames per session.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory.")
def cmd_gen_data(config_path, seed, n_sessions, frames, out_dir) -> None:
    """Generate a synthetic session dataset and print its class statistics."""
    file_cfg = _load_config_file(config_path).get("generator", {})
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if n_sessions is not None:
        overrides["n_sessions"] = n_sessions
    if frames is not None:
        overrides["frames_per_session"] = frames
    try:
        gen = GeneratorConfig.from_json_dict({**file_cfg, **overrides})
        gen.validate()
        sessions = generate_dataset(gen)
        out = Path(out_dir)
        for session in sessions:
            session_io.write_session(session, out / session.session_id)
        _write_run_config(out, {"command": "gen-data", "generator": gen.to_json_dict()})
    except (DriveDetectError, OSError, TypeError) as exc:
        _fail(exc)

    click.echo(f"wrote {len(sessions)} sessions to {out_dir}")
    click.echo(f"foreground fraction: {foreground_fraction(sessions):.4f}")
    click.echo("class frame counts:")
    for cid, count in class_frequency_report(sessions).items():
        click.echo(f"  {class_name(cid):<22s} {count}")


# ---------------------------------------------------------------------------


def _resolve_model_config(file_cfg: dict, variant, hidden_size, sessions) -> ModelConfig:
    section = dict(file_cfg.get("model", {}))
    if variant is not None:
        section["variant"] = variant
    if hidden_size is not None:
        section["hidden_size"] = hidden_size
    section.setdefault("variant", ArchitectureVariant.FUSION_ALL.value)
    reference = sessions[0]
    if "stream_shapes" not in section:
        section["stream_shapes"] = {k: list(v) for k, v in reference.stream_shapes.items()}
    section.setdefault("can_dim", reference.can_dim)
    section.setdefault("reduce_channels", dict(DEFAULT_REDUCE_CHANNELS))
    section.setdefault("can_feature_dim", 64)
    section.setdefault("hidden_size", 256)
    section.setdefault("n_classes", 12)
    return ModelConfig.from_json_dict(section)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--data", "data_dir", type=click.Path(), required=True, help="Session directory.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Run directory.")
@click.option("--variant", type=click.Choice(_VARIANT_CHOICES), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--segment-length", type=int, default=None)
@click.option("--lanes", "n_lanes", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--hidden-size", type=int, default=None)
def cmd_train(
    config_path, data_dir, out_dir, variant, seed, epochs, lr,
    segment_length, n_lanes, gamma, alpha, hidden_size,
) -> None:
    """Train one architecture variant on a session directory."""
    file_cfg = _load_config_file(config_path)
    try:
        sessions = session_io.load_sessions_dir(data_dir)
        model_config = _resolve_model_config(file_cfg, variant, hidden_size, sessions)

        section = dict(file_cfg.get("train", {}))
        for key, value in [
            ("seed", seed), ("epochs", epochs), ("lr", lr),
            ("segment_length", segment_length), ("n_lanes", n_lanes),
            ("gamma", gamma), ("alpha", alpha),
        ]:
            if value is not None:
                section[key] = value
        train_config = TrainConfig(**section)
        train_config.validate()

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model = build_model(model_config, seed=train_config.seed)
        plan = make_batch_plan(
            sessions, train_config.n_lanes, train_config.segment_length, train_config.seed
        )
        log_path = out / "train_log.txt"
        lines = train(model, sessions, plan, train_config, log_path=log_path)
        ckpt_path = out / "checkpoint.ckpt"
        save_checkpoint(model, step=len(lines), path=ckpt_path)
        _write_run_config(
            out,
            {
                "command": "train",
                "data": str(data_dir),
                "model": model_config.to_json_dict(),
                "train": dataclasses.asdict(train_config),
                "paths": {"checkpoint": ckpt_path.name, "log": log_path.name},
            },
        )
    except (DriveDetectError, OSError, TypeError) as exc:
        _fail(exc)
    click.echo(f"trained {model_config.variant.value} for {len(lines)} steps")
    click.echo(f"final step loss: {lines[-1].split(',')[2]}")
    click.echo(f"checkpoint: {ckpt_path}")


# ---------------------------------------------------------------------------


@main.command("eval")
@click.option("--data", "data_dir", type=click.Path(), required=True, help="Session directory.")
@click.option("--ckpt", "ckpt_paths", type=click.Path(), multiple=True, required=True,
              help="Checkpoint file; repeat for a multi-column table.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Run directory.")
def cmd_eval(data_dir, ckpt_paths, out_dir) -> None:
    """Score checkpoints on a session directory; writes text and CSV reports."""
    try:
        sessions = session_io.load_sessions_dir(data_dir)
        reports: dict[str, EvaluationReport] = {}
        for path in ckpt_paths:
            model, _ = load_checkpoint(path)
            column = model.config.variant.value
            suffix = 2
            while column in reports:
                column = f"{model.config.variant.value}#{suffix}"
                suffix += 1
            reports[column] = evaluate(model, sessions)
        table = render_table(reports)
        csv_text = reports_to_csv(reports)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table)
        (out / "report.csv").write_text(csv_text)
        _write_run_config(
            out,
            {
                "command": "eval",
                "data": str(data_dir),
                "checkpoints": [str(p) for p in ckpt_paths],
                "paths": {"table": "report.txt", "csv": "report.csv"},
            },
        )
    except (DriveDetectError, OSError) as exc:
        _fail(exc)
    click.echo(table, nl=False)


# ---------------------------------------------------------------------------


@main.command("report")
@click.option("--run", "run_dir", type=click.Path(), required=True,
              help="Run directory holding train_log.txt and/or report.csv.")
def cmd_report(run_dir) -> None:
    """Summarize a run directory: loss per epoch, plus any evaluation table."""
    run = Path(run_dir)
    log_path = run / "train_log.txt"
    csv_path = run / "report.csv"
    if not log_path.is_file() and not csv_path.is_file():
        _fail(f"nothing to report: no train_log.txt or report.csv in {run_dir}")

    if log_path.is_file():
        per_epoch: dict[int, list[float]] = {}
        fg: list[float] = []
        for line in log_path.read_text().splitlines():
            _, epoch, loss, fg_frac = line.split(",")
            per_epoch.setdefault(int(epoch), []).append(float(loss))
            fg.append(float(fg_frac))
        n_steps = sum(len(v) for v in per_epoch.values())
        click.echo(f"steps: {n_steps}  epochs: {len(per_epoch)}")
        for epoch in sorted(per_epoch):
            mean = sum(per_epoch[epoch]) / len(per_epoch[epoch])
            click.echo(f"epoch {epoch}: mean loss {mean:.6f}")
        first = sum(per_epoch[min(per_epoch)]) / len(per_epoch[min(per_epoch)])
        last = sum(per_epoch[max(per_epoch)]) / len(per_epoch[max(per_epoch)])
        if first > 0:
            click.echo(f"final/first epoch loss ratio: {last / first:.4f}")
        click.echo(f"mean foreground fraction: {sum(fg) / len(fg):.4f}")

    if csv_path.is_file():
        try:
            reports = _reports_from_csv(csv_path.read_text())
        except (DriveDetectError, KeyError, ValueError) as exc:
            _fail(f"malformed report.csv: {exc}")
        click.echo(render_table(reports), nl=False)


def _reports_from_csv(text: str) -> dict[str, EvaluationReport]:
    import csv as _csv
    import io

    per_variant: dict[str, dict[int, float]] = {}
    absent: dict[str, list[int]] = {}
    for row in _csv.DictReader(io.StringIO(text)):
        if row["class"] == "mean":
            continue
        cid = class_id(row["class"])
        per_variant.setdefault(row["variant"], {})
        absent.setdefault(row["variant"], [])
        if row["ap_percent"] == "":
            absent[row["variant"]].append(cid)
        else:
            per_variant[row["variant"]][cid] = float(row["ap_percent"])
    return {
        variant: EvaluationReport.from_class_aps(aps, absent=absent[variant])
        for variant, aps in per_variant.items()
    }


# ---------------------------------------------------------------------------


@main.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Optionally write the verification report here.")
def cmd_gradcheck(seed, out_dir) -> None:
    """Finite-difference and state-carry verification; exit 2 on any failure."""
    results = run_all_checks(seed=seed)
    width = max(len(r.name) for r in results)
    lines = [
        f"{r.name:<{width}s}  max_rel_error {r.max_rel_error:.3e}  "
        f"tolerance {r.tolerance:.0e}  {'PASS' if r.passed else 'FAIL'}"
        for r in results
    ]
    text = "\n".join(lines) + "\n"
    click.echo(text, nl=False)
    if out_dir is not None:
        try:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "gradcheck_report.txt").write_text(text)
            _write_run_config(out, {"command": "gradcheck", "seed": seed})
        except OSError as exc:
            _fail(exc)
    if not all(r.passed for r in results):
        click.echo("verification FAILED", err=True)
        sys.exit(2)
    click.echo("all checks passed")


if __name__ == "__main__":
    main()
