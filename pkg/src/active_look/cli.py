"""Command-line interface: run, arbitrate, render, eval, sweep."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click

from .arbitration import arbitrate, select_budgeted
from .config import EndpointsConfig, NoiseConfig, PipelineConfig, load_config
from .errors import ActiveLookError, PipelineAbort
from .evalmetrics import (
    EvalRecord,
    SynonymMap,
    chair,
    format_table,
    mme_scores,
    pope_metrics,
    split_by_scale,
)
from .experts import FixtureExpert, HttpExpert, load_fixture, load_image, propose
from .pipeline import _partition_to_dict, _selection_to_dict, run, run_fixture
from .reasoner import HttpReasoner, MockReasoner
from .rendering import save_views


@click.group()
def main():
    """Conflict-driven dual-detector visual verification pipeline."""


def _load_cfg(config_path: str | None) -> tuple[PipelineConfig, EndpointsConfig]:
    try:
        return load_config(config_path)
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot load config: {exc}")


def _resolve_image(image: str, fixture):
    path = Path(image)
    if path.exists():
        return load_image(path)
    if fixture is not None:
        scene = fixture.scene(image)
        if scene is not None and scene.image_path:
            return load_image(scene.image_path, image_id=scene.image_id)
    raise click.ClickException(f"image {image!r} is neither a file nor a fixture scene id")


@main.command(name="run")
@click.option("--image", required=True, help="Image path, or a fixture scene id.")
@click.option("--query", required=True, help="The question to answer.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--fixtures", type=click.Path(exists=True), default=None)
@click.option("--mock-reasoner", is_flag=True, help="Use the offline rule-based reasoner.")
@click.option("--noise", type=float, default=None, help="Enable noise injection below this IoU.")
@click.option("--out", type=click.Path(), default=None, help="Directory for trace and views.")
@click.option("--policy", type=click.Choice(["conflict", "union", "none"]), default=None)
def run_cmd(image, query, config_path, fixtures, mock_reasoner, noise, out, policy):
    """Answer one question about one image."""
    cfg, endpoints = _load_cfg(config_path)
    if noise is not None:
        cfg = dataclasses.replace(cfg, noise=NoiseConfig(enabled=True, max_iou=noise))
    if policy is not None:
        cfg = dataclasses.replace(cfg, policy=policy)

    fixture = load_fixture(fixtures) if fixtures else None
    vocabulary = fixture.labels() if fixture else None
    if fixture is not None:
        expert_a, expert_b = FixtureExpert(fixture, "A"), FixtureExpert(fixture, "B")
    else:
        expert_a = HttpExpert("A", endpoints.detect_url_a, timeout=endpoints.timeout_s)
        expert_b = HttpExpert("B", endpoints.detect_url_b, timeout=endpoints.timeout_s)
    if mock_reasoner:
        if fixture is None:
            raise click.ClickException("--mock-reasoner needs --fixtures for ground truth")
        reasoner = MockReasoner(fixture)
    else:
        reasoner = HttpReasoner(endpoints.generate_url, timeout=endpoints.timeout_s)

    scene_image = _resolve_image(image, fixture)
    out_dir = Path(out) if out else None
    try:
        verdict, trace = run(
            scene_image, query, expert_a, expert_b, reasoner, cfg,
            vocabulary=vocabulary, out_dir=out_dir,
        )
    except PipelineAbort as exc:
        if out_dir and exc.trace is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            exc.trace.save(out_dir / f"{exc.trace.trace_id}_trace.json")
        raise click.ClickException(f"run aborted: {exc}")
    except ActiveLookError as exc:
        raise click.ClickException(str(exc))

    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_path = out_dir / f"{trace.trace_id}_trace.json"
        trace.save(trace_path)
        click.echo(f"trace: {trace_path}")
    click.echo(f"verdict: {verdict.answer}")


@main.command(name="arbitrate")
@click.option("--fixtures", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None, help="Output JSONL (default stdout).")
def arbitrate_cmd(fixtures, config_path, out):
    """Partition each fixture scene's recorded proposals; no rendering or reasoning."""
    cfg, _ = _load_cfg(config_path)
    fixture = load_fixture(fixtures)
    expert_a, expert_b = FixtureExpert(fixture, "A"), FixtureExpert(fixture, "B")
    lines = []
    for image_id in sorted(fixture.scenes):
        scene = fixture.scenes[image_id]
        targets = sorted({d.label for dets in scene.detections.values() for d in dets})
        image = _fixture_scene_stub(scene)
        if targets:
            pa = propose(expert_a, image, targets, cfg.score_threshold_a)
            pb = propose(expert_b, image, targets, cfg.score_threshold_b)
        else:
            pa, pb = [], []
        partition = arbitrate(pa, pb, cfg.arbitration)
        selection = select_budgeted(partition, cfg.arbitration)
        lines.append(
            json.dumps(
                {
                    "image_id": image_id,
                    "partition": _partition_to_dict(partition),
                    "selection": _selection_to_dict(selection),
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    text = "\n".join(lines) + ("\n" if lines else "")
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {len(lines)} partitions to {out}")
    else:
        click.echo(text, nl=False)


def _fixture_scene_stub(scene):
    """A SceneImage stand-in for fixture-only operations that never touch pixels."""
    from PIL import Image

    from .experts import SceneImage

    return SceneImage(
        image_id=scene.image_id,
        raster=Image.new("RGB", (scene.dims.width, scene.dims.height)),
    )


@main.command(name="render")
@click.option("--fixtures", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def render_cmd(fixtures, out, config_path):
    """Write highlight/zoom views for every fixture scene."""
    cfg, _ = _load_cfg(config_path)
    fixture = load_fixture(fixtures)
    expert_a, expert_b = FixtureExpert(fixture, "A"), FixtureExpert(fixture, "B")
    from .pipeline import render_run_views

    count = 0
    for image_id in sorted(fixture.scenes):
        scene = fixture.scenes[image_id]
        if not scene.image_path:
            continue
        image = load_image(scene.image_path, image_id=scene.image_id)
        targets = sorted({d.label for dets in scene.detections.values() for d in dets})
        pa = propose(expert_a, image, targets, cfg.score_threshold_a) if targets else []
        pb = propose(expert_b, image, targets, cfg.score_threshold_b) if targets else []
        partition = arbitrate(pa, pb, cfg.arbitration)
        selection = select_budgeted(partition, cfg.arbitration)
        views = render_run_views(image, partition, selection, cfg)
        save_views(views, out, image_id)
        count += 1
    click.echo(f"rendered views for {count} scenes into {out}")


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _join_records(pred_path: str, gt_path: str) -> list[EvalRecord]:
    preds = {str(r["id"]): r for r in _read_jsonl(pred_path)}
    records = []
    for g in _read_jsonl(gt_path):
        rid = str(g["id"])
        if rid not in preds:
            raise click.ClickException(f"prediction missing for ground-truth id {rid!r}")
        p = preds[rid]
        records.append(
            EvalRecord(
                id=rid,
                prediction=str(p["prediction"]),
                answer=g.get("answer"),
                question=g.get("question"),
                category=g.get("category", p.get("category")),
                image_id=g.get("image_id", p.get("image_id")),
                a_rel=g.get("a_rel"),
            )
        )
    return records


def _pope_rows(metrics) -> list[list[str]]:
    return [[
        f"{metrics.accuracy:.4f}", f"{metrics.precision:.4f}",
        f"{metrics.recall:.4f}", f"{metrics.f1:.4f}",
        str(metrics.tp), str(metrics.fp), str(metrics.fn), str(metrics.tn),
    ]]


@main.command(name="eval")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--task", required=True, type=click.Choice(["pope", "mme", "chair"]))
@click.option("--gt", required=True, type=click.Path(exists=True))
@click.option("--synonyms", type=click.Path(exists=True), default=None)
@click.option("--by-scale", is_flag=True)
@click.option("--plus-mode", type=click.Choice(["paired", "strict_parse"]), default="paired")
@click.option("--json-out", type=click.Path(), default=None)
def eval_cmd(pred, task, gt, synonyms, by_scale, plus_mode, json_out):
    """Score a prediction file against ground truth."""
    report: dict = {"task": task}
    try:
        if task == "pope":
            records = _join_records(pred, gt)
            metrics = pope_metrics(records)
            headers = ["accuracy", "precision", "recall", "f1", "tp", "fp", "fn", "tn"]
            click.echo(format_table(headers, _pope_rows(metrics)))
            report["overall"] = metrics.to_dict()
            if by_scale:
                report["by_scale"] = {}
                rows = []
                for bin_name, recs in sorted(split_by_scale(records).items()):
                    m = pope_metrics(recs)
                    report["by_scale"][bin_name] = m.to_dict()
                    rows.append([bin_name, str(len(recs)), f"{m.accuracy:.4f}", f"{m.f1:.4f}"])
                click.echo("")
                click.echo(format_table(["scale", "n", "accuracy", "f1"], rows))
        elif task == "mme":
            if by_scale:
                raise click.ClickException("--by-scale is only supported for --task pope")
            records = _join_records(pred, gt)
            scores = mme_scores(records, plus_mode=plus_mode)
            rows = [
                [c.category, f"{c.accuracy:.4f}", f"{c.accuracy_plus:.4f}", f"{c.score:.2f}"]
                for c in scores.values()
            ]
            total = sum(c.score for c in scores.values())
            click.echo(format_table(["category", "accuracy", "accuracy+", "score"], rows))
            click.echo(f"total score: {total:.2f}")
            report["categories"] = {k: v.to_dict() for k, v in scores.items()}
            report["total_score"] = total
        else:  # chair
            if by_scale:
                raise click.ClickException("--by-scale is only supported for --task pope")
            if not synonyms:
                raise click.ClickException("--task chair requires --synonyms")
            synonym_map = SynonymMap.from_json(synonyms)
            preds = _read_jsonl(pred)
            records = [
                EvalRecord(
                    id=str(r["id"]),
                    prediction=str(r["prediction"]),
                    image_id=str(r["image_id"]),
                )
                for r in preds
            ]
            gt_objects = {str(g["image_id"]): list(g["objects"]) for g in _read_jsonl(gt)}
            result = chair(records, gt_objects, synonym_map)
            click.echo(
                format_table(
                    ["chair_s", "chair_i", "recall"],
                    [[f"{result.chair_s:.4f}", f"{result.chair_i:.4f}", f"{result.recall:.4f}"]],
                )
            )
            report["chair"] = result.to_dict()
    except ActiveLookError as exc:
        raise click.ClickException(str(exc))
    if json_out:
        Path(json_out).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(f"json report: {json_out}")


@main.command(name="sweep")
@click.option("--param", required=True, type=click.Choice(["zoom_scale", "tau_base"]))
@click.option("--values", required=True, help="Comma-separated parameter values.")
@click.option("--fixtures", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--json-out", type=click.Path(), default=None)
def sweep_cmd(param, values, fixtures, config_path, json_out):
    """Accuracy/F1 across parameter values, offline on a fixture corpus."""
    cfg, _ = _load_cfg(config_path)
    fixture = load_fixture(fixtures)
    try:
        parsed_values = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise click.ClickException(f"bad --values: {exc}")
    if not parsed_values:
        raise click.ClickException("no values to sweep")

    rows = []
    report = {"param": param, "points": []}
    for value in parsed_values:
        if param == "zoom_scale":
            point_cfg = dataclasses.replace(cfg, zoom_scale=value)
        else:
            point_cfg = dataclasses.replace(
                cfg, arbitration=dataclasses.replace(cfg.arbitration, tau_base=value)
            )
        results = run_fixture(fixture, point_cfg)
        records = [
            EvalRecord(id=scene.image_id, prediction=verdict.raw_text, answer=scene.answer)
            for scene, verdict, _ in results
            if scene.answer
        ]
        if not records:
            raise click.ClickException("fixture has no scenes with question+answer")
        metrics = pope_metrics(records)
        rows.append([f"{value:g}", f"{metrics.accuracy:.4f}", f"{metrics.f1:.4f}"])
        report["points"].append(
            {"value": value, "accuracy": metrics.accuracy, "f1": metrics.f1}
        )
    click.echo(format_table([param, "accuracy", "f1"], rows))
    if json_out:
        Path(json_out).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(f"json report: {json_out}")


if __name__ == "__main__":
    main(prog_name="active-look")
