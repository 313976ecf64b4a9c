"""Command-line front end wiring the pipeline end to end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint failure.
Global --config/--seed/--preset feed defaults into every subcommand; each
output carries a manifest with the effective options and their hash.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import dataset as ds
from . import judge as judge_mod
from . import pipeline as pl
from .client import EndpointConfig, VlmError
from .draw import MarkerStyle, stitch as stitch_images
from .geometry import VisibilityParams
from .mock_server import MockVlm, fixed_responder, oracle_responder
from .ply import PlyError
from .render import BevConfig
from .report import read_jsonl, write_audit_jsonl
from .sampling import SamplingError
from .scene import SceneValidationError, load_scene
from .synth import SynthPlacementError, SynthSpec, load_benchmark, synth_scene

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3


class PartialEndpointFailure(RuntimeError):
    pass


class _State:
    def __init__(self, config: dict, seed: int | None, preset: str | None):
        self.config = config
        self.seed = seed if seed is not None else config.get("seed")
        self.preset = preset or config.get("preset")

    def section(self, name: str) -> dict:
        return dict(self.config.get(name, {}))


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file; flags override its fields.")
@click.option("--seed", type=int, default=None, help="Default seed for subcommands.")
@click.option("--preset", type=click.Choice(sorted(["base", "hd", "hdm"])), default=None,
              help="Default resolution preset.")
@click.pass_context
def cli(ctx, config_path, seed, preset):
    """Scene annotation, VLM querying, and evaluation toolchain."""
    config = {}
    if config_path:
        config = json.loads(Path(config_path).read_text())
    ctx.obj = _State(config, seed, preset)


def _style_from(state: _State, radius, adaptive, dropout, dropout_seed) -> MarkerStyle:
    section = state.section("marker")
    kwargs = {}
    if radius is not None:
        kwargs["radius"] = radius
    elif "radius" in section:
        kwargs["radius"] = section["radius"]
    if adaptive is not None:
        kwargs["adaptive"] = adaptive
    elif "adaptive" in section:
        kwargs["adaptive"] = section["adaptive"]
    if dropout is not None:
        kwargs["dropout_fraction"] = dropout
    elif "dropout_fraction" in section:
        kwargs["dropout_fraction"] = section["dropout_fraction"]
    if dropout_seed is not None:
        kwargs["dropout_seed"] = dropout_seed
    elif "dropout_seed" in section:
        kwargs["dropout_seed"] = section["dropout_seed"]
    return MarkerStyle(**kwargs)


def _endpoint_from(state: _State, url, model, auth_env, timeout, max_in_flight,
                   attempts, log_path=None) -> EndpointConfig:
    section = state.section("endpoint")
    base_url = url or section.get("base_url")
    if not base_url:
        raise click.UsageError("no endpoint URL: pass --endpoint-url or set endpoint.base_url")
    return EndpointConfig(
        base_url=base_url,
        model=model or section.get("model", "vlm"),
        auth_env=auth_env if auth_env is not None else section.get("auth_env"),
        timeout_s=timeout if timeout is not None else section.get("timeout_s", 60.0),
        max_in_flight=max_in_flight if max_in_flight is not None
        else section.get("max_in_flight", 4),
        max_attempts=attempts if attempts is not None else section.get("max_attempts", 3),
        backoff_base_s=section.get("backoff_base_s", 0.25),
        log_path=log_path,
    )


@cli.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--objects", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--frames", type=int, default=None, help="Camera path length N.")
@click.option("--points-per-object", type=int, default=None)
@click.option("--room-x", type=float, default=None)
@click.option("--room-y", type=float, default=None)
@click.pass_obj
def synth(state: _State, out_dir, objects, seed, frames, points_per_object, room_x, room_y):
    """Generate a synthetic scene bundle with ground-truth benchmarks."""
    section = state.section("synth")
    kwargs = {"object_count": objects}
    if frames is not None:
        kwargs["n_frames"] = frames
    if points_per_object is not None:
        kwargs["points_per_object"] = points_per_object
    if room_x is not None:
        kwargs["room_x"] = room_x
    if room_y is not None:
        kwargs["room_y"] = room_y
    for key, value in section.items():
        kwargs.setdefault(key, value)
    spec = SynthSpec(**kwargs)
    effective_seed = seed if seed is not None else (state.seed or 0)
    scene = synth_scene(spec, effective_seed)
    root = scene.write(out_dir)
    manifest = {
        "command": "synth",
        "seed": effective_seed,
        "spec": dataclasses.asdict(spec),
    }
    manifest["config_hash"] = pl.config_hash(manifest["spec"] | {"seed": effective_seed})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"wrote scene {scene.bundle.scene_id} with {objects} objects to {root}")


@cli.command()
@click.option("--scene", "scene_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--preset", type=click.Choice(sorted(["base", "hd", "hdm"])), default=None)
@click.option("--frames", type=int, default=None, help="Frames to sample (n).")
@click.option("--radius", type=int, default=None)
@click.option("--adaptive/--no-adaptive", default=None)
@click.option("--dropout", type=float, default=None)
@click.option("--dropout-seed", type=int, default=None)
@click.pass_obj
def annotate(state: _State, scene_dir, out_dir, preset, frames, radius, adaptive,
             dropout, dropout_seed):
    """Render marker-annotated frames, BEV, and the stitched panel."""
    bundle = load_scene(scene_dir)
    options = pl.AnnotateOptions(
        preset=preset or state.preset or "base",
        frames=frames if frames is not None else state.config.get("frames"),
        style=_style_from(state, radius, adaptive, dropout, dropout_seed),
        bev=BevConfig(**state.section("bev")),
        visibility=VisibilityParams(**state.section("visibility")),
    )
    with pl.output_lock(out_dir):
        result = pl.annotate_scene(bundle, out_dir, options)
    click.echo(f"annotated {len(result.frame_paths)} frames + BEV into {result.out_dir}")


@cli.command()
@click.argument("images", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--rows", type=int, required=True)
@click.option("--cols", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def stitch(images, rows, cols, out_path):
    """Stitch image tiles into one row-major grid."""
    from PIL import Image

    tiles = [Image.open(p).convert("RGB") for p in images]
    result = stitch_images(tiles, rows, cols)
    result.image.save(out_path)
    click.echo(f"stitched {len(tiles)} tiles into {out_path} ({cols}x{rows} grid)")


@cli.command()
@click.option("--benchmark", "benchmark_path", type=click.Path(exists=True), required=True)
@click.option("--annotations", "annotate_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--mock", "mock_mode", default=None,
              help="'oracle' answers from the benchmark references; any other "
                   "value is returned verbatim by the mock endpoint.")
@click.option("--endpoint-url", default=None)
@click.option("--model", default=None)
@click.option("--auth-env", default=None)
@click.option("--timeout", type=float, default=None)
@click.option("--max-in-flight", type=int, default=None)
@click.option("--attempts", type=int, default=None)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="JSONL request/response log.")
@click.pass_obj
def query(state: _State, benchmark_path, annotate_dir, out_path, mock_mode,
          endpoint_url, model, auth_env, timeout, max_in_flight, attempts,
          cache_dir, log_path):
    """Send every benchmark question to the endpoint; write exchanges JSONL."""
    benchmark = load_benchmark(benchmark_path)
    mock = None
    try:
        if mock_mode is not None:
            responder = (oracle_responder(benchmark) if mock_mode == "oracle"
                         else fixed_responder(mock_mode))
            mock = MockVlm(responder).start()
            endpoint_url = mock.base_url
            auth_env = auth_env or ""
        endpoint = _endpoint_from(state, endpoint_url, model, auth_env or None,
                                  timeout, max_in_flight, attempts, log_path)
        exchanges = pl.query_benchmark(
            benchmark, annotate_dir, endpoint,
            cache_dir=cache_dir or state.config.get("cache_dir"),
        )
    finally:
        if mock is not None:
            mock.stop()
    pl.write_exchanges(out_path, exchanges)
    manifest = {
        "command": "query",
        "benchmark_id": benchmark["benchmark_id"],
        "endpoint": {"base_url": endpoint.base_url, "model": endpoint.model},
        "config_hash": pl.config_hash({"model": endpoint.model,
                                       "benchmark": benchmark["benchmark_id"]}),
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2))
    failures = [e for e in exchanges if e["error"]]
    click.echo(f"wrote {len(exchanges)} exchanges to {out_path} "
               f"({len(failures)} failed)")
    if failures:
        raise PartialEndpointFailure(f"{len(failures)} of {len(exchanges)} queries failed")


@cli.command()
@click.option("--responses", "responses_path", type=click.Path(exists=True), required=True)
@click.option("--references", "references_path", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Choice(sorted(["qa", "dense_caption", "visual_grounding"])),
              required=True)
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Scene bundle directory (or root of bundles); "
                                 "required for box-based tasks.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_obj
def evaluate(state: _State, responses_path, references_path, task, scenes_dir, out_dir):
    """Score responses against references; write report + per-record audit."""
    responses = read_jsonl(responses_path)
    benchmark = load_benchmark(references_path)
    if benchmark["task"] != task:
        raise ds.DatasetError(
            f"benchmark task {benchmark['task']!r} does not match --task {task!r}"
        )
    if task == "qa":
        report, audit = pl.evaluate_qa(responses, benchmark)
    else:
        if scenes_dir is None:
            raise click.UsageError(f"--scenes is required for task {task}")
        bundles = _load_bundles(scenes_dir)
        if task == "visual_grounding":
            report, audit = pl.evaluate_grounding(responses, benchmark, bundles)
        else:
            report, audit = pl.evaluate_caption(responses, benchmark, bundles)
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    report.write(out_root)
    write_audit_jsonl(out_root / "audit.jsonl", audit)
    manifest = {
        "command": "evaluate",
        "task": task,
        "benchmark_id": benchmark["benchmark_id"],
        "config_hash": pl.config_hash({"task": task,
                                       "benchmark": benchmark["benchmark_id"]}),
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(report.format_table())


def _load_bundles(scenes_dir):
    root = Path(scenes_dir)
    if (root / "cloud.ply").exists():
        bundle = load_scene(root)
        return {bundle.scene_id: bundle}
    bundles = {}
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "cloud.ply").exists():
            bundle = load_scene(child)
            bundles[bundle.scene_id] = bundle
    if not bundles:
        raise SceneValidationError([f"no scene bundles under {root}"])
    return bundles


@cli.command(name="gpt-score")
@click.option("--wins", type=int, default=None)
@click.option("--ties", type=int, default=None)
@click.option("--losses", type=int, default=None)
@click.option("--loss-weight", type=int, default=0, show_default=True,
              help="0 (football convention) or -1.")
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), default=None,
              help="JSONL of pairwise records to judge before scoring.")
@click.option("--mock", "mock_text", default=None,
              help="Judge against an in-process mock returning this text.")
@click.option("--endpoint-url", default=None)
@click.option("--model", default=None)
@click.option("--auth-env", default=None)
@click.option("--judge-seed", type=int, default=None)
@click.pass_obj
def gpt_score_cmd(state: _State, wins, ties, losses, loss_weight, pairs_path,
                  mock_text, endpoint_url, model, auth_env, judge_seed):
    """Aggregate pairwise win/tie/lose counts into the comparison score."""
    if pairs_path is not None:
        rows = read_jsonl(pairs_path)
        records = [
            judge_mod.PairRecord(
                question_id=row["question_id"],
                question=row.get("question", ""),
                ground_truth=row["ground_truth"],
                answer_1=row["answer_1"],
                answer_2=row["answer_2"],
            )
            for row in rows
        ]
        mock = None
        try:
            if mock_text is not None:
                mock = MockVlm(fixed_responder(mock_text)).start()
                endpoint_url = mock.base_url
            endpoint = _endpoint_from(state, endpoint_url, model, auth_env,
                                      None, None, None)
            seed = judge_seed if judge_seed is not None else (state.seed or 0)
            outcome = judge_mod.gpt_judge(records, endpoint, seed=seed)
        finally:
            if mock is not None:
                mock.stop()
        wins, ties, losses = outcome.win, outcome.tie, outcome.lose
        click.echo(f"win={wins} tie={ties} lose={losses} "
                   f"unparseable={outcome.unparseable}")
    if wins is None or ties is None or losses is None:
        raise click.UsageError("provide --wins/--ties/--losses or --pairs")
    score = judge_mod.gpt_score(wins, ties, losses, loss_weight)
    click.echo(f"score={score}")


@cli.command(name="build-dataset")
@click.option("--scenes", "scenes_dir", type=click.Path(exists=True, file_okay=False),
              default=None)
@click.option("--annotations", "annotations_path", type=click.Path(exists=True),
              default=None, help="JSON: [{source, records: [...]}, ...]")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--dry-run", is_flag=True, default=False)
@click.option("--counts", "counts_path", type=click.Path(exists=True), default=None,
              help="Dry run: JSON mapping source -> annotation count.")
@click.option("--frames", type=int, default=None)
@click.option("--template-seed", type=int, default=None)
@click.option("--skip-missing/--fail-missing", default=False)
@click.pass_obj
def build_dataset_cmd(state: _State, scenes_dir, annotations_path, out_dir, dry_run,
                      counts_path, frames, template_seed, skip_missing):
    """Export training records (or verify corpus arithmetic with --dry-run)."""
    config = ds.DatasetConfig(
        frames=frames if frames is not None else state.config.get("frames", 8),
        preset=state.preset or "base",
        template_seed=template_seed if template_seed is not None else (state.seed or 0),
        skip_missing_scenes=skip_missing,
    )
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    if dry_run:
        if counts_path is None:
            raise click.UsageError("--dry-run needs --counts")
        counts = json.loads(Path(counts_path).read_text())
        manifest = ds.dry_run_manifest(counts, config)
        (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2))
        click.echo(f"dry run: total {manifest['total']} records across "
                   f"{len(manifest['per_source'])} sources")
        return
    if scenes_dir is None or annotations_path is None:
        raise click.UsageError("--scenes and --annotations are required without --dry-run")
    bundles = _load_bundles(scenes_dir)
    raw_sources = json.loads(Path(annotations_path).read_text())
    sources = [
        ds.AnnotationSource(entry["source"], tuple(entry["records"]))
        for entry in raw_sources
    ]
    with pl.output_lock(out_root):
        records, manifest = ds.build_dataset(bundles, sources, out_root, config)
        ds.export_records(records, out_root / "records.jsonl")
        (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"wrote {manifest['total']} records to {out_root / 'records.jsonl'}")


_DATA_ERRORS = (
    SceneValidationError, PlyError, SamplingError, SynthPlacementError,
    ds.DatasetError, pl.PipelineError, FileNotFoundError,
    json.JSONDecodeError, ValueError, KeyError,
)


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except PartialEndpointFailure as exc:
        click.echo(f"endpoint failure: {exc}", err=True)
        return EXIT_ENDPOINT
    except VlmError as exc:
        click.echo(f"endpoint failure: {exc}", err=True)
        return EXIT_ENDPOINT
    except _DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
