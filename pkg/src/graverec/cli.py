"""Command line mirror of the HTTP API so the whole workflow runs headless."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import records as records_mod
from . import synthkit
from .engine import Engine
from .errors import GraverecError, QueueEmpty
from .store import Store


def _engine(db: str) -> Engine:
    return Engine(Store(db))


@click.group()
def main():
    """Grave-record extraction pipeline and validation workflow."""


@main.command("import")
@click.option("--db", required=True, help="sqlite store path")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
def import_cmd(db, manifest_path):
    """Register a document from a manifest (pages as png_path entries)."""
    engine = _engine(db)
    manifest = json.loads(Path(manifest_path).read_text())
    document = engine.import_manifest(manifest, base_dir=Path(manifest_path).parent)
    click.echo(document.id)


@main.command()
@click.option("--db", required=True)
@click.option("--document", "document_id", required=True)
@click.argument("jsonl", type=click.Path(exists=True))
def detections(db, document_id, jsonl):
    """Ingest detection JSON lines for a document."""
    engine = _engine(db)
    count = engine.ingest_detections(document_id, Path(jsonl).read_text())
    click.echo(f"ingested {count}")


@main.command()
@click.option("--db", required=True)
@click.option("--document", "document_id", required=True)
def assemble(db, document_id):
    """Group detections into grave trees and create records."""
    engine = _engine(db)
    created = engine.assemble_document(document_id)
    click.echo(f"created {created} records")


@main.command("validate-batch")
@click.option("--db", required=True)
@click.option("--document", "document_id", required=True)
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True),
              help="ground-truth JSON driving the scripted validation")
@click.option("--north-mode", type=click.Choice(["manual", "accept"]), default="manual")
def validate_batch(db, document_id, truth_path, north_mode):
    """Run the six-step wizard for every queued record from a truth file."""
    engine = _engine(db)
    truth = json.loads(Path(truth_path).read_text())
    done = synthkit.validate_from_truth(engine, document_id, truth, north_mode)
    click.echo(f"validated {done} records")


@main.command()
@click.option("--db", required=True)
@click.option("--document", "document_id", required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--include-all", is_flag=True, default=False)
@click.option("-o", "--out", type=click.Path(), default=None)
def export(db, document_id, fmt, include_all, out):
    """Export validated records."""
    engine = _engine(db)
    text = engine.export_document(document_id, fmt, include_all)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--db", required=True)
@click.option("--document", "document_id", required=True)
@click.option("--kind", type=click.Choice(["rose", "outlines", "pca"]), required=True)
@click.option("--sector", type=int, default=10)
def stats(db, document_id, kind, sector):
    """Orientation rose, outline stack or PCA projection as JSON."""
    engine = _engine(db)
    if kind == "rose":
        result = engine.stats_rose(document_id, sector)
    elif kind == "outlines":
        result = engine.stats_outlines(document_id)
    else:
        result = engine.stats_pca(document_id)
    click.echo(json.dumps(result))


@main.command()
@click.argument("candidate", type=click.Path(exists=True))
@click.argument("baseline", type=click.Path(exists=True))
def compare(candidate, baseline):
    """Error metric between two CSV exports (candidate vs baseline)."""
    report = records_mod.compare_to_baseline(
        Path(candidate).read_text(), Path(baseline).read_text()
    )
    click.echo(json.dumps(report))


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--pages", "n_pages", type=int, default=1)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--noise-speckle", type=float, default=0.0)
@click.option("--noise-drop", type=float, default=0.0)
def synth(seed, n_pages, out_dir, noise_speckle, noise_drop):
    """Generate synthetic catalogue pages with detections and ground truth."""
    params = synthkit.SynthParams(
        noise=synthkit.NoiseParams(speckle_density=noise_speckle, drop_probability=noise_drop)
    )
    corpus = synthkit.generate_corpus(seed, n_pages, params)
    synthkit.write_corpus(corpus, out_dir)
    click.echo(f"wrote {n_pages} pages to {out_dir}")


@main.command()
@click.option("--db", required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
def serve(db, host, port):
    """Run the HTTP API."""
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(_engine(db)), host=host, port=port)


def entry():  # pragma: no cover
    try:
        main()
    except GraverecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entry()
