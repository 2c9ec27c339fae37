import click

from .export import ExportManifest, export_checkpoint
from .reference import write_reference_logits
from .tasks import TEMPLATES, export_task


@click.group()
def main():
    """Export LLaMA-family checkpoints and datasets for the decoding engine."""


@main.command("export-ckpt")
@click.option("--source", required=True, help="Model directory, hub id, or existing SPADECKP file.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def export_ckpt_cmd(source, out_path):
    """Convert a checkpoint into the SPADECKP container."""
    manifest = ExportManifest(source=source, target=out_path)
    meta = export_checkpoint(manifest)
    cfg = meta["config"]
    click.echo(
        f"wrote {out_path}: {cfg['n_layers']} layers, d={cfg['d_model']}, "
        f"V={cfg['vocab_size']}, hash={meta['content_hash'][:12]}"
    )


@main.command("export-task")
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tokenizer", "tokenizer_source", required=True)
@click.option("--template", default="qa", show_default=True, type=click.Choice(sorted(TEMPLATES)))
@click.option("--expect-vocab", type=int, default=None, help="Fail if the tokenizer vocab exceeds this size.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def export_task_cmd(dataset, tokenizer_source, template, expect_vocab, out_path):
    """Pre-tokenize a JSONL dataset into task records, keeping single-token golds."""
    result = export_task(dataset, tokenizer_source, template, out_path, expected_vocab=expect_vocab)
    click.echo(f"wrote {result.written} records, dropped {result.dropped} multi-token golds")


@main.command("reference-logits")
@click.option("--source", required=True, help="Model directory or hub id.")
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def reference_logits_cmd(source, prompts_path, out_path):
    """Record the source runtime's last-position logits for task prompts."""
    n = write_reference_logits(source, prompts_path, out_path)
    click.echo(f"wrote reference logits for {n} prompts")


if __name__ == "__main__":
    main()
