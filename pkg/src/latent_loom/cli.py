"""Command-line entry points: experiment panels, one-off training, serving.

Every command exits 0 on success; failures print one ``error: <Type>: <msg>``
line to stderr and exit nonzero.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import experiments
from .data_ingest import load_mnist, strip_labels, subsample_stratified
from .dgm_model import LossWeights, Model, ModelConfig
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint


@click.group()
@click.version_option()
def main():
    """Latent-space annotation toolkit."""


def _load(data_dir: str, subsample: float, seed: int):
    ds = load_mnist(data_dir, "train")
    if subsample < 1.0:
        ds = subsample_stratified(ds, subsample, seed)
    return ds


def _fail(e: Exception) -> None:
    click.echo(f"error: {type(e).__name__}: {e}", err=True)
    sys.exit(1)


@main.command()
@click.argument("panel", type=click.Choice(["fig2a", "fig2b", "fig2c", "collapse"]))
@click.option("--seed", default=42, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--data-dir", default="data/mnist", show_default=True)
@click.option("--subsample", default=0.1, show_default=True, help="stratified fraction of the training split")
@click.option("--pretrain-epochs", default=50, show_default=True)
@click.option("--epochs", default=50, show_default=True)
@click.option("--beta-kl", default=1000.0, show_default=True, help="KL weight (collapse panel only)")
@click.option("--latent-dim", type=click.Choice(["2", "3"]), default="2", show_default=True)
def experiment(panel, seed, out_dir, data_dir, subsample, pretrain_epochs, epochs, beta_kl, latent_dim):
    """Run one experiment panel and write its artifacts under --out."""
    try:
        ds = _load(data_dir, subsample, seed)
        click.echo(f"{panel}: {ds.n} samples, seed {seed}")
        if panel == "collapse":
            m = experiments.run_collapse_probe(
                ds, beta_kl, seed=seed, epochs=epochs, out_dir=out_dir, latent_dim=int(latent_dim)
            )
            click.echo(f"collapse: mean_mu_norm={m.mean_mu_norm:.4f} mean_sigma={m.mean_sigma:.4f}")
        else:
            runner = {"fig2a": experiments.run_fig2a, "fig2b": experiments.run_fig2b, "fig2c": experiments.run_fig2c}[panel]
            results = runner(
                ds,
                out_dir,
                seed=seed,
                pretrain_epochs=pretrain_epochs,
                epochs=epochs,
                latent_dim=int(latent_dim),
                progress=click.echo,
            )
            for name, m in results.items():
                sil = "n/a" if m.silhouette is None else f"{m.silhouette:.4f}"
                acc = "n/a" if m.classifier_accuracy is None else f"{m.classifier_accuracy:.4f}"
                click.echo(f"{name}: silhouette={sil} accuracy={acc} spread={m.spread:.4f}")
        click.echo(f"ok: wrote {out_dir}")
    except Exception as e:
        _fail(e)


@main.command()
@click.option("--epochs", default=5, show_default=True)
@click.option("--beta-kl", default=3.0, show_default=True)
@click.option("--beta-classifier", default=100.0, show_default=True)
@click.option("--labeled-fraction", default=1.0, show_default=True)
@click.option("--latent-dim", type=click.Choice(["2", "3"]), default="2", show_default=True)
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--data-dir", default="data/mnist", show_default=True)
@click.option("--subsample", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--resume/--no-resume", default=True, show_default=True, help="continue from --checkpoint if it exists")
def train(epochs, beta_kl, beta_classifier, labeled_fraction, latent_dim, checkpoint, data_dir, subsample, seed, batch_size, resume):
    """Train for a number of epochs and save (or extend) a checkpoint.

    Resuming advances the data-order and noise streams past the epochs
    already completed, so a split run reproduces the unsplit run exactly
    when seed and hyperparameters match.
    """
    try:
        ds = _load(data_dir, subsample, seed)
        if labeled_fraction < 1.0:
            ds = strip_labels(ds, labeled_fraction, seed)
        state = None
        start_epoch = 0
        if resume and checkpoint.exists():
            loaded = load_checkpoint(checkpoint)
            model, state = loaded.model, loaded.state
            start_epoch = int(loaded.extra.get("epochs_completed", 0))
            click.echo(f"resumed {checkpoint} at epoch {start_epoch}")
        else:
            model = Model(ModelConfig(latent_dim=int(latent_dim)), seed=seed)
        # fit() counts epochs absolutely: run start_epoch+1 .. start_epoch+epochs
        cfg = TrainConfig(
            epochs=start_epoch + epochs,
            batch_size=batch_size,
            weights=LossWeights(beta_kl=beta_kl, beta_classifier=beta_classifier),
            seed=seed,
            snapshot_every=1,
        )
        click.echo(f"training {ds.n} samples ({ds.labeled_count} labeled), epochs {start_epoch + 1}..{start_epoch + epochs}")

        def on_epoch(snap):
            click.echo(
                f"epoch {snap.epoch}: total={snap.loss.total:.4f} reconst={snap.loss.reconstruction:.4f} "
                f"kl={snap.loss.kl:.4f} classifier={snap.loss.classifier:.4f}"
            )

        state, _ = fit(model, ds, cfg, state=state, on_epoch=on_epoch, start_epoch=start_epoch)
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint, model, state, cfg, extra={"epochs_completed": start_epoch + epochs})
        click.echo(f"ok: saved {checkpoint}")
    except Exception as e:
        _fail(e)


@main.command(context_settings={"ignore_unknown_options": True})
@click.argument("args", nargs=-1, type=click.UNPROCESSED)
def serve(args):
    """Serve the annotation session over HTTP (see --port, --data-dir,
    --checkpoint, --latent-dim, --labeled-fraction, --seed; LLOOM_* env
    variables provide defaults)."""
    from .api_server import main as serve_main

    try:
        serve_main(list(args))
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    main()
