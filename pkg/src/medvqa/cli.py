"""Command-line entry points for every pipeline stage.

Configuration files are JSON with three sections (``data``, ``model``,
``train``); command-line flags override file values. Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import (
    AugmentConfig,
    answer_category_map,
    answer_length_stats,
    build_answer_classes,
    build_vocabulary,
    load_synonyms,
    load_vqamed,
    make_synthetic_dataset,
    normalize_answer,
    question_prefix_distribution,
    save_dataset,
    split_cv,
)
from .encoders.image import ImageEncoderConfig
from .encoders.question import QuestionEncoderConfig
from .errors import ConfigError
from .fusion import SanConfig
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    answer_type_analysis,
    cross_validate,
    evaluate,
    model_comparison_table,
    train,
    variant_name,
)


def _load_config(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _samples_from_data_section(data_cfg: dict):
    synonyms = load_synonyms(data_cfg["synonyms"]) if data_cfg.get("synonyms") else None
    if data_cfg.get("synthetic"):
        spec = data_cfg["synthetic"]
        samples = make_synthetic_dataset(
            int(spec.get("n", 200)),
            seed=int(spec.get("seed", 0)),
            size=int(spec.get("size", 64)),
            qa_per_image=int(spec.get("qa_per_image", 3)),
        )
    elif data_cfg.get("root"):
        samples = load_vqamed(data_cfg["root"], image_size=data_cfg.get("image_size", 224))
    else:
        raise ConfigError("data section needs either 'root' or 'synthetic'")
    return samples, synonyms


def _model_config_from_section(model_cfg: dict, n_classes: int) -> ModelConfig:
    image = ImageEncoderConfig(**model_cfg.get("image_encoder", {}))
    question = QuestionEncoderConfig(**model_cfg.get("question_encoder", {}))
    san = SanConfig(**model_cfg["san"]) if model_cfg.get("san") else None
    return ModelConfig(
        image_encoder=image,
        question_encoder=question,
        n_classes=n_classes,
        fusion=model_cfg.get("fusion", "concat"),
        san=san,
        head_hidden_dim=int(model_cfg.get("head_hidden_dim", 1024)),
        dropout=float(model_cfg.get("dropout", 0.5)),
    )


def _train_config_from_section(train_cfg: dict, overrides: dict) -> TrainConfig:
    merged = dict(train_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    aug = merged.pop("augment", None)
    return TrainConfig(
        epochs=int(merged.get("epochs", 50)),
        learning_rate=float(merged.get("learning_rate", 1e-4)),
        batch_size=int(merged.get("batch_size", 64)),
        seed=int(merged.get("seed", 0)),
        augment=AugmentConfig(**aug) if aug else AugmentConfig(),
        early_stop=merged.get("early_stop"),
        stop_at_train_accuracy=merged.get("stop_at_train_accuracy"),
    )


def _holdout_split(samples, holdout_frac: float, seed: int):
    (train_idx, test_idx) = split_cv(samples, folds=1, train_frac=1.0 - holdout_frac, seed=seed)[0]
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


@click.group()
def cli():
    """Medical visual question answering toolkit."""


@cli.group()
def data():
    """Dataset preparation, statistics and synthesis."""


@data.command("synth")
@click.option("--n", type=int, required=True, help="number of QA samples")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--size", type=int, default=64, show_default=True, help="image side in pixels")
@click.option("--qa-per-image", type=int, default=3, show_default=True)
def data_synth(n, seed, out, size, qa_per_image):
    """Generate a synthetic dataset in the pipe-separated on-disk format."""
    samples = make_synthetic_dataset(n, seed=seed, size=size, qa_per_image=qa_per_image)
    save_dataset(samples, out)
    click.echo(f"wrote {len(samples)} samples / {len({s.image_id for s in samples})} images to {out}")


@data.command("prepare")
@click.option("--root", type=click.Path(exists=True), required=True)
@click.option("--synonyms", type=click.Path(exists=True), default=None)
@click.option("--image-size", type=int, default=224, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="save a normalized copy here")
def data_prepare(root, synonyms, image_size, out):
    """Validate a dataset directory and report per-category counts."""
    table = load_synonyms(synonyms) if synonyms else None
    samples = load_vqamed(root, image_size=image_size)
    by_cat = {}
    for s in samples:
        by_cat[s.category] = by_cat.get(s.category, 0) + 1
    click.echo(f"{len(samples)} samples over {len({s.image_id for s in samples})} images")
    for cat, count in sorted(by_cat.items()):
        click.echo(f"  {cat}: {count}")
    answers = build_answer_classes(samples, table)
    click.echo(f"  distinct normalized answers: {answers.n_classes}")
    if out:
        for s in samples:
            s.answer = normalize_answer(s.answer, table)
        save_dataset(samples, out)
        click.echo(f"normalized copy written to {out}")


@data.command("stats")
@click.option("--root", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=int, default=None, help="use N synthetic samples instead")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--depth", type=int, default=4, show_default=True)
@click.option("--prune", type=float, default=0.02, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def data_stats(root, synthetic, seed, depth, prune, out):
    """Question-prefix distribution and answer-length statistics."""
    if (root is None) == (synthetic is None):
        raise click.UsageError("pass exactly one of --root or --synthetic")
    samples = (
        make_synthetic_dataset(synthetic, seed=seed) if synthetic else load_vqamed(root)
    )
    payload = {
        "n_samples": len(samples),
        "question_prefixes": question_prefix_distribution(samples, depth=depth, prune=prune).to_json(),
        "answer_lengths": answer_length_stats(samples),
    }
    text = json.dumps(payload, indent=1)
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"stats written to {out}")
    else:
        click.echo(text)


@cli.command()
@click.option("--images", type=click.Path(exists=True), required=True, help="flat image folder")
@click.option("--out", type=click.Path(), required=True, help="output weight archive")
@click.option("--log", "log_path", type=click.Path(), default=None, help="JSON loss log")
@click.option("--arch", default="vgg_small", show_default=True)
@click.option("--input-size", type=int, default=64, show_default=True)
@click.option("--epochs", type=int, default=80, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--temperature", type=float, default=0.1, show_default=True)
@click.option("--projection-dim", type=int, default=128, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def pretrain(images, out, log_path, arch, input_size, epochs, batch_size, temperature, projection_dim, seed):
    """Contrastive self-supervised pretraining of an image encoder."""
    from .pretrain import ContrastiveConfig, pretrain_encoder

    encoder_cfg = ImageEncoderConfig(arch=arch, input_size=input_size)
    cfg = ContrastiveConfig(
        temperature=temperature,
        batch_size=batch_size,
        epochs=epochs,
        projection_dim=projection_dim,
    )
    _, curve = pretrain_encoder(images, encoder_cfg, cfg, seed=seed, out_weights=out, out_log=log_path)
    click.echo(f"pretrained {epochs} epochs; first/last epoch loss {curve[0]:.4f} -> {curve[-1]:.4f}")
    click.echo(f"encoder weights written to {out}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default="./checkpoint", show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
def train_cmd(config_path, out, epochs, batch_size, learning_rate, seed):
    """Train a model per config; saves a checkpoint plus logs and a report."""
    cfg = _load_config(config_path)
    samples, synonyms = _samples_from_data_section(cfg.get("data", {}))
    holdout_frac = float(cfg.get("data", {}).get("holdout_frac", 0.2))
    train_cfg = _train_config_from_section(
        cfg.get("train", {}),
        {"epochs": epochs, "batch_size": batch_size, "learning_rate": learning_rate, "seed": seed},
    )
    train_samples, holdout = _holdout_split(samples, holdout_frac, train_cfg.seed)
    vocab = build_vocabulary(train_samples)
    answer_map = build_answer_classes(train_samples, synonyms)
    model_cfg = _model_config_from_section(cfg.get("model", {}), answer_map.n_classes)
    model = build_model(model_cfg, vocab, answer_map, seed=train_cfg.seed)
    click.echo(f"training {variant_name(model_cfg)} ({model.parameter_count():,} parameters) "
               f"on {len(train_samples)} samples, holdout {len(holdout)}")
    result = train(model, train_samples, train_cfg, val_samples=holdout if train_cfg.early_stop else None)
    report = evaluate(model, holdout)
    out_dir = Path(out)
    save_checkpoint(
        model,
        out_dir,
        answer_categories=answer_category_map(train_samples, synonyms),
        metadata={
            "seed": train_cfg.seed,
            "epochs_run": result["stopped_epoch"] + 1,
            "variant": variant_name(model_cfg),
            "holdout_accuracy": report.overall_accuracy,
            "final_train_accuracy": result["log"][-1]["accuracy"],
        },
    )
    with (out_dir / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        for entry in result["log"]:
            fh.write(json.dumps(entry) + "\n")
    (out_dir / "eval_report.json").write_text(
        json.dumps({"variant": variant_name(model_cfg), "report": report.to_json()}, indent=1),
        encoding="utf-8",
    )
    click.echo(
        f"final train accuracy {result['log'][-1]['accuracy']:.3f}, "
        f"holdout accuracy {report.overall_accuracy:.3f}; checkpoint at {out_dir}"
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--folds", type=int, default=None, help="override fold count")
@click.option("--out", type=click.Path(), default=None, help="write reports JSON here")
def crossval(config_path, folds, out):
    """Repeated-split cross-validation with a mean±std summary."""
    cfg = _load_config(config_path)
    samples, synonyms = _samples_from_data_section(cfg.get("data", {}))
    del synonyms  # per-fold maps are built from each training split
    train_cfg = _train_config_from_section(cfg.get("train", {}), {})
    n_folds = folds or int(cfg.get("folds", 5))
    # placeholder class count; rebuilt per fold from its training split
    model_cfg = _model_config_from_section(cfg.get("model", {}), 2)
    result = cross_validate(model_cfg, samples, train_cfg, folds=n_folds)
    click.echo(f"{variant_name(model_cfg)}: {result['summary']['formatted']} over {n_folds} folds")
    for report in result["reports"]:
        per_cat = ", ".join(f"{c}={a:.2f}" for c, a in report.per_category_accuracy.items())
        click.echo(f"  fold {report.fold_id}: overall={report.overall_accuracy:.3f} ({per_cat})")
    if out:
        payload = {
            "variant": variant_name(model_cfg),
            "summary": result["summary"],
            "reports": [r.to_json() for r in result["reports"]],
        }
        Path(out).write_text(json.dumps(payload, indent=1), encoding="utf-8")
        click.echo(f"reports written to {out}")


def _samples_for_eval(root, synthetic, seed):
    if (root is None) == (synthetic is None):
        raise click.UsageError("pass exactly one of --root or --synthetic")
    if synthetic:
        return make_synthetic_dataset(synthetic, seed=seed)
    return load_vqamed(root)


@cli.command("evaluate")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--root", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def evaluate_cmd(checkpoint, root, synthetic, seed, out):
    """Evaluate a checkpoint; reports micro overall and per-category accuracy."""
    model, sidecar = load_checkpoint(checkpoint)
    samples = _samples_for_eval(root, synthetic, seed)
    report = evaluate(model, samples)
    variant = sidecar.get("metadata", {}).get("variant", variant_name(model.cfg))
    click.echo(f"{variant}: overall {report.overall_accuracy:.3f} on {report.n_samples} samples")
    for cat, acc in report.per_category_accuracy.items():
        click.echo(f"  {cat}: {acc:.3f} (n={report.n_per_category[cat]})")
    if out:
        Path(out).write_text(
            json.dumps({"variant": variant, "report": report.to_json()}, indent=1), encoding="utf-8"
        )
        click.echo(f"report written to {out}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--root", type=click.Path(exists=True), default=None)
@click.option("--synthetic", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def analyze(checkpoint, root, synthetic, seed, out):
    """Answer-type diagnostics: category mix-ups, yes/no errors, option misses."""
    model, sidecar = load_checkpoint(checkpoint)
    samples = _samples_for_eval(root, synthetic, seed)
    report = answer_type_analysis(model, samples, sidecar.get("answer_categories") or None)
    text = json.dumps(report, indent=1)
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"analysis written to {out}")
    else:
        click.echo(text)


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--question", required=True)
@click.option("--target-class", type=int, default=None)
@click.option("--out", type=click.Path(), default="heatmap.png", show_default=True)
@click.option("--json-out", type=click.Path(), default=None, help="also dump the raw heatmap")
@click.option("--attention", is_flag=True, help="also render SAN attention layers")
@click.option("--alpha", type=float, default=0.5, show_default=True)
def explain(checkpoint, image_path, question, target_class, out, json_out, attention, alpha):
    """GradCAM evidence for one (image, question) pair."""
    from PIL import Image as PilImage

    from .explain import attention_maps, gradcam, render_attention, render_overlay
    from .model import predict

    model, _ = load_checkpoint(checkpoint)
    with PilImage.open(image_path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    pred = predict(model, arr, question, k=1)
    heatmap = gradcam(model, arr, question, target_class=target_class)
    Path(out).write_bytes(render_overlay(heatmap.values, arr, alpha=alpha))
    click.echo(
        f"answer: {pred.top_k[0][1]} (p={pred.top_k[0][2]:.3f}); "
        f"heatmap for class {heatmap.target_class} -> {out}"
        + (" [degenerate all-zero map]" if heatmap.degenerate else "")
    )
    if json_out:
        Path(json_out).write_text(json.dumps(heatmap.to_json()), encoding="utf-8")
        click.echo(f"raw heatmap -> {json_out}")
    if attention:
        pngs = render_attention(attention_maps(model, arr, question), arr, alpha=alpha)
        stem = Path(out)
        for i, png in enumerate(pngs):
            path = stem.with_name(f"{stem.stem}_attn{i}{stem.suffix}")
            path.write_bytes(png)
            click.echo(f"attention layer {i} -> {path}")


@cli.command()
@click.option("--reports", type=click.Path(exists=True), multiple=True, required=True)
@click.option("--csv", "csv_out", type=click.Path(), default=None)
def compare(reports, csv_out):
    """Accuracy table across variants from saved report files."""
    rows = []
    for path in reports:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        name = payload.get("variant", Path(path).stem)
        if "summary" in payload:
            rows.append((name, float(payload["summary"]["mean_overall_accuracy"])))
        elif "report" in payload:
            rows.append((name, float(payload["report"]["overall_accuracy"])))
        else:
            rows.append((name, float(payload["overall_accuracy"])))
    text, csv = model_comparison_table(rows)
    click.echo(text)
    if csv_out:
        Path(csv_out).write_text(csv, encoding="utf-8")
        click.echo(f"csv written to {csv_out}")


@cli.command("serve")
@click.option("--model-dir", type=click.Path(exists=True), required=True, envvar="MEDVQA_MODEL_DIR")
@click.option("--bind", default=None, help="host:port (default env MEDVQA_BIND or 127.0.0.1:8080)")
def serve_cmd(model_dir, bind):
    """Serve loaded checkpoints over HTTP."""
    from .service import serve

    serve(model_dir, bind)


def main(argv=None) -> int:
    """Console entry point mapping errors to exit codes (1 usage, 2 runtime)."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
