"""Command line: fingerprint, train, sweep, score, report.

Exit status is 0 only when the requested artifact was fully written.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from .errors import ParseError, QlstmError
from .experiment import SWEEP_AXES, ExperimentConfig, run_experiment, run_sweep
from .model import MODEL_KINDS, QlstmConfig
from .noise import GateErrorTable, error_score, score_qlstm_circuits
from .quantum_core import parse_circuit

log = logging.getLogger("qlstmkit")

SCORE_SEQUENCE_QUBITS = (2, 4, 8, 12)


def _fail(message: str):
    raise click.ClickException(message)


def _load_config(path, out, seed) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(path)
        overrides = {}
        if out is not None:
            overrides["output_dir"] = str(Path(out).resolve())
        if seed is not None:
            overrides["seed"] = seed
        if overrides:
            cfg = cfg.with_changes(**overrides)
        cfg.validate()
    except (QlstmError, ValueError, TypeError) as exc:
        _fail(f"invalid config {path}: {exc}")
    return cfg


def _parse_values(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        _fail(f"--values must be comma separated numbers, got {text!r}")


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Quantum LSTM experiments on molecular fingerprints."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("in_path", type=click.Path(dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--radius", default=6, show_default=True, type=click.IntRange(min=0))
@click.option("--bits", default=1024, show_default=True, type=click.IntRange(min=1))
def fingerprint(in_path, out_path, radius, bits):
    """Read a SMILES CSV and write a fingerprint CSV."""
    from .data import load_dataset, write_fingerprint_csv

    try:
        table = load_dataset(in_path, "smiles_csv", radius=radius, n_bits=bits)
    except (OSError, QlstmError) as exc:
        _fail(str(exc))
    out = Path(out_path)
    tmp = out.with_name(out.name + ".tmp")
    try:
        write_fingerprint_csv(table, tmp)
        tmp.replace(out)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        _fail(f"cannot write {out}: {exc}")
    prov = table.provenance
    click.echo(
        f"rows={len(table)} skipped={prov['rows_skipped']} read={prov['rows_read']} "
        f"radius={radius} bits={bits} -> {out}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), help="Override output_dir.")
@click.option("--seed", type=click.IntRange(min=0), help="Override the global seed.")
def train(config_path, out, seed):
    """Train one model as described by a config file."""
    cfg = _load_config(config_path, out, seed)

    def progress(rec):
        log.info("split %d epoch %d loss %.4f val %.4f", rec.seed, rec.epoch, rec.train_loss, rec.val_accuracy)

    try:
        result = run_experiment(cfg, on_epoch=progress)
    except (QlstmError, OSError, ValueError, FloatingPointError) as exc:
        _fail(f"training failed: {exc}")
    summary = json.loads((result.run_dir / "summary.json").read_text(encoding="utf-8"))
    click.echo(f"run_dir={result.run_dir}")
    click.echo(f"config_hash={result.config_hash.digest}")
    click.echo(f"mean_val_accuracy={summary['mean_val_accuracy']:.4f}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--axis", required=True, type=click.Choice(SWEEP_AXES))
@click.option("--values", "values_text", required=True, help="Comma separated, e.g. 2,4,8,12.")
@click.option("--models", default=None, help=f"Comma separated subset of {','.join(MODEL_KINDS)}.")
@click.option("--out", type=click.Path(file_okay=False), help="Override output_dir.")
@click.option("--seed", type=click.IntRange(min=0), help="Override the global seed.")
@click.option("--parallel", default=1, show_default=True, type=click.IntRange(min=1),
              help="Number of legs to run at once.")
def sweep(config_path, axis, values_text, models, out, seed, parallel):
    """Train once per value of one axis and tabulate the results."""
    values = _parse_values(values_text)
    model_list = None
    if models:
        model_list = [m.strip() for m in models.split(",") if m.strip()]
        bad = [m for m in model_list if m not in MODEL_KINDS]
        if bad:
            _fail(f"--models: unknown model(s) {bad}")
    cfg = _load_config(config_path, out, seed)
    try:
        sweep_dir, legs = run_sweep(cfg, axis, values, model_list, parallel=parallel)
    except (QlstmError, OSError, ValueError) as exc:
        _fail(f"sweep failed: {exc}")
    click.echo((sweep_dir / "table.csv").read_text(encoding="utf-8"), nl=False)
    click.echo(f"sweep_dir={sweep_dir}")
    failed = [leg for leg in legs if leg.status != "ok"]
    if failed:
        for leg in failed:
            click.echo(f"FAILED {axis}={leg.axis_value} model={leg.model}: {leg.error}", err=True)
        sys.exit(1)


def _load_table(path) -> GateErrorTable | None:
    if path is None:
        return None
    try:
        return GateErrorTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, TypeError) as exc:
        _fail(f"bad error table {path}: {exc}")


def _score_circuit(text: str, table: GateErrorTable) -> None:
    circuit = parse_circuit(text)
    breakdown = error_score(circuit, table)
    click.echo(json.dumps(breakdown.to_dict(), indent=2))
    click.echo("")
    click.echo(f"{'layer':>5}  {'gates':>5}  {'avg_error':>10}")
    for k, (rate, count) in enumerate(zip(breakdown.layer_error_rates, breakdown.layer_gate_counts)):
        click.echo(f"{k:>5}  {count:>5}  {rate:>10.6f}")
    click.echo(f"score s = {breakdown.score:.6g}")


def _score_config(data: dict, table: GateErrorTable) -> None:
    if "model" in data and isinstance(data["model"], dict):
        data = data["model"]
    config = QlstmConfig.from_dict(data)
    result = score_qlstm_circuits(config, table)
    sequence = {}
    for n in SCORE_SEQUENCE_QUBITS:
        sequence[str(n)] = score_qlstm_circuits(dataclasses.replace(config, n_qubits=n), table).mean
    payload = result.to_dict()
    payload["sequence"] = sequence
    click.echo(json.dumps(payload, indent=2))
    click.echo("")
    click.echo(f"{'vqc':<15} {'layers':>6} {'gates':>6} {'score':>10}")
    for name, b in result.per_vqc.items():
        click.echo(f"{name:<15} {b.depth:>6} {sum(b.layer_gate_counts):>6} {b.score:>10.6f}")
    click.echo(f"aggregate (mean) {result.mean:.6f}  compound {result.compound:.6f}")
    click.echo("qubits " + "  ".join(f"{n}:{s:.4f}" for n, s in sequence.items()))


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON with single_qubit_error and two_qubit_error.")
def score(path, table_path):
    """Gate-error score of a circuit text file or a model config (JSON)."""
    table = _load_table(table_path)
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except ValueError:
        data = None
    try:
        if isinstance(data, dict):
            if table is None and isinstance(data.get("error_table"), dict):
                table = GateErrorTable.from_dict(data["error_table"])
            _score_config(data, table or GateErrorTable())
        else:
            _score_circuit(text, table or GateErrorTable())
    except ParseError as exc:
        _fail(f"{path}: {exc}")
    except (QlstmError, ValueError, TypeError) as exc:
        _fail(str(exc))


@main.command()
@click.argument("sweep_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--no-figures", is_flag=True, help="Write the tables only.")
def report(sweep_dirs, out, no_figures):
    """Merge sweep outputs into tables and figures."""
    from .report import build_report

    try:
        outputs = build_report(sweep_dirs, out, figures=not no_figures)
    except (QlstmError, OSError, ValueError, KeyError) as exc:
        _fail(f"report failed: {exc}")
    for res in outputs:
        for row in res.rows:
            click.echo(",".join(row))
        click.echo(f"table={res.table_path}")
        for fig in res.figures:
            click.echo(f"figure={fig}")


if __name__ == "__main__":
    main()
