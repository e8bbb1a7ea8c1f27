"""Command-line client for the scheduling service and the toy training harness.

Pure commands (compose, simulate, allocate, plan, trace) go through the same
request/response models as the HTTP service; pass --server to run them against
a remote instance instead of in process.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .harness import RunConfig, run_training
from .model import ToyModelConfig
from .scheduler import ObservationConfig
from .trace import emit_csv, trace_stats


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=120.0)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(server: str | None, path: str, payload: dict) -> dict:
    with _client(server) as client:
        response = client.post(path, json=payload)
        if response.status_code != 200:
            raise click.ClickException(f"{path} failed: {response.text}")
        return response.json()


def _echo_json(doc, out: str | None):
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@click.group()
@click.option("--server", default=None, help="Base URL of a running service; in-process otherwise.")
@click.pass_context
def main(ctx, server):
    """Adaptive Newton-Schulz scheduling toolkit."""
    ctx.obj = {"server": server}


@main.command()
@click.option("--ell", type=float, required=True, help="Input lower bound in (0, 1).")
@click.option("--steps", type=int, required=True, help="Iteration count.")
@click.option("--out", default=None, help="Write the schedule JSON here.")
@click.pass_context
def compose(ctx, ell, steps, out):
    """Compose an optimized coefficient schedule for (ell, steps)."""
    doc = _post(ctx.obj["server"], "/compose", {"ell": ell, "steps": steps})
    _echo_json(doc, out)


@main.command()
@click.option("--ell", type=float, required=True)
@click.option("--schedule", "schedule_path", required=True,
              help="JSON file holding {'triplets': [[a,b,c],...]}.")
@click.option("--out", default=None)
@click.pass_context
def simulate(ctx, ell, schedule_path, out):
    """Exact scalar interval trajectory of a schedule from (ell, 1)."""
    doc = json.loads(Path(schedule_path).read_text())
    result = _post(ctx.obj["server"], "/simulate",
                   {"ell": ell, "triplets": doc["triplets"]})
    _echo_json(result, out)


@main.command("error-curve")
@click.option("--ell", type=float, required=True)
@click.option("--k-min", type=int, default=3, show_default=True)
@click.option("--k-max", type=int, default=7, show_default=True)
@click.option("--out", default=None, help="CSV output path.")
@click.pass_context
def error_curve_cmd(ctx, ell, k_min, k_max, out):
    """Projected error curve E(k) over a step range."""
    doc = _post(ctx.obj["server"], "/error-curve",
                {"ell": ell, "k_min": k_min, "k_max": k_max})
    if out:
        rows = [(k_min + i, v) for i, v in enumerate(doc["values"])]
        emit_csv(["k", "error"], rows, out)
        click.echo(f"wrote {out}")
    else:
        click.echo(json.dumps(doc, indent=2))


@main.command()
@click.option("--curves", "curves_path", required=True,
              help="JSON file: [{'name':..., 'k_min':..., 'k_max':..., 'values': [...]}].")
@click.option("--budget", type=int, required=True)
@click.option("--k-min", type=int, default=3, show_default=True)
@click.option("--k-max", type=int, default=7, show_default=True)
@click.option("--t-base", type=int, default=5, show_default=True)
@click.option("--oracle", is_flag=True, help="Also run the brute-force oracle.")
@click.option("--out", default=None)
@click.pass_context
def allocate(ctx, curves_path, budget, k_min, k_max, t_base, oracle, out):
    """Greedy per-type step allocation under a global budget."""
    curves = json.loads(Path(curves_path).read_text())
    doc = _post(ctx.obj["server"], "/allocate", {
        "curves": curves, "budget": budget, "k_min": k_min, "k_max": k_max,
        "t_base": t_base, "oracle": oracle,
    })
    _echo_json(doc, out)


@main.command()
@click.option("--geometry", "geometry_path", required=True,
              help="JSON file mapping op_type -> robust ell estimate.")
@click.option("--budget-ratio", type=float, default=1.0, show_default=True)
@click.option("--shrinkage", type=float, default=0.7, show_default=True)
@click.option("--ell-base", type=float, default=1e-3, show_default=True)
@click.option("--t-base", type=int, default=5, show_default=True)
@click.option("--k-min", type=int, default=3, show_default=True)
@click.option("--k-max", type=int, default=7, show_default=True)
@click.option("--out", default=None)
@click.pass_context
def plan(ctx, geometry_path, budget_ratio, shrinkage, ell_base, t_base, k_min, k_max, out):
    """Full planning pass from robust per-type geometry estimates."""
    ell_robust = json.loads(Path(geometry_path).read_text())
    doc = _post(ctx.obj["server"], "/plan", {
        "ell_robust": ell_robust, "shrinkage": shrinkage, "ell_base": ell_base,
        "budget_ratio": budget_ratio, "t_base": t_base, "k_min": k_min, "k_max": k_max,
    })
    _echo_json(doc, out)


@main.command("stable-lr")
@click.option("--n-billions", type=float, required=True)
@click.option("--d-billions", type=float, required=True)
@click.pass_context
def stable_lr_cmd(ctx, n_billions, d_billions):
    """Empirical stable learning rate for a (model size, token budget) pair."""
    doc = _post(ctx.obj["server"], "/stable-lr",
                {"n_billions": n_billions, "d_billions": d_billions})
    click.echo(json.dumps(doc, indent=2))


def _load_run_config(config_path: str | None, overrides: dict) -> RunConfig:
    doc = {}
    if config_path:
        doc = json.loads(Path(config_path).read_text())
    doc.update({k: v for k, v in overrides.items() if v is not None})
    model_doc = doc.pop("model", {})
    obs_doc = doc.pop("observation", {})
    static_path = doc.pop("static_plan_file", None)
    if static_path:
        doc["static_plan"] = json.loads(Path(static_path).read_text())
    model_fields = {f.name for f in dataclasses.fields(ToyModelConfig)}
    obs_fields = {f.name for f in dataclasses.fields(ObservationConfig)}
    run_fields = {f.name for f in dataclasses.fields(RunConfig)}
    model = ToyModelConfig(**{k: v for k, v in model_doc.items() if k in model_fields})
    obs_kwargs = {k: v for k, v in obs_doc.items() if k in obs_fields}
    if "budget_ratio" in doc:
        obs_kwargs["budget_ratio"] = doc.pop("budget_ratio")
    from .harness import TOY_OBSERVATION

    base_obs = dataclasses.asdict(TOY_OBSERVATION)
    base_obs.update(obs_kwargs)
    observation = ObservationConfig(**base_obs)
    run_kwargs = {k: v for k, v in doc.items() if k in run_fields}
    return RunConfig(model=model, observation=observation, **run_kwargs)


@main.command()
@click.option("--config", "config_path", default=None, help="Run config JSON.")
@click.option("--out", "out_dir", default="run_out", show_default=True)
@click.option("--optimizer", default=None,
              help="adamw | muon-kj | muon-you | muon-pe | amo | static-plan")
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--budget-ratio", type=float, default=None)
@click.option("--static-plan-file", default=None)
def train(config_path, out_dir, optimizer, steps, seed, budget_ratio, static_plan_file):
    """Run the toy training loop and write loss/geometry/plan artifacts."""
    overrides = {
        "optimizer": optimizer,
        "steps": steps,
        "seed": seed,
        "budget_ratio": budget_ratio,
        "static_plan_file": static_plan_file,
    }
    cfg = _load_run_config(config_path, overrides)
    artifacts = run_training(cfg, out_dir=out_dir)
    summary = {
        "optimizer": cfg.optimizer,
        "steps": cfg.steps,
        "first_loss": artifacts.losses[0],
        "final_loss": artifacts.losses[-1],
        "loss_reduction": artifacts.loss_reduction(),
        "geometry_rows": len(artifacts.geometry),
        "out_dir": out_dir,
    }
    if artifacts.plan is not None:
        summary["plan"] = artifacts.plan.as_dict()
    click.echo(json.dumps(summary, indent=2))


@main.command()
@click.option("--log", "log_path", required=True, help="Geometry JSONL path.")
@click.option("--out", default=None, help="Report JSON path.")
@click.option("--csv-dir", default=None, help="Also emit per-type/per-layer CSV series.")
def trace(log_path, out, csv_dir):
    """Trace analytics over a geometry log."""
    report = trace_stats(log_path)
    _echo_json(report.as_dict(), out)
    if csv_dir:
        directory = Path(csv_dir)
        directory.mkdir(parents=True, exist_ok=True)
        for op, series in report.per_type_kappa.items():
            emit_csv(["step", "median_kappa"], sorted(series.items()),
                     directory / f"kappa_{op}.csv")
        click.echo(f"wrote CSV series under {csv_dir}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8100, show_default=True)
def serve(host, port):
    """Serve the scheduling API over HTTP."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main(sys.argv[1:])
