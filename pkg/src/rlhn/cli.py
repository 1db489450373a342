"""Single entry point wiring all modules.

Subcommands: stats, sample, render, detect, remove, remove-hn, relabel,
filter-percpos, leave-one-out, cost, eval-judge, ndcg, kappa, histogram,
serve. Exit codes: 0 success, 1 validation error, 2 partial judge failure.
"""

from __future__ import annotations

import functools
import json
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from decimal import Decimal
from pathlib import Path

import click

from . import annotation, cascade, corpus, judge, metrics, offline, transform
from .prompting import chunk_negatives, render_prompt

EXIT_VALIDATION = 1
EXIT_PARTIAL_FAILURE = 2

JUDGE_MODELS = {"mini": "gpt-4o-mini", "gpt-4o": "gpt-4o"}


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_VALIDATION)


def _load(path: str) -> list[corpus.TrainingInstance]:
    try:
        return corpus.load_dataset(path)
    except (corpus.DatasetError, OSError) as e:
        _fail(str(e))


@click.group()
def main():
    """Detect, relabel, and evaluate false negatives in retrieval training data."""


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def stats(paths, as_json):
    """Pair counts and GT/HN averages for one or more dataset files."""
    instances = []
    for p in paths:
        instances.extend(_load(p))
    s = corpus.compute_stats(instances)
    if as_json:
        click.echo(json.dumps({
            "n_pairs": s.n_pairs,
            "avg_gt_per_q": s.avg_gt_per_q,
            "avg_hn_per_q": s.avg_hn_per_q,
            "per_dataset": {
                name: {"n_pairs": d.n_pairs, "avg_gt_per_q": d.avg_gt_per_q,
                       "avg_hn_per_q": d.avg_hn_per_q}
                for name, d in s.per_dataset.items()
            },
        }))
        return

    def fmt(v):
        return "-" if v is None else f"{v:.1f}"

    click.echo(f"{'dataset':20} {'pairs':>10} {'avg GT/Q':>10} {'avg HN/Q':>10}")
    for name, d in s.per_dataset.items():
        click.echo(f"{name:20} {d.n_pairs:>10} {fmt(d.avg_gt_per_q):>10} {fmt(d.avg_hn_per_q):>10}")
    click.echo(f"{'TOTAL':20} {s.n_pairs:>10} {fmt(s.avg_gt_per_q):>10} {fmt(s.avg_hn_per_q):>10}")


@main.command()
@click.option("--targets", required=True, type=click.Path(exists=True),
              help="TOML file mapping dataset name to sample count.")
@click.option("--seed", required=True, type=int)
@click.option("--in", "inputs", multiple=True, required=True, type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
def sample(targets, seed, inputs, out):
    """Sample per-dataset subsets, uniform without replacement."""
    with open(targets, "rb") as f:
        target_map = {str(k): int(v) for k, v in tomllib.load(f).items()}
    instances = []
    for p in inputs:
        instances.extend(_load(p))
    try:
        sampled = corpus.sample_subset(instances, target_map, seed)
    except corpus.DatasetError as e:
        _fail(str(e))
    corpus.write_dataset(sampled, out)
    click.echo(f"wrote {len(sampled)} instances to {out}")


@main.command()
@click.option("--instance", "instance_id", required=True)
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("--chunk", "chunk_index", default=0, show_default=True, type=int)
def render(instance_id, input_path, chunk_index):
    """Print the exact judge payload for one instance chunk."""
    instances = _load(input_path)
    matches = [i for i in instances if i.instance_id == instance_id]
    if not matches:
        _fail(f"instance {instance_id!r} not found in {input_path}")
    chunks = chunk_negatives(matches[0])
    if chunk_index >= len(chunks):
        _fail(f"instance has {len(chunks)} chunks, asked for chunk {chunk_index}")
    system, user = render_prompt(matches[0], chunks[chunk_index])
    click.echo("===== SYSTEM =====")
    click.echo(system)
    click.echo("===== USER =====")
    click.echo(user)


def _make_submit(profile: str, endpoint: str | None, audit_path: str | None, concurrency: int):
    audit = judge.AuditLog(audit_path) if audit_path else None
    if profile in ("mock", "heuristic"):
        config = judge.JudgeConfig(model_name=f"offline-{profile}", max_concurrency=1)
        return functools.partial(
            judge.submit_batch, config=config, send=offline.HeuristicJudge(), audit_log=audit
        )
    model = JUDGE_MODELS.get(profile, profile)
    config = judge.JudgeConfig(model_name=model, max_concurrency=concurrency)
    if endpoint:
        config.endpoint_url = endpoint
    return functools.partial(judge.submit_batch, config=config, audit_log=audit)


@main.command()
@click.option("--stage", type=click.Choice(["1", "2", "cascade"]), required=True)
@click.option("--judge", "judge1", default="mock", show_default=True,
              help="Stage-1 judge profile: mock, mini, gpt-4o, or a model name.")
@click.option("--judge2", default=None, help="Stage-2 judge profile (cascade only).")
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--records", "records_path", type=click.Path(exists=True),
              help="Stage-1 records (required for --stage 2).")
@click.option("--k", default=cascade.DEFAULT_K, show_default=True, type=int)
@click.option("--endpoint", default=None, help="Chat-completion endpoint URL.")
@click.option("--audit-log", "audit_path", default=None, type=click.Path())
@click.option("--concurrency", default=4, show_default=True, type=int)
def detect(stage, judge1, judge2, input_path, out, records_path, k, endpoint,
           audit_path, concurrency):
    """Run the false-negative detection cascade (or one stage of it)."""
    instances = _load(input_path)
    submit1 = _make_submit(judge1, endpoint, audit_path, concurrency)
    try:
        if stage == "1":
            records = cascade.run_stage1(instances, submit1)
        elif stage == "2":
            if not records_path:
                _fail("--stage 2 requires --records from stage 1")
            records = cascade.read_records(records_path)
            records = cascade.run_stage2(instances, records, submit1)
            records = cascade.apply_threshold(records, k)
        else:
            submit2 = _make_submit(judge2 or judge1, endpoint, audit_path, concurrency)
            records = cascade.run_cascade(instances, submit1, submit2, k=k)
    except judge.AuthenticationError as e:
        _fail(f"authentication failed: {e}")
    cascade.write_records(records, out)
    n_failed = sum(1 for r in records if "failed" in (r.stage1_parse, r.stage2_parse))
    n_flagged = sum(1 for r in records if r.final_false_negatives)
    click.echo(f"wrote {len(records)} records to {out} "
               f"({n_flagged} flagged, {n_failed} judge failures)")
    if n_failed:
        sys.exit(EXIT_PARTIAL_FAILURE)


def _transform_command(name, fn, needs_k):
    @main.command(name=name)
    @click.option("--records", "records_path", required=True, type=click.Path(exists=True))
    @click.option("--in", "input_path", required=True, type=click.Path(exists=True))
    @click.option("-o", "--out", required=True, type=click.Path())
    @click.option("--k", default=cascade.DEFAULT_K, show_default=True, type=int)
    def command(records_path, input_path, out, k):
        instances = _load(input_path)
        records = cascade.read_records(records_path)
        try:
            if needs_k:
                result = fn(instances, records, k)
            else:
                result = fn(instances, records)
        except transform.TransformError as e:
            _fail(str(e))
        corpus.write_dataset(result, out)
        click.echo(f"wrote {len(result)} instances to {out}")

    command.__doc__ = fn.__doc__
    return command


_transform_command("remove", transform.transform_remove, needs_k=False)
_transform_command("remove-hn", transform.transform_remove_hn, needs_k=False)
_transform_command("relabel", transform.transform_relabel_hn, needs_k=True)


@main.command(name="filter-percpos")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--percent", default=95.0, show_default=True, type=float)
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
def filter_percpos(scores_path, percent, input_path, out):
    """Drop negatives whose reranker score reaches percent% of the top positive score."""
    instances = _load(input_path)
    scores = transform.read_score_sidecar(scores_path)
    result = []
    for inst in instances:
        if inst.instance_id not in scores:
            _fail(f"no scores for instance {inst.instance_id!r}")
        pos_scores, neg_scores = scores[inst.instance_id]
        try:
            result.append(transform.topk_percpos_filter(inst, pos_scores, neg_scores, percent))
        except transform.TransformError as e:
            _fail(str(e))
    corpus.write_dataset(result, out)
    click.echo(f"wrote {len(result)} instances to {out}")


@main.command(name="leave-one-out")
@click.option("--leave-out", required=True)
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
def leave_one_out_cmd(leave_out, input_path, out):
    """Materialize the collection with one dataset removed."""
    instances = _load(input_path)
    collection: dict[str, list[corpus.TrainingInstance]] = {}
    for inst in instances:
        collection.setdefault(inst.dataset, []).append(inst)
    try:
        pruned = transform.leave_one_out(collection, leave_out)
    except transform.TransformError as e:
        _fail(str(e))
    kept = [inst for insts in pruned.values() for inst in insts]
    corpus.write_dataset(kept, out)
    click.echo(f"wrote {len(kept)} instances to {out}")


@main.command()
@click.option("--calls", required=True, type=int)
@click.option("--avg-input-tokens", required=True, type=int)
@click.option("--model", default="mini", show_default=True,
              help="Bundled price profile (mini, gpt-4o) unless prices are given.")
@click.option("--price-in", default=None, type=str, help="USD per 1M input tokens.")
@click.option("--price-out", default=None, type=str, help="USD per 1M output tokens.")
@click.option("--output-tokens", default=2048, show_default=True, type=int)
def cost(calls, avg_input_tokens, model, price_in, price_out, output_tokens):
    """Estimate a judging run's cost in USD."""
    if price_in is not None and price_out is not None:
        cm = judge.CostModel(Decimal(price_in), Decimal(price_out), output_tokens)
    else:
        try:
            cm = judge.CostModel.for_model(model, output_tokens)
        except KeyError as e:
            _fail(str(e.args[0]))
    click.echo(str(judge.estimate_cost(calls, avg_input_tokens, cm)))


@main.command(name="eval-judge")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def eval_judge(scores_path, records_path, as_json):
    """mAP@10 and P@L of detected false negatives under external reranker scores."""
    sidecar = transform.read_score_sidecar(scores_path)
    records = cascade.read_records(records_path)
    queries = []
    for record in records:
        if not record.final_false_negatives or record.instance_id not in sidecar:
            continue
        _, neg_scores = sidecar[record.instance_id]
        queries.append(metrics.ScoredCandidates(
            query_id=record.instance_id,
            scores={i: s for i, s in enumerate(neg_scores)},
            relevant=set(record.final_false_negatives),
        ))
    if not queries:
        _fail("no flagged instances with scores")
    result = {
        "n_queries": len(queries),
        "map_at_10": metrics.map_at_10(queries),
        "p_at_l": metrics.mean_precision_at_L(queries),
    }
    if as_json:
        click.echo(json.dumps(result))
    else:
        click.echo(f"queries   {result['n_queries']}")
        click.echo(f"mAP@10    {result['map_at_10']:.4f}")
        click.echo(f"P@L(GT)   {result['p_at_l']:.4f}")


@main.command()
@click.option("--run", "run_path", required=True, type=click.Path(exists=True))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True))
@click.option("--gain", type=click.Choice(["exp", "linear"]), default="exp", show_default=True)
def ndcg(run_path, qrels_path, gain):
    """Mean nDCG@10 from TREC run and qrels files."""
    try:
        value = metrics.ndcg_at_10(
            metrics.read_run(run_path), metrics.read_qrels(qrels_path),
            exponential=(gain == "exp"),
        )
    except metrics.MetricError as e:
        _fail(str(e))
    click.echo(f"{value:.4f}")


@main.command()
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def kappa(labels_path, as_json):
    """Cohen's kappa of each model source against consensus and each annotator."""
    records = metrics.read_label_records(labels_path)
    humans = sorted({r.source for r in records if r.source.startswith("human:")})
    models = sorted({r.source for r in records if r.source.startswith("model:")})
    by_source: dict[str, dict[str, int]] = {}
    for r in records:
        by_source.setdefault(r.source, {})[r.pair_id] = r.label
    consensus = metrics.aggregate_annotators(
        [r for r in records if r.source.startswith("human:")]
    )
    out: dict[str, dict[str, float]] = {}
    for model in models:
        model_labels = by_source[model]
        row: dict[str, float] = {}
        common = set(model_labels) & set(consensus.labels)
        if common:
            row["consensus"] = metrics.cohen_kappa(
                {p: model_labels[p] for p in common},
                {p: consensus.labels[p] for p in common},
            )
        for human in humans:
            pairs = set(model_labels) & set(by_source[human])
            if pairs:
                row[human] = metrics.cohen_kappa(
                    {p: model_labels[p] for p in pairs},
                    {p: by_source[human][p] for p in pairs},
                )
        out[model] = row
    if as_json:
        click.echo(json.dumps({"kappa": out, "ties": consensus.n_ties,
                               "excluded": consensus.n_excluded}))
        return
    for model, row in out.items():
        for against, value in row.items():
            click.echo(f"{model} vs {against}: {value:.3f}")
    click.echo(f"(consensus ties: {consensus.n_ties}, excluded pairs: {consensus.n_excluded})")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def histogram(records_path, as_json):
    """Distribution of false-negative counts over flagged instances."""
    hist = cascade.fn_histogram(cascade.read_records(records_path))
    if as_json:
        click.echo(json.dumps({str(k): v for k, v in hist.items()}))
        return
    for n, frac in hist.items():
        click.echo(f"{n:3d} false negatives: {frac:.3f}")


@main.command()
@click.option("--tasks", "tasks_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--static", "static_dir", default=None, type=click.Path(),
              help="UI bundle directory (defaults to bundled frontend if present).")
def serve(tasks_path, labels_path, port, static_dir):
    """Serve the annotation API and UI."""
    import uvicorn

    tasks = annotation.read_tasks(tasks_path)
    store = annotation.LabelStore(labels_path)
    if static_dir is None:
        bundled = Path(__file__).parent / "static"
        static_dir = bundled if bundled.is_dir() else None
    app = annotation.create_app(tasks, store, static_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
