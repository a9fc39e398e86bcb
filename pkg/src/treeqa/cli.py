"""Command-line pipeline: ingest -> stats/flatten -> describe -> index -> ask/eval."""

from __future__ import annotations

import json
import os
import sys

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

import click

from . import describer, evaluation, paths, report, retrieval, tree
from .gateway import MockChatGateway, HashedBowEmbedder, OpenAIGateway, ProviderConfig
from .qa import Knowledge, Query, answer, assemble_answer_prompt


class ApiEmbedder:
    """Adapter giving the HTTP gateway the (embed, embedder_id) surface retrieval expects."""

    def __init__(self, gateway: OpenAIGateway, model: str):
        self.gateway = gateway
        self.model = model
        self.embedder_id = f"api:{model}"

    def embed(self, texts, model=None):
        return self.gateway.embed(texts, model=self.model)


def _mock_generator_reply(messages):
    """Deterministic offline generator: answers with the leaf of the top retrieved path."""
    for line in messages[-1]["content"].splitlines():
        if line.startswith("1. "):
            return line[3:].split(tree.SEPARATOR)[-1]
    return messages[-1]["content"]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _provider_from_config(cfg: dict) -> ProviderConfig:
    section = cfg.get("provider", {})
    return ProviderConfig(**section)


def _make_embedder(kind: str, cfg: dict):
    if kind == "mock":
        return HashedBowEmbedder()
    if kind == "api":
        provider = _provider_from_config(cfg)
        return ApiEmbedder(OpenAIGateway(provider), provider.embed_model)
    raise click.ClickException(f"unknown embedder {kind!r} (use mock or api)")


def _make_generator(kind: str, cfg: dict):
    if kind == "mock":
        return MockChatGateway(reply_fn=_mock_generator_reply), "mock"
    if kind == "api":
        provider = _provider_from_config(cfg)
        return OpenAIGateway(provider), provider.chat_model
    raise click.ClickException(f"unknown generator {kind!r} (use mock or api)")


def _fail(message: str) -> None:
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(1)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config file with [provider] and [defaults] sections.")
@click.option("--show-config", is_flag=True, help="Print the effective configuration.")
@click.pass_context
def main(ctx, config_path, show_config):
    """QA over tree-structured conference knowledge bases."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)
    if show_config:
        click.echo(json.dumps(ctx.obj["config"], indent=2, default=str))


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["json", "html"]), default="json")
@click.option("--conference", default=None, help="Override the conference id (html only).")
def ingest(source, output, fmt, conference):
    """Convert a source document into a validated tree file."""
    try:
        with open(source, encoding="utf-8") as fh:
            content = fh.read()
        if fmt == "json":
            kt = tree.ingest_json(content)
        else:
            kt = tree.ingest_html_headings(content, conference_id=conference)
        tree.save_tree(kt, output)
    except tree.TreeError as exc:
        _fail(str(exc))
    click.echo(f"wrote {output} ({kt.conference_id})")


@main.command()
@click.argument("tree_file", type=click.Path(exists=True))
def stats(tree_file):
    """Print path count and depth statistics for a tree file."""
    try:
        kt = tree.load_tree(tree_file)
    except tree.TreeError as exc:
        _fail(str(exc))
    st = tree.stats(kt)
    click.echo(f"{'conference':<12} {'paths':>8} {'avg_depth':>10} {'max_depth':>10}")
    click.echo(f"{kt.conference_id:<12} {st.path_count:>8} {st.avg_depth:>10.2f} {st.max_depth:>10}")
    click.echo(f"depth definition: {st.depth_definition}")


@main.command()
@click.argument("tree_file", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
def flatten(tree_file, output):
    """Write the root-to-leaf path corpus, one serialized path per line."""
    try:
        kt = tree.load_tree(tree_file)
        corpus = paths.flatten_paths(kt)
        paths.save_corpus(corpus, output)
    except (tree.TreeError, paths.PathError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {output} ({corpus.m} paths)")


@main.command()
@click.argument("tree_file", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--generator", default="mock", help="mock or api")
@click.option("--max-in-flight", default=8, show_default=True)
@click.option("--prompt-version", default=describer.PROMPT_VERSION, show_default=True)
@click.pass_context
def describe(ctx, tree_file, output, generator, max_in_flight, prompt_version):
    """Generate per-path descriptions top-down; resumable via the output store."""
    gateway, _gen_id = _make_generator(generator, ctx.obj["config"])
    try:
        kt = tree.load_tree(tree_file)
        corpus = paths.flatten_paths(kt)
        store = describer.describe_tree(
            kt, corpus, gateway,
            store_path=output,
            max_in_flight=max_in_flight,
            prompt_version=prompt_version,
        )
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {output} ({len(store.entries)} descriptions)")


@main.command()
@click.option("--tree", "tree_file", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["path_text", "description_text"]), default="path_text")
@click.option("--store", "store_file", type=click.Path(exists=True), default=None)
@click.option("--embedder", default="mock", help="mock or api")
@click.option("--batch-size", default=64, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path())
@click.pass_context
def index(ctx, tree_file, mode, store_file, embedder, batch_size, output):
    """Build a vector index over path text or description text."""
    emb = _make_embedder(embedder, ctx.obj["config"])
    try:
        kt = tree.load_tree(tree_file)
        corpus = paths.flatten_paths(kt)
        if mode == "path_text":
            entries = [(p.path_id, p.serialized()) for p in corpus.paths]
        else:
            if store_file is None:
                _fail("description_text indexing requires --store")
            store = describer.load_store(store_file)
            entries = []
            missing = []
            for p in corpus.paths:
                desc = store.entries.get(p.path_id)
                if desc is None:
                    missing.append(p.serialized())
                else:
                    entries.append((p.path_id, desc.text))
            if missing:
                _fail(f"store lacks descriptions for {len(missing)} paths, e.g. {missing[:3]}")
        idx = retrieval.build_index(entries, emb, mode, corpus.content_hash(), batch_size)
        retrieval.save_index(idx, output)
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {output} ({len(idx)} vectors, dim {idx.dim})")


def _build_knowledge(tree_file, path_index, description_index, store_file, embedder_kind, cfg):
    kt = tree.load_tree(tree_file)
    corpus = paths.flatten_paths(kt)
    corpus_hash = corpus.content_hash()
    knowledge = Knowledge(corpus=corpus, embedder=_make_embedder(embedder_kind, cfg))
    if path_index:
        knowledge.path_index = retrieval.load_index(path_index, corpus_hash)
    if description_index:
        knowledge.description_index = retrieval.load_index(description_index, corpus_hash)
    if store_file:
        full = describer.load_store(store_file)
        knowledge.store = full.leaf_store(corpus)
    return kt, knowledge


@main.command()
@click.argument("question")
@click.option("--tree", "tree_file", required=True, type=click.Path(exists=True))
@click.option("--conference", default=None, help="Defaults to the tree's conference id.")
@click.option("--retriever", default="dense_path",
              type=click.Choice(list(retrieval.MODES)))
@click.option("--k", default=5, show_default=True)
@click.option("--bm25-k1", default=1.2, show_default=True)
@click.option("--bm25-b", default=0.75, show_default=True)
@click.option("--path-index", type=click.Path(exists=True), default=None)
@click.option("--description-index", type=click.Path(exists=True), default=None)
@click.option("--store", "store_file", type=click.Path(exists=True), default=None)
@click.option("--embedder", default="mock")
@click.option("--generator", default="mock")
@click.option("--explain", is_flag=True, help="Also print the ranked paths and scores.")
@click.pass_context
def ask(ctx, question, tree_file, conference, retriever, k, bm25_k1, bm25_b,
        path_index, description_index, store_file, embedder, generator, explain):
    """One-shot question answering over a prepared conference knowledge base."""
    cfg = ctx.obj["config"]
    try:
        kt, knowledge = _build_knowledge(
            tree_file, path_index, description_index, store_file, embedder, cfg
        )
        gateway, gen_id = _make_generator(generator, cfg)
        rcfg = retrieval.RetrieverConfig(k=k, retriever=retriever, bm25_k1=bm25_k1, bm25_b=bm25_b)
        query = Query(text=question, conference_id=conference or kt.conference_id)
        record = answer(query, knowledge, rcfg, gateway, generator_id=gen_id)
    except Exception as exc:
        _fail(str(exc))
    click.echo(record.answer)
    if explain:
        for path, score in record.retrieved.ranked:
            click.echo(f"{score:10.6f}  {path.serialized()}", err=False)


@main.command("eval")
@click.option("--pairs", "pairs_file", required=True, type=click.Path(exists=True))
@click.option("--tree", "tree_file", required=True, type=click.Path(exists=True))
@click.option("--modes", default="dense_path,dense_description")
@click.option("--k", default=5, show_default=True)
@click.option("--path-index", type=click.Path(exists=True), default=None)
@click.option("--description-index", type=click.Path(exists=True), default=None)
@click.option("--store", "store_file", type=click.Path(exists=True), default=None)
@click.option("--embedder", default="mock")
@click.option("--generator", default="mock")
@click.option("--judge", default="fallback", help="fallback or api")
@click.option("--concurrency", default=8, show_default=True)
@click.option("-o", "--out-dir", required=True, type=click.Path())
@click.pass_context
def eval_cmd(ctx, pairs_file, tree_file, modes, k, path_index, description_index,
             store_file, embedder, generator, judge, concurrency, out_dir):
    """Run the stratified evaluation and write tables, TSV/JSON, and figures."""
    cfg = ctx.obj["config"]
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    try:
        kt, knowledge = _build_knowledge(
            tree_file, path_index, description_index, store_file, embedder, cfg
        )
        pairs_list = evaluation.load_pairs(pairs_file, default_conference=kt.conference_id)
        gateway, gen_id = _make_generator(generator, cfg)
        judge_gateway = None
        if judge == "api":
            judge_gateway, _ = _make_generator("api", cfg)
        rcfg = retrieval.RetrieverConfig(k=k)
        result = evaluation.evaluate_dataset(
            pairs_list,
            {kt.conference_id: knowledge},
            mode_list,
            rcfg,
            gateway,
            judge=judge_gateway,
            generator_id=gen_id,
            concurrency=concurrency,
        )
        os.makedirs(out_dir, exist_ok=True)
        table = report.render_table(result)
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        report.write_tsv(result, os.path.join(out_dir, "report.tsv"))
        report.write_json(result, os.path.join(out_dir, "report.json"))
        figures = report.render_figures(result, out_dir)
    except Exception as exc:
        _fail(str(exc))
    click.echo(table)
    click.echo(f"wrote report.txt, report.tsv, report.json and {len(figures)} figure(s) to {out_dir}")


if __name__ == "__main__":
    main()
