"""Command-line entry point.

Subcommands: ``index`` (encode a corpus), ``run`` (batch benchmark), ``eval``
(score a run file), ``compare`` (paired significance between two runs), and
``serve`` (interactive session service). Every flag mirrors a config-file key
and overrides it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import (
    ConfigError,
    PipelineConfig,
    apply_overrides,
    build_encoder,
    build_llm,
    load_config,
)
from .evaluation import EvaluationError, METRICS, Qrels, evaluate_run, load_run
from .index import DenseIndex, PassageStore
from .pipeline import PipelineError, build_corpus_index, compare_runs, run_benchmark
from .prompting import load_demonstrations

logger = logging.getLogger(__name__)


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override its values")


def _add_encoder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--encoder", choices=["mock", "remote", "precomputed"],
                        help="embedding backend")
    parser.add_argument("--dim", type=int, help="embedding dimension")
    parser.add_argument("--encoder-endpoint", help="remote encoder URL")
    parser.add_argument("--encoder-store", help="precomputed vector store path")


def _add_llm_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--llm", choices=["mock", "http"], help="generation backend")
    parser.add_argument("--seed", type=int, help="mock backend seed")
    parser.add_argument("--fixtures", help="mock backend fixture file")
    parser.add_argument("--llm-endpoint", help="chat-completion service URL")
    parser.add_argument("--model", help="model name for the http backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convsearch",
        description="Conversational search: LLM query rewriting, intent aggregation, "
                    "dense retrieval, and TREC evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="encode a passage or document corpus into a dense index")
    _add_config_flag(p_index)
    p_index.add_argument("--corpus", help="JSONL corpus file")
    p_index.add_argument("--out", help="index output path")
    p_index.add_argument("--docs", action="store_true",
                         help="treat corpus lines as documents and split them into passages")
    p_index.add_argument("--split-window", type=int, help="tokens per passage window")
    p_index.add_argument("--split-stride", type=int, help="tokens between window starts")
    p_index.add_argument("--shard-size", type=int, help="passages per checkpoint shard")
    p_index.add_argument("--cache-dir", help="checkpoint directory for resumable builds")
    _add_encoder_flags(p_index)

    p_run = sub.add_parser("run", help="run the benchmark pipeline over a topics file")
    _add_config_flag(p_run)
    p_run.add_argument("--index", help="dense index path")
    p_run.add_argument("--topics", help="sessions JSONL file")
    p_run.add_argument("--qrels", help="TREC qrels file (enables evaluation)")
    p_run.add_argument("--demos", help="demonstrations JSON file")
    p_run.add_argument("--prompting", choices=["rew", "rtr", "rar"])
    p_run.add_argument("--aggregation", choices=["maxprob", "sc", "mean"])
    p_run.add_argument("--cot", action=argparse.BooleanOptionalAction, default=None,
                       help="chain-of-thought prompting")
    p_run.add_argument("--n", type=int, help="rewrite samples")
    p_run.add_argument("--m", type=int, help="responses per rewrite")
    p_run.add_argument("--temperature", type=float)
    p_run.add_argument("--topk", type=int, help="retrieval depth")
    p_run.add_argument("--mrr-threshold", type=int, help="positive relevance grade")
    p_run.add_argument("--doc-maxp", action="store_true", default=None,
                       help="rank documents by their best passage")
    p_run.add_argument("--trace", help="trace JSONL output path")
    p_run.add_argument("--out-dir", help="output directory")
    p_run.add_argument("--tag", help="run tag used in file names and run lines")
    p_run.add_argument("--workers", type=int, help="parallel sessions")
    p_run.add_argument("--cache-dir", help="completion/encoding cache directory")
    _add_llm_flags(p_run)
    _add_encoder_flags(p_run)

    p_eval = sub.add_parser("eval", help="score a run file against qrels")
    p_eval.add_argument("--run", required=True, help="TREC run file")
    p_eval.add_argument("--qrels", required=True, help="TREC qrels file")
    p_eval.add_argument("--mrr-threshold", type=int, default=1)
    p_eval.add_argument("--out-dir", default="out", help="where the table and figures go")

    p_compare = sub.add_parser("compare", help="paired significance test between two runs")
    p_compare.add_argument("--run-a", required=True)
    p_compare.add_argument("--run-b", required=True)
    p_compare.add_argument("--qrels", required=True)
    p_compare.add_argument("--metric", choices=list(METRICS),
                           help="restrict the test to one metric")
    p_compare.add_argument("--mrr-threshold", type=int, default=1)
    p_compare.add_argument("--out-dir", default="out")

    p_serve = sub.add_parser("serve", help="start the interactive session service")
    _add_config_flag(p_serve)
    p_serve.add_argument("--index", help="dense index path")
    p_serve.add_argument("--corpus", help="corpus JSONL for passage snippets")
    p_serve.add_argument("--demos", help="demonstrations JSON file")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--ttl", type=float, help="idle session eviction, seconds")
    p_serve.add_argument("--journal", help="append-only session event log")
    _add_llm_flags(p_serve)
    _add_encoder_flags(p_serve)

    return parser


def _base_config(args: argparse.Namespace, mapping: dict[str, str]) -> PipelineConfig:
    config = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for arg_name, dotted in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[dotted] = value
    return apply_overrides(config, **overrides)


_ENCODER_FLAGS = {
    "encoder": "encoder.backend",
    "dim": "encoder.dim",
    "encoder_endpoint": "encoder.endpoint",
    "encoder_store": "encoder.store_path",
}
_LLM_FLAGS = {
    "llm": "llm.backend",
    "seed": "llm.seed",
    "fixtures": "llm.fixtures",
    "llm_endpoint": "llm.endpoint",
    "model": "llm.model",
}


def _cmd_index(args: argparse.Namespace) -> int:
    config = _base_config(args, {
        **_ENCODER_FLAGS,
        "corpus": "paths.corpus",
        "out": "paths.index",
        "cache_dir": "paths.cache_dir",
        "split_window": "split_window",
        "split_stride": "split_stride",
        "shard_size": "shard_size",
    })
    path = build_corpus_index(config, docs=args.docs)
    index = DenseIndex.load(path)
    print(f"indexed {index.count} passages (dim {index.dim}) -> {path}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _base_config(args, {
        **_ENCODER_FLAGS,
        **_LLM_FLAGS,
        "index": "paths.index",
        "topics": "paths.topics",
        "qrels": "paths.qrels",
        "demos": "paths.demos",
        "trace": "paths.trace",
        "out_dir": "paths.output_dir",
        "cache_dir": "paths.cache_dir",
        "prompting": "method.prompting",
        "aggregation": "method.aggregation",
        "cot": "method.cot",
        "n": "method.n",
        "m": "method.m",
        "temperature": "method.temperature",
        "topk": "method.top_k",
        "mrr_threshold": "mrr_threshold",
        "doc_maxp": "doc_maxp",
        "tag": "tag",
        "workers": "workers",
    })
    result = run_benchmark(config)
    print(f"run file: {result.run_path}")
    print(f"trace:    {result.trace_path}")
    if result.failed_turns:
        print(f"turns with no output: {', '.join(result.failed_turns)}", file=sys.stderr)
    if result.report is not None:
        from .report import write_eval_report

        artifacts = write_eval_report(
            result.report, config.paths.output_dir, stem=config.tag
        )
        for metric in METRICS:
            print(f"{metric}\t{result.report.means[metric]:.4f}")
        print(f"table:    {artifacts['table']}")
        for figure in artifacts["figures"]:
            print(f"figure:   {figure}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from .report import write_eval_report

    run = load_run(args.run)
    qrels = Qrels.load(args.qrels)
    report = evaluate_run(run, qrels, args.mrr_threshold)
    stem = Path(args.run).stem
    artifacts = write_eval_report(report, args.out_dir, stem=stem)
    for metric in METRICS:
        print(f"{metric}\t{report.means[metric]:.4f}")
    print(f"table:    {artifacts['table']}")
    for figure in artifacts["figures"]:
        print(f"figure:   {figure}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    from .report import write_comparison_report

    qrels = Qrels.load(args.qrels)
    comparison = compare_runs(
        args.run_a, args.run_b, qrels, metric=args.metric, mrr_threshold=args.mrr_threshold
    )
    label_a = Path(args.run_a).stem
    label_b = Path(args.run_b).stem
    artifacts = write_comparison_report(
        comparison, args.out_dir, stem=f"{label_a}_vs_{label_b}",
        label_a=label_a, label_b=label_b,
    )
    for metric in comparison.metrics:
        test = comparison.tests[metric]
        flag = "significant" if test.significant() else "not significant"
        print(
            f"{metric}\t{comparison.means_a[metric]:.4f} vs {comparison.means_b[metric]:.4f}"
            f"\tt={test.t:.4f}\tp={test.p:.4g}\t{flag}"
        )
    print(f"table:    {artifacts['table']}")
    for figure in artifacts["figures"]:
        print(f"figure:   {figure}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    config = _base_config(args, {
        **_ENCODER_FLAGS,
        **_LLM_FLAGS,
        "index": "paths.index",
        "corpus": "paths.corpus",
        "demos": "paths.demos",
        "ttl": "service_ttl_seconds",
        "journal": "journal",
    })
    if not config.paths.index:
        raise ConfigError("an index is required to serve (--index or paths.index)")
    index = DenseIndex.load(config.paths.index)
    passages = PassageStore.from_file(config.paths.corpus) if config.paths.corpus else None
    state = ServiceState(
        llm=build_llm(config.llm),
        encoder=build_encoder(config.encoder),
        index=index,
        demonstrations=load_demonstrations(config.paths.demos_path()),
        passages=passages,
        ttl_seconds=config.service_ttl_seconds,
        journal_path=config.journal,
        max_output_tokens=config.llm.max_output_tokens,
    )
    app = create_app(state)
    print(f"serving on http://{args.host}:{args.port} "
          f"(index: {index.count} passages, snippets: {'yes' if passages else 'no'})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "index": _cmd_index,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, PipelineError, EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
