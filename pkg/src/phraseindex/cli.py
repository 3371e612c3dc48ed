"""Command-line entry points: build, train, query, serve, eval, bench."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import load_corpus, load_qa
from .dense import EncoderConfig, ToyEncoder
from .index import BuildConfig, PhraseIndex, build_index
from .search import SearchConfig, embed_question, run_search
from .service import benchmark, eval_em_f1, serve
from .sparse import fit_tfidf
from .training import TrainingConfig, train_encoder


def _search_config(args) -> SearchConfig:
    return SearchConfig(
        strategy=args.strategy,
        top_k=args.top_k,
        sparse_top_docs=args.k_s,
        dense_top_starts=args.k_d,
        nprobe=args.nprobe,
        sparse_scale=args.sparse_scale,
    )


def _add_search_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", default="hybrid", choices=["sfs", "dfs", "hybrid", "exact"])
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--k-s", type=int, default=5, help="sparse-first top documents")
    p.add_argument("--k-d", type=int, default=1000, help="dense-first top start vectors")
    p.add_argument("--nprobe", type=int, default=64)
    p.add_argument("--sparse-scale", type=float, default=0.05)


def _encoder_from_args(args) -> ToyEncoder:
    config = EncoderConfig(
        dim=args.dim, boundary_dim=args.boundary_dim, coherency_dim=args.coherency_dim
    )
    return ToyEncoder(config, seed=args.seed, n_features=args.n_features)


def cmd_build(args) -> int:
    corpus = load_corpus(args.corpus)
    encoder = _encoder_from_args(args)
    if args.encoder_state:
        state = json.loads(Path(args.encoder_state).read_text())
        encoder.linear = np.asarray(state["linear"], dtype=float)
    tfidf = fit_tfidf(corpus)
    out = build_index(
        corpus,
        encoder,
        tfidf,
        None,
        args.out,
        BuildConfig(max_span=args.max_span, seed=args.seed, ivf_clusters=args.clusters),
    )
    index = PhraseIndex(out)
    print(json.dumps({"index": str(out), "counts": index.counts}))
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    qa = load_qa(args.qa)
    # Precedence: explicit flag > config file > built-in default.
    file_cfg = json.loads(Path(args.config).read_text()) if args.config else {}

    def setting(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    encoder = ToyEncoder(
        EncoderConfig(
            dim=setting(args.dim, "dim", 64),
            boundary_dim=setting(args.boundary_dim, "boundary_dim", 28),
            coherency_dim=setting(args.coherency_dim, "coherency_dim", 4),
        ),
        seed=setting(args.seed, "seed", 0),
        n_features=setting(args.n_features, "n_features", 256),
    )
    config = TrainingConfig(
        learning_rate=setting(args.lr, "learning_rate", 0.05),
        epochs=setting(args.epochs, "epochs", 10),
        seed=setting(args.seed, "seed", 0),
        max_span=setting(args.max_span, "max_span", 20),
        negatives_per_paragraph=file_cfg.get("negatives_per_paragraph", 2),
    )
    history = train_encoder(corpus, qa, encoder, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(history, indent=2) + "\n")
    (out / "encoder_state.json").write_text(
        json.dumps({"linear": encoder.linear.tolist()}) + "\n"
    )
    print(json.dumps({"epochs": len(history), "final": history[-1]}))
    return 0


def cmd_query(args) -> int:
    index = PhraseIndex(args.index)
    out = run_search(index, embed_question(index, args.question), _search_config(args))
    print(
        json.dumps(
            [
                {
                    "text": r.text,
                    "doc_id": r.span.doc_id,
                    "doc_title": r.doc_title,
                    "para_idx": r.span.para_idx,
                    "start_token": r.span.i,
                    "end_token": r.span.j,
                    "score": r.score,
                    "dense_score": r.dense_score,
                    "sparse_score": r.sparse_score,
                    "strategy": r.strategy,
                }
                for r in out.results
            ],
            indent=2,
        )
    )
    return 0


def cmd_serve(args) -> int:
    serve(args.index, args.addr, _search_config(args))
    return 0


def cmd_eval(args) -> int:
    index = PhraseIndex(args.index)
    qa = load_qa(args.qa)
    cfg = _search_config(args)
    predictions = []
    for rec in qa:
        out = run_search(index, embed_question(index, rec.question), cfg)
        predictions.append(out.results[0].text if out.results else "")
    report = eval_em_f1(predictions, [rec.answers for rec in qa])
    print(json.dumps(asdict(report), indent=2))
    return 0


def cmd_bench(args) -> int:
    index = PhraseIndex(args.index)
    qa = load_qa(args.qa)
    reports = benchmark(
        index, [(rec.question, rec.answers) for rec in qa], _search_config(args)
    )
    print(json.dumps({k: asdict(v) for k, v in reports.items()}, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="phraseindex")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build an index directory from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-span", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=1 << 20)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--boundary-dim", type=int, default=28)
    p.add_argument("--coherency-dim", type=int, default=4)
    p.add_argument("--n-features", type=int, default=256)
    p.add_argument("--encoder-state", help="encoder_state.json from a training run")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train the encoder's linear layer on a QA set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of training settings; flags override it")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-span", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--boundary-dim", type=int)
    p.add_argument("--coherency-dim", type=int)
    p.add_argument("--n-features", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="answer one question against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--question", required=True)
    _add_search_args(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--index", required=True)
    p.add_argument("--addr", default="127.0.0.1:8080")
    _add_search_args(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="EM/F1 of top-1 answers on a QA set")
    p.add_argument("--index", required=True)
    p.add_argument("--qa", required=True)
    _add_search_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency/throughput benchmark on a QA set")
    p.add_argument("--index", required=True)
    p.add_argument("--qa", required=True)
    _add_search_args(p)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
