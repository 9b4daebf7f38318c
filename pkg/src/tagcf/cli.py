"""Command-line entry point: ``tagcf <subcommand>``.

Every invocation writes into its own run directory under ``--out`` together
with a ``manifest.json`` listing inputs and outputs with sha256 digests.
Upstream artifacts default to the ``latest`` run of the producing subcommand.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .exceptions import ConfigError, TagcfError
from .runs import RunDirectory, RunManifest, latest_run, resolve_artifact, sha256_file

logger = logging.getLogger("tagcf")

COMMANDS = ("gen-synthetic", "extract", "build", "train", "eval", "analyze-paths", "sweep")


class Run:
    """Bookkeeping handed to each subcommand."""

    def __init__(self, run_dir: RunDirectory, manifest: RunManifest):
        self.dir = run_dir
        self.manifest = manifest

    @property
    def path(self) -> Path:
        return self.dir.path

    def input(self, name, path) -> Path:
        path = Path(path)
        self.manifest.inputs[name] = {"path": str(path.resolve()), "sha256": sha256_file(path)}
        return path

    def output(self, name) -> Path:
        return self.dir.file(name)

    def record_outputs(self):
        for p in sorted(self.path.iterdir()):
            if p.is_file() and p.name not in (".lock", "manifest.json", "manifest.json.tmp"):
                self.manifest.artifacts[p.name] = {"path": p.name, "sha256": sha256_file(p)}


# -- subcommands -------------------------------------------------------------------------


def cmd_gen_synthetic(args, cfg, run):
    from .synthetic import generate_synthetic

    syn = generate_synthetic(args.users, args.items, args.topics, args.per_user, args.noise,
                             seed=args.seed, topics_per_user=args.topics_per_user)
    syn.write(run.path)
    match = syn.topic_match().mean()
    print(f"wrote {syn.dataset.n_interactions} interactions "
          f"({syn.dataset.n_users} users, {syn.dataset.n_items} items, "
          f"on-topic fraction {match:.3f}) to {run.path}")


def _read_jsonl(path, key):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[key(obj)] = obj
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                from .exceptions import ParseError
                raise ParseError(f"bad record: {exc}", path, lineno) from None
    return out


def cmd_extract(args, cfg, run):
    from .attributes import write_attribute_jsonl
    from .data import load_interactions
    from .extraction import (ChatClient, ChatClientConfig, ExtractionLedger, ExtractionRequest,
                             default_template, extract_attributes, mock_extract, run_extraction)

    inter = run.input("interactions", resolve_artifact(
        args.interactions, args.out, "gen-synthetic", "interactions.tsv"))
    ds = load_interactions(inter)
    src = Path(inter).parent
    reviews = {}
    rpath = Path(args.reviews) if args.reviews else src / "reviews.jsonl"
    if rpath.exists():
        run.input("reviews", rpath)
        reviews = {k: v.get("review", "") for k, v in
                   _read_jsonl(rpath, lambda o: (str(o["user"]), str(o["item"]))).items()}
    metadata = {}
    ipath = Path(args.items) if args.items else src / "items.jsonl"
    if ipath.exists():
        run.input("items", ipath)
        metadata = {k: v.get("metadata", {}) for k, v in
                    _read_jsonl(ipath, lambda o: str(o["item"])).items()}

    requests, empty = [], 0
    for u, i in ds.pairs:
        uid, iid = ds.user_ids[u], ds.item_ids[i]
        review = reviews.get((uid, iid), "")
        meta = metadata.get(iid, {})
        if not review.strip() and not meta:
            empty += 1
            continue
        requests.append(ExtractionRequest(int(u), int(i), review, meta))

    log_path = run.output("requests.jsonl")
    if args.mock:
        with open(log_path, "w", encoding="utf-8") as fh:
            for req in requests:
                fh.write(json.dumps({"user": ds.user_ids[req.user], "item": ds.item_ids[req.item],
                                     "mode": "mock", "seed": args.seed}) + "\n")
        records, ledger = run_extraction(requests, lambda r: mock_extract(r, args.seed))
    else:
        ec = cfg.extraction
        if not ec.base_url or not ec.model_name:
            raise ConfigError("live extraction needs [extraction] base_url and model_name "
                              "(or pass --mock)")
        ccfg = ChatClientConfig(ec.base_url, ec.model_name, ec.max_concurrent_requests,
                                ec.max_attempts, ec.backoff_base, ec.timeout, ec.temperature)
        tmpl = default_template(ec.domain)
        with ChatClient(ccfg, log_path=log_path) as client:
            records, ledger = run_extraction(
                requests, lambda r: extract_attributes(client, tmpl, r),
                max_workers=min(args.threads * 4, ccfg.max_concurrent_requests))
    ledger = ExtractionLedger(ledger.succeeded, ledger.skipped + empty, ledger.failed,
                              ledger.requests, ledger.errors)
    write_attribute_jsonl(records, ds, run.output("attributes.jsonl"))
    with open(run.output("extraction_ledger.json"), "w", encoding="utf-8") as fh:
        json.dump({"succeeded": ledger.succeeded, "skipped": ledger.skipped,
                   "failed": ledger.failed, "requests": ledger.requests,
                   "interactions": ds.n_interactions, "errors": ledger.errors}, fh, indent=2)
        fh.write("\n")
    print(ledger.summary())


def cmd_build(args, cfg, run):
    from .attributes import (AttributeFusion, read_attribute_jsonl, write_edges_tsv,
                             write_vocabulary_tsv)
    from .data import (kcore_filter, load_interactions, load_split_manifest, save_split_manifest,
                       split_dataset)
    from .graph import build_graph, save_graph

    if args.split:
        split = load_split_manifest(run.input("split", resolve_artifact(args.split, args.out,
                                                                         "build", "split.tsv")))
        save_split_manifest(split, run.output("split.tsv"))
    else:
        inter = run.input("interactions", resolve_artifact(
            args.interactions, args.out, "gen-synthetic", "interactions.tsv"))
        ds = load_interactions(inter)
        k = args.kcore if args.kcore is not None else cfg.data.kcore
        if k > 0:
            ds = kcore_filter(ds, k)
        save_split_manifest(split_dataset(ds, cfg.data.split, seed=args.seed),
                            run.output("split.tsv"))
    split = load_split_manifest(run.output("split.tsv"))
    ds = split.dataset
    attrs = run.input("attributes", resolve_artifact(args.attributes, args.out, "extract",
                                                     "attributes.jsonl"))
    records = read_attribute_jsonl(attrs, ds, strict=False)
    train = {(int(u), int(i)) for u, i in split.train}
    records = [r for r in records if (r.user, r.item) in train]

    fc = cfg.fusion
    fusion = AttributeFusion(fc.tau_min, fc.tau_max, fc.make_oracle(), skip=args.no_ff)
    fusion.fit(records)
    ua, ia = fusion.transform(records)
    graph = build_graph(ds.n_users, ds.n_items, split.train, ua, ia, fusion.n_attrs_)
    write_vocabulary_tsv(fusion.vocabulary_, fusion.fusion_, run.output("vocabulary.tsv"))
    write_edges_tsv(ua, ds.user_ids, run.output("user_attr.tsv"))
    write_edges_tsv(ia, ds.item_ids, run.output("item_attr.tsv"))
    save_graph(graph, run.output("graph.npz"))
    summary = graph.summary()
    summary.update({"filter_fuse": not args.no_ff, "raw_attributes": len(fusion.vocabulary_)
                    if args.no_ff else len(fusion.vocabulary_) + fusion.vocabulary_.pruned_low
                    + fusion.vocabulary_.pruned_high,
                    "fusion_passes": fusion.fusion_.passes})
    with open(run.output("graph_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))


def _build_inputs(args, run, build_dir=None):
    from .data import load_split_manifest
    from .graph import load_graph

    base = Path(build_dir) if build_dir else latest_run(args.out, "build")
    split_p = resolve_artifact(None if build_dir is None else base / "split.tsv", args.out,
                               "build", "split.tsv")
    graph_p = resolve_artifact(None if build_dir is None else base / "graph.npz", args.out,
                               "build", "graph.npz")
    split = load_split_manifest(run.input("split", split_p))
    graph = load_graph(run.input("graph", graph_p))
    if (graph.n_users, graph.n_items) != (split.n_users, split.n_items):
        raise ConfigError("graph and split manifest disagree on user/item counts")
    return split, graph, base


def _model_overrides(args):
    over = {}
    for flag, key in (("layers", "model.n_layers"), ("dim", "model.embed_dim"),
                      ("gate_mode", "model.gate_mode"), ("lr", "train.learning_rate"),
                      ("epochs", "train.max_epochs"), ("patience", "train.patience"),
                      ("batch_size", "train.batch_size"), ("reg", "train.reg_lambda")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "no_argc", False):
        over["model.ablation"] = "no_argc"
    return over


def _estimator(cfg):
    from .estimator import TAGCFRecommender

    m, t = cfg.model, cfg.train
    return TAGCFRecommender(n_layers=m.n_layers, embed_dim=m.embed_dim, hidden_dim=m.hidden_dim,
                            gate_mode=m.gate_mode, ablation=m.ablation,
                            leaky_slope=m.leaky_slope, init_scale=m.init_scale,
                            gate_bias_init=m.gate_bias_init, learning_rate=t.learning_rate,
                            reg_lambda=t.reg_lambda, batch_size=t.batch_size,
                            max_epochs=t.max_epochs, patience=t.patience,
                            eval_metric=t.eval_metric, random_state=t.seed)


def cmd_train(args, cfg, run):
    from .evaluation import full_rank_evaluate
    from .training import write_training_log

    split, graph, _ = _build_inputs(args, run, args.build_dir)
    est = _estimator(cfg)
    est.fit(split.train, X_val=split.val, graph=graph, mask_val=split.train,
            n_users=split.n_users, n_items=split.n_items)
    est.save(run.output("model.ckpt"))
    write_training_log(est.training_log_, run.output("training_log.csv"))
    full_rank_evaluate(est, split, on="val").write_csv(run.output("val_metrics.csv"))
    print(f"best epoch {est.best_epoch_}, val {cfg.train.eval_metric} {est.best_score_:.4f}"
          + (" (diverged)" if est.diverged_ else ""))


def cmd_eval(args, cfg, run):
    from .checkpoint import load_checkpoint
    from .estimator import TAGCFRecommender
    from .evaluation import full_rank_evaluate

    if args.checkpoint:
        ckpt_p = resolve_artifact(args.checkpoint, args.out, "train", "model.ckpt")
        build_dir = args.build_dir
    else:
        tdir = Path(args.train_dir) if args.train_dir else latest_run(args.out, "train")
        ckpt_p = resolve_artifact(tdir / "model.ckpt", args.out, "train", "model.ckpt")
        build_dir = args.build_dir
        if build_dir is None and (tdir / "manifest.json").exists():
            graph_in = RunManifest.read(tdir / "manifest.json").inputs.get("graph")
            if graph_in:
                build_dir = Path(graph_in["path"]).parent
    split, graph, _ = _build_inputs(args, run, build_dir)
    ckpt = load_checkpoint(run.input("checkpoint", ckpt_p), graph=graph)
    est = TAGCFRecommender.from_checkpoint(ckpt, graph)
    ks = tuple(int(k) for k in args.ks.split(","))
    report = full_rank_evaluate(est, split, ks=ks, on="test")
    report.write_csv(run.output("metrics.csv"))
    for m, k, v, n in report.rows():
        print(f"{m}@{k}\t{v:.4f}\t(n_users={n})")


def cmd_analyze_paths(args, cfg, run):
    from .evaluation import attribute_paths, path_overlap_analysis

    split, graph, base = _build_inputs(args, run, args.build_dir)
    stats = path_overlap_analysis(graph, split.test)
    stats.write_csv(run.output("path_stats.csv"))
    names = []
    vocab_p = base / "vocabulary.tsv"
    if vocab_p.exists():
        with open(run.input("vocabulary", vocab_p), encoding="utf-8") as fh:
            names = [line.rstrip("\n").split("\t")[1] for line in fh if line.strip()]
    ds = split.dataset
    shown = 0
    with open(run.output("example_paths.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for u, i in split.test:
            if shown >= args.examples:
                break
            via = attribute_paths(graph, int(u), int(i), names or None)
            if via:
                fh.write(f"{ds.user_ids[u]} -> [{' | '.join(map(str, via))}] -> {ds.item_ids[i]}\n")
                shown += 1
    print(f"paths {stats.total_2hop_paths}, connected pairs {stats.connected_pairs}, "
          f"test coverage {stats.overlap_ratio:.4f}, path hit rate {stats.overlap_ratio_alt:.6f}")


def _load_experiment_data(args, run):
    from .attributes import read_attribute_jsonl
    from .data import load_interactions
    from .experiments import ExperimentData

    base = Path(args.data_dir) if args.data_dir else latest_run(args.out, "gen-synthetic")
    inter = resolve_artifact(base / "interactions.tsv", args.out, "gen-synthetic",
                             "interactions.tsv")
    ds = load_interactions(run.input("interactions", inter))
    attrs_p = Path(args.attributes) if args.attributes else base / "attributes.jsonl"
    attrs_p = resolve_artifact(attrs_p, args.out, "extract", "attributes.jsonl")
    records = read_attribute_jsonl(run.input("attributes", attrs_p), ds)
    metadata = None
    items_p = base / "items.jsonl"
    if items_p.exists():
        raw = _read_jsonl(run.input("items", items_p), lambda o: str(o["item"]))
        metadata = [raw.get(iid, {}).get("metadata", {}) for iid in ds.item_ids]
    return ExperimentData(ds, records, metadata)


def cmd_sweep(args, cfg, run):
    from .attributes import AttributeFusion
    from .experiments import (cold_start_sweep, default_estimator, default_fusion, layer_sweep,
                              sparsity_sweep, write_improvement_csv, write_sweep_csv)

    data = _load_experiment_data(args, run)
    grid = [float(g) for g in args.grid.split(",") if g.strip()]
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else cfg.seeds
    if args.config:
        est = _estimator(cfg)
        fc = cfg.fusion
        fusion = AttributeFusion(fc.tau_min, fc.tau_max, fc.make_oracle())
    else:
        est, fusion = default_estimator(), default_fusion()
        for name, value in _model_overrides(args).items():
            est.set_params(**{_EST_PARAM[name]: value})
    if args.kind == "sparsity":
        rows = sparsity_sweep(data, grid, seeds, est, fusion)
    elif args.kind == "cold":
        rows = cold_start_sweep(data, grid, seeds, est, fusion)
    else:
        rows = layer_sweep(data, [int(g) for g in grid], seeds, est, fusion)
    write_sweep_csv(rows, run.output("sweep.csv"))
    write_improvement_csv(rows, run.output("improvement.csv"))
    print(f"{len(rows)} rows written to {run.output('sweep.csv')}")


_EST_PARAM = {"model.n_layers": "n_layers", "model.embed_dim": "embed_dim",
              "model.gate_mode": "gate_mode", "train.learning_rate": "learning_rate",
              "train.max_epochs": "max_epochs", "train.patience": "patience",
              "train.batch_size": "batch_size", "train.reg_lambda": "reg_lambda",
              "model.ablation": "ablation"}

HANDLERS = {"gen-synthetic": cmd_gen_synthetic, "extract": cmd_extract, "build": cmd_build,
            "train": cmd_train, "eval": cmd_eval, "analyze-paths": cmd_analyze_paths,
            "sweep": cmd_sweep}


# -- argument parsing ---------------------------------------------------------------------


def _model_flags(p):
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--gate-mode", choices=("raw", "softmax"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--reg", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="random seed (overrides train.seed)")
    common.add_argument("--out", default="runs", help="output root (default: ./runs)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--run-name", help="run directory name (default: UTC timestamp)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tagcf", parents=[common],
                                     description="Topology-augmented graph collaborative filtering")
    parser.add_argument("--version", action="version", version=f"tagcf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a planted-topic dataset")
    p.add_argument("--users", type=int, default=300)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--per-user", type=int, default=15)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--topics-per-user", type=int, default=2)

    p = sub.add_parser("extract", parents=[common], help="extract attributes per interaction")
    p.add_argument("--interactions")
    p.add_argument("--reviews", help="JSONL {user, item, review}")
    p.add_argument("--items", help="JSONL {item, metadata}")
    p.add_argument("--mock", action="store_true", help="offline deterministic extractor")

    p = sub.add_parser("build", parents=[common], help="filter, fuse and build the graph")
    p.add_argument("--interactions")
    p.add_argument("--attributes")
    p.add_argument("--split", help="existing split manifest to reuse")
    p.add_argument("--kcore", type=int)
    p.add_argument("--no-ff", action="store_true", help="skip frequency filtering and fusion")

    p = sub.add_parser("train", parents=[common], help="train with BPR and early stopping")
    p.add_argument("--build-dir")
    p.add_argument("--no-argc", action="store_true", help="plain propagation, no relation gates")
    _model_flags(p)

    p = sub.add_parser("eval", parents=[common], help="full-ranking test metrics")
    p.add_argument("--train-dir")
    p.add_argument("--checkpoint")
    p.add_argument("--build-dir")
    p.add_argument("--ks", default="5,20")

    p = sub.add_parser("analyze-paths", parents=[common], help="user-attribute-item path stats")
    p.add_argument("--build-dir")
    p.add_argument("--examples", type=int, default=20)

    p = sub.add_parser("sweep", parents=[common], help="paired TAGCF vs baseline sweeps")
    p.add_argument("--kind", choices=("sparsity", "cold", "layers"), required=True)
    p.add_argument("--grid", required=True, help="comma-separated sweep values")
    p.add_argument("--seeds", help="comma-separated seeds (default: [sweep] seeds)")
    p.add_argument("--data-dir")
    p.add_argument("--attributes")
    _model_flags(p)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _model_overrides(args) if args.command in ("train", "sweep") else {}
        if args.seed is not None:
            overrides["train.seed"] = args.seed
        cfg = load_config(args.config, overrides)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except TagcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is None:
        args.seed = cfg.train.seed

    run_dir = RunDirectory(args.out, args.command, args.run_name)
    manifest = RunManifest(args.command, argv, cfg.to_dict(), [args.seed], __version__)
    try:
        with run_dir:
            run = Run(run_dir, manifest)
            if args.config:
                run.input("config", args.config)
            try:
                from threadpoolctl import threadpool_limits

                with threadpool_limits(args.threads):
                    HANDLERS[args.command](args, cfg, run)
                manifest.status = "success"
            except (TagcfError, OSError, ValueError) as exc:
                manifest.status = "failed"
                manifest.error = f"{type(exc).__name__}: {exc}"
                print(f"error: {exc}", file=sys.stderr)
            except BaseException as exc:
                manifest.status = "failed"
                manifest.error = f"{type(exc).__name__}: {exc}"
                raise
            finally:
                run.record_outputs()
                manifest.finished = manifest.finished or _stamp()
                manifest.write(run_dir.file("manifest.json"))
            if manifest.status == "success":
                run_dir.mark_latest()
    except TagcfError as exc:  # lock contention
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if manifest.status == "success" else 1


def _stamp():
    from .runs import _now
    return _now()


if __name__ == "__main__":
    sys.exit(main())
