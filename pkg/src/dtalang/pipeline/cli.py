"""Command line interface: ``dtalang <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dtalang.embedder import EmbeddingTable, SkipGramParams, train_skipgram
from dtalang.errors import ConfigError, DataError, DtaError, InvariantError
from dtalang.evalkit import paired_t_test, ward_cluster
from dtalang.featurize import MODEL_RECIPES, FeatureInputs, Featurizer, WordScheme
from dtalang.pipeline import datasets
from dtalang.pipeline.config import ExperimentConfig, config_from_dict, load_config
from dtalang.pipeline.experiment import (build_similarity, build_word_inputs, mss_table,
                                         run_experiment, run_sweep, write_mss_outputs,
                                         SUMMARY_HEADER)
from dtalang.pipeline.folds import FoldPlan, derive_seed, make_folds
from dtalang.pipeline.synthetic import make_synthetic
from dtalang.seqsim import SimilarityMatrix
from dtalang.smiles_lang import BpeVocabulary, read_corpus, train_bpe

logger = logging.getLogger("dtalang")


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not getattr(args, "dataset", None) or not getattr(args, "recipe", None):
            raise ConfigError("pass --config or both --dataset and --recipe")
        cfg = config_from_dict({"dataset": args.dataset, "recipe": args.recipe})
    if getattr(args, "dataset", None) and args.config:
        cfg.dataset = args.dataset
    if getattr(args, "recipe", None) and args.config:
        cfg.recipe = config_from_dict({"dataset": ".", "recipe": args.recipe}).recipe
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    if args.threads:
        cfg.threads = args.threads
    if args.deterministic:
        cfg.threads = 1
    return cfg


def cmd_ingest(args) -> int:
    out = _out(args, "dataset")
    if args.bindingdb:
        columns = json.loads(Path(args.columns).read_text()) if args.columns else None
        ds = datasets.filter_bindingdb(datasets.read_bindingdb(args.bindingdb, columns),
                                       args.min_protein, args.min_ligand)
    elif args.deepdta:
        ds = datasets.load_deepdta_dir(args.deepdta, kind=args.kind)
    else:
        raise ConfigError("ingest needs --bindingdb or --deepdta")
    ds.save(out)
    print(f"{len(ds.proteins)} proteins, {len(ds.ligands)} ligands, "
          f"{len(ds.interactions)} interactions -> {out}")
    return 0


def cmd_bpe_train(args) -> int:
    vocab = train_bpe(read_corpus(args.corpus), args.target_size, args.coverage,
                      args.max_word_len)
    out = _out(args, "bpe_vocab.txt")
    vocab.save(out)
    print(f"{len(vocab.merges)} merges, {len(vocab.tokens)} tokens -> {out}")
    return 0


def cmd_embed_train(args) -> int:
    scheme = WordScheme.parse(args.scheme)
    vocab = BpeVocabulary.load(args.vocab) if args.vocab else None
    if scheme.kind == "bpe" and vocab is None:
        raise ConfigError("the bpe scheme needs --vocab")
    sentences = [scheme.tokenize(s, vocab) for s in read_corpus(args.corpus)]
    seed = args.seed if args.seed is not None else 1
    params = SkipGramParams(dim=args.dim, window=args.window, negative=args.negative,
                            epochs=args.epochs, min_count=args.min_count, seed=seed)
    table = train_skipgram(sentences, params)
    out = _out(args, "embeddings.txt")
    table.save(out)
    print(f"{len(table.words)} words x {table.dim} -> {out}")
    return 0


def cmd_sw_matrix(args) -> int:
    if not args.config and not args.dataset:
        raise ConfigError("sw-matrix needs --dataset or --config")
    cfg = _experiment_config(args) if args.config else config_from_dict(
        {"dataset": args.dataset, "recipe": "S1",
         "sw": {"gap_open": args.gap_open, "gap_extend": args.gap_extend,
                "matrix": args.matrix}})
    cfg.threads = 1 if args.deterministic else (args.threads or 1)
    ds = datasets.InteractionDataset.load(cfg.dataset)
    sim = build_similarity(ds, replace(cfg, sw_matrix=None))
    out = _out(args, "sw_matrix.tsv")
    sim.save(out)
    print(f"{len(sim.ids)} x {len(sim.ids)} similarity matrix -> {out}")
    return 0


def cmd_split(args) -> int:
    ds = datasets.InteractionDataset.load(args.dataset)
    seed = derive_seed(args.seed or 0, "folds")
    plan = make_folds(len(ds.interactions), seed, args.parts)
    out = _out(args, "folds.json")
    plan.save(out)
    print(f"part sizes {plan.sizes()}, test part {plan.test_part} -> {out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _experiment_config(args)
    ds = datasets.InteractionDataset.load(cfg.dataset)
    plan = FoldPlan.load(args.folds) if args.folds else None
    if plan is not None:
        train = ds.subset(plan.train_indices)
    else:
        logger.warning("no --folds given: ligand-centric vectors use every interaction")
        train = ds.interactions
    out = _out(args, "features")
    out.mkdir(parents=True, exist_ok=True)
    recipe = cfg.recipe
    vocab = table = None
    if recipe.needs_words:
        vocab, table = build_word_inputs(ds, cfg, train, out, cfg.seed)
    sim = None
    if recipe.uses_sw:
        sim = build_similarity(ds, cfg)
    prot = None
    if recipe.protein_mode == "protein_embedding":
        prot = EmbeddingTable.load(cfg.protein_embeddings)
    aug = datasets.load_augmentation(cfg.augmentation, ds) if cfg.augmentation else None
    inputs = FeatureInputs(table, vocab, sim, prot, aug,
                           seed=derive_seed(cfg.seed, "random-vectors") % (2**31))
    fm = Featurizer(ds, recipe, inputs, train).transform(ds.interactions)
    fm.save(out / "features")
    print(f"{fm.values.shape[0]} x {fm.values.shape[1]} feature matrix -> {out}")
    return 0


def _run_until(args, until: str) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg, until=until)
    if report is None:
        print(f"stopped after {until}; outputs in {cfg.output_dir}")
    else:
        print(f"CI {report.ci_mean:.4f} +- {report.ci_std:.4f}  "
              f"MSE {report.mse_mean:.4f} +- {report.mse_std:.4f}  -> {cfg.output_dir}")
    return 0


def cmd_tune(args) -> int:
    return _run_until(args, "tune")


def cmd_train(args) -> int:
    return _run_until(args, "train")


def cmd_evaluate(args) -> int:
    return _run_until(args, "report")


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    names = args.models.split(",") if args.models else list(MODEL_RECIPES)
    unknown = [n for n in names if n not in MODEL_RECIPES]
    if unknown:
        raise ConfigError(f"unknown models {unknown}")
    reports = run_sweep(cfg, [MODEL_RECIPES[n] for n in names])
    for r in reports:
        print(f"{r.recipe.name:>3}  CI {r.ci_mean:.4f} ({r.ci_std:.4f})  "
              f"MSE {r.mse_mean:.4f} ({r.mse_std:.4f})")
    return 0


def _read_predictions(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if not rows:
        raise DataError(f"{path} has no predictions")
    pred_cols = [c for c in rows[0] if c.startswith("pred")]
    preds = [np.array([float(r[c]) for r in rows]) for c in pred_cols]
    return rows, preds


def cmd_analyze_mss(args) -> int:
    exp = Path(args.experiment)
    ds = datasets.InteractionDataset.load(args.dataset)
    plan = FoldPlan.load(exp / "folds.json")
    sim_path = Path(args.sw_matrix) if args.sw_matrix else exp / "artifacts" / "sw_matrix.tsv"
    if not sim_path.exists():
        raise ConfigError(f"no similarity matrix at {sim_path}; pass --sw-matrix")
    sim = SimilarityMatrix.load(sim_path)
    rows, preds = _read_predictions(exp / "predictions.tsv")
    test = ds.subset(plan.test_indices)
    if [(it.protein_id, it.ligand_id) for it in test] != [(r["protein_id"], r["ligand_id"]) for r in rows]:
        raise InvariantError("predictions do not match the test part of the fold plan")
    values, bins, table = mss_table(test, ds.subset(plan.train_indices), sim, preds,
                                    args.bins, ds.larger_is_stronger)
    out = _out(args, str(exp))
    out.mkdir(parents=True, exist_ok=True)
    write_mss_outputs(out, test, values, bins, table)
    for r in table:
        print(f"{r.label:<24} n={r.n:<5} MSE {r.mse_mean:.4f} ({r.mse_std:.4f})  "
              f"CI {r.ci_mean:.4f} ({r.ci_std:.4f})")
    return 0


def cmd_cluster(args) -> int:
    vectors = []
    with open(args.vectors, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        next(reader)
        for row in reader:
            vectors.append((row[0], [float(v) for v in row[1:]]))
    result = ward_cluster(vectors, args.n_clusters)
    out = _out(args, "clusters.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("id\tcluster\n")
        for pid in result.ids:
            fh.write(f"{pid}\t{result.labels[pid]}\n")
    print(f"{len(result.ids)} vectors in {args.n_clusters} clusters -> {out}")
    return 0


def cmd_report(args) -> int:
    reports = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.reports]
    out = _out(args, "summary.tsv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in reports:
            rec = r["recipe"]
            w.writerow([rec.get("name") or "-", rec["protein_mode"], rec["ligand_mode"],
                        rec["word_scheme"], f"{r['ci_mean']:.4f}", f"{r['ci_std']:.4f}",
                        f"{r['mse_mean']:.4f}", f"{r['mse_std']:.4f}"])
    print(out.read_text(encoding="utf-8"), end="")
    if args.compare:
        if len(reports) != 2:
            raise ConfigError("--compare needs exactly two reports")
        for metric in ("ci", "mse"):
            a = [run[metric] for run in reports[0]["runs"]]
            b = [run[metric] for run in reports[1]["runs"]]
            t = paired_t_test(a, b)
            print(f"paired t-test on {metric}: t={t.statistic:.4f} p={t.pvalue:.4g} ({t.outcome})")
    return 0


def cmd_synth(args) -> int:
    bundle = make_synthetic(seed=args.seed or 0)
    paths = bundle.write(_out(args, "synthetic"))
    print(json.dumps({**paths, "noise_floor": bundle.noise_floor}, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # the subcommand copy must not overwrite values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(None), help="master seed")
        g.add_argument("--config", default=d(None), help="experiment config JSON")
        g.add_argument("--deterministic", action="store_true", default=d(False),
                       help="force single-threaded, seed-reproducible execution")
        g.add_argument("--threads", type=int, default=d(None))
        g.add_argument("--out", default=d(None), help="output file or directory")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="dtalang", parents=[global_flags(suppress=False)],
                                     description="Chemical-language drug-target affinity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "build a dataset directory from BindingDB or KIBA files")
    p.add_argument("--bindingdb", help="BindingDB TSV export")
    p.add_argument("--columns", help="JSON map of logical to BindingDB column names")
    p.add_argument("--deepdta", help="directory with ligands_can.txt, proteins.txt and Y")
    p.add_argument("--kind", default=datasets.KIBA, choices=datasets.AFFINITY_KINDS)
    p.add_argument("--min-protein", type=int, default=6)
    p.add_argument("--min-ligand", type=int, default=3)

    p = add("bpe-train", cmd_bpe_train, "learn a BPE vocabulary from a SMILES corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--target-size", type=int, default=20000)
    p.add_argument("--coverage", type=float, default=0.99)
    p.add_argument("--max-word-len", type=int, default=100)

    p = add("embed-train", cmd_embed_train, "train skip-gram chemical word vectors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scheme", default="kmer:8", help="kmer:K or bpe")
    p.add_argument("--vocab", help="BPE vocabulary (bpe scheme)")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--min-count", type=int, default=5)

    p = add("sw-matrix", cmd_sw_matrix, "normalized Smith-Waterman similarity matrix")
    p.add_argument("--dataset")
    p.add_argument("--matrix", help="substitution matrix file (default BLOSUM62)")
    p.add_argument("--gap-open", type=float, default=10.0)
    p.add_argument("--gap-extend", type=float, default=0.5)

    p = add("split", cmd_split, "random six-part fold plan")
    p.add_argument("--dataset", required=True)
    p.add_argument("--parts", type=int, default=6)

    for name, func, text in (("featurize", cmd_featurize, "build a feature matrix"),
                             ("tune", cmd_tune, "grid search on the training folds"),
                             ("train", cmd_train, "tune and save the five fold models"),
                             ("evaluate", cmd_evaluate, "full protocol with test evaluation"),
                             ("sweep", cmd_sweep, "run several named models on one split")):
        p = add(name, func, text)
        p.add_argument("--dataset")
        p.add_argument("--recipe", help="model name (S1, S2, R1, R2, 1-9) or recipe JSON")
        if name == "featurize":
            p.add_argument("--folds", help="fold plan; ligand-centric vectors use its training parts")
        if name == "sweep":
            p.add_argument("--models", help="comma-separated model names (default: all 13)")

    p = add("analyze-mss", cmd_analyze_mss, "per-MSS-bin errors of an evaluated experiment")
    p.add_argument("--experiment", required=True, help="output directory of evaluate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sw-matrix")
    p.add_argument("--bins", type=int, default=4)

    p = add("cluster", cmd_cluster, "Ward clustering of protein vectors")
    p.add_argument("--vectors", required=True, help="TSV: id then vector columns")
    p.add_argument("--n-clusters", type=int, required=True)

    p = add("report", cmd_report, "tabulate report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--compare", action="store_true", help="paired t-test between two reports")

    add("synth", cmd_synth, "write the seeded synthetic benchmark")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        os.environ.setdefault("PYTHONHASHSEED", "0")
    try:
        return args.func(args)
    except DtaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (2, 3, 4) else 4
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
