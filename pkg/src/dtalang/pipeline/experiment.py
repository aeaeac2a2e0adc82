"""Train/tune/evaluate protocol for one representation recipe.

Interactions are split into six parts; one is the test part. The other
five drive a five-fold grid search. The five per-fold models of the
winning grid point are each evaluated on the test part and the report
gives the mean and (population) standard deviation over those five runs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from dtalang.embedder import EmbeddingTable, train_skipgram
from dtalang.errors import ConfigError, DtaError, InvariantError, StageError, UndefinedMetricError
from dtalang.evalkit import concordance_index, mse, mss, mss_bins
from dtalang.featurize import FeatureInputs, Featurizer, RepresentationRecipe
from dtalang.gbt import grid_search_cv
from dtalang.pipeline.config import ExperimentConfig
from dtalang.pipeline.datasets import InteractionDataset, load_augmentation
from dtalang.pipeline.folds import FoldPlan, derive_seed, make_folds
from dtalang.seqsim import (ProteinSequence, Scoring, SimilarityMatrix, SubstitutionMatrix,
                            normalized_sw_matrix)
from dtalang.smiles_lang import BpeVocabulary, read_corpus, train_bpe

logger = logging.getLogger(__name__)


STAGES = ("split", "featurize", "tune", "train", "report")
GRID_COLUMNS = ("learning_rate", "n_rounds", "max_depth", "reg_lambda", "gamma",
                "min_child_weight", "subsample", "colsample")


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise StageError(name, exc) from exc


@dataclass
class RunResult:
    fold: int
    ci: float
    mse: float


@dataclass
class BinRow:
    label: str
    n: int
    mse_mean: float
    mse_std: float
    ci_mean: float
    ci_std: float


@dataclass
class ExperimentReport:
    recipe: RepresentationRecipe
    best_params: dict
    runs: list[RunResult]
    ci_mean: float
    ci_std: float
    mse_mean: float
    mse_std: float
    mss_boundaries: list[float] = field(default_factory=list)
    mss_table: list[BinRow] = field(default_factory=list)
    output_dir: str = ""

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe.to_dict(),
            "best_params": self.best_params,
            "runs": [asdict(r) for r in self.runs],
            "ci_mean": self.ci_mean, "ci_std": self.ci_std,
            "mse_mean": self.mse_mean, "mse_std": self.mse_std,
            "mss_boundaries": self.mss_boundaries,
            "mss_table": [asdict(b) for b in self.mss_table],
        }


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if len(arr) == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


def _safe_ci(y, b, larger_is_stronger):
    try:
        return concordance_index(y, b, larger_is_stronger=larger_is_stronger)
    except UndefinedMetricError:
        return math.nan


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows, delimiter="\t") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def training_ligand_smiles(dataset: InteractionDataset, train) -> list[str]:
    """SMILES of ligands seen in training interactions, in ligand-id order."""
    ids = sorted({it.ligand_id for it in train})
    return [dataset.ligands[i] for i in ids]


def build_similarity(dataset: InteractionDataset, config: ExperimentConfig) -> SimilarityMatrix:
    if config.sw_matrix:
        return SimilarityMatrix.load(config.sw_matrix)
    matrix = SubstitutionMatrix.from_file(config.sw.matrix) if config.sw.matrix else None
    scoring = Scoring(matrix, config.sw.gap_open, config.sw.gap_extend)
    proteins = [ProteinSequence(pid, seq) for pid, seq in dataset.proteins.items()]
    return normalized_sw_matrix(proteins, scoring, workers=config.threads)


def build_word_inputs(dataset, config: ExperimentConfig, train, artifacts: Path, seed: int):
    """BPE vocabulary and chemical-word embedding table for the recipe's word scheme.

    Artifacts given in the config are loaded; otherwise they are trained on
    the external corpus when one is configured, else on training-ligand
    SMILES only.
    """
    scheme = config.recipe.word_scheme
    if config.corpus:
        corpus = list(read_corpus(config.corpus))
    else:
        corpus = training_ligand_smiles(dataset, train)
    vocab = None
    if scheme.kind == "bpe":
        if config.bpe_vocab:
            vocab = BpeVocabulary.load(config.bpe_vocab)
        else:
            vocab = train_bpe(corpus, config.bpe.target_size, config.bpe.character_coverage,
                              config.bpe.max_word_len)
            vocab.save(artifacts / "bpe_vocab.txt")
    path = config.embedding_path(str(scheme))
    if path:
        table = EmbeddingTable.load(path)
    else:
        sentences = [scheme.tokenize(s, vocab) for s in corpus]
        params = replace(config.skipgram, seed=derive_seed(seed, "skipgram") % (2**31))
        table = train_skipgram(sentences, params)
        table.save(artifacts / "embeddings.txt")
    return vocab, table


def _save_protein_vectors(path: Path, featurizer: Featurizer) -> None:
    rows = []
    for pid in featurizer.dataset.protein_ids:
        rows.append([pid, *(repr(float(v)) for v in featurizer.protein_vector(pid))])
    width = len(rows[0]) - 1 if rows else 0
    _write_rows(path, ["protein_id", *(f"v{i}" for i in range(width))], rows)


def run_experiment(config: ExperimentConfig, dataset: InteractionDataset | None = None,
                   plan: FoldPlan | None = None,
                   similarity: SimilarityMatrix | None = None,
                   until: str = "report") -> ExperimentReport | None:
    """Run the full protocol and write every artifact under ``config.output_dir``.

    ``dataset``, ``plan`` and ``similarity`` may be passed in to skip the
    corresponding loading stages (sweeps reuse them across recipes).
    ``until`` stops after the named stage (``split``, ``featurize``,
    ``tune``, ``train``); the function then returns None.
    """
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}; expected one of {STAGES}")
    out = Path(config.output_dir)
    artifacts = out / "artifacts"
    models_dir = out / "models"
    for d in (out, artifacts, models_dir):
        d.mkdir(parents=True, exist_ok=True)
    recipe = config.recipe
    seed = config.seed

    with stage("config"):
        config.validate()
        _write_json(out / "config.json", config.to_dict())

    with stage("load"):
        if dataset is None:
            dataset = InteractionDataset.load(config.dataset)
        augmentation = load_augmentation(config.augmentation, dataset) if config.augmentation else None
        y_all = dataset.affinities()
        direction = dataset.larger_is_stronger

    with stage("split"):
        if plan is None:
            plan = make_folds(len(dataset.interactions), derive_seed(seed, "folds"),
                              config.n_parts)
        elif len(plan.part_of) != len(dataset.interactions):
            raise InvariantError("fold plan does not match the dataset size")
        plan.save(out / "folds.json")
        train_idx = plan.train_indices
        test_idx = plan.test_indices
        train = dataset.subset(train_idx)
        test = dataset.subset(test_idx)
    if until == "split":
        return None

    with stage("sw-matrix"):
        if similarity is None and (recipe.uses_sw or config.analyze_mss):
            similarity = build_similarity(dataset, config)
            similarity.save(artifacts / "sw_matrix.tsv")

    with stage("words"):
        vocab = table = None
        if recipe.needs_words:
            vocab, table = build_word_inputs(dataset, config, train, artifacts, seed)

    with stage("featurize"):
        protein_tables = None
        if recipe.protein_mode == "protein_embedding":
            protein_tables = EmbeddingTable.load(config.protein_embeddings) \
                if config.protein_embeddings else None
        inputs = FeatureInputs(embeddings=table, bpe_vocab=vocab, similarity=similarity,
                               protein_embeddings=protein_tables, augmentation=augmentation,
                               seed=derive_seed(seed, "random-vectors") % (2**31))
        folds = []
        featurizers = []
        for k, (fit_idx, val_idx) in zip(plan.cv_parts, plan.cv_folds()):
            fz = Featurizer(dataset, recipe, inputs, dataset.subset(fit_idx))
            X_fit = fz.transform(dataset.subset(fit_idx)).values
            X_val = fz.transform(dataset.subset(val_idx)).values
            folds.append((X_fit, y_all[fit_idx], X_val, y_all[val_idx]))
            featurizers.append(fz)
            _save_protein_vectors(artifacts / f"protein_vectors_fold{k}.tsv", fz)
    if until == "featurize":
        return None

    with stage("tune"):
        search = grid_search_cv(folds, config.grid, seed=derive_seed(seed, "gbt") % (2**31))
        best = asdict(search.best)
        _write_json(out / "params.json", best)
        grid_names = list(GRID_COLUMNS)
        _write_rows(out / "cv_table.tsv",
                    [*grid_names, "mean_mse", *(f"fold{k}_mse" for k in plan.cv_parts)],
                    [[*(repr(getattr(p, name)) for name in grid_names), repr(score),
                      *(repr(v) for v in per_fold)] for p, score, per_fold in search.table])
    if until == "tune":
        return None

    with stage("train"):
        models = search.best_models()
        for k, model in zip(plan.cv_parts, models):
            model.save(models_dir / f"model_fold{k}.json")
    if until == "train":
        return None

    with stage("evaluate"):
        y_test = y_all[test_idx]
        runs = []
        test_preds = []
        for k, fz, model in zip(plan.cv_parts, featurizers, models):
            pred = model.predict(fz.transform(test).values)
            test_preds.append(pred)
            runs.append(RunResult(k, concordance_index(y_test, pred, larger_is_stronger=direction),
                                  mse(y_test, pred)))
        _write_rows(out / "predictions.tsv",
                    ["protein_id", "ligand_id", "affinity",
                     *(f"pred_fold{k}" for k in plan.cv_parts)],
                    [[it.protein_id, it.ligand_id, repr(it.affinity),
                      *(repr(float(p[i])) for p in test_preds)] for i, it in enumerate(test)])
        ci_mean, ci_std = _mean_std([r.ci for r in runs])
        mse_mean, mse_std = _mean_std([r.mse for r in runs])

    report = ExperimentReport(recipe, best, runs, ci_mean, ci_std, mse_mean, mse_std,
                              output_dir=str(out))

    if config.analyze_mss and similarity is not None:
        with stage("analyze-mss"):
            values, bins, rows = mss_table(test, train, similarity, test_preds,
                                           config.mss_bins, direction)
            report.mss_boundaries = [float(v) for v in bins.boundaries]
            report.mss_table = rows
            write_mss_outputs(out, test, values, bins, rows)

    with stage("report"):
        _write_json(out / "report.json", report.to_dict())
        write_summary([report], out / "report.tsv")
    return report


def mss_table(test, train, similarity: SimilarityMatrix, test_preds, n_bins: int = 4,
              larger_is_stronger: bool = True):
    """Per-MSS-bin MSE and CI (mean and std over the prediction vectors)."""
    y_test = np.array([it.affinity for it in test])
    values = mss([it.pair for it in test], similarity, [it.pair for it in train])
    bins = mss_bins(values, n_bins)
    rows = []
    for k, label in enumerate(bins.labels()):
        idx = bins.members(k)
        if len(idx) == 0:
            rows.append(BinRow(label, 0, math.nan, math.nan, math.nan, math.nan))
            continue
        mses = [mse(y_test[idx], p[idx]) for p in test_preds]
        cis = [_safe_ci(y_test[idx], p[idx], larger_is_stronger) for p in test_preds]
        rows.append(BinRow(label, len(idx), *_mean_std(mses), *_mean_std(cis)))
    return values, bins, rows


def write_mss_outputs(out: Path, test, values, bins, rows) -> None:
    _write_rows(out / "mss_values.tsv", ["protein_id", "ligand_id", "mss", "bin"],
                [[it.protein_id, it.ligand_id, repr(float(v)), int(b)]
                 for it, v, b in zip(test, values, bins.assignment)])
    for name, delim in (("mss_bins.tsv", "\t"), ("mss_bins.csv", ",")):
        _write_rows(out / name, ["bin", "n", "mse_mean", "mse_std", "ci_mean", "ci_std"],
                    [[r.label, r.n, r.mse_mean, r.mse_std, r.ci_mean, r.ci_std] for r in rows],
                    delimiter=delim)


SUMMARY_HEADER = ["model", "protein", "ligand", "words", "ci", "ci_std", "mse", "mse_std"]


def summary_row(report: ExperimentReport) -> list:
    r = report.recipe
    return [r.name or "-", r.protein_mode, r.ligand_mode, str(r.word_scheme),
            f"{report.ci_mean:.4f}", f"{report.ci_std:.4f}",
            f"{report.mse_mean:.4f}", f"{report.mse_std:.4f}"]


def write_summary(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    _write_rows(Path(path), SUMMARY_HEADER, [summary_row(r) for r in reports])


def run_sweep(config: ExperimentConfig, recipes: Sequence[RepresentationRecipe]
              ) -> list[ExperimentReport]:
    """One experiment per recipe on a shared split and similarity matrix."""
    base = Path(config.output_dir)
    with stage("load"):
        dataset = InteractionDataset.load(config.dataset)
    with stage("split"):
        plan = make_folds(len(dataset.interactions), derive_seed(config.seed, "folds"),
                          config.n_parts)
    similarity = None
    if any(r.uses_sw for r in recipes) or config.analyze_mss:
        with stage("sw-matrix"):
            similarity = build_similarity(dataset, config)
    # a flat embedding_table belongs to the base recipe's word scheme only;
    # recipes with another scheme train their own vectors
    tables = dict(config.embedding_tables)
    if config.embedding_table:
        tables.setdefault(str(config.recipe.word_scheme), config.embedding_table)
    reports = []
    for recipe in recipes:
        sub = replace(config, recipe=recipe, embedding_table=None, embedding_tables=tables,
                      output_dir=str(base / f"model_{recipe.name or recipe.protein_mode}"))
        try:
            reports.append(run_experiment(sub, dataset, plan, similarity))
        except DtaError:
            logger.error("recipe %s failed", recipe.name)
            raise
    base.mkdir(parents=True, exist_ok=True)
    write_summary(reports, base / "summary.tsv")
    return reports
