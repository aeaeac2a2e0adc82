import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from dtalang.errors import ConfigError, DataError, InvalidInputError, InvariantError, StageError
from dtalang.featurize import MODEL_RECIPES
from dtalang.pipeline.cli import main
from dtalang.pipeline.config import config_from_dict, load_config
from dtalang.pipeline.datasets import (Interaction, InteractionDataset, RawRow, filter_bindingdb,
                                       kd_to_pkd, parse_measurement)
from dtalang.pipeline.experiment import run_experiment, run_sweep
from dtalang.pipeline.folds import FoldPlan, derive_seed, make_folds

from conftest import SMALL_WORDS, experiment_dict


@pytest.mark.parametrize("kd,censored,pkd", [(10000.0, True, 5.0), (1.0, False, 9.0),
                                             (0.1, False, 10.0), (10000.0, False, 5.0)])
def test_kd_to_pkd(kd, censored, pkd):
    assert kd_to_pkd(kd, censored) == pytest.approx(pkd, abs=1e-12)


def test_censored_above_cap_is_clamped():
    assert kd_to_pkd(50000.0, censored=True) == 5.0
    assert kd_to_pkd(50000.0) < 5.0


@pytest.mark.parametrize("kd", [0.0, -1.0, math.inf])
def test_kd_must_be_positive(kd):
    with pytest.raises(InvalidInputError):
        kd_to_pkd(kd)


def test_parse_measurement():
    assert parse_measurement(">10000") == (10000.0, True)
    assert parse_measurement("<0.1") == (0.1, False)
    assert parse_measurement(" 12 ") == (12.0, False)


def _row(p, lig, value, kind="Kd"):
    return RawRow(p, "MKTAYIAKQR" + p[-1] * 3, lig, "C" * (3 + int(lig[1:])), kind, value)


def _grid_rows(proteins, ligands, value="10"):
    return [_row(p, lig, value) for p in proteins for lig in ligands]


def test_duplicate_pair_keeps_strongest():
    rows = [r for r in _grid_rows([f"P{i}" for i in range(6)], [f"L{j}" for j in range(1, 7)])
            if (r.protein_id, r.ligand_id) != ("P0", "L1")]
    rows += [_row("P0", "L1", repr(10 ** (9 - 6.2))), _row("P0", "L1", repr(10 ** (9 - 7.5)))]
    ds = filter_bindingdb(rows)
    pkd = [it.affinity for it in ds.interactions if it.pair == ("P0", "L1")]
    assert pkd == [pytest.approx(7.5, abs=1e-12)]


def test_non_kd_rows_are_ignored():
    rows = _grid_rows([f"P{i}" for i in range(6)], [f"L{j}" for j in range(1, 7)])
    rows += [_row("P0", "L9", "5", kind="Ki")]
    ds = filter_bindingdb(rows)
    assert "L9" not in ds.ligands


def test_protein_with_five_interactions_removed():
    rows = _grid_rows([f"P{i}" for i in range(6)], [f"L{j}" for j in range(1, 7)])
    rows = [r for r in rows if not (r.protein_id == "P5" and r.ligand_id == "L6")]
    ds = filter_bindingdb(rows)
    assert "P5" not in ds.proteins
    assert len(ds.proteins) == 5


def test_cascading_removal_reaches_fixed_point():
    # L9 has 3 partners; one of them (P6) has only 1 interaction and is
    # dropped, which leaves L9 with 2 and forces its removal as well
    core = _grid_rows([f"P{i}" for i in range(6)], [f"L{j}" for j in range(1, 7)])
    rows = core + [_row("P0", "L9", "10"), _row("P1", "L9", "10"), _row("P6", "L9", "10")]
    ds = filter_bindingdb(rows)
    assert "P6" not in ds.proteins
    assert "L9" not in ds.ligands
    again = filter_bindingdb(
        RawRow(it.protein_id, ds.proteins[it.protein_id], it.ligand_id, ds.ligands[it.ligand_id],
               "Kd", repr(10 ** (9 - it.affinity))) for it in ds.interactions)
    assert [it.pair for it in again.interactions] == [it.pair for it in ds.interactions]


def test_filter_to_nothing_is_an_error():
    with pytest.raises(DataError):
        filter_bindingdb([_row("P0", "L1", "10")])


def test_dataset_invariants():
    with pytest.raises(DataError):
        InteractionDataset({"P": "ACD"}, {"L": "CCO"}, [Interaction("P", "X", 5.0)])
    with pytest.raises(DataError):
        InteractionDataset({"P": "ACD"}, {"L": "CCO"},
                           [Interaction("P", "L", 5.0), Interaction("P", "L", 6.0)])


def test_dataset_round_trip(synth_files, tmp_path):
    bundle, _ = synth_files
    bundle.dataset.save(tmp_path / "ds")
    again = InteractionDataset.load(tmp_path / "ds")
    assert again.interactions == bundle.dataset.interactions
    assert again.proteins == bundle.dataset.proteins


def test_folds_of_twelve():
    plan = make_folds(12, seed=0)
    assert plan.sizes() == [2] * 6
    assert plan.test_part == 5


def test_fold_sizes_at_paper_scale():
    assert sorted(make_folds(31000, seed=1).sizes()) == [5166, 5166, 5167, 5167, 5167, 5167]


def test_folds_deterministic_disjoint_exhaustive():
    a, b = make_folds(500, seed=3), make_folds(500, seed=3)
    assert np.array_equal(a.part_of, b.part_of)
    assert not np.array_equal(a.part_of, make_folds(500, seed=4).part_of)
    seen = np.concatenate([a.part(k) for k in range(6)])
    assert sorted(seen.tolist()) == list(range(500))
    for fit, val in a.cv_folds():
        assert not set(fit) & set(val)
        assert not set(fit) & set(a.test_indices)
        assert len(fit) + len(val) == len(a.train_indices)


def test_too_few_interactions():
    with pytest.raises(ConfigError):
        make_folds(5, seed=0)


def test_fold_plan_round_trip(tmp_path):
    plan = make_folds(40, seed=2)
    plan.save(tmp_path / "f.json")
    again = FoldPlan.load(tmp_path / "f.json")
    assert np.array_equal(again.part_of, plan.part_of) and again.test_part == plan.test_part


def test_unbalanced_plan_rejected():
    with pytest.raises(InvariantError):
        FoldPlan(np.array([0, 0, 0, 1, 2, 3, 4, 5]), 6, 5, 0)


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, "folds") == derive_seed(0, "folds")
    assert len({derive_seed(0, "folds"), derive_seed(0, "gbt"), derive_seed(1, "folds")}) == 3


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": "d", "recipe": "S1", "learning_rate": 0.1})
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": "d", "recipe": "S1", "grid": {"depth": [3]}})
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": "d", "recipe": "S7"})
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_paths_resolve_relative_to_file(tmp_path):
    p = tmp_path / "sub" / "c.json"
    p.parent.mkdir()
    p.write_text(json.dumps({"dataset": "../data", "recipe": "1", "output_dir": "out"}))
    cfg = load_config(p)
    assert Path(cfg.dataset) == tmp_path / "sub" / ".." / "data"
    assert Path(cfg.output_dir) == tmp_path / "sub" / "out"


def _run(paths, recipe, out, **extra):
    cfg = config_from_dict(experiment_dict(paths, recipe, out, **extra))
    return run_experiment(cfg)


def test_s2_protocol_shape(synth_files, tmp_path):
    _, paths = synth_files
    report = _run(paths, "S2", tmp_path / "s2")
    assert len(report.runs) == 5
    assert report.ci_std == pytest.approx(np.std([r.ci for r in report.runs]))
    assert report.mse_mean == pytest.approx(np.mean([r.mse for r in report.runs]))
    out = tmp_path / "s2"
    for name in ("config.json", "folds.json", "params.json", "cv_table.tsv", "predictions.tsv",
                 "report.json", "report.tsv", "mss_bins.tsv"):
        assert (out / name).exists(), name
    assert len(list((out / "models").glob("model_fold*.json"))) == 5
    assert len(report.mss_table) == 4


def test_random_ligand_identity_beats_protein_only(synth_files, tmp_path):
    _, paths = synth_files
    s1 = _run(paths, "S1", tmp_path / "s1", analyze_mss=False)
    r1 = _run(paths, "R1", tmp_path / "r1", analyze_mss=False)
    assert r1.ci_mean > s1.ci_mean


def test_experiment_is_reproducible(synth_files, tmp_path):
    _, paths = synth_files
    a = _run(paths, "8", tmp_path / "a")
    b = _run(paths, "8", tmp_path / "b")
    assert [r.ci for r in a.runs] == [r.ci for r in b.runs]
    for name in ("predictions.tsv", "params.json", "models/model_fold0.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _poisoned_copy(bundle, plan, directory):
    test = set(plan.test_indices.tolist())
    its = [Interaction(it.protein_id, it.ligand_id, (1e3 if i % 2 else -1e3), it.kind)
           if i in test else it for i, it in enumerate(bundle.dataset.interactions)]
    ds = InteractionDataset(bundle.dataset.proteins, bundle.dataset.ligands, its)
    ds.save(directory)
    return str(directory)


TRAIN_TIME_ARTIFACTS = ("folds.json", "params.json", "cv_table.tsv", "artifacts/bpe_vocab.txt",
                        "artifacts/embeddings.txt", *(f"artifacts/protein_vectors_fold{k}.tsv"
                                                      for k in range(5)),
                        *(f"models/model_fold{k}.json" for k in range(5)))


@pytest.mark.parametrize("recipe", ["6", "9"])
def test_poisoned_test_fold_leaves_training_untouched(synth_files, tmp_path, recipe):
    bundle, paths = synth_files
    plan = make_folds(len(bundle.dataset.interactions), derive_seed(0, "folds"))
    poisoned = dict(paths, dataset=_poisoned_copy(bundle, plan, tmp_path / "poisoned"))
    # no embedding table: words and vectors are trained inside the run
    extra = dict(SMALL_WORDS, embedding_table=None)
    for name, p in (("clean", paths), ("poisoned", poisoned)):
        cfg = config_from_dict(experiment_dict(p, recipe, tmp_path / name, **extra))
        run_experiment(cfg, until="train")
    compared = 0
    for rel in TRAIN_TIME_ARTIFACTS:
        clean, dirty = tmp_path / "clean" / rel, tmp_path / "poisoned" / rel
        assert clean.exists() == dirty.exists(), rel
        if clean.exists():
            assert clean.read_bytes() == dirty.read_bytes(), rel
            compared += 1
    assert compared >= 13


def test_sweep_writes_thirteen_rows(synth_files, tmp_path):
    _, paths = synth_files
    d = experiment_dict(paths, "1", tmp_path / "sweep", analyze_mss=False, **SMALL_WORDS)
    d["embedding_tables"] = {"kmer:8": d.pop("embedding_table")}
    cfg = config_from_dict(d)
    reports = run_sweep(cfg, list(MODEL_RECIPES.values()))
    assert len(reports) == 13
    with open(tmp_path / "sweep" / "summary.tsv", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    assert [r["model"] for r in rows] == list(MODEL_RECIPES)
    for r in rows:
        for col in ("ci", "ci_std", "mse", "mse_std"):
            assert math.isfinite(float(r[col]))


def test_sweep_binds_flat_table_to_base_scheme(synth_files, tmp_path):
    _, paths = synth_files
    d = experiment_dict(paths, "1", tmp_path / "sweep", analyze_mss=False, **SMALL_WORDS)
    run_sweep(config_from_dict(d), [MODEL_RECIPES["1"], MODEL_RECIPES["6"]])
    # the 8-mer table is reused; BPE words get freshly trained vectors
    assert not (tmp_path / "sweep/model_1/artifacts/embeddings.txt").exists()
    assert (tmp_path / "sweep/model_6/artifacts/embeddings.txt").exists()


def test_stage_error_names_stage(synth_files, tmp_path):
    _, paths = synth_files
    cfg = config_from_dict(experiment_dict(paths, "2", tmp_path / "e", protein_embeddings=None))
    with pytest.raises(StageError) as info:
        run_experiment(cfg)
    assert info.value.stage == "featurize"
    assert info.value.exit_code == 2
    assert (tmp_path / "e" / "folds.json").exists()


def test_cli_exit_codes(synth_files, tmp_path):
    _, paths = synth_files
    assert main(["split", "--dataset", paths["dataset"], "--out", str(tmp_path / "f.json")]) == 0
    assert main(["evaluate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["split", "--dataset", str(tmp_path / "nowhere")]) == 3
    bad = tmp_path / "bad_folds.json"
    bad.write_text(json.dumps({"n_parts": 6, "test_part": 5, "seed": 0,
                               "part_of": [0] * 10 + [1]}))
    assert main(["featurize", "--dataset", paths["dataset"], "--recipe", "S2",
                 "--folds", str(bad), "--out", str(tmp_path / "fe")]) == 4


def test_cli_end_to_end(synth_files, tmp_path, capsys):
    _, paths = synth_files
    cfg = experiment_dict(paths, "5", tmp_path / "run")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["evaluate", "--config", str(tmp_path / "c.json"), "--deterministic"]) == 0
    assert main(["analyze-mss", "--experiment", str(tmp_path / "run"),
                 "--dataset", paths["dataset"], "--out", str(tmp_path / "mss")]) == 0
    assert (tmp_path / "mss" / "mss_bins.tsv").exists()
    assert main(["cluster", "--vectors", str(tmp_path / "run/artifacts/protein_vectors_fold0.tsv"),
                 "--n-clusters", "2", "--out", str(tmp_path / "clusters.tsv")]) == 0
    report = str(tmp_path / "run" / "report.json")
    assert main(["report", report, report, "--compare", "--out", str(tmp_path / "s.tsv")]) == 0
    assert "indistinguishable" in capsys.readouterr().out
