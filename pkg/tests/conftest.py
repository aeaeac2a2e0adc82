import pytest

from dtalang.pipeline.synthetic import make_synthetic

FAST_GRID = {"learning_rate": [0.3], "n_rounds": [30], "max_depth": [3]}
SMALL_WORDS = {"skipgram": {"dim": 8, "epochs": 2, "min_count": 1, "window": 3},
               "bpe": {"target_size": 120}}


@pytest.fixture(scope="session")
def synth_files(tmp_path_factory):
    """The seeded synthetic benchmark written to disk once per session."""
    bundle = make_synthetic(0)
    paths = bundle.write(tmp_path_factory.mktemp("synthetic"))
    return bundle, paths


def experiment_dict(paths, recipe, out, **extra):
    d = {"dataset": paths["dataset"], "recipe": recipe, "output_dir": str(out),
         "embedding_table": paths["embedding_table"],
         "protein_embeddings": paths["protein_embeddings"],
         "augmentation": paths["augmentation"], "grid": FAST_GRID}
    d.update(extra)
    return d


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
