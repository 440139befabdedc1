import numpy as np
import pytest

from errors import ConfigError, DataError
from experiment_config import load_experiment_config, load_splits, read_config_values
from projection_models import Activation, ModelKind
from synthetic_task import MapKind, SynthSpec, generate_synthetic_task
from warp_loss import RankPenalty
from zero_shot_cli import main


def write_config(tmp_path, text, name="experiment.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_synthetic_config(tmp_path):
    path = write_config(tmp_path, """
# small tanh task
synth.seen_classes=5
synth.map_kind=tanh-mlp
synth.noise=0.05
synth.families=3
synth.magnitude_ratio=2.5
train.method=fc2_tanh
train.epochs=7
bench.n_seeds=3
""")
    config = load_experiment_config(path)
    assert config.synth.seen_classes == 5
    assert config.synth.map_kind is MapKind.TANH_MLP
    assert config.synth.noise == 0.05
    assert (config.synth.families, config.synth.magnitude_ratio) == (3, 2.5)
    assert config.data is None
    assert (config.train.model_kind, config.train.activation, config.train.epochs) == (ModelKind.FC2, Activation.TANH, 7)
    assert [method.name for method in config.methods] == ["fc2_tanh"]
    assert config.n_seeds == 3
    assert config.base_seed == 0
    assert str(config.output_dir) == "results"


def test_bench_methods_and_explicit_model_kind(tmp_path):
    path = write_config(tmp_path, "synth.seed=2\ntrain.model_kind=fc3\nbench.methods=bilinear, factored@2\n")
    config = load_experiment_config(path)
    assert config.method.name == "fc3"
    assert config.train.model_kind is ModelKind.FC3
    assert [method.name for method in config.methods] == ["bilinear", "factored@2"]
    assert config.n_seeds == 20


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="train.momentum"):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.momentum=0.9\n"))


def test_exactly_one_data_source(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "train.epochs=3\n"))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ndata.acoustic=a.tsv\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_experiment_config(tmp_path / "absent.cfg")


def test_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="train.epochs"):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.epochs=ten\n"))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.learning_rate=-1\n"))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.method=quadratic\n"))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\nbench.n_seeds=0\n"))


def test_penalty_override(tmp_path):
    config = load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.penalty=1.0,0.5\n"))
    assert config.train.penalty == RankPenalty((1.0, 0.5))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, "synth.seed=1\ntrain.penalty=0.5,1.0\n"))


def test_overrides_replace_file_values(tmp_path):
    path = write_config(tmp_path, "synth.seed=1\ntrain.seed=1\noutput.dir=from_file\n")
    config = load_experiment_config(path, {"train.seed": 9, "output.dir": None})
    assert config.train.seed == 9
    assert str(config.output_dir) == "from_file"
    assert read_config_values(None, {"synth.seed": 4}) == {"synth.seed": "4"}


def write_data_files(tmp_path):
    files = {
        "acoustic.tsv": "clip1/0\t1 0\nclip1/1\t3 0\nclip2/0\t0 1\nclip3/0\t1 1\nclip4/0\t2 2\n",
        "labels.tsv": "dog\tdog,puppy\ncat\tcat\ncow\tcow,calf\n",
        "tokens.tsv": "dog\t1 0 0\npuppy\t0 1 0\ncat\t0 0 1\ncow\t1 1 1\n",
        "train.tsv": "clip1\tdog\nclip2\tcat\n",
        "val.tsv": "clip4\tdog\n",
        "test.tsv": "clip3\tcow\n",
    }
    for name, text in files.items():
        (tmp_path / name).write_text(text, encoding="utf-8")


DATA_CONFIG = """
data.acoustic=acoustic.tsv
data.labels=labels.tsv
data.token_vectors=tokens.tsv
data.train=train.tsv
data.val=val.tsv
data.test=test.tsv
data.segment_separator=/
"""


def test_file_based_splits_average_segments_and_labels(tmp_path):
    write_data_files(tmp_path)
    splits = load_splits(load_experiment_config(write_config(tmp_path, DATA_CONFIG)))
    np.testing.assert_array_equal(splits.train.acoustic_matrix, [[2.0, 0.0], [0.0, 1.0]])
    assert splits.train_classes.class_ids == ("cat", "dog")
    np.testing.assert_array_equal(splits.train_classes["dog"].values, [0.5, 0.5, 0.0])
    assert splits.val_classes.class_ids == ("dog",)
    assert splits.test_classes.class_ids == ("cow",)


def test_missing_data_file_names_the_path(tmp_path):
    write_data_files(tmp_path)
    (tmp_path / "test.tsv").unlink()
    with pytest.raises(DataError, match="test.tsv") as excinfo:
        load_experiment_config(write_config(tmp_path, DATA_CONFIG))
    assert excinfo.value.exit_code == 3


def test_data_config_validation(tmp_path):
    write_data_files(tmp_path)
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, DATA_CONFIG + "data.classes=tokens.tsv\n"))
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, DATA_CONFIG.replace("data.token_vectors=tokens.tsv\n", "")))
    with pytest.raises(ConfigError, match="data.folds"):
        load_experiment_config(write_config(tmp_path, DATA_CONFIG + "data.train_folds=0\n"))


def test_written_synthetic_task_loads_back_identically(tmp_path):
    out = tmp_path / "synth"
    args = ["synth", "--out", str(out), "--seed", "3", "--seen-classes", "4", "--unseen-classes", "3",
            "--samples-per-class", "5", "--noise", "0.1"]
    assert main(args) == 0
    splits = load_splits(load_experiment_config(out / "data.cfg"))
    task = generate_synthetic_task(SynthSpec(seen_classes=4, unseen_classes=3, samples_per_class=5, noise=0.1, seed=3))
    assert splits.train == task.train
    assert splits.val == task.val
    assert splits.test == task.test
    assert splits.train_classes.class_ids == task.seen_classes.class_ids
    assert splits.test_classes.class_ids == task.unseen_classes.class_ids
    np.testing.assert_array_equal(splits.test_classes.class_matrix(), task.unseen_classes.class_matrix())
