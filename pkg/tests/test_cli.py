"""End-to-end CLI flows on a miniature dataset."""

import numpy as np
import pytest

from trustfuse import cli
from trustfuse.errors import ConfigurationError, ParseError


TINY_SPEC = """\
[spec]
n = 50
d = 12
n_genes = 30
n_modalities = 2
n_blocks = 3
informative_rois = 4
"""

TINY_MODEL = """\
[model]
n_heads = 1
f_head = 4
f_att = 8
conf_hidden = 8

[train]
learning_rate = 0.003
"""


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.cfg"
    spec_path.write_text(TINY_SPEC)
    out = root / "data"
    assert cli.main(["gen-data", "--spec", str(spec_path), "--seed", "3",
                     "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "model.cfg"
    path.write_text(TINY_MODEL)
    return path


class TestConfigParsing:
    def test_sections_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\n[train]\nepochs = 7\n\n[model]\nf_head = 4\n")
        sections = cli.parse_config(p)
        assert sections == {"train": {"epochs": "7"}, "model": {"f_head": "4"}}

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[train]\nepochs 7\n")
        with pytest.raises(ParseError, match="line 2: expected 'key = value'"):
            cli.parse_config(p)

    def test_unknown_key_rejected(self, tmp_path, data_dir):
        p = tmp_path / "c.cfg"
        p.write_text("[model]\nbogus = 1\n")
        rc = cli.main(["train", "--data", str(data_dir), "--config", str(p),
                       "--epochs", "1", "--out", str(tmp_path / "out")])
        assert rc == 1


class TestExitCodes:
    def test_usage_error_is_2(self):
        assert cli.main(["train"]) == 2  # missing required args
        assert cli.main(["no-such-command"]) == 2

    def test_missing_input_is_1(self, tmp_path):
        rc = cli.main(["build-rri", "--expression", str(tmp_path / "absent.csv"),
                       "--threshold", "0.3", "--out", str(tmp_path / "e.csv")])
        assert rc == 1

    def test_constant_column_build_rri_is_1(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n1,3\n1,4\n")
        rc = cli.main(["build-rri", "--features", str(p), "--threshold", "0.3",
                       "--out", str(tmp_path / "e.csv")])
        assert rc == 1


class TestGenData:
    def test_writes_all_files(self, data_dir):
        for name in ("expression.csv", "mod0.csv", "mod1.csv", "labels.csv",
                     "modalities.txt", "ground_truth.txt", "manifest.txt"):
            assert (data_dir / name).is_file(), name

    def test_manifest_records_args_and_hashes(self, data_dir):
        text = (data_dir / "manifest.txt").read_text()
        assert "arg.seed = 3" in text
        assert "sha256." in text


class TestBuildRri:
    def test_writes_edge_matrix(self, data_dir, tmp_path):
        out = tmp_path / "edges.csv"
        rc = cli.main(["build-rri", "--expression", str(data_dir / "expression.csv"),
                       "--threshold", "0.3", "--out", str(out)])
        assert rc == 0
        mat = np.loadtxt(out)
        assert mat.shape == (12, 12)
        assert set(np.unique(mat)) <= {0.0, 1.0}
        np.testing.assert_array_equal(mat, mat.T)


class TestTrainCvFlow:
    def test_train_writes_artifacts(self, data_dir, model_cfg, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["train", "--data", str(data_dir), "--config", str(model_cfg),
                       "--seed", "1", "--epochs", "4", "--out", str(out)])
        assert rc == 0
        assert (out / "model.npz").is_file()
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,loss"
        assert len(history) == 5
        metrics = (out / "test_metrics.csv").read_text().splitlines()
        assert metrics[0] == "acc,f1,auc"

    def test_cv_deterministic_per_seed(self, data_dir, model_cfg, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["cv", "--data", str(data_dir), "--config", str(model_cfg),
                "--seed", "2", "--epochs", "3", "--k", "3"]
        assert cli.main(args + ["--out", str(a)]) == 0
        assert cli.main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0] == "task,fold,acc,f1,auc"
        assert len(lines) == 4


class TestStudyCommands:
    def test_single_variant_ablate(self, data_dir, model_cfg, tmp_path):
        out = tmp_path / "ablate.csv"
        rc = cli.main(["ablate", "--data", str(data_dir), "--config", str(model_cfg),
                       "--epochs", "3", "--confidence", "nn", "--n-seeds", "2",
                       "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "variant,seed,acc"
        assert len(lines) == 3
        assert all(ln.startswith("NN,") for ln in lines[1:])

    def test_graph_restricted_ablate(self, data_dir, model_cfg, tmp_path):
        out = tmp_path / "ablate2.csv"
        rc = cli.main(["ablate", "--data", str(data_dir), "--config", str(model_cfg),
                       "--epochs", "3", "--no-rri", "--n-seeds", "1",
                       "--out", str(out)])
        assert rc == 0
        assert "trri=True,rri=False" in out.read_text()


class TestConnectivityCommand:
    def test_export_files(self, data_dir, tmp_path):
        node, edge = tmp_path / "n.node", tmp_path / "e.edge"
        rc = cli.main(["export-connectivity", "--data", str(data_dir),
                       "--source", "expression", "--top-k", "4",
                       "--node-out", str(node), "--edge-out", str(edge)])
        assert rc == 0
        assert len(edge.read_text().splitlines()) == 4
        assert len(node.read_text().splitlines()) == 5  # header comment + 4 rows


class TestCoercion:
    def test_bool_int_float_tuple(self):
        from trustfuse.data import SyntheticSpec
        spec = cli._coerce_into(
            SyntheticSpec(),
            {"n": "60", "class_effect": "1.5", "modality_scales": "1.0 0.5 0.25"},
        )
        assert spec.n == 60
        assert spec.class_effect == 1.5
        assert spec.modality_scales == (1.0, 0.5, 0.25)

    def test_unknown_key(self):
        from trustfuse.trainer import TrainConfig
        with pytest.raises(ConfigurationError, match="unknown config key"):
            cli._coerce_into(TrainConfig(), {"nope": "1"})
