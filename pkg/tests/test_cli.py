import json
import shutil
from pathlib import Path

import pytest

from meshfv.cli import main
from meshfv.config import PipelineConfig, parse_override

CONFIG = str(Path(__file__).resolve().parents[1] / "configs" / "example.json")


def run(*argv):
    return main(list(argv))


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def provenance_docs(root: Path):
    for p in root.rglob("*.json"):
        doc = json.loads(p.read_text())
        if isinstance(doc, dict) and "provenance" in doc:
            yield p, doc["provenance"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--config", CONFIG, "--out", str(root / "data")) == 0
    assert run("mads", "--config", CONFIG, "--dataset", str(root / "data"), "--out", str(root / "mads")) == 0
    assert run("encode", "--config", CONFIG, "--mads", str(root / "mads"), "--out", str(root / "enc")) == 0
    return root


class TestPipeline:
    def test_evaluate_from_mads(self, pipeline):
        out = pipeline / "eval"
        assert run("evaluate", "--config", CONFIG, "--mads", str(pipeline / "mads"), "--out", str(out)) == 0
        doc = json.loads((out / "cv_report.json").read_text())
        assert len(doc["fold_accuracies"]) == 5
        assert (out / "cv_report.csv").exists() and (out / "cv_report_confusion.csv").exists()

    def test_evaluate_encoded_matches_direct(self, pipeline):
        direct, enc = pipeline / "ev_direct", pipeline / "ev_enc"
        run("evaluate", "--config", CONFIG, "--mads", str(pipeline / "mads"), "--out", str(direct))
        assert run("evaluate", "--config", CONFIG, "--encoded", str(pipeline / "enc"), "--out", str(enc)) == 0
        a = json.loads((direct / "cv_report.json").read_text())
        b = json.loads((enc / "cv_report.json").read_text())
        assert a["fold_accuracies"] == pytest.approx(b["fold_accuracies"], abs=1e-9)

    def test_missing_dictionary(self, pipeline, tmp_path, capsys):
        enc = tmp_path / "enc"
        shutil.copytree(pipeline / "enc", enc)
        (enc / "fold_01" / "dictionary.json").unlink()
        code = run("evaluate", "--config", CONFIG, "--encoded", str(enc), "--out", str(tmp_path / "ev"))
        assert code == 3
        assert "fold_01/dictionary.json" in capsys.readouterr().err
        assert (tmp_path / "ev" / "INCOMPLETE").exists()

    def test_tampered_dictionary(self, pipeline, tmp_path, capsys):
        enc = tmp_path / "enc"
        shutil.copytree(pipeline / "enc", enc)
        path = enc / "fold_00" / "dictionary.json"
        path.write_text(path.read_text() + " ")
        assert run("evaluate", "--config", CONFIG, "--encoded", str(enc), "--out", str(tmp_path / "ev")) == 3
        assert "does not match the hash" in capsys.readouterr().err

    def test_energy_and_codewords(self, pipeline):
        out = pipeline / "energy"
        assert run("energy", "--config", CONFIG, "--mads", str(pipeline / "mads"), "--out", str(out)) == 0
        assert len(list(out.glob("energy_fold_*.csv"))) == 5
        ab = json.loads((out / "ablation.json").read_text())
        assert ab["m"] == 1 and len(ab["chosen_per_fold"]) == 5
        cw = pipeline / "codewords"
        atlas = str(Path(CONFIG).parent / "atlas_example.csv")
        args = ("export-codewords", "--config", CONFIG, "--mads", str(pipeline / "mads"), "--out", str(cw))
        assert run(*args, "--atlas", atlas) == 0
        assert len(list(cw.glob("codeword_*.csv"))) == 6
        assert len(list(cw.glob("codeword_*.node"))) == 6

    def test_baseline(self, pipeline):
        out = pipeline / "baseline"
        assert run("baseline", "--config", CONFIG, "--dataset", str(pipeline / "data"), "--out", str(out)) == 0
        rows = (out / "baseline.csv").read_text().splitlines()[2:]
        assert [r.split(",")[0] for r in rows] == ["bold", "pearson", "mad"]


class TestGrid:
    def test_cells_and_max_rows(self, pipeline):
        out = pipeline / "grid"
        assert run("grid", "--config", CONFIG, "--dataset", str(pipeline / "data"), "--out", str(out)) == 0
        lines = (out / "grid.csv").read_text().splitlines()
        assert sum(line.startswith("cell,") for line in lines) == 8
        assert sum(line.startswith("max,") for line in lines) == 2


class TestProvenance:
    def test_hash_tracks_overrides(self, pipeline, tmp_path):
        overrides = ["p=3", "svm_C=2.5"]
        set_args = [a for o in overrides for a in ("--set", o)]
        out = tmp_path / "ev"
        assert run("evaluate", "--config", CONFIG, *set_args, "--mads", str(pipeline / "mads"), "--out", str(out)) == 0
        expected = PipelineConfig.from_json(CONFIG, dict(map(parse_override, overrides))).sha256()
        docs = list(provenance_docs(out))
        assert docs
        for _, prov in docs:
            assert prov["config_sha256"] == expected
            assert "time" not in json.dumps(prov)

    def test_every_stage_hash(self, pipeline):
        expected = PipelineConfig.from_json(CONFIG).sha256()
        seen = {prov["stage"] for _, prov in provenance_docs(pipeline)}
        assert {"synth", "mads", "encode"} <= seen
        for path, prov in provenance_docs(pipeline):
            if prov["stage"] in ("synth", "mads", "encode"):
                assert prov["config_sha256"] == expected, path

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            root = tmp_path / name
            run("synth", "--config", CONFIG, "--out", str(root / "data"))
            run("mads", "--config", CONFIG, "--dataset", str(root / "data"), "--out", str(root / "mads"))
            run("encode", "--config", CONFIG, "--mads", str(root / "mads"), "--out", str(root / "enc"))
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


class TestErrors:
    def test_unknown_key_exit_1(self, tmp_path, capsys):
        code = run("synth", "--config", CONFIG, "--set", "bogus=1", "--out", str(tmp_path / "x"))
        assert code == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_exit_3(self, tmp_path):
        assert run("synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")) == 3

    def test_evaluate_needs_input(self, tmp_path):
        assert run("evaluate", "--config", CONFIG, "--out", str(tmp_path / "x")) == 1
