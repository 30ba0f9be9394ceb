import json

import numpy as np
import pytest

from disclab.artifacts import ArtifactStore, RunManifest, dumps_json, render_csv, sha256_text
from disclab.errors import DomainError
from disclab.fixtures import FixtureStore, read_fixture, write_fixture
from disclab.phase_thresholds import Region
from disclab.randmat_core import RngStream, sample_goe


@pytest.fixture
def family():
    gen = RngStream(seed=11).generator()
    return [sample_goe(4, gen) for _ in range(3)]


class TestFixtures:
    def test_write_then_read(self, tmp_path, family):
        path = tmp_path / "fam.bin"
        write_fixture(path, family)
        assert read_fixture(path) == family
        assert path.stat().st_size == 3 * (8 + 8 * 10)

    def test_truncated_file(self, tmp_path, family):
        path = tmp_path / "bad.bin"
        write_fixture(path, family)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DomainError):
            read_fixture(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(DomainError):
            read_fixture(path)

    def test_store_names_and_cache(self, tmp_path, family):
        store = FixtureStore(str(tmp_path))
        store.save("dup", family)
        assert store.names() == ["dup"]
        first = store.load("dup")
        assert store.load("dup") is first

    def test_store_missing(self, tmp_path):
        with pytest.raises(DomainError):
            FixtureStore(str(tmp_path)).load("nothing")


class TestRendering:
    def test_csv_layout(self):
        text = render_csv(
            {"command": "rho", "seed": 1},
            ["x", "ok", "region", "missing"],
            [{"x": 0.1, "ok": True, "region": Region.SAT}],
        )
        lines = text.split("\n")
        assert lines[0] == '# {"command":"rho","seed":1}'
        assert lines[1] == "x,ok,region,missing"
        assert lines[2] == "0.1,true,SAT,"
        assert text.endswith("\n")

    def test_json_cleans_values(self):
        payload = json.loads(dumps_json({"a": np.float64(0.5), "b": float("inf"), "c": np.arange(2)}))
        assert payload == {"a": 0.5, "b": "inf", "c": [0, 1]}

    def test_json_is_sorted(self):
        assert dumps_json({"b": 1, "a": 2}) == dumps_json({"a": 2, "b": 1})


class TestArtifactStore:
    def test_checksum_matches_file(self, tmp_path):
        store = ArtifactStore(str(tmp_path))
        checksums = store.write_csv("out.csv", {"seed": 1}, ["a"], [{"a": 1}])
        (path, digest), = checksums.items()
        assert digest == sha256_text(open(path, encoding="utf-8").read())

    def test_manifest_sits_next_to_artifact(self, tmp_path):
        store = ArtifactStore(str(tmp_path))
        (path, digest), = store.write_json("report.json", {"x": 1}).items()
        manifest = RunManifest(command="laplace", parameters={"n": 10}, seed=1, checksums={path: digest})
        store.write_manifest(path, manifest)
        written = json.loads((tmp_path / "report.json.manifest.json").read_text())
        assert written["checksums"] == {path: digest}
