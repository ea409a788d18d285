import json
import os
from pathlib import Path

import pytest

from callctx.environments import (
    IN_PROJECT,
    STDLIB,
    THIRD_PARTY,
    BuildError,
    LocalRegistry,
    Project,
    build_environment,
    enumerate_sources,
    resolve_transitive_deps,
    screen_license,
)

REGISTRY = Path(__file__).parent / "fixtures" / "registry"


class TestLicenseScreening:
    @pytest.mark.parametrize(
        "text,tag",
        [
            ("MIT License", "MIT"),
            ("BSD 3-Clause \"New\"", "BSD"),
            ("Apache Software License 2.0", "APACHE"),
            ("CC0 1.0 Universal", "CC0"),
            ("ISC License (ISCL)", "ISCL"),
            ("Python Software Foundation License", "PSF"),
            ("The Unlicense", "UNLICENSE"),
            ("ZPL 2.1", "ZPL 2.1"),
            ("Historical Permission Notice and Disclaimer", "HPND"),
        ],
    )
    def test_permissive_accepted(self, text, tag):
        result = screen_license(text)
        assert result.accepted and result.normalized == tag

    @pytest.mark.parametrize("text", ["GPL-3.0", "LGPL", "AGPLv3", "Proprietary"])
    def test_non_permissive_rejected(self, text):
        assert not screen_license(text).accepted

    def test_missing_license_reason(self):
        for bad in (None, "", "   "):
            result = screen_license(bad)
            assert not result.accepted
            assert result.reason == "unknown-license"


class TestBuildEnvironment:
    def test_env_contains_dependency_metadata(self, tmp_path):
        registry = LocalRegistry(REGISTRY)
        project = build_environment(registry, "webtool", tmp_path)
        site = project.env_root / "site"
        record = json.loads((site / "strutils-2.1.meta.json").read_text())
        assert record["name"] == "strutils"
        assert "strutils/__init__.py" in record["files"]
        lock = json.loads((tmp_path / "webtool" / "lock.json").read_text())
        assert lock["resolved"] == {"strutils": "2.1"}

    def test_dependency_free_package(self, tmp_path):
        registry = LocalRegistry(REGISTRY)
        project = build_environment(registry, "libc", tmp_path)
        assert list((project.env_root / "site").glob("*")) == []

    def test_transitively_unlicensed_project_rejected(self, tmp_path):
        registry = LocalRegistry(REGISTRY)
        with pytest.raises(BuildError, match="gpltool"):
            build_environment(registry, "badlib", tmp_path)

    def test_gpl_project_rejected(self, tmp_path):
        registry = LocalRegistry(REGISTRY)
        with pytest.raises(BuildError):
            build_environment(registry, "gpltool", tmp_path)

    def test_transitive_resolution(self):
        registry = LocalRegistry(REGISTRY)
        assert resolve_transitive_deps(registry, "libd") == ["liba", "strutils"]


class TestSourceUniverse:
    @pytest.fixture()
    def universe(self, tmp_path):
        registry = LocalRegistry(REGISTRY)
        project = build_environment(registry, "webtool", tmp_path)
        return enumerate_sources(project)

    def test_origin_partition(self, universe):
        origins = {origin for _, origin in universe.files}
        assert origins == {IN_PROJECT, THIRD_PARTY}
        for path, origin in universe.files:
            assert universe.classify(path) == origin

    def test_deterministic(self, universe):
        again = enumerate_sources(universe.project)
        assert again.files == universe.files

    def test_stdlib_classification(self, universe):
        assert universe.classify(Path(os.__file__)) == STDLIB
        assert universe.classify_module("os") == "stdlib"
        assert universe.classify_module("pickle") == "stdlib"
        assert universe.classify_module("strutils") is None

    def test_json_round_trip(self, universe):
        from callctx.environments import SourceUniverse

        clone = SourceUniverse.from_json(universe.to_json())
        assert clone.to_json() == universe.to_json()

    def test_duplicate_deps_rejected(self):
        with pytest.raises(ValueError):
            Project(
                name="x",
                version="1",
                license="MIT",
                source_root=Path("."),
                direct_deps=["a", "a"],
            )
