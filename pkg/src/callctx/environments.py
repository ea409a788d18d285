"""License screening, isolated environment building and source enumeration.

Packages come from a local directory registry: ``<registry>/<name>/pkg.json``
holds the metadata (name, version, license, deps) and ``<registry>/<name>/<name>/``
is the importable source tree.  ``build_environment`` resolves the transitive
dependency set, screens every license, and materializes an isolated
``env/site`` directory with per-package metadata records plus a ``lock.json``
so a corpus build is replayable.
"""

from __future__ import annotations

import json
import re
import shutil
import sys
import sysconfig
from dataclasses import dataclass, field
from pathlib import Path

IN_PROJECT = "in-project"
THIRD_PARTY = "third-party"
STDLIB = "stdlib"

# Permissive allow-list (SPDX-ish tags after normalization).
PERMISSIVE_LICENSES = {
    "MIT",
    "APACHE",
    "BSD",
    "CC0",
    "ZPL 2.1",
    "ISCL",
    "PSF",
    "HPND",
    "UNLICENSE",
}

# Free-form registry license strings seen in the wild, mapped to allow-list
# tags.  Checked after basic uppercasing/cleanup, longest prefix wins.
_LICENSE_PATTERNS = [
    (re.compile(r"\bMIT\b"), "MIT"),
    (re.compile(r"\bAPACHE(\s*SOFTWARE)?(\s*LICENSE)?([\s,-]*(V|VERSION)?\s*[12]\.\d)?"), "APACHE"),
    (re.compile(r"\bBSD\b"), "BSD"),
    (re.compile(r"\bCC0\b"), "CC0"),
    (re.compile(r"\bZPL\s*2\.1\b|\bZOPE PUBLIC LICENSE\b"), "ZPL 2.1"),
    (re.compile(r"\bISC(L)?\b"), "ISCL"),
    (re.compile(r"\bPSF\b|\bPYTHON SOFTWARE FOUNDATION\b"), "PSF"),
    (re.compile(r"\bHPND\b|\bHISTORICAL PERMISSION\b"), "HPND"),
    (re.compile(r"\bUNLICENSE\b"), "UNLICENSE"),
]


class RegistryError(Exception):
    pass


class BuildError(Exception):
    """Environment build failed; the project is skipped, not the corpus run."""


@dataclass(frozen=True)
class ScreenResult:
    accepted: bool
    normalized: str | None = None
    reason: str | None = None


def screen_license(license_string: str | None) -> ScreenResult:
    """Accept iff the (normalized) license is in the permissive allow-list."""
    if not license_string or not license_string.strip():
        return ScreenResult(False, reason="unknown-license")
    text = license_string.upper()
    for pattern, tag in _LICENSE_PATTERNS:
        if pattern.search(text):
            return ScreenResult(True, normalized=tag)
    return ScreenResult(False, reason=f"non-permissive: {license_string.strip()}")


@dataclass
class Project:
    name: str
    version: str
    license: str
    source_root: Path
    direct_deps: list[str] = field(default_factory=list)
    env_root: Path | None = None

    def __post_init__(self) -> None:
        if len(set(self.direct_deps)) != len(self.direct_deps):
            raise ValueError(f"{self.name}: duplicate entries in direct_deps")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "license": self.license,
            "source_root": str(self.source_root),
            "direct_deps": self.direct_deps,
            "env_root": str(self.env_root) if self.env_root else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Project":
        return cls(
            name=obj["name"],
            version=obj["version"],
            license=obj["license"],
            source_root=Path(obj["source_root"]),
            direct_deps=list(obj["direct_deps"]),
            env_root=Path(obj["env_root"]) if obj.get("env_root") else None,
        )


class LocalRegistry:
    """Directory-backed package registry used for corpus fixtures."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def names(self) -> list[str]:
        return sorted(p.parent.name for p in self.root.glob("*/pkg.json"))

    def metadata(self, name: str) -> dict:
        meta_path = self.root / name / "pkg.json"
        if not meta_path.is_file():
            raise RegistryError(f"unknown package: {name}")
        return json.loads(meta_path.read_text(encoding="utf-8"))

    def source_dir(self, name: str) -> Path:
        return self.root / name / name

    def load_project(self, name: str) -> Project:
        meta = self.metadata(name)
        return Project(
            name=meta["name"],
            version=str(meta.get("version", "0")),
            license=meta.get("license", ""),
            source_root=self.source_dir(name),
            direct_deps=list(meta.get("deps", [])),
        )


def resolve_transitive_deps(registry: LocalRegistry, name: str) -> list[str]:
    """All transitive dependencies of ``name`` (excluding itself), sorted."""
    seen: set[str] = set()
    frontier = list(registry.metadata(name).get("deps", []))
    while frontier:
        dep = frontier.pop()
        if dep in seen:
            continue
        seen.add(dep)
        frontier.extend(registry.metadata(dep).get("deps", []))
    return sorted(seen)


def build_environment(registry: LocalRegistry, name: str, out_dir: str | Path) -> Project:
    """Screen, resolve and materialize the isolated environment for ``name``.

    The project is rejected if it or any transitive dependency fails license
    screening.  Layout: ``<out_dir>/<name>/env/site/<dep>/`` plus metadata
    records and ``<out_dir>/<name>/lock.json``.
    """
    project = registry.load_project(name)
    verdict = screen_license(project.license)
    if not verdict.accepted:
        raise BuildError(f"{name}: {verdict.reason}")
    deps = resolve_transitive_deps(registry, name)
    for dep in deps:
        dep_verdict = screen_license(registry.metadata(dep).get("license", ""))
        if not dep_verdict.accepted:
            raise BuildError(f"{name}: dependency {dep} rejected ({dep_verdict.reason})")

    project_dir = Path(out_dir) / name
    env_root = project_dir / "env"
    site = env_root / "site"
    if site.exists():
        shutil.rmtree(site)
    site.mkdir(parents=True)

    resolved: dict[str, str] = {}
    for dep in deps:
        meta = registry.metadata(dep)
        resolved[dep] = str(meta.get("version", "0"))
        target = site / dep
        shutil.copytree(registry.source_dir(dep), target)
        files = sorted(str(p.relative_to(site)) for p in target.rglob("*.py"))
        record = {
            "name": dep,
            "version": resolved[dep],
            "license": meta.get("license", ""),
            "files": files,
        }
        (site / f"{dep}-{resolved[dep]}.meta.json").write_text(
            json.dumps(record, indent=2, sort_keys=True), encoding="utf-8"
        )

    lock = {
        "project": {"name": project.name, "version": project.version},
        "resolved": resolved,
    }
    (project_dir / "lock.json").write_text(
        json.dumps(lock, indent=2, sort_keys=True), encoding="utf-8"
    )
    project.env_root = env_root
    return project


def _stdlib_dirs() -> list[Path]:
    paths = sysconfig.get_paths()
    return [Path(paths["stdlib"]), Path(paths["platstdlib"])]


@dataclass
class SourceUniverse:
    """All analyzable files of a project, each tagged with its origin."""

    project: Project
    files: list[tuple[Path, str]]

    def classify(self, path: str | Path) -> str:
        path = Path(path)
        if self.project.source_root in path.parents or path == self.project.source_root:
            return IN_PROJECT
        if self.project.env_root is not None and self.project.env_root in path.parents:
            return THIRD_PARTY
        if "typeshed" in path.parts:  # analyzer stubs for builtins / stdlib
            return STDLIB
        for stdlib_dir in _stdlib_dirs():
            if stdlib_dir in path.parents:
                if "site-packages" in path.parts or "dist-packages" in path.parts:
                    return THIRD_PARTY
                return STDLIB
        return THIRD_PARTY

    @staticmethod
    def classify_module(module_name: str) -> str | None:
        top = module_name.split(".")[0]
        if top in sys.stdlib_module_names:
            return STDLIB
        return None

    def site_dir(self) -> Path | None:
        if self.project.env_root is None:
            return None
        return self.project.env_root / "site"

    def to_json(self) -> dict:
        return {
            "project": self.project.to_json(),
            "files": [[str(p), origin] for p, origin in self.files],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SourceUniverse":
        return cls(
            project=Project.from_json(obj["project"]),
            files=[(Path(p), origin) for p, origin in obj["files"]],
        )


def enumerate_sources(project: Project) -> SourceUniverse:
    """Deterministic (sorted) list of project and dependency source files."""
    files: list[tuple[Path, str]] = []
    for path in sorted(project.source_root.rglob("*.py")):
        files.append((path, IN_PROJECT))
    if project.env_root is not None:
        site = project.env_root / "site"
        if site.is_dir():
            for path in sorted(site.rglob("*.py")):
                files.append((path, THIRD_PARTY))
    return SourceUniverse(project=project, files=files)
