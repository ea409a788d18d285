"""End-to-end run orchestration.

Stages run in a fixed order (envs, extract, resolve, split, assemble, eval,
coverage) with line-delimited JSON artifacts between them, so every stage can
also be run standalone from the CLI.  A run manifest records the resolved
config, a hash of it, per-stage timings and record counts, every decision
knob, and content digests of the artifacts.  Digests are computed with the
output directory path normalized out, so two runs of the same config into
different directories can be compared byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .assembly import (
    ContextBundle,
    PRESETS,
    TEMPLATES,
    assemble,
    make_plan,
    rank_usages,
)
from .bridge import (
    ResolvedCall,
    _FileTexts,
    collect_usages,
    extract_implementation,
    group_resolved,
    resolve_instances,
)
from .environments import (
    BuildError,
    IN_PROJECT,
    LocalRegistry,
    RegistryError,
    SourceUniverse,
    build_environment,
    enumerate_sources,
)
from .extraction import (
    CallInstance,
    FilterConfig,
    R6,
    apply_filters,
    extract_calls,
)
from .metrics import (
    EvalInstance,
    coverage_curve,
    evaluate,
    make_threshold_copier,
    predict_copy_top,
    predict_empty,
    run_external_predictor,
)
from .splits import ImportGraph, SplitManifest, sample_split

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib


class ConfigError(Exception):
    pass


class StageError(Exception):
    pass


STAGES = ("envs", "extract", "resolve", "split", "assemble", "eval", "coverage")

_DEFAULTS = {
    "corpus": {"registry": None, "projects": [], "jobs": 1},
    "extract": {"keep_rejected": False, "denylist": None},
    "split": {"level": 4, "seed": 7, "ratio": [10, 1, 1], "trials": 20},
    "assemble": {"preset": "finetune", "template": "encoder-decoder", "total": 512},
    "eval": {"predictor": "copy-threshold:0.8", "k_max": 10, "require_all_bound": True},
}


def load_config(path: str | Path) -> dict:
    """Parse and validate a run config, filling defaults."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return resolve_config(raw, base_dir=path.parent)


def resolve_config(raw: dict, base_dir: Path | None = None) -> dict:
    unknown = set(raw) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    config: dict = {}
    for section, defaults in _DEFAULTS.items():
        given = raw.get(section, {})
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        config[section] = {**defaults, **given}

    registry = config["corpus"]["registry"]
    if not registry:
        raise ConfigError("config requires corpus.registry")
    registry = Path(registry)
    if base_dir is not None and not registry.is_absolute():
        registry = base_dir / registry
    if not registry.is_dir():
        raise ConfigError(f"corpus.registry is not a directory: {registry}")
    config["corpus"]["registry"] = str(registry)

    if config["assemble"]["preset"] not in PRESETS:
        raise ConfigError(f"unknown assemble.preset: {config['assemble']['preset']}")
    if config["assemble"]["template"] not in TEMPLATES:
        raise ConfigError(f"unknown assemble.template: {config['assemble']['template']}")
    if config["split"]["level"] not in (1, 2, 3, 4):
        raise ConfigError(f"split.level must be 1..4, got {config['split']['level']}")
    ratio = config["split"]["ratio"]
    if len(ratio) != 3 or any(not isinstance(r, int) or r < 0 for r in ratio):
        raise ConfigError(f"split.ratio must be three non-negative integers: {ratio}")
    return config


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True)


def write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dump(record) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def artifact_digest(path: Path, out_root: Path | None = None) -> str:
    """sha256 of the artifact with the run directory path normalized out."""
    data = path.read_bytes()
    if out_root is not None:
        data = data.replace(str(out_root.resolve()).encode("utf-8"), b"$OUT")
        data = data.replace(str(out_root).encode("utf-8"), b"$OUT")
    return hashlib.sha256(data).hexdigest()


# -- individual stages -------------------------------------------------


def stage_envs(
    registry_root: str | Path,
    out_dir: str | Path,
    projects: list[str] | None = None,
    jobs: int = 1,
) -> tuple[list[str], dict[str, str]]:
    """Build isolated environments for every requested (or every registry)
    project.  Returns (accepted names, rejected name -> reason)."""
    registry = LocalRegistry(registry_root)
    names = list(projects) if projects else registry.names()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def build(name: str):
        try:
            project = build_environment(registry, name, out_dir)
        except (BuildError, RegistryError) as exc:
            return name, None, str(exc)
        universe = enumerate_sources(project)
        (out_dir / name / "universe.json").write_text(
            json.dumps(universe.to_json(), sort_keys=True, indent=2), encoding="utf-8"
        )
        return name, project, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(build, names))
    else:
        results = [build(name) for name in names]

    accepted = sorted(name for name, project, _ in results if project is not None)
    rejected = {name: reason for name, _, reason in results if reason is not None}
    return accepted, rejected


def load_universe(envs_dir: str | Path, name: str) -> SourceUniverse:
    path = Path(envs_dir) / name / "universe.json"
    return SourceUniverse.from_json(json.loads(path.read_text(encoding="utf-8")))


def stage_extract(
    universes: list[SourceUniverse],
    out_path: Path,
    keep_rejected: bool = False,
    filter_config: FilterConfig | None = None,
) -> dict[str, int]:
    """Extract call instances from in-project sources and apply the
    pre-resolution filter rules.  R6 (unresolved callee) is deferred to the
    resolve stage, so verdicts here treat resolution as pending."""
    filter_config = filter_config or FilterConfig()
    records = []
    counts: dict[str, int] = {"kept": 0}
    for universe in sorted(universes, key=lambda u: u.project.name):
        for path, origin in universe.files:
            if origin != IN_PROJECT:
                continue
            for inst in extract_calls(path):
                verdict = apply_filters(inst, resolved=True, config=filter_config)
                record = {
                    "project": universe.project.name,
                    "instance": inst.to_json(),
                    "kept": verdict.kept,
                }
                if verdict.kept:
                    counts["kept"] += 1
                    records.append(record)
                else:
                    counts[verdict.rule] = counts.get(verdict.rule, 0) + 1
                    if keep_rejected:
                        record["rule"] = verdict.rule
                        records.append(record)
    write_jsonl(out_path, records)
    return counts


def stage_resolve(
    instances_path: Path,
    envs_dir: Path,
    out_path: Path,
    analyzer_cmd: list[str] | None = None,
) -> dict[str, int]:
    """Resolve kept instances against each project's analyzer session.
    Unresolvable calls are recorded with rule R6 and not kept."""
    by_project: dict[str, list[CallInstance]] = {}
    for record in read_jsonl(instances_path):
        if record.get("kept"):
            by_project.setdefault(record["project"], []).append(
                CallInstance.from_json(record["instance"])
            )

    records = []
    counts = {"kept": 0, R6: 0}
    for project_name in sorted(by_project):
        universe = load_universe(envs_dir, project_name)
        resolved = resolve_instances(
            by_project[project_name], universe, analyzer_cmd=analyzer_cmd
        )
        for call in resolved:
            record = {"project": project_name, **call.to_json(), "kept": call.resolved}
            if call.resolved:
                counts["kept"] += 1
            else:
                record["rule"] = R6
                counts[R6] += 1
            records.append(record)
    write_jsonl(out_path, records)
    return counts


def stage_split(
    envs_dir: Path,
    accepted: list[str],
    level: int,
    seed: int,
    ratio: tuple[int, int, int],
    graph_path: Path,
    manifest_path: Path,
    trials: int = 20,
) -> SplitManifest:
    projects = [load_universe(envs_dir, name).project for name in accepted]
    graph = ImportGraph.from_projects(projects)
    # deps outside the accepted set still appear as closure nodes
    for targets in graph.edges.values():
        graph.nodes |= targets
    graph_path.write_text(
        json.dumps(graph.to_json(), sort_keys=True, indent=2), encoding="utf-8"
    )
    if not graph.nodes:
        manifest = SplitManifest(
            train=[], valid=[], test=[], level=level, seed=seed,
            warnings=["empty corpus"],
        )
    else:
        manifest = sample_split(graph, level=level, seed=seed, ratio=ratio, trials=trials)
    manifest_path.write_text(
        json.dumps(manifest.to_json(), sort_keys=True, indent=2), encoding="utf-8"
    )
    return manifest


def _looks_like_method_call(left_context: list[str]) -> bool:
    # left context ends with [..., ".", name, "("] for attribute calls
    return len(left_context) >= 3 and left_context[-3] == "."


def stage_assemble(
    resolved_path: Path,
    out_path: Path,
    preset: str,
    template: str,
    total: int = 512,
    usage_rank_depth: int = 10,
) -> dict[str, int]:
    """Collect usage groups, extract implementations, and render one
    budget-trimmed input per kept resolved call."""
    plan = make_plan(preset, template, total=total)
    by_project: dict[str, list[ResolvedCall]] = {}
    for record in read_jsonl(resolved_path):
        if record.get("kept"):
            by_project.setdefault(record["project"], []).append(
                ResolvedCall.from_json(record)
            )

    records = []
    counts = {"assembled": 0, "impl_missing": 0}
    for project_name in sorted(by_project):
        calls = by_project[project_name]
        groups = group_resolved(calls)
        texts = _FileTexts()
        impl_cache: dict[str, object] = {}
        for call in calls:
            inst = call.instance
            if call.group_id not in impl_cache:
                impl_cache[call.group_id] = extract_implementation(call.def_range)
            impl = impl_cache[call.group_id]
            if impl is None:
                counts["impl_missing"] += 1
            ranked = rank_usages(
                collect_usages(groups[call.group_id], call, texts),
                k=max(usage_rank_depth, plan.max_usages),
            )
            bundle = ContextBundle(
                left=inst.left_context,
                right=inst.right_context,
                implementation=impl.tokens if impl is not None else [],
                usages=ranked[: plan.max_usages],
            )
            assembled = assemble(bundle, plan, template)
            records.append(
                {
                    "instance_id": inst.instance_id,
                    "project": project_name,
                    "callee": inst.callee_name,
                    "origin": call.origin,
                    "ground_truth": inst.ground_truth_args,
                    "signature": impl.signature.to_json() if impl is not None else None,
                    "method_call": _looks_like_method_call(inst.left_context)
                    or (impl is not None and impl.receiver_bound),
                    "preset": preset,
                    "template": template,
                    "usages": [[u.similarity, u.args_text] for u in ranked],
                    "input": assembled.to_json(),
                    "bundle": {
                        "left": inst.left_context,
                        "right": inst.right_context,
                        "implementation": impl.tokens if impl is not None else [],
                        "usages": [u.to_json() for u in ranked[: plan.max_usages]],
                    },
                }
            )
            counts["assembled"] += 1
    write_jsonl(out_path, records)
    return counts


def eval_instances_from_records(records: list[dict]) -> list[EvalInstance]:
    from .bridge import FunctionSignature

    instances = []
    for record in records:
        signature = (
            FunctionSignature.from_json(record["signature"])
            if record.get("signature")
            else None
        )
        instances.append(
            EvalInstance(
                instance_id=record["instance_id"],
                ground_truth=record["ground_truth"],
                origin=record.get("origin"),
                usages=[(sim, args) for sim, args in record.get("usages", [])],
                signature=signature,
                method_call=record.get("method_call", False),
                template=record.get("template", "decoder-only"),
                input_text=record.get("input", {}).get("text", []),
            )
        )
    return instances


def parse_predictor(spec: str):
    """Predictor specs: ``empty``, ``copy-top``, ``copy-threshold:<theta>``,
    ``external:cmd="..."``.  Returns (name, callable | command list)."""
    if spec == "empty":
        return spec, predict_empty
    if spec == "copy-top":
        return spec, predict_copy_top
    if spec.startswith("copy-threshold:"):
        try:
            theta = float(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad threshold in predictor spec: {spec}")
        return spec, make_threshold_copier(theta)
    if spec.startswith("external:"):
        rest = spec.split(":", 1)[1]
        if rest.startswith("cmd="):
            rest = rest[len("cmd="):]
        if rest[:1] in ("'", '"') and rest[:1] == rest[-1:]:
            rest = rest[1:-1]
        command = shlex.split(rest)
        if not command:
            raise ConfigError(f"empty external command: {spec}")
        return spec, command
    raise ConfigError(f"unknown predictor spec: {spec}")


def stage_eval(
    assembled_path: Path,
    out_path: Path,
    predictor_spec: str,
    k_max: int = 10,
    require_all_bound: bool = True,
    timeout: float = 300.0,
) -> dict[str, int]:
    instances = eval_instances_from_records(read_jsonl(assembled_path))
    name, predictor = parse_predictor(predictor_spec)
    errors: list[str] = []
    if callable(predictor):
        predictions = {inst.instance_id: predictor(inst) for inst in instances}
    else:
        predictions, errors = run_external_predictor(instances, predictor, timeout=timeout)
    report = evaluate(
        instances,
        predictions,
        predictor_name=name,
        k_max=k_max,
        require_all_bound=require_all_bound,
        errors=errors,
    )
    out_path.write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=2), encoding="utf-8"
    )
    return {"evaluated": len(instances), "adapter_errors": len(errors)}


def stage_coverage(assembled_path: Path, out_path: Path, k_max: int = 10) -> dict:
    instances = eval_instances_from_records(read_jsonl(assembled_path))
    curve = coverage_curve(instances, k_max=k_max)
    out_path.write_text(
        json.dumps({str(k): v for k, v in curve.items()}, sort_keys=True, indent=2),
        encoding="utf-8",
    )
    return {"instances": len(instances), "k_max": k_max}


# -- the orchestrator --------------------------------------------------


def decision_knobs(config: dict) -> dict:
    """Every behavior choice a reader of the manifest might want to audit."""
    filter_config = FilterConfig()
    if config["extract"]["denylist"]:
        filter_config.denylist = set(config["extract"]["denylist"])
    return {
        "token_definition": "python tokenize lexical tokens, comments and pure-layout tokens dropped",
        "normalization": {
            "strip_enclosing_parens": True,
            "collapse_whitespace": "single space between lexical tokens",
            "drop_trailing_comma": True,
            "case_sensitive": True,
            "comments_stripped": True,
        },
        "filters": filter_config.to_json(),
        "reference_queries_exclude_declaration": True,
        "usage_similarity_window": "full enclosing-function left context, distinct tokens",
        "usage_sources": "same project only; same-file sites strictly before the target",
        "budget_preset": config["assemble"]["preset"],
        "template": config["assemble"]["template"],
        "budget_total": config["assemble"]["total"],
        "isolation_level": config["split"]["level"],
        "split_seed": config["split"]["seed"],
        "split_ratio": list(config["split"]["ratio"]),
        "valid_test_isolation_enforced": False,
        "spm_require_all_bound": config["eval"]["require_all_bound"],
        "spm_receiver_excluded": True,
    }


@dataclass
class RunManifest:
    version: str
    config: dict
    config_hash: str
    knobs: dict
    stages: dict[str, dict] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    rejected_projects: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "config_hash": self.config_hash,
            "knobs": self.knobs,
            "stages": self.stages,
            "artifacts": self.artifacts,
            "rejected_projects": self.rejected_projects,
        }


def pipeline_run(config: dict, out_dir: str | Path, force: bool = False) -> RunManifest:
    """Run every stage in order under ``out_dir``.

    Completed stages (artifact already present) are skipped unless ``force``.
    Any stage failure raises StageError after the manifest, with the stages
    completed so far, has been written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    envs_dir = out_dir / "envs"
    paths = {
        "instances": out_dir / "instances.jsonl",
        "resolved": out_dir / "resolved.jsonl",
        "graph": out_dir / "graph.json",
        "split": out_dir / "split.json",
        "assembled": out_dir / "assembled.jsonl",
        "report": out_dir / "report.json",
        "coverage": out_dir / "coverage.json",
    }
    manifest = RunManifest(
        version=__version__,
        config=config,
        config_hash=config_hash(config),
        knobs=decision_knobs(config),
    )
    manifest_path = out_dir / "run_manifest.json"

    def finish_stage(name: str, started: float, counts: dict, skipped: bool = False) -> None:
        manifest.stages[name] = {
            "seconds": round(time.perf_counter() - started, 4),
            "counts": counts,
            "skipped": skipped,
        }

    def write_manifest() -> None:
        for key, path in paths.items():
            if path.exists():
                manifest.artifacts[key] = artifact_digest(path, out_dir)
        manifest_path.write_text(
            json.dumps(manifest.to_json(), sort_keys=True, indent=2), encoding="utf-8"
        )

    accepted_path = envs_dir / "accepted.json"
    try:
        # envs
        started = time.perf_counter()
        if accepted_path.exists() and not force:
            state = json.loads(accepted_path.read_text(encoding="utf-8"))
            accepted, rejected = state["accepted"], state["rejected"]
            finish_stage("envs", started, {"accepted": len(accepted)}, skipped=True)
        else:
            accepted, rejected = stage_envs(
                config["corpus"]["registry"],
                envs_dir,
                projects=config["corpus"]["projects"] or None,
                jobs=config["corpus"]["jobs"],
            )
            accepted_path.write_text(
                json.dumps({"accepted": accepted, "rejected": rejected}, sort_keys=True),
                encoding="utf-8",
            )
            finish_stage("envs", started, {"accepted": len(accepted)})
        manifest.rejected_projects = dict(rejected)
        universes = [load_universe(envs_dir, name) for name in accepted]

        # extract
        started = time.perf_counter()
        if paths["instances"].exists() and not force:
            counts = {"records": len(read_jsonl(paths["instances"]))}
            finish_stage("extract", started, counts, skipped=True)
        else:
            filter_config = FilterConfig()
            if config["extract"]["denylist"]:
                filter_config.denylist = set(config["extract"]["denylist"])
            counts = stage_extract(
                universes,
                paths["instances"],
                keep_rejected=config["extract"]["keep_rejected"],
                filter_config=filter_config,
            )
            finish_stage("extract", started, counts)

        # resolve
        started = time.perf_counter()
        if paths["resolved"].exists() and not force:
            counts = {"records": len(read_jsonl(paths["resolved"]))}
            finish_stage("resolve", started, counts, skipped=True)
        else:
            counts = stage_resolve(paths["instances"], envs_dir, paths["resolved"])
            finish_stage("resolve", started, counts)

        # split
        started = time.perf_counter()
        if paths["split"].exists() and not force:
            finish_stage("split", started, {}, skipped=True)
        else:
            split_manifest = stage_split(
                envs_dir,
                accepted,
                level=config["split"]["level"],
                seed=config["split"]["seed"],
                ratio=tuple(config["split"]["ratio"]),
                graph_path=paths["graph"],
                manifest_path=paths["split"],
                trials=config["split"]["trials"],
            )
            finish_stage(
                "split",
                started,
                {
                    "train": len(split_manifest.train),
                    "valid": len(split_manifest.valid),
                    "test": len(split_manifest.test),
                },
            )

        # assemble
        started = time.perf_counter()
        if paths["assembled"].exists() and not force:
            counts = {"records": len(read_jsonl(paths["assembled"]))}
            finish_stage("assemble", started, counts, skipped=True)
        else:
            counts = stage_assemble(
                paths["resolved"],
                paths["assembled"],
                preset=config["assemble"]["preset"],
                template=config["assemble"]["template"],
                total=config["assemble"]["total"],
            )
            finish_stage("assemble", started, counts)

        # eval
        started = time.perf_counter()
        if paths["report"].exists() and not force:
            finish_stage("eval", started, {}, skipped=True)
        else:
            counts = stage_eval(
                paths["assembled"],
                paths["report"],
                predictor_spec=config["eval"]["predictor"],
                k_max=config["eval"]["k_max"],
                require_all_bound=config["eval"]["require_all_bound"],
            )
            finish_stage("eval", started, counts)

        # coverage
        started = time.perf_counter()
        if paths["coverage"].exists() and not force:
            finish_stage("coverage", started, {}, skipped=True)
        else:
            counts = stage_coverage(
                paths["assembled"], paths["coverage"], k_max=config["eval"]["k_max"]
            )
            finish_stage("coverage", started, counts)
    except Exception as exc:
        write_manifest()
        raise StageError(str(exc)) from exc

    write_manifest()
    return manifest
