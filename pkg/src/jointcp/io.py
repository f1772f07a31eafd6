"""Score record files, experiment configs and report documents.

Score record file (JSON lines, schema version 1)::

    {"schema_version": "1", "kind": "scores"}
    {"sample_id": "s0", "scores": [0.12, 0.40, 0.05],
     "group_labels": {"entity_type": "PER"},
     "candidates": [[{"label": "B-PER", "score": 0.12}, ...], null, [...]],
     "true_labels": ["B-PER", null, "PERSON"],
     "raw_text": "Peter Blackburn"}

Only ``sample_id`` and ``scores`` are required. The stage count K is
fixed by the first record. Probability-table files use
``"kind": "prob_tables"`` and carry ``ner`` / ``ned`` / ``typing`` objects
instead of ``scores`` (see :func:`load_prob_tables`).

Report documents are single JSON objects::

    {"schema_version": "1", "toolkit_version": ..., "kind": "sweep",
     "config": {...}, "payload": {...}}

Non-finite floats are written as the strings ``"inf"``, ``"-inf"``, ``"nan"``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .adapters import CandidateEntityScore, TypingProbTable, pipeline_scores, tag_probs
from .calibrators import Objective
from .core import PredictionCandidates, ScoreMatrix, ThresholdVector
from .diagnostics import AuditResult, E2EAuditResult, PermutationReport
from .evaluation import MethodComparison, SweepReport
from .synthetic import (
    DependenceKind,
    Marginal,
    ScalingReport,
    ShiftReport,
    ShiftSpec,
    SyntheticSpec,
)

SCHEMA_VERSION = "1"


class SchemaError(ValueError):
    """A file does not follow the record or report schema."""


@dataclass(frozen=True)
class ScoreFile:
    matrix: ScoreMatrix
    candidates: PredictionCandidates | None = None
    group_labels: tuple[Mapping[str, str], ...] | None = None
    raw_text: tuple[str | None, ...] | None = None

    def groups(self, name: str) -> list[str]:
        if self.group_labels is None:
            raise ValueError(f"no group labels in file; cannot slice on {name!r}")
        out = []
        for i, g in enumerate(self.group_labels):
            if name not in g:
                raise ValueError(f"sample {self.matrix.sample_ids[i]!r} has no group label {name!r}")
            out.append(g[name])
        return out

    def texts(self) -> dict[str, str]:
        if self.raw_text is None:
            return {}
        return {sid: t for sid, t in zip(self.matrix.sample_ids, self.raw_text) if t is not None}


def _read_jsonl(path, kind: str) -> list[tuple[int, dict]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror or e}") from e
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}:{lineno}: record must be a JSON object")
        records.append((lineno, obj))
    if not records:
        raise SchemaError(f"{path}: empty calibration set")
    lineno, header = records[0]
    if "schema_version" not in header:
        raise SchemaError(f"{path}:{lineno}: first line must be a header with schema_version")
    if str(header["schema_version"]) != SCHEMA_VERSION:
        raise SchemaError(f"{path}:{lineno}: unsupported schema_version {header['schema_version']!r}")
    if header.get("kind", kind) != kind:
        raise SchemaError(f"{path}:{lineno}: expected kind {kind!r}, got {header.get('kind')!r}")
    if len(records) == 1:
        raise SchemaError(f"{path}: empty calibration set")
    return records[1:]


def _finite(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(f"{where}: score {x!r} is not a number")
    x = float(x)
    if not math.isfinite(x):
        raise SchemaError(f"{where}: non-finite score {x!r}")
    return x


def _assemble(path, rows: list[tuple[int, str, list[float], dict]]) -> ScoreFile:
    ids = [sid for _, sid, _, _ in rows]
    seen: dict[str, int] = {}
    for lineno, sid, _, _ in rows:
        if sid in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate sample_id {sid!r} (first at line {seen[sid]})")
        seen[sid] = lineno
    K = len(rows[0][2])
    matrix = ScoreMatrix([r[2] for r in rows], tuple(ids))
    extras = [r[3] for r in rows]

    candidates = None
    if any("candidates" in e for e in extras):
        cand_rows, truth_rows = [], []
        for (lineno, _, _, e) in rows:
            cands = e.get("candidates") or [None] * K
            if len(cands) != K:
                raise SchemaError(f"{path}:{lineno}: candidates has {len(cands)} stages, expected {K}")
            stage_rows = []
            for k, c in enumerate(cands):
                if c is None:
                    stage_rows.append(None)
                    continue
                try:
                    stage_rows.append(tuple((str(d["label"]), _finite(d["score"], f"{path}:{lineno}")) for d in c))
                except (KeyError, TypeError) as err:
                    raise SchemaError(f"{path}:{lineno}: candidate at stage {k} needs label and score") from err
                if not stage_rows[-1]:
                    raise SchemaError(f"{path}:{lineno}: empty candidate list at stage {k}")
            cand_rows.append(tuple(stage_rows))
            truth = e.get("true_labels") or [None] * K
            if len(truth) != K:
                raise SchemaError(f"{path}:{lineno}: true_labels has {len(truth)} stages, expected {K}")
            truth_rows.append(tuple(truth))
        has_truth = any("true_labels" in e for e in extras)
        candidates = PredictionCandidates(tuple(cand_rows), tuple(truth_rows) if has_truth else None)

    groups = None
    if any("group_labels" in e for e in extras):
        groups = tuple({str(k): str(v) for k, v in (e.get("group_labels") or {}).items()} for e in extras)
    raw = None
    if any("raw_text" in e for e in extras):
        raw = tuple(e.get("raw_text") for e in extras)
    return ScoreFile(matrix, candidates, groups, raw)


def load_scores(path) -> ScoreFile:
    """Read a score record file into a matrix plus optional candidates, labels and text."""
    rows = []
    K = None
    for lineno, rec in _read_jsonl(path, "scores"):
        where = f"{path}:{lineno}"
        if "sample_id" not in rec or "scores" not in rec:
            raise SchemaError(f"{where}: record needs sample_id and scores")
        scores = rec["scores"]
        if not isinstance(scores, list) or not scores:
            raise SchemaError(f"{where}: scores must be a non-empty array")
        if K is None:
            K = len(scores)
        elif len(scores) != K:
            raise SchemaError(f"{where}: record has {len(scores)} stages, file has K={K}")
        rows.append((lineno, str(rec["sample_id"]), [_finite(s, where) for s in scores], rec))
    return _assemble(path, rows)


def load_prob_tables(path) -> ScoreFile:
    """Read probability-table records and score them with the stage adapters.

    Record layout::

        {"sample_id": "s0",
         "ner": {"probs": [0.99, 0.71], "in_span": [true, true]},
         "ned": {"top_score": 0.93},
         "typing": {"types": ["PERSON", ...], "spans": ["Peter"], "probs": [[0.96], ...]},
         "has_entities": true}

    ``typing`` may be null and ``has_entities`` defaults to whether any
    tag position is inside an entity span.
    """
    rows = []
    for lineno, rec in _read_jsonl(path, "prob_tables"):
        where = f"{path}:{lineno}"
        try:
            ner, ned = rec["ner"], rec["ned"]
            tags = tag_probs(ner["probs"], ner["in_span"])
            entity = CandidateEntityScore(ned["top_score"])
            t = rec.get("typing")
            table = None if t is None else TypingProbTable(tuple(t["types"]), tuple(t["spans"]), tuple(map(tuple, t["probs"])))
            scores = list(pipeline_scores(tags, entity, table, rec.get("has_entities")))
            sid = str(rec["sample_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{where}: bad probability-table record ({e})") from e
        rows.append((lineno, sid, scores, rec))
    return _assemble(path, rows)


def write_scores(path, data: ScoreFile | ScoreMatrix) -> None:
    if isinstance(data, ScoreMatrix):
        data = ScoreFile(data)
    m = data.matrix
    ids = m.sample_ids or tuple(f"s{i}" for i in range(m.n_samples))
    lines = [json.dumps({"schema_version": SCHEMA_VERSION, "kind": "scores"})]
    for i in range(m.n_samples):
        rec: dict[str, Any] = {"sample_id": ids[i], "scores": [float(s) for s in m.scores[i]]}
        if data.group_labels is not None:
            rec["group_labels"] = dict(data.group_labels[i])
        if data.candidates is not None:
            rec["candidates"] = [
                None if c is None else [{"label": lab, "score": s} for lab, s in c]
                for c in data.candidates.candidates[i]
            ]
            if data.candidates.true_labels is not None:
                rec["true_labels"] = list(data.candidates.true_labels[i])
        if data.raw_text is not None and data.raw_text[i] is not None:
            rec["raw_text"] = data.raw_text[i]
        lines.append(json.dumps(rec))
    _write_text(path, "\n".join(lines) + "\n")


def load_text_split(path) -> dict[str, str]:
    """Raw records for the split audit: ``raw_text`` of a score file, or one record per line of plain text."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return load_scores(path).texts()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror or e}") from e
    return {f"line{i}": t for i, t in enumerate(lines, start=1) if t.strip()}


# -- typed JSON codec ------------------------------------------------------


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return to_jsonable(obj.item())
    return obj


def from_jsonable(tp, data):
    """Rebuild a value of type ``tp`` from :func:`to_jsonable` output."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if data is None and type(None) in args:
            return None
        last = None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return from_jsonable(arg, data)
            except (TypeError, ValueError, KeyError) as e:
                last = e
        raise SchemaError(f"cannot decode {data!r} as {tp}: {last}")
    if origin is tuple:
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(from_jsonable(args[0], v) for v in data)
        if len(args) != len(data):
            raise SchemaError(f"expected {len(args)} items, got {len(data)}")
        return tuple(from_jsonable(a, v) for a, v in zip(args, data))
    if origin in (dict, Mapping, typing.Mapping) or tp is Mapping:
        args = typing.get_args(tp) or (str, typing.Any)
        return {k: from_jsonable(args[1], v) for k, v in data.items()}
    if tp is typing.Any:
        return data
    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        if not isinstance(data, dict):
            raise TypeError(f"expected object for {tp.__name__}")
        hints = typing.get_type_hints(tp)
        kwargs = {f.name: from_jsonable(hints[f.name], data[f.name]) for f in dataclasses.fields(tp) if f.name in data}
        return tp(**kwargs)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(data)
    if tp is float:
        if isinstance(data, str):
            return float(data)
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise TypeError(f"expected number, got {data!r}")
        return float(data)
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            raise TypeError(f"expected integer, got {data!r}")
        return data
    if tp is bool:
        if not isinstance(data, bool):
            raise TypeError(f"expected boolean, got {data!r}")
        return data
    if tp is str:
        if not isinstance(data, str):
            raise TypeError(f"expected string, got {data!r}")
        return data
    raise SchemaError(f"unsupported type {tp!r}")


REPORT_KINDS: dict[str, type] = {
    "thresholds": ThresholdVector,
    "coverage": MethodComparison,
    "sweep": SweepReport,
    "scaling": ScalingReport,
    "shift": ShiftReport,
    "permutation": PermutationReport,
    "split_audit": AuditResult,
    "e2e_audit": E2EAuditResult,
}


def report_kind(report) -> str:
    for kind, cls in REPORT_KINDS.items():
        if type(report) is cls:
            return kind
    raise TypeError(f"not a report type: {type(report).__name__}")


@dataclass(frozen=True)
class Document:
    kind: str
    report: Any
    config: dict = field(default_factory=dict)
    toolkit_version: str = __version__


def dumps_report(report, config: Mapping | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "kind": report_kind(report),
        "config": to_jsonable(dict(config or {})),
        "payload": to_jsonable(report),
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads_document(text: str, where: str = "<string>") -> Document:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{where}: invalid JSON ({e.msg})") from e
    if not isinstance(doc, dict) or str(doc.get("schema_version")) != SCHEMA_VERSION:
        raise SchemaError(f"{where}: missing or unsupported schema_version")
    kind = doc.get("kind")
    if kind not in REPORT_KINDS:
        raise SchemaError(f"{where}: unknown report kind {kind!r}")
    try:
        report = from_jsonable(REPORT_KINDS[kind], doc["payload"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{where}: malformed {kind} payload ({e})") from e
    return Document(kind, report, doc.get("config") or {}, doc.get("toolkit_version", ""))


def read_document(path) -> Document:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror or e}") from e
    return loads_document(text, str(path))


def read_report(path):
    return read_document(path).report


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def write_report(report, path, format: str = "structured", config: Mapping | None = None) -> None:
    """Write ``report`` as a structured JSON document or as human-readable tables."""
    from .tables import render

    if format == "structured":
        text = dumps_report(report, config)
    elif format == "human_table":
        text = render(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    _write_text(path, text)


# -- experiment config -------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative experiment description loaded from JSON or YAML.

    Paths are resolved relative to the config file. Either ``cal`` (a
    score file) or ``synthetic`` (SyntheticSpec fields) supplies data.
    """

    cal: str | None = None
    test: str | None = None
    tuning: str | None = None
    synthetic: SyntheticSpec | None = None
    methods: tuple[str, ...] = ("independent", "bonferroni", "pasc")
    alphas: tuple[float, ...] = (0.1,)
    n_cals: tuple[int, ...] = (1000,)
    n_test: int | None = None
    n_tune: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    slices: tuple[str, ...] = ()
    shifts: tuple[tuple[str, ShiftSpec], ...] = ()
    k_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    trials: int = 200
    n_permutations: int = 200
    grid_step: float = 0.005
    objective: Objective = Objective.MIN_AVG_SET_SIZE
    output: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must not be empty")


def _synthetic_from_dict(d: Mapping) -> SyntheticSpec:
    d = dict(d)
    marginals = []
    for m in d.pop("marginals", [{"kind": "uniform01"}]):
        m = dict(m)
        if "source" in m and isinstance(m["source"], list):
            m["source"] = tuple(m["source"])
        marginals.append(Marginal(**m))
    d.setdefault("n_samples", 1)
    if "dependence" in d:
        d["dependence"] = DependenceKind(d["dependence"])
    return SyntheticSpec(marginals=tuple(marginals), **d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"{path}: {e.strerror or e}") from e
    if path.suffix in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text) or {}
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: config must be a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise SchemaError(f"{path}: unknown config keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    for key in ("cal", "test", "tuning", "output"):
        if raw.get(key) is not None:
            p = (path.parent / raw[key]).resolve()
            if key != "output" and not p.exists():
                raise SchemaError(f"{path}: {key} file {p} does not exist")
            kw[key] = str(p)
    if raw.get("synthetic") is not None:
        kw["synthetic"] = _synthetic_from_dict(raw["synthetic"])
    for key in ("methods", "slices"):
        if key in raw:
            kw[key] = tuple(str(v) for v in raw[key])
    for key, conv in (("alphas", float), ("n_cals", int), ("seeds", int), ("k_range", int)):
        if key in raw:
            kw[key] = tuple(conv(v) for v in raw[key])
    for key in ("n_test", "n_tune", "trials", "n_permutations"):
        if raw.get(key) is not None:
            kw[key] = int(raw[key])
    if "grid_step" in raw:
        kw["grid_step"] = float(raw["grid_step"])
    if "objective" in raw:
        kw["objective"] = Objective(raw["objective"])
    if "shifts" in raw:
        kw["shifts"] = tuple((str(k), ShiftSpec.parse(str(v))) for k, v in dict(raw["shifts"]).items())
    try:
        return ExperimentConfig(**kw)
    except ValueError as e:
        raise SchemaError(f"{path}: {e}") from e
