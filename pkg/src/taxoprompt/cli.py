"""Batch command line: evaluate, cohypo, iterate, correlate and score.

Settings resolve as command-line flag, then config file (``--config``, INI
``key = value`` lines under ``[taxoprompt]``), then ``TAXO_*`` environment
variables, then built-in defaults. Diagnostics go to stderr; stdout gets a
single summary line. Exit codes: 0 success, 2 configuration or input error,
3 backend or scoring failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backend import BackendDescriptor, BackendError, load_backend
from .cache import CACHE_ENV, ScoreCache
from .cohypo import (CohypoPipelineConfig, ConfigError, EmbeddingStore, OOVError, discover_cohyponyms,
                     load_lexicon)
from .datasets import DatasetError, build_target_pools, load_dataset
from .iterative import STEP_COLUMNS, IterationError, evaluate_iterative
from .metrics import (SCHEMA_VERSION, DatasetResult, EvalReport, RankedList, UndefinedMetricError,
                      average_precision, mean_average_precision, pearson, spearman)
from .prompts import (BUNDLED_CATALOGS, DEFAULT_COHYPO_TEMPLATE, CatalogError, PromptTemplate, TemplateError,
                      bundled_catalog, load_catalog)
from .scoring import ScoreMode, Scorer, ScoringError

logger = logging.getLogger("taxoprompt")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND = 0, 2, 3
CONFIG_SECTION = "taxoprompt"
ENV_PREFIX = "TAXO_"

# dest -> (default, type); every entry may come from flag, config file or env
SETTINGS = {
    "backend": ("uniform", str),
    "model": ("", str),
    "endpoint": (None, str),
    "table": (None, str),
    "cache": (None, str),
    "parallelism": (1, int),
    "lowercase": (True, "bool"),
    "mode": ("both", str),
    "combine_space": ("log", str),
    "selective_span": ("suffix", str),
    "output_dir": ("reports", str),
    "embeddings": (None, str),
    "lexicon": (None, str),
    "max_steps": (10, int),
    "top_n": (100, int),
    "keep_k": (10, int),
    "levenshtein_min": (3, int),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    backend: BackendDescriptor
    catalogs: list[str] = field(default_factory=list)
    modes: list[ScoreMode] = field(default_factory=list)
    datasets: list[tuple[str, str]] = field(default_factory=list)
    combine: list[list[str]] = field(default_factory=list)
    augment: bool = False
    cohypo_config: CohypoPipelineConfig | None = None
    output_dir: str = "reports"
    cache: str | None = None
    parallelism: int = 1
    lowercase: bool = True
    combine_space: str = "log"
    selective_span: str = "suffix"


# -- settings ---------------------------------------------------------------

def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CliError(f"expected a boolean, got {value!r}")


def _convert(name: str, value, kind):
    if value is None:
        return None
    try:
        return _to_bool(value) if kind == "bool" else kind(value)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad value for {name}: {value!r}") from exc


def _read_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not parser.has_section(CONFIG_SECTION):
        return {}
    return {k.replace("-", "_"): v.strip().strip('"') for k, v in parser.items(CONFIG_SECTION)}


def resolve_settings(args: argparse.Namespace, env=None) -> dict:
    """Merge flags > config file > environment > defaults into one dict."""
    env = os.environ if env is None else env
    config = _read_config(getattr(args, "config", None))
    unknown = set(config) - set(SETTINGS) - {"datasets", "catalogs", "combine", "prompts", "schema", "folds"}
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for name, (default, kind) in SETTINGS.items():
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = _convert(name, flag, kind)
        elif name in config:
            out[name] = _convert(name, config[name], kind)
        elif ENV_PREFIX + name.upper() in env:
            out[name] = _convert(name, env[ENV_PREFIX + name.upper()], kind)
        else:
            out[name] = default
    for name in ("datasets", "catalogs", "combine", "prompts"):
        flag = getattr(args, name, None)
        if flag:
            out[name] = list(flag)
        elif name in config:
            out[name] = [v.strip() for v in config[name].split(";") if v.strip()]
        else:
            out[name] = []
    for name in ("schema", "folds"):
        flag = getattr(args, name, None)
        out[name] = flag if flag is not None else config.get(name)
    if out["mode"] not in ("full", "selective", "both"):
        raise CliError(f"mode must be full, selective or both, not {out['mode']!r}")
    if out["combine_space"] not in ("log", "prob"):
        raise CliError("combine-space must be log or prob")
    if out["selective_span"] not in ("suffix", "slot"):
        raise CliError("selective-span must be suffix or slot")
    if out["parallelism"] < 1 or out["max_steps"] < 1:
        raise CliError("parallelism and max-steps must be >= 1")
    return out


def _backend_descriptor(s: dict, params: Sequence[str]) -> BackendDescriptor:
    extra = {}
    for p in params or ():
        if "=" not in p:
            raise CliError(f"--backend-param needs key=value, got {p!r}")
        k, v = p.split("=", 1)
        extra[k.strip()] = v.strip()
    if s["table"]:
        extra.setdefault("path", s["table"])
    try:
        return BackendDescriptor(s["backend"], s["model"], s["endpoint"], extra)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def build_run_config(args: argparse.Namespace, env=None) -> tuple[RunConfig, dict]:
    s = resolve_settings(args, env)
    env = os.environ if env is None else env
    modes = [ScoreMode.FULL, ScoreMode.SELECTIVE] if s["mode"] == "both" else [ScoreMode(s["mode"])]
    datasets = []
    for item in s["datasets"]:
        name, path = item.split("=", 1) if "=" in item else (Path(item).stem, item)
        datasets.append((name.strip(), path.strip()))
    cfg = RunConfig(
        backend=_backend_descriptor(s, getattr(args, "backend_param", None)),
        catalogs=s["catalogs"],
        modes=modes,
        datasets=datasets,
        combine=[[t.strip() for t in c.split(",") if t.strip()] for c in s["combine"]],
        augment=bool(getattr(args, "augment", False)),
        output_dir=s["output_dir"],
        cache=s["cache"] or env.get(CACHE_ENV) or None,
        parallelism=s["parallelism"],
        lowercase=s["lowercase"],
        combine_space=s["combine_space"],
        selective_span=s["selective_span"],
    )
    return cfg, s


# -- shared helpers -----------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n"


def _tsv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    return "\n".join("\t".join(str(c) for c in r) for r in [header, *rows]) + "\n"


def _fmt(x: float | None) -> str:
    return "NA" if x is None else f"{x:.6f}"


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", s).strip("_") or "x"


def load_templates(cfg: RunConfig, default_catalog: str, prompt_ids: Sequence[str] = ()) -> list[PromptTemplate]:
    templates: list[PromptTemplate] = []
    for cat in cfg.catalogs or [default_catalog]:
        templates += bundled_catalog(cat) if cat in BUNDLED_CATALOGS else load_catalog(cat)
    ids = [t.id for t in templates]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise CliError(f"duplicate template ids across catalogs: {', '.join(sorted(dupes))}")
    by_id = {t.id: t for t in templates}
    for group in cfg.combine:
        for tid in group:
            if tid not in by_id:
                raise CliError(f"--combine refers to unknown template {tid!r}")
    if prompt_ids:
        wanted = [i.strip() for p in prompt_ids for i in p.split(",") if i.strip()]
        missing = [i for i in wanted if i not in by_id]
        if missing:
            raise CliError(f"unknown template ids: {', '.join(missing)}")
        templates = [by_id[i] for i in wanted]
    return templates


def make_scorer(cfg: RunConfig) -> Scorer:
    try:
        backend = load_backend(cfg.backend)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot set up backend: {exc}") from exc
    cache = ScoreCache(cfg.cache) if cfg.cache else ScoreCache()
    return Scorer(backend, cache=cache, lowercase=cfg.lowercase, parallelism=cfg.parallelism,
                  selective_span=cfg.selective_span, combine_space=cfg.combine_space)


def _load_datasets(cfg: RunConfig, schema):
    if not cfg.datasets:
        raise CliError("no datasets given (use --dataset NAME=PATH)")
    out = []
    for name, path in cfg.datasets:
        try:
            out.append(load_dataset(path, name, schema))
        except OSError as exc:
            raise CliError(f"cannot read dataset {path}: {exc}") from exc
    return out


def _folds(spec: str | None):
    return None if not spec else {f.strip().lower() for f in spec.split(",") if f.strip()}


def _prompt_rows(templates: list[PromptTemplate], cfg: RunConfig) -> list[tuple[str, list[PromptTemplate]]]:
    by_id = {t.id: t for t in templates}
    rows = [(t.id, [t]) for t in templates]
    for group in cfg.combine:
        missing = [tid for tid in group if tid not in by_id]
        if missing:
            raise CliError(f"--combine template {missing[0]!r} is not among the selected prompts")
        rows.append((" + ".join(group), [by_id[tid] for tid in group]))
    return rows


def _fail_on(failures, what: str):
    if not failures:
        return
    hypo, cand, err = failures[0]
    code = EXIT_BACKEND if isinstance(err, (BackendError, ScoringError)) else EXIT_CONFIG
    raise CliError(f"{len(failures)} {what} failed; first ({hypo}, {cand}): {err}", code)


# -- co-hyponyms --------------------------------------------------------------

def _cohypo_config(s: dict, scorer: Scorer, rerank_id: str | None, mode: str) -> CohypoPipelineConfig:
    if not s["lexicon"]:
        raise CliError("co-hyponym search needs --lexicon")
    template = None
    if rerank_id:
        by_id = {t.id: t for t in bundled_catalog("cohyponym")}
        if rerank_id not in by_id:
            raise CliError(f"unknown co-hyponym template {rerank_id!r}")
        template = by_id[rerank_id]
    try:
        return CohypoPipelineConfig(load_lexicon(s["lexicon"]), s["top_n"], s["levenshtein_min"], template,
                                    ScoreMode(mode), s["keep_k"])
    except OSError as exc:
        raise CliError(f"cannot read lexicon: {exc}") from exc


def _load_embeddings(path: str | None) -> EmbeddingStore:
    if not path:
        raise CliError("co-hyponym search needs --embeddings")
    try:
        return EmbeddingStore.load(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load embeddings: {exc}") from exc


def _read_cohypo_map(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(f"cannot read co-hyponym map: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2 or not parts[1].strip():
            raise CliError(f"{path}:{lineno}: expected 'word<TAB>co-hyponym'")
        out.setdefault(parts[0].strip(), parts[1].strip())
    return out


def _cohypo_map(args, s: dict, scorer: Scorer, hypos: Sequence[str]) -> dict[str, str]:
    if args.cohypo_map:
        return _read_cohypo_map(args.cohypo_map)
    store = _load_embeddings(s["embeddings"])
    config = _cohypo_config(s, scorer, args.rerank_template, args.rerank_mode)
    out = {}
    for h in dict.fromkeys(hypos):
        try:
            best = discover_cohyponyms(store, scorer, config, h).best
        except OOVError:
            best = None
        if best is not None:
            out[h] = best
    return out


# -- evaluate -----------------------------------------------------------------

def cmd_evaluate(args) -> str:
    cfg, s = build_run_config(args)
    default_catalog = "cohypo_augmented" if cfg.augment else "hypernym"
    templates = load_templates(cfg, default_catalog, s["prompts"])
    if cfg.augment and any(t.family != "cohypo_augmented" for t in templates):
        raise CliError("--augment needs co-hyponym-augmented templates")
    if not cfg.augment and any(t.family == "cohypo_augmented" for t in templates):
        raise CliError("co-hyponym-augmented templates need --augment")
    datasets = _load_datasets(cfg, s["schema"])
    folds = _folds(s["folds"])
    rows = _prompt_rows(templates, cfg)
    scorer = make_scorer(cfg)

    hypos = [p.hypo for ds in datasets for p in ds.pairs]
    cohypos = _cohypo_map(args, s, scorer, hypos) if cfg.augment else {}
    kept, dropped = {}, 0
    for ds in datasets:
        pairs = [p for p in ds.pairs if folds is None or "all" in folds or p.fold in folds or p.fold == "all"]
        if cfg.augment:
            missing = [p for p in pairs if p.hypo not in cohypos]
            if missing and not args.oov_skip:
                raise CliError(f"no co-hyponym for {missing[0].hypo!r} (use --oov-skip to drop such pairs)")
            dropped += len(missing)
            pairs = [p for p in pairs if p.hypo in cohypos]
        kept[ds.name] = pairs
    if dropped:
        logger.warning("dropped %d pairs without a co-hyponym", dropped)

    triples = list(dict.fromkeys((p.hypo, p.candidate, cohypos.get(p.hypo))
                                 for pairs in kept.values() for p in pairs))
    reports: list[EvalReport] = []
    for mode in cfg.modes:
        for label, group in rows:
            logger.info("scoring %s (%s)", label, mode.value)
            scores, failures = scorer.score_grid(group, mode, triples)
            _fail_on(failures, "pairs")
            report = EvalReport(scorer.backend.backend_id, label, mode.value)
            for ds in datasets:
                report.datasets.append(_dataset_result(ds, kept[ds.name], scores, folds))
            reports.append(report)

    out = Path(cfg.output_dir)
    names = [ds.name for ds in datasets]
    header = ["prompt", "mode"] + [f"{n}_{m}" for n in names for m in ("ap", "map")] + ["mean_ap"]
    table = []
    for r in reports:
        cells = [r.prompt, r.mode]
        for n in names:
            d = r.result(n)
            cells += [_fmt(d.ap), _fmt(d.map)]
        table.append(cells + [_fmt(r.mean_ap)])
    best = _best_prompts(reports, names)
    write_atomic(out / "evaluate.tsv", _tsv(header, table))
    write_atomic(out / "best_prompts.tsv", _tsv(["mode", "dataset", "metric", "prompt", "value"],
                                                [[b["mode"], b["dataset"], b["metric"], b["prompt"], _fmt(b["value"])]
                                                 for b in best]))
    write_atomic(out / "evaluate.json", _json({
        "schema_version": SCHEMA_VERSION,
        "backend": scorer.backend.backend_id,
        "combine_space": cfg.combine_space,
        "dropped_pairs": dropped,
        "reports": [r.to_dict() for r in reports],
        "best": best,
    }))
    return (f"evaluate: {len(reports)} reports over {len(datasets)} datasets written to {out}; "
            f"backend calls {scorer.backend.calls}")


def _dataset_result(ds, pairs, scores, folds) -> DatasetResult:
    ap = None
    if any(p.label for p in pairs):
        ranked = RankedList.from_scores({p.id: scores[(p.hypo, p.candidate)] for p in pairs},
                                        [p.id for p in pairs if p.label])
        ap = average_precision(ranked)
    present = {(p.hypo, p.candidate) for p in pairs}
    pools, skipped = build_target_pools(ds, folds)
    lists = []
    for pool in pools:
        cands = [c for c in pool.candidates if (pool.target, c) in present]
        if not any(c in pool.gold for c in cands):
            continue
        lists.append(RankedList.from_scores({c: scores[(pool.target, c)] for c in cands}, pool.gold))
    m = mean_average_precision(lists) if lists else None
    n_targets = len(pools) + len(skipped)
    return DatasetResult(ds.name, ap, m, len(pairs), n_targets, n_targets - len(lists))


def _argmax(vals: list[tuple[float, str]]) -> tuple[float, str]:
    # highest value, ties to the lexicographically first prompt
    return min(vals, key=lambda vp: (-vp[0], vp[1]))


def _best_prompts(reports: list[EvalReport], names: list[str]) -> list[dict]:
    best = []
    for mode in dict.fromkeys(r.mode for r in reports):
        rs = [r for r in reports if r.mode == mode]
        for n in names:
            for metric in ("ap", "map"):
                vals = [(getattr(r.result(n), metric), r.prompt) for r in rs
                        if getattr(r.result(n), metric) is not None]
                if vals:
                    v, p = _argmax(vals)
                    best.append({"mode": mode, "dataset": n, "metric": metric, "prompt": p, "value": v})
        vals = [(r.mean_ap, r.prompt) for r in rs if r.mean_ap is not None]
        if vals:
            v, p = _argmax(vals)
            best.append({"mode": mode, "dataset": "mean", "metric": "ap", "prompt": p, "value": v})
    return best


# -- cohypo -------------------------------------------------------------------

def cmd_cohypo(args) -> str:
    cfg, s = build_run_config(args)
    targets = list(args.targets)
    if args.targets_file:
        try:
            targets += [w.strip() for w in Path(args.targets_file).read_text(encoding="utf-8").splitlines()
                        if w.strip()]
        except OSError as exc:
            raise CliError(f"cannot read targets: {exc}") from exc
    if not targets:
        raise CliError("no target words given")
    store = _load_embeddings(s["embeddings"])
    scorer = make_scorer(cfg)
    config = _cohypo_config(s, scorer, args.rerank_template, args.rerank_mode)
    out = Path(cfg.output_dir)
    summary = []
    for t in dict.fromkeys(targets):
        try:
            result = discover_cohyponyms(store, scorer, config, t)
        except OOVError as exc:
            if args.oov_skip:
                logger.warning("skipping %s", exc)
                continue
            raise CliError(str(exc)) from exc
        doc = {"schema_version": SCHEMA_VERSION, **result.to_dict()}
        if args.prob_scores:
            doc["rerank_scores"] = {w: math.exp(v) for w, v in doc["rerank_scores"].items()}
        doc["score_space"] = "prob" if args.prob_scores else "log"
        write_atomic(out / f"cohypo_{_safe_name(t)}.json", _json(doc))
        summary.append([t, result.best or "", len(result.neighbors), len(result.after_filter)])
    write_atomic(out / "cohypo.tsv", _tsv(["target", "best", "n_neighbors", "n_after_filter"], summary))
    return f"cohypo: {len(summary)} targets written to {out}; backend calls {scorer.backend.calls}"


# -- iterate ------------------------------------------------------------------

def _marker(value: float, base: float) -> str:
    return "+" if value > base else ("-" if value < base else "")


def _trace_doc(trace, prob: bool) -> dict:
    doc = trace.to_dict()
    doc["score_space"] = "prob" if prob else "log"
    if prob:
        for step in doc["steps"]:
            step["scores"] = {c: math.exp(v) for c, v in step["scores"].items()}
            step["max_score_excl_selected"] = math.exp(step["max_score_excl_selected"])
        for key in ("final_ranking_last", "final_ranking_mean"):
            doc[key] = [[w, math.exp(v)] for w, v in doc[key]]
    return doc


def cmd_iterate(args) -> str:
    cfg, s = build_run_config(args)
    templates = load_templates(cfg, "hypernym", s["prompts"])
    if any(t.family == "cohypo_augmented" for t in templates):
        raise CliError("iterate works with plain hypernym templates")
    datasets = _load_datasets(cfg, s["schema"])
    folds = _folds(s["folds"])
    rows = _prompt_rows(templates, cfg)
    scorer = make_scorer(cfg)
    out = Path(cfg.output_dir)
    table, docs = [], []
    for mode in cfg.modes:
        for label, group in rows:
            for ds in datasets:
                pools, _ = build_target_pools(ds, folds)
                if not pools:
                    raise CliError(f"dataset {ds.name} has no target with a positive candidate")
                try:
                    res = evaluate_iterative(pools, scorer, group, mode, s["max_steps"], ds.name)
                except IterationError as exc:
                    raise CliError(f"{ds.name}: {exc}", EXIT_BACKEND) from exc
                cols = res.columns()
                base = cols["step 0"]
                marks = {k: ("" if k == "step 0" else _marker(v, base)) for k, v in cols.items()}
                table.append([label, mode.value, ds.name] + [_fmt(cols[k]) + marks[k] for k in STEP_COLUMNS])
                docs.append({"prompt": label, "mode": mode.value, "dataset": ds.name,
                             "n_targets": res.n_targets,
                             "columns": {k: {"map": cols[k], "marker": marks[k]} for k in STEP_COLUMNS}})
                if args.dump_traces:
                    for tr in res.traces:
                        name = _safe_name(f"{ds.name}_{label}_{mode.value}_{tr.target}") + ".json"
                        write_atomic(Path(args.dump_traces) / name, _json(_trace_doc(tr, args.prob_scores)))
    write_atomic(out / "iterate.tsv", _tsv(["prompt", "mode", "dataset", *STEP_COLUMNS], table))
    write_atomic(out / "iterate.json", _json({"schema_version": SCHEMA_VERSION,
                                              "backend": scorer.backend.backend_id,
                                              "max_steps": s["max_steps"], "rows": docs}))
    return f"iterate: {len(table)} rows written to {out}; backend calls {scorer.backend.calls}"


# -- correlate ----------------------------------------------------------------

def _read_tsv(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise CliError(f"{path} is empty")
    rows = [l.split("\t") for l in lines]
    return rows[0], rows[1:]


def _number(cell: str) -> float | None:
    """Parse a numeric cell; a trailing +/- improvement marker is ignored."""
    cell = cell.strip()
    for text in (cell, cell[:-1] if cell[-1:] in ("+", "-") else None):
        if text:
            try:
                v = float(text)
            except ValueError:
                continue
            return v if math.isfinite(v) else None
    return None


def correlate(results_path: str, patterns_path: str, mode: str | None = None):
    """Pearson and Spearman of every numeric results column against pattern scores.

    Returns ``(rows, unmatched)`` with rows ``(column, n, pearson, spearman)``.
    """
    header, rows = _read_tsv(results_path)
    if "mode" in header and mode:
        rows = [r for r in rows if r[header.index("mode")] == mode]
    elif "mode" in header:
        modes = {r[header.index("mode")] for r in rows}
        if len(modes) > 1:
            raise CliError(f"results hold several modes ({', '.join(sorted(modes))}); pick one with --mode")
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise CliError("duplicate prompt ids in results")
    pattern_rows = []
    for line in Path(patterns_path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            pattern_rows.append(line.split("\t"))
    pscores = {}
    for r in pattern_rows:
        v = _number(r[1]) if len(r) >= 2 else None
        if v is not None:
            pscores[r[0].strip()] = v
    joined = [r for r in rows if r[0] in pscores]
    unmatched = sorted(set(ids) ^ set(pscores))
    if len(joined) < 2:
        raise CliError(f"only {len(joined)} ids match between results and pattern scores; need at least 2")
    out = []
    for j, col in enumerate(header[1:], 1):
        xs = [_number(r[j]) if j < len(r) else None for r in joined]
        if any(x is None for x in xs):
            continue
        ys = [pscores[r[0]] for r in joined]
        try:
            out.append((col, len(xs), pearson(xs, ys), spearman(xs, ys)))
        except UndefinedMetricError:
            out.append((col, len(xs), None, None))
    if not out:
        raise CliError("no numeric columns to correlate")
    return out, unmatched


def cmd_correlate(args) -> str:
    try:
        rows, unmatched = correlate(args.prompt_results, args.pattern_scores, args.mode)
    except OSError as exc:
        raise CliError(str(exc)) from exc
    if unmatched:
        logger.warning("%d ids unmatched and excluded: %s", len(unmatched), ", ".join(unmatched))
    out = Path(args.output_dir or "reports")
    write_atomic(out / "correlation.tsv",
                 _tsv(["column", "n", "pearson", "spearman"], [[c, n, _fmt(p), _fmt(sp)] for c, n, p, sp in rows]))
    write_atomic(out / "correlation.json", _json({
        "schema_version": SCHEMA_VERSION, "unmatched": unmatched,
        "columns": [{"column": c, "n": n, "pearson": p, "spearman": sp} for c, n, p, sp in rows]}))
    return f"correlate: {len(rows)} columns over {rows[0][1]} prompts written to {out}"


# -- score --------------------------------------------------------------------

def cmd_score(args) -> str:
    cfg, s = build_run_config(args)
    templates = []
    for cat in cfg.catalogs or list(BUNDLED_CATALOGS):
        templates += bundled_catalog(cat) if cat in BUNDLED_CATALOGS else load_catalog(cat)
    by_id = {t.id: t for t in templates}
    if args.prompt not in by_id:
        raise CliError(f"unknown template {args.prompt!r}")
    scorer = make_scorer(cfg)
    mode = ScoreMode.FULL if s["mode"] == "both" else ScoreMode(s["mode"])
    try:
        ps = scorer.score_pair(by_id[args.prompt], mode, args.hypo, args.hyper, args.cohypo)
    except TemplateError as exc:
        raise CliError(str(exc)) from exc
    value = f"prob={ps.prob:.6g}" if args.prob_scores else f"log_score={ps.log_score:.6f}"
    return f"score: {args.prompt} {mode.value} {args.hypo} {args.hyper or args.cohypo} {value}"


# -- argument parsing ---------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend and run settings")
    g.add_argument("--config", help="INI file with a [taxoprompt] section")
    g.add_argument("--backend", choices=("http", "table", "uniform"))
    g.add_argument("--model")
    g.add_argument("--endpoint")
    g.add_argument("--table", help="table backend JSON file")
    g.add_argument("--backend-param", action="append", metavar="KEY=VALUE")
    g.add_argument("--cache", help=f"score cache file (env {CACHE_ENV})")
    g.add_argument("--parallelism", type=int)
    g.add_argument("--lowercase", dest="lowercase", action="store_const", const=True)
    g.add_argument("--no-lowercase", dest="lowercase", action="store_const", const=False)
    g.add_argument("--catalog", dest="catalogs", action="append",
                   help=f"catalog file or bundled name ({', '.join(BUNDLED_CATALOGS)})")
    g.add_argument("--combine-space", choices=("log", "prob"))
    g.add_argument("--selective-span", choices=("suffix", "slot"))
    g.add_argument("--output-dir")
    g.add_argument("--prob-scores", action="store_true",
                   help="write probabilities instead of log scores (score, cohypo, trace dumps); metrics are unchanged")
    g.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", dest="datasets", action="append", metavar="NAME=PATH")
    p.add_argument("--schema", help="comma-separated column names, '_' skips a column")
    p.add_argument("--folds", help="comma-separated folds (val, test, all)")
    p.add_argument("--prompts", action="append", help="comma-separated template ids")
    p.add_argument("--combine", action="append", metavar="ID1,ID2", help="add an averaged prompt combination")
    p.add_argument("--mode", choices=("full", "selective", "both"))


def _add_cohypo(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings")
    p.add_argument("--lexicon")
    p.add_argument("--top-n", type=int)
    p.add_argument("--keep-k", type=int)
    p.add_argument("--levenshtein-min", type=int)
    p.add_argument("--rerank-template", help=f"co-hyponym template id (default {DEFAULT_COHYPO_TEMPLATE})")
    p.add_argument("--rerank-mode", choices=("full", "selective"), default="full")
    p.add_argument("--oov-skip", action="store_true", help="drop words that get no co-hyponym")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxoprompt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="AP and MAP per prompt, mode and dataset")
    _add_common(p)
    _add_data(p)
    _add_cohypo(p)
    p.add_argument("--augment", action="store_true", help="use co-hyponym-augmented prompts")
    p.add_argument("--cohypo-map", help="TSV of word<TAB>co-hyponym instead of running the search")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cohypo", help="co-hyponym search for target words")
    _add_common(p)
    _add_cohypo(p)
    p.add_argument("targets", nargs="*")
    p.add_argument("--targets-file")
    p.set_defaults(func=cmd_cohypo)

    p = sub.add_parser("iterate", help="iterative chain ranking, MAP at step 0 / last / mean")
    _add_common(p)
    _add_data(p)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--dump-traces", metavar="DIR", help="write one JSON trace per target")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("correlate", help="Pearson/Spearman of prompt results against pattern scores")
    p.add_argument("prompt_results")
    p.add_argument("pattern_scores")
    p.add_argument("--mode", help="keep only rows of this mode")
    p.add_argument("--output-dir")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("score", help="score one pair with one template")
    _add_common(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--hypo", required=True)
    p.add_argument("--hyper")
    p.add_argument("--cohypo")
    p.add_argument("--mode", choices=("full", "selective"))
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, CatalogError, TemplateError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, ScoringError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    print(summary)
    return EXIT_OK
