"""Run the configured audit battery and write report files."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import RECORD_FORMAT, REPORT_FORMAT, __version__
from .calibration import (
    SYMPTOM_ITEMS,
    bias_residuals,
    intersectional_bias,
    paradox_calibration,
    suppression_table,
    symptom_rates,
)
from .domain import (
    MARGINAL_DIMENSIONS,
    Condition,
    Dimension,
    GroupSelector,
    Severity,
    ValidationError,
    selector_for_label,
)
from .ingest import AuditConfig, BaselineRow, Dataset, load_baselines, load_records, lookup_baseline, scan_records
from .logic import gateway_violations
from .network import NetworkError, NoiseFloor, divergence, group_items, noise_floor
from .rigidity import context_si_delta, per_model_si, rigidity_table
from .stability import fracture_battery, stability_report
from .statkit import bh_fdr, bonferroni

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

REPORT_FILES = ("report.json", "report.md", "rigidity.csv", "stability.csv", "transitions.csv", "fracture.csv",
                "network_divergence.csv", "noise_floor.json", "logic_audit.json", "bias.csv", "intersectional.csv",
                "paradox.csv", "symptom_rates.csv")


class InfeasibleAudit(Exception):
    """An enabled audit cannot run on this input (exit code 3)."""


@dataclass
class Section:
    payload: dict = field(default_factory=dict)
    tests: list[tuple[str, float]] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    files: dict[str, object] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def test(self, test_id: str, p: float | None) -> str | None:
        if p is None:
            return None
        self.tests.append((test_id, float(p)))
        return test_id


@dataclass(frozen=True)
class HypothesisFamily:
    name: str
    tests: tuple[str, ...]
    correction: str

    def correct(self, pvals: list[float], alpha: float) -> list[dict]:
        if not pvals:
            return []
        if self.correction == "Bonferroni":
            adjusted = bonferroni(pvals)
            reject = adjusted <= alpha
        else:
            reject, adjusted = bh_fdr(pvals, alpha)
        return [{"id": t, "p": p, "p_adjusted": float(a), "reject": bool(r)}
                for t, p, a, r in zip(self.tests, pvals, adjusted, reject)]


@dataclass(frozen=True)
class AuditResult:
    report: dict
    out_dir: Path
    files: tuple[str, ...]


# -- section helpers ---------------------------------------------------------

def _clean(v):
    """JSON-safe value: numpy scalars unwrapped, non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (Dimension, Condition)):
        return v.label if isinstance(v, Dimension) else v.value
    return v


def _slug(*parts) -> str:
    return "/".join(str(p).replace(" ", "_") for p in parts if p is not None)


def _baseline_instruments(dataset: Dataset, baselines) -> list[str]:
    have = {b.instrument for b in baselines}
    return [i for i in dataset.instruments if i in have]


def _rigidity(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    rows_out = []
    for inst in _baseline_instruments(ds, baselines):
        dims = MARGINAL_DIMENSIONS + (Dimension.INTERSECTION,)
        rows = rigidity_table(ds, baselines, inst, dims) + rigidity_table(ds, baselines, inst, dims, by_model=True)
        block = []
        for r in rows:
            row = r.to_row()
            row["test_id"] = sec.test(_slug("rigidity", inst, r.model or "pooled", r.dimension.label, r.group),
                                      r.p_value)
            block.append(row)
        rows_out.extend(block)
        entry = {"rows": block,
                 "per_model": [{"model": m.model, "mean_si": m.mean_si, "compression_pct": m.compression_pct,
                                "rows": m.rows} for m in per_model_si(ds, baselines, inst)]}
        try:
            entry["context"] = [{"dimension": c.dimension.label, "group": c.group, "model": c.model or "",
                                 "si_clinical": c.si_clinical, "si_personal": c.si_personal,
                                 "pct_change": c.pct_change}
                                for by in (False, True) for c in context_si_delta(ds, baselines, inst, by_model=by)]
        except ValidationError as exc:
            entry["context"] = []
            sec.warnings.append(f"rigidity {inst}: {exc}")
        sec.payload[inst] = entry
    if not sec.payload:
        sec.warnings.append("rigidity: no instrument has baseline rows")
    sec.tables["rigidity.csv"] = rows_out
    return sec


def _drift_json(sec: Section, d, *scope) -> dict | None:
    if d is None:
        return None
    out = d.to_json()
    out["test_id"] = sec.test(_slug("stability", "drift", *scope), d.p)
    return out


def _fr(f):
    return f.to_json() if f is not None else None


def _stability(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    rep = stability_report(ds, cfg.pcl5_cut)
    sec.warnings.extend(f"stability: {w}" for w in rep.warnings)
    p = sec.payload
    p["pairs"], p["unmatched"] = rep.pairs, rep.unmatched
    p["pooled_binary"] = _fr(rep.pooled_binary)
    p["five_category"] = _fr(rep.five_category)
    p["transitions"] = rep.transitions.to_json() if rep.transitions else None
    p["phq8_binary"] = _fr(rep.phq8_binary)
    p["phq8_drift"] = _drift_json(sec, rep.phq8_drift, "PHQ8", "pooled")
    # PHQ-8 drift is reported once, at the top level
    p["per_instrument"] = [{"instrument": i.instrument, "binary": _fr(i.binary),
                            "drift": _drift_json(sec, i.drift, i.instrument, "pooled") if i.instrument != "PHQ8"
                            else None} for i in rep.per_instrument]
    p["per_model"] = [{"model": m.model, "binary": _fr(m.binary), "five_category": _fr(m.five_category),
                       "drift": _drift_json(sec, m.drift, "PHQ8", m.model)} for m in rep.per_model]
    p["within_run"] = [w.to_json() for w in rep.within_run]

    rows = []

    def add(scope, instrument, model="", condition="", binary=None, five=None, d=None):
        rows.append({"scope": scope, "instrument": instrument, "model": model, "condition": condition,
                     "pairs": (binary or five or {}).get("total_pairs"),
                     "binary_rate": (binary or {}).get("rate"), "binary_crossings": (binary or {}).get("crossings"),
                     "five_category_rate": (five or {}).get("rate"),
                     "five_category_crossings": (five or {}).get("crossings"),
                     "mean_diff": (d or {}).get("mean_diff"), "t": (d or {}).get("t"), "p": (d or {}).get("p"),
                     "mean_abs_dev": (d or {}).get("mean_abs_dev"), "r": (d or {}).get("r")})

    add("pooled", "all", binary=p["pooled_binary"])
    for i in p["per_instrument"]:
        phq = i["instrument"] == "PHQ8"
        add("instrument", i["instrument"], binary=i["binary"], five=p["five_category"] if phq else None,
            d=p["phq8_drift"] if phq else i["drift"])
    for m in p["per_model"]:
        add("model", "PHQ8", m["model"], binary=m["binary"], five=m["five_category"], d=m["drift"])
    for w in p["within_run"]:
        add("within_run", w["instrument"], condition=w["condition"],
            binary={"rate": w["rate"], "crossings": w["crossing_count"], "total_pairs": w["pair_count"]})
    sec.tables["stability.csv"] = rows
    if rep.transitions is not None:
        labels = [s.name.rstrip("_") for s in Severity]
        sec.tables["transitions.csv"] = [{"run1": labels[i], **{labels[j]: int(rep.transitions.counts[i, j])
                                                                for j in range(5)}} for i in range(5)]
    else:
        sec.tables["transitions.csv"] = []
    return sec


def _fracture(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    results, notes = fracture_battery(ds, "PHQ8", cfg.alpha)
    sec.warnings.extend(notes)
    out, rows = [], []
    for r in results:
        dim = r.dimension.label
        kw_id = sec.test(_slug("fracture", r.instrument, dim, "kruskal"), r.kw.p_value)
        entry = {"dimension": dim, "instrument": r.instrument, "level_sizes": r.level_sizes,
                 "kw": {"statistic": r.kw.statistic, "df": r.kw.df[0] if r.kw.df else None,
                        "p": r.kw.p_value, "test_id": kw_id},
                 "contrasts": [], "flags": list(r.flags)}
        rows.append({"dimension": dim, "test": "kruskal-wallis", "group_a": "", "group_b": "",
                     "statistic": r.kw.statistic, "p": r.kw.p_value, "cliffs_delta": None})
        for c in r.contrasts:
            cid = sec.test(_slug("fracture", r.instrument, dim, "dunn", c.group_a, c.group_b), c.p)
            entry["contrasts"].append({"group_a": c.group_a, "group_b": c.group_b, "z": c.z, "p": c.p,
                                       "cliffs_delta": c.cliffs_delta, "test_id": cid})
            rows.append({"dimension": dim, "test": "dunn", "group_a": c.group_a, "group_b": c.group_b,
                         "statistic": c.z, "p": c.p, "cliffs_delta": c.cliffs_delta})
        out.append(entry)
    sec.payload["dimensions"] = out
    sec.tables["fracture.csv"] = rows
    return sec


def _reference_dimension(label: str) -> Dimension | None:
    for dim in MARGINAL_DIMENSIONS:
        try:
            dim.factor.parse(label)
            return dim
        except ValidationError:
            continue
    return None


def _network(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    floors: dict[str, NoiseFloor] = {}

    def floor_for(ref: str) -> NoiseFloor:
        if ref not in floors:
            try:
                sel = selector_for_label(ref)
                if group_items(ds, sel).shape[0] == 0:
                    raise InfeasibleAudit(f"network: reference group {ref!r} has no PHQ8 records")
                floors[ref] = noise_floor(ds, sel, cfg.permutation_iterations, cfg.rng_seed, "PHQ8",
                                          cfg.workers, cfg.network_min_n)
            except NetworkError as exc:
                raise InfeasibleAudit(f"network: {exc}") from None
        return floors[ref]

    if "PHQ8" not in ds.instruments:
        raise InfeasibleAudit("network: no PHQ8 records")
    comparisons = []
    ref = cfg.reference_group
    floor_for(ref)
    dim = _reference_dimension(ref)
    if dim is not None:
        ref_level = dim.factor.parse(ref)
        comparisons += [(level.label, ref) for level in dim.factor if level is not ref_level]
    comparisons += list(cfg.network_references)
    rows = []
    for group, reference in comparisons:
        floor = floor_for(reference)
        try:
            res = divergence(ds, selector_for_label(group), selector_for_label(reference), floor, "PHQ8",
                             cfg.network_min_n)
        except NetworkError as exc:
            sec.warnings.append(f"network {group} vs {reference}: {exc}")
            continue
        row = {"group": group, "reference": reference, **res.to_row()}
        row["test_id"] = sec.test(_slug("network", group, reference), res.p)
        rows.append(row)
    sec.payload["noise_floors"] = [{"reference": k, **f.to_json()} for k, f in floors.items()]
    sec.payload["divergence"] = rows
    sec.tables["network_divergence.csv"] = [{k: v for k, v in r.items() if k != "test_id"} for r in rows]
    sec.files["noise_floor.json"] = {"floors": sec.payload["noise_floors"]}
    return sec


def _logic(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    if "PHQ8" not in ds.instruments:
        sec.warnings.append("logic: no PHQ8 records to audit")
        sec.payload = {"count": 0, "audited": 0, "rate": 0.0, "violations": []}
    else:
        sec.payload = gateway_violations(ds).to_json()
    sec.files["logic_audit.json"] = sec.payload
    return sec


def _bias_rows(sec: Section, rows, kind: str) -> list[dict]:
    out = []
    for r in rows:
        row = r.to_row()
        row["test_id"] = sec.test(_slug("calibration", kind, r.instrument, r.model or "pooled",
                                        r.dimension.label, r.group), r.p)
        out.append(row)
    return out


_SYMPTOM_REFERENCE = {Dimension.GENDER: "Cis Man", Dimension.SES: "High"}


def _calibration(ds: Dataset, baselines, cfg: AuditConfig) -> Section:
    sec = Section()
    p = sec.payload
    bias = []
    for inst in _baseline_instruments(ds, baselines):
        dims = MARGINAL_DIMENSIONS + (Dimension.INTERSECTION,)
        rows = bias_residuals(ds, baselines, inst, dims) + bias_residuals(ds, baselines, inst, dims, by_model=True)
        bias += _bias_rows(sec, rows, "bias")
    p["bias"] = bias
    sec.tables["bias.csv"] = bias

    inter = []
    if cfg.intersection_baseline is None:
        sec.warnings.append("calibration: intersectional audit skipped (no intersection_baseline)")
    elif "PHQ8" in ds.instruments:
        for dims in cfg.intersection_dims:
            for by in (False, True):
                rows = intersectional_bias(ds, cfg.intersection_baseline, dims, "PHQ8", cfg.intersection_min_n, by)
                inter += _bias_rows(sec, rows, "intersectional")
    p["intersectional"] = inter
    sec.tables["intersectional.csv"] = inter

    supp = []
    if cfg.population_baseline is not None and "PHQ8" in ds.instruments:
        try:
            supp = [r.__dict__ for r in suppression_table(ds, baselines, cfg.population_baseline)]
        except ValidationError as exc:
            sec.warnings.append(f"calibration suppression: {exc}")
    p["suppression"] = {"formula": "100 * (model_mean - population_baseline) / (gt_mean - population_baseline)",
                        "rows": supp}

    gt_delta = cfg.paradox_gt_delta
    if gt_delta is None:
        asian, _ = lookup_baseline(baselines, Dimension.RACE, "Asian", "PHQ8")
        white, _ = lookup_baseline(baselines, Dimension.RACE, "White", "PHQ8")
        if asian is not None and white is not None:
            gt_delta = asian.gt_mean - white.gt_mean
    paradox = []
    if gt_delta is None:
        sec.warnings.append("calibration: paradox audit skipped (no expected Asian-White differential)")
    elif "PHQ8" in ds.instruments:
        try:
            paradox = [r.__dict__ for r in paradox_calibration(ds, gt_delta)]
        except ValidationError as exc:
            sec.warnings.append(f"calibration paradox: {exc}")
    p["paradox"] = paradox
    sec.tables["paradox.csv"] = paradox

    symptoms = []
    ref_dim = _reference_dimension(cfg.reference_group)
    for name, (inst, _) in SYMPTOM_ITEMS.items():
        if inst not in ds.instruments:
            continue
        for dim in MARGINAL_DIMENSIONS:
            if dim is ref_dim:
                ref = dim.factor.parse(cfg.reference_group)
            else:
                ref = dim.factor.parse(_SYMPTOM_REFERENCE[dim]) if dim in _SYMPTOM_REFERENCE else next(iter(dim.factor))
            for level in dim.factor:
                if level is ref:
                    continue
                for model in [None] + ds.models:
                    sel_a = GroupSelector.of(**{dim.attr: [level]})
                    sel_b = GroupSelector.of(**{dim.attr: [ref]})
                    try:
                        r = symptom_rates(ds, name, sel_a, sel_b, "TotalScoreStratified", cfg.severity_band, model)
                    except ValidationError as exc:
                        sec.warnings.append(f"symptom {name} {level.label} vs {ref.label}"
                                            f"{' (' + model + ')' if model else ''}: {exc}")
                        continue
                    row = {"model": model or "", **r.to_row()}
                    row["test_id"] = sec.test(_slug("calibration", "symptom", name, model or "pooled",
                                                    dim.label, level.label, ref.label), r.p)
                    symptoms.append(row)
    p["symptom_rates"] = symptoms
    sec.tables["symptom_rates.csv"] = symptoms
    return sec


SECTIONS: dict[str, Callable[[Dataset, list, AuditConfig], Section]] = {
    "rigidity": _rigidity, "stability": _stability, "fracture": _fracture,
    "network": _network, "logic": _logic, "calibration": _calibration,
}


# -- outputs -----------------------------------------------------------------

def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "; ".join(str(x) for x in v)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return str(v)


def _write_csv(path: Path, rows: list[dict]) -> None:
    header: list[str] = []
    for r in rows:
        header += [k for k in r if k not in header and k != "test_id"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_csv_value(_clean(r.get(k))) for k in header])


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _num(v, digits: int = 4) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    return str(v)


def render_markdown(report: dict) -> str:
    """Human-readable summary formatted from the serialized report values."""
    s = report["sections"]
    lines = ["# Audit report", "",
             f"Tool {report['tool']['name']} {report['tool']['version']}; seed {report['seed']}; "
             f"{report['provenance']['records']['record_count']} records "
             f"({report['provenance']['records']['dropped']} dropped).", ""]
    if "rigidity" in s:
        lines += ["## Variance compression", "", "| instrument | model | mean SI | compression % |", "|---|---|---|---|"]
        for inst, block in s["rigidity"].items():
            for m in block["per_model"]:
                lines.append(f"| {inst} | {m['model']} | {_num(m['mean_si'])} | {_num(m['compression_pct'])} |")
        lines.append("")
    if "stability" in s:
        st = s["stability"]
        lines += ["## Stability", "", f"Matched pairs: {st['pairs']} (unmatched records: {st['unmatched']})."]
        if st["five_category"]:
            f = st["five_category"]
            lines.append(f"Five-category crossings: {f['crossings']} of {f['total_pairs']} "
                         f"({_num(100 * f['rate'], 4)}%).")
        if st["pooled_binary"]:
            lines.append(f"Binary flip rate (all instruments): {_num(100 * st['pooled_binary']['rate'])}%.")
        if st["phq8_drift"]:
            d = st["phq8_drift"]
            lines.append(f"PHQ-8 drift: mean difference {_num(d['mean_diff'])}, t = {_num(d['t'])}, "
                         f"r = {_num(d['r'])}, mean |delta| = {_num(d['mean_abs_dev'])}.")
        for w in st["within_run"]:
            lines.append(f"Within-run {w['condition']} {w['instrument']}: {_num(100 * w['rate'])}% "
                         f"of {w['pair_count']} pairs.")
        lines.append("")
    if "fracture" in s:
        lines += ["## Stochastic fracture", "", "| dimension | H | p |", "|---|---|---|"]
        for d in s["fracture"]["dimensions"]:
            lines.append(f"| {d['dimension']} | {_num(d['kw']['statistic'])} | {_num(d['kw']['p'])} |")
        lines.append("")
    if "network" in s:
        lines += ["## Symptom networks", ""]
        for f in s["network"]["noise_floors"]:
            lines.append(f"Noise floor for {f['reference']}: mean {_num(f['mean_distance'])}, "
                         f"ceiling {_num(f['ceiling95'])} over {f['iterations']} splits.")
        lines += ["", "| comparison | d_F | z | p | above ceiling |", "|---|---|---|---|---|"]
        for r in s["network"]["divergence"]:
            lines.append(f"| {r['comparison']} | {_num(r['d_f'])} | {_num(r['z'])} | {_num(r['p'])} | "
                         f"{'yes' if r['exceeds_ceiling'] else 'no'} |")
        lines.append("")
    if "logic" in s:
        lg = s["logic"]
        lines += ["## Gateway logic", "", f"Violations: {lg['count']} of {lg['audited']} "
                                          f"({_num(100 * lg['rate'])}%).", ""]
    if "calibration" in s:
        c = s["calibration"]
        lines += ["## Mean calibration", "", "| group | model | residual | d |", "|---|---|---|---|"]
        for r in c["bias"]:
            if r["residual"] is not None and not r["model"]:
                lines.append(f"| {r['dimension']}: {r['group']} ({r['instrument']}) | pooled | "
                             f"{_num(r['residual'])} | {_num(r['d'])} |")
        for r in c["suppression"]["rows"]:
            lines.append(f"\nSuppression {r['group']} ({r['model']}): {_num(r['captured_pct'])}% captured.")
        for r in c["paradox"]:
            lines.append(f"\nParadox {r['model']}: observed {_num(r['observed_delta'])}, "
                         f"expected {_num(r['gt_delta'])}, error {_num(r['error'])}.")
        lines.append("")
    lines += ["## Multiple comparisons", "", "| family | correction | tests | rejected |", "|---|---|---|---|"]
    for name, fam in report["corrections"].items():
        lines.append(f"| {name} | {fam['correction']} | {len(fam['tests'])} | {fam['rejected']} |")
    if report["warnings"]:
        lines += ["", "## Warnings", ""] + [f"- {w}" for w in report["warnings"]]
    return "\n".join(lines) + "\n"


# -- entry points ----------------------------------------------------------

def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_inputs(config: AuditConfig) -> tuple[Dataset, list[BaselineRow]]:
    if not config.records:
        raise ValidationError("no records file given")
    try:
        ds = load_records(config.records, strict=config.strict)
    except OSError as exc:
        raise ValidationError(f"cannot read records: {exc}") from None
    if len(ds) == 0:
        raise ValidationError(f"records file {config.records} contains no records")
    baselines: list[BaselineRow] = []
    if config.baselines:
        try:
            baselines = load_baselines(config.baselines)
        except OSError as exc:
            raise ValidationError(f"cannot read baselines: {exc}") from None
    elif {"rigidity", "calibration"} & set(config.families):
        raise ValidationError("rigidity and calibration audits need a baselines file")
    return ds, baselines


def build_report(ds: Dataset, baselines: list[BaselineRow], config: AuditConfig,
                 baselines_digest: str | None = None) -> tuple[dict, dict[str, Section]]:
    names = [f for f in SECTIONS if f in config.families]

    def run(name: str) -> Section:
        return SECTIONS[name](ds, baselines, config)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            sections = dict(zip(names, pool.map(run, names)))
    else:
        sections = {n: run(n) for n in names}

    corrections, warnings = {}, []
    for name, sec in sections.items():
        method = "Bonferroni" if name in config.bonferroni_families else "BH"
        fam = HypothesisFamily(name, tuple(t for t, _ in sec.tests), method)
        tests = fam.correct([p for _, p in sec.tests], config.alpha)
        corrections[name] = {"correction": method, "alpha": config.alpha, "tests": tests,
                             "rejected": sum(t["reject"] for t in tests)}
        warnings.extend(sec.warnings)
    prov = ds.provenance
    report = {
        "tool": {"name": "cohortaudit", "version": __version__, "report_format": REPORT_FORMAT,
                 "record_format": RECORD_FORMAT},
        "generated_at": _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat(),
        "seed": config.rng_seed,
        "config": config.echo(),
        "provenance": {"records": {"sha256": prov.digest, "record_count": prov.record_count,
                                   "dropped": prov.dropped},
                       "baselines": {"sha256": baselines_digest, "rows": len(baselines)}},
        "sections": {n: s.payload for n, s in sections.items()},
        "corrections": corrections,
        "warnings": warnings,
    }
    return _clean(report), sections


def run_audit(config: AuditConfig) -> AuditResult:
    """Load inputs, run every enabled audit and write the report files.

    Nothing is written unless every section completes.
    """
    if not config.out:
        raise ValidationError("no output directory given")
    ds, baselines = load_inputs(config)
    digest = _file_digest(config.baselines) if config.baselines else None
    report, sections = build_report(ds, baselines, config, digest)
    text = dumps_report(report)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    written = ["report.json", "report.md"]
    (out / "report.json").write_text(text, encoding="utf-8")
    (out / "report.md").write_text(render_markdown(json.loads(text)), encoding="utf-8")
    for sec in sections.values():
        for fname, rows in sec.tables.items():
            _write_csv(out / fname, rows)
            written.append(fname)
        for fname, obj in sec.files.items():
            (out / fname).write_text(dumps_report(_clean(obj)), encoding="utf-8")
            written.append(fname)
    return AuditResult(report, out, tuple(written))


@dataclass(frozen=True)
class ValidationSummary:
    errors: tuple[str, ...]
    records: int
    baselines: int | None

    @property
    def ok(self) -> bool:
        return not self.errors

    def describe(self) -> str:
        head = f"{len(self.errors)} errors, {self.records} records"
        if self.baselines is not None:
            head += f", {self.baselines} baseline rows"
        return "\n".join([head, *self.errors])


def validate_inputs(config: AuditConfig) -> ValidationSummary:
    """Schema and consistency diagnostics; no audit is run."""
    errors: list[str] = []
    n = 0
    if not config.records:
        errors.append("no records file given")
    else:
        try:
            with open(config.records, encoding="utf-8") as fh:
                records, diags, _ = scan_records(fh, strict=config.strict)
            n = len(records)
            errors += diags
            if not records and not diags:
                errors.append(f"records file {config.records} contains no records")
        except OSError as exc:
            errors.append(f"cannot read records: {exc}")
    nb = None
    if config.baselines:
        try:
            nb = len(load_baselines(config.baselines))
        except (OSError, ValidationError) as exc:
            errors.append(f"baselines: {exc}")
    return ValidationSummary(tuple(errors), n, nb)
