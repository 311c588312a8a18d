"""Fairness and performance metrics for one classifier run.

Counterfactual token fairness here is a within-template disagreement rate:
for each template, all unordered pairs of its instantiated sentences are
compared and the mean absolute difference of the binarized predictions is
taken; template means are then averaged per gold class. The identical-pair
count formula k * (m - k) over C(m, 2) keeps the hard-label path exact, and
an optional probability mode enumerates pairs over toxic-probability mass.

Group fairness follows the usual definitions: demographic parity difference
is the max-min spread of per-group predicted-toxic rates, equalized odds
difference is the larger of the TPR and FPR spreads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .corpus import LABELS
from .errors import CompletenessError, ValidationError
from .evalset import EvalSentence
from .lexicon import CATEGORIES
from .predictions import Prediction, binarize

PAIR_SCOPES = ("all", "within_category")

_G_VALUE = {"nontoxic": 0.0, "toxic": 1.0}


def _index_predictions(
    predictions: Sequence[Prediction] | Mapping[str, Prediction],
) -> Mapping[str, Prediction]:
    if isinstance(predictions, Mapping):
        return predictions
    index: dict[str, Prediction] = {}
    for p in predictions:
        if p.id in index:
            raise ValidationError(f"duplicate prediction id {p.id!r}")
        index[p.id] = p
    return index


def _g_values(
    sentences: Sequence[EvalSentence],
    predictions: Mapping[str, Prediction],
    use_probs: bool,
) -> dict[str, float]:
    missing = [s.key for s in sentences if s.key not in predictions]
    if missing:
        raise CompletenessError(
            f"missing predictions for {len(missing)} sentence(s):"
            f" {', '.join(repr(k) for k in missing[:10])}"
            + (", ..." if len(missing) > 10 else ""),
            missing=missing,
        )
    if use_probs:
        return {s.key: predictions[s.key].toxic_probability() for s in sentences}
    return {s.key: _G_VALUE[predictions[s.key].binary] for s in sentences}


def _pair_stats(gs: Sequence[float], use_probs: bool) -> tuple[float, int]:
    """(sum of |gi - gj| over unordered pairs, number of pairs)."""
    m = len(gs)
    n_pairs = m * (m - 1) // 2
    if n_pairs == 0:
        return 0.0, 0
    if use_probs:
        total = 0.0
        for i in range(m):
            for j in range(i + 1, m):
                total += abs(gs[i] - gs[j])
        return total, n_pairs
    k = sum(1 for g in gs if g == 1.0)
    return float(k * (m - k)), n_pairs


@dataclass
class CtfResult:
    """Per-class CTF plus the per-template means behind it."""

    toxic: float | None
    nontoxic: float | None
    average: float | None
    pair_scope: str
    per_template: dict[str, float]
    skipped: list[str] = field(default_factory=list)


def ctf(
    sentences: Sequence[EvalSentence],
    predictions: Sequence[Prediction] | Mapping[str, Prediction],
    pair_scope: str = "all",
    use_probs: bool = False,
) -> CtfResult:
    """Counterfactual token fairness over a template evalset.

    ``pair_scope="all"`` compares every unordered same-template pair;
    ``"within_category"`` keeps only pairs whose terms share a category.
    Templates with fewer than two sentences in scope contribute nothing and
    are listed in ``skipped``.
    """
    if pair_scope not in PAIR_SCOPES:
        raise ValueError(f"unknown pair_scope {pair_scope!r}")
    preds = _index_predictions(predictions)
    g_of = _g_values(sentences, preds, use_probs)

    by_template: dict[str, list[EvalSentence]] = {}
    template_gold: dict[str, str] = {}
    for s in sentences:
        by_template.setdefault(s.template_id, []).append(s)
        if template_gold.setdefault(s.template_id, s.gold) != s.gold:
            raise ValidationError(f"template {s.template_id!r} mixes gold labels")

    per_template: dict[str, float] = {}
    skipped: list[str] = []
    for template_id, group in by_template.items():
        if pair_scope == "all":
            subgroups = [group]
        else:
            by_category: dict[str, list[EvalSentence]] = {}
            for s in group:
                by_category.setdefault(s.sgt.category, []).append(s)
            subgroups = list(by_category.values())
        total = 0.0
        n_pairs = 0
        for subgroup in subgroups:
            t, n = _pair_stats([g_of[s.key] for s in subgroup], use_probs)
            total += t
            n_pairs += n
        if n_pairs == 0:
            skipped.append(template_id)
            continue
        per_template[template_id] = total / n_pairs

    def class_mean(gold: str) -> float | None:
        values = [v for tid, v in per_template.items() if template_gold[tid] == gold]
        return sum(values) / len(values) if values else None

    toxic = class_mean("toxic")
    nontoxic = class_mean("nontoxic")
    average = (toxic + nontoxic) / 2 if toxic is not None and nontoxic is not None else None
    return CtfResult(
        toxic=toxic,
        nontoxic=nontoxic,
        average=average,
        pair_scope=pair_scope,
        per_template=per_template,
        skipped=skipped,
    )


def ctf_by_category(
    sentences: Sequence[EvalSentence],
    predictions: Sequence[Prediction] | Mapping[str, Prediction],
    use_probs: bool = False,
) -> dict[str, dict[str, float | None]]:
    """CTF per identity category: only same-category pairs are compared."""
    preds = _index_predictions(predictions)
    present = [c for c in CATEGORIES if any(s.sgt.category == c for s in sentences)]
    out: dict[str, dict[str, float | None]] = {}
    for category in present:
        subset = [s for s in sentences if s.sgt.category == category]
        result = ctf(subset, preds, pair_scope="all", use_probs=use_probs)
        out[category] = {"toxic": result.toxic, "nontoxic": result.nontoxic}
    return out


@dataclass
class DpdResult:
    value: float
    rates: dict[str, float]
    excluded: list[str] = field(default_factory=list)


def dpd(
    predictions: Sequence[Prediction],
    group_of: Mapping[str, str] | Callable[[str], str],
    expected_groups: Sequence[str] | None = None,
) -> DpdResult:
    """Demographic parity difference: spread of per-group toxic rates.

    ``group_of`` assigns each prediction id to exactly one group. Expected
    groups with zero sentences are excluded from the spread and reported.
    """
    getter = group_of.__getitem__ if isinstance(group_of, Mapping) else group_of
    toxic_counts: dict[str, int] = {}
    totals: dict[str, int] = {}
    for p in predictions:
        try:
            group = getter(p.id)
        except KeyError:
            raise ValidationError(f"no group assigned to prediction {p.id!r}") from None
        totals[group] = totals.get(group, 0) + 1
        if p.binary == "toxic":
            toxic_counts[group] = toxic_counts.get(group, 0) + 1
    if not totals:
        raise ValidationError("demographic parity difference needs at least one group")
    rates = {g: toxic_counts.get(g, 0) / n for g, n in totals.items()}
    excluded = [g for g in (expected_groups or ()) if g not in totals]
    return DpdResult(value=max(rates.values()) - min(rates.values()), rates=rates, excluded=excluded)


@dataclass
class EodResult:
    value: float
    tpr: dict[str, float]
    fpr: dict[str, float]
    tpr_excluded: list[str] = field(default_factory=list)
    fpr_excluded: list[str] = field(default_factory=list)


def eod(
    predictions: Sequence[Prediction],
    gold: Mapping[str, str],
    group_of: Mapping[str, str] | Callable[[str], str],
) -> EodResult:
    """Equalized odds difference: max of the TPR spread and the FPR spread.

    Toxic is the positive class. A group lacking positives (or negatives)
    drops out of the TPR (or FPR) spread and is reported; a spread needs at
    least two groups to be defined, and if neither spread is defined the
    metric is undefined and raises.
    """
    getter = group_of.__getitem__ if isinstance(group_of, Mapping) else group_of
    confusion: dict[str, dict[str, int]] = {}
    for p in predictions:
        try:
            group = getter(p.id)
        except KeyError:
            raise ValidationError(f"no group assigned to prediction {p.id!r}") from None
        if p.id not in gold:
            raise CompletenessError(f"no gold label for prediction {p.id!r}", missing=[p.id])
        cell = confusion.setdefault(group, {"tp": 0, "fp": 0, "fn": 0, "tn": 0})
        predicted_toxic = p.binary == "toxic"
        actually_toxic = gold[p.id] == "toxic"
        if predicted_toxic and actually_toxic:
            cell["tp"] += 1
        elif predicted_toxic:
            cell["fp"] += 1
        elif actually_toxic:
            cell["fn"] += 1
        else:
            cell["tn"] += 1

    tpr: dict[str, float] = {}
    fpr: dict[str, float] = {}
    tpr_excluded: list[str] = []
    fpr_excluded: list[str] = []
    for group, cell in confusion.items():
        positives = cell["tp"] + cell["fn"]
        negatives = cell["fp"] + cell["tn"]
        if positives > 0:
            tpr[group] = cell["tp"] / positives
        else:
            tpr_excluded.append(group)
        if negatives > 0:
            fpr[group] = cell["fp"] / negatives
        else:
            fpr_excluded.append(group)

    spreads = []
    if len(tpr) >= 2:
        spreads.append(max(tpr.values()) - min(tpr.values()))
    if len(fpr) >= 2:
        spreads.append(max(fpr.values()) - min(fpr.values()))
    if not spreads:
        raise ValidationError(
            "equalized odds difference is undefined: fewer than 2 groups with a defined rate"
        )
    return EodResult(
        value=max(spreads),
        tpr=tpr,
        fpr=fpr,
        tpr_excluded=tpr_excluded,
        fpr_excluded=fpr_excluded,
    )


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, ClassMetrics]


def classification_report(
    predictions: Sequence[Prediction], gold: Mapping[str, str]
) -> ClassificationReport:
    """Accuracy plus one-vs-rest precision/recall/F1 per class and macro.

    Macro averages run over classes present in gold (unweighted). Zero
    denominators follow the usual conventions: precision and recall are 0
    when undefined, F1 is 0 when precision + recall is 0.
    """
    pred_ids = [p.id for p in predictions]
    missing = [i for i in gold if i not in set(pred_ids)]
    extra = [i for i in pred_ids if i not in gold]
    if missing or extra:
        raise CompletenessError(
            f"prediction/gold id mismatch: {len(missing)} missing, {len(extra)} extra",
            missing=missing,
            extra=extra,
        )
    for label in gold.values():
        if label not in LABELS:
            raise ValidationError(f"unknown gold label {label!r}")

    total = len(predictions)
    if total == 0:
        raise ValidationError("cannot compute a classification report over zero items")
    correct = sum(1 for p in predictions if p.label4 == gold[p.id])

    classes = [c for c in LABELS if any(g == c for g in gold.values())]
    per_class: dict[str, ClassMetrics] = {}
    for cls in classes:
        tp = sum(1 for p in predictions if p.label4 == cls and gold[p.id] == cls)
        fp = sum(1 for p in predictions if p.label4 == cls and gold[p.id] != cls)
        fn = sum(1 for p in predictions if p.label4 != cls and gold[p.id] == cls)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[cls] = ClassMetrics(
            precision=precision, recall=recall, f1=f1, support=tp + fn
        )

    n = len(classes)
    return ClassificationReport(
        accuracy=correct / total,
        macro_precision=sum(m.precision for m in per_class.values()) / n,
        macro_recall=sum(m.recall for m in per_class.values()) / n,
        macro_f1=sum(m.f1 for m in per_class.values()) / n,
        per_class=per_class,
    )


@dataclass
class FairnessReport:
    """Everything one audit run produces, ready for JSON or table rendering."""

    ctf: CtfResult
    ctf_by_category: dict[str, dict[str, float | None]]
    dpd: DpdResult
    eod: EodResult
    classification: ClassificationReport | None
    meta: dict

    def to_dict(self) -> dict:
        report: dict = {
            "ctf": {
                "toxic": self.ctf.toxic,
                "nontoxic": self.ctf.nontoxic,
                "average": self.ctf.average,
                "pair_scope": self.ctf.pair_scope,
                "skipped_templates": self.ctf.skipped,
            },
            "ctf_by_category": self.ctf_by_category,
            "dpd": {
                "value": self.dpd.value,
                "rates": self.dpd.rates,
                "excluded_groups": self.dpd.excluded,
            },
            "eod": {
                "value": self.eod.value,
                "tpr": self.eod.tpr,
                "fpr": self.eod.fpr,
                "tpr_excluded": self.eod.tpr_excluded,
                "fpr_excluded": self.eod.fpr_excluded,
            },
            "meta": self.meta,
        }
        if self.classification is not None:
            report["classification"] = {
                "accuracy": self.classification.accuracy,
                "macro": {
                    "precision": self.classification.macro_precision,
                    "recall": self.classification.macro_recall,
                    "f1": self.classification.macro_f1,
                },
                "per_class": {
                    cls: {
                        "precision": m.precision,
                        "recall": m.recall,
                        "f1": m.f1,
                        "support": m.support,
                    }
                    for cls, m in self.classification.per_class.items()
                },
            }
        return report


def build_fairness_report(
    sentences: Sequence[EvalSentence],
    predictions: Sequence[Prediction] | Mapping[str, Prediction],
    *,
    corpus_predictions: Sequence[Prediction] | None = None,
    corpus_gold: Mapping[str, str] | None = None,
    pair_scope: str = "all",
    use_probs: bool = False,
    meta: dict | None = None,
) -> FairnessReport:
    """Run the full audit over an evalset plus optional 4-class test data.

    DPD/EOD always use hard binarized labels (groups are the sentences' SGT
    categories, gold is the template toxicity); ``use_probs`` only switches
    the CTF comparison to toxic-probability mass.
    """
    preds = _index_predictions(predictions)
    matched = [preds[s.key] for s in sentences if s.key in preds]
    group_of = {s.key: s.sgt.category for s in sentences}
    gold_of = {s.key: s.gold for s in sentences}

    ctf_result = ctf(sentences, preds, pair_scope=pair_scope, use_probs=use_probs)
    by_category = ctf_by_category(sentences, preds, use_probs=use_probs)
    dpd_result = dpd(matched, group_of, expected_groups=CATEGORIES)
    eod_result = eod(matched, gold_of, group_of)

    classification = None
    if corpus_predictions is not None or corpus_gold is not None:
        if corpus_predictions is None or corpus_gold is None:
            raise ValueError("classification needs both corpus predictions and gold labels")
        classification = classification_report(corpus_predictions, corpus_gold)

    report_meta = {
        "group_fairness_dataset": "evalset",
        "ctf_mode": "toxic_probability" if use_probs else "hard_labels",
        **(meta or {}),
    }
    return FairnessReport(
        ctf=ctf_result,
        ctf_by_category=by_category,
        dpd=dpd_result,
        eod=eod_result,
        classification=classification,
        meta=report_meta,
    )


def _fmt(value: float | None) -> str:
    return "   n/a" if value is None else f"{value:6.4f}"


def render_table(report: dict) -> str:
    """Aligned-column text rendering of a report dict (JSON-compatible)."""
    lines: list[str] = []
    ctf_block = report["ctf"]
    lines.append("Counterfactual token fairness (pair disagreement rate)")
    lines.append(f"  {'class':<10} {'value':>8}")
    for cls in ("toxic", "nontoxic", "average"):
        lines.append(f"  {cls:<10} {_fmt(ctf_block[cls]):>8}")
    if ctf_block.get("skipped_templates"):
        lines.append(f"  skipped templates: {', '.join(ctf_block['skipped_templates'])}")
    lines.append("")
    lines.append("CTF per identity category")
    lines.append(f"  {'category':<12} {'toxic':>8} {'nontoxic':>9}")
    for category, values in report["ctf_by_category"].items():
        lines.append(
            f"  {category:<12} {_fmt(values['toxic']):>8} {_fmt(values['nontoxic']):>9}"
        )
    lines.append("")
    lines.append("Group fairness")
    lines.append(f"  {'DPD':<4} {_fmt(report['dpd']['value'])}")
    lines.append(f"  {'EOD':<4} {_fmt(report['eod']['value'])}")
    lines.append(f"  {'group':<12} {'toxic rate':>10}")
    for group, rate in report["dpd"]["rates"].items():
        lines.append(f"  {group:<12} {_fmt(rate):>10}")
    if "classification" in report:
        cls_block = report["classification"]
        lines.append("")
        lines.append("Classification (4-class)")
        lines.append(f"  accuracy {_fmt(cls_block['accuracy'])}")
        lines.append(
            f"  {'class':<14} {'precision':>9} {'recall':>8} {'f1':>8} {'support':>8}"
        )
        for cls, m in cls_block["per_class"].items():
            lines.append(
                f"  {cls:<14} {_fmt(m['precision']):>9} {_fmt(m['recall']):>8}"
                f" {_fmt(m['f1']):>8} {m['support']:>8}"
            )
        macro = cls_block["macro"]
        lines.append(
            f"  {'macro':<14} {_fmt(macro['precision']):>9} {_fmt(macro['recall']):>8}"
            f" {_fmt(macro['f1']):>8} {'':>8}"
        )
    return "\n".join(lines) + "\n"


def per_template_rows(report: FairnessReport) -> list[dict]:
    """Per-template CTF contributions, for CSV export."""
    return [
        {"template_id": tid, "ctf": value}
        for tid, value in report.ctf.per_template.items()
    ]
