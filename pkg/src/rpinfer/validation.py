"""Validation metrics: coverage, false-positive/negative rates, precision, accuracy.

Remote is the positive class. Inferences without a validation label are left
out of every ratio, and a ratio with an empty denominator is reported as
``None`` rather than zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping

from .inference import InferenceResult, Step, Verdict

LOCAL, REMOTE = "Local", "Remote"


def _norm(v: Any) -> str:
    return getattr(v, "value", v)


@dataclass(frozen=True)
class LabeledSets:
    vd_remote: frozenset
    vd_local: frozenset
    inf_remote: frozenset = frozenset()
    inf_local: frozenset = frozenset()

    def __post_init__(self) -> None:
        overlap = self.vd_remote & self.vd_local
        if overlap:
            raise ValueError(f"validation sets overlap on {len(overlap)} keys, e.g. {next(iter(overlap))!r}")
        if self.inf_remote & self.inf_local:
            raise ValueError("an item is inferred both Local and Remote")

    @classmethod
    def build(cls, inferred: Mapping[Hashable, Any], labels: Mapping[Hashable, Any]) -> "LabeledSets":
        return cls(
            vd_remote=frozenset(k for k, v in labels.items() if _norm(v) == REMOTE),
            vd_local=frozenset(k for k, v in labels.items() if _norm(v) == LOCAL),
            inf_remote=frozenset(k for k, v in inferred.items() if _norm(v) == REMOTE),
            inf_local=frozenset(k for k, v in inferred.items() if _norm(v) == LOCAL),
        )


@dataclass(frozen=True)
class Ratio:
    num: int
    den: int

    @property
    def value(self) -> float | None:
        return self.num / self.den if self.den else None


@dataclass(frozen=True)
class MetricsReport:
    cov: Ratio
    fpr: Ratio
    fnr: Ratio
    pre: Ratio
    acc: Ratio
    counts: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in ("cov", "fpr", "fnr", "pre", "acc"):
            r: Ratio = getattr(self, name)
            out[name] = r.value
            out[f"{name}_num"] = r.num
            out[f"{name}_den"] = r.den
        out["counts"] = dict(self.counts)
        return out


def metrics_from_sets(s: LabeledSets) -> MetricsReport:
    vd = s.vd_remote | s.vd_local
    inf = s.inf_remote | s.inf_local
    tp = len(s.inf_remote & s.vd_remote)
    tn = len(s.inf_local & s.vd_local)
    fp = len(s.inf_remote & s.vd_local)
    fn = len(s.inf_local & s.vd_remote)
    covered = len(inf & vd)
    return MetricsReport(
        cov=Ratio(covered, len(vd)),
        fpr=Ratio(fp, len(inf & s.vd_local)),
        fnr=Ratio(fn, len(inf & s.vd_remote)),
        pre=Ratio(tp, len(s.inf_remote & vd)),
        acc=Ratio(tp + tn, covered),
        counts={"tp": tp, "tn": tn, "fp": fp, "fn": fn, "vd": len(vd), "inf": len(inf), "inf_unlabeled": len(inf - vd)},
    )


def compute_metrics(inferred: Mapping[Hashable, Any], labels: Mapping[Hashable, Any] | LabeledSets) -> MetricsReport:
    """Metrics of ``inferred`` (key -> Local/Remote/Unknown) against labels.

    ``labels`` is either a key -> Local/Remote mapping or a ready
    :class:`LabeledSets` whose validation halves are used. Unknown verdicts
    count as no inference.
    """
    if isinstance(labels, LabeledSets):
        sets = LabeledSets.build(inferred, {})
        sets = LabeledSets(labels.vd_remote, labels.vd_local, sets.inf_remote, sets.inf_local)
    else:
        sets = LabeledSets.build(inferred, labels)
    return metrics_from_sets(sets)


STEP_ROWS = (Step.PORT_CAPACITY, Step.RTT_COLO, Step.MULTI_IXP, Step.PRIVATE_VOTING)


def per_step_metrics(
    results: Iterable[InferenceResult], labels: Mapping[Hashable, Any]
) -> dict[str, MetricsReport]:
    """One row per step (restricted to the verdicts that step produced) plus
    a ``Combined`` row over every attributed verdict."""
    results = list(results)
    rows: dict[str, MetricsReport] = {}
    for s in STEP_ROWS:
        inferred = {r.key: r.verdict for r in results if r.step is s}
        rows[s.value] = compute_metrics(inferred, labels)
    rows["Combined"] = compute_metrics({r.key: r.verdict for r in results if r.step is not Step.NONE}, labels)
    return rows


def rollup_members(verdicts: Mapping[tuple[str, str], Any], asn_of: Mapping[str, int]) -> dict[tuple[int, str], str]:
    """Interface verdicts -> (asn, ixp) verdicts; a member is remote at an IXP
    if any of its interfaces there is remote."""
    out: dict[tuple[int, str], str] = {}
    for (ip, ixp), v in verdicts.items():
        v = _norm(v)
        if v not in (LOCAL, REMOTE):
            continue
        key = (asn_of[ip], ixp)
        if out.get(key) != REMOTE:
            out[key] = v
    return out


def expand_labels(
    labels: Iterable[Mapping[str, Any]], interfaces: Iterable[tuple[str, int, str]]
) -> dict[tuple[str, str], str]:
    """Turn label records (keyed by ip, or by asn for a whole member) into
    interface-level labels. ``interfaces`` yields (ip, asn, ixp_id)."""
    by_member: dict[tuple[int, str], list[str]] = {}
    for ip, asn, ixp in interfaces:
        by_member.setdefault((asn, ixp), []).append(ip)
    out: dict[tuple[str, str], str] = {}
    conflicts: set[tuple[str, str]] = set()

    def put(key: tuple[str, str], label: str) -> None:
        if key in out and out[key] != label:
            conflicts.add(key)
        out[key] = label

    for rec in labels:
        label = _norm(rec["label"])
        if label not in (LOCAL, REMOTE):
            raise ValueError(f"bad label {label!r}")
        ixp = str(rec["ixp_id"])
        if rec.get("ip") is not None:
            put((rec["ip"], ixp), label)
        elif rec.get("asn") is not None:
            for ip in by_member.get((int(rec["asn"]), ixp), ()):
                put((ip, ixp), label)
    if conflicts:
        raise ValueError(f"labels mark {len(conflicts)} interfaces both Local and Remote")
    return out


def verdict_map(results: Iterable[InferenceResult]) -> dict[tuple[str, str], Verdict]:
    return {r.key: r.verdict for r in results}
