"""Continuous transfer over an evolving target, comparison learners, and
negative-transfer flags."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import LabeledDomainSample, split_labels, stamp_seed, holdout_mask
from .model import Architecture, NumericAbort, TrainConfig, accuracy, init_params, pseudo_label, train

LEARNERS = ("translate", "translate_p", "source_only", "target_only", "target_erm")
BASELINES = ("source_only", "target_only", "target_erm")


@dataclass
class StampRecord:
    stamp: int
    learner: str
    acc: float
    dc_consecutive: float = float("nan")
    dc_from_source: float = float("nan")
    our_bound: float = float("nan")
    baseline_bound: float = float("nan")
    neg_transfer_flag: bool = False

    def __post_init__(self):
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError("accuracy outside [0, 1]")


@dataclass
class TransferTrace:
    records: list = field(default_factory=list)
    stage_params: list = field(default_factory=list)
    histories: list = field(default_factory=list)

    def add(self, record: StampRecord):
        if any(r.stamp == record.stamp and r.learner == record.learner for r in self.records):
            raise ValueError(f"duplicate record for stamp {record.stamp}, {record.learner}")
        self.records.append(record)

    def learner(self, name: str) -> "TransferTrace":
        return TransferTrace([r for r in self.records if r.learner == name])

    @property
    def stamps(self) -> list:
        return sorted({r.stamp for r in self.records})

    def accuracies(self, name: Optional[str] = None) -> np.ndarray:
        recs = self.records if name is None else [r for r in self.records if r.learner == name]
        return np.array([r.acc for r in sorted(recs, key=lambda r: r.stamp)])

    def merge(self, other: "TransferTrace") -> "TransferTrace":
        out = TransferTrace(list(self.records))
        for r in other.records:
            out.add(r)
        return out


@dataclass
class StampData:
    """One domain split into a train part (with labeled flags) and a held-out test part."""

    train: LabeledDomainSample
    test: LabeledDomainSample

    @property
    def stamp(self) -> int:
        return self.train.time_stamp


def _split(d: LabeledDomainSample, n_labeled: int, test_fraction: float, seed: int):
    mask = holdout_mask(d, test_fraction, stamp_seed(seed, 1000 + d.time_stamp))
    train_idx = np.flatnonzero(~mask)
    tr = d.subset(train_idx)
    if d.time_stamp > 0:
        tr = split_labels(tr, min(n_labeled, len(tr)), stamp_seed(seed, 2000 + d.time_stamp))
    else:
        tr = replace(tr, labeled=np.ones(len(tr), dtype=bool), pseudo_y=None)
    return tr, d.subset(np.flatnonzero(mask)), train_idx


def prepare(domains: Sequence[LabeledDomainSample], n_labeled: int = 100, test_fraction: float = 0.2,
            seed: int = 42) -> list[StampData]:
    """Hold out a stratified test split per domain, then flag labeled points.

    The source (stamp 0) stays fully labeled; targets get ``n_labeled`` labels.
    """
    return [StampData(*_split(d, n_labeled, test_fraction, seed)[:2]) for d in domains]


def labeled_view(domains: Sequence[LabeledDomainSample], n_labeled: int = 100, test_fraction: float = 0.2,
                 seed: int = 42) -> list[LabeledDomainSample]:
    """Whole domains whose ``labeled`` flags match :func:`prepare`; held-out points are unlabeled."""
    out = []
    for d in domains:
        tr, _, train_idx = _split(d, n_labeled, test_fraction, seed)
        flags = np.zeros(len(d), dtype=bool)
        flags[train_idx] = tr.labeled
        out.append(replace(d, labeled=flags, pseudo_y=None))
    return out


def _stage_config(config: TrainConfig, stamp: int) -> TrainConfig:
    return replace(config, seed=stamp_seed(config.seed, stamp))


def _fit(params, config, src, tgt, stamp, learner):
    try:
        return train(params, config, src, tgt)
    except NumericAbort as exc:
        raise NumericAbort(f"{learner} at stamp {stamp}: {exc}") from exc


def _classifier_config(config: TrainConfig, stamp: int) -> TrainConfig:
    return replace(_stage_config(config, stamp), use_domain=False, use_elbo=False)


def run_translate(source: StampData, targets: Sequence[StampData], config: TrainConfig = TrainConfig(),
                  arch: Architecture = Architecture(), warm_start: bool = True) -> TransferTrace:
    """Sequential transfer: ``J(S, T1)``, then ``J(T_i, T_{i+1})`` on pseudo-labeled ``T_i``.

    One training stage per target stamp; stage ``i`` starts from the
    parameters stage ``i - 1`` ended with unless ``warm_start`` is off.
    """
    if not targets:
        raise ValueError("need at least one target stamp")
    trace = TransferTrace()
    params = init_params(config.seed, arch)
    prev = source.train
    for stage, tgt in enumerate(targets):
        if stage > 0:
            prev = pseudo_label(params, targets[stage - 1].train)
            if not warm_start:
                params = init_params(config.seed, arch)
        params, hist = _fit(params, _stage_config(config, tgt.stamp), prev, tgt.train, tgt.stamp, "translate")
        trace.stage_params.append(params)
        trace.histories.append(hist)
        trace.add(StampRecord(tgt.stamp, "translate", accuracy(params, tgt.test)))
    return trace


def run_translate_p(source: StampData, targets: Sequence[StampData], config: TrainConfig = TrainConfig(),
                    arch: Architecture = Architecture()) -> TransferTrace:
    """One-shot transfer ``J(S, T_t)`` from fresh parameters at every stamp."""
    if not targets:
        raise ValueError("need at least one target stamp")
    trace = TransferTrace()
    for tgt in targets:
        params, hist = _fit(init_params(config.seed, arch), _stage_config(config, tgt.stamp), source.train, tgt.train,
                            tgt.stamp, "translate_p")
        trace.stage_params.append(params)
        trace.histories.append(hist)
        trace.add(StampRecord(tgt.stamp, "translate_p", accuracy(params, tgt.test)))
    return trace


def run_baseline(kind: str, source: Optional[StampData], targets: Sequence[StampData],
                 config: TrainConfig = TrainConfig(), arch: Architecture = Architecture()) -> TransferTrace:
    """Classifier-only learners sharing the pre-encoder + classifier architecture.

    ``source_only`` fits the source once; ``target_only`` fits each stamp with
    every training label revealed; ``target_erm`` fits each stamp's labeled
    subset alone.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    trace = TransferTrace()
    if kind == "source_only":
        if source is None:
            raise ValueError("source_only needs a source")
        params, hist = _fit(init_params(config.seed, arch), _classifier_config(config, 0), None, source.train, 0, kind)
        for tgt in targets:
            trace.stage_params.append(params)
            trace.histories.append(hist)
            trace.add(StampRecord(tgt.stamp, kind, accuracy(params, tgt.test)))
        return trace
    for tgt in targets:
        data = tgt.train
        if kind == "target_only":
            data = replace(data, labeled=np.ones(len(data), dtype=bool), pseudo_y=None)
        else:
            data = data.subset(np.flatnonzero(data.labeled))
        params, hist = _fit(init_params(config.seed, arch), _classifier_config(config, tgt.stamp), None, data,
                            tgt.stamp, kind)
        trace.stage_params.append(params)
        trace.histories.append(hist)
        trace.add(StampRecord(tgt.stamp, kind, accuracy(params, tgt.test)))
    return trace


def run_learner(name: str, source: StampData, targets: Sequence[StampData], config: TrainConfig = TrainConfig(),
                arch: Architecture = Architecture()) -> TransferTrace:
    if name == "translate":
        return run_translate(source, targets, config, arch)
    if name == "translate_p":
        return run_translate_p(source, targets, config, arch)
    return run_baseline(name, source, targets, config, arch)


def detect_negative_transfer(trace: TransferTrace, reference: TransferTrace,
                             divergences: Optional[dict] = None) -> list[dict]:
    """Flag stamp ``t`` when the learner's error exceeds the reference learner's error.

    ``divergences`` maps stamp to ``d_C(S, T_t)`` and is echoed in the output.
    """
    mine = {r.stamp: r for r in trace.records}
    ref = {r.stamp: r for r in reference.records}
    if set(mine) != set(ref) or len(mine) != len(trace.records) or len(ref) != len(reference.records):
        raise ValueError("traces must cover the same stamps, one record each")
    out = []
    for stamp in sorted(mine):
        err, err_ref = 1.0 - mine[stamp].acc, 1.0 - ref[stamp].acc
        out.append({
            "stamp": stamp,
            "flag": bool(err > err_ref),
            "signature": err - err_ref,
            "dc_from_source": float("nan") if divergences is None else divergences.get(stamp, float("nan")),
        })
    return out
