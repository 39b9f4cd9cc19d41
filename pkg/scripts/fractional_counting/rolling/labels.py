"""
Partition of the labelled records of an epoch.

S_t holds coverage-survey records (known inclusion probabilities), B_t
records whose labels registers updated during the epoch, and A_t records
that only carry a stale label from an earlier epoch. D_t = S_t ∪ B_t are the
fresh observations the rolling updaters learn from.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List

from ..simulation.base import PersonRecord, PopulationDataset, RecordLabel, UpdateBatch


@dataclass
class LabelledSet:
    """Disjoint survey, register-update and carried label sets of one epoch."""
    epoch: int
    survey: Dict[int, RecordLabel] = field(default_factory=dict)
    register: Dict[int, RecordLabel] = field(default_factory=dict)
    carried: Dict[int, RecordLabel] = field(default_factory=dict)
    inclusion_probabilities: Dict[int, float] = field(default_factory=dict)

    @property
    def updated(self) -> Dict[int, RecordLabel]:
        """Fresh labels D_t."""
        return {**self.register, **self.survey}

    def sizes(self) -> Dict[str, int]:
        return {"S": len(self.survey), "B": len(self.register), "A": len(self.carried)}

    def apply(self, pd: PopulationDataset) -> PopulationDataset:
        """PD with the fresh labels attached; carried labels stay as they are."""
        fresh = self.updated
        records = [replace(r, label=fresh[r.id]) if r.id in fresh else r for r in pd]
        return PopulationDataset(records=records, epoch=pd.epoch, placement_beta=pd.placement_beta)

    def updated_records(self, pd: PopulationDataset) -> List[PersonRecord]:
        """The records of D_t carrying their fresh labels, in PD order."""
        fresh = self.updated
        return [replace(r, label=fresh[r.id]) for r in pd if r.id in fresh]

    def survey_records(self, pd: PopulationDataset) -> List[PersonRecord]:
        return [replace(r, label=self.survey[r.id]) for r in pd if r.id in self.survey]


def partition_labels(pd: PopulationDataset, batch: UpdateBatch) -> LabelledSet:
    """
    Split the labels of an epoch into S_t, B_t and A_t.

    A record both surveyed and refreshed by registers belongs to S_t only.
    Labels for records no longer in the PD are dropped.
    """
    present = {r.id for r in pd}
    survey = {rid: label for rid, label in batch.survey.items() if rid in present}
    register = {rid: label for rid, label in batch.refreshed.items() if rid in present and rid not in survey}
    carried = {
        r.id: r.label for r in pd
        if r.label is not None and r.id not in survey and r.id not in register
    }
    probabilities = {rid: batch.inclusion_probabilities[rid] for rid in survey
                     if rid in batch.inclusion_probabilities}
    return LabelledSet(
        epoch=batch.epoch,
        survey=survey,
        register=register,
        carried=carried,
        inclusion_probabilities=probabilities,
    )
