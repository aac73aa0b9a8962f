from eventsourcing.domain import Aggregate, AggregateEvent, AggregateCreated

from typing import Dict, List
from uuid import uuid5, NAMESPACE_URL, UUID


class SweepIndexAggregate(Aggregate):

    def __init__(self):
        self.runs: List[UUID] = []
        self.summaries: Dict[str, dict] = {}

    @classmethod
    def create_id(cls, sweep):
        return uuid5(NAMESPACE_URL, f'/sweeps/{sweep}')

    @classmethod
    def get(cls, sweep):
        index_id = cls.create_id(sweep)
        return cls._create(cls.Created, id=index_id)

    def add_run_to_index(self, run_id, summary):
        if run_id not in self.runs:
            self.trigger_event(self.RunAddedEvent, run_id=run_id, summary=summary)

    class Created(AggregateCreated):
        pass

    class RunAddedEvent(AggregateEvent):
        run_id: UUID
        summary: dict

        def apply(self, index):
            assert isinstance(index, SweepIndexAggregate)

            index.runs.append(self.run_id)
            index.summaries[str(self.run_id)] = self.summary
