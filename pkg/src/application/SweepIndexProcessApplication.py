from eventsourcing.application import AggregateNotFound
from eventsourcing.system import ProcessApplication
from eventsourcing.dispatch import singledispatchmethod

from src.domain.RunAggregate import RunAggregate
from src.domain.SweepIndexAggregate import SweepIndexAggregate


class SweepIndexProcessApplication(ProcessApplication):
    @singledispatchmethod
    def policy(self, domain_event, processing_event):
        pass

    @policy.register(RunAggregate.Completed)
    def _add_run_to_index(self, domain_event, processing_event):
        assert isinstance(domain_event, RunAggregate.Completed)

        if domain_event.sweep is None:
            return

        index_id = SweepIndexAggregate.create_id(domain_event.sweep)
        try:
            index = self.repository.get(index_id)
        except AggregateNotFound:
            index = SweepIndexAggregate.get(domain_event.sweep)

        index.add_run_to_index(domain_event.originator_id, domain_event.summary)
        processing_event.collect_events(index)

    def get_run_ids(self, sweep):
        index_id = SweepIndexAggregate.create_id(sweep)
        try:
            index = self.repository.get(index_id)
            return list(index.runs)
        except AggregateNotFound:
            return []

    def get_summaries(self, sweep):
        index_id = SweepIndexAggregate.create_id(sweep)
        try:
            index = self.repository.get(index_id)
            return dict(index.summaries)
        except AggregateNotFound:
            return {}
