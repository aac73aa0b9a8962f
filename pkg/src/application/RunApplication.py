from eventsourcing.application import Application

from uuid import UUID

from src.domain.RunAggregate import RunAggregate


class RunApplication(Application):

    # Register a run.
    def start_run(self, name, config_hash, trainer, backend, seed, sweep=None):
        assert isinstance(name, str)
        assert isinstance(config_hash, str)
        assert isinstance(seed, int)

        run = RunAggregate(name=name, config_hash=config_hash, trainer=trainer, backend=backend,
                           seed=seed, sweep=sweep)
        self.save(run)

        return run.id

    # Append history rows in order.
    def record_history(self, run_id, rows):
        assert isinstance(run_id, UUID)

        run = self.repository.get(run_id)
        for row in rows:
            run.record_epoch(row.epoch, row.split, row.loss, row.accuracy)

        self.save(run)

    def mark_diverged(self, run_id, divergence):
        assert isinstance(run_id, UUID)

        run = self.repository.get(run_id)
        run.mark_diverged(divergence.epoch, divergence.batch, divergence.loss, divergence.reason)

        self.save(run)

    def complete_run(self, run_id, summary):
        assert isinstance(run_id, UUID)
        assert isinstance(summary, dict)

        run = self.repository.get(run_id)
        run.complete(summary)

        self.save(run)

    # Get the run.
    def get_run(self, run_id):
        assert isinstance(run_id, UUID)

        return self.repository.get(run_id)
