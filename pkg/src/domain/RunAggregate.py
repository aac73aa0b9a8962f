from eventsourcing.domain import Aggregate, event


class RunAggregate(Aggregate):

    # Start a new training run.
    @event('Started')
    def __init__(self, name, config_hash, trainer, backend, seed, sweep=None):
        assert isinstance(name, str)
        assert isinstance(config_hash, str)
        assert isinstance(trainer, str)
        assert isinstance(backend, str)
        assert isinstance(seed, int)
        assert sweep is None or isinstance(sweep, str)

        self.name = name
        self.config_hash = config_hash
        self.trainer = trainer
        self.backend = backend
        self.seed = seed
        self.sweep = sweep
        self.epochs = []
        self.diverged = False
        self.divergence = None
        self.completed = False
        self.summary = {}

    # Record one history row.
    def record_epoch(self, epoch, split, loss, accuracy):
        assert isinstance(epoch, int)
        assert split in ('train', 'test')
        assert not self.completed

        self._record_epoch(epoch, split, float(loss), float(accuracy))

    @event('EpochRecorded')
    def _record_epoch(self, epoch, split, loss, accuracy):
        self.epochs.append({'epoch': epoch, 'split': split, 'loss': loss, 'accuracy': accuracy})

    # Loss is kept as text, it is not finite.
    def mark_diverged(self, epoch, batch, loss, reason):
        assert isinstance(epoch, int)
        assert isinstance(batch, int)
        assert isinstance(reason, str)

        if not self.diverged:
            self._mark_diverged(epoch, batch, repr(float(loss)), reason)

    @event('Diverged')
    def _mark_diverged(self, epoch, batch, loss, reason):
        self.diverged = True
        self.divergence = {'epoch': epoch, 'batch': batch, 'loss': loss, 'reason': reason}

    def complete(self, summary):
        assert isinstance(summary, dict)
        assert not self.completed

        self._complete(self.sweep, summary)

    @event('Completed')
    def _complete(self, sweep, summary):
        self.completed = True
        self.summary = summary

    def test_accuracies(self):
        return [row['accuracy'] for row in self.epochs if row['split'] == 'test']
