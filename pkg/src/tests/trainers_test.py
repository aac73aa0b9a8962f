import unittest

import numpy as np

from src.domain.analog import DigitalBackend
from src.domain.hwcost import epoch_events
from src.domain.mathcore import Quantizer, Rng, matmul
from src.domain.network import (ForwardTrace, Mlp, Topology, activation_derivative, cross_entropy, forward, one_hot,
                                xavier_init)
from src.domain.trainers import (FeedbackBank, HistoryRow, HyperParams, Precisions, TrainerKind,
                                 TrainingHistory, TrainingObserver, apply_updates, bp_backward, dfa_backward,
                                 epochs_to_converge, evaluate, output_error, train)
from src.util.config import parse_config
from src.util.dataio import Dataset, SyntheticSpec, synthetic


def loss_of(mlp, x, labels):
    return cross_entropy(forward(mlp, x, DigitalBackend(), record=False).logits, labels)


class TestBackward(unittest.TestCase):

    def setUp(self):
        rng = Rng(21)
        self.topology = Topology((5, 6, 6, 4), 'tanh')
        self.mlp = xavier_init(self.topology, rng.derive('init'))
        self.x = rng.derive('x').normal(0.0, 1.0, (5, 3))
        self.labels = np.array([0, 3, 1])
        self.backend = DigitalBackend()
        self.trace = forward(self.mlp, self.x, self.backend)
        self.e = output_error(self.trace.logits, one_hot(self.labels, 4))

    def test_bp_matches_finite_differences(self):
        deltas = bp_backward(self.trace, self.mlp, self.e, self.backend)
        eps = 1e-6
        for layer, (w, delta, h) in enumerate(zip(self.mlp.weights, deltas, self.trace.activations)):
            analytic = delta @ h.T / self.x.shape[1]
            numeric = np.zeros_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    plus, minus = np.array(w), np.array(w)
                    plus[i, j] += eps
                    minus[i, j] -= eps
                    weights_plus = list(self.mlp.weights)
                    weights_minus = list(self.mlp.weights)
                    weights_plus[layer], weights_minus[layer] = plus, minus
                    numeric[i, j] = (loss_of(self.mlp.with_weights(weights_plus), self.x, self.labels)
                                     - loss_of(self.mlp.with_weights(weights_minus), self.x, self.labels)) / (2 * eps)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-9)

    def test_dfa_matches_dense_oracle_bitwise(self):
        bank = FeedbackBank.create(self.topology, Rng(4))
        deltas = dfa_backward(self.trace, bank, self.e, self.backend, 'tanh')

        self.assertEqual(len(deltas), 3)
        np.testing.assert_array_equal(deltas[-1], self.e)
        for index, a in enumerate(self.trace.pre_activations[:-1]):
            oracle = matmul(bank.slice(a.shape[0]), self.e) * activation_derivative(a, 'tanh')
            np.testing.assert_array_equal(deltas[index], oracle)

    def test_dfa_on_thread_pool_is_identical(self):
        from concurrent.futures import ThreadPoolExecutor

        bank = FeedbackBank.create(self.topology, Rng(4))
        serial = dfa_backward(self.trace, bank, self.e, self.backend, 'tanh')
        with ThreadPoolExecutor(max_workers=2) as executor:
            pooled = dfa_backward(self.trace, bank, self.e, self.backend, 'tanh', executor=executor)
        for a, b in zip(serial, pooled):
            np.testing.assert_array_equal(a, b)

    def test_error_quantizer(self):
        q = Quantizer(2, range=1.0)
        deltas = bp_backward(self.trace, self.mlp, self.e, self.backend, q)
        for delta in deltas:
            self.assertTrue(np.all(np.isin(delta, [-1.0, 0.0, 1.0])))

        unquantized_hidden = bp_backward(self.trace, self.mlp, self.e, self.backend, q, requantize=False)
        np.testing.assert_array_equal(unquantized_hidden[-1], deltas[-1])

    def test_single_layer_rules_agree(self):
        topology = Topology((5, 4))
        mlp = xavier_init(topology, Rng(8))
        trace = forward(mlp, self.x, self.backend)
        e = output_error(trace.logits, one_hot(self.labels, 4))
        bank = FeedbackBank.create(topology, Rng(9))

        bp = bp_backward(trace, mlp, e, self.backend)
        dfa = dfa_backward(trace, bank, e, self.backend)
        np.testing.assert_array_equal(bp[0], dfa[0])

        hp = HyperParams(learning_rate=0.1)
        np.testing.assert_array_equal(apply_updates(mlp, bp, trace, hp, self.backend).weights[0],
                                      apply_updates(mlp, dfa, trace, hp, self.backend).weights[0])


class TestApplyUpdates(unittest.TestCase):

    def test_scalar_step(self):
        mlp = Mlp(Topology((1, 1), 'linear'), (np.array([[1.0]]),))
        trace = ForwardTrace(pre_activations=[np.array([[2.0]])], activations=[np.array([[2.0]])])
        updated = apply_updates(mlp, [np.array([[3.0]])], trace, HyperParams(learning_rate=0.1), DigitalBackend())
        self.assertAlmostEqual(updated.weights[0][0, 0], 1.0 - 0.6)

    def test_matches_per_entry_sgd(self):
        rng = Rng(30)
        mlp = xavier_init(Topology((5, 6, 4)), rng.derive('init'))
        x = rng.derive('x').uniform(0.0, 1.0, (5, 7))
        labels = np.array([0, 1, 2, 3, 0, 1, 2])
        backend = DigitalBackend()
        trace = forward(mlp, x, backend)
        deltas = bp_backward(trace, mlp, output_error(trace.logits, one_hot(labels, 4)), backend)
        lr = 0.3
        updated = apply_updates(mlp, deltas, trace, HyperParams(learning_rate=lr), backend)

        for w, new, delta, h in zip(mlp.weights, updated.weights, deltas, trace.activations):
            expected = np.zeros_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    step = sum(delta[i, b] * h[j, b] for b in range(x.shape[1])) / x.shape[1]
                    expected[i, j] = w[i, j] - lr * step
            np.testing.assert_allclose(new, expected, rtol=1e-12, atol=1e-15)

    def test_zero_error_leaves_weights(self):
        mlp = xavier_init(Topology((5, 6, 4)), Rng(31))
        trace = forward(mlp, Rng(32).uniform(0.0, 1.0, (5, 3)), DigitalBackend())
        deltas = [np.zeros((6, 3)), np.zeros((4, 3))]
        updated = apply_updates(mlp, deltas, trace, HyperParams(learning_rate=0.5), DigitalBackend())
        for before, after in zip(mlp.weights, updated.weights):
            np.testing.assert_array_equal(before, after)


class TestFeedbackBank(unittest.TestCase):

    def test_shape_and_bounds(self):
        bank = FeedbackBank.create(Topology((8, 16, 12, 4)), Rng(0))
        self.assertEqual(bank.master.shape, (16, 4))
        self.assertTrue(np.all(np.abs(bank.master) <= 0.5))
        self.assertEqual(bank.slice(12).shape, (12, 4))

    def test_fingerprint(self):
        topology = Topology((8, 16, 4))
        self.assertEqual(FeedbackBank.create(topology, Rng(1)).fingerprint(),
                         FeedbackBank.create(topology, Rng(1)).fingerprint())
        self.assertNotEqual(FeedbackBank.create(topology, Rng(1)).fingerprint(),
                            FeedbackBank.create(topology, Rng(2)).fingerprint())


class RecordingObserver(TrainingObserver):

    def __init__(self):
        self.epochs = []
        self.divergences = []

    def on_epoch_end(self, epoch, train_row, test_row):
        self.epochs.append(epoch)

    def on_divergence(self, divergence):
        self.divergences.append(divergence)


class TestTrain(unittest.TestCase):

    def setUp(self):
        spec = SyntheticSpec(classes=4, features=16, samples_per_class=40, std=0.1, seed=3)
        self.train_set = synthetic(spec, 'train')
        self.test_set = synthetic(SyntheticSpec(classes=4, features=16, samples_per_class=10, std=0.1, seed=3),
                                  'test')
        self.topology = Topology((16, 24, 24, 4))

    def _train(self, kind, epochs=15, seed=0, workers=1, **hp):
        mlp = xavier_init(self.topology, Rng(seed).derive('init'))
        params = HyperParams(learning_rate=hp.pop('learning_rate', 0.1), batch_size=16, epochs=epochs, seed=seed,
                             **hp)
        return train(mlp, self.train_set, self.test_set, params, kind, DigitalBackend(), workers=workers)

    def test_both_rules_learn(self):
        for kind in (TrainerKind.BP, TrainerKind.DFA):
            history = self._train(kind, epochs=30)
            self.assertFalse(history.diverged)
            self.assertEqual(len(history.split('train')), 30)
            self.assertGreater(history.final('test').accuracy, 0.7, kind)
            self.assertLess(history.final('train').loss, history.split('train')[0].loss)

    def test_deterministic(self):
        a = self._train(TrainerKind.DFA, epochs=3)
        b = self._train(TrainerKind.DFA, epochs=3, workers=3)
        self.assertEqual(a.rows, b.rows)
        self.assertTrue(all(row.wall_seconds == 0.0 for row in a.rows))
        self.assertEqual(a.bank.fingerprint(), b.bank.fingerprint())

    def test_divergence_is_recorded(self):
        self.topology = Topology((16, 24, 24, 4), 'linear')
        observer = RecordingObserver()
        mlp = xavier_init(self.topology, Rng(0))
        hp = HyperParams(learning_rate=1e6, batch_size=16, epochs=5)
        with np.errstate(all='ignore'):
            history = train(mlp, self.train_set, self.test_set, hp, TrainerKind.BP, DigitalBackend(),
                            observers=[observer])

        self.assertTrue(history.diverged)
        self.assertIn(history.divergence.reason, ('non-finite loss', 'non-finite weights'))
        self.assertEqual(observer.divergences, [history.divergence])
        self.assertEqual(len(history.split('train')), history.divergence.epoch - 1)

    def test_observer_sees_every_epoch(self):
        observer = RecordingObserver()
        mlp = xavier_init(self.topology, Rng(0))
        train(mlp, self.train_set, None, HyperParams(batch_size=32, epochs=2), TrainerKind.DFA, DigitalBackend(),
              observers=[observer])
        self.assertEqual(observer.epochs, [1, 2])

    def test_live_events_match_closed_form(self):
        for kind in (TrainerKind.BP, TrainerKind.DFA):
            history = self._train(kind, epochs=1)
            expected = epoch_events(self.topology, kind, DigitalBackend().cfg, self.train_set.samples, 16)
            self.assertEqual(history.events[0], expected)

    def test_gradient_quantizer_bounds_updates(self):
        precisions = Precisions(gradient=Quantizer(1, range=1e-6))
        history = self._train(TrainerKind.BP, epochs=2, precisions=precisions, learning_rate=0.1)
        start = xavier_init(self.topology, Rng(0).derive('init'))
        for before, after in zip(start.weights, history.model.weights):
            self.assertLess(np.max(np.abs(after - before)), 1e-5)

    def test_zero_learning_rate_freezes_accuracy(self):
        history = self._train(TrainerKind.DFA, epochs=3, learning_rate=0.0)
        accuracies = [row.accuracy for row in history.split('test')]
        self.assertEqual(accuracies, [accuracies[0]] * 3)
        start = xavier_init(self.topology, Rng(0).derive('init'))
        for before, after in zip(start.weights, history.model.weights):
            np.testing.assert_array_equal(before, after)

    def test_training_leaves_feedback_untouched(self):
        bank = FeedbackBank.create(self.topology, Rng(4))
        fingerprint = bank.fingerprint()
        mlp = xavier_init(self.topology, Rng(0))
        history = train(mlp, self.train_set, None, HyperParams(batch_size=16, epochs=2), TrainerKind.DFA,
                        DigitalBackend(), bank=bank)
        self.assertIs(history.bank, bank)
        self.assertEqual(bank.fingerprint(), fingerprint)

    def test_noiseless_blobs_are_separable_in_one_epoch(self):
        spec = SyntheticSpec(classes=4, features=4, samples_per_class=5, std=0.0, seed=1)
        train_set = synthetic(spec, 'train')
        mlp = xavier_init(Topology((4, 4)), Rng(2))
        hp = HyperParams(learning_rate=40.0, batch_size=train_set.samples, epochs=1)
        history = train(mlp, train_set, None, hp, TrainerKind.BP, DigitalBackend())
        _, accuracy = evaluate(history.model, train_set, DigitalBackend())
        self.assertEqual(accuracy, 1.0)

    def test_evaluate(self):
        mlp = xavier_init(self.topology, Rng(0))
        loss, accuracy = evaluate(mlp, self.test_set, DigitalBackend(), batch_size=7)
        self.assertGreater(loss, 0.0)
        self.assertTrue(0.0 <= accuracy <= 1.0)


def gradient_quantizer(bits):
    document = {'hyperparams': {'precisions': {'gradient': bits}}}
    return parse_config(document).hyperparams.precisions.gradient


class TestGradientPrecision(unittest.TestCase):
    """A single-layer net from zero weights on two one-hot classes.

    With inputs of height v every gradient entry is exactly v / 4, here
    a twentieth of the default gradient range.
    """

    def setUp(self):
        self.range = gradient_quantizer(4).range
        labels = np.repeat([0, 1], 10)
        images = np.zeros((2, labels.size))
        images[labels, np.arange(labels.size)] = self.range / 5
        self.train_set = Dataset(images, labels, 'train', 2)
        self.test_set = Dataset(images, labels, 'test', 2)

    def _train(self, kind, bits):
        mlp = Mlp(Topology((2, 2)), (np.zeros((2, 2)),))
        hp = HyperParams(learning_rate=1.0, batch_size=20, epochs=3,
                         precisions=Precisions(gradient=gradient_quantizer(bits)))
        return train(mlp, self.train_set, self.test_set, hp, kind, DigitalBackend())

    def test_four_bits_or_fewer_drop_every_update(self):
        for kind in (TrainerKind.BP, TrainerKind.DFA):
            for bits in (3, 4):
                history = self._train(kind, bits)
                np.testing.assert_array_equal(history.model.weights[0], np.zeros((2, 2)))
                self.assertEqual([row.accuracy for row in history.split('test')], [0.5] * 3, (kind, bits))

    def test_five_bits_pass_updates(self):
        step = self.range / 15
        for kind in (TrainerKind.BP, TrainerKind.DFA):
            history = self._train(kind, 5)
            self.assertEqual(history.split('test')[0].accuracy, 1.0, kind)
            np.testing.assert_allclose(history.model.weights[0], 3 * step * np.array([[1.0, -1.0], [-1.0, 1.0]]))


class TestEpochsToConverge(unittest.TestCase):

    def test_first_epoch_within_tolerance(self):
        history = TrainingHistory(rows=[HistoryRow(epoch, 'test', 0.0, accuracy)
                                        for epoch, accuracy in enumerate([0.5, 0.8, 0.89, 0.9, 0.91], start=1)])
        self.assertEqual(epochs_to_converge(history), 3)
        self.assertEqual(epochs_to_converge(history, tolerance=0.0), 5)
        self.assertIsNone(epochs_to_converge(TrainingHistory()))
