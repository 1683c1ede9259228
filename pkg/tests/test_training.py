import numpy as np
import pytest

from matcha.data import tokenize_records
from matcha.model import cosine, init_params, represent
from matcha.synthetic import make_synthetic_corpus
from matcha.tokenizer import build_word_vocabulary
from matcha.training import (
    TENSOR_NAMES,
    BatchSchedule,
    Gradients,
    OptimizerState,
    TokenizedDataset,
    TrainConfig,
    TripletBatch,
    adam_step,
    backward,
    batch_loss,
    init_optimizer,
    loss_and_grads,
    margin_loss,
    next_batch,
    train,
)
from oracles import finite_difference_gradients
from test_model import manual_params, random_params


def random_batch(rng, vocab_size, n_items, max_len=6):
    items = []
    for _ in range(n_items):
        seq = lambda: [int(x) for x in rng.integers(0, vocab_size, int(rng.integers(1, max_len + 1)))]
        items.append((seq(), seq(), seq()))
    return TripletBatch(items=items, source_dataset="rand")


class TestMarginLoss:
    def test_margin_satisfied_clamps(self):
        assert margin_loss(0.9, -0.5, 1.0) == 0.0

    def test_equal_sims(self):
        assert margin_loss(0.3, 0.3, 1.0) == 1.0

    def test_arithmetic(self):
        assert margin_loss(0.2, 0.1, 1.0) == pytest.approx(0.9)


class TestBatchLoss:
    def test_mean_of_item_losses(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, 8, 4, 2)
        batch = random_batch(rng, 8, 5)
        expected = np.mean(
            [
                margin_loss(
                    cosine(represent(params, r), represent(params, c)),
                    cosine(represent(params, r), represent(params, i)),
                    params.hyper.margin,
                )
                for r, c, i in batch.items
            ]
        )
        assert batch_loss(params, batch) == pytest.approx(expected, abs=1e-12)

    def test_identical_ref_correct_orthogonal_incorrect(self):
        # Single-token docs through an identity map: h equals the embedding row.
        dim = 2
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        params = manual_params(emb, np.eye(dim), np.zeros(dim), np.eye(dim))
        batch = TripletBatch(items=[([0], [1], [2])])
        # sim_C = 1, sim_I = 0 -> loss = max(0, 1 + 0 - 1) = 0
        assert batch_loss(params, batch) == 0.0

    def test_empty_batch(self):
        params = random_params(np.random.default_rng(1), 4, 3, 1)
        with pytest.raises(ValueError):
            batch_loss(params, TripletBatch(items=[]))


class TestBackward:
    def test_inactive_hinge_zero_gradients(self):
        dim = 2
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        params = manual_params(emb, np.eye(dim), np.zeros(dim), np.eye(dim))
        # sim_C = 1, sim_I = -1: gap 2 >= margin 1 -> inactive
        grads = backward(params, TripletBatch(items=[([0], [1], [2])]))
        for name in TENSOR_NAMES:
            assert not np.any(getattr(grads, name))

    def test_duplicated_batch_leaves_gradients_unchanged(self):
        rng = np.random.default_rng(2)
        params = random_params(rng, 8, 4, 2)
        batch = random_batch(rng, 8, 3)
        doubled = TripletBatch(items=batch.items * 2)
        g1 = backward(params, batch)
        g2 = backward(params, doubled)
        for name in TENSOR_NAMES:
            assert np.allclose(getattr(g1, name), getattr(g2, name), atol=1e-12)

    def test_frozen_embeddings(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, 8, 4, 2)
        grads = backward(params, random_batch(rng, 8, 2), train_embeddings=False)
        assert grads.embedding is None
        assert np.any(grads.proj_weight)

    def test_active_items_scale_inversely_with_batch_size(self):
        # appending an inactive item doubles |batch| and exactly halves the
        # gradient, i.e. each active item contributes with weight 1/|batch|
        dim = 2
        emb = np.array([[1.0, 0.2], [0.9, 0.3], [-0.2, 1.0], [1.0, 0.0], [1.0, 0.05], [-1.0, 0.0]])
        params = manual_params(emb, np.eye(dim), np.zeros(dim), np.eye(dim))
        active = ([0], [1], [2])
        inactive = ([3], [4], [5])  # gap ~2 >= margin, hinge off
        g_single = backward(params, TripletBatch(items=[active]))
        g_padded = backward(params, TripletBatch(items=[active, inactive]))
        for name in TENSOR_NAMES:
            assert np.allclose(getattr(g_padded, name), getattr(g_single, name) / 2, atol=1e-15)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        dim = int(rng.integers(2, 9))
        n_ctx = int(rng.integers(1, 5))
        vocab_size = int(rng.integers(4, 12))
        params = random_params(rng, vocab_size, dim, n_ctx)
        batch = random_batch(rng, vocab_size, int(rng.integers(1, 5)))
        _, grads = loss_and_grads(params, batch)
        fd = finite_difference_gradients(
            lambda p: batch_loss(p, batch), params, TENSOR_NAMES
        )
        for name in TENSOR_NAMES:
            analytic = getattr(grads, name)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd[name])), 1e-6)
            rel = np.abs(analytic - fd[name]) / denom
            assert rel.max() <= 1e-4, f"{name}: worst rel err {rel.max()}"


class TestAdamStep:
    def test_zero_gradients_no_decay_unchanged(self):
        params = random_params(np.random.default_rng(4), 6, 4, 2)
        before = {n: getattr(params, n).copy() for n in TENSOR_NAMES}
        state = init_optimizer(params, lr=1e-3, weight_decay=0.0)
        adam_step(state, params, Gradients.zeros(params))
        for name in TENSOR_NAMES:
            assert np.array_equal(getattr(params, name), before[name])
        assert state.step_count == 1

    def test_first_step_moves_by_lr(self):
        params = random_params(np.random.default_rng(5), 4, 3, 1)
        before = params.embedding.copy()
        state = init_optimizer(params, lr=1e-4, weight_decay=0.0)
        grads = Gradients.zeros(params)
        grads.embedding[:] = 1.0
        adam_step(state, params, grads)
        # bias-corrected first step is lr * g / (|g| + eps) ~ lr
        assert np.allclose(before - params.embedding, 1e-4, atol=1e-10)

    def test_decoupled_weight_decay(self):
        params = random_params(np.random.default_rng(6), 4, 3, 1)
        before = {n: getattr(params, n).copy() for n in TENSOR_NAMES}
        state = init_optimizer(params, lr=1e-2, weight_decay=0.1)
        adam_step(state, params, Gradients.zeros(params))
        for name in TENSOR_NAMES:
            assert np.allclose(getattr(params, name), before[name] * (1 - 1e-2 * 0.1), atol=1e-15)

    def test_frozen_tensor_not_decayed(self):
        params = random_params(np.random.default_rng(7), 4, 3, 1)
        before = params.embedding.copy()
        state = init_optimizer(params, lr=1e-2, weight_decay=0.1)
        grads = backward(params, TripletBatch(items=[([0], [1], [2])]), train_embeddings=False)
        adam_step(state, params, grads)
        assert np.array_equal(params.embedding, before)

    def test_effective_lr_schedule(self):
        state = OptimizerState(first_moment={}, second_moment={}, base_lr=1e-4, decay_rate=0.9)
        for epoch in range(5):
            state.epoch_index = epoch
            assert state.effective_lr == 1e-4 * 0.9**epoch
        state.decay_rate = 1.0
        for epoch in range(5):
            state.epoch_index = epoch
            assert state.effective_lr == 1e-4


class TestAccumulation:
    def test_mean_of_micro_grads_equals_union_gradient(self):
        rng = np.random.default_rng(8)
        params = random_params(rng, 8, 4, 2)
        micro = [random_batch(rng, 8, 4) for _ in range(3)]
        union = TripletBatch(items=[it for b in micro for it in b.items])
        acc = Gradients.zeros(params)
        for batch in micro:
            acc.add_(backward(params, batch))
        acc.scale_(1.0 / len(micro))
        union_grads = backward(params, union)
        for name in TENSOR_NAMES:
            assert np.allclose(getattr(acc, name), getattr(union_grads, name), atol=1e-9)


def make_datasets(sizes, batch_size, vocab_size=6, has_contrastive=True):
    rng = np.random.default_rng(9)
    out = []
    for idx, n_batches in enumerate(sizes):
        items = [
            ([int(rng.integers(vocab_size))], [int(rng.integers(vocab_size))], [int(rng.integers(vocab_size))])
            for _ in range(n_batches * batch_size)
        ]
        out.append(TokenizedDataset(name=chr(ord("A") + idx), items=items, has_contrastive=has_contrastive))
    return out


class TestSchedules:
    def test_interleaved_alternates_two_datasets(self):
        datasets = make_datasets([3, 3], batch_size=2)
        sched = BatchSchedule(datasets, 2, "interleaved", rng=np.random.default_rng(0))
        sched.start_epoch()
        sources = []
        while (batch := next_batch(sched)) is not None:
            sources.append(batch.source_dataset)
        assert len(sources) == 6
        for a, b in zip(sources, sources[1:]):
            assert a != b

    def test_interleaved_skips_exhausted(self):
        datasets = make_datasets([2, 1, 1], batch_size=2)
        # find a seed whose dataset-order shuffle is the identity
        seed = next(
            s
            for s in range(200)
            if list(np.random.default_rng(s).permutation(3)) == [0, 1, 2]
        )
        sched = BatchSchedule(datasets, 2, "interleaved", rng=np.random.default_rng(seed))
        sched.start_epoch()
        sources = []
        while (batch := next_batch(sched)) is not None:
            sources.append(batch.source_dataset)
        assert sources == ["A", "B", "C", "A"]

    def test_single_dataset_matches_sequential(self):
        datasets = make_datasets([4], batch_size=3)
        streams = []
        for strategy in ("interleaved", "sequential"):
            sched = BatchSchedule(datasets, 3, strategy, rng=np.random.default_rng(11))
            sched.start_epoch()
            stream = []
            while (batch := next_batch(sched)) is not None:
                stream.append(batch.items)
            streams.append(stream)
        assert streams[0] == streams[1]

    def test_sequential_consumes_in_order(self):
        datasets = make_datasets([2, 2, 2], batch_size=2)
        sched = BatchSchedule(datasets, 2, "sequential", rng=np.random.default_rng(12))
        sched.start_epoch()
        sources = []
        while (batch := next_batch(sched)) is not None:
            sources.append(batch.source_dataset)
        assert sources == ["A", "A", "B", "B", "C", "C"]

    def test_curriculum_order(self):
        datasets = make_datasets([1, 1, 1], batch_size=2)
        sched = BatchSchedule(
            datasets, 2, "curriculum", curriculum_order=["C", "A", "B"], rng=np.random.default_rng(13)
        )
        sched.start_epoch()
        sources = []
        while (batch := next_batch(sched)) is not None:
            sources.append(batch.source_dataset)
        assert sources == ["C", "A", "B"]

    def test_contrastive_only_filters(self):
        datasets = make_datasets([1, 1], batch_size=2)
        datasets[1].has_contrastive = False
        sched = BatchSchedule(datasets, 2, "contrastive_only", rng=np.random.default_rng(14))
        sched.start_epoch()
        sources = {b.source_dataset for b in iter(sched.next_batch, None)}
        assert sources == {"A"}

    def test_random_negative_filters(self):
        datasets = make_datasets([1, 1], batch_size=2)
        datasets[1].has_contrastive = False
        sched = BatchSchedule(datasets, 2, "random_negative", rng=np.random.default_rng(15))
        sched.start_epoch()
        sources = {b.source_dataset for b in iter(sched.next_batch, None)}
        assert sources == {"B"}

    def test_batches_never_mix_datasets(self):
        datasets = make_datasets([2, 2], batch_size=3)
        sched = BatchSchedule(datasets, 3, "interleaved", rng=np.random.default_rng(16))
        for _ in range(2):
            sched.start_epoch()
            while (batch := next_batch(sched)) is not None:
                assert len({batch.source_dataset}) == 1

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            BatchSchedule(make_datasets([1], 2), 2, "zigzag")

    def test_curriculum_requires_order(self):
        with pytest.raises(ValueError):
            BatchSchedule(make_datasets([1], 2), 2, "curriculum")


def desk_setup(n_records=64, seed=0, dim=16, n_ctx=4):
    records = make_synthetic_corpus(n_records, seed=seed)
    vocab = build_word_vocabulary(
        [t for r in records for t in (r.reference, r.correct, r.incorrect)]
    )
    params = init_params(vocab.vocab_size, dim, n_ctx, max_len=16, seed=42)
    dataset = tokenize_records("synthetic", records, vocab, 16)
    return params, [dataset]


class TestTrain:
    def test_zero_epochs_returns_params_unchanged(self):
        params, datasets = desk_setup()
        config = TrainConfig(epochs=0, batch_size=8, grad_accum_steps=1)
        trained, report = train(config, datasets, params)
        assert report == []
        for name in TENSOR_NAMES:
            assert np.array_equal(getattr(trained, name), getattr(params, name))

    def test_seeded_determinism(self):
        results = []
        for _ in range(2):
            params, datasets = desk_setup()
            config = TrainConfig(epochs=2, batch_size=8, grad_accum_steps=2, seed=42)
            trained, _ = train(config, datasets, params)
            results.append(trained)
        for name in TENSOR_NAMES:
            assert np.array_equal(getattr(results[0], name), getattr(results[1], name))

    def test_report_rows(self):
        params, datasets = desk_setup()
        config = TrainConfig(epochs=3, batch_size=8, grad_accum_steps=2, lr_decay=0.9, seed=1)
        _, report = train(config, datasets, params)
        assert [row["epoch"] for row in report] == [0, 1, 2]
        for k, row in enumerate(report):
            assert row["lr"] == pytest.approx(config.lr * config.lr_decay**k)
            assert row["batches"] == 8
            assert np.isfinite(row["mean_loss"])

    def test_loss_decreases_over_epochs(self):
        params, datasets = desk_setup(n_records=128)
        config = TrainConfig(epochs=4, batch_size=16, grad_accum_steps=1, seed=3)
        _, report = train(config, datasets, params)
        assert report[-1]["mean_loss"] < report[0]["mean_loss"]

    def test_frozen_embeddings_flag(self):
        params, datasets = desk_setup()
        before = params.embedding.copy()
        config = TrainConfig(epochs=1, batch_size=8, grad_accum_steps=1, train_embeddings=False)
        trained, _ = train(config, datasets, params)
        assert np.array_equal(trained.embedding, before)
        assert not np.array_equal(trained.proj_weight, params.proj_weight)

    def test_margin_config_propagates(self):
        params, datasets = desk_setup()
        config = TrainConfig(epochs=0, margin=0.25)
        trained, _ = train(config, datasets, params)
        assert trained.hyper.margin == 0.25

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(schedule_strategy="bogus").validate()
