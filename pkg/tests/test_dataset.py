import numpy as np
import pytest

from avlab.dataset import (
    CLASS_AMPLITUDE,
    NO_EVENTS,
    EventScene,
    detect_onsets,
    make_batch,
    prompt_for_classes,
    random_scene,
    sync_score,
    synth_pair,
)
from avlab.errors import ContractError, DimensionError, DomainError
from avlab.ropealign import TimeGrid

GRID = TimeGrid(f_v=1.5, f_a=6.0)


def test_event_lands_on_aligned_tokens():
    scene = EventScene((4.0,), (2,))
    x_v, x_a = synth_pair(scene, GRID, 0, latent_dims=(4, 4), noise_std=0.0)
    assert x_v.shape == (12, 4) and x_a.shape == (48, 4)
    assert int(np.argmax(x_v.numpy()[:, 2])) == 6
    assert int(np.argmax(x_a.numpy()[:, 2])) == 24


def test_bump_area_is_the_class_amplitude():
    scene = EventScene((3.0,), (3,))
    x_v, x_a = synth_pair(scene, GRID, 0, latent_dims=(4, 4), noise_std=0.0)
    assert x_v.numpy()[:, 3].sum() / GRID.f_v == pytest.approx(CLASS_AMPLITUDE[3])
    assert x_a.numpy()[:, 3].sum() / GRID.f_a == pytest.approx(CLASS_AMPLITUDE[3])
    assert not np.any(x_a.numpy()[:, :3])


def test_synthesis_is_seeded():
    scene = EventScene((1.0, 5.0), (0, 1))
    a = synth_pair(scene, GRID, 7)
    b = synth_pair(scene, GRID, 7)
    c = synth_pair(scene, GRID, 8)
    assert np.array_equal(a[0].numpy(), b[0].numpy())
    assert np.array_equal(a[1].numpy(), b[1].numpy())
    assert not np.array_equal(a[1].numpy(), c[1].numpy())


def test_scene_validation():
    with pytest.raises(ContractError):
        EventScene((), ())
    with pytest.raises(ContractError):
        EventScene((2.0, 1.0), (0, 0))
    with pytest.raises(ContractError):
        EventScene((1.0,), (4,))
    with pytest.raises(DomainError):
        synth_pair(EventScene((9.0,), (0,)), GRID, 0)
    with pytest.raises(DomainError):
        synth_pair(EventScene((1.0,), (0,)), GRID, 0, noise_std=-1.0)


def test_prompts():
    scene = EventScene((1.0, 3.0), (0, 3))
    assert scene.prompt_ids == (1, 2, 5)
    assert scene.prompt_tokens(6) == (1, 2, 5, 0, 0, 0)
    assert prompt_for_classes([0, 2, 1], 6) == (1, 2, 4, 3, 0, 0)
    with pytest.raises(DimensionError):
        prompt_for_classes([0, 1, 2, 3], 4)
    with pytest.raises(ContractError):
        prompt_for_classes([7], 6)


def test_random_scenes_respect_spacing():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scene = random_scene(rng)
        assert all(0.5 <= t <= 7.5 for t in scene.onsets)
        assert all(b - a >= 1.0 for a, b in zip(scene.onsets, scene.onsets[1:]))


def test_make_batch():
    batch = make_batch(np.random.default_rng(0), GRID, 3, text_len=6, latent_dims=(4, 4))
    assert len(batch) == 3
    assert all(len(ex.text_tokens) == 6 for ex in batch)
    assert batch[0].x_v.shape == (12, 4)


def test_detect_onsets_recovers_event_times():
    scene = EventScene((1.5, 5.0), (0, 1))
    _, x_a = synth_pair(scene, GRID, 0, noise_std=0.0)
    onsets = detect_onsets(x_a.numpy(), GRID.f_a)
    assert len(onsets) == 2
    assert onsets[0] == pytest.approx(1.5, abs=1.0 / 6.0)
    assert onsets[1] == pytest.approx(5.0, abs=1.0 / 6.0)
    with pytest.raises(DimensionError):
        detect_onsets(np.zeros(5), GRID.f_a)


def test_sync_score_of_a_synchronized_pair():
    scene = EventScene((2.0, 6.0), (1, 2))
    x_v, x_a = synth_pair(scene, GRID, 0)
    report = sync_score(x_v, x_a, GRID)
    assert report.ok
    assert report.offset_error_s <= 1.0 / 6.0
    assert report.event_f1 == 1.0


def test_sync_score_measures_a_shift():
    scene = EventScene((2.0, 5.0), (1, 2))
    x_v, x_a = synth_pair(scene, GRID, 0, audio_shift_s=1.0)
    report = sync_score(x_v, x_a, GRID)
    assert report.offset_error_s == pytest.approx(1.0, abs=1.0 / 6.0)
    assert report.event_f1 == 0.0


def test_sync_score_without_events():
    rng = np.random.default_rng(0)
    report = sync_score(rng.normal(0, 0.01, (12, 8)), rng.normal(0, 0.01, (48, 8)), GRID)
    assert not report.ok
    assert report.error == NO_EVENTS
    assert (report.offset_error_s, report.event_f1) == (8.0, 0.0)
    assert report.to_dict()["error"] == NO_EVENTS
