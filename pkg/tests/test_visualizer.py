import numpy as np

from tpgsr.config import StagePlan
from tpgsr.data.imageio import read_image
from tpgsr.models.tpgsr import TPGSRModel
from tpgsr.visualizer import SampleGridVisualizer, TextPriorVisualizer, tile, upscale_nearest

from .conftest import TINY_REC_CHANNELS


def test_upscale_nearest():
    image = np.array([[[0.0, 1.0]]])
    np.testing.assert_array_equal(upscale_nearest(image), [[[0, 0, 1, 1], [0, 0, 1, 1]]])


def test_tile_layout():
    columns = [np.zeros((2, 3, 4)), np.ones((2, 3, 4))]
    grid = tile(columns, pad=1, fill=0.5)
    assert grid.shape == (2 * 3 + 3, 2 * 4 + 3)
    assert grid[0, 0] == 0.5
    assert grid[1, 1] == 0.0
    assert grid[1, 6] == 1.0


def test_grid_without_model(tmp_path, tiny_splits):
    _, test = tiny_splits
    visualizer = SampleGridVisualizer()
    columns = visualizer.generate_columns(test)
    assert len(columns) == 3
    assert all(c.shape == (3, 32, 128) for c in columns)
    pgm, png = visualizer.save_grid(tmp_path / "grid", test)
    assert png.exists()
    assert read_image(pgm).shape == (3 * 32 + 4 * 2, 3 * 128 + 4 * 2)


def test_grid_has_one_column_per_stage(tiny_splits, tiny_recognizer):
    _, test = tiny_splits
    model = TPGSRModel(
        StagePlan(stages=2, lambdas=[0.5, 0.5]),
        np.random.default_rng(0),
        recognizer=tiny_recognizer,
        sr_channels=4,
        sr_blocks=1,
        rec_channels=TINY_REC_CHANNELS,
        tpt_channels=(4, 4, 4, 4),
    )
    columns = SampleGridVisualizer(model).generate_columns(test[:2])
    assert len(columns) == 5
    assert model.training


def test_prior_heatmap(tmp_path, tiny_splits, tiny_recognizer):
    _, test = tiny_splits
    visualizer = TextPriorVisualizer(tiny_recognizer)
    probs = visualizer.prior(test[0].lr)
    assert probs.shape == (16, 37)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-5)
    path = visualizer.save_heatmap(tmp_path / "maps" / "tp.png", test[0].hr, test[0].label)
    assert path.exists() and path.stat().st_size > 0


def test_prior_leaves_recognizer_mode_alone(tiny_splits, tiny_recognizer):
    _, test = tiny_splits
    tiny_recognizer.train()
    first = TextPriorVisualizer(tiny_recognizer).prior(test[0].hr)
    assert tiny_recognizer.training
    tiny_recognizer.eval()
    np.testing.assert_array_equal(TextPriorVisualizer(tiny_recognizer).prior(test[0].hr), first)
    assert not tiny_recognizer.training
