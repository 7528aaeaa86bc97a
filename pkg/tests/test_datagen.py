import numpy as np
import pytest

from rfib.datagen import (
    LabeledBatch,
    SynthSpec,
    binarize_ita,
    default_synth_spec,
    image_ita_label,
    ita,
    load_manifest,
    manifest_to_batch,
    read_batch_csv,
    srgb_to_lab,
    synth_generate,
    write_batch_csv,
)


def test_labeled_batch_validation():
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((3, 2)), np.array([0, 1]), np.array([0, 1, 0]))
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 2)), np.array([0, 2]), np.array([0, 1]))


def test_synth_counts_exact():
    spec = default_synth_spec(train_per_cell=30, test_per_cell=10)
    train, test = synth_generate(spec, seed=0)
    assert len(train) == 90  # cell (1,1) empty
    assert not np.any((train.y == 1) & (train.s == 1))
    assert len(test) == 40
    for y in (0, 1):
        for s in (0, 1):
            assert np.sum((test.y == y) & (test.s == s)) == 10


def test_synth_deterministic():
    spec = default_synth_spec(train_per_cell=20, test_per_cell=5)
    a_train, a_test = synth_generate(spec, seed=99)
    b_train, b_test = synth_generate(spec, seed=99)
    np.testing.assert_array_equal(a_train.x, b_train.x)
    np.testing.assert_array_equal(a_test.x, b_test.x)
    np.testing.assert_array_equal(a_train.y, b_train.y)
    np.testing.assert_array_equal(a_train.s, b_train.s)


def test_synth_spec_needs_both_labels():
    spec = default_synth_spec()
    counts = dict(spec.cell_counts)
    counts[(1, 0)] = 0  # removes every y=1 cell together with the default empty (1,1)
    with pytest.raises(ValueError):
        SynthSpec(
            d_x=spec.d_x,
            means=spec.means,
            noise_std=spec.noise_std,
            cell_counts=counts,
            balanced_test_count=spec.balanced_test_count,
        )


def test_default_spec_signals_overlap():
    spec = default_synth_spec(y_signal=1.5, s_signal=1.0)
    both = spec.means[(1, 1)]
    assert both[0] == pytest.approx(1.5)  # pure label signal
    assert both[-1] == pytest.approx(1.0)  # pure group signal
    assert both[4] == pytest.approx(2.5)  # shared dimension carries both


def test_batch_csv_roundtrip(tmp_path):
    spec = default_synth_spec(train_per_cell=5, test_per_cell=2)
    train, _ = synth_generate(spec, seed=3)
    path = tmp_path / "batch.csv"
    write_batch_csv(path, train)
    back = read_batch_csv(path)
    np.testing.assert_array_equal(back.x, train.x)
    np.testing.assert_array_equal(back.y, train.y)
    np.testing.assert_array_equal(back.s, train.s)


# -- color conversion -----------------------------------------------------------


def test_white_black_gray_fixtures():
    L, a, b = srgb_to_lab((1.0, 1.0, 1.0))
    assert L == pytest.approx(100.0, abs=1e-9)
    assert abs(a) <= 1e-9 and abs(b) <= 1e-9

    L, _, _ = srgb_to_lab((0.0, 0.0, 0.0))
    assert L == pytest.approx(0.0, abs=1e-12)

    L, a, b = srgb_to_lab((0.5, 0.5, 0.5))
    assert L == pytest.approx(53.39, abs=0.01)
    assert abs(a) <= 1e-9 and abs(b) <= 1e-9


def test_gray_axis_neutral():
    for v in np.linspace(0.01, 0.99, 17):
        _, a, b = srgb_to_lab((v, v, v))
        assert abs(a) <= 1e-9
        assert abs(b) <= 1e-9


def test_against_reference_converter():
    # scikit-image is an independent implementation; matrices differ in the
    # last decimal so compare loosely.
    skcolor = pytest.importorskip("skimage.color")
    rng = np.random.default_rng(0)
    rgb = rng.uniform(0, 1, size=(20, 3))
    ours = srgb_to_lab(rgb)
    theirs = skcolor.rgb2lab(rgb.reshape(1, 20, 3)).reshape(20, 3)
    np.testing.assert_allclose(ours, theirs, atol=0.05)


def test_srgb_rejects_out_of_range():
    with pytest.raises(ValueError):
        srgb_to_lab((1.2, 0.0, 0.0))


def test_ita_fixtures():
    assert ita(50.0, 7.0) == pytest.approx(0.0)
    assert ita(60.0, 20.0) == pytest.approx(26.565, abs=1e-3)
    assert ita(40.0, 20.0) == pytest.approx(-26.565, abs=1e-3)


def test_ita_total_at_zero_yellowness():
    assert ita(60.0, 0.0) == pytest.approx(90.0)
    assert ita(40.0, 0.0) == pytest.approx(-90.0)
    assert ita(50.0, 0.0) == pytest.approx(0.0)


def test_ita_odd_and_monotone():
    b = 15.0
    for delta in (1.0, 5.0, 20.0):
        assert ita(50 + delta, b) == pytest.approx(-ita(50 - delta, b), abs=1e-12)
    values = [ita(L, b) for L in np.linspace(10, 90, 30)]
    assert np.all(np.diff(values) > 0)


def test_binarize_ita_boundary():
    assert binarize_ita(19.0) == 1  # boundary is dark-inclusive
    assert binarize_ita(26.565) == 0
    assert binarize_ita(-5.0) == 1


def test_image_label_uniform_colors():
    # a light beige: L well above 50 -> angle above threshold -> light (0)
    light = np.tile(np.array([0.85, 0.7, 0.55]), (4, 5, 1))
    assert image_ita_label(light) == 0
    # a dark brown: L below 50 -> negative angle -> dark (1)
    dark = np.tile(np.array([0.35, 0.2, 0.12]), (4, 5, 1))
    assert image_ita_label(dark) == 1
    # labels agree with the scalar pipeline on the same color
    L, _, b = srgb_to_lab((0.85, 0.7, 0.55))
    assert binarize_ita(ita(L, b)) == 0


def test_image_label_masks_background():
    # dark-skin pixels plus a black background; the mask must ignore the
    # background, otherwise the angle would change
    skin = np.tile(np.array([0.6, 0.45, 0.35]), (6, 6, 1))
    framed = np.zeros((10, 10, 3))
    framed[2:8, 2:8] = skin[:6, :6]
    assert image_ita_label(framed) == image_ita_label(skin)


def test_image_label_all_black_is_error():
    with pytest.raises(ValueError):
        image_ita_label(np.zeros((5, 5, 3)))


def test_image_label_median_duplication_invariant():
    rng = np.random.default_rng(1)
    img = rng.uniform(0.2, 0.9, size=(6, 6, 3))
    doubled = np.concatenate([img, img], axis=0)
    assert image_ita_label(img) == image_ita_label(doubled)


def test_image_label_uint8_input():
    img = np.full((3, 3, 3), 200, dtype=np.uint8)
    assert image_ita_label(img) in (0, 1)


# -- manifests -------------------------------------------------------------------


def _write_png(path, color, size=(8, 8)):
    from PIL import Image

    arr = np.tile(np.array(color, dtype=np.uint8), (size[0], size[1], 1))
    Image.fromarray(arr).save(path)


def test_manifest_roundtrip(tmp_path):
    _write_png(tmp_path / "light.png", (220, 190, 160))
    _write_png(tmp_path / "dark.png", (90, 55, 40))
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,y\nlight.png,0\ndark.png,1\n")
    rows = load_manifest(manifest)
    assert len(rows) == 2
    batch = manifest_to_batch(rows, thumb_size=4)
    assert batch.x.shape == (2, 4 * 4 * 3)
    np.testing.assert_array_equal(batch.y, [0, 1])
    np.testing.assert_array_equal(batch.s, [0, 1])


def test_manifest_missing_file(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,y\nnope.png,0\n")
    with pytest.raises(FileNotFoundError):
        load_manifest(manifest)


def test_manifest_bad_label(tmp_path):
    _write_png(tmp_path / "a.png", (200, 200, 200))
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,y\na.png,3\n")
    with pytest.raises(ValueError):
        load_manifest(manifest)
