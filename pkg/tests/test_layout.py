import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vivid.layout import (
    COMPONENT_POINTS,
    COMPONENTS,
    MIRROR_PERM,
    MIRRORED_COMPONENT,
    check_landmarks,
    component_centroid,
    component_window,
    mirror_landmarks,
    scale_landmarks,
)

landmark_arrays = arrays(np.float64, (68, 2), elements=st.floats(10, 117, allow_nan=False))


def test_component_point_sets_follow_68_point_convention():
    # 1-indexed 37-42, 43-48, 28-36, 49-68
    assert COMPONENT_POINTS["left_eye"] == tuple(range(36, 42))
    assert COMPONENT_POINTS["right_eye"] == tuple(range(42, 48))
    assert COMPONENT_POINTS["nose"] == tuple(range(27, 36))
    assert COMPONENT_POINTS["mouth"] == tuple(range(48, 68))
    assert set(COMPONENTS) == {"left_eye", "right_eye", "nose", "mouth"}


def test_mouth_centroid_is_mean_of_points_49_to_68():
    rng = np.random.default_rng(3)
    lm = rng.uniform(0, 127, size=(68, 2))
    xs = [lm[k - 1, 0] for k in range(49, 69)]
    ys = [lm[k - 1, 1] for k in range(49, 69)]
    np.testing.assert_allclose(component_centroid(lm, "mouth"), [sum(xs) / 20, sum(ys) / 20], atol=1e-12)


def test_window_is_centred_on_centroid():
    lm = np.full((68, 2), 60.0)
    lm[48:68] = [70.0, 90.0]  # mouth centroid x=70, y=90
    top, left = component_window(lm, "mouth", (32, 48))
    assert top + (32 - 1) / 2 == pytest.approx(90, abs=0.5)
    assert left + (48 - 1) / 2 == pytest.approx(70, abs=0.5)


def test_mirror_permutation_is_an_involution():
    assert np.array_equal(MIRROR_PERM[MIRROR_PERM], np.arange(68))


@given(landmark_arrays)
@settings(max_examples=50, deadline=None)
def test_mirror_landmarks_twice_is_identity(lm):
    np.testing.assert_allclose(mirror_landmarks(mirror_landmarks(lm, 128), 128), lm, atol=1e-12)


@given(landmark_arrays, st.sampled_from(COMPONENTS))
@settings(max_examples=50, deadline=None)
def test_mirrored_window_is_reflection_of_window(lm, comp):
    size = (32, 40) if "eye" in comp else (32, 48)
    top, left = component_window(lm, comp, size)
    mtop, mleft = component_window(mirror_landmarks(lm, 128), MIRRORED_COMPONENT[comp], size)
    assert mtop == top
    assert mleft == 128 - left - size[1]


def test_check_landmarks_rejects_bad_input():
    with pytest.raises(ValueError, match="68"):
        check_landmarks(np.zeros((67, 2)))
    lm = np.full((68, 2), 10.0)
    lm[5] = [130.0, 3.0]
    with pytest.raises(ValueError, match="landmark 5"):
        check_landmarks(lm, 128, 128)
    lm[5] = [np.nan, 3.0]
    with pytest.raises(ValueError, match="non-finite"):
        check_landmarks(lm)


def test_scale_landmarks_maps_pixel_centres_through_area_resize():
    lm = np.array([[0.0, 0.0], [127.0, 127.0]] + [[64.0, 64.0]] * 66)
    small = scale_landmarks(lm, 32 / 128)
    # HR pixel 0 lies 1.5 HR px (3/8 LR px) before the centre of the LR pixel covering it
    np.testing.assert_allclose(small[0], [-0.375, -0.375])
    np.testing.assert_allclose(small[1], [31.375, 31.375])
    np.testing.assert_allclose(scale_landmarks(small, 4.0), lm, atol=1e-12)
