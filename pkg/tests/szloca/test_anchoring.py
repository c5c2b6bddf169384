"""
Tests for anchor selection
"""

import pytest

from szloca.anchoring import (
    AnchorConfig,
    AnchorStrategy,
    BBox,
    Detection2D,
    SkeletonLayout,
    select_anchor,
)
from szloca.errors import ConfigError

LAYOUT = SkeletonLayout()


def _ankles(conf=0.9, left=(100, 500), right=(120, 500)):
    return {
        "left_ankle": (left[0], left[1], conf),
        "right_ankle": (right[0], right[1], conf),
    }


@pytest.mark.unit
class TestSelectAnchor:
    """Strategy evaluation and fallback"""

    def test_feet_mean_of_ankles(self):
        """Feet anchor is the mean of both ankles"""
        result = select_anchor(Detection2D(keypoints=_ankles()), LAYOUT, AnchorConfig(strategy="feet"))
        assert result.pixel == (110, 500)
        assert result.strategy_used is AnchorStrategy.FEET
        assert not result.needs_torso_correction

    def test_feet_single_ankle_suffices(self):
        det = Detection2D(keypoints={"right_ankle": (130, 480, 0.7)})
        assert select_anchor(det, LAYOUT, AnchorConfig()).pixel == (130, 480)

    def test_low_confidence_falls_back_to_bbox(self):
        """Zero-confidence ankles walk the chain to the bbox bottom-center"""
        det = Detection2D(keypoints=_ankles(conf=0.0), bbox=(90, 200, 40, 310))
        result = select_anchor(det, LAYOUT, AnchorConfig(strategy="feet"))
        assert result.pixel == (110, 510)
        assert result.strategy_used is AnchorStrategy.BBOX

    def test_torso_mean_of_hips(self):
        det = Detection2D(keypoints={"left_hip": (108, 300, 0.8), "right_hip": (112, 304, 0.8)})
        result = select_anchor(det, LAYOUT, AnchorConfig(strategy="torso"))
        assert result.pixel == (110, 302)
        assert result.needs_torso_correction

    def test_head_uses_nose(self):
        det = Detection2D(keypoints={"nose": (50, 60, 0.95), **_ankles()})
        result = select_anchor(det, LAYOUT, AnchorConfig(strategy="head"))
        assert result.pixel == (50, 60)
        assert result.strategy_used is AnchorStrategy.HEAD

    def test_stance_picks_lowest_ankle(self):
        """Stance uses the ankle lowest on screen, the planted foot"""
        det = Detection2D(keypoints=_ankles(left=(100, 480), right=(120, 505)))
        result = select_anchor(det, LAYOUT, AnchorConfig(strategy="stance"))
        assert result.pixel == (120, 505)

    def test_stance_level_ankles_average(self):
        det = Detection2D(keypoints=_ankles())
        assert select_anchor(det, LAYOUT, AnchorConfig(strategy="stance")).pixel == (110, 500)

    def test_threshold_is_inclusive(self):
        """A joint at exactly min_joint_confidence is usable"""
        det = Detection2D(keypoints=_ankles(conf=0.3))
        assert select_anchor(det, LAYOUT, AnchorConfig(min_joint_confidence=0.3)).strategy_used is AnchorStrategy.FEET

    def test_exhausted_chain_returns_none(self):
        det = Detection2D(keypoints={"left_wrist": (1, 2, 1.0)})
        assert select_anchor(det, LAYOUT, AnchorConfig()) is None

    def test_empty_detection_returns_none(self):
        det = Detection2D()
        assert det.is_empty
        assert select_anchor(det, LAYOUT, AnchorConfig()) is None

    def test_custom_chain_order(self):
        """The configured chain order is respected after the requested strategy"""
        det = Detection2D(keypoints={"nose": (5, 5, 1.0), "left_hip": (7, 9, 1.0)})
        cfg = AnchorConfig(strategy="feet", fallback_chain=("head", "torso"))
        assert select_anchor(det, LAYOUT, cfg).strategy_used is AnchorStrategy.HEAD

    def test_custom_layout_roles(self):
        """Roles may point at other joints of the layout"""
        layout = SkeletonLayout(joint_names=("top", "base"), head=("top",), feet=("base",), torso=("base",))
        det = Detection2D(keypoints={"base": (3, 4, 1.0)})
        assert select_anchor(det, layout, AnchorConfig()).pixel == (3, 4)


@pytest.mark.unit
class TestTypes:
    """Value checks on the input types"""

    def test_bbox_bottom_center(self):
        assert BBox(90, 200, 40, 310).bottom_center == (110, 510)

    @pytest.mark.parametrize("bbox", [(0, 0, 0, 10), (0, 0, 10, -1)])
    def test_bbox_needs_positive_size(self, bbox):
        with pytest.raises(ValueError):
            Detection2D(bbox=bbox)

    def test_confidence_range_checked(self):
        with pytest.raises(ValueError):
            Detection2D(keypoints={"nose": (0, 0, 1.5)})

    def test_layout_rejects_unknown_role_joint(self):
        with pytest.raises(ConfigError):
            SkeletonLayout(head=("forehead",))

    def test_layout_rejects_duplicates(self):
        with pytest.raises(ConfigError):
            SkeletonLayout(joint_names=("a", "a"), head=("a",), feet=("a",), torso=("a",))

    def test_config_rejects_unknown_strategy(self):
        with pytest.raises(ConfigError):
            AnchorConfig(strategy="elbows")

    def test_config_rejects_duplicate_chain(self):
        with pytest.raises(ConfigError):
            AnchorConfig(fallback_chain=("bbox", "bbox"))

    def test_search_order_skips_requested(self):
        cfg = AnchorConfig(strategy="bbox")
        assert cfg.search_order == [AnchorStrategy.BBOX, AnchorStrategy.FEET, AnchorStrategy.TORSO, AnchorStrategy.HEAD]
