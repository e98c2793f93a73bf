import numpy as np
import pytest

from unifiedvl.errors import ContractError, DomainError
from unifiedvl.grammar import BoundingBox, Detection, Polygon
from unifiedvl.rewards import (FilterConfig, RewardConfig, RolloutGroup, aux_rewards, counting_reward,
                               dapo_objective, edit_distance_reward, filter_rollout_groups, kl_metric,
                               language_consistency, levenshtein, parse_count, repetition_reward, task_reward)


def test_grounding_reward():
    gt = BoundingBox(0, 0, 10, 10)
    assert task_reward("grounding", gt, gt) == 1.0
    half = BoundingBox(0, 0, 10, 4)  # IoU 0.4
    assert task_reward("grounding", half, gt) == pytest.approx(0.8)
    assert task_reward("grounding", half, gt, RewardConfig(grounding_raw_iou=True)) == pytest.approx(0.4)
    assert task_reward("grounding", BoundingBox(0, 0, 10, 5), gt) == 1.0


def test_counting():
    assert parse_count("I see 3 cars. The answer is 4") == 4
    assert task_reward("counting", "boxes ... The answer is 7", 7) == 1.0
    assert counting_reward(6, 7) == 0.0
    assert counting_reward(18, 20) == pytest.approx(0.9)
    assert counting_reward(100, 20) == 0.0
    with pytest.raises(ContractError):
        parse_count("seven")


def test_detection_reward_is_map():
    gt = [Detection("cat", (BoundingBox(0, 0, 10, 10),))]
    pred = [Detection("cat", (BoundingBox(0, 0, 6, 10),))]
    assert task_reward("detection", pred, gt) == pytest.approx(0.3)


def test_segmentation_rewards():
    gt = np.array([[0, 1], [1, 1]])
    assert task_reward("seg_semantic", gt, gt) == 1.0
    assert task_reward("seg_referring", gt.astype(bool), gt.astype(bool)) == 1.0
    sq = Polygon(((0, 0), (4, 0), (4, 4), (0, 4)))
    cfg = RewardConfig(raster=(6, 6))
    assert task_reward("seg_referring", sq, sq, cfg) == 1.0
    assert task_reward("seg_instance", [sq], [sq], cfg) == 1.0
    with pytest.raises(ContractError):
        task_reward("seg_instance", [sq], [sq])


def test_text_rewards():
    assert levenshtein("kitten", "sitting") == 3
    assert edit_distance_reward("abc", "abc") == 1.0
    assert task_reward("parsing", "abcd", "abce") == 0.75
    assert task_reward("spotting", "STOP", "STOP") == 1.0
    assert task_reward("spotting", "STOP", "SHOP") == 0.0


def test_contracts():
    with pytest.raises(ContractError):
        task_reward("grounding", "not a box", BoundingBox(0, 0, 1, 1))
    with pytest.raises(ContractError):
        task_reward("vqa", "a", "b")
    assert task_reward("vqa", "a", "a", RewardConfig(judge=lambda p, g: float(p == g))) == 1.0
    with pytest.raises(ContractError):
        task_reward("juggling", 1, 1)


def test_repetition_reward():
    assert repetition_reward("abcdefgh") == 1.0
    assert repetition_reward("ababababab") == 0.0
    assert repetition_reward("the cat sat on the mat today") == 1.0
    assert repetition_reward("go home now go home now go home now") == 0.0
    assert 0.0 < repetition_reward("one two three four one two five six seven") < 1.0


def test_language_consistency():
    assert language_consistency("hello") == 1.0
    assert language_consistency("hi 你好") == 0.5
    assert language_consistency("1234") == 1.0
    assert set(aux_rewards("hi")) == {"repetition_penalty", "language_consistency"}


def test_kl_metric():
    assert kl_metric([np.ones(5)]) == 0.0
    rng = np.random.default_rng(0)
    assert all(kl_metric([rng.lognormal(0, 1, 7)]) >= 0 for _ in range(200))
    assert kl_metric([np.array([2.0])]) == pytest.approx(1 - np.log(2))
    with pytest.raises(DomainError):
        kl_metric([np.array([0.0])])


def _archetypes(tau_v, tau_k):
    """All 8 combinations of (positive max, low drift, high variance)."""
    out = []
    for pos in (True, False):
        for low_k in (True, False):
            for high_var in (True, False):
                base = np.array([0.0, 1.0, 0.0, 1.0]) if high_var else np.full(4, 0.5)
                rewards = base if pos else base - 2.0
                r = np.full(6, 1.0) if low_k else np.full(6, 5.0)
                out.append(((pos, low_k, high_var), RolloutGroup(rewards, [r], [np.ones(6)])))
    return out


def test_filter_truth_table():
    cfg = FilterConfig(tau_v=0.1, tau_k=0.5)
    cases = _archetypes(cfg.tau_v, cfg.tau_k)
    kept = filter_rollout_groups([g for _, g in cases], cfg)
    expected = [g for flags, g in cases if all(flags)]
    assert kept == expected and len(kept) == 1
    assert filter_rollout_groups(kept, cfg) == kept


def test_dapo_clipping():
    g = RolloutGroup([1.0], [np.array([2.0])], [np.array([1.0])])
    assert dapo_objective(g) == pytest.approx(1.24)
    g = RolloutGroup([1.0], [np.array([0.5])], [np.array([-1.0])])
    assert dapo_objective(g) == pytest.approx(-0.8)
    g = RolloutGroup([1.0, 0.0], [np.array([1.1, 0.9]), np.array([1.0])], [np.array([1.0, 2.0]), np.array([3.0])])
    perm = RolloutGroup([1.0, 0.0], [np.array([0.9, 1.1]), np.array([1.0])], [np.array([2.0, 1.0]), np.array([3.0])])
    assert dapo_objective(g) == pytest.approx(dapo_objective(perm))
    assert dapo_objective(g) == pytest.approx((1.1 + 1.8 + 3.0) / 3)
