import pytest

from proctrack.config import (
    ABLATION_NAMES,
    AblationFlags,
    TrainConfig,
    build_config,
    canonical_ablation,
    load_config,
)
from proctrack.errors import ConfigError


def test_defaults_follow_the_training_recipe() -> None:
    config = TrainConfig()
    assert config.learning_rate == pytest.approx(3e-5)
    assert config.batch_size == 8
    assert config.epochs == 15
    assert config.class_hidden == 1000
    assert config.transition_hidden == 200
    assert config.loss_weights.transition == 1.0
    assert config.ablations.enabled() == []


def test_seven_ablation_flags() -> None:
    assert len(ABLATION_NAMES) == 7
    assert canonical_ablation("no_transition_prediction") == "no_transition_head"
    assert canonical_ablation("no_seq_class") == "no_seq_class"
    with pytest.raises(ConfigError):
        canonical_ablation("no_everything")


def test_yaml_values_are_overridden_by_flags(tmp_path) -> None:
    path = tmp_path / "tiny.yaml"
    path.write_text("encoder: tiny\nseed: 3\nepochs: 2\nablations:\n  no_seq_class: true\n", encoding="utf-8")

    config = load_config(path, {"seed": 7, "epochs": None}, ablate=["no_transition_prediction"])

    assert config.encoder == "tiny"
    assert config.seed == 7
    assert config.epochs == 2
    assert config.ablations == AblationFlags(no_seq_class=True, no_transition_head=True)


def test_unknown_keys_and_bad_values_are_config_errors(tmp_path) -> None:
    with pytest.raises(ConfigError):
        build_config({"learning_rate": 0})
    with pytest.raises(ConfigError):
        build_config({"batch_sizes": 4})
    with pytest.raises(ConfigError):
        build_config({"loss_weights": {"transition": -1}})

    path = tmp_path / "broken.yaml"
    path.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_dataset_and_task_must_agree() -> None:
    with pytest.raises(ConfigError):
        build_config({"dataset": "npn-cooking", "task": "document-level", "sample_size": 10})
    with pytest.raises(ConfigError):
        build_config({"dataset": "npn-cooking", "task": "cooking-location"})
    with pytest.raises(ConfigError):
        build_config({"task": "cooking-location"})

    config = build_config({"dataset": "npn-cooking", "task": "cooking-location", "sample_size": 10})
    assert config.sample_size == 10


def test_with_ablation_leaves_the_base_untouched() -> None:
    base = TrainConfig()
    ablated = base.with_ablation("no_attribute_aware_representation")
    assert ablated.ablations.no_attr_aware_repr
    assert not base.ablations.no_attr_aware_repr


def test_span_only_ablations_are_rejected_for_recipes() -> None:
    recipe = {"dataset": "npn-cooking", "task": "cooking-location", "sample_size": 10}
    with pytest.raises(ConfigError, match="full_context_input"):
        build_config(recipe, ablate=["full_context_input"])

    config = build_config(recipe)
    assert not config.ablation_applies("no_attribute_aware_representation")
    assert config.ablation_applies("no_sequential_class")
    assert TrainConfig().ablation_applies("no_class_prediction")
    with pytest.raises(ConfigError):
        config.with_ablation("cls_instead_of_attr_aware")
    assert config.with_ablation("no_transition_prediction").ablations.no_transition_head
