import torch

from conftest import COOKING_FIXTURES, PROPARA_FIXTURES, cooking_config, tiny_config
from proctrack.constants import StepTag
from proctrack.data import load_npn_cooking, load_propara
from proctrack.model import ProcessTracker, head_config


def test_one_instance_per_entity_with_one_context_per_step(tmp_path) -> None:
    docs = load_propara(PROPARA_FIXTURES, "train")
    model = ProcessTracker.build(tiny_config(tmp_path), docs)

    instances = model.instances(docs)

    assert len(instances) == sum(len(doc.entities) for doc in docs)
    for instance in instances:
        assert instance.num_steps == instance.doc.num_steps
        assert [ctx.step for ctx in instance.contexts] == list(range(1, instance.num_steps + 1))


def test_forward_covers_every_context(tmp_path) -> None:
    docs = load_propara(PROPARA_FIXTURES, "train")
    model = ProcessTracker.build(tiny_config(tmp_path), docs)
    batch = model.collate(model.instances(docs[:2]))

    output = model(batch)

    steps = sum(batch.lengths)
    assert batch.input_ids.shape[0] == steps
    assert output.transition_logits.shape == (steps, 4)
    assert output.start_logits[StepTag.CURR].shape == batch.input_ids.shape
    assert torch.isfinite(output.class_logits[StepTag.PREV]).all()


def test_ablation_flags_rewire_the_heads(tmp_path) -> None:
    config = tiny_config(tmp_path)

    assert head_config(config, 16).transition_input == "attribute"
    assert head_config(config.with_ablation("no_attribute_aware_representation"), 16).transition_input == "entity"
    assert head_config(config.with_ablation("cls_instead_of_attr_aware"), 16).transition_input == "cls"
    assert not head_config(config.with_ablation("no_class_prediction"), 16).class_prediction
    assert not head_config(config.with_ablation("no_sequential_class"), 16).seq_class
    assert not head_config(config.with_ablation("no_transition_prediction"), 16).transition_head


def test_cooking_model_uses_a_categorical_head(tmp_path) -> None:
    recipes = load_npn_cooking(COOKING_FIXTURES, "train", sample_size=10)
    config = cooking_config(tmp_path)

    heads = head_config(config, 16)
    assert (heads.num_classes, heads.span_heads, heads.transition_input) == (243, False, "cls")

    model = ProcessTracker.build(config, recipes)
    output = model(model.collate(model.instances(recipes[:1])))
    assert output.class_logits[StepTag.CURR].shape[-1] == 243
    assert output.start_logits == {}
