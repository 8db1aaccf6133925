import pytest

from heatlens.config import ConfigError, dataclass_items, parse_config_text, split_sections
from heatlens.model import ModelConfig


def test_parse_values_and_comments():
    text = "# desk run\nimage_size = 32\nstage_widths = 4, 6, 8, 10  # narrow\ncl = false\nbase_lr = 1e-3\n\nbatch_size=2\n"
    values = parse_config_text(text)
    assert values == {"image_size": (32,), "stage_widths": (4, 6, 8, 10), "cl": False,
                      "base_lr": 1e-3, "batch_size": 2}
    model, schedule, train = split_sections(values)
    assert set(model) == {"image_size", "stage_widths", "cl"}
    assert schedule == {"base_lr": 1e-3} and train == {"batch_size": 2}


@pytest.mark.parametrize("text", ["learning_rate = 1", "just words", "cl = maybe", "patch_size = four"])
def test_errors_name_the_line(text):
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_text(text)


def test_model_config_round_trips_through_text():
    cfg = ModelConfig(image_size=(32, 32), stage_widths=(4, 6, 8, 10), cl=False)
    text = "".join(f"{k} = {v}\n" for k, v in dataclass_items(cfg).items())
    assert ModelConfig(**parse_config_text(text)) == cfg
