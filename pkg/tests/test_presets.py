import pytest

from ktnas.dataset import FEATURES
from ktnas.genome import Genome
from ktnas.presets import (
    CONV3_TRIPLET,
    PRESETS,
    VANILLA_TRIPLET,
    preset_names,
    resolve,
)

SEARCHED = Genome(
    tuple(int(i < 3) for i in range(12)),
    tuple(int(i % 2) for i in range(12)),
    ((2, 1, 2), (0, 2, 2), (4, 0, 1), (1, 2, 0)),
)


def names(bits):
    return [f for f, b in zip(FEATURES, bits) if b]


def test_vanilla():
    g, fusion = resolve("vanilla", FEATURES, 2)
    assert names(g.b_en) == ["exer", "sk"]
    assert names(g.b_de) == ["ans", "cont_ela", "cont_lag"]
    assert g.triplets == (VANILLA_TRIPLET,) * 4 and fusion == "hier"


def test_all_concat():
    g, fusion = resolve("A", FEATURES, 2)
    assert sum(g.b_en) == sum(g.b_de) == 12 and fusion == "concat"


@pytest.mark.parametrize("name,fusion", [("B", "concat"), ("C", "hier"), ("H", "hier")])
def test_selection_presets_use_searched_inputs(name, fusion):
    g, f = resolve(name, FEATURES, 2, SEARCHED)
    assert (g.b_en, g.b_de) == (SEARCHED.b_en, SEARCHED.b_de)
    assert g.triplets == (VANILLA_TRIPLET,) * 4 and f == fusion


def test_selection_presets_fall_back_to_vanilla_inputs():
    g, _ = resolve("selected-hier", FEATURES, 1)
    v, _ = resolve("vanilla", FEATURES, 1)
    assert (g.b_en, g.b_de) == (v.b_en, v.b_de)


def test_conv3_fixed():
    g, fusion = resolve("conv3-fixed", FEATURES, 2, SEARCHED)
    assert g.triplets == (CONV3_TRIPLET,) * 4 and g.b_en == SEARCHED.b_en and fusion == "hier"


def test_searched_variants():
    e, fe = resolve("E", FEATURES, 2, SEARCHED)
    assert e == SEARCHED and fe == "concat"
    f, ff = resolve("F", FEATURES, 2, SEARCHED)
    assert sum(f.b_en) == 12 and f.triplets == SEARCHED.triplets and ff == "hier"
    g, fg = resolve("G", FEATURES, 2, SEARCHED)
    assert names(g.b_en) == ["exer", "sk"] and g.triplets == SEARCHED.triplets and fg == "concat"
    assert resolve("searched", FEATURES, 2, SEARCHED) == (SEARCHED, "hier")


def test_errors():
    with pytest.raises(KeyError, match="unknown preset"):
        resolve("Z", FEATURES, 2)
    with pytest.raises(ValueError, match="searched"):
        resolve("E", FEATURES, 2)
    with pytest.raises(ValueError, match="Num"):
        resolve("C", FEATURES, 1, SEARCHED)
    with pytest.raises(ValueError, match="encoder"):
        resolve("vanilla", ("tag", "ans"), 1)


def test_names_cover_all_letters():
    assert set("ABCDEFGH") <= set(preset_names())
    assert len(PRESETS) == 10
