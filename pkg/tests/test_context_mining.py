import json
from pathlib import Path

import pytest

from synthcut.context_mining import (
    Caption,
    augment_context,
    default_noun_lexicon,
    extract_context,
    load_noun_lexicon,
    mine_cdi,
)
from synthcut.gateway import GatewayClient, GatewayConfig
from synthcut.protocol import GenerationRequest
from synthcut.util import tokenize

FIXTURES = json.loads((Path(__file__).parent / "data" / "caption_fixtures.json").read_text())


class TestExtractContext:
    def test_worked_example(self):
        phrases = extract_context("A dog lying on grass field", ["dog"])
        assert [p.phrase for p in phrases] == ["grass field"]

    def test_object_only_caption(self):
        assert extract_context("two dogs", ["dog"]) == []

    def test_explicit_lexicon_example(self):
        phrases = extract_context(
            "a man riding a horse on a city street", ["horse", "person"], {"man"}
        )
        assert [p.phrase for p in phrases] == ["city street"]

    @pytest.mark.parametrize("case", FIXTURES["cases"], ids=lambda c: c["caption"][:40])
    def test_fixture_corpus(self, case):
        phrases = extract_context(case["caption"], FIXTURES["interest_classes"])
        assert [p.phrase for p in phrases] == case["expected"]

    def test_no_interest_class_tokens_in_any_output(self):
        classes = set(FIXTURES["interest_classes"])
        for case in FIXTURES["cases"]:
            for phrase in extract_context(case["caption"], classes):
                for tok in tokenize(phrase.phrase):
                    assert tok not in classes
                    assert not (tok.endswith("s") and tok[:-1] in classes)

    def test_deterministic_and_order_stable(self):
        caption = "boats docked at the harbor in the evening"
        a = extract_context(caption, FIXTURES["interest_classes"])
        b = extract_context(caption, FIXTURES["interest_classes"])
        assert [p.phrase for p in a] == [p.phrase for p in b]

    def test_origin_tracked(self):
        caption = Caption(text="a quiet village in the mountains", source_cdi="img1", rank=3)
        phrases = extract_context(caption, ["dog"])
        assert all(p.origin is caption for p in phrases)

    def test_plural_stemming_catches_classes(self):
        assert extract_context("several buses", ["bus"]) == []
        phrases = extract_context("ponies in a paddock", [], {"pony"})
        assert [p.phrase for p in phrases] == ["paddock"]

    def test_caption_validation(self):
        with pytest.raises(ValueError):
            Caption(text="")
        with pytest.raises(ValueError):
            Caption(text="x", rank=-1)


class TestAugmentContext:
    def test_single_variant(self):
        assert augment_context(["grass field"], 1) == ["A real photo of grass field"]

    def test_empty_in_empty_out(self):
        assert augment_context([], 1) == []
        assert augment_context([], 5) == []

    def test_two_variants_in_order(self):
        assert augment_context(["forest"], 2) == [
            "A real photo of forest",
            "A realistic photo of forest",
        ]

    def test_variants_capped_at_available_set(self):
        out = augment_context(["forest"], 10)
        assert out == [
            "A real photo of forest",
            "A realistic photo of forest",
            "A photo of forest, color",
        ]

    def test_per_phrase_validation(self):
        with pytest.raises(ValueError):
            augment_context(["x"], 0)


class TestNounLexicon:
    def test_bundled_lexicon_loads(self):
        lex = default_noun_lexicon()
        assert len(lex) > 800
        assert "dog" in lex and "sofa" in lex
        # scene words must stay out, or contexts would be destroyed
        for word in ("field", "street", "sky", "forest", "kitchen", "grass"):
            assert word not in lex

    def test_custom_lexicon_file(self, tmp_path):
        path = tmp_path / "nouns.txt"
        path.write_text("widget\ngadget\n\n")
        assert load_noun_lexicon(path) == {"widget", "gadget"}


@pytest.fixture(scope="module")
def cdi_png():
    client = GatewayClient(GatewayConfig(backend="mock"))
    req = GenerationRequest(
        prompt="a dog lying on grass field", n=1, seed=11, width=128, height=128
    )
    return client.generate_images(req)[0]


class TestMineCdi:

    def test_golden_prompts(self, cdi_png, mock_client, labels3):
        prompts = mine_cdi(cdi_png, 2, mock_client, labels3)
        # frozen from the mock captioner: both caption variants reduce to
        # the same context, deduplicated preserving first occurrence
        assert prompts == ["A real photo of grass field"]

    def test_golden_prompts_with_variants(self, cdi_png, mock_client, labels3):
        prompts = mine_cdi(cdi_png, 2, mock_client, labels3, per_phrase=2)
        assert prompts == [
            "A real photo of grass field",
            "A realistic photo of grass field",
        ]

    def test_prompt_count_bound(self, cdi_png, mock_client, labels3):
        per_phrase = 2
        prompts = mine_cdi(cdi_png, 2, mock_client, labels3, per_phrase=per_phrase)
        # each caption contributes at most per_phrase prompts per phrase
        assert len(prompts) <= 2 * per_phrase

    def test_object_only_captions_filtered(self, mock_client, labels3):
        client = GatewayClient(GatewayConfig(backend="mock"))
        png = client.generate_images(
            GenerationRequest(prompt="a dog and a cat", n=1, seed=3, width=128, height=128)
        )[0]
        assert mine_cdi(png, 2, mock_client, labels3) == []

    def test_captions_per_cdi_validation(self, cdi_png, mock_client, labels3):
        with pytest.raises(ValueError):
            mine_cdi(cdi_png, 0, mock_client, labels3)
