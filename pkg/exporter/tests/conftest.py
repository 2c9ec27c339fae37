import json

import pytest


@pytest.fixture(scope="session")
def tiny_llama_dir(tmp_path_factory):
    """A small randomly initialized LLaMA-architecture model saved in the
    standard `transformers` layout."""
    import torch
    from transformers import LlamaConfig, LlamaForCausalLM

    torch.manual_seed(0)
    config = LlamaConfig(
        vocab_size=64,
        hidden_size=64,
        intermediate_size=128,
        num_hidden_layers=4,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=128,
        rms_norm_eps=1e-5,
        rope_theta=10000.0,
        bos_token_id=1,
        eos_token_id=2,
        tie_word_embeddings=False,
        attention_bias=False,
        mlp_bias=False,
    )
    model = LlamaForCausalLM(config)
    model.eval()
    path = tmp_path_factory.mktemp("tiny_llama")
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def word_tokenizer_dir(tmp_path_factory):
    """A whitespace word-level tokenizer over a small fixed vocabulary,
    saved in the standard `transformers` layout."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import PreTrainedTokenizerFast

    words = [
        "<unk>", "<s>", "</s>",
        "Question:", "Answer:", "What", "color", "is", "the", "sky", "grass",
        "sun", "snow", "blue", "green", "yellow", "white", "bright", "dark",
        "a", "an", "it", "very",
    ]
    vocab = {w: i for i, w in enumerate(words)}
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, bos_token="<s>", eos_token="</s>", unk_token="<unk>"
    )
    path = tmp_path_factory.mktemp("tokenizer")
    fast.save_pretrained(path)
    return str(path)


@pytest.fixture()
def qa_dataset(tmp_path):
    """Six QA records: four single-word answers, two multi-word answers."""
    records = [
        {"question": "What color is the sky", "answer": "blue"},
        {"question": "What color is the grass", "answer": "green"},
        {"question": "What color is the sun", "answer": "yellow"},
        {"question": "What color is the snow", "answer": "white"},
        {"question": "What is the sky", "answer": "very blue"},
        {"question": "What is the sun", "answer": "bright yellow sun"},
    ]
    path = tmp_path / "dataset.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path, records
