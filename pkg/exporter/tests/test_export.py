import json

import numpy as np
import pytest
from click.testing import CliRunner

from spade_exporter import ExportError, ExportManifest, export_checkpoint, export_task
from spade_exporter.cli import main as cli_main
from spade_exporter.container import CHECKPOINT_MAGIC, read_container
from spade_exporter.export import build_name_map, extract_config, rope_permutation


class TestExportCheckpoint:
    def test_header_lists_all_tensors(self, tiny_llama_dir, tmp_path):
        out = tmp_path / "model.ckpt"
        meta = export_checkpoint(ExportManifest(source=tiny_llama_dir, target=str(out)))
        header, tensors = read_container(out, CHECKPOINT_MAGIC)
        L = meta["config"]["n_layers"]
        assert len(tensors) == 3 + 9 * L
        assert header["content_hash"] == meta["content_hash"]
        assert header["config"]["vocab_size"] == 64

    def test_name_map_covers_canonical_names_once(self):
        m = build_name_map(4)
        canonical = sorted(m.values())
        assert len(canonical) == len(set(canonical)) == 3 + 9 * 4

    def test_rope_permutation_is_bijection(self):
        perm = rope_permutation(64, 4)
        assert sorted(perm.tolist()) == list(range(64))
        # head-local: rows never cross head boundaries
        assert all(p // 16 == i // 16 for i, p in enumerate(perm.tolist()))

    def test_round_trip_is_byte_identical(self, tiny_llama_dir, tmp_path):
        first = tmp_path / "a.ckpt"
        again = tmp_path / "b.ckpt"
        export_checkpoint(ExportManifest(source=tiny_llama_dir, target=str(first)))
        export_checkpoint(ExportManifest(source=str(first), target=str(again)))
        assert first.read_bytes() == again.read_bytes()

    def test_engine_written_file_reserializes_identically(self, tmp_path):
        from spade.model import ModelConfig, random_checkpoint, save_checkpoint
        from spade.tensor import Rng

        src = tmp_path / "engine.ckpt"
        ckpt = random_checkpoint(ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=16), Rng(5))
        save_checkpoint(src, ckpt)
        out = tmp_path / "reser.ckpt"
        export_checkpoint(ExportManifest(source=str(src), target=str(out)))
        assert src.read_bytes() == out.read_bytes()

    def test_content_hash_matches_engine(self, tiny_llama_dir, tmp_path):
        from spade.model import checkpoint_hash, load_checkpoint

        out = tmp_path / "model.ckpt"
        meta = export_checkpoint(ExportManifest(source=tiny_llama_dir, target=str(out)))
        assert checkpoint_hash(load_checkpoint(out)) == meta["content_hash"]

    def test_rejects_grouped_query_attention(self):
        from transformers import LlamaConfig

        cfg = LlamaConfig(vocab_size=64, hidden_size=64, intermediate_size=128,
                          num_hidden_layers=2, num_attention_heads=4, num_key_value_heads=2)
        with pytest.raises(ExportError, match="grouped-query"):
            extract_config(cfg)

    def test_rejects_non_llama(self):
        from transformers import GPT2Config

        with pytest.raises(ExportError, match="unsupported architecture"):
            extract_config(GPT2Config())

    def test_cli_export_ckpt(self, tiny_llama_dir, tmp_path):
        out = tmp_path / "cli.ckpt"
        result = CliRunner().invoke(
            cli_main, ["export-ckpt", "--source", tiny_llama_dir, "--out", str(out)],
            catch_exceptions=False,
        )
        assert result.exit_code == 0 and out.exists()

    def test_tied_embeddings_materialized(self, tmp_path):
        import torch
        from transformers import LlamaConfig, LlamaForCausalLM

        torch.manual_seed(1)
        model = LlamaForCausalLM(LlamaConfig(
            vocab_size=32, hidden_size=32, intermediate_size=64, num_hidden_layers=2,
            num_attention_heads=2, num_key_value_heads=2, tie_word_embeddings=True,
            bos_token_id=1,
        ))
        src = tmp_path / "tied"
        model.save_pretrained(src)
        out = tmp_path / "tied.ckpt"
        export_checkpoint(ExportManifest(source=str(src), target=str(out)))
        _, tensors = read_container(out, CHECKPOINT_MAGIC)
        np.testing.assert_array_equal(tensors["embed"], tensors["unembed"])


class TestExportTask:
    def test_records_and_bos(self, qa_dataset, word_tokenizer_dir, tmp_path):
        path, _ = qa_dataset
        out = tmp_path / "task.jsonl"
        result = export_task(path, word_tokenizer_dir, "qa", out)
        assert (result.written, result.dropped) == (4, 2)
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(recs) == 4
        for rec in recs:
            assert rec["prompt"][0] == 1  # start-of-sequence id
            assert isinstance(rec["gold"], int)

    def test_vocab_size_check(self, qa_dataset, word_tokenizer_dir, tmp_path):
        path, _ = qa_dataset
        with pytest.raises(ExportError, match="vocab"):
            export_task(path, word_tokenizer_dir, "qa", tmp_path / "t.jsonl", expected_vocab=8)

    def test_unknown_template(self, qa_dataset, word_tokenizer_dir, tmp_path):
        path, _ = qa_dataset
        with pytest.raises(ExportError, match="template"):
            export_task(path, word_tokenizer_dir, "nope", tmp_path / "t.jsonl")

    def test_cli_export_task(self, qa_dataset, word_tokenizer_dir, tmp_path):
        path, _ = qa_dataset
        out = tmp_path / "task.jsonl"
        result = CliRunner().invoke(
            cli_main,
            ["export-task", "--dataset", str(path), "--tokenizer", word_tokenizer_dir,
             "--template", "qa", "--out", str(out)],
            catch_exceptions=False,
        )
        assert result.exit_code == 0
        assert "wrote 4 records, dropped 2" in result.output
