import pytest


def _build_checkpoint(path, hidden_size):
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    config = BertConfig(
        vocab_size=80,
        hidden_size=hidden_size,
        num_hidden_layers=1,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(7)
    model = BertModel(config)
    path.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(path)
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = list("abcdefghijklmnopqrstuvwxyz0123456789")
    vocab = specials + chars + [f"##{c}" for c in chars[: 80 - len(specials) - len(chars)]]
    (path / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    BertTokenizer(str(path / "vocab.txt")).save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """Small random-weight BERT checkpoint on disk (hidden size 32)."""
    return str(_build_checkpoint(tmp_path_factory.mktemp("enc32") / "model", 32))


@pytest.fixture(scope="session")
def encoder_768(tmp_path_factory):
    """Random-weight BERT checkpoint with the production hidden size."""
    return str(_build_checkpoint(tmp_path_factory.mktemp("enc768") / "model", 768))
