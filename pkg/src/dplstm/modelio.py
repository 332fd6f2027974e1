"""Binary model files.

Layout (all text is UTF-8, lines end in ``\\n``)::

    DPLSTM01
    key=value            header lines: arch, embed_dim, hidden, actions, activation,
    ...                  dropout_eh, dropout_ho, peephole, slot_order, vocab_sha256,
    block.<name>=RxC     and one shape line per parameter block, in payload order
    <blank line>
    words <n>            followed by n lines, one vocabulary entry each
    pos <n>              likewise
    labels <n>           likewise
    <payload>            every block as little-endian float64, row-major, in the
                         order of the block.* lines: E_word, E_pos, E_label, then
                         the classifier weights in declaration order
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .features import SLOT_ORDER_VERSION
from .models import EmbeddingTables, FeedforwardParams, LSTMParams, ParserModel
from .treebank import Vocabulary

MAGIC = b"DPLSTM01"


class ModelFormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file so no partial file is left."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_to_bytes(model: ParserModel) -> bytes:
    blocks = model.blocks()
    header = {
        "arch": model.arch,
        "embed_dim": model.embed_dim,
        "hidden": model.hidden,
        "actions": model.n_actions,
        "activation": model.params.activation if isinstance(model.params, FeedforwardParams) else "none",
        "dropout_eh": repr(float(model.dropout_eh)),
        "dropout_ho": repr(float(model.dropout_ho)),
        "peephole": model.params.peephole if isinstance(model.params, LSTMParams) else "none",
        "slot_order": SLOT_ORDER_VERSION,
        "vocab_sha256": model.vocab.digest(),
    }
    out = io.BytesIO()
    out.write(MAGIC + b"\n")
    lines = [f"{k}={v}" for k, v in header.items()]
    lines += [f"block.{name}={'x'.join(map(str, b.shape))}" for name, b in blocks.items()]
    lines.append("")
    vocab = model.vocab
    for section, entries in (("words", vocab.words[3:]), ("pos", vocab.pos[3:]),
                             ("labels", vocab.labels[1:])):
        lines.append(f"{section} {len(entries)}")
        lines.extend(entries)
    out.write(("\n".join(lines) + "\n").encode("utf-8"))
    for b in blocks.values():
        out.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return out.getvalue()


def model_from_bytes(data: bytes) -> ParserModel:
    buf = io.BytesIO(data)

    def line() -> str:
        raw = buf.readline()
        if not raw.endswith(b"\n"):
            raise ModelFormatError("truncated model file")
        return raw[:-1].decode("utf-8")

    if buf.readline() != MAGIC + b"\n":
        raise ModelFormatError("not a DPLSTM01 model file")
    header: dict[str, str] = {}
    shapes: dict[str, tuple[int, ...]] = {}
    while (text := line()) != "":
        key, _, value = text.partition("=")
        if key.startswith("block."):
            shapes[key[6:]] = tuple(int(s) for s in value.split("x"))
        else:
            header[key] = value
    if int(header.get("slot_order", -1)) != SLOT_ORDER_VERSION:
        raise ModelFormatError(f"unsupported feature slot order {header.get('slot_order')}")
    tables = []
    for section in ("words", "pos", "labels"):
        name, _, count = line().partition(" ")
        if name != section:
            raise ModelFormatError(f"expected {section} section, found {name!r}")
        tables.append([line() for _ in range(int(count))])
    vocab = Vocabulary(*tables)
    if vocab.digest() != header["vocab_sha256"]:
        raise ModelFormatError("vocabulary does not match its recorded hash")
    arrays = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise ModelFormatError(f"truncated parameter block {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if buf.read():
        raise ModelFormatError("trailing bytes after parameter payload")
    emb = EmbeddingTables(arrays.pop("E_word"), arrays.pop("E_pos"), arrays.pop("E_label"))
    arch = header["arch"]
    if arch == "lstm":
        params = LSTMParams(**arrays)
    else:
        params = FeedforwardParams(**arrays, activation=header["activation"])
    return ParserModel(arch, vocab, emb, params, float(header["dropout_eh"]),
                       float(header["dropout_ho"]))


def save_model(model: ParserModel, path) -> None:
    atomic_write(path, model_to_bytes(model))


def load_model(path) -> ParserModel:
    return model_from_bytes(Path(path).read_bytes())
