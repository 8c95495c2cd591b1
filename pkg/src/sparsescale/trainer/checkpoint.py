"""Flat binary checkpoints for :class:`TinyLM`.

Layout (all integers little-endian)::

    8 bytes   magic b"SPSCKPT1"
    u32 x 4   vocab_size, context, embed_dim, hidden_dim
    u32       vocabulary length in bytes, then that many UTF-8 bytes
    then for each tensor in TENSORS order:
        f64 x size   weights, row-major
    then for each tensor in PRUNABLE order:
        ceil(size / 8) bytes   mask bits from np.packbits (big bit order)

Tensor shapes follow from the four dimensions, so none are stored.
"""

import struct

import numpy as np

from .model import PRUNABLE, TENSORS, TinyLM, TinyLMSpec

MAGIC = b"SPSCKPT1"


def save_checkpoint(model, path, vocab=""):
    s = model.spec
    vocab_bytes = vocab.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", s.vocab_size, s.context, s.embed_dim, s.hidden_dim))
        fh.write(struct.pack("<I", len(vocab_bytes)))
        fh.write(vocab_bytes)
        for name in TENSORS:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
        for name in PRUNABLE:
            fh.write(np.packbits(model.masks[name].ravel()).tobytes())


def load_checkpoint(path):
    """Returns ``(model, vocab)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic bytes)")
    pos = 8
    dims = struct.unpack_from("<4I", blob, pos)
    pos += 16
    (n_vocab,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    vocab = blob[pos:pos + n_vocab].decode("utf-8")
    pos += n_vocab
    spec = TinyLMSpec(*dims)
    shapes = spec.tensor_shapes()
    model = TinyLM.__new__(TinyLM)
    model.spec, model.params, model.masks, model.opt_state = spec, {}, {}, {}
    for name in TENSORS:
        size = int(np.prod(shapes[name]))
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
        model.params[name] = arr.astype(np.float64).reshape(shapes[name])
        pos += 8 * size
    for name in PRUNABLE:
        size = int(np.prod(shapes[name]))
        nbytes = (size + 7) // 8
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=pos))
        model.masks[name] = bits[:size].astype(bool).reshape(shapes[name])
        pos += nbytes
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    return model, vocab
