"""Binary container for named float arrays (checkpoints and dataset files).

Layout: magic ``GEMT``, format version (u32 LE), then one record per
array — path length (u32), UTF-8 path, rank (u32), dims (u32 each),
values as little-endian float32 — until end of file.  Records are
written sorted by path so identical parameter sets produce identical
bytes.
"""

import struct

import numpy as np

MAGIC = b"GEMT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_arrays(path, arrays):
    """Write a {name: ndarray} mapping; values are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_arrays(path):
    """Read a container back into {name: float32 ndarray}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes {blob[:4]!r} in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} in {path}")
    arrays = {}
    offset = 8
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise CheckpointError(f"truncated record header in {path}")
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + name_len + 4 > len(blob):
            raise CheckpointError(f"truncated record header in {path}")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + 4 * rank > len(blob):
            raise CheckpointError(f"truncated shape for {name!r} in {path}")
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointError(f"truncated data for {name!r} in {path}")
        if name in arrays:
            raise CheckpointError(f"duplicate array {name!r} in {path}")
        arrays[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims).copy()
        offset = end
    return arrays


def save_store(path, store, extra=None):
    """Checkpoint a ParameterStore (plus optional extra arrays)."""
    arrays = {p: t.data for p, t in store.items()}
    if extra:
        overlap = set(arrays) & set(extra)
        if overlap:
            raise CheckpointError(f"extra arrays collide with parameters: {sorted(overlap)}")
        arrays.update(extra)
    save_arrays(path, arrays)


def load_into_store(path, store, prefix_filter=None, allow_extra=False):
    """Load a checkpoint into an existing store, validating shapes.

    Arrays not matching ``prefix_filter`` (when given) are returned to the
    caller instead of being treated as unexpected.
    """
    arrays = load_arrays(path)
    leftover = {}
    expected = dict(store.items())
    for name, arr in arrays.items():
        if name in expected:
            t = expected.pop(name)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {t.data.shape}"
                )
            t.data[...] = arr.astype(t.data.dtype)
        elif prefix_filter and name.startswith(prefix_filter):
            leftover[name] = arr
        elif allow_extra:
            leftover[name] = arr
        else:
            raise CheckpointError(f"unexpected array {name!r} in checkpoint")
    if expected:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(expected)[:5]}")
    return leftover
