import numpy as np
import pytest

from mlk import container, fdata
from mlk.errors import FormatError


def header_fields(**over):
    base = dict(scheme=container.SCHEME_FULL, lambda_precision=4,
                n_images=10, img_rows=33, img_cols=37, latent_dim=4,
                pq_bits=4)
    base.update(over)
    return base


def test_header_is_exactly_44_bytes():
    assert container.HEADER_SIZE == 44
    blob = container.write_shard(header_fields(), {})
    assert len(blob) == 44


def test_empty_sections_roundtrip():
    blob = container.write_shard(header_fields(), {})
    parsed = container.read_shard(blob)
    assert parsed.header.section_lengths == (0,) * 6
    assert all(v == b"" for v in parsed.sections.values())


def test_shard_roundtrip_random_payloads():
    rng = np.random.default_rng(0)
    sections = {name: rng.bytes(int(rng.integers(0, 500)))
                for name in ("weights", "codes", "pq_table", "residuals",
                             "lambdas", "exceptions")}
    blob = container.write_shard(header_fields(), sections)
    parsed = container.read_shard(blob)
    assert parsed.sections == sections
    again = container.write_shard(header_fields(), parsed.sections)
    assert again == blob


def test_paper_section_sizes():
    # 4x1221 float32 weights + 16-byte normalizer; 16k-byte PQ table at
    # k=16; 2 bytes of codes per image at 4x4 bits
    sections = {
        "weights": bytes(19536 + 16),
        "codes": bytes(2 * 1000),
        "pq_table": bytes(4 * 16 * 4),
    }
    blob = container.write_shard(header_fields(n_images=1000), sections)
    h = container.ShardHeader.unpack(blob)
    assert h.section_lengths[0] == 19552
    assert h.section_lengths[1] == 2000
    assert h.section_lengths[2] == 256
    assert len(blob) == 44 + 19552 + 2000 + 256


def test_shard_header_validation():
    blob = bytearray(container.write_shard(header_fields(), {}))
    blob[0:4] = b"XXXX"
    with pytest.raises(FormatError):
        container.read_shard(bytes(blob))
    blob = bytearray(container.write_shard(header_fields(), {}))
    blob[4] = 99  # version
    with pytest.raises(FormatError):
        container.read_shard(bytes(blob))
    good = container.write_shard(header_fields(), {"codes": b"abc"})
    with pytest.raises(FormatError):
        container.read_shard(good + b"junk")
    with pytest.raises(FormatError):
        container.ShardHeader(**header_fields(lambda_precision=2),
                              section_lengths=(0,) * 6)
    with pytest.raises(FormatError):
        container.ShardHeader(**header_fields(scheme=7),
                              section_lengths=(0,) * 6)


def test_scheme_byte_both_values_roundtrip():
    for scheme in (container.SCHEME_FULL, container.SCHEME_RESIDUAL_ONLY):
        blob = container.write_shard(header_fields(scheme=scheme), {})
        assert container.ShardHeader.unpack(blob).scheme == scheme


def preamble(n_shards=1):
    grid = fdata.make_grid(5, 7, 2.0, 2.0, 1.0)
    return container.ArchivePreamble(
        n_shards=n_shards, decomp_mode="col", n_planes=2, n_nodes=8,
        grid=grid, timestep=3, tau=1e-3, seed=42, config_digest=bytes(32))


def test_archive_roundtrip_single_shard():
    blob = container.write_shard(header_fields(), {"codes": b"\x01\x02"})
    raw = container.write_archive(preamble(), [blob])
    pre, blobs = container.read_archive(raw)
    assert blobs == [blob]
    assert pre.n_planes == 2 and pre.n_nodes == 8
    assert pre.tau == 1e-3 and pre.seed == 42
    assert pre.decomp_mode == "col"
    assert np.array_equal(pre.grid.vol, fdata.make_grid(5, 7, 2, 2, 1).vol)


def test_archive_preserves_shard_order():
    blobs = [container.write_shard(header_fields(), {"codes": bytes([i] * 3)})
             for i in range(4)]
    raw = container.write_archive(preamble(4), blobs)
    _, back = container.read_archive(raw)
    assert back == blobs


def test_archive_corrupt_offset():
    blob = container.write_shard(header_fields(), {})
    raw = bytearray(container.write_archive(preamble(), [blob]))
    pre_size = preamble().size()
    raw[pre_size:pre_size + 8] = (10 ** 6).to_bytes(8, "little")
    with pytest.raises(FormatError):
        container.read_archive(bytes(raw))


def test_archive_bad_magic():
    raw = bytearray(container.write_archive(
        preamble(), [container.write_shard(header_fields(), {})]))
    raw[:4] = b"NOPE"
    with pytest.raises(FormatError):
        container.read_archive(bytes(raw))


def test_archive_needs_a_shard():
    with pytest.raises(FormatError):
        container.write_archive(preamble(0), [])


def test_archive_accounting_identity():
    blobs = [container.write_shard(header_fields(),
                                   {"codes": bytes(i * 7)})
             for i in range(1, 4)]
    pre = preamble(3)
    raw = container.write_archive(pre, blobs)
    assert len(raw) == pre.size() + 8 * 3 + sum(len(b) for b in blobs)
    for b in blobs:
        h = container.ShardHeader.unpack(b)
        assert len(b) == 44 + sum(h.section_lengths)
