import numpy as np
import pytest

from data_sources.fixtures import flat_grid
from geometry.errors import FormatError
from geometry.layout import orthographic
from geometry.measures import vertex_normals, weighted_curvature
from imaging.channels import CHANNELS, ChannelImage, assemble_channels, rasterize
from imaging.mci import (
    HEADER,
    MAGIC,
    decode_mci,
    encode_mci,
    export_channel_pgm,
    export_color_ppm,
    read_mci,
    write_mci,
)


def _image(width=24, height=20):
    mesh = flat_grid(6)
    embedding = orthographic(mesh)
    table = assemble_channels(mesh, embedding, vertex_normals(mesh), weighted_curvature(mesh))
    table["D"] = embedding.uv[:, 0] * 2.0 - embedding.uv[:, 1]
    return rasterize(table, embedding, mesh, width, height)


def test_round_trip_is_bit_exact(tmp_path):
    image = _image()
    again = read_mci(write_mci(image, tmp_path / "img.mci"))
    assert again == image
    assert again.data.tobytes() == image.data.tobytes()


def test_header_fields():
    data = encode_mci(_image(182, 182))
    magic, width, height, channels, flag = HEADER.unpack_from(data)
    assert (magic, width, height, channels, flag) == (MAGIC, 182, 182, 9, 1)


def test_truncated_and_foreign_files():
    data = encode_mci(_image())
    with pytest.raises(FormatError):
        decode_mci(data[:-1])
    with pytest.raises(FormatError):
        decode_mci(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        decode_mci(data[:10])


def test_mask_flag_zero_means_everything_inside():
    w, h = 3, 2
    planes = np.zeros((len(CHANNELS), h, w), dtype="<f4")
    norm = np.zeros((len(CHANNELS), 2), dtype="<f4")
    image = decode_mci(HEADER.pack(MAGIC, w, h, len(CHANNELS), 0) + planes.tobytes() + norm.tobytes())
    assert image.mask.all()
    assert (image.width, image.height) == (3, 2)


def test_zero_channel_pgm_is_black(tmp_path):
    image = _image()
    path = export_channel_pgm(image, "Nx", tmp_path / "nx.pgm")
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    body = path.read_bytes()[len(header):]
    assert path.read_bytes().startswith(header)
    assert body == bytes(image.width * image.height)


def test_silhouette_pgm(tmp_path):
    mask = np.zeros((4, 5), dtype=bool)
    mask[1:3, 1:4] = True
    data = np.zeros((len(CHANNELS), 4, 5), dtype=np.float32)
    data[0][mask] = 255.0
    image = ChannelImage(data, mask, np.zeros((len(CHANNELS), 2)))
    raw = export_channel_pgm(image, 0, tmp_path / "r.pgm").read_bytes()
    pixels = np.frombuffer(raw[-20:], dtype=np.uint8).reshape(4, 5)
    assert np.array_equal(pixels, mask.astype(np.uint8) * 255)


def test_channel_index_out_of_range(tmp_path):
    with pytest.raises(IndexError):
        export_channel_pgm(_image(), 9, tmp_path / "x.pgm")


def test_color_composite(tmp_path):
    image = _image()
    raw = export_color_ppm(image, tmp_path / "rgb.ppm").read_bytes()
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    assert raw.startswith(header)
    assert len(raw) == len(header) + 3 * image.width * image.height


def test_image_rejects_values_outside_the_mask():
    mask = np.zeros((2, 2), dtype=bool)
    data = np.ones((len(CHANNELS), 2, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        ChannelImage(data, mask, np.zeros((len(CHANNELS), 2)))
