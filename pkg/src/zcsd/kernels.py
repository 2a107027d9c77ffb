"""Precompiled native kernels for the shipped bytecode programs."""

import numpy as np

from .image import build_filter_program, filter_params, decode_image


def filter_kernel(threshold, start_lba, page_count):
    """Host-code twin of ``build_filter_program(threshold, start_lba, page_count)``."""

    def kernel(api):
        page = api.get_lba_size()
        shared, size = api.get_mem_info()
        if size < page:
            return
        buf = shared[:page]
        words = buf[:page - page % 4].view("<u4")
        count = 0
        for lba in range(start_lba, start_lba + page_count):
            api.read(lba, 0, page, buf)
            count += int(np.count_nonzero(words > threshold))
        api.return_data(np.uint64(count).astype("<u8").tobytes())

    return kernel


def register_filter(engine, threshold, start_lba, page_count, **build_kw):
    """Build the filter image, register its native kernel and return the image bytes."""
    image = build_filter_program(threshold, start_lba, page_count, **build_kw)
    engine.register_native_kernel(image.image_digest,
                                  filter_kernel(threshold, start_lba, page_count))
    return image.to_bytes()


def register_known(engine, image_bytes):
    """Register the native kernel matching ``image_bytes`` if it is a shipped program.

    Returns True when a kernel was registered (or already was).
    """
    image = decode_image(image_bytes)
    params = filter_params(image)
    if params is None:
        return False
    if image.image_digest not in engine.native_kernels:
        engine.register_native_kernel(image.image_digest, filter_kernel(*params))
    return True
