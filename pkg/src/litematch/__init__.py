"""Cross-modality keypoint matching with learned pyramid-transformer descriptors."""

import ctypes
import os
import sys

__version__ = "0.1.0"


def _tune_allocator() -> None:
    # Training frees hundreds of MB of activation buffers per step; by
    # default glibc hands each one back to the kernel (mmap/munmap plus a
    # page-fault storm on reuse). Keep large blocks on the heap instead.
    if sys.platform != "linux" or os.environ.get("LITEMATCH_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()
