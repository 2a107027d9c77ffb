"""Zoned namespace SSD emulation.

Zones are written strictly at their write pointer and only the host can move
the pointer back (``zone_reset``).  A block is readable iff it sits below its
zone's write pointer, so stale bytes left behind by a reset are unreachable.

The backing store is a flat ``uint8`` numpy array, either anonymous memory or
an ``np.memmap`` over a ``ZNSI`` image file::

    offset  size  field
    0       4     magic  b"ZNSI"
    4       2     version (1)
    6       2     reserved (0)
    8       8     block_size
    16      8     zone_size
    24      8     zone_count
    32      9*N   zone table: state u8, write pointer u64 (blocks)
    32+9*N  ...   data area, zone_count * zone_size bytes

All integers are little-endian.
"""

import enum
import os
import struct
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DeviceGeometry",
    "ZoneState",
    "ZoneDescriptor",
    "ZnsDevice",
    "ZnsError",
    "InvalidGeometry",
    "ZoneFull",
    "Overflow",
    "UnalignedLength",
    "BadZoneId",
    "UnwrittenRead",
    "OutOfRange",
    "ImageError",
    "create_device",
    "open_device",
    "zone_report",
    "zone_append",
    "zone_reset",
    "read",
]

IMAGE_MAGIC = b"ZNSI"
IMAGE_VERSION = 1
_HEADER = struct.Struct("<4sHHQQQ")
_ZONE_ENTRY = struct.Struct("<BQ")


class ZnsError(Exception):
    pass


class InvalidGeometry(ZnsError, ValueError):
    pass


class ZoneFull(ZnsError):
    pass


class Overflow(ZnsError):
    """Append larger than the room left in the zone; nothing was written."""


class UnalignedLength(ZnsError, ValueError):
    pass


class BadZoneId(ZnsError, IndexError):
    pass


class UnwrittenRead(ZnsError):
    pass


class OutOfRange(ZnsError, IndexError):
    pass


class ImageError(ZnsError, OSError):
    pass


@dataclass(frozen=True)
class DeviceGeometry:
    block_size: int = 4096
    zone_size: int = 16 * 1024 * 1024
    zone_count: int = 4

    def __post_init__(self):
        bs, zs, zc = self.block_size, self.zone_size, self.zone_count
        if not isinstance(bs, int) or bs <= 0 or bs & (bs - 1):
            raise InvalidGeometry(f"block_size must be a positive power of two, got {bs}")
        if not isinstance(zs, int) or zs <= 0 or zs % bs:
            raise InvalidGeometry(
                f"zone_size must be a positive multiple of block_size, got {zs}")
        if not isinstance(zc, int) or zc < 1:
            raise InvalidGeometry(f"zone_count must be >= 1, got {zc}")

    @property
    def blocks_per_zone(self):
        return self.zone_size // self.block_size

    @property
    def total_blocks(self):
        return self.blocks_per_zone * self.zone_count

    @property
    def capacity(self):
        return self.zone_size * self.zone_count


class ZoneState(enum.IntEnum):
    EMPTY = 0
    OPEN = 1
    FULL = 2


@dataclass(frozen=True)
class ZoneDescriptor:
    zone_id: int
    state: ZoneState
    write_pointer: int
    start_lba: int


class ZnsDevice:
    """An emulated ZNS device.

    Every command takes the device lock, so commands issued from several
    threads are serialized in a single total order.
    """

    def __init__(self, geometry, backing, write_pointers, header=None, path=None):
        self.geometry = geometry
        self._data = backing
        self._wp = list(write_pointers)
        self._header = header
        self.path = path
        self._lock = threading.RLock()

    # -- properties -------------------------------------------------------

    @property
    def block_size(self):
        return self.geometry.block_size

    @property
    def file_backed(self):
        return self._header is not None

    def _state(self, zone_id):
        wp = self._wp[zone_id]
        if wp == 0:
            return ZoneState.EMPTY
        if wp == self.geometry.blocks_per_zone:
            return ZoneState.FULL
        return ZoneState.OPEN

    def _check_zone(self, zone_id):
        if not isinstance(zone_id, (int, np.integer)) or not 0 <= zone_id < self.geometry.zone_count:
            raise BadZoneId(f"zone {zone_id} not in [0, {self.geometry.zone_count})")
        return int(zone_id)

    def _persist_zone(self, zone_id):
        if self._header is None:
            return
        off = _HEADER.size + zone_id * _ZONE_ENTRY.size
        entry = _ZONE_ENTRY.pack(int(self._state(zone_id)), self._wp[zone_id])
        self._header[off:off + _ZONE_ENTRY.size] = np.frombuffer(entry, dtype=np.uint8)

    # -- commands ---------------------------------------------------------

    def zone_report(self):
        bpz = self.geometry.blocks_per_zone
        with self._lock:
            return [ZoneDescriptor(z, self._state(z), self._wp[z], z * bpz)
                    for z in range(self.geometry.zone_count)]

    def zone_append(self, zone_id, data):
        """Append whole blocks at the write pointer and return the first LBA."""
        zone_id = self._check_zone(zone_id)
        buf = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) \
            else data.reshape(-1).view(np.uint8)
        bs = self.geometry.block_size
        bpz = self.geometry.blocks_per_zone
        if len(buf) == 0 or len(buf) % bs:
            raise UnalignedLength(f"append length {len(buf)} is not a positive multiple of {bs}")
        nblocks = len(buf) // bs
        with self._lock:
            wp = self._wp[zone_id]
            if wp == bpz:
                raise ZoneFull(f"zone {zone_id} is full")
            if wp + nblocks > bpz:
                raise Overflow(
                    f"zone {zone_id} has {bpz - wp} free blocks, append needs {nblocks}")
            start = (zone_id * bpz + wp) * bs
            self._data[start:start + len(buf)] = buf
            self._wp[zone_id] = wp + nblocks
            self._persist_zone(zone_id)
            return zone_id * bpz + wp

    def _locate(self, lba, offset, length):
        g = self.geometry
        if not 0 <= lba < g.total_blocks:
            raise OutOfRange(f"lba {lba} outside device of {g.total_blocks} blocks")
        if offset < 0 or length < 0 or offset + length > g.block_size:
            raise OutOfRange(
                f"offset {offset} + length {length} exceeds block size {g.block_size}")
        zone_id, rel = divmod(lba, g.blocks_per_zone)
        if rel >= self._wp[zone_id]:
            raise UnwrittenRead(
                f"lba {lba} is at or beyond zone {zone_id} write pointer {self._wp[zone_id]}")
        return lba * g.block_size + offset

    def read(self, lba, offset=0, length=None):
        """Read ``length`` bytes from one block; multi-block reads are the caller's job."""
        if length is None:
            length = self.geometry.block_size - offset
        lba, offset, length = int(lba), int(offset), int(length)
        with self._lock:
            pos = self._locate(lba, offset, length)
            return self._data[pos:pos + length].tobytes()

    def readinto(self, lba, offset, dest):
        """Like ``read`` but copies into a writable uint8 buffer; returns the byte count."""
        length = len(dest)
        with self._lock:
            pos = self._locate(int(lba), int(offset), length)
            dest[:] = self._data[pos:pos + length]
        return length

    def zone_reset(self, zone_id):
        zone_id = self._check_zone(zone_id)
        with self._lock:
            self._wp[zone_id] = 0
            self._persist_zone(zone_id)

    def format(self):
        """Reset every zone and zero the data area."""
        with self._lock:
            self._data[:] = 0
            for z in range(self.geometry.zone_count):
                self._wp[z] = 0
                self._persist_zone(z)

    def zone_view(self, zone_id):
        """Read-only view of the written part of a zone (no copy)."""
        zone_id = self._check_zone(zone_id)
        zs = self.geometry.zone_size
        with self._lock:
            n = self._wp[zone_id] * self.geometry.block_size
            view = self._data[zone_id * zs:zone_id * zs + n]
        view = view.view()
        view.flags.writeable = False
        return view

    # -- lifecycle --------------------------------------------------------

    def flush(self):
        if isinstance(self._data, np.memmap):
            self._data.flush()
            self._header.flush()

    def close(self):
        with self._lock:
            self.flush()
            self._data = None
            self._header = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._data is not None:
            self.close()

    def __repr__(self):
        g = self.geometry
        where = self.path or "memory"
        return (f"ZnsDevice(block_size={g.block_size}, zone_size={g.zone_size}, "
                f"zone_count={g.zone_count}, backing={where!r})")


def _header_size(zone_count):
    return _HEADER.size + zone_count * _ZONE_ENTRY.size


def create_device(geometry, backing_path=None):
    """Create a device with every zone empty.

    With ``backing_path`` the device lives in a ``ZNSI`` image file, which is
    created or truncated; use ``open_device`` to attach to an existing one.
    """
    if not isinstance(geometry, DeviceGeometry):
        raise InvalidGeometry(f"expected DeviceGeometry, got {type(geometry).__name__}")
    zc = geometry.zone_count
    if backing_path is None:
        return ZnsDevice(geometry, np.zeros(geometry.capacity, dtype=np.uint8), [0] * zc)

    hsize = _header_size(zc)
    try:
        with open(backing_path, "wb") as f:
            f.write(_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, 0, geometry.block_size,
                                 geometry.zone_size, zc))
            f.write(b"".join(_ZONE_ENTRY.pack(0, 0) for _ in range(zc)))
            f.truncate(hsize + geometry.capacity)
    except OSError as e:
        raise ImageError(f"cannot create device image {backing_path}: {e}") from e
    return open_device(backing_path)


def open_device(path):
    """Attach to an existing ``ZNSI`` image file."""
    try:
        with open(path, "rb") as f:
            raw = f.read(_HEADER.size)
            size = os.fstat(f.fileno()).st_size
    except OSError as e:
        raise ImageError(f"cannot open device image {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise ImageError(f"{path}: truncated header")
    magic, version, _, bs, zs, zc = _HEADER.unpack(raw)
    if magic != IMAGE_MAGIC:
        raise ImageError(f"{path}: bad magic {magic!r}")
    if version != IMAGE_VERSION:
        raise ImageError(f"{path}: unsupported version {version}")
    geometry = DeviceGeometry(bs, zs, zc)
    hsize = _header_size(zc)
    if size != hsize + geometry.capacity:
        raise ImageError(f"{path}: size {size} does not match geometry")

    header = np.memmap(path, dtype=np.uint8, mode="r+", offset=0, shape=(hsize,))
    data = np.memmap(path, dtype=np.uint8, mode="r+", offset=hsize, shape=(geometry.capacity,))
    wps = []
    for z in range(zc):
        off = _HEADER.size + z * _ZONE_ENTRY.size
        state, wp = _ZONE_ENTRY.unpack(header[off:off + _ZONE_ENTRY.size].tobytes())
        if wp > geometry.blocks_per_zone:
            raise ImageError(f"{path}: zone {z} write pointer {wp} out of range")
        wps.append(wp)
    dev = ZnsDevice(geometry, data, wps, header=header, path=os.fspath(path))
    for z in range(zc):
        off = _HEADER.size + z * _ZONE_ENTRY.size
        if header[off] != dev._state(z):
            raise ImageError(f"{path}: zone {z} state byte disagrees with write pointer")
    return dev


# Functional spellings of the device commands.

def zone_report(device):
    return device.zone_report()


def zone_append(device, zone_id, data):
    return device.zone_append(zone_id, data)


def read(device, lba, offset, length):
    return device.read(lba, offset, length)


def zone_reset(device, zone_id):
    device.zone_reset(zone_id)
