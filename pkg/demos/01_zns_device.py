"""
A zoned device in a few lines
=============================

Zones take appends only at their write pointer, and reads only below it.
A reset puts a zone back to EMPTY.
"""

from zcsd import zns

# a small device: 4 zones of 8 blocks, 512-byte blocks
dev = zns.create_device(zns.DeviceGeometry(block_size=512, zone_size=4096, zone_count=4))
for z in dev.zone_report():
    print(z)

# appends return the LBA the device actually used
lba = dev.zone_append(1, b"a" * 512 * 3)
print("first append landed at LBA", lba)
print("second append landed at LBA", dev.zone_append(1, b"b" * 512))
print(dev.zone_report()[1])

# the block at the write pointer has never been written
try:
    dev.read(lba + 4)
except zns.UnwrittenRead as e:
    print("read past write pointer:", e)

# an append that does not fit is rejected whole
try:
    dev.zone_append(1, bytes(512 * 5))
except zns.Overflow as e:
    print("overflow:", e)
print("write pointer still", dev.zone_report()[1].write_pointer)

dev.zone_reset(1)
print("after reset:", dev.zone_report()[1])
