"""Build the small TrueType fonts used by the Rust tests and the built-in font.

Written directly against the TrueType table layout with `struct`, so the font
bytes do not depend on the Rust parser they exercise.

    python3 python/make_fonts.py

writes
    crates/core/assets/builtin.ttf
    crates/core/tests/fixtures/square.ttf
and prints the table directory of each file.
"""

import math
import os
import struct

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

ON = 0x01
X_SHORT = 0x02
Y_SHORT = 0x04
REPEAT = 0x08
X_SAME = 0x10
Y_SAME = 0x20

ARG_1_AND_2_ARE_WORDS = 0x0001
ARGS_ARE_XY_VALUES = 0x0002
WE_HAVE_A_SCALE = 0x0008
MORE_COMPONENTS = 0x0020


def simple_glyph(contours):
    """contours: list of lists of (x, y, on_curve)."""
    pts = [p for c in contours for p in c]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    out = struct.pack(">hhhhh", len(contours), min(xs), min(ys), max(xs), max(ys))
    end = -1
    for c in contours:
        end += len(c)
        out += struct.pack(">H", end)
    out += struct.pack(">H", 0)  # no instructions

    flags = []
    xbytes = b""
    ybytes = b""
    px = py = 0
    for x, y, on in pts:
        f = ON if on else 0
        dx, dy = x - px, y - py
        px, py = x, y
        if dx == 0:
            f |= X_SAME
        elif -255 <= dx <= 255:
            f |= X_SHORT
            if dx > 0:
                f |= X_SAME  # positive short
            xbytes += struct.pack(">B", abs(dx))
        else:
            xbytes += struct.pack(">h", dx)
        if dy == 0:
            f |= Y_SAME
        elif -255 <= dy <= 255:
            f |= Y_SHORT
            if dy > 0:
                f |= Y_SAME
            ybytes += struct.pack(">B", abs(dy))
        else:
            ybytes += struct.pack(">h", dy)
        flags.append(f)

    # run-length encode flags with the repeat bit
    fbytes = b""
    i = 0
    while i < len(flags):
        j = i
        while j + 1 < len(flags) and flags[j + 1] == flags[i] and j - i < 254:
            j += 1
        run = j - i
        if run >= 1:
            fbytes += struct.pack(">BB", flags[i] | REPEAT, run)
        else:
            fbytes += struct.pack(">B", flags[i])
        i = j + 1
    return out + fbytes + xbytes + ybytes


def composite_glyph(bbox, components, scale=None):
    """components: list of (glyph_id, dx, dy)."""
    out = struct.pack(">hhhhh", -1, *bbox)
    for k, (gid, dx, dy) in enumerate(components):
        flags = ARG_1_AND_2_ARE_WORDS | ARGS_ARE_XY_VALUES
        if k + 1 < len(components):
            flags |= MORE_COMPONENTS
        if scale is not None:
            flags |= WE_HAVE_A_SCALE
        out += struct.pack(">HHhh", flags, gid, dx, dy)
        if scale is not None:
            out += struct.pack(">h", int(round(scale * 16384)))
    return out


def pad4(b):
    return b + b"\0" * ((4 - len(b) % 4) % 4)


def checksum(b):
    b = pad4(b)
    return sum(struct.unpack(">%dI" % (len(b) // 4), b)) & 0xFFFFFFFF


def cmap_format4(mapping):
    """mapping: dict codepoint -> glyph id, one segment per codepoint."""
    codes = sorted(mapping)
    seg_count = len(codes) + 1
    ends = codes + [0xFFFF]
    starts = codes + [0xFFFF]
    deltas = [(mapping[c] - c) & 0xFFFF for c in codes] + [1]
    search_range = 2 * (2 ** int(math.floor(math.log2(seg_count))))
    entry_selector = int(math.floor(math.log2(seg_count)))
    range_shift = 2 * seg_count - search_range
    length = 16 + 8 * seg_count
    sub = struct.pack(">HHHHHHH", 4, length, 0, 2 * seg_count,
                      search_range, entry_selector, range_shift)
    sub += b"".join(struct.pack(">H", e) for e in ends)
    sub += struct.pack(">H", 0)
    sub += b"".join(struct.pack(">H", s) for s in starts)
    sub += b"".join(struct.pack(">H", d) for d in deltas)
    sub += b"".join(struct.pack(">H", 0) for _ in range(seg_count))
    assert len(sub) == length
    header = struct.pack(">HH", 0, 1) + struct.pack(">HHI", 3, 1, 12)
    return header + sub


def build_font(glyphs, mapping, units_per_em, advances=None):
    glyf = b""
    offsets = [0]
    for g in glyphs:
        glyf += pad4(g)
        offsets.append(len(glyf))
    loca = b"".join(struct.pack(">I", o) for o in offsets)

    head = struct.pack(
        ">IIIIHHQQhhhhHHhhh",
        0x00010000, 0x00010000, 0, 0x5F0F3CF5, 0, units_per_em,
        0, 0, 0, 0, units_per_em, units_per_em, 0, 8, 2, 1, 0,
    )
    assert len(head) == 54
    maxp = struct.pack(">IH", 0x00005000, len(glyphs))

    tables = {
        b"cmap": cmap_format4(mapping),
        b"glyf": glyf,
        b"head": head,
        b"loca": loca,
        b"maxp": maxp,
    }
    if advances is not None:
        hhea = struct.pack(">IhhhHhhhhhhhhhhhH", 0x00010000, units_per_em, 0, 0,
                           max(advances), 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, len(advances))
        assert len(hhea) == 36
        hmtx = b"".join(struct.pack(">Hh", a, 0) for a in advances)
        tables[b"hhea"] = hhea
        tables[b"hmtx"] = hmtx

    tags = sorted(tables)
    num = len(tags)
    es = int(math.floor(math.log2(num)))
    sr = 16 * (2 ** es)
    out = struct.pack(">IHHHH", 0x00010000, num, sr, es, num * 16 - sr)
    offset = 12 + 16 * num
    body = b""
    directory = []
    for tag in tags:
        data = tables[tag]
        out += struct.pack(">4sIII", tag, checksum(data), offset, len(data))
        directory.append((tag.decode(), offset, len(data)))
        body += pad4(data)
        offset += len(pad4(data))
    return out + body, directory


def rect(x0, y0, x1, y1, clockwise=True):
    # TrueType outer contours run clockwise with y up
    pts = [(x0, y0, True), (x0, y1, True), (x1, y1, True), (x1, y0, True)]
    return pts if clockwise else list(reversed(pts))


def square_font():
    glyphs = [b"", simple_glyph([rect(0, 0, 100, 100)]), b""]
    return build_font(glyphs, {ord("A"): 1, ord(" "): 2}, 1000)


def builtin_font():
    r = 300
    c = 350
    k = r / math.cos(math.pi / 8)
    ring = []
    for i in range(8):
        a = -2 * math.pi * i / 8  # clockwise with y up
        ring.append((int(round(c + k * math.cos(a))), int(round(c + k * math.sin(a))), False))
    letter_c = [
        (600, 150, True), (450, 0, False), (300, 0, True), (0, 0, False),
        (0, 350, True), (0, 700, False), (300, 700, True), (450, 700, False),
        (600, 550, True), (500, 550, True), (420, 600, False), (300, 600, True),
        (100, 600, False), (100, 350, True), (100, 100, False), (300, 100, True),
        (420, 100, False), (500, 150, True),
    ]
    letter_l = [(0, 0, True), (0, 700, True), (120, 700, True), (120, 120, True),
                (450, 120, True), (450, 0, True)]
    glyphs = [
        b"",                                                  # 0 .notdef
        b"",                                                  # 1 space
        simple_glyph([rect(0, 0, 100, 100)]),                 # 2 A
        simple_glyph([rect(0, 0, 600, 600),
                      rect(150, 150, 450, 450, clockwise=False)]),  # 3 O
        simple_glyph([ring]),                                 # 4 o
        simple_glyph([letter_c]),                             # 5 C
        simple_glyph([letter_l]),                             # 6 L
        simple_glyph([rect(0, 0, 500, 100)]),                 # 7 bar (unmapped)
        composite_glyph((0, 100, 500, 500), [(7, 0, 100), (7, 0, 400)]),   # 8 =
        composite_glyph((0, 0, 250, 50), [(7, 0, 0)], scale=0.5),          # 9 #
        composite_glyph((0, 100, 500, 500), [(8, 0, 0)]),                   # 10 %
    ]
    mapping = {ord(" "): 1, ord("A"): 2, ord("O"): 3, ord("o"): 4, ord("C"): 5,
               ord("L"): 6, ord("="): 8, ord("#"): 9, ord("%"): 10}
    advances = [500, 250, 200, 700, 700, 700, 550, 600, 600, 300, 600]
    return build_font(glyphs, mapping, 1000, advances)


def main():
    for path, (data, directory) in [
        ("crates/core/tests/fixtures/square.ttf", square_font()),
        ("crates/core/assets/builtin.ttf", builtin_font()),
    ]:
        full = os.path.join(ROOT, path)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        with open(full, "wb") as f:
            f.write(data)
        print(path, len(data), "bytes")
        for tag, off, ln in directory:
            print("  %s offset=%d length=%d" % (tag, off, ln))


if __name__ == "__main__":
    main()
