#!/usr/bin/env python3
"""Regenerates include/i2d/detail/unicode_tables.hpp from Python's unicodedata.

    python3 tools/gen_unicode_table.py > include/i2d/detail/unicode_tables.hpp
"""
import sys
import unicodedata

ranges = []
start = None
for cp in range(0x110000):
    strip = unicodedata.category(chr(cp))[0] in "PS"
    if strip and start is None:
        start = cp
    elif not strip and start is not None:
        ranges.append((start, cp - 1))
        start = None
if start is not None:
    ranges.append((start, 0x10FFFF))

lower = []
for cp in range(0x110000):
    ch = chr(cp)
    lo = ch.lower()
    if len(lo) == 1 and lo != ch:
        lower.append((cp, ord(lo)))

space = [cp for cp in range(0x110000) if chr(cp).isspace()]

out = sys.stdout
out.write("#pragma once\n\n")
out.write(f"// Generated by tools/gen_unicode_table.py (Unicode {unicodedata.unidata_version}). Do not edit.\n\n")
out.write("#include <array>\n#include <utility>\n\nnamespace i2d::detail {\n\n")
out.write("// Closed ranges whose general category is P* or S*.\n")
out.write(f"inline constexpr std::array<std::pair<char32_t, char32_t>, {len(ranges)}> kPunctSymbolRanges{{{{\n")
for lo, hi in ranges:
    out.write(f"    {{0x{lo:05X}, 0x{hi:05X}}},\n")
out.write("}};\n\n")
out.write("// Simple (single code point) lowercase mappings, sorted by source.\n")
out.write(f"inline constexpr std::array<std::pair<char32_t, char32_t>, {len(lower)}> kLowercase{{{{\n")
for i in range(0, len(lower), 4):
    row = ", ".join(f"{{0x{a:05X}, 0x{b:05X}}}" for a, b in lower[i:i + 4])
    out.write(f"    {row},\n")
out.write("}};\n\n")
out.write(f"inline constexpr std::array<char32_t, {len(space)}> kWhitespace{{{{\n")
out.write("    " + ", ".join(f"0x{c:05X}" for c in space) + ",\n")
out.write("}};\n\n}  // namespace i2d::detail\n")
