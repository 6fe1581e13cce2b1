// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gbmbench/png.hpp"

namespace gbmbench {

struct Color {
    uint8_t r = 0, g = 0, b = 0;
};

namespace draw_detail {

using Glyph = std::array<const char*, 7>;

/// 5x7 bitmap font ('#' = on). Covers what the report surfaces print: model
/// names, metric labels, numbers. Unknown characters render as a hollow box.
inline const std::unordered_map<char, Glyph>& font5x7() {
    static const std::unordered_map<char, Glyph> table = {
        {' ', {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
        {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
        {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
        {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
        {'D', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
        {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
        {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
        {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."}},
        {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
        {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
        {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
        {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
        {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
        {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
        {'N', {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"}},
        {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
        {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
        {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
        {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
        {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
        {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
        {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
        {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
        {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"}},
        {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
        {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
        {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
        {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
        {'b', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "####."}},
        {'c', {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."}},
        {'d', {"....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"}},
        {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."}},
        {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
        {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
        {'h', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"}},
        {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
        {'j', {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."}},
        {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
        {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
        {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"}},
        {'n', {".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"}},
        {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
        {'p', {".....", "####.", "#...#", "#...#", "####.", "#....", "#...."}},
        {'q', {".....", ".####", "#...#", "#...#", ".####", "....#", "....#"}},
        {'r', {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."}},
        {'s', {".....", ".....", ".####", "#....", ".###.", "....#", "####."}},
        {'t', {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."}},
        {'u', {".....", ".....", "#...#", "#...#", "#...#", "#...#", ".####"}},
        {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
        {'w', {".....", ".....", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
        {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
        {'y', {".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."}},
        {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
        {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
        {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
        {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
        {'3', {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."}},
        {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
        {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
        {'6', {".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."}},
        {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
        {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
        {'9', {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."}},
        {'.', {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
        {',', {".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."}},
        {':', {".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."}},
        {';', {".....", ".##..", ".##..", ".....", ".##..", "..#..", ".#..."}},
        {'-', {".....", ".....", ".....", ".###.", ".....", ".....", "....."}},
        {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
        {'/', {"....#", "....#", "...#.", "..#..", ".#...", "#....", "#...."}},
        {'(', {"...#.", "..#..", "..#..", "..#..", "..#..", "..#..", "...#."}},
        {')', {".#...", "..#..", "..#..", "..#..", "..#..", "..#..", ".#..."}},
        {'%', {"##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"}},
        {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
        {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
        {'<', {"...#.", "..#..", ".#...", "#....", ".#...", "..#..", "...#."}},
        {'>', {".#...", "..#..", "...#.", "....#", "...#.", "..#..", ".#..."}},
        {'|', {"..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
        {'!', {"..#..", "..#..", "..#..", "..#..", "..#..", ".....", "..#.."}},
        {'?', {".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."}},
        {'*', {".....", ".#.#.", "..#..", "#####", "..#..", ".#.#.", "....."}},
        {'\'', {"..#..", "..#..", ".....", ".....", ".....", ".....", "....."}},
    };
    return table;
}

inline const Glyph& glyph(char c) {
    static const Glyph box = {"#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"};
    const auto& t = font5x7();
    auto it = t.find(c);
    return it == t.end() ? box : it->second;
}

}  // namespace draw_detail

/// Fixed-palette RGB raster with line/rect/text primitives. Everything the
/// report emits is drawn through this, so output is byte-deterministic.
class Canvas {
public:
    Canvas(int64_t width, int64_t height, Color bg = {255, 255, 255})
        : w_(width), h_(height), px_(static_cast<size_t>(width * height * 3)) {
        fill(bg);
    }

    int64_t width() const { return w_; }
    int64_t height() const { return h_; }
    const std::vector<uint8_t>& pixels() const { return px_; }

    void fill(Color c) {
        for (int64_t i = 0; i < w_ * h_; ++i) {
            px_[i * 3] = c.r;
            px_[i * 3 + 1] = c.g;
            px_[i * 3 + 2] = c.b;
        }
    }

    void set(int64_t x, int64_t y, Color c) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        const size_t i = static_cast<size_t>((y * w_ + x) * 3);
        px_[i] = c.r;
        px_[i + 1] = c.g;
        px_[i + 2] = c.b;
    }

    void fill_rect(int64_t x, int64_t y, int64_t rw, int64_t rh, Color c) {
        for (int64_t yy = y; yy < y + rh; ++yy)
            for (int64_t xx = x; xx < x + rw; ++xx) set(xx, yy, c);
    }

    void rect(int64_t x, int64_t y, int64_t rw, int64_t rh, Color c) {
        for (int64_t xx = x; xx < x + rw; ++xx) {
            set(xx, y, c);
            set(xx, y + rh - 1, c);
        }
        for (int64_t yy = y; yy < y + rh; ++yy) {
            set(x, yy, c);
            set(x + rw - 1, yy, c);
        }
    }

    void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, Color c) {
        const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int64_t err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int64_t e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Top-left anchored; advance is 6 columns per character (5 + 1 gap).
    void text(int64_t x, int64_t y, const std::string& s, Color c, int scale = 1) {
        int64_t cx = x;
        for (char ch : s) {
            const auto& g = draw_detail::glyph(ch);
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (g[row][col] == '#')
                        fill_rect(cx + col * scale, y + row * scale, scale, scale, c);
            cx += 6 * scale;
        }
    }

    static int64_t text_width(const std::string& s, int scale = 1) {
        return static_cast<int64_t>(s.size()) * 6 * scale - (s.empty() ? 0 : scale);
    }

    void save(const fs::path& path) const { write_png_rgb(path, w_, h_, px_); }

private:
    int64_t w_, h_;
    std::vector<uint8_t> px_;
};

/// Maps a [lo, hi] scalar to an 8-bit gray value, clamping outside the range.
inline uint8_t gray_of(float v, float lo, float hi) {
    if (hi <= lo) return 128;
    const float t = (v - lo) / (hi - lo);
    const float c = t < 0.0f ? 0.0f : (t > 1.0f ? 1.0f : t);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace gbmbench
