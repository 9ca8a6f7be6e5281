#pragma once

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace mlfs {

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& m) : std::invalid_argument(m) {}
};

// one elastic operating point: hidden width, heads, ffn width, depth
struct ArchConfig {
    std::size_t d = 0, h = 0, f = 0, L = 0;

    bool operator==(const ArchConfig& o) const { return d == o.d && h == o.h && f == o.f && L == o.L; }
    bool operator!=(const ArchConfig& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream s;
        s << "d" << d << "h" << h << "f" << f << "L" << L;
        return s.str();
    }
};

struct WidthTriple {
    std::size_t d = 0, h = 0, f = 0;
    bool operator==(const WidthTriple& o) const { return d == o.d && h == o.h && f == o.f; }
};

// depth map: retained layer l (1-based, l <= L_c) -> maxnet layer index
inline std::size_t layer_map(std::size_t L_c, std::size_t L_max, std::size_t l) {
    if (L_c == 0 || L_c > L_max)
        throw ConfigError("layer_map: depth " + std::to_string(L_c) + " outside [1, " + std::to_string(L_max) + "]");
    if (l < 1 || l > L_c)
        throw IndexError("layer_map: layer " + std::to_string(l) + " outside [1, " + std::to_string(L_c) + "]");
    return (l * L_max + L_c - 1) / L_c;  // ceil(l * L_max / L_c)
}

inline std::vector<std::size_t> retained_layers(std::size_t L_c, std::size_t L_max) {
    std::vector<std::size_t> out(L_c);
    for (std::size_t l = 1; l <= L_c; ++l) out[l - 1] = layer_map(L_c, L_max, l);
    return out;
}

// the discrete grid of allowed subnet configurations
class ConfigSpace {
public:
    ConfigSpace(std::vector<WidthTriple> widths, std::vector<std::size_t> depths)
        : widths_(std::move(widths)), depths_(std::move(depths)) {
        if (widths_.empty()) throw ConfigError("config space: no width triples");
        if (depths_.empty()) throw ConfigError("config space: no depths");
        std::sort(widths_.begin(), widths_.end(),
                  [](const WidthTriple& a, const WidthTriple& b) { return a.d < b.d; });
        std::sort(depths_.begin(), depths_.end());
        for (std::size_t i = 0; i + 1 < widths_.size(); ++i)
            if (widths_[i].d == widths_[i + 1].d)
                throw ConfigError("config space: duplicate width d=" + std::to_string(widths_[i].d));
        for (std::size_t i = 0; i + 1 < depths_.size(); ++i)
            if (depths_[i] == depths_[i + 1])
                throw ConfigError("config space: duplicate depth " + std::to_string(depths_[i]));
        if (depths_.front() == 0) throw ConfigError("config space: depth must be >= 1");
        const WidthTriple& top = widths_.back();
        if (top.h == 0 || top.d % top.h != 0)
            throw ConfigError("config space: maxnet heads " + std::to_string(top.h) + " must divide d=" +
                              std::to_string(top.d));
        std::size_t dh = top.d / top.h;
        for (const WidthTriple& w : widths_) {
            if (w.d == 0 || w.h == 0 || w.f == 0)
                throw ConfigError("config space: zero extent in width triple d=" + std::to_string(w.d));
            if (w.d > top.d || w.f > top.f || w.h > top.h)
                throw ConfigError("config space: triple d=" + std::to_string(w.d) + " exceeds the largest triple");
            if (w.d % w.h != 0 || w.d / w.h != dh)
                throw ConfigError("config space: triple d=" + std::to_string(w.d) + ":h=" + std::to_string(w.h) +
                                  " breaks the fixed per-head width " + std::to_string(dh) +
                                  " (need d/h = " + std::to_string(dh) + ")");
        }
    }

    const std::vector<WidthTriple>& widths() const { return widths_; }
    const std::vector<std::size_t>& depths() const { return depths_; }

    ArchConfig maxnet() const {
        const WidthTriple& w = widths_.back();
        return {w.d, w.h, w.f, depths_.back()};
    }

    ArchConfig minnet() const {
        const WidthTriple& w = widths_.front();
        return {w.d, w.h, w.f, depths_.front()};
    }

    std::size_t head_dim() const { return widths_.back().d / widths_.back().h; }

    bool contains(const ArchConfig& c) const {
        bool depth_ok = std::find(depths_.begin(), depths_.end(), c.L) != depths_.end();
        if (!depth_ok) return false;
        for (const WidthTriple& w : widths_)
            if (w.d == c.d && w.h == c.h && w.f == c.f) return true;
        return false;
    }

    void require(const ArchConfig& c) const {
        if (!contains(c)) throw ConfigError("config " + c.str() + " is not in the allowed grid");
    }

    // stage 0: maxnet only; stage 1: widths at full depth; stage 2: full grid
    std::vector<ArchConfig> stage_members(int stage) const {
        if (stage < 0 || stage > 2) throw ConfigError("stage " + std::to_string(stage) + " outside [0, 2]");
        std::vector<ArchConfig> out;
        if (stage == 0) {
            out.push_back(maxnet());
            return out;
        }
        if (stage == 1) {
            for (const WidthTriple& w : widths_) out.push_back({w.d, w.h, w.f, depths_.back()});
            return out;
        }
        for (const WidthTriple& w : widths_)
            for (std::size_t L : depths_) out.push_back({w.d, w.h, w.f, L});
        return out;
    }

private:
    std::vector<WidthTriple> widths_;
    std::vector<std::size_t> depths_;
};

}  // namespace mlfs
