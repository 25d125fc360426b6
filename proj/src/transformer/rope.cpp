#include "swtt/rope.hpp"

#include <cmath>

#include "swtt/errors.hpp"
#include "swtt/ops.hpp"

namespace swtt {

std::vector<Position2D> normalized_positions(GridSize grid, std::size_t max_size) {
    std::vector<Position2D> out;
    out.reserve(grid.area());
    const double sr = static_cast<double>(max_size) / static_cast<double>(grid.h);
    const double sc = static_cast<double>(max_size) / static_cast<double>(grid.w);
    for (std::size_t r = 0; r < grid.h; ++r)
        for (std::size_t c = 0; c < grid.w; ++c) out.push_back({static_cast<double>(r) * sr, static_cast<double>(c) * sc});
    return out;
}

RopeTables rope2d_tables(std::span<const Position2D> positions, std::size_t head_dim, double theta) {
    if (head_dim == 0 || head_dim % 4 != 0) {
        throw ConfigError("2D RoPE needs a head dimension divisible by 4, got " + std::to_string(head_dim));
    }
    const std::size_t pairs = head_dim / 2, per_axis = head_dim / 4;
    RopeTables t{Tensor({positions.size(), pairs}), Tensor({positions.size(), pairs})};
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t p = 0; p < pairs; ++p) {
            const std::size_t k = p % per_axis;
            const double freq = std::pow(theta, -static_cast<double>(2 * k) / static_cast<double>(head_dim / 2));
            const double pos = p < per_axis ? positions[i].row : positions[i].col;
            t.cos.at(i, p) = std::cos(pos * freq);
            t.sin.at(i, p) = std::sin(pos * freq);
        }
    }
    return t;
}

Var rope2d_apply(const Var& x, std::span<const Position2D> positions, std::size_t heads, double theta) {
    if (heads == 0 || x.value().cols() % heads != 0) throw ConfigError("rope2d_apply: width not divisible by heads");
    const RopeTables t = rope2d_tables(positions, x.value().cols() / heads, theta);
    return ops::rope_rotate(x, t.cos, t.sin, heads);
}

}  // namespace swtt
